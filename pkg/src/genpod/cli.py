"""Operations and test-harness command line.

Exit codes: 0 ok, 1 usage error, 2 authentication failure, 3 permission
denied, 4 upstream/service failure (including port bind errors).
"""

from __future__ import annotations

import argparse
import os
import signal
import sys
import threading
from pathlib import Path
from typing import Optional

import httpx

from . import fixture, stack
from .identity import UpstreamError
from .podclient import PodClient, PodError, PodUnreachable
from .rdf import Graph, Iri, TurtleSyntaxError, parse_turtle, serialize_turtle
from .wac import (
    ACL_AGENT,
    ACL_PREFIXES,
    AccessMode,
    AccessRule,
    AuthenticatedAgent,
    Default,
    ExactAgent,
    PublicAgent,
    acl_doc_for,
    authorization_triples,
    parent_container,
    parse_acl,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_AUTH = 2
EXIT_PERMISSION = 3
EXIT_UPSTREAM = 4

ENV_URLS = {
    "idp": "GENPOD_IDP_URL",
    "pod": "GENPOD_POD_URL",
    "retrieval": "GENPOD_RETRIEVAL_URL",
    "gateway": "GENPOD_GATEWAY_URL",
    "chat": "GENPOD_CHAT_URL",
}


class CliError(Exception):
    def __init__(self, exit_code: int, message: str):
        super().__init__(message)
        self.exit_code = exit_code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def default_url(component: str, override: Optional[str] = None) -> str:
    if override:
        return override.rstrip("/")
    env = os.environ.get(ENV_URLS[component])
    if env:
        return env.rstrip("/")
    return f"http://127.0.0.1:{stack.DEFAULT_PORTS[component]}"


def build_parser() -> _Parser:
    parser = _Parser(prog="genpod", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run one component or the whole stack")
    serve.add_argument("component", nargs="?", default="all", choices=("all",) + stack.COMPONENTS)
    serve.add_argument("--data-dir", default="./genpod-data")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, help="port for a single component")
    for component in stack.COMPONENTS:
        serve.add_argument(f"--{component}-port", type=int, default=stack.DEFAULT_PORTS[component])
        serve.add_argument(f"--{component}-url", help=f"external URL of an already-running {component}")
    serve.add_argument("--gateway-config", help="gateway config file (JSON: allow_list, external)")
    serve.add_argument("--gateway-log", help="request log path for the gateway")
    serve.add_argument("--pod-origin-override", help="rebase user pod discovery onto this origin")

    seed = sub.add_parser("seed", help="materialize a scenario fixture")
    seed.add_argument("scenario", nargs="?", default="alice-bob", choices=["alice-bob"])
    for component in ("idp", "pod", "retrieval", "gateway"):
        seed.add_argument(f"--{component}-url")

    grant = sub.add_parser("acl-grant", help="append an authorization to a resource's ACL")
    grant.add_argument("--resource", required=True)
    agent = grant.add_mutually_exclusive_group(required=True)
    agent.add_argument("--agent", help="WebID of the agent to grant")
    agent.add_argument("--public", action="store_true")
    agent.add_argument("--authenticated", action="store_true")
    grant.add_argument("--modes", required=True, help="comma list of Read,Write,Append,Control")
    grant.add_argument("--user", required=True, help="acting user (must hold Control)")
    grant.add_argument("--password", required=True)
    grant.add_argument("--idp-url")

    trust = sub.add_parser("trust", help="manage an owner's retrieval trust list")
    trust.add_argument("action", choices=["add", "remove", "list"])
    trust.add_argument("webid", nargs="?")
    trust.add_argument("--owner", required=True)
    trust.add_argument("--password", required=True)
    trust.add_argument("--idp-url")

    ask = sub.add_parser("ask", help="run one scripted exchange through the chat service")
    ask.add_argument("--user", required=True)
    ask.add_argument("--password", required=True)
    ask.add_argument("--query", required=True)
    ask.add_argument("--model", default="demo-rag")
    ask.add_argument("--source", help="document container to retrieve from")
    ask.add_argument("--use-rag", action="store_true")
    ask.add_argument("--retrieval-model", default="bm25")
    ask.add_argument("--chat-url")
    ask.add_argument("--thread", help="existing thread id to continue")

    return parser


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------


def cmd_serve(args) -> int:
    ports = {c: getattr(args, f"{c}_port") for c in stack.COMPONENTS}
    if args.component != "all" and args.port:
        ports[args.component] = args.port
    overrides = {
        c: getattr(args, f"{c}_url")
        for c in stack.COMPONENTS
        if getattr(args, f"{c}_url", None)
    }
    if args.component != "all":
        for component, env in ENV_URLS.items():
            if component not in overrides and os.environ.get(env) and component != args.component:
                overrides[component] = os.environ[env]
    settings = stack.StackSettings(
        data_dir=Path(args.data_dir),
        host=args.host,
        ports=ports,
        admin_secret=os.environ.get("GENPOD_ADMIN_SECRET"),
        svc_username=os.environ.get("GENPOD_SVC_USERNAME", "retrieval-svc"),
        svc_password=os.environ.get("GENPOD_SVC_PASSWORD", "retrieval-svc-pass"),
        gateway_config_file=Path(args.gateway_config) if args.gateway_config else None,
        gateway_log=Path(args.gateway_log) if args.gateway_log else None,
        pod_origin_override=args.pod_origin_override,
        url_overrides=overrides,
    )
    components = stack.COMPONENTS if args.component == "all" else (args.component,)
    try:
        handles = stack.start_stack(settings, components)
    except stack.BindError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    for handle in handles:
        print(f"serving {handle.component} at {handle.base_url}")
    sys.stdout.flush()
    stop = threading.Event()

    def shutdown(signum, frame):
        stop.set()

    signal.signal(signal.SIGINT, shutdown)
    signal.signal(signal.SIGTERM, shutdown)
    stop.wait()
    stack.stop_stack(handles)
    return EXIT_OK


# ---------------------------------------------------------------------------
# seed
# ---------------------------------------------------------------------------


def cmd_seed(args) -> int:
    try:
        report = fixture.seed_alice_bob(
            idp_url=default_url("idp", args.idp_url),
            pod_url=default_url("pod", args.pod_url),
            retrieval_url=default_url("retrieval", args.retrieval_url),
            gateway_url=default_url("gateway", args.gateway_url),
        )
    except (UpstreamError, PodUnreachable, PodError, httpx.HTTPError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    for line in report.lines():
        print(line)
    return EXIT_OK


# ---------------------------------------------------------------------------
# acl-grant / trust
# ---------------------------------------------------------------------------


def _login(idp_url: str, username: str, password: str) -> tuple[str, str]:
    try:
        resp = httpx.post(
            idp_url + "/login", json={"username": username, "password": password}, timeout=10.0
        )
    except httpx.HTTPError as exc:
        raise CliError(EXIT_UPSTREAM, f"identity provider unreachable: {exc}")
    if resp.status_code == 401:
        raise CliError(EXIT_AUTH, "invalid credentials")
    if resp.status_code != 200:
        raise CliError(EXIT_UPSTREAM, f"login failed: {resp.status_code}")
    payload = resp.json()
    return payload["token"], payload["webid"]


def _governing_acl_via_pod(pod: PodClient, resource: Iri) -> tuple[Iri, Graph, bool]:
    """Nearest existing ACL doc readable with Control, walking ancestors."""
    candidates = [resource]
    ancestor = parent_container(resource)
    while ancestor is not None:
        candidates.append(ancestor)
        ancestor = parent_container(ancestor)
    for i, candidate in enumerate(candidates):
        doc = acl_doc_for(candidate)
        status, content = pod.status_get(doc)
        if status == 200:
            return doc, parse_turtle(content.decode("utf-8"), doc), i > 0
        if status in (401, 403):
            raise CliError(EXIT_PERMISSION, f"Control denied on {doc}")
        if status != 404:
            raise CliError(EXIT_UPSTREAM, f"unexpected {status} reading {doc}")
    raise CliError(EXIT_UPSTREAM, f"no governing ACL found for {resource}")


def _copied_rules(rules: list[AccessRule], resource: Iri) -> list:
    """Rewrites the governing document's Default rules onto a new ACL doc so
    creating it never masks inherited access."""
    triples = []
    is_container = resource.value.endswith("/")
    seen = set()
    for n, rule in enumerate(r for r in rules if isinstance(r.target, Default)):
        key = (tuple(sorted(map(str, rule.agents))), tuple(sorted(m.value for m in rule.modes)))
        if key in seen:
            continue
        seen.add(key)
        triples.extend(
            authorization_triples(
                Iri(acl_doc_for(resource).value + f"#inherited-{n + 1}"),
                sorted(rule.agents, key=str),
                sorted(rule.modes, key=lambda m: m.value),
                access_to=resource,
                default=resource if is_container else None,
            )
        )
    return triples


def cmd_acl_grant(args) -> int:
    idp_url = default_url("idp", args.idp_url)
    try:
        token, _ = _login(idp_url, args.user, args.password)
        pod = PodClient(token=token)
        resource = Iri(args.resource)
        modes = []
        for name in args.modes.split(","):
            try:
                modes.append(AccessMode(name.strip()))
            except ValueError:
                raise CliError(EXIT_USAGE, f"unknown mode {name.strip()!r}")
        if args.public:
            matcher = PublicAgent()
        elif args.authenticated:
            matcher = AuthenticatedAgent()
        else:
            matcher = ExactAgent(Iri(args.agent))

        own_doc = acl_doc_for(resource)
        status, content = pod.status_get(own_doc)
        if status == 200:
            graph = parse_turtle(content.decode("utf-8"), own_doc)
        elif status in (401, 403):
            raise CliError(EXIT_PERMISSION, f"Control denied on {own_doc}")
        elif status == 404:
            _, governing_graph, _ = _governing_acl_via_pod(pod, resource)
            graph = Graph(_copied_rules(parse_acl(governing_graph, own_doc), resource))
        else:
            raise CliError(EXIT_UPSTREAM, f"unexpected {status} reading {own_doc}")

        existing = {rule.id.value for rule in parse_acl(graph, own_doc)}
        n = 1
        while f"{own_doc.value}#grant-{n}" in existing:
            n += 1
        for triple in authorization_triples(
            Iri(f"{own_doc.value}#grant-{n}"),
            [matcher],
            modes,
            access_to=resource,
            default=resource if resource.value.endswith("/") else None,
        ):
            graph.add(triple)
        relative = {resource} | {
            t.subject for t in graph.match(None, None, None) if t.subject.value.startswith(own_doc.value + "#")
        }
        try:
            pod.put(own_doc, "text/turtle", serialize_turtle(graph, ACL_PREFIXES, base=own_doc, relativize=relative))
        except PodError as exc:
            if exc.status in (401, 403):
                raise CliError(EXIT_PERMISSION, f"not permitted to update {own_doc}: {exc}")
            raise CliError(EXIT_UPSTREAM, str(exc))
        print(f"granted {args.modes} on {resource} via {own_doc}#grant-{n}")
        return EXIT_OK
    except (PodUnreachable, TurtleSyntaxError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def cmd_trust(args) -> int:
    if args.action in ("add", "remove") and not args.webid:
        print("error: add/remove need a WebID argument", file=sys.stderr)
        return EXIT_USAGE
    idp_url = default_url("idp", args.idp_url)
    try:
        token, owner_webid = _login(idp_url, args.owner, args.password)
        marker = "profile/card#me"
        if not owner_webid.endswith(marker):
            raise CliError(EXIT_UPSTREAM, f"cannot derive pod from WebID {owner_webid}")
        pod_base = owner_webid[: -len(marker)]
        trust_iri = Iri(pod_base + fixture.TRUST_LIST_PATH)
        pod = PodClient(token=token)

        found = pod.try_get(trust_iri)
        allowed: set[Iri] = set()
        if found is not None:
            g = parse_turtle(found[1].decode("utf-8"), trust_iri)
            allowed = {t.object for t in g.match(None, ACL_AGENT, None) if isinstance(t.object, Iri)}
        if args.action == "add":
            allowed.add(Iri(args.webid))
        elif args.action == "remove":
            allowed.discard(Iri(args.webid))
        if args.action in ("add", "remove"):
            pod.put(trust_iri, "text/turtle", fixture.trust_list_document(trust_iri, sorted(allowed)))
            pod.put(
                acl_doc_for(trust_iri),
                "text/turtle",
                fixture.trust_list_acl_document(trust_iri, Iri(owner_webid)),
            )
        for webid in sorted(w.value for w in allowed):
            print(webid)
        return EXIT_OK
    except PodError as exc:
        code = EXIT_PERMISSION if exc.status in (401, 403) else EXIT_UPSTREAM
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (PodUnreachable, TurtleSyntaxError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


# ---------------------------------------------------------------------------
# ask
# ---------------------------------------------------------------------------


def cmd_ask(args) -> int:
    chat_url = default_url("chat", args.chat_url)
    http = httpx.Client(timeout=60.0)
    try:
        resp = http.post(
            chat_url + "/api/login", json={"username": args.user, "password": args.password}
        )
    except httpx.HTTPError as exc:
        print(f"error: chat service unreachable: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    if resp.status_code == 401:
        print("error: invalid credentials", file=sys.stderr)
        return EXIT_AUTH
    if resp.status_code != 200:
        print(f"error: login failed: {resp.status_code} {resp.text}", file=sys.stderr)
        return EXIT_UPSTREAM
    token = resp.json()["token"]
    auth = {"Authorization": f"Bearer {token}"}

    if args.source:
        config_resp = http.get(chat_url + "/api/config", headers=auth)
        if config_resp.status_code != 200:
            print(f"error: cannot load config: {config_resp.text}", file=sys.stderr)
            return EXIT_UPSTREAM
        config = config_resp.json()["config"]
        config["doc_source"] = args.source
        put_resp = http.put(chat_url + "/api/config", json=config, headers=auth)
        if put_resp.status_code != 200:
            print(f"error: cannot save config: {put_resp.text}", file=sys.stderr)
            return EXIT_UPSTREAM

    body = {
        "content": args.query,
        "model": args.model,
        "use_rag": args.use_rag,
        "retrieval_model": args.retrieval_model,
    }
    if args.thread:
        resp = http.post(chat_url + f"/api/threads/{args.thread}/messages", json=body, headers=auth)
    else:
        resp = http.post(chat_url + "/api/threads", json=body, headers=auth)
    if resp.status_code == 403:
        detail = resp.json().get("detail", "")
        print(f"error: permission denied: {detail}", file=sys.stderr)
        return EXIT_PERMISSION
    if resp.status_code == 401:
        print("error: session rejected", file=sys.stderr)
        return EXIT_AUTH
    if resp.status_code == 400:
        print(f"error: {resp.text}", file=sys.stderr)
        return EXIT_USAGE
    if resp.status_code != 200:
        print(f"error: chat failed: {resp.status_code} {resp.text}", file=sys.stderr)
        return EXIT_UPSTREAM
    payload = resp.json()
    if not args.thread:
        print(f"thread: {payload['thread_id']}")
    for message in payload["messages"]:
        if message["role"] == "user":
            print(f"user> {message['content']}")
        else:
            print(f"assistant[{message.get('model', '?')}]> {message['content']}")
            citations = message.get("citations") or []
            if citations:
                print("citations: " + ", ".join(citations))
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "serve": cmd_serve,
        "seed": cmd_seed,
        "acl-grant": cmd_acl_grant,
        "trust": cmd_trust,
        "ask": cmd_ask,
    }
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
