"""The Alice/Bob/Charlie scenario fixture: accounts, a shared note, the ACL
granting the retrieval service read access, and Alice's trust list naming Bob.

Seeding is idempotent: every document is a fixed byte string (the serializer
is deterministic), and re-registering an existing account is a no-op.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import httpx

from .identity import UpstreamError
from .orchestrator import AppConfig, config_to_turtle
from .podclient import PodClient
from .rdf import ACL_NS, Graph, Iri, Triple, serialize_turtle
from .wac import (
    ACL_AGENT,
    ACL_PREFIXES,
    AccessMode,
    AuthenticatedAgent,
    ExactAgent,
    acl_doc_for,
    authorization_triples,
)

SCENARIO_PASSWORDS = {
    "alice": "alice-pass",
    "bob": "bob-pass",
    "charlie": "charlie-pass",
}
SERVICE_USERNAME = "retrieval-svc"
SERVICE_PASSWORD = "retrieval-svc-pass"

MEETING_NOTE_PATH = "notes/meeting-2024-01-15.txt"
MEETING_NOTE_TEXT = (
    "Meeting notes, mid-January: we discussed the name of a new decentralised "
    "web project launching soon. We eventually decided to call it SocialGenPod."
)
TRUST_LIST_PATH = "genpod/assistant-access.ttl"
CONFIG_PATH = "genpod/config.ttl"


@dataclass
class SeedReport:
    webids: dict = field(default_factory=dict)
    resources: list = field(default_factory=list)

    def lines(self) -> list[str]:
        out = [f"webid {name}: {webid}" for name, webid in sorted(self.webids.items())]
        out.extend(f"resource: {r}" for r in self.resources)
        return out


def register_account(http: httpx.Client, idp_url: str, username: str, password: str, pod_base: str) -> Iri:
    """Create the account if missing; existing accounts are left untouched."""
    try:
        resp = http.post(
            idp_url.rstrip("/") + "/register",
            json={"username": username, "password": password, "pod_base": pod_base},
        )
    except httpx.HTTPError as exc:
        raise UpstreamError(f"identity provider unreachable: {exc}") from exc
    if resp.status_code == 201:
        return Iri(resp.json()["webid"])
    if resp.status_code == 409:
        return Iri(pod_base.rstrip("/") + "/profile/card#me")
    raise UpstreamError(f"register {username} failed: {resp.status_code} {resp.text}")


def login(http: httpx.Client, idp_url: str, username: str, password: str) -> str:
    resp = http.post(idp_url.rstrip("/") + "/login", json={"username": username, "password": password})
    if resp.status_code != 200:
        raise UpstreamError(f"login {username} failed: {resp.status_code} {resp.text}")
    return resp.json()["token"]


def notes_acl_document(pod_base: Iri, owner: Iri, service: Iri) -> str:
    notes = Iri(pod_base.value + "notes/")
    doc = acl_doc_for(notes)
    g = Graph(
        authorization_triples(
            Iri(doc.value + "#owner"),
            [ExactAgent(owner)],
            [AccessMode.READ, AccessMode.WRITE, AccessMode.CONTROL],
            access_to=notes,
            default=notes,
        )
        + authorization_triples(
            Iri(doc.value + "#retrieval"),
            [ExactAgent(service)],
            [AccessMode.READ],
            access_to=notes,
            default=notes,
        )
    )
    relative = {notes, Iri(doc.value + "#owner"), Iri(doc.value + "#retrieval")}
    return serialize_turtle(g, ACL_PREFIXES, base=doc, relativize=relative)


def trust_list_document(trust_iri: Iri, allowed: list[Iri]) -> str:
    subject = Iri(trust_iri.value + "#access")
    g = Graph(Triple(subject, ACL_AGENT, webid) for webid in allowed)
    return serialize_turtle(g, {"acl": ACL_NS}, base=trust_iri, relativize={subject})


def trust_list_acl_document(trust_iri: Iri, owner: Iri) -> str:
    doc = acl_doc_for(trust_iri)
    g = Graph(
        authorization_triples(
            Iri(doc.value + "#owner"),
            [ExactAgent(owner)],
            [AccessMode.READ, AccessMode.WRITE, AccessMode.CONTROL],
            access_to=trust_iri,
        )
        + authorization_triples(
            Iri(doc.value + "#services"),
            [AuthenticatedAgent()],
            [AccessMode.READ],
            access_to=trust_iri,
        )
    )
    relative = {trust_iri, Iri(doc.value + "#owner"), Iri(doc.value + "#services")}
    return serialize_turtle(g, ACL_PREFIXES, base=doc, relativize=relative)


def seed_alice_bob(
    idp_url: str,
    pod_url: str,
    retrieval_url: str,
    gateway_url: str,
    http: Optional[httpx.Client] = None,
) -> SeedReport:
    http = http or httpx.Client(timeout=15.0)
    report = SeedReport()
    pod_url = pod_url.rstrip("/")

    webids: dict[str, Iri] = {}
    for name, password in SCENARIO_PASSWORDS.items():
        webids[name] = register_account(http, idp_url, name, password, f"{pod_url}/{name}/")
    webids[SERVICE_USERNAME] = register_account(
        http, idp_url, SERVICE_USERNAME, SERVICE_PASSWORD, f"{pod_url}/{SERVICE_USERNAME}/"
    )
    report.webids = {name: w.value for name, w in webids.items()}

    alice_pod = Iri(f"{pod_url}/alice/")
    alice = PodClient(token=login(http, idp_url, "alice", SCENARIO_PASSWORDS["alice"]), http=http)

    note_iri = Iri(alice_pod.value + MEETING_NOTE_PATH)
    alice.put(note_iri, "text/plain", MEETING_NOTE_TEXT)
    report.resources.append(note_iri.value)

    notes_acl = acl_doc_for(Iri(alice_pod.value + "notes/"))
    alice.put(notes_acl, "text/turtle", notes_acl_document(alice_pod, webids["alice"], webids[SERVICE_USERNAME]))
    report.resources.append(notes_acl.value)

    trust_iri = Iri(alice_pod.value + TRUST_LIST_PATH)
    alice.put(trust_iri, "text/turtle", trust_list_document(trust_iri, [webids["bob"]]))
    alice.put(acl_doc_for(trust_iri), "text/turtle", trust_list_acl_document(trust_iri, webids["alice"]))
    report.resources.extend([trust_iri.value, acl_doc_for(trust_iri).value])

    # Bob's saved app configuration, so the login flow can offer "reuse".
    bob_pod = Iri(f"{pod_url}/bob/")
    bob = PodClient(token=login(http, idp_url, "bob", SCENARIO_PASSWORDS["bob"]), http=http)
    config_iri = Iri(bob_pod.value + CONFIG_PATH)
    config = AppConfig(
        retrieval_api_type="demo",
        retrieval_url=Iri(retrieval_url.rstrip("/") + "/"),
        llm_api_type="demo",
        llm_url=Iri(gateway_url.rstrip("/") + "/"),
        doc_source=Iri(alice_pod.value + "notes/"),
    )
    bob.put(config_iri, "text/turtle", config_to_turtle(config, config_iri))
    report.resources.append(config_iri.value)

    return report
