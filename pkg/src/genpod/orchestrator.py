"""Chat orchestrator: login, pod-persisted config and threads, and the
query -> retrieve -> generate -> store loop.

All durable state lives in the user's pod under ``genpod/``: ``config.ttl``
plus one container per thread holding ``meta.ttl`` and ``msg-{seq}.ttl``
resources. The orchestrator itself only caches sessions keyed by the bearer
token and can rebuild them from the token alone after a restart.

Retrieval is always called with the end user's token so delegation decisions
are attributable to the user; gateway payloads carry opaque context ids with
all source IRIs stripped.
"""

from __future__ import annotations

import re
import secrets
import threading
import time
from dataclasses import dataclass, field
from typing import Optional
from urllib.parse import urlsplit

import httpx
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .identity import TokenInvalid, TokenVerifier, UpstreamError
from .podclient import LDP_CONTAINS, PodClient, PodError, PodUnreachable
from .rdf import (
    GENPOD_NS,
    PIM_NS,
    RDF_TYPE,
    Graph,
    Iri,
    Literal,
    Triple,
    TurtleSyntaxError,
    parse_turtle,
    serialize_turtle,
)

TITLE_CHARS = 12
CHATS_PATH = "genpod/chats/"
CONFIG_PATH = "genpod/config.ttl"

NS_ROLE = Iri(GENPOD_NS + "role")
NS_CONTENT = Iri(GENPOD_NS + "content")
NS_TIMESTAMP = Iri(GENPOD_NS + "timestamp")
NS_MODEL = Iri(GENPOD_NS + "model")
NS_CITATION = Iri(GENPOD_NS + "citation")
NS_TITLE = Iri(GENPOD_NS + "title")
NS_CREATED = Iri(GENPOD_NS + "created")
NS_MESSAGE = Iri(GENPOD_NS + "Message")
NS_THREAD = Iri(GENPOD_NS + "Thread")
NS_CONFIGURATION = Iri(GENPOD_NS + "Configuration")
NS_RETRIEVAL_API_TYPE = Iri(GENPOD_NS + "retrievalApiType")
NS_RETRIEVAL_URL = Iri(GENPOD_NS + "retrievalUrl")
NS_LLM_API_TYPE = Iri(GENPOD_NS + "llmApiType")
NS_LLM_URL = Iri(GENPOD_NS + "llmUrl")
NS_DOC_SOURCE = Iri(GENPOD_NS + "docSource")
PIM_STORAGE = Iri(PIM_NS + "storage")

GENPOD_PREFIXES = {"genpod": GENPOD_NS}

_MSG_NAME_RE = re.compile(r"msg-(\d{6})\.ttl$")


class OrchestratorError(Exception):
    pass


class InvalidCredentials(OrchestratorError):
    pass


class IdpUnreachable(OrchestratorError):
    pass


class ConfigCorrupt(OrchestratorError):
    pass


class NoDocSource(OrchestratorError):
    pass


class RetrievalDenied(OrchestratorError):
    pass


class GatewayError(OrchestratorError):
    pass


class NotFound(OrchestratorError):
    pass


@dataclass
class AppConfig:
    retrieval_api_type: str
    retrieval_url: Iri
    llm_api_type: str
    llm_url: Iri
    doc_source: Optional[Iri] = None

    def as_dict(self) -> dict:
        return {
            "retrieval_api_type": self.retrieval_api_type,
            "retrieval_url": self.retrieval_url.value,
            "llm_api_type": self.llm_api_type,
            "llm_url": self.llm_url.value,
            "doc_source": self.doc_source.value if self.doc_source else None,
        }


def config_to_turtle(config: AppConfig, config_iri: Iri) -> str:
    subject = Iri(config_iri.value + "#it")
    triples = [
        Triple(subject, Iri(RDF_TYPE), NS_CONFIGURATION),
        Triple(subject, NS_RETRIEVAL_API_TYPE, Literal(config.retrieval_api_type)),
        Triple(subject, NS_RETRIEVAL_URL, config.retrieval_url),
        Triple(subject, NS_LLM_API_TYPE, Literal(config.llm_api_type)),
        Triple(subject, NS_LLM_URL, config.llm_url),
    ]
    if config.doc_source is not None:
        triples.append(Triple(subject, NS_DOC_SOURCE, config.doc_source))
    return serialize_turtle(Graph(triples), GENPOD_PREFIXES, base=config_iri, relativize={subject})


def config_from_graph(g: Graph, config_iri: Iri) -> AppConfig:
    subject = Iri(config_iri.value + "#it")

    def one_literal(pred: Iri) -> str:
        objs = g.objects(subject, pred)
        if len(objs) != 1 or not isinstance(objs[0], Literal):
            raise ConfigCorrupt(f"expected one literal for {pred}")
        return objs[0].lexical

    def one_iri(pred: Iri) -> Iri:
        objs = g.objects(subject, pred)
        if len(objs) != 1 or not isinstance(objs[0], Iri):
            raise ConfigCorrupt(f"expected one IRI for {pred}")
        return objs[0]

    sources = g.objects(subject, NS_DOC_SOURCE)
    if len(sources) > 1 or (sources and not isinstance(sources[0], Iri)):
        raise ConfigCorrupt("expected at most one doc source IRI")
    return AppConfig(
        retrieval_api_type=one_literal(NS_RETRIEVAL_API_TYPE),
        retrieval_url=one_iri(NS_RETRIEVAL_URL),
        llm_api_type=one_literal(NS_LLM_API_TYPE),
        llm_url=one_iri(NS_LLM_URL),
        doc_source=sources[0] if sources else None,
    )


@dataclass
class ChatMessage:
    seq: int
    role: str
    content: str
    timestamp: str
    model: Optional[str] = None
    citations: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        out = {"seq": self.seq, "role": self.role, "content": self.content, "timestamp": self.timestamp}
        if self.role == "assistant":
            out["model"] = self.model
            out["citations"] = list(self.citations)
        return out


def message_to_turtle(msg: ChatMessage, msg_iri: Iri) -> str:
    subject = Iri(msg_iri.value + "#msg")
    triples = [
        Triple(subject, Iri(RDF_TYPE), NS_MESSAGE),
        Triple(subject, NS_ROLE, Literal(msg.role)),
        Triple(subject, NS_CONTENT, Literal(msg.content)),
        Triple(subject, NS_TIMESTAMP, Literal(msg.timestamp)),
    ]
    if msg.model is not None:
        triples.append(Triple(subject, NS_MODEL, Literal(msg.model)))
    for citation in msg.citations:
        triples.append(Triple(subject, NS_CITATION, Literal(citation)))
    return serialize_turtle(Graph(triples), GENPOD_PREFIXES, base=msg_iri, relativize={subject})


def message_from_graph(g: Graph, msg_iri: Iri, seq: int) -> ChatMessage:
    subject = Iri(msg_iri.value + "#msg")

    def one(pred: Iri) -> str:
        objs = g.objects(subject, pred)
        if len(objs) != 1 or not isinstance(objs[0], Literal):
            raise ConfigCorrupt(f"message {msg_iri} lacks {pred}")
        return objs[0].lexical

    models = [o.lexical for o in g.objects(subject, NS_MODEL) if isinstance(o, Literal)]
    citations = sorted(o.lexical for o in g.objects(subject, NS_CITATION) if isinstance(o, Literal))
    return ChatMessage(
        seq=seq,
        role=one(NS_ROLE),
        content=one(NS_CONTENT),
        timestamp=one(NS_TIMESTAMP),
        model=models[0] if models else None,
        citations=citations,
    )


@dataclass
class ChatThread:
    id: str
    title: str
    created: str
    container: Iri

    def as_dict(self) -> dict:
        return {"id": self.id, "title": self.title, "created": self.created}


def thread_meta_to_turtle(thread: ChatThread, meta_iri: Iri) -> str:
    subject = Iri(meta_iri.value + "#it")
    return serialize_turtle(
        Graph(
            [
                Triple(subject, Iri(RDF_TYPE), NS_THREAD),
                Triple(subject, NS_TITLE, Literal(thread.title)),
                Triple(subject, NS_CREATED, Literal(thread.created)),
            ]
        ),
        GENPOD_PREFIXES,
        base=meta_iri,
        relativize={subject},
    )


def thread_title(first_message: str) -> str:
    return first_message[:TITLE_CHARS].rstrip()


def _utc_now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def new_thread_id() -> str:
    return time.strftime("%Y%m%dT%H%M%SZ", time.gmtime()) + secrets.token_hex(2)


def pod_base_from_webid_path(webid: Iri, origin: str) -> Iri:
    """Rebase the conventional pod path of a WebID onto another server origin."""
    path = urlsplit(webid.value).path
    marker = "/profile/card"
    if not path.endswith(marker):
        raise OrchestratorError(f"cannot derive pod path from WebID {webid}")
    return Iri(origin.rstrip("/") + path[: -len(marker)] + "/")


@dataclass
class Session:
    token: str
    webid: Iri
    pod_base: Iri


@dataclass
class OrchestratorSettings:
    idp_url: str
    retrieval_url_default: str
    gateway_url_default: str
    pod_origin_override: Optional[str] = None


class OrchestratorService:
    def __init__(self, settings: OrchestratorSettings, http: Optional[httpx.Client] = None):
        self.settings = settings
        self._http = http or httpx.Client(timeout=60.0)
        self.verifier = TokenVerifier(settings.idp_url, http=self._http)
        self._sessions: dict[str, Session] = {}
        self._sessions_lock = threading.Lock()
        self._thread_locks: dict[str, threading.Lock] = {}
        self._thread_locks_guard = threading.Lock()

    # -- sessions -------------------------------------------------------------

    def login(self, username: str, password: str, idp_url: Optional[str] = None) -> Session:
        idp = (idp_url or self.settings.idp_url).rstrip("/")
        try:
            resp = self._http.post(idp + "/login", json={"username": username, "password": password})
        except httpx.HTTPError as exc:
            raise IdpUnreachable(f"identity provider unreachable: {exc}") from exc
        if resp.status_code == 401:
            raise InvalidCredentials("invalid credentials")
        if resp.status_code != 200:
            raise IdpUnreachable(f"identity provider error: {resp.status_code}")
        payload = resp.json()
        session = self._build_session(payload["token"], Iri(payload["webid"]))
        with self._sessions_lock:
            self._sessions[session.token] = session
        return session

    def _build_session(self, token: str, webid: Iri) -> Session:
        return Session(token=token, webid=webid, pod_base=self._pod_base(token, webid))

    def _pod_base(self, token: str, webid: Iri) -> Iri:
        if self.settings.pod_origin_override:
            return pod_base_from_webid_path(webid, self.settings.pod_origin_override)
        profile_doc = Iri(webid.value.split("#", 1)[0])
        try:
            g = PodClient(token=token, http=self._http).get_graph(profile_doc)
        except (PodError, PodUnreachable, TurtleSyntaxError) as exc:
            raise PodUnreachable(f"cannot dereference WebID profile {profile_doc}: {exc}") from exc
        storages = [o for o in g.objects(webid, PIM_STORAGE) if isinstance(o, Iri)]
        if not storages:
            raise OrchestratorError(f"profile {profile_doc} does not declare a storage location")
        return storages[0]

    def session_for(self, token: str) -> Session:
        """Session lookup that survives orchestrator restarts: any valid token
        can rebuild its session from the profile alone."""
        with self._sessions_lock:
            session = self._sessions.get(token)
        if session is not None:
            return session
        claims = self.verifier.verify(token)
        session = self._build_session(token, claims.webid)
        with self._sessions_lock:
            self._sessions[token] = session
        return session

    def _pod(self, session: Session) -> PodClient:
        return PodClient(token=session.token, http=self._http)

    # -- config ---------------------------------------------------------------

    def default_config(self) -> AppConfig:
        return AppConfig(
            retrieval_api_type="demo",
            retrieval_url=Iri(self.settings.retrieval_url_default.rstrip("/") + "/"),
            llm_api_type="demo",
            llm_url=Iri(self.settings.gateway_url_default.rstrip("/") + "/"),
            doc_source=None,
        )

    def config_iri(self, session: Session) -> Iri:
        return Iri(session.pod_base.value + CONFIG_PATH)

    def load_or_init_config(self, session: Session) -> tuple[AppConfig, bool]:
        config_iri = self.config_iri(session)
        found = self._pod(session).try_get(config_iri)
        if found is None:
            return self.default_config(), False
        try:
            g = parse_turtle(found[1].decode("utf-8"), config_iri)
        except (TurtleSyntaxError, UnicodeDecodeError) as exc:
            raise ConfigCorrupt(f"stored configuration does not parse: {exc}") from exc
        return config_from_graph(g, config_iri), True

    def save_config(self, session: Session, config: AppConfig) -> None:
        config_iri = self.config_iri(session)
        self._pod(session).put(config_iri, "text/turtle", config_to_turtle(config, config_iri))

    # -- threads ----------------------------------------------------------------

    def chats_container(self, session: Session) -> Iri:
        return Iri(session.pod_base.value + CHATS_PATH)

    def _thread_container(self, session: Session, thread_id: str) -> Iri:
        if not re.fullmatch(r"[A-Za-z0-9._~-]+", thread_id):
            raise NotFound(f"no thread {thread_id!r}")
        return Iri(self.chats_container(session).value + thread_id + "/")

    def _thread_lock(self, container: Iri) -> threading.Lock:
        with self._thread_locks_guard:
            lock = self._thread_locks.get(container.value)
            if lock is None:
                lock = self._thread_locks[container.value] = threading.Lock()
            return lock

    def list_threads(self, session: Session) -> list[ChatThread]:
        pod = self._pod(session)
        chats = self.chats_container(session)
        found = pod.try_get(chats)
        if found is None:
            return []
        g = parse_turtle(found[1].decode("utf-8"), chats)
        threads = []
        for t in g.match(chats, LDP_CONTAINS, None):
            member = t.object
            if not isinstance(member, Iri) or not member.value.endswith("/"):
                continue
            thread = self._load_thread(pod, member)
            if thread is not None:
                threads.append(thread)
        threads.sort(key=lambda th: (th.created, th.id), reverse=True)
        return threads

    def _load_thread(self, pod: PodClient, container: Iri) -> Optional[ChatThread]:
        meta_iri = Iri(container.value + "meta.ttl")
        found = pod.try_get(meta_iri)
        if found is None:
            return None
        try:
            g = parse_turtle(found[1].decode("utf-8"), meta_iri)
        except TurtleSyntaxError:
            return None
        subject = Iri(meta_iri.value + "#it")
        titles = [o.lexical for o in g.objects(subject, NS_TITLE) if isinstance(o, Literal)]
        createds = [o.lexical for o in g.objects(subject, NS_CREATED) if isinstance(o, Literal)]
        if not titles or not createds:
            return None
        thread_id = container.value.rstrip("/").rsplit("/", 1)[-1]
        return ChatThread(id=thread_id, title=titles[0], created=createds[0], container=container)

    def get_messages(self, session: Session, thread_id: str) -> list[ChatMessage]:
        pod = self._pod(session)
        container = self._thread_container(session, thread_id)
        found = pod.try_get(container)
        if found is None:
            raise NotFound(f"no thread {thread_id!r}")
        g = parse_turtle(found[1].decode("utf-8"), container)
        messages = []
        for t in g.match(container, LDP_CONTAINS, None):
            member = t.object
            if not isinstance(member, Iri):
                continue
            m = _MSG_NAME_RE.search(member.value)
            if m is None:
                continue
            seq = int(m.group(1))
            content_type, data = pod.get(member)
            messages.append(message_from_graph(parse_turtle(data.decode("utf-8"), member), member, seq))
        messages.sort(key=lambda m: m.seq)
        return messages

    def delete_thread(self, session: Session, thread_id: str) -> None:
        pod = self._pod(session)
        container = self._thread_container(session, thread_id)
        found = pod.try_get(container)
        if found is None:
            raise NotFound(f"no thread {thread_id!r}")
        g = parse_turtle(found[1].decode("utf-8"), container)
        for t in g.match(container, LDP_CONTAINS, None):
            if isinstance(t.object, Iri) and not t.object.value.endswith("/"):
                pod.delete(t.object)
        pod.delete(Iri(container.value + "meta.ttl"))
        pod.delete(container)

    # -- the chat loop ---------------------------------------------------------

    def post_message(
        self,
        session: Session,
        thread_id: Optional[str],
        text: str,
        model_id: str,
        use_rag: bool,
        retrieval_model: str = "bm25",
    ) -> tuple[str, ChatMessage, ChatMessage]:
        config, _ = self.load_or_init_config(session)
        if use_rag and config.doc_source is None:
            raise NoDocSource("use_rag requires a configured document source")
        pod = self._pod(session)
        is_new = thread_id is None
        if thread_id is None:
            thread_id = new_thread_id()
        container = self._thread_container(session, thread_id)
        with self._thread_lock(container):
            if is_new:
                meta_iri = Iri(container.value + "meta.ttl")
                thread = ChatThread(id=thread_id, title=thread_title(text), created=_utc_now(), container=container)
                pod.put(meta_iri, "text/turtle", thread_meta_to_turtle(thread, meta_iri))
                history: list[ChatMessage] = []
            else:
                history = self.get_messages(session, thread_id)
            seq = (history[-1].seq + 1) if history else 1
            user_msg = ChatMessage(seq=seq, role="user", content=text, timestamp=_utc_now())
            user_iri = Iri(container.value + f"msg-{seq:06d}.ttl")
            # The user's turn is durable before any external service call.
            pod.put(user_iri, "text/turtle", message_to_turtle(user_msg, user_iri))

            context, citations = [], []
            if use_rag:
                chunks = self._retrieve(session, config, text, retrieval_model)
                context = [{"id": f"chunk-{i + 1}", "text": c["text"]} for i, c in enumerate(chunks)]
                citations = sorted(c["id"] for c in chunks)

            turns = [{"role": m.role, "content": m.content} for m in history + [user_msg]]
            answer = self._generate(session, config, model_id, turns, context)

            assistant_msg = ChatMessage(
                seq=seq + 1,
                role="assistant",
                content=answer,
                timestamp=_utc_now(),
                model=model_id,
                citations=citations,
            )
            assistant_iri = Iri(container.value + f"msg-{seq + 1:06d}.ttl")
            pod.put(assistant_iri, "text/turtle", message_to_turtle(assistant_msg, assistant_iri))
            return thread_id, user_msg, assistant_msg

    def _retrieve(self, session: Session, config: AppConfig, query: str, method: str) -> list[dict]:
        url = config.retrieval_url.value.rstrip("/") + "/retrieve"
        body = {"query": query, "source": config.doc_source.value, "k": 4, "method": method}
        try:
            resp = self._http.post(url, json=body, headers={"Authorization": f"Bearer {session.token}"})
        except httpx.HTTPError as exc:
            raise GatewayError(f"retrieval service unreachable: {exc}") from exc
        if resp.status_code == 403:
            raise RetrievalDenied(resp.json().get("detail", "retrieval denied"))
        if resp.status_code == 401:
            raise InvalidCredentials("session token rejected by retrieval service")
        if resp.status_code != 200:
            raise GatewayError(f"retrieval service error: {resp.status_code} {resp.text}")
        return resp.json()["chunks"]

    def _generate(
        self, session: Session, config: AppConfig, model_id: str, turns: list[dict], context: list[dict]
    ) -> str:
        url = config.llm_url.value.rstrip("/") + "/chat"
        body = {"model": model_id, "messages": turns, "context": context}
        try:
            resp = self._http.post(url, json=body, headers={"Authorization": f"Bearer {session.token}"})
        except httpx.HTTPError as exc:
            raise GatewayError(f"model gateway unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise GatewayError(f"model gateway error: {resp.status_code} {resp.text}")
        return resp.json()["message"]["content"]

    def aggregated_models(self, session: Session) -> list[dict]:
        config, _ = self.load_or_init_config(session)
        out = []
        for provider, url in (("retrieval", config.retrieval_url.value), ("llm", config.llm_url.value)):
            try:
                resp = self._http.get(url.rstrip("/") + "/models")
                resp.raise_for_status()
            except httpx.HTTPError as exc:
                raise GatewayError(f"{provider} provider unreachable: {exc}") from exc
            for model in resp.json()["models"]:
                out.append({"provider": provider, **model})
        return out


# ---------------------------------------------------------------------------
# HTTP surface
# ---------------------------------------------------------------------------


class LoginBody(BaseModel):
    username: str
    password: str
    idp: Optional[str] = None


class ConfigBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    retrieval_api_type: str
    retrieval_url: str
    llm_api_type: str
    llm_url: str
    doc_source: Optional[str] = None


class MessageBody(BaseModel):
    model_config = ConfigDict(extra="forbid")

    content: str = Field(min_length=1)
    model: str
    use_rag: bool = False
    retrieval_model: str = "bm25"


def create_orchestrator_app(service: OrchestratorService) -> FastAPI:
    app = FastAPI(title="genpod chat orchestrator")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse({"error": code, "detail": message}, status_code=status)

    @app.exception_handler(RequestValidationError)
    def on_validation_error(request: Request, exc: RequestValidationError):
        return error(400, "bad_request", str(exc.errors()))

    def session_of(request: Request) -> Session | JSONResponse:
        header = request.headers.get("authorization", "")
        scheme, _, credential = header.partition(" ")
        if scheme.lower() != "bearer" or not credential:
            return error(401, "unauthenticated", "bearer token required")
        try:
            return service.session_for(credential)
        except TokenInvalid as exc:
            return error(401, "unauthenticated", str(exc))
        except (UpstreamError, PodUnreachable) as exc:
            return error(502, "pod_unreachable", str(exc))

    @app.get("/health")
    def health():
        return {"status": "ok", "service": "chat"}

    @app.post("/api/login")
    def login(body: LoginBody):
        try:
            session = service.login(body.username, body.password, body.idp)
        except InvalidCredentials:
            return error(401, "invalid_credentials", "invalid credentials")
        except IdpUnreachable as exc:
            return error(502, "idp_unreachable", str(exc))
        except (PodUnreachable, OrchestratorError) as exc:
            return error(502, "pod_unreachable", str(exc))
        return {"token": session.token, "webid": session.webid.value}

    @app.get("/api/config")
    def get_config(request: Request):
        session = session_of(request)
        if isinstance(session, JSONResponse):
            return session
        try:
            config, existed = service.load_or_init_config(session)
        except ConfigCorrupt as exc:
            return error(500, "config_corrupt", str(exc))
        except (PodUnreachable, PodError) as exc:
            return error(502, "pod_unreachable", str(exc))
        return {"config": config.as_dict(), "existed": existed}

    @app.put("/api/config")
    def put_config(body: ConfigBody, request: Request):
        session = session_of(request)
        if isinstance(session, JSONResponse):
            return session
        try:
            config = AppConfig(
                retrieval_api_type=body.retrieval_api_type,
                retrieval_url=Iri(body.retrieval_url),
                llm_api_type=body.llm_api_type,
                llm_url=Iri(body.llm_url),
                doc_source=Iri(body.doc_source) if body.doc_source else None,
            )
        except ValueError as exc:
            return error(400, "bad_request", str(exc))
        try:
            service.save_config(session, config)
        except PodError as exc:
            if exc.status == 403:
                return error(403, "forbidden", str(exc))
            return error(502, "pod_unreachable", str(exc))
        except PodUnreachable as exc:
            return error(502, "pod_unreachable", str(exc))
        return {"config": config.as_dict()}

    @app.get("/api/models")
    def models(request: Request):
        session = session_of(request)
        if isinstance(session, JSONResponse):
            return session
        try:
            return {"models": service.aggregated_models(session)}
        except GatewayError as exc:
            return error(502, "provider_unreachable", str(exc))
        except (PodUnreachable, ConfigCorrupt) as exc:
            return error(502, "pod_unreachable", str(exc))

    @app.get("/api/threads")
    def threads(request: Request):
        session = session_of(request)
        if isinstance(session, JSONResponse):
            return session
        try:
            return {"threads": [t.as_dict() for t in service.list_threads(session)]}
        except (PodUnreachable, PodError, TurtleSyntaxError) as exc:
            return error(502, "pod_unreachable", str(exc))

    def _post(request: Request, body: MessageBody, thread_id: Optional[str]):
        session = session_of(request)
        if isinstance(session, JSONResponse):
            return session
        try:
            tid, user_msg, assistant_msg = service.post_message(
                session, thread_id, body.content, body.model, body.use_rag, body.retrieval_model
            )
        except NoDocSource as exc:
            return error(400, "no_doc_source", str(exc))
        except NotFound as exc:
            return error(404, "not_found", str(exc))
        except RetrievalDenied as exc:
            return error(403, "retrieval_denied", str(exc))
        except InvalidCredentials as exc:
            return error(401, "unauthenticated", str(exc))
        except ConfigCorrupt as exc:
            return error(500, "config_corrupt", str(exc))
        except GatewayError as exc:
            return error(502, "gateway_error", str(exc))
        except (PodUnreachable, PodError) as exc:
            return error(502, "pod_unreachable", str(exc))
        return {"thread_id": tid, "messages": [user_msg.as_dict(), assistant_msg.as_dict()]}

    @app.post("/api/threads")
    def new_thread(body: MessageBody, request: Request):
        return _post(request, body, None)

    @app.post("/api/threads/{thread_id}/messages")
    def post_to_thread(thread_id: str, body: MessageBody, request: Request):
        return _post(request, body, thread_id)

    @app.get("/api/threads/{thread_id}/messages")
    def get_thread_messages(thread_id: str, request: Request):
        session = session_of(request)
        if isinstance(session, JSONResponse):
            return session
        try:
            return {"messages": [m.as_dict() for m in service.get_messages(session, thread_id)]}
        except NotFound as exc:
            return error(404, "not_found", str(exc))
        except (PodUnreachable, PodError, TurtleSyntaxError) as exc:
            return error(502, "pod_unreachable", str(exc))

    @app.delete("/api/threads/{thread_id}", status_code=204)
    def delete_thread(thread_id: str, request: Request):
        session = session_of(request)
        if isinstance(session, JSONResponse):
            return session
        try:
            service.delete_thread(session, thread_id)
        except NotFound as exc:
            return error(404, "not_found", str(exc))
        except (PodUnreachable, PodError) as exc:
            return error(502, "pod_unreachable", str(exc))
        return Response(status_code=204)

    return app
