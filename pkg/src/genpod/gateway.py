"""Generative-model gateway: model listing and chat completions.

Ships two deterministic extractive demo models so the stack runs offline,
plus an optional adapter for an external HTTP completion provider. The
request schema is closed: payloads may carry conversation turns and opaque
context snippets, nothing else — no storage locations, no tokens.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Optional

import httpx
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .identity import TokenInvalid, TokenVerifier, UpstreamError
from .rdf import Iri
from .retrieval import split_sentences, tokenize

FALLBACK_ANSWER = (
    "I'm sorry, but I need more context to provide a helpful answer. "
    "Could you please specify what you are referring to?"
)
ANSWER_PREFIX = "Based on the shared documents: "

STOPWORDS = frozenset(
    """the and was were what our you your can could please about with that this
    for are how did does have has had will would when where who why its""".split()
)

EXTERNAL_TIMEOUT_SECONDS = 30.0


class ChatTurn(BaseModel):
    model_config = ConfigDict(extra="forbid")

    role: Literal["user", "assistant"]
    content: str = Field(min_length=1)


class ContextItem(BaseModel):
    model_config = ConfigDict(extra="forbid")

    id: str
    text: str


class CompletionRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    model: str
    messages: list[ChatTurn]
    context: list[ContextItem] = Field(default_factory=list)


class CompletionResponse(BaseModel):
    model: str
    message: ChatTurn


def query_terms(message: str) -> set[str]:
    return {t for t in tokenize(message) if t not in STOPWORDS}


def demo_generate(messages: list[ChatTurn], context: list[ContextItem]) -> str:
    """Deterministic extractive answer: the sentence sharing the most query
    terms with the last user message, plus its successor in the same text."""
    last_user = next((m for m in reversed(messages) if m.role == "user"), None)
    if last_user is None:
        return FALLBACK_ANSWER
    terms = query_terms(last_user.content)
    best_score = 0
    best: Optional[tuple[int, int]] = None
    sentence_lists = [split_sentences(item.text) for item in context]
    for ci, sentences in enumerate(sentence_lists):
        for si, sentence in enumerate(sentences):
            score = len(terms & set(tokenize(sentence)))
            if score > best_score:
                best_score = score
                best = (ci, si)
    if best is None or best_score == 0:
        return FALLBACK_ANSWER
    ci, si = best
    sentences = sentence_lists[ci]
    answer = sentences[si].strip()
    if si + 1 < len(sentences):
        answer += " " + sentences[si + 1].strip()
    return ANSWER_PREFIX + answer


@dataclass(frozen=True)
class ModelDescriptor:
    id: str
    kind: str  # "demo" | "external"
    display_name: str


@dataclass
class ExternalProvider:
    id: str
    url: str
    api_key: str = ""
    display_name: str = ""


@dataclass
class GatewayConfig:
    allow_list: Optional[set[str]] = None
    external: list[ExternalProvider] = field(default_factory=list)
    request_log: Optional[Path] = None

    @classmethod
    def from_file(cls, path: Path) -> "GatewayConfig":
        raw = json.loads(Path(path).read_text("utf-8"))
        allow = raw.get("allow_list")
        external = [
            ExternalProvider(
                id=e["id"],
                url=e["url"],
                api_key=e.get("api_key", ""),
                display_name=e.get("display_name", e["id"]),
            )
            for e in raw.get("external", [])
        ]
        return cls(allow_list=set(allow) if allow is not None else None, external=external)


class GatewayError(Exception):
    pass


class UnknownModel(GatewayError):
    pass


class Forbidden(GatewayError):
    pass


class GatewayService:
    def __init__(self, config: Optional[GatewayConfig] = None, http: Optional[httpx.Client] = None):
        self.config = config or GatewayConfig()
        self._http = http or httpx.Client(timeout=EXTERNAL_TIMEOUT_SECONDS)
        self._log_lock = threading.Lock()

    def list_models(self) -> list[ModelDescriptor]:
        models = [
            ModelDescriptor("demo-rag", "demo", "Demo extractive model (uses context)"),
            ModelDescriptor("demo-plain", "demo", "Demo extractive model"),
        ]
        for provider in self.config.external:
            models.append(ModelDescriptor(provider.id, "external", provider.display_name or provider.id))
        return models

    def log_request(self, body: bytes) -> None:
        if self.config.request_log is None:
            return
        line = json.dumps({"ts": time.time(), "body": body.decode("utf-8", "replace")})
        with self._log_lock:
            path = Path(self.config.request_log)
            path.parent.mkdir(parents=True, exist_ok=True)
            with path.open("a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def generate(self, req: CompletionRequest, requester: Iri) -> CompletionResponse:
        if self.config.allow_list is not None and requester.value not in self.config.allow_list:
            raise Forbidden(f"{requester} is not on the allow list")
        descriptor = next((m for m in self.list_models() if m.id == req.model), None)
        if descriptor is None:
            raise UnknownModel(f"unknown model {req.model!r}")
        if descriptor.kind == "demo":
            content = demo_generate(req.messages, req.context)
        else:
            content = self._external(req, descriptor)
        return CompletionResponse(model=req.model, message=ChatTurn(role="assistant", content=content))

    def _external(self, req: CompletionRequest, descriptor: ModelDescriptor) -> str:
        provider = next(p for p in self.config.external if p.id == descriptor.id)
        headers = {}
        if provider.api_key:
            headers["Authorization"] = f"Bearer {provider.api_key}"
        payload = {
            "model": provider.id,
            "messages": [m.model_dump() for m in req.messages],
            "context": [c.model_dump() for c in req.context],
        }
        try:
            resp = self._http.post(provider.url, json=payload, headers=headers)
            resp.raise_for_status()
            return resp.json()["message"]["content"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise UpstreamError(f"external provider {provider.id} failed: {exc}") from exc


def create_gateway_app(service: GatewayService, verifier: TokenVerifier) -> FastAPI:
    app = FastAPI(title="genpod model gateway")

    def error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse({"error": code, "detail": message}, status_code=status)

    @app.exception_handler(RequestValidationError)
    def on_validation_error(request: Request, exc: RequestValidationError):
        return error(400, "bad_request", str(exc.errors()))

    @app.get("/health")
    def health():
        return {"status": "ok", "service": "gateway"}

    @app.get("/models")
    def models():
        return {"models": [{"id": m.id, "kind": m.kind, "display_name": m.display_name} for m in service.list_models()]}

    @app.post("/chat")
    async def chat(request: Request):
        raw = await request.body()
        service.log_request(raw)
        header = request.headers.get("authorization", "")
        scheme, _, credential = header.partition(" ")
        if scheme.lower() != "bearer" or not credential:
            return error(401, "unauthenticated", "bearer token required")
        try:
            claims = verifier.verify(credential)
        except TokenInvalid as exc:
            return error(401, "unauthenticated", str(exc))
        except UpstreamError as exc:
            return error(401, "unauthenticated", f"token could not be validated: {exc}")
        try:
            body = CompletionRequest.model_validate_json(raw)
        except ValueError as exc:
            return error(400, "bad_request", str(exc))
        try:
            result = service.generate(body, claims.webid)
        except UnknownModel as exc:
            return error(404, "unknown_model", str(exc))
        except Forbidden as exc:
            return error(403, "forbidden", str(exc))
        except UpstreamError as exc:
            return error(502, "upstream", str(exc))
        return result.model_dump()

    return app
