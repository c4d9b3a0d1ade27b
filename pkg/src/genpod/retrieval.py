"""Retrieval service: fetch permitted documents, chunk, and rank.

Ranking is Okapi BM25 (k1=1.2, b=0.75) or cosine over hashed bag-of-words
embeddings. The service holds no state across requests: corpus statistics are
recomputed per request over the documents it is allowed to read, and a
requester must be the pod owner or on the owner's trust list.
"""

from __future__ import annotations

import math
import re
import threading
import time
from dataclasses import dataclass
from typing import Optional

import httpx
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict, Field

from .identity import InvalidCredentials, TokenInvalid, TokenVerifier, UpstreamError, decode_token
from .podclient import PodClient, PodError, PodUnreachable
from .rdf import Graph, Iri, TurtleSyntaxError, parse_turtle
from .wac import ACL_AGENT

DEFAULT_MAX_CHUNK_CHARS = 800
DEFAULT_K = 4
BM25_K1 = 1.2
BM25_B = 0.75
EMBEDDING_DIM = 256
INDEXED_MEDIA_TYPES = ("text/plain", "text/turtle")
TRUST_LIST_PATH = "genpod/assistant-access.ttl"

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop tokens shorter than 3 chars."""
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= 3]


def split_sentences(text: str) -> list[str]:
    """Pieces whose concatenation reproduces ``text`` exactly.

    A boundary is '.', '!' or '?' followed by whitespace; the whitespace run
    stays with the sentence it terminates.
    """
    out: list[str] = []
    start = 0
    i = 0
    n = len(text)
    while i < n:
        if text[i] in ".!?" and i + 1 < n and text[i + 1].isspace():
            j = i + 1
            while j < n and text[j].isspace():
                j += 1
            out.append(text[start:j])
            start = j
            i = j
        else:
            i += 1
    if start < n:
        out.append(text[start:])
    return out


@dataclass(frozen=True)
class DocumentChunk:
    id: str
    source: Iri
    index: int
    text: str


def chunk_document(
    text: str, source: Iri, max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS
) -> list[DocumentChunk]:
    """Greedy zero-overlap chunking at sentence boundaries.

    A chunk closes when adding the next sentence would exceed the limit; a
    single over-long sentence is hard-split at the limit.
    """
    if max_chunk_chars < 1:
        raise ValueError("max_chunk_chars must be >= 1")
    pieces: list[str] = []
    for sentence in split_sentences(text):
        while len(sentence) > max_chunk_chars:
            pieces.append(sentence[:max_chunk_chars])
            sentence = sentence[max_chunk_chars:]
        if sentence:
            pieces.append(sentence)
    chunks: list[str] = []
    buf = ""
    for piece in pieces:
        if buf and len(buf) + len(piece) > max_chunk_chars:
            chunks.append(buf)
            buf = ""
        buf += piece
    if buf:
        chunks.append(buf)
    return [
        DocumentChunk(id=f"{source.value}#chunk-{i}", source=source, index=i, text=chunk)
        for i, chunk in enumerate(chunks)
    ]


@dataclass
class CorpusStats:
    n_chunks: int
    avgdl: float
    df: dict[str, int]

    @classmethod
    def from_chunks(cls, chunks: list[DocumentChunk]) -> "CorpusStats":
        df: dict[str, int] = {}
        total = 0
        for chunk in chunks:
            tokens = tokenize(chunk.text)
            total += len(tokens)
            for term in set(tokens):
                df[term] = df.get(term, 0) + 1
        n = len(chunks)
        return cls(n_chunks=n, avgdl=(total / n if n else 0.0), df=df)


def bm25_score(
    query_terms: list[str],
    chunk: DocumentChunk,
    stats: CorpusStats,
    k1: float = BM25_K1,
    b: float = BM25_B,
) -> float:
    tokens = tokenize(chunk.text)
    dl = len(tokens)
    if dl == 0 or stats.avgdl <= 0:
        return 0.0
    counts: dict[str, int] = {}
    for t in tokens:
        counts[t] = counts.get(t, 0) + 1
    score = 0.0
    for term in set(query_terms):
        f = counts.get(term, 0)
        if f == 0:
            continue
        df = stats.df.get(term, 0)
        idf = math.log((stats.n_chunks - df + 0.5) / (df + 0.5) + 1.0)
        score += idf * (f * (k1 + 1.0)) / (f + k1 * (1.0 - b + b * dl / stats.avgdl))
    return score


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a; fixed across platforms."""
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


def hashed_embedding(text: str, dim: int = EMBEDDING_DIM) -> list[float]:
    """Signed feature-hashing embedding, L2-normalized; all-zero for no tokens."""
    if dim < 2:
        raise ValueError("dim must be >= 2")
    vec = [0.0] * dim
    for token in tokenize(text):
        h = fnv1a64(token.encode("utf-8"))
        bucket = h % dim
        sign = 1.0 if ((h // dim) & 1) == 0 else -1.0
        vec[bucket] += sign
    norm = math.sqrt(sum(v * v for v in vec))
    if norm == 0.0:
        return vec
    return [v / norm for v in vec]


def cosine(a: list[float], b: list[float]) -> float:
    norm_a = math.sqrt(sum(v * v for v in a))
    norm_b = math.sqrt(sum(v * v for v in b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return sum(x * y for x, y in zip(a, b)) / (norm_a * norm_b)


@dataclass(frozen=True)
class ScoredChunk:
    chunk: DocumentChunk
    score: float


def rank_chunks(
    query: str, chunks: list[DocumentChunk], method: str, k: int
) -> list[ScoredChunk]:
    """Top-k by score under the (score desc, id asc) tie-break.

    bm25 drops zero-score chunks; embedding keeps top-k regardless (cosine is
    clamped at zero so scores stay non-negative).
    """
    if method == "bm25":
        stats = CorpusStats.from_chunks(chunks)
        terms = tokenize(query)
        scored = [ScoredChunk(c, bm25_score(terms, c, stats)) for c in chunks]
        scored = [s for s in scored if s.score > 0.0]
    elif method == "embedding":
        qvec = hashed_embedding(query)
        scored = [
            ScoredChunk(c, max(0.0, cosine(qvec, hashed_embedding(c.text)))) for c in chunks
        ]
    else:
        raise ValueError(f"unknown ranking method {method!r}")
    scored.sort(key=lambda s: (-s.score, s.chunk.id))
    return scored[: max(k, 0)]


# ---------------------------------------------------------------------------
# Service
# ---------------------------------------------------------------------------


class RetrievalError(Exception):
    pass


class Unauthenticated(RetrievalError):
    pass


class PermissionDenied(RetrievalError):
    """Requester is neither the pod owner nor on the owner's trust list."""


class SourceUnreadable(RetrievalError):
    """The service's own read grant on the source container is missing."""


@dataclass(frozen=True)
class TrustList:
    owner: Iri
    allowed: frozenset


def parse_trust_list(g: Graph, owner: Iri) -> TrustList:
    allowed = {t.object for t in g.match(None, ACL_AGENT, None) if isinstance(t.object, Iri)}
    return TrustList(owner=owner, allowed=frozenset(allowed))


def pod_root_of(resource: Iri) -> Iri:
    from urllib.parse import urlsplit

    parts = urlsplit(resource.value)
    segments = [s for s in parts.path.split("/") if s]
    if not segments:
        raise ValueError(f"resource {resource} is not inside a pod")
    return Iri(f"{parts.scheme}://{parts.netloc}/{segments[0]}/")


def owner_webid_of(pod_root: Iri) -> Iri:
    return Iri(pod_root.value + "profile/card#me")


class ServiceCredentials:
    """Lazy login against the identity provider; refreshes near expiry."""

    def __init__(self, idp_url: str, username: str, password: str, http: Optional[httpx.Client] = None):
        self.idp_url = idp_url.rstrip("/")
        self.username = username
        self.password = password
        self._http = http or httpx.Client(timeout=10.0)
        self._token: Optional[str] = None
        self._expires: float = 0.0
        self._lock = threading.Lock()

    def token(self) -> str:
        with self._lock:
            if self._token is not None and time.time() < self._expires - 60:
                return self._token
            try:
                resp = self._http.post(
                    self.idp_url + "/login",
                    json={"username": self.username, "password": self.password},
                )
            except httpx.HTTPError as exc:
                raise UpstreamError(f"identity provider unreachable: {exc}") from exc
            if resp.status_code == 401:
                raise InvalidCredentials("service credentials rejected")
            if resp.status_code != 200:
                raise UpstreamError(f"login failed: {resp.status_code} {resp.text}")
            self._token = resp.json()["token"]
            self._expires = float(decode_token(self._token).claims.exp)
            return self._token


class RetrievalService:
    def __init__(self, credentials: ServiceCredentials, http: Optional[httpx.Client] = None):
        self.credentials = credentials
        self._http = http or httpx.Client(timeout=15.0)

    def _pod(self) -> PodClient:
        return PodClient(token=self.credentials.token(), http=self._http)

    def models(self) -> list[dict]:
        return [{"id": "bm25"}, {"id": "embedding"}]

    def retrieve(
        self,
        requester: Iri,
        query: str,
        source: Iri,
        k: int = DEFAULT_K,
        method: str = "bm25",
        max_chunk_chars: int = DEFAULT_MAX_CHUNK_CHARS,
    ) -> list[ScoredChunk]:
        if not source.value.endswith("/"):
            raise ValueError("source must be a container IRI (ending in '/')")
        pod_root = pod_root_of(source)
        owner = owner_webid_of(pod_root)
        if requester != owner:
            trust = self._trust_list(pod_root, owner)
            if requester not in trust.allowed:
                raise PermissionDenied(f"{requester} is not delegated by {owner}")
        pod = self._pod()
        try:
            members = pod.list_container(source)
        except (PodError, TurtleSyntaxError) as exc:
            raise SourceUnreadable(f"service cannot list {source}: {exc}") from exc
        except PodUnreachable as exc:
            raise UpstreamError(str(exc)) from exc
        chunks: list[DocumentChunk] = []
        for member in members:
            if member.value.endswith("/"):
                continue
            try:
                found = pod.try_get(member)
            except PodUnreachable as exc:
                raise UpstreamError(str(exc)) from exc
            except PodError:
                continue
            if found is None:
                continue
            content_type = found[0].split(";")[0].strip().lower()
            if content_type not in INDEXED_MEDIA_TYPES:
                continue
            try:
                text = found[1].decode("utf-8")
            except UnicodeDecodeError:
                continue
            chunks.extend(chunk_document(text, member, max_chunk_chars))
        return rank_chunks(query, chunks, method, k)

    def _trust_list(self, pod_root: Iri, owner: Iri) -> TrustList:
        trust_iri = Iri(pod_root.value + TRUST_LIST_PATH)
        try:
            found = self._pod().try_get(trust_iri)
        except (PodError, PodUnreachable) as exc:
            raise UpstreamError(f"cannot read trust list: {exc}") from exc
        if found is None:
            return TrustList(owner=owner, allowed=frozenset())
        try:
            g = parse_turtle(found[1].decode("utf-8"), trust_iri)
        except (TurtleSyntaxError, UnicodeDecodeError):
            return TrustList(owner=owner, allowed=frozenset())
        return parse_trust_list(g, owner)


# ---------------------------------------------------------------------------
# HTTP surface
# ---------------------------------------------------------------------------


class RetrieveRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    query: str
    source: str
    k: int = Field(default=DEFAULT_K, ge=0)
    method: str = "bm25"


def create_retrieval_app(service: RetrievalService, verifier: TokenVerifier) -> FastAPI:
    app = FastAPI(title="genpod retrieval service")

    def error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse({"error": code, "detail": message}, status_code=status)

    @app.get("/health")
    def health():
        return {"status": "ok", "service": "retrieval"}

    @app.get("/models")
    def models():
        return {"models": service.models()}

    @app.post("/retrieve")
    def retrieve(body: RetrieveRequest, request: Request):
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
            results = service.retrieve(
                requester=claims.webid,
                query=body.query,
                source=Iri(body.source),
                k=body.k,
                method=body.method,
            )
        except ValueError as exc:
            return error(400, "bad_request", str(exc))
        except PermissionDenied as exc:
            return error(403, "not_delegated", str(exc))
        except SourceUnreadable as exc:
            return error(403, "source_unreadable", str(exc))
        except (UpstreamError, InvalidCredentials) as exc:
            return error(502, "upstream", str(exc))
        return {
            "chunks": [
                {
                    "id": s.chunk.id,
                    "source": s.chunk.source.value,
                    "text": s.chunk.text,
                    "score": s.score,
                }
                for s in results
            ]
        }

    return app
