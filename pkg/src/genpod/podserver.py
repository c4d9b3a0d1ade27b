"""Personal data store: HTTP resource server with WAC enforcement.

Disk layout mirrors the resource hierarchy: containers are directories, a
resource ``name`` is a file ``name`` plus a sidecar ``name.meta`` holding the
media type. ACL documents are ordinary resources named ``{resource}.acl``;
they and the ``.meta`` sidecars never appear in container listings.
"""

from __future__ import annotations

import hmac
import os
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import wac
from .identity import TokenInvalid, TokenVerifier, UpstreamError
from .rdf import LDP_NS, RDF_TYPE, Graph, Iri, Triple, TurtleSyntaxError, parse_turtle, serialize_turtle

LDP_CONTAINS = Iri(LDP_NS + "contains")
LDP_CONTAINER = Iri(LDP_NS + "Container")

_SEGMENT_RE = re.compile(r"[A-Za-z0-9._~-]+")
_TMP_PREFIX = ".tmp-"


class BadPath(Exception):
    """Path cannot name a resource (traversal, reserved names, bad characters)."""


class NotEmpty(Exception):
    pass


class IsContainer(Exception):
    pass


class ParentConflict(Exception):
    """An intermediate path element exists as a plain resource."""


def _check_segments(path: str) -> list[str]:
    if path.startswith("/"):
        raise BadPath(path)
    segments = path.split("/")
    names = segments[:-1] if segments[-1] == "" else segments
    if not names:
        raise BadPath(path)
    for name in names:
        if not name or not _SEGMENT_RE.fullmatch(name) or name in (".", ".."):
            raise BadPath(path)
        if name.endswith(".meta") or name.startswith(_TMP_PREFIX):
            raise BadPath(path)
    return names


class PodStore:
    """Filesystem-backed resource store; paths are server-relative strings
    ("alice/notes/x.txt", containers end with "/")."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock(self, path: str) -> threading.Lock:
        with self._locks_guard:
            lock = self._locks.get(path)
            if lock is None:
                lock = self._locks[path] = threading.Lock()
            return lock

    def _fspath(self, path: str) -> Path:
        names = _check_segments(path)
        fspath = self.root.joinpath(*names)
        if not fspath.resolve().is_relative_to(self.root.resolve()):
            raise BadPath(path)
        return fspath

    # -- queries -------------------------------------------------------------

    def is_container(self, path: str) -> bool:
        return self._fspath(path).is_dir()

    def exists(self, path: str) -> bool:
        fspath = self._fspath(path)
        if path.endswith("/"):
            return fspath.is_dir()
        return fspath.is_file()

    def get_resource(self, path: str) -> Optional[tuple[str, bytes]]:
        fspath = self._fspath(path)
        if path.endswith("/") or not fspath.is_file():
            return None
        with self._lock(path):
            data = fspath.read_bytes()
            meta = fspath.with_name(fspath.name + ".meta")
            content_type = "application/octet-stream"
            if meta.is_file():
                content_type = meta.read_text("utf-8").strip() or content_type
        return content_type, data

    def list_members(self, container: str) -> list[str]:
        """Direct members, sorted; auxiliary resources (.acl, .meta) are hidden."""
        fspath = self._fspath(container)
        members = []
        for entry in sorted(os.listdir(fspath)):
            if entry.endswith(".meta") or entry.endswith(".acl") or entry.startswith(_TMP_PREFIX):
                continue
            members.append(container + entry + ("/" if (fspath / entry).is_dir() else ""))
        return members

    # -- mutations -----------------------------------------------------------

    def _write_atomic(self, fspath: Path, data: bytes) -> None:
        tmp = fspath.with_name(_TMP_PREFIX + fspath.name + f".{os.getpid()}.{threading.get_ident()}")
        tmp.write_bytes(data)
        os.replace(tmp, fspath)

    def put(self, path: str, content_type: str, data: bytes) -> str:
        if path.endswith("/"):
            raise IsContainer(path)
        names = _check_segments(path)
        fspath = self._fspath(path)
        if fspath.is_dir():
            raise IsContainer(path)
        ancestor = self.root
        for name in names[:-1]:
            ancestor = ancestor / name
            if ancestor.is_file():
                raise ParentConflict(str(ancestor))
        with self._lock(path):
            created = not fspath.is_file()
            fspath.parent.mkdir(parents=True, exist_ok=True)
            self._write_atomic(fspath, data)
            self._write_atomic(fspath.with_name(fspath.name + ".meta"), (content_type + "\n").encode("utf-8"))
        return "created" if created else "replaced"

    def post(self, container: str, slug: str, content_type: str, data: bytes) -> str:
        slug = "".join(_SEGMENT_RE.findall(slug)) or "resource"
        if slug.endswith(".meta") or slug.startswith(_TMP_PREFIX) or slug in (".", ".."):
            slug = "resource"
        with self._lock(container):
            candidate = container + slug
            n = 0
            while self.exists(candidate) or self.is_container(candidate + "/"):
                n += 1
                candidate = f"{container}{slug}-{n}"
            self.put(candidate, content_type, data)
        return candidate

    def delete(self, path: str) -> None:
        fspath = self._fspath(path)
        if path.endswith("/"):
            leftovers = [e for e in os.listdir(fspath) if e not in (".acl", ".acl.meta")]
            if leftovers:
                raise NotEmpty(path)
            with self._lock(path):
                for aux in (".acl", ".acl.meta"):
                    auxpath = fspath / aux
                    if auxpath.is_file():
                        auxpath.unlink()
                fspath.rmdir()
        else:
            with self._lock(path):
                fspath.unlink()
                for suffix in (".meta", ".acl", ".acl.meta"):
                    aux = fspath.with_name(fspath.name + suffix)
                    if aux.is_file():
                        aux.unlink()


class StoreAclSource:
    """wac.AclSource over a PodStore; unparseable ACLs act as empty (deny).

    Absent documents are None so inheritance continues past them.
    """

    def __init__(self, store: PodStore, base_url: str):
        self.store = store
        self.base_url = base_url.rstrip("/")

    def iri_to_path(self, iri: Iri) -> Optional[str]:
        prefix = self.base_url + "/"
        if not iri.value.startswith(prefix):
            return None
        return iri.value[len(prefix):]

    def get_acl(self, doc: Iri) -> Optional[Graph]:
        path = self.iri_to_path(doc)
        if path is None:
            return None
        try:
            found = self.store.get_resource(path)
        except BadPath:
            return None
        if found is None:
            return None
        try:
            return parse_turtle(found[1].decode("utf-8"), doc)
        except (TurtleSyntaxError, UnicodeDecodeError):
            return Graph()


@dataclass
class PodServerConfig:
    base_url: str
    data_dir: Path
    idp_url: str
    admin_secret: str


@dataclass
class Agent:
    webid: Optional[Iri]
    is_admin: bool = False


def _media_type(content_type: Optional[str]) -> str:
    if not content_type:
        return "application/octet-stream"
    return content_type.split(";")[0].strip().lower() or "application/octet-stream"


def create_pod_app(config: PodServerConfig, verifier: Optional[TokenVerifier] = None) -> FastAPI:
    store = PodStore(Path(config.data_dir))
    base_url = config.base_url.rstrip("/")
    acl_source = StoreAclSource(store, base_url)
    verifier = verifier or TokenVerifier(config.idp_url)
    app = FastAPI(title="genpod pod server")
    app.state.store = store

    def error(status: int, message: str) -> JSONResponse:
        return JSONResponse({"error": message}, status_code=status)

    def resolve_agent(request: Request) -> Agent | JSONResponse:
        header = request.headers.get("authorization")
        if header is None:
            return Agent(webid=None)
        scheme, _, credential = header.partition(" ")
        if scheme.lower() != "bearer" or not credential:
            return error(401, "authorization header must be 'Bearer <token>'")
        if config.admin_secret and hmac.compare_digest(credential, config.admin_secret):
            return Agent(webid=None, is_admin=True)
        try:
            claims = verifier.verify(credential)
        except TokenInvalid as exc:
            return error(401, f"invalid token: {exc}")
        except UpstreamError as exc:
            return error(401, f"token could not be validated: {exc}")
        return Agent(webid=claims.webid)

    def allowed(agent: Agent, mode: wac.AccessMode, path: str) -> bool:
        if agent.is_admin:
            return True
        resource = Iri(base_url + "/" + path)
        try:
            return wac.decide(agent.webid, mode, resource, acl_source).allowed
        except wac.NoAclError:
            return False

    def container_listing(path: str) -> Response:
        container_iri = Iri(base_url + "/" + path)
        g = Graph([Triple(container_iri, Iri(RDF_TYPE), LDP_CONTAINER)])
        for member in store.list_members(path):
            g.add(Triple(container_iri, LDP_CONTAINS, Iri(base_url + "/" + member)))
        return Response(serialize_turtle(g, {"ldp": LDP_NS}), media_type="text/turtle")

    @app.get("/health")
    def health():
        return {"status": "ok", "service": "pod"}

    @app.get("/{path:path}")
    def get(path: str, request: Request):
        try:
            _check_segments(path)
        except BadPath:
            return error(404, "no such resource")
        agent = resolve_agent(request)
        if isinstance(agent, JSONResponse):
            return agent
        if not allowed(agent, wac.AccessMode.READ, path):
            return error(403, "access denied")
        if path.endswith("/"):
            if not store.is_container(path):
                return error(404, "no such container")
            return container_listing(path)
        found = store.get_resource(path)
        if found is None:
            return error(404, "no such resource")
        content_type, data = found
        return Response(data, media_type=content_type)

    @app.put("/{path:path}")
    async def put(path: str, request: Request):
        try:
            _check_segments(path)
        except BadPath:
            return error(404, "no such resource")
        agent = resolve_agent(request)
        if isinstance(agent, JSONResponse):
            return agent
        if not allowed(agent, wac.AccessMode.WRITE, path):
            return error(403, "access denied")
        data = await request.body()
        content_type = _media_type(request.headers.get("content-type"))
        if path.endswith(".acl"):
            if content_type != "text/turtle":
                return error(415, "ACL documents must be text/turtle")
            try:
                parse_turtle(data.decode("utf-8"), Iri(base_url + "/" + path))
            except (TurtleSyntaxError, UnicodeDecodeError) as exc:
                return error(415, f"ACL document does not parse: {exc}")
        try:
            outcome = store.put(path, content_type, data)
        except IsContainer:
            return error(409, "path names a container")
        except ParentConflict:
            return error(409, "an intermediate path element is not a container")
        if outcome == "created":
            return Response(status_code=201, headers={"Location": base_url + "/" + path})
        return Response(status_code=204)

    @app.post("/{path:path}")
    async def post(path: str, request: Request):
        try:
            _check_segments(path)
        except BadPath:
            return error(404, "no such resource")
        if not path.endswith("/"):
            return error(404, "POST target must be a container")
        agent = resolve_agent(request)
        if isinstance(agent, JSONResponse):
            return agent
        if not (allowed(agent, wac.AccessMode.APPEND, path) or allowed(agent, wac.AccessMode.WRITE, path)):
            return error(403, "access denied")
        if not store.is_container(path):
            return error(404, "no such container")
        data = await request.body()
        content_type = _media_type(request.headers.get("content-type"))
        slug = request.headers.get("slug") or "resource"
        created = store.post(path, slug, content_type, data)
        location = base_url + "/" + created
        return JSONResponse({"created": location}, status_code=201, headers={"Location": location})

    @app.delete("/{path:path}")
    def delete(path: str, request: Request):
        try:
            _check_segments(path)
        except BadPath:
            return error(404, "no such resource")
        agent = resolve_agent(request)
        if isinstance(agent, JSONResponse):
            return agent
        if not allowed(agent, wac.AccessMode.WRITE, path):
            return error(403, "access denied")
        if not store.exists(path):
            return error(404, "no such resource")
        try:
            store.delete(path)
        except NotEmpty:
            return error(409, "container is not empty")
        return Response(status_code=204)

    return app
