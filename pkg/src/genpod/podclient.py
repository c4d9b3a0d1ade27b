"""Thin HTTP client for talking to pod servers with a bearer token."""

from __future__ import annotations

from typing import Optional

import httpx

from .rdf import LDP_NS, Graph, Iri, parse_turtle

LDP_CONTAINS = Iri(LDP_NS + "contains")


class PodError(Exception):
    def __init__(self, status: int, message: str, iri: str = ""):
        super().__init__(f"{status} on {iri}: {message}" if iri else f"{status}: {message}")
        self.status = status
        self.message = message
        self.iri = iri


class PodUnreachable(Exception):
    pass


class PodClient:
    def __init__(self, token: Optional[str] = None, http: Optional[httpx.Client] = None):
        self.token = token
        self._http = http or httpx.Client(timeout=15.0)

    def _headers(self, extra: Optional[dict] = None) -> dict:
        headers = dict(extra or {})
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def _request(self, method: str, iri: Iri, **kwargs) -> httpx.Response:
        try:
            return self._http.request(method, iri.value, **kwargs)
        except httpx.HTTPError as exc:
            raise PodUnreachable(f"pod server unreachable: {exc}") from exc

    def get(self, iri: Iri) -> tuple[str, bytes]:
        resp = self._request("GET", iri, headers=self._headers())
        if resp.status_code != 200:
            raise PodError(resp.status_code, resp.text, iri.value)
        return resp.headers.get("content-type", "application/octet-stream"), resp.content

    def get_graph(self, iri: Iri) -> Graph:
        content_type, data = self.get(iri)
        return parse_turtle(data.decode("utf-8"), iri)

    def status_get(self, iri: Iri) -> tuple[int, bytes]:
        resp = self._request("GET", iri, headers=self._headers())
        return resp.status_code, resp.content

    def try_get(self, iri: Iri) -> Optional[tuple[str, bytes]]:
        resp = self._request("GET", iri, headers=self._headers())
        if resp.status_code == 200:
            return resp.headers.get("content-type", "application/octet-stream"), resp.content
        if resp.status_code in (403, 404):
            return None
        raise PodError(resp.status_code, resp.text, iri.value)

    def put(self, iri: Iri, content_type: str, data: bytes | str) -> None:
        if isinstance(data, str):
            data = data.encode("utf-8")
        resp = self._request("PUT", iri, content=data, headers=self._headers({"Content-Type": content_type}))
        if resp.status_code not in (201, 204):
            raise PodError(resp.status_code, resp.text, iri.value)

    def post(self, container: Iri, slug: str, content_type: str, data: bytes | str) -> Iri:
        if isinstance(data, str):
            data = data.encode("utf-8")
        resp = self._request(
            "POST", container, content=data, headers=self._headers({"Content-Type": content_type, "Slug": slug})
        )
        if resp.status_code != 201:
            raise PodError(resp.status_code, resp.text, container.value)
        return Iri(resp.headers["Location"])

    def delete(self, iri: Iri) -> None:
        resp = self._request("DELETE", iri, headers=self._headers())
        if resp.status_code not in (204, 404):
            raise PodError(resp.status_code, resp.text, iri.value)

    def list_container(self, container: Iri) -> list[Iri]:
        """Direct members per the ldp:contains listing, sorted."""
        g = self.get_graph(container)
        members = [t.object for t in g.match(container, LDP_CONTAINS, None) if isinstance(t.object, Iri)]
        return sorted(members)
