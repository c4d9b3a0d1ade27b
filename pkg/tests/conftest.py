import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import httpx
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from genpod import fixture as fixture_mod
from genpod.rdf import Graph, Iri, TurtleSyntaxError, parse_turtle
from genpod.stack import COMPONENTS, StackSettings, start_stack, stop_stack


class DictAclSource:
    """In-memory wac.AclSource over {iri string: turtle text}."""

    def __init__(self, docs: dict[str, str]):
        self.docs = docs

    def get_acl(self, doc: Iri) -> Optional[Graph]:
        text = self.docs.get(doc.value)
        if text is None:
            return None
        try:
            return parse_turtle(text, doc)
        except TurtleSyntaxError:
            return Graph()


@dataclass
class Stack:
    settings: StackSettings
    handles: list
    http: httpx.Client = field(default_factory=lambda: httpx.Client(timeout=30.0))

    def url(self, component: str) -> str:
        return self.settings.url(component)

    def login(self, username: str, password: str) -> tuple[str, str]:
        resp = self.http.post(
            self.url("idp") + "/login", json={"username": username, "password": password}
        )
        assert resp.status_code == 200, resp.text
        payload = resp.json()
        return payload["token"], payload["webid"]

    def auth(self, token: str) -> dict:
        return {"Authorization": f"Bearer {token}"}

    def seed(self) -> None:
        fixture_mod.seed_alice_bob(
            idp_url=self.url("idp"),
            pod_url=self.url("pod"),
            retrieval_url=self.url("retrieval"),
            gateway_url=self.url("gateway"),
            http=self.http,
        )

    def stop(self) -> None:
        stop_stack(self.handles)


def launch_stack(data_dir: Path, seed: bool = True, **settings_kw) -> Stack:
    settings = StackSettings(data_dir=data_dir, ports={c: 0 for c in COMPONENTS}, **settings_kw)
    handles = start_stack(settings)
    stack = Stack(settings=settings, handles=handles)
    if seed:
        stack.seed()
    return stack


@pytest.fixture(scope="session")
def live_stack(tmp_path_factory):
    """One seeded stack shared by read-mostly tests."""
    stack = launch_stack(tmp_path_factory.mktemp("stack"), seed=True)
    yield stack
    stack.stop()


@pytest.fixture
def make_stack(tmp_path_factory):
    """Factory for tests that mutate or restart services."""
    created: list[Stack] = []

    def factory(seed: bool = True, data_dir: Optional[Path] = None, **kw) -> Stack:
        stack = launch_stack(data_dir or tmp_path_factory.mktemp("fresh"), seed=seed, **kw)
        created.append(stack)
        return stack

    yield factory
    for stack in created:
        stack.stop()
