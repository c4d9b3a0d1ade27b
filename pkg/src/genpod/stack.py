"""Assembles the five services and runs them as in-process uvicorn servers.

Used by the CLI's ``serve`` command and by the test harness; sockets are
bound before the apps are built so URLs are known even with ephemeral ports.
"""

from __future__ import annotations

import secrets
import socket
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import httpx
import uvicorn
from fastapi import FastAPI

from .gateway import GatewayConfig, GatewayService, create_gateway_app
from .identity import IdentityProvider, PodProvisioner, TokenVerifier, create_idp_app
from .orchestrator import OrchestratorService, OrchestratorSettings, create_orchestrator_app
from .podserver import PodServerConfig, create_pod_app
from .retrieval import RetrievalService, ServiceCredentials, create_retrieval_app

COMPONENTS = ("idp", "pod", "retrieval", "gateway", "chat")
DEFAULT_PORTS = {"idp": 7000, "pod": 7001, "retrieval": 7002, "gateway": 7003, "chat": 7004}


class BindError(Exception):
    pass


def bind_socket(host: str, port: int) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((host, port))
    except OSError as exc:
        sock.close()
        raise BindError(f"cannot bind {host}:{port}: {exc}") from exc
    sock.listen(128)
    return sock


def load_admin_secret(data_dir: Path) -> str:
    path = Path(data_dir) / "admin-secret"
    if path.exists():
        return path.read_text("utf-8").strip()
    path.parent.mkdir(parents=True, exist_ok=True)
    secret = secrets.token_hex(16)
    path.write_text(secret + "\n", "utf-8")
    return secret


@dataclass
class StackSettings:
    data_dir: Path
    host: str = "127.0.0.1"
    ports: dict = field(default_factory=lambda: dict(DEFAULT_PORTS))
    admin_secret: Optional[str] = None
    svc_username: str = "retrieval-svc"
    svc_password: str = "retrieval-svc-pass"
    gateway_config_file: Optional[Path] = None
    gateway_log: Optional[Path] = None
    pod_origin_override: Optional[str] = None
    # Cross-process deployments point components at externally served peers.
    url_overrides: dict = field(default_factory=dict)

    def url(self, component: str) -> str:
        if component in self.url_overrides:
            return self.url_overrides[component].rstrip("/")
        return f"http://{self.host}:{self.ports[component]}"

    def resolved_admin_secret(self) -> str:
        if self.admin_secret:
            return self.admin_secret
        return load_admin_secret(Path(self.data_dir))


def build_app(component: str, settings: StackSettings) -> FastAPI:
    data_dir = Path(settings.data_dir)
    if component == "idp":
        provider = IdentityProvider(
            issuer=settings.url("idp"),
            provisioner=PodProvisioner(settings.url("pod"), settings.resolved_admin_secret()),
            state_dir=data_dir / "idp",
        )
        return create_idp_app(provider)
    if component == "pod":
        config = PodServerConfig(
            base_url=settings.url("pod"),
            data_dir=data_dir / "pods",
            idp_url=settings.url("idp"),
            admin_secret=settings.resolved_admin_secret(),
        )
        return create_pod_app(config)
    if component == "retrieval":
        credentials = ServiceCredentials(settings.url("idp"), settings.svc_username, settings.svc_password)
        return create_retrieval_app(RetrievalService(credentials), TokenVerifier(settings.url("idp")))
    if component == "gateway":
        if settings.gateway_config_file:
            config = GatewayConfig.from_file(Path(settings.gateway_config_file))
        else:
            config = GatewayConfig()
        config.request_log = Path(settings.gateway_log) if settings.gateway_log else data_dir / "gateway-requests.log"
        return create_gateway_app(GatewayService(config), TokenVerifier(settings.url("idp")))
    if component == "chat":
        service = OrchestratorService(
            OrchestratorSettings(
                idp_url=settings.url("idp"),
                retrieval_url_default=settings.url("retrieval"),
                gateway_url_default=settings.url("gateway"),
                pod_origin_override=settings.pod_origin_override,
            )
        )
        return create_orchestrator_app(service)
    raise ValueError(f"unknown component {component!r}")


class ServerHandle:
    """One uvicorn server on a pre-bound socket, running in a daemon thread."""

    def __init__(self, component: str, app: FastAPI, sock: socket.socket, host: str):
        self.component = component
        self.host = host
        self.port = sock.getsockname()[1]
        self._sock = sock
        config = uvicorn.Config(app, log_level="warning", access_log=False)
        self._server = uvicorn.Server(config)
        self._thread = threading.Thread(
            target=self._server.run, kwargs={"sockets": [sock]}, daemon=True, name=f"genpod-{component}"
        )

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> None:
        self._thread.start()

    def stop(self, timeout: float = 10.0) -> None:
        self._server.should_exit = True
        self._thread.join(timeout)
        try:
            self._sock.close()
        except OSError:
            pass

    def wait_healthy(self, timeout: float = 15.0) -> None:
        deadline = time.time() + timeout
        url = self.base_url + "/health"
        while time.time() < deadline:
            try:
                if httpx.get(url, timeout=2.0).status_code == 200:
                    return
            except httpx.HTTPError:
                pass
            time.sleep(0.05)
        raise TimeoutError(f"{self.component} did not become healthy at {url}")


def start_component(component: str, settings: StackSettings) -> ServerHandle:
    sock = bind_socket(settings.host, settings.ports[component])
    settings.ports[component] = sock.getsockname()[1]
    handle = ServerHandle(component, build_app(component, settings), sock, settings.host)
    handle.start()
    return handle


def start_stack(settings: StackSettings, components: tuple = COMPONENTS) -> list[ServerHandle]:
    """Bind every socket first (so peer URLs resolve), then start the apps."""
    sockets = {}
    try:
        for component in components:
            sockets[component] = bind_socket(settings.host, settings.ports[component])
            settings.ports[component] = sockets[component].getsockname()[1]
    except BindError:
        for sock in sockets.values():
            sock.close()
        raise
    handles = []
    for component in components:
        handle = ServerHandle(component, build_app(component, settings), sockets[component], settings.host)
        handle.start()
        handles.append(handle)
    for handle in handles:
        handle.wait_healthy()
    return handles


def stop_stack(handles: list[ServerHandle]) -> None:
    for handle in handles:
        handle.stop()
