"""Identity provider issuing WebID-bound signed bearer tokens.

Deliberately simpler than Solid-OIDC: accounts live with the provider, tokens
are Ed25519-signed bearer tokens in a compact three-segment wire format, and
every service verifies them against the provider's published key set. One
identity mechanism covers humans and service agents alike.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import json
import os
import secrets
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional

import httpx
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from fastapi import FastAPI
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .rdf import FOAF_NS, PIM_NS, RDF_TYPE, Graph, Iri, Literal, Triple, serialize_turtle
from .wac import bootstrap_acl_documents

DEFAULT_TTL_SECONDS = 3600
CLOCK_SKEW_SECONDS = 30
TOKEN_ALG = "Ed25519"

_PBKDF2_ITERATIONS = 20_000


class IdentityError(Exception):
    pass


class Conflict(IdentityError):
    """Username already taken."""


class InvalidCredentials(IdentityError):
    """Uniform failure for unknown user or wrong password."""


class UpstreamError(IdentityError):
    """The pod server (or identity provider) could not be reached."""


class TokenInvalid(IdentityError):
    """Base class for token verification failures."""


class MalformedToken(TokenInvalid):
    pass


class BadSignature(TokenInvalid):
    pass


class TokenExpired(TokenInvalid):
    pass


class UnknownKey(TokenInvalid):
    pass


def _b64url_encode(data: bytes) -> str:
    return base64.urlsafe_b64encode(data).decode("ascii").rstrip("=")


def _b64url_decode(segment: str) -> bytes:
    pad = "=" * (-len(segment) % 4)
    try:
        return base64.urlsafe_b64decode(segment + pad)
    except Exception as exc:
        raise MalformedToken(f"bad base64url segment: {exc}") from exc


def _canonical_json(obj: dict) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


@dataclass(frozen=True)
class TokenClaims:
    webid: Iri
    iss: Iri
    iat: int
    exp: int

    def as_dict(self) -> dict:
        return {"webid": self.webid.value, "iss": self.iss.value, "iat": self.iat, "exp": self.exp}


@dataclass(frozen=True)
class SignedToken:
    header: dict
    claims: TokenClaims
    signature: bytes
    signing_input: bytes

    def compact(self) -> str:
        return self.signing_input.decode("ascii") + "." + _b64url_encode(self.signature)


def decode_token(compact: str) -> SignedToken:
    """Parse the compact wire format; raises MalformedToken on any defect."""
    if not isinstance(compact, str):
        raise MalformedToken("token must be a string")
    parts = compact.split(".")
    if len(parts) != 3:
        raise MalformedToken("token must have exactly three segments")
    raw_header, raw_claims, raw_sig = parts
    try:
        header = json.loads(_b64url_decode(raw_header))
        claims_dict = json.loads(_b64url_decode(raw_claims))
    except (ValueError, UnicodeDecodeError) as exc:
        raise MalformedToken(f"undecodable token segment: {exc}") from exc
    if not isinstance(header, dict) or not isinstance(claims_dict, dict):
        raise MalformedToken("header and claims must be JSON objects")
    if not isinstance(header.get("alg"), str) or not isinstance(header.get("kid"), str):
        raise MalformedToken("header must carry string alg and kid")
    try:
        claims = TokenClaims(
            webid=Iri(claims_dict["webid"]),
            iss=Iri(claims_dict["iss"]),
            iat=int(claims_dict["iat"]),
            exp=int(claims_dict["exp"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedToken(f"bad claims: {exc}") from exc
    if claims.exp <= claims.iat:
        raise MalformedToken("exp must be greater than iat")
    signature = _b64url_decode(raw_sig)
    signing_input = (raw_header + "." + raw_claims).encode("ascii")
    return SignedToken(header, claims, signature, signing_input)


def verify_token(
    token: SignedToken | str,
    keys: Mapping[str, bytes],
    now: Optional[int] = None,
) -> TokenClaims:
    """Claims iff the signature verifies under the kid's key and the token is live.

    ``keys`` maps kid to raw Ed25519 public key bytes. Clock skew tolerance
    loosens only the not-before bound: ``iat - skew <= now < exp``.
    """
    if isinstance(token, str):
        token = decode_token(token)
    if now is None:
        now = int(time.time())
    kid = token.header["kid"]
    if kid not in keys:
        raise UnknownKey(f"no published key with kid {kid!r}")
    if token.header["alg"] != TOKEN_ALG:
        raise BadSignature(f"unsupported alg {token.header['alg']!r}")
    public = Ed25519PublicKey.from_public_bytes(keys[kid])
    try:
        public.verify(token.signature, token.signing_input)
    except InvalidSignature as exc:
        raise BadSignature("signature does not verify") from exc
    if now < token.claims.iat - CLOCK_SKEW_SECONDS:
        raise TokenExpired("token not valid yet")
    if now >= token.claims.exp:
        raise TokenExpired("token expired")
    return token.claims


@dataclass(frozen=True)
class PublishedKey:
    kid: str
    alg: str
    public_key_base64url: str


@dataclass
class UserAccount:
    username: str
    salt: bytes
    password_hash: bytes
    webid: Iri
    pod_base: Iri


def _hash_password(password: str, salt: bytes) -> bytes:
    return hashlib.pbkdf2_hmac("sha256", password.encode("utf-8"), salt, _PBKDF2_ITERATIONS)


def profile_document(webid: Iri, pod_base: Iri, name: str) -> str:
    g = Graph(
        [
            Triple(webid, Iri(RDF_TYPE), Iri(FOAF_NS + "Person")),
            Triple(webid, Iri(FOAF_NS + "name"), Literal(name)),
            Triple(webid, Iri(PIM_NS + "storage"), pod_base),
        ]
    )
    profile_doc = Iri(webid.value.split("#", 1)[0])
    return serialize_turtle(
        g, {"foaf": FOAF_NS, "pim": PIM_NS}, base=profile_doc, relativize={webid}
    )


class PodProvisioner:
    """Installs a new account's profile document and bootstrap ACLs on the pod
    server, authenticated with the shared admin secret."""

    def __init__(self, pod_url: str, admin_secret: str, http: Optional[httpx.Client] = None):
        self.pod_url = pod_url.rstrip("/")
        self.admin_secret = admin_secret
        self._http = http or httpx.Client(timeout=10.0)

    def provision(self, username: str, webid: Iri, pod_base: Iri) -> None:
        documents: list[tuple[Iri, str, str]] = [
            (Iri(pod_base.value + "profile/card"), "text/turtle", profile_document(webid, pod_base, username)),
        ]
        for doc_iri, body in bootstrap_acl_documents(pod_base, webid).items():
            documents.append((doc_iri, "text/turtle", body))
        for doc_iri, content_type, body in documents:
            try:
                resp = self._http.put(
                    doc_iri.value,
                    content=body.encode("utf-8"),
                    headers={
                        "Content-Type": content_type,
                        "Authorization": f"Bearer {self.admin_secret}",
                    },
                )
            except httpx.HTTPError as exc:
                raise UpstreamError(f"pod server unreachable: {exc}") from exc
            if resp.status_code not in (201, 204):
                raise UpstreamError(f"pod server refused {doc_iri}: {resp.status_code} {resp.text}")


class IdentityProvider:
    """Account store plus signing keys; persists to ``state_dir`` when given."""

    def __init__(
        self,
        issuer: str,
        provisioner: Optional[PodProvisioner] = None,
        state_dir: Optional[Path] = None,
    ):
        self.issuer = Iri(issuer.rstrip("/") + "/")
        self.provisioner = provisioner
        self.state_dir = Path(state_dir) if state_dir else None
        self._lock = threading.Lock()
        self._accounts: dict[str, UserAccount] = {}
        self._keys: list[tuple[str, Ed25519PrivateKey]] = []
        if self.state_dir is not None:
            self.state_dir.mkdir(parents=True, exist_ok=True)
            self._load()
        if not self._keys:
            self._keys.append(self._new_key())
            self._save()

    # -- persistence --------------------------------------------------------

    def _state_file(self) -> Optional[Path]:
        return self.state_dir / "idp-state.json" if self.state_dir else None

    def _load(self) -> None:
        path = self._state_file()
        if path is None or not path.exists():
            return
        state = json.loads(path.read_text("utf-8"))
        for entry in state.get("accounts", []):
            account = UserAccount(
                username=entry["username"],
                salt=bytes.fromhex(entry["salt"]),
                password_hash=bytes.fromhex(entry["password_hash"]),
                webid=Iri(entry["webid"]),
                pod_base=Iri(entry["pod_base"]),
            )
            self._accounts[account.username] = account
        for entry in state.get("keys", []):
            private = Ed25519PrivateKey.from_private_bytes(bytes.fromhex(entry["private_key"]))
            self._keys.append((entry["kid"], private))

    def _save(self) -> None:
        path = self._state_file()
        if path is None:
            return
        state = {
            "accounts": [
                {
                    "username": a.username,
                    "salt": a.salt.hex(),
                    "password_hash": a.password_hash.hex(),
                    "webid": a.webid.value,
                    "pod_base": a.pod_base.value,
                }
                for a in self._accounts.values()
            ],
            "keys": [
                {"kid": kid, "private_key": key.private_bytes_raw().hex()}
                for kid, key in self._keys
            ],
        }
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps(state, indent=2), "utf-8")
        os.replace(tmp, path)

    # -- keys ----------------------------------------------------------------

    @staticmethod
    def _new_key() -> tuple[str, Ed25519PrivateKey]:
        private = Ed25519PrivateKey.generate()
        public_raw = private.public_key().public_bytes_raw()
        kid = hashlib.sha256(public_raw).hexdigest()[:12]
        return kid, private

    def rotate_key(self) -> str:
        """Add a fresh signing key; older keys stay published for verification."""
        with self._lock:
            kid, private = self._new_key()
            self._keys.append((kid, private))
            self._save()
            return kid

    def published_keys(self) -> list[PublishedKey]:
        with self._lock:
            return [
                PublishedKey(kid, TOKEN_ALG, _b64url_encode(key.public_key().public_bytes_raw()))
                for kid, key in self._keys
            ]

    def public_key_map(self) -> dict[str, bytes]:
        with self._lock:
            return {kid: key.public_key().public_bytes_raw() for kid, key in self._keys}

    # -- accounts ------------------------------------------------------------

    def create_account(self, username: str, password: str, pod_base: Iri) -> Iri:
        if not username or not username.replace("-", "").isalnum() or username != username.lower():
            raise ValueError(f"username must be lowercase alphanumeric-with-dashes: {username!r}")
        with self._lock:
            if username in self._accounts:
                raise Conflict(f"username {username!r} already exists")
        if not pod_base.value.endswith("/"):
            pod_base = Iri(pod_base.value + "/")
        webid = Iri(pod_base.value + "profile/card#me")
        if self.provisioner is not None:
            self.provisioner.provision(username, webid, pod_base)
        salt = secrets.token_bytes(16)
        account = UserAccount(username, salt, _hash_password(password, salt), webid, pod_base)
        with self._lock:
            if username in self._accounts:
                raise Conflict(f"username {username!r} already exists")
            self._accounts[username] = account
            self._save()
        return webid

    def authenticate(self, username: str, password: str) -> UserAccount:
        with self._lock:
            account = self._accounts.get(username)
        if account is None:
            # Burn the same work as a real check; the error stays uniform.
            _hash_password(password, b"\x00" * 16)
            raise InvalidCredentials("invalid username or password")
        if not hmac.compare_digest(_hash_password(password, account.salt), account.password_hash):
            raise InvalidCredentials("invalid username or password")
        return account

    def account(self, username: str) -> Optional[UserAccount]:
        with self._lock:
            return self._accounts.get(username)

    # -- tokens ----------------------------------------------------------------

    def issue_token(
        self,
        username: str,
        password: str,
        ttl_seconds: int = DEFAULT_TTL_SECONDS,
        now: Optional[int] = None,
    ) -> SignedToken:
        account = self.authenticate(username, password)
        if now is None:
            now = int(time.time())
        with self._lock:
            kid, private = self._keys[-1]
        header = {"alg": TOKEN_ALG, "kid": kid}
        claims = TokenClaims(webid=account.webid, iss=self.issuer, iat=now, exp=now + ttl_seconds)
        signing_input = (
            _b64url_encode(_canonical_json(header)) + "." + _b64url_encode(_canonical_json(claims.as_dict()))
        ).encode("ascii")
        signature = private.sign(signing_input)
        return SignedToken(header, claims, signature, signing_input)

    def verify(self, token: SignedToken | str, now: Optional[int] = None) -> TokenClaims:
        return verify_token(token, self.public_key_map(), now)


class TokenVerifier:
    """Client-side verification against a provider's published key set.

    Keys are cached; an unknown kid triggers one refetch before failing, so
    rotation needs no restart.
    """

    def __init__(self, idp_url: str, http: Optional[httpx.Client] = None):
        self.idp_url = idp_url.rstrip("/")
        self._http = http or httpx.Client(timeout=10.0)
        self._keys: dict[str, bytes] = {}
        self._lock = threading.Lock()

    def _refresh(self) -> None:
        try:
            resp = self._http.get(self.idp_url + "/keys")
            resp.raise_for_status()
            entries = resp.json()["keys"]
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise UpstreamError(f"cannot fetch keys from {self.idp_url}: {exc}") from exc
        keys = {e["kid"]: _b64url_decode(e["public_key_base64url"]) for e in entries}
        with self._lock:
            self._keys = keys

    def verify(self, compact: str, now: Optional[int] = None) -> TokenClaims:
        token = decode_token(compact)
        kid = token.header["kid"]
        with self._lock:
            known = kid in self._keys
        if not known:
            self._refresh()
        with self._lock:
            keys = dict(self._keys)
        return verify_token(token, keys, now)


# ---------------------------------------------------------------------------
# HTTP surface
# ---------------------------------------------------------------------------


class LoginRequest(BaseModel):
    username: str
    password: str


class RegisterRequest(BaseModel):
    username: str
    password: str
    pod_base: str


def create_idp_app(provider: IdentityProvider) -> FastAPI:
    app = FastAPI(title="genpod identity provider")

    @app.get("/health")
    def health():
        return {"status": "ok", "service": "idp"}

    @app.post("/login")
    def login(body: LoginRequest):
        try:
            token = provider.issue_token(body.username, body.password)
        except InvalidCredentials:
            return JSONResponse({"error": "invalid credentials"}, status_code=401)
        return {"token": token.compact(), "webid": token.claims.webid.value}

    @app.get("/keys")
    def keys():
        return {
            "keys": [
                {"kid": k.kid, "alg": k.alg, "public_key_base64url": k.public_key_base64url}
                for k in provider.published_keys()
            ]
        }

    @app.post("/register", status_code=201)
    def register(body: RegisterRequest):
        try:
            webid = provider.create_account(body.username, body.password, Iri(body.pod_base))
        except Conflict:
            return JSONResponse({"error": "username already exists"}, status_code=409)
        except ValueError as exc:
            return JSONResponse({"error": str(exc)}, status_code=422)
        except UpstreamError as exc:
            return JSONResponse({"error": str(exc)}, status_code=502)
        return {"webid": webid.value}

    return app
