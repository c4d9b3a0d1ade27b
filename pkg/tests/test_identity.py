"""Identity provider: accounts, token wire format, verification, rotation."""

import base64
import json

import pytest
from fastapi.testclient import TestClient

from genpod.identity import (
    BadSignature,
    Conflict,
    IdentityProvider,
    InvalidCredentials,
    MalformedToken,
    TokenExpired,
    TokenInvalid,
    UnknownKey,
    create_idp_app,
    decode_token,
    verify_token,
)
from genpod.rdf import Iri


@pytest.fixture
def provider(tmp_path):
    return IdentityProvider("http://localhost:7000", provisioner=None, state_dir=tmp_path)


POD = Iri("http://localhost:7001/alice/")


class TestAccounts:
    def test_create_returns_profile_webid(self, provider):
        webid = provider.create_account("alice", "alice-pass", POD)
        assert webid == Iri("http://localhost:7001/alice/profile/card#me")

    def test_duplicate_username_conflict(self, provider):
        provider.create_account("alice", "alice-pass", POD)
        with pytest.raises(Conflict):
            provider.create_account("alice", "other", POD)

    def test_password_not_stored_in_clear(self, provider, tmp_path):
        provider.create_account("alice", "alice-pass", POD)
        state = (tmp_path / "idp-state.json").read_text()
        assert "alice-pass" not in state

    def test_uniform_credential_failure(self, provider):
        provider.create_account("alice", "alice-pass", POD)
        with pytest.raises(InvalidCredentials) as unknown_user:
            provider.authenticate("nobody", "alice-pass")
        with pytest.raises(InvalidCredentials) as wrong_password:
            provider.authenticate("alice", "wrong")
        assert str(unknown_user.value) == str(wrong_password.value)

    def test_state_survives_reload(self, provider, tmp_path):
        provider.create_account("alice", "alice-pass", POD)
        token = provider.issue_token("alice", "alice-pass")
        reloaded = IdentityProvider("http://localhost:7000", provisioner=None, state_dir=tmp_path)
        assert reloaded.verify(token.compact()).webid == Iri("http://localhost:7001/alice/profile/card#me")


class TestTokens:
    def test_issue_verify_round_trip(self, provider):
        provider.create_account("alice", "alice-pass", POD)
        token = provider.issue_token("alice", "alice-pass")
        claims = provider.verify(token.compact())
        assert claims == token.claims
        assert claims.webid == Iri("http://localhost:7001/alice/profile/card#me")

    def test_ttl_arithmetic(self, provider):
        provider.create_account("alice", "alice-pass", POD)
        token = provider.issue_token("alice", "alice-pass", ttl_seconds=3600)
        assert token.claims.exp - token.claims.iat == 3600

    def test_wrong_password_cannot_issue(self, provider):
        provider.create_account("alice", "alice-pass", POD)
        with pytest.raises(InvalidCredentials):
            provider.issue_token("alice", "nope")

    def test_expired_at_exp_boundary(self, provider):
        provider.create_account("alice", "alice-pass", POD)
        token = provider.issue_token("alice", "alice-pass", ttl_seconds=10, now=1000)
        assert provider.verify(token, now=1009).exp == 1010
        with pytest.raises(TokenExpired):
            provider.verify(token, now=1010)
        with pytest.raises(TokenExpired):
            provider.verify(token, now=5000)

    def test_clock_skew_on_not_before_only(self, provider):
        provider.create_account("alice", "alice-pass", POD)
        token = provider.issue_token("alice", "alice-pass", ttl_seconds=60, now=1000)
        # Verifier clock slightly behind the issuer: tolerated up to 30 s.
        assert provider.verify(token, now=980).iat == 1000
        with pytest.raises(TokenExpired):
            provider.verify(token, now=960)

    def test_compact_wire_format(self, provider):
        provider.create_account("alice", "alice-pass", POD)
        token = provider.issue_token("alice", "alice-pass")
        compact = token.compact()
        segments = compact.split(".")
        assert len(segments) == 3
        assert token.signing_input == (segments[0] + "." + segments[1]).encode()

        def unb64(segment):
            return base64.urlsafe_b64decode(segment + "=" * (-len(segment) % 4))

        header = json.loads(unb64(segments[0]))
        claims = json.loads(unb64(segments[1]))
        assert header["alg"] == "Ed25519"
        assert set(claims) == {"webid", "iss", "iat", "exp"}

    def test_tampered_claims_never_verify(self, provider):
        provider.create_account("alice", "alice-pass", POD)
        compact = provider.issue_token("alice", "alice-pass").compact()
        head, claims_seg, sig = compact.split(".")
        raw = base64.urlsafe_b64decode(claims_seg + "=" * (-len(claims_seg) % 4))
        for byte_index in range(len(raw)):
            for bit in range(8):
                flipped = bytearray(raw)
                flipped[byte_index] ^= 1 << bit
                seg = base64.urlsafe_b64encode(bytes(flipped)).decode().rstrip("=")
                with pytest.raises(TokenInvalid):
                    provider.verify(head + "." + seg + "." + sig)

    def test_semantic_tamper_is_bad_signature(self, provider):
        provider.create_account("alice", "alice-pass", POD)
        token = provider.issue_token("alice", "alice-pass")
        head, claims_seg, sig = token.compact().split(".")
        claims = json.loads(base64.urlsafe_b64decode(claims_seg + "=" * (-len(claims_seg) % 4)))
        claims["exp"] += 3600  # extend lifetime without re-signing
        forged = base64.urlsafe_b64encode(
            json.dumps(claims, sort_keys=True, separators=(",", ":")).encode()
        ).decode().rstrip("=")
        with pytest.raises(BadSignature):
            provider.verify(head + "." + forged + "." + sig)

    def test_unknown_kid(self, provider):
        provider.create_account("alice", "alice-pass", POD)
        token = provider.issue_token("alice", "alice-pass")
        with pytest.raises(UnknownKey):
            verify_token(token, {"someotherkid": b"\x00" * 32}, now=token.claims.iat)

    @pytest.mark.parametrize(
        "garbage",
        ["", "a.b", "a.b.c.d", "!!!.???.###", "bm90anNvbg.bm90anNvbg.bm90anNvbg"],
    )
    def test_malformed(self, provider, garbage):
        with pytest.raises(MalformedToken):
            decode_token(garbage)

    def test_exp_not_after_iat_is_malformed(self):
        header = {"alg": "Ed25519", "kid": "x"}
        claims = {"webid": "http://h/u/profile/card#me", "iss": "http://h/", "iat": 100, "exp": 100}

        def seg(obj):
            return base64.urlsafe_b64encode(
                json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
            ).decode().rstrip("=")

        with pytest.raises(MalformedToken):
            decode_token(seg(header) + "." + seg(claims) + "." + seg({}))


class TestKeys:
    def test_fresh_provider_has_one_key(self, provider):
        assert len(provider.published_keys()) == 1

    def test_rotation_keeps_old_tokens_valid(self, provider):
        provider.create_account("alice", "alice-pass", POD)
        old_token = provider.issue_token("alice", "alice-pass")
        provider.rotate_key()
        assert len(provider.published_keys()) == 2
        assert provider.verify(old_token.compact()).webid == old_token.claims.webid
        new_token = provider.issue_token("alice", "alice-pass")
        assert new_token.header["kid"] != old_token.header["kid"]
        assert provider.verify(new_token.compact()).webid == new_token.claims.webid

    def test_issued_kid_is_published(self, provider):
        provider.create_account("alice", "alice-pass", POD)
        token = provider.issue_token("alice", "alice-pass")
        assert token.header["kid"] in {k.kid for k in provider.published_keys()}

    def test_soundness_foreign_key_signature_rejected(self, tmp_path, provider):
        provider.create_account("alice", "alice-pass", POD)
        other = IdentityProvider("http://localhost:7000", provisioner=None, state_dir=tmp_path / "other")
        other.create_account("alice", "alice-pass", POD)
        forged = other.issue_token("alice", "alice-pass")
        with pytest.raises((UnknownKey, BadSignature)):
            provider.verify(forged.compact())


class TestTokenVerifier:
    def test_rotation_needs_no_restart(self, provider):
        from genpod.identity import TokenVerifier

        provider.create_account("alice", "alice-pass", POD)
        http = TestClient(create_idp_app(provider), base_url="http://idp")
        verifier = TokenVerifier("http://idp", http=http)

        old = provider.issue_token("alice", "alice-pass").compact()
        assert verifier.verify(old).webid == Iri("http://localhost:7001/alice/profile/card#me")
        provider.rotate_key()
        new = provider.issue_token("alice", "alice-pass").compact()
        # Unknown kid triggers one key refetch; both generations verify.
        assert verifier.verify(new).webid == verifier.verify(old).webid

    def test_unknown_kid_after_refresh_rejected(self, provider, tmp_path):
        from genpod.identity import TokenVerifier

        http = TestClient(create_idp_app(provider), base_url="http://idp")
        verifier = TokenVerifier("http://idp", http=http)
        foreign = IdentityProvider("http://elsewhere/", provisioner=None, state_dir=tmp_path / "f")
        foreign.create_account("alice", "alice-pass", POD)
        with pytest.raises(UnknownKey):
            verifier.verify(foreign.issue_token("alice", "alice-pass").compact())


class TestHttpSurface:
    @pytest.fixture
    def client(self, provider):
        return TestClient(create_idp_app(provider))

    def test_register_login_and_keys(self, client):
        resp = client.post(
            "/register",
            json={"username": "alice", "password": "alice-pass", "pod_base": POD.value},
        )
        assert resp.status_code == 201
        assert resp.json()["webid"].endswith("profile/card#me")

        dup = client.post(
            "/register",
            json={"username": "alice", "password": "x", "pod_base": POD.value},
        )
        assert dup.status_code == 409

        login = client.post("/login", json={"username": "alice", "password": "alice-pass"})
        assert login.status_code == 200
        body = login.json()
        assert set(body) == {"token", "webid"}

        bad = client.post("/login", json={"username": "alice", "password": "nope"})
        assert bad.status_code == 401
        assert "error" in bad.json()

        keys = client.get("/keys").json()["keys"]
        assert len(keys) == 1
        assert set(keys[0]) == {"kid", "alg", "public_key_base64url"}
