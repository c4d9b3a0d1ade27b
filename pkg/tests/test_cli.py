"""CLI behaviour: exit codes, seed idempotence, acl-grant and trust flows."""

import hashlib
import socket
from pathlib import Path

import httpx
import pytest

from genpod.cli import EXIT_AUTH, EXIT_OK, EXIT_PERMISSION, EXIT_UPSTREAM, EXIT_USAGE, main
from genpod.fixture import SCENARIO_PASSWORDS


def tree_digest(root: Path) -> str:
    h = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            h.update(str(path.relative_to(root)).encode())
            h.update(path.read_bytes())
    return h.hexdigest()


def ask_args(stack, user, query, use_rag=True, source=None, model="demo-rag"):
    args = [
        "ask",
        "--user",
        user,
        "--password",
        SCENARIO_PASSWORDS.get(user, f"{user}-pass"),
        "--query",
        query,
        "--model",
        model,
        "--chat-url",
        stack.url("chat"),
    ]
    if use_rag:
        args.append("--use-rag")
    if source:
        args.extend(["--source", source])
    return args


QUERY = "Can you remind me what our meeting in mid-January was about?"


class TestExitCodes:
    def test_usage_error_is_exit_1(self):
        with pytest.raises(SystemExit) as exc:
            main(["ask", "--user", "bob"])  # missing required flags
        assert exc.value.code == EXIT_USAGE

    def test_unknown_command_is_exit_1(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == EXIT_USAGE

    def test_bad_credentials_exit_2(self, live_stack, capsys):
        code = main(
            [
                "ask",
                "--user",
                "bob",
                "--password",
                "wrong",
                "--query",
                "x",
                "--chat-url",
                live_stack.url("chat"),
            ]
        )
        assert code == EXIT_AUTH

    def test_permission_denied_exit_3(self, live_stack, capsys):
        source = live_stack.url("pod") + "/alice/notes/"
        code = main(ask_args(live_stack, "charlie", QUERY, use_rag=True, source=source))
        assert code == EXIT_PERMISSION

    def test_unreachable_service_exit_4(self, capsys):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            dead_port = s.getsockname()[1]
        code = main(
            [
                "ask",
                "--user",
                "bob",
                "--password",
                "bob-pass",
                "--query",
                "x",
                "--chat-url",
                f"http://127.0.0.1:{dead_port}",
            ]
        )
        assert code == EXIT_UPSTREAM

    def test_serve_bind_error_exit_4(self, live_stack, tmp_path, capsys):
        taken = live_stack.settings.ports["pod"]
        code = main(
            ["serve", "pod", "--data-dir", str(tmp_path), "--port", str(taken)]
        )
        assert code == EXIT_UPSTREAM


class TestAsk:
    def test_rag_transcript_names_project(self, live_stack, capsys):
        source = live_stack.url("pod") + "/alice/notes/"
        code = main(ask_args(live_stack, "bob", QUERY, use_rag=True, source=source))
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "SocialGenPod" in out
        assert "user> " in out
        assert "assistant[demo-rag]> " in out
        assert "citations: " in out

    def test_without_rag_prints_fallback(self, live_stack, capsys):
        code = main(ask_args(live_stack, "bob", QUERY, use_rag=False))
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "I'm sorry, but I need more context to provide a helpful answer." in out

    def test_env_var_url_override(self, live_stack, capsys, monkeypatch):
        monkeypatch.setenv("GENPOD_CHAT_URL", live_stack.url("chat"))
        code = main(
            [
                "ask",
                "--user",
                "bob",
                "--password",
                "bob-pass",
                "--query",
                "hello there",
                "--model",
                "demo-plain",
            ]
        )
        assert code == EXIT_OK


class TestSeed:
    def test_seed_idempotent_byte_for_byte(self, make_stack, capsys):
        stack = make_stack(seed=False)
        urls = [
            "--idp-url",
            stack.url("idp"),
            "--pod-url",
            stack.url("pod"),
            "--retrieval-url",
            stack.url("retrieval"),
            "--gateway-url",
            stack.url("gateway"),
        ]
        assert main(["seed", "alice-bob", *urls]) == EXIT_OK
        pods = Path(stack.settings.data_dir) / "pods"
        first = tree_digest(pods)
        assert main(["seed", "alice-bob", *urls]) == EXIT_OK
        assert tree_digest(pods) == first
        out = capsys.readouterr().out
        assert "webid alice:" in out

    def test_seed_against_dead_services_exit_4(self, capsys):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            dead = f"http://127.0.0.1:{s.getsockname()[1]}"
        code = main(["seed", "alice-bob", "--idp-url", dead, "--pod-url", dead, "--retrieval-url", dead, "--gateway-url", dead])
        assert code == EXIT_UPSTREAM


class TestAclGrant:
    def test_grant_is_additive_and_effective(self, make_stack, capsys):
        stack = make_stack(seed=True)
        pod = stack.url("pod")
        note = pod + "/alice/notes/meeting-2024-01-15.txt"
        bob_token, bob_webid = stack.login("bob", "bob-pass")
        svc_token, _ = stack.login("retrieval-svc", "retrieval-svc-pass")

        assert httpx.get(note, headers=stack.auth(bob_token)).status_code == 403
        code = main(
            [
                "acl-grant",
                "--resource",
                pod + "/alice/notes/",
                "--agent",
                bob_webid,
                "--modes",
                "Read",
                "--user",
                "alice",
                "--password",
                "alice-pass",
                "--idp-url",
                stack.url("idp"),
            ]
        )
        assert code == EXIT_OK
        assert httpx.get(note, headers=stack.auth(bob_token)).status_code == 200
        # Prior rules preserved: the service grant still works.
        assert httpx.get(note, headers=stack.auth(svc_token)).status_code == 200

    def test_grant_without_control_exit_3(self, live_stack, capsys):
        code = main(
            [
                "acl-grant",
                "--resource",
                live_stack.url("pod") + "/alice/notes/",
                "--agent",
                "http://x/u/profile/card#me",
                "--modes",
                "Read",
                "--user",
                "bob",
                "--password",
                "bob-pass",
                "--idp-url",
                live_stack.url("idp"),
            ]
        )
        assert code == EXIT_PERMISSION

    def test_grant_copies_inherited_rules_on_new_acl(self, make_stack, capsys):
        stack = make_stack(seed=True)
        pod = stack.url("pod")
        container = pod + "/alice/t-grant/"
        alice_token, _ = stack.login("alice", "alice-pass")
        charlie_token, charlie_webid = stack.login("charlie", "charlie-pass")
        httpx.put(
            container + "doc.txt",
            content=b"content here",
            headers={**stack.auth(alice_token), "Content-Type": "text/plain"},
        )
        code = main(
            [
                "acl-grant",
                "--resource",
                container,
                "--agent",
                charlie_webid,
                "--modes",
                "Read",
                "--user",
                "alice",
                "--password",
                "alice-pass",
                "--idp-url",
                stack.url("idp"),
            ]
        )
        assert code == EXIT_OK
        assert httpx.get(container + "doc.txt", headers=stack.auth(charlie_token)).status_code == 200
        # Monotonicity: the owner kept access despite the new masking ACL doc.
        resp = httpx.put(
            container + "doc2.txt",
            content=b"still writable",
            headers={**stack.auth(alice_token), "Content-Type": "text/plain"},
        )
        assert resp.status_code == 201

    def test_unknown_mode_exit_1(self, live_stack, capsys):
        code = main(
            [
                "acl-grant",
                "--resource",
                live_stack.url("pod") + "/alice/notes/",
                "--agent",
                "http://x/u/profile/card#me",
                "--modes",
                "Zap",
                "--user",
                "alice",
                "--password",
                "alice-pass",
                "--idp-url",
                live_stack.url("idp"),
            ]
        )
        assert code == EXIT_USAGE


class TestTrust:
    def test_add_remove_round_trip(self, make_stack, capsys):
        stack = make_stack(seed=True)
        idp = ["--idp-url", stack.url("idp")]
        owner = ["--owner", "alice", "--password", "alice-pass"]
        charlie_webid = stack.url("pod") + "/charlie/profile/card#me"
        bob_webid = stack.url("pod") + "/bob/profile/card#me"

        def retrieve_as(user):
            token, _ = stack.login(user, f"{user}-pass")
            return httpx.post(
                stack.url("retrieval") + "/retrieve",
                json={"query": QUERY, "source": stack.url("pod") + "/alice/notes/"},
                headers=stack.auth(token),
                timeout=30.0,
            )

        assert retrieve_as("charlie").status_code == 403
        assert main(["trust", "add", charlie_webid, *owner, *idp]) == EXIT_OK
        assert retrieve_as("charlie").status_code == 200

        assert retrieve_as("bob").status_code == 200
        assert main(["trust", "remove", bob_webid, *owner, *idp]) == EXIT_OK
        assert retrieve_as("bob").status_code == 403

        capsys.readouterr()
        assert main(["trust", "list", *owner, *idp]) == EXIT_OK
        listed = capsys.readouterr().out.strip().splitlines()
        assert listed == [charlie_webid]

    def test_add_then_remove_restores_list(self, make_stack, capsys):
        stack = make_stack(seed=True)
        idp = ["--idp-url", stack.url("idp")]
        owner = ["--owner", "alice", "--password", "alice-pass"]
        charlie_webid = stack.url("pod") + "/charlie/profile/card#me"
        capsys.readouterr()
        main(["trust", "list", *owner, *idp])
        before = capsys.readouterr().out
        main(["trust", "add", charlie_webid, *owner, *idp])
        main(["trust", "remove", charlie_webid, *owner, *idp])
        capsys.readouterr()
        main(["trust", "list", *owner, *idp])
        assert capsys.readouterr().out == before

    def test_missing_webid_exit_1(self, live_stack, capsys):
        code = main(
            ["trust", "add", "--owner", "alice", "--password", "alice-pass", "--idp-url", live_stack.url("idp")]
        )
        assert code == EXIT_USAGE
