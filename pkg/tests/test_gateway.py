"""Gateway: model listing, the deterministic demo model, the closed request
schema, allow-lists, and the external adapter."""

import json

import httpx
import pytest
from fastapi.testclient import TestClient

from genpod.fixture import MEETING_NOTE_TEXT, SCENARIO_PASSWORDS
from genpod.gateway import (
    ANSWER_PREFIX,
    FALLBACK_ANSWER,
    STOPWORDS,
    ChatTurn,
    CompletionRequest,
    ContextItem,
    ExternalProvider,
    GatewayConfig,
    GatewayService,
    create_gateway_app,
    demo_generate,
)
from genpod.identity import TokenVerifier, UpstreamError
from genpod.rdf import Iri


def turns(*pairs):
    return [ChatTurn(role=r, content=c) for r, c in pairs]


def contexts(*texts):
    return [ContextItem(id=f"chunk-{i + 1}", text=t) for i, t in enumerate(texts)]


QUERY = "Can you remind me what our meeting in mid-January was about?"


class TestDemoGenerate:
    def test_stopword_list_is_exactly_thirty_words(self):
        assert len(STOPWORDS) == 30

    def test_no_context_gives_exact_fallback(self):
        out = demo_generate(turns(("user", QUERY)), [])
        assert out == FALLBACK_ANSWER

    def test_no_matching_terms_gives_fallback(self):
        out = demo_generate(turns(("user", QUERY)), contexts("totally unrelated text body."))
        assert out == FALLBACK_ANSWER

    def test_stopword_only_query_gives_fallback(self):
        out = demo_generate(turns(("user", "What was that about?")), contexts("that was about things."))
        assert out == FALLBACK_ANSWER

    def test_single_sentence_context(self):
        out = demo_generate(turns(("user", "tell me about pods")), contexts("Pods hold data."))
        assert out == ANSWER_PREFIX + "Pods hold data."

    def test_fixture_meeting_note_names_the_project(self):
        out = demo_generate(turns(("user", QUERY)), contexts(MEETING_NOTE_TEXT))
        s1 = "Meeting notes, mid-January: we discussed the name of a new decentralised web project launching soon."
        s2 = "We eventually decided to call it SocialGenPod."
        assert out == f"{ANSWER_PREFIX}{s1} {s2}"
        assert "SocialGenPod" in out

    def test_two_sentence_window_includes_successor(self):
        text = "The meeting happened on Monday. It covered budgets. Unrelated trailer."
        out = demo_generate(turns(("user", "when was the meeting")), contexts(text))
        assert out == ANSWER_PREFIX + "The meeting happened on Monday. It covered budgets."

    def test_earliest_position_tie_break(self):
        a = "The meeting was long. First follower."
        b = "The meeting was short. Second follower."
        out = demo_generate(turns(("user", "meeting")), contexts(a, b))
        assert "First follower." in out

    def test_uses_last_user_message(self):
        history = turns(
            ("user", "irrelevant opener"),
            ("assistant", "some reply"),
            ("user", "what about the budget meeting"),
        )
        out = demo_generate(history, contexts("The budget meeting is Tuesday. Bring slides."))
        assert out.startswith(ANSWER_PREFIX + "The budget meeting is Tuesday.")

    def test_determinism(self):
        args = (turns(("user", QUERY)), contexts(MEETING_NOTE_TEXT))
        assert demo_generate(*args) == demo_generate(*args)


class TestModels:
    def test_default_models(self):
        service = GatewayService()
        assert [m.id for m in service.list_models()] == ["demo-rag", "demo-plain"]
        assert all(m.kind == "demo" for m in service.list_models())

    def test_external_extends_listing(self):
        config = GatewayConfig(external=[ExternalProvider(id="ext-1", url="http://up/chat")])
        service = GatewayService(config)
        ids = [m.id for m in service.list_models()]
        assert ids == ["demo-rag", "demo-plain", "ext-1"]
        assert len(set(ids)) == len(ids)


class TestExternalAdapter:
    def make_service(self, handler):
        config = GatewayConfig(external=[ExternalProvider(id="ext-1", url="http://up/chat", api_key="k")])
        return GatewayService(config, http=httpx.Client(transport=httpx.MockTransport(handler)))

    def test_proxies_and_echoes_model(self):
        seen = {}

        def handler(request):
            seen["auth"] = request.headers.get("authorization")
            seen["body"] = json.loads(request.content)
            return httpx.Response(200, json={"message": {"role": "assistant", "content": "external says hi"}})

        service = self.make_service(handler)
        req = CompletionRequest(model="ext-1", messages=turns(("user", "hi")), context=[])
        resp = service.generate(req, requester=Iri("http://h/u/profile/card#me"))
        assert resp.model == "ext-1"
        assert resp.message.content == "external says hi"
        assert seen["auth"] == "Bearer k"
        assert seen["body"]["model"] == "ext-1"

    def test_upstream_failure_raises(self):
        def handler(request):
            return httpx.Response(500, text="boom")

        service = self.make_service(handler)
        req = CompletionRequest(model="ext-1", messages=turns(("user", "hi")), context=[])
        with pytest.raises(UpstreamError):
            service.generate(req, requester=Iri("http://h/u/profile/card#me"))


@pytest.fixture()
def gateway_client(live_stack, tmp_path):
    """Gateway app with a request log and an allow-list, verifying against the
    live identity provider."""
    log = tmp_path / "requests.log"
    _, alice_webid = live_stack.login("alice", SCENARIO_PASSWORDS["alice"])
    _, bob_webid = live_stack.login("bob", SCENARIO_PASSWORDS["bob"])
    config = GatewayConfig(allow_list={alice_webid, bob_webid}, request_log=log)
    app = create_gateway_app(GatewayService(config), TokenVerifier(live_stack.url("idp")))
    return TestClient(app), log


def valid_body(model="demo-rag"):
    return {
        "model": model,
        "messages": [{"role": "user", "content": QUERY}],
        "context": [{"id": "chunk-1", "text": MEETING_NOTE_TEXT}],
    }


class TestChatEndpoint:
    def test_rag_answer_and_model_echo(self, live_stack, gateway_client):
        client, _ = gateway_client
        token, _ = live_stack.login("bob", SCENARIO_PASSWORDS["bob"])
        resp = client.post("/chat", json=valid_body(), headers=live_stack.auth(token))
        assert resp.status_code == 200
        body = resp.json()
        assert body["model"] == "demo-rag"
        assert body["message"]["role"] == "assistant"
        assert "SocialGenPod" in body["message"]["content"]

    def test_unknown_model_404(self, live_stack, gateway_client):
        client, _ = gateway_client
        token, _ = live_stack.login("bob", SCENARIO_PASSWORDS["bob"])
        resp = client.post("/chat", json=valid_body("no-such-model"), headers=live_stack.auth(token))
        assert resp.status_code == 404

    def test_allow_list_forbids_non_members_for_every_model(self, live_stack, gateway_client):
        client, _ = gateway_client
        token, _ = live_stack.login("charlie", SCENARIO_PASSWORDS["charlie"])
        for model in ("demo-rag", "demo-plain", "no-such-model"):
            resp = client.post("/chat", json=valid_body(model), headers=live_stack.auth(token))
            assert resp.status_code == 403

    def test_missing_token_401(self, gateway_client):
        client, _ = gateway_client
        assert client.post("/chat", json=valid_body()).status_code == 401

    @pytest.mark.parametrize(
        "mutate",
        [
            lambda b: {**b, "pod_url": "http://localhost:7001/alice/"},
            lambda b: {**b, "token": "bearer-here"},
            lambda b: {**b, "doc_source": "http://localhost:7001/alice/notes/"},
            lambda b: {**b, "context": [{"id": "x", "text": "t", "source": "http://p/alice/notes/a.txt"}]},
            lambda b: {**b, "messages": [{"role": "user", "content": "hi", "webid": "http://p/u#me"}]},
        ],
    )
    def test_schema_rejects_unknown_fields(self, live_stack, gateway_client, mutate):
        client, _ = gateway_client
        token, _ = live_stack.login("bob", SCENARIO_PASSWORDS["bob"])
        resp = client.post("/chat", json=mutate(valid_body()), headers=live_stack.auth(token))
        assert resp.status_code == 400

    def test_empty_content_rejected(self, live_stack, gateway_client):
        client, _ = gateway_client
        token, _ = live_stack.login("bob", SCENARIO_PASSWORDS["bob"])
        body = valid_body()
        body["messages"] = [{"role": "user", "content": ""}]
        assert client.post("/chat", json=body, headers=live_stack.auth(token)).status_code == 400

    def test_request_bodies_are_logged(self, live_stack, gateway_client):
        client, log = gateway_client
        token, _ = live_stack.login("bob", SCENARIO_PASSWORDS["bob"])
        client.post("/chat", json=valid_body(), headers=live_stack.auth(token))
        lines = log.read_text().strip().splitlines()
        assert len(lines) >= 1
        entry = json.loads(lines[-1])
        assert QUERY in entry["body"]
        assert token not in entry["body"]

    def test_models_endpoint(self, gateway_client):
        client, _ = gateway_client
        assert [m["id"] for m in client.get("/models").json()["models"]] == ["demo-rag", "demo-plain"]
