"""WAC engine: rule parsing, effective-ACL discovery, decisions, and
equivalence with the brute-force oracle."""

import random

import pytest

from genpod import wac
from genpod.fixture import notes_acl_document, trust_list_acl_document
from genpod.rdf import Graph, Iri, parse_turtle
from genpod.wac import (
    AccessMode,
    AccessTo,
    AuthenticatedAgent,
    Decision,
    Default,
    ExactAgent,
    NoAclError,
    PublicAgent,
    bootstrap_acl_documents,
    decide,
    governing_acl,
    parse_acl,
)

from conftest import DictAclSource
from oracles import NoAcl, random_wac_request, random_wac_universe, reference_decide

BOB = Iri("http://p/bob/profile/card#me")
ALICE = Iri("http://p/alice/profile/card#me")
SVC = Iri("http://p/retrieval-svc/profile/card#me")


def graph_of(text: str, doc: str) -> Graph:
    return parse_turtle(text, Iri(doc))


class TestParseAcl:
    def test_empty_graph(self):
        assert parse_acl(Graph(), Iri("http://p/x.acl")) == []

    def test_single_authorization_hand_expansion(self):
        text = (
            "@prefix acl: <http://www.w3.org/ns/auth/acl#> .\n"
            f"<#a1> a acl:Authorization ;\n"
            f"  acl:agent <{BOB}> ;\n"
            "  acl:mode acl:Read ;\n"
            "  acl:accessTo <http://p/alice/notes/> ."
        )
        rules = parse_acl(graph_of(text, "http://p/alice/notes/.acl"), Iri("http://p/alice/notes/.acl"))
        assert rules == [
            wac.AccessRule(
                Iri("http://p/alice/notes/.acl#a1"),
                frozenset({ExactAgent(BOB)}),
                frozenset({AccessMode.READ}),
                AccessTo(Iri("http://p/alice/notes/")),
            )
        ]

    def test_authorization_without_agent_skipped(self):
        text = (
            "@prefix acl: <http://www.w3.org/ns/auth/acl#> .\n"
            "<#a1> a acl:Authorization ; acl:mode acl:Read ; acl:accessTo <http://p/x> ."
        )
        assert parse_acl(graph_of(text, "http://p/x.acl"), Iri("http://p/x.acl")) == []

    def test_authorization_without_mode_or_target_skipped(self):
        text = (
            "@prefix acl: <http://www.w3.org/ns/auth/acl#> .\n"
            f"<#a1> a acl:Authorization ; acl:agent <{BOB}> ; acl:accessTo <http://p/x> .\n"
            f"<#a2> a acl:Authorization ; acl:agent <{BOB}> ; acl:mode acl:Read ."
        )
        assert parse_acl(graph_of(text, "http://p/x.acl"), Iri("http://p/x.acl")) == []

    def test_agent_classes(self):
        text = (
            "@prefix acl: <http://www.w3.org/ns/auth/acl#> .\n"
            "@prefix foaf: <http://xmlns.com/foaf/0.1/> .\n"
            "<#pub> a acl:Authorization ; acl:agentClass foaf:Agent ; acl:mode acl:Read ;"
            " acl:accessTo <http://p/x> .\n"
            "<#authn> a acl:Authorization ; acl:agentClass acl:AuthenticatedAgent ;"
            " acl:mode acl:Write ; acl:default <http://p/c/> ."
        )
        rules = parse_acl(graph_of(text, "http://p/x.acl"), Iri("http://p/x.acl"))
        assert {type(next(iter(r.agents))) for r in rules} == {PublicAgent, AuthenticatedAgent}
        assert {type(r.target) for r in rules} == {AccessTo, Default}

    def test_multi_target_expands_to_rule_per_target(self):
        text = (
            "@prefix acl: <http://www.w3.org/ns/auth/acl#> .\n"
            f"<#a1> a acl:Authorization ; acl:agent <{BOB}> ; acl:mode acl:Read ;"
            " acl:accessTo <http://p/c/> ; acl:default <http://p/c/> ."
        )
        rules = parse_acl(graph_of(text, "http://p/c/.acl"), Iri("http://p/c/.acl"))
        assert len(rules) == 2
        assert {type(r.target) for r in rules} == {AccessTo, Default}
        assert len({r.id for r in rules}) == 1

    def test_rules_sorted_by_id(self):
        text = (
            "@prefix acl: <http://www.w3.org/ns/auth/acl#> .\n"
            f"<#b> a acl:Authorization ; acl:agent <{BOB}> ; acl:mode acl:Read ; acl:accessTo <http://p/x> .\n"
            f"<#a> a acl:Authorization ; acl:agent <{BOB}> ; acl:mode acl:Read ; acl:accessTo <http://p/x> ."
        )
        rules = parse_acl(graph_of(text, "http://p/x.acl"), Iri("http://p/x.acl"))
        assert [r.id.value for r in rules] == ["http://p/x.acl#a", "http://p/x.acl#b"]


class TestGoverningAcl:
    def setup_method(self):
        self.store = DictAclSource(
            {
                "http://p/alice/.acl": "",
                "http://p/alice/notes/.acl": "",
                "http://p/alice/notes/f.txt.acl": "",
            }
        )

    def test_own_acl_wins(self):
        doc, inherited = governing_acl(Iri("http://p/alice/notes/f.txt"), self.store)
        assert doc == Iri("http://p/alice/notes/f.txt.acl")
        assert inherited is False

    def test_walk_to_pod_root(self):
        store = DictAclSource({"http://p/alice/.acl": ""})
        doc, inherited = governing_acl(Iri("http://p/alice/notes/f.txt"), store)
        assert doc == Iri("http://p/alice/.acl")
        assert inherited is True

    def test_nearest_ancestor_first(self):
        store = DictAclSource({"http://p/alice/.acl": "", "http://p/alice/notes/.acl": ""})
        doc, inherited = governing_acl(Iri("http://p/alice/notes/f.txt"), store)
        assert doc == Iri("http://p/alice/notes/.acl")
        assert inherited is True

    def test_no_acl_raises(self):
        with pytest.raises(NoAclError):
            governing_acl(Iri("http://p/alice/notes/f.txt"), DictAclSource({}))


def fixture_store() -> DictAclSource:
    """The seed scenario's ACL documents, in memory."""
    pod = Iri("http://p/alice/")
    docs = {
        iri.value: body
        for iri, body in bootstrap_acl_documents(pod, ALICE).items()
    }
    docs["http://p/alice/notes/.acl"] = notes_acl_document(pod, ALICE, SVC)
    docs["http://p/alice/genpod/assistant-access.ttl.acl"] = trust_list_acl_document(
        Iri("http://p/alice/genpod/assistant-access.ttl"), ALICE
    )
    for iri, body in bootstrap_acl_documents(Iri("http://p/bob/"), BOB).items():
        docs[iri.value] = body
    return DictAclSource(docs)


class TestDecide:
    def setup_method(self):
        self.store = fixture_store()

    def test_owner_control_on_root_after_bootstrap(self):
        decision = decide(ALICE, AccessMode.CONTROL, Iri("http://p/alice/"), self.store)
        assert decision.allowed
        assert decision.rule_id == Iri("http://p/alice/.acl#owner")

    def test_anonymous_denied_where_authenticated_required(self):
        trust = Iri("http://p/alice/genpod/assistant-access.ttl")
        assert not decide(None, AccessMode.READ, trust, self.store).allowed
        assert decide(BOB, AccessMode.READ, trust, self.store).allowed

    def test_fixture_bob_denied_service_allowed_on_note(self):
        note = Iri("http://p/alice/notes/meeting-2024-01-15.txt")
        assert not decide(BOB, AccessMode.READ, note, self.store).allowed
        assert decide(SVC, AccessMode.READ, note, self.store).allowed
        # Cross-check both against the oracle.
        for agent in (BOB, SVC, ALICE, None):
            expected = reference_decide(
                agent.value if agent else None, "Read", note.value, self.store.docs
            )
            got = decide(agent, AccessMode.READ, note, self.store)
            assert (got.allowed, got.rule_id.value if got.rule_id else None, got.acl_doc.value) == expected

    def test_anonymous_profile_read_via_public_default(self):
        card = Iri("http://p/alice/profile/card")
        assert decide(None, AccessMode.READ, card, self.store).allowed

    def test_acl_requests_require_control(self):
        notes_acl = Iri("http://p/alice/notes/.acl")
        assert decide(ALICE, AccessMode.READ, notes_acl, self.store).allowed
        assert not decide(SVC, AccessMode.READ, notes_acl, self.store).allowed
        assert not decide(SVC, AccessMode.WRITE, notes_acl, self.store).allowed

    def test_deny_is_a_value_not_an_error(self):
        decision = decide(None, AccessMode.WRITE, Iri("http://p/alice/notes/x"), self.store)
        assert decision == Decision(False, None, Iri("http://p/alice/notes/.acl"))


class TestProperties:
    def test_deny_by_default(self):
        store = DictAclSource({"http://p/pod/.acl": "@prefix acl: <http://www.w3.org/ns/auth/acl#> ."})
        for mode in AccessMode:
            assert not decide(ALICE, mode, Iri("http://p/pod/x"), store).allowed

    def test_inheritance_masking(self):
        docs = {
            "http://p/pod/.acl": (
                "@prefix acl: <http://www.w3.org/ns/auth/acl#> .\n"
                f"<#all> a acl:Authorization ; acl:agent <{ALICE}> ;"
                " acl:mode acl:Read, acl:Write, acl:Control ;"
                " acl:accessTo <http://p/pod/> ; acl:default <http://p/pod/> ."
            ),
            # Own ACL with no matching rules masks the permissive ancestor.
            "http://p/pod/secret.txt.acl": "@prefix acl: <http://www.w3.org/ns/auth/acl#> .",
        }
        store = DictAclSource(docs)
        assert decide(ALICE, AccessMode.READ, Iri("http://p/pod/other.txt"), store).allowed
        assert not decide(ALICE, AccessMode.READ, Iri("http://p/pod/secret.txt"), store).allowed

    def test_self_protection_equivalence(self):
        store = fixture_store()
        resources = [
            "http://p/alice/",
            "http://p/alice/notes/",
            "http://p/alice/notes/meeting-2024-01-15.txt",
            "http://p/alice/profile/card",
        ]
        for agent in (ALICE, BOB, SVC, None):
            for r in resources:
                for mode in (AccessMode.READ, AccessMode.WRITE):
                    on_acl = decide(agent, mode, Iri(r + ".acl"), store).allowed
                    control = decide(agent, AccessMode.CONTROL, Iri(r), store).allowed
                    assert on_acl == control

    def test_monotonicity_adding_rule_never_revokes(self):
        rng = random.Random(7)
        for _ in range(40):
            resources, docs = random_wac_universe(rng)
            store = DictAclSource(docs)
            requests = [random_wac_request(rng, resources) for _ in range(15)]
            before = {}
            for agent, mode, resource in requests:
                try:
                    before[(agent, mode, resource)] = decide(
                        Iri(agent) if agent else None, AccessMode(mode), Iri(resource), store
                    ).allowed
                except NoAclError:
                    before[(agent, mode, resource)] = None
            # Append one fully-formed rule to one existing document.
            doc = rng.choice(sorted(docs))
            target = doc[: -len(".acl")]
            docs[doc] += (
                f'\n<{doc}#extra> a acl:Authorization ; acl:agent <{ALICE}> ;'
                f" acl:mode acl:Read ; acl:accessTo <{target}> ."
            )
            for (agent, mode, resource), was_allowed in before.items():
                if was_allowed is not True:
                    continue
                assert decide(
                    Iri(agent) if agent else None, AccessMode(mode), Iri(resource), store
                ).allowed

    def test_oracle_equivalence_sample(self):
        rng = random.Random(20240201)
        checked = 0
        for _ in range(40):
            resources, docs = random_wac_universe(rng)
            store = DictAclSource(docs)
            for _ in range(10):
                agent, mode, resource = random_wac_request(rng, resources)
                agent_iri = Iri(agent) if agent else None
                try:
                    expected = reference_decide(agent, mode, resource, docs)
                except NoAcl:
                    with pytest.raises(NoAclError):
                        decide(agent_iri, AccessMode(mode), Iri(resource), store)
                    continue
                got = decide(agent_iri, AccessMode(mode), Iri(resource), store)
                assert (
                    got.allowed,
                    got.rule_id.value if got.rule_id else None,
                    got.acl_doc.value,
                ) == expected
                checked += 1
        assert checked > 200
