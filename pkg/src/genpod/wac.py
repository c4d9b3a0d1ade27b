"""Web Access Control: ACL rule parsing, effective-ACL discovery, decisions.

ACL documents are Turtle resources at ``{resource}.acl`` using the standard
WAC vocabulary. Requests are decided against the resource's own ACL document
when present, otherwise against the nearest ancestor container's, where only
``acl:default`` rules apply. Deny is the default.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol, Union
from urllib.parse import urlsplit

from .rdf import (
    ACL_NS,
    FOAF_NS,
    RDF_TYPE,
    Graph,
    Iri,
    Triple,
    serialize_turtle,
)

ACL_AUTHORIZATION = Iri(ACL_NS + "Authorization")
ACL_AGENT = Iri(ACL_NS + "agent")
ACL_AGENT_CLASS = Iri(ACL_NS + "agentClass")
ACL_AUTHENTICATED_AGENT = Iri(ACL_NS + "AuthenticatedAgent")
ACL_MODE = Iri(ACL_NS + "mode")
ACL_ACCESS_TO = Iri(ACL_NS + "accessTo")
ACL_DEFAULT = Iri(ACL_NS + "default")
FOAF_AGENT = Iri(FOAF_NS + "Agent")


class AccessMode(Enum):
    READ = "Read"
    WRITE = "Write"
    APPEND = "Append"
    CONTROL = "Control"

    @property
    def iri(self) -> Iri:
        return Iri(ACL_NS + self.value)

    @classmethod
    def from_iri(cls, iri: Iri) -> Optional["AccessMode"]:
        for mode in cls:
            if mode.iri == iri:
                return mode
        return None


@dataclass(frozen=True, order=True)
class ExactAgent:
    webid: Iri


@dataclass(frozen=True)
class PublicAgent:
    pass


@dataclass(frozen=True)
class AuthenticatedAgent:
    pass


AgentMatcher = Union[ExactAgent, PublicAgent, AuthenticatedAgent]


@dataclass(frozen=True)
class AccessTo:
    resource: Iri


@dataclass(frozen=True)
class Default:
    container: Iri


Target = Union[AccessTo, Default]


@dataclass(frozen=True)
class AccessRule:
    id: Iri
    agents: frozenset
    modes: frozenset
    target: Target


@dataclass(frozen=True)
class Decision:
    allowed: bool
    rule_id: Optional[Iri]
    acl_doc: Iri


class NoAclError(Exception):
    """No governing ACL up to and including the pod root: bootstrap violation."""

    def __init__(self, resource: Iri):
        super().__init__(f"no governing ACL document for {resource}")
        self.resource = resource


class AclSource(Protocol):
    """Read access to ACL documents, keyed by the document IRI."""

    def get_acl(self, doc: Iri) -> Optional[Graph]:
        """Parsed graph of the ACL document at ``doc``, or None if absent."""
        ...


def _rule_sort_key(rule: AccessRule) -> tuple:
    kind = 0 if isinstance(rule.target, AccessTo) else 1
    tiri = rule.target.resource if isinstance(rule.target, AccessTo) else rule.target.container
    return (rule.id.value, kind, tiri.value)


def parse_acl(g: Graph, acl_doc: Iri) -> list[AccessRule]:
    """Extract well-formed authorizations; incomplete ones are skipped.

    A rule needs at least one recognised mode, one agent matcher, and one
    target. Authorizations carrying several targets expand to one rule per
    target, all sharing the authorization's id.
    """
    rules: list[AccessRule] = []
    subjects = sorted({t.subject for t in g.match(None, Iri(RDF_TYPE), ACL_AUTHORIZATION)})
    for subject in subjects:
        modes = set()
        for obj in g.objects(subject, ACL_MODE):
            if isinstance(obj, Iri):
                mode = AccessMode.from_iri(obj)
                if mode is not None:
                    modes.add(mode)
        agents: set = set()
        for obj in g.objects(subject, ACL_AGENT):
            if isinstance(obj, Iri):
                agents.add(ExactAgent(obj))
        for obj in g.objects(subject, ACL_AGENT_CLASS):
            if obj == FOAF_AGENT:
                agents.add(PublicAgent())
            elif obj == ACL_AUTHENTICATED_AGENT:
                agents.add(AuthenticatedAgent())
        targets: list[Target] = []
        for obj in g.objects(subject, ACL_ACCESS_TO):
            if isinstance(obj, Iri):
                targets.append(AccessTo(obj))
        for obj in g.objects(subject, ACL_DEFAULT):
            if isinstance(obj, Iri):
                targets.append(Default(obj))
        if not modes or not agents or not targets:
            continue
        for target in targets:
            rules.append(AccessRule(subject, frozenset(agents), frozenset(modes), target))
    rules.sort(key=_rule_sort_key)
    return rules


def acl_doc_for(resource: Iri) -> Iri:
    return Iri(resource.value + ".acl")


def parent_container(resource: Iri) -> Optional[Iri]:
    """Nearest ancestor container, or None when at (or above) a pod root.

    Pod roots are the top-level containers of the server; the walk never
    crosses into the server root.
    """
    parts = urlsplit(resource.value)
    origin = f"{parts.scheme}://{parts.netloc}"
    path = parts.path
    if path in ("", "/"):
        return None
    trimmed = path[:-1] if path.endswith("/") else path
    cut = trimmed.rfind("/")
    parent = trimmed[: cut + 1]
    if parent in ("", "/"):
        return None
    return Iri(origin + parent)


def governing_acl(resource: Iri, store: AclSource) -> tuple[Iri, bool]:
    """The ACL document in force for ``resource`` and whether it is inherited."""
    own = acl_doc_for(resource)
    if store.get_acl(own) is not None:
        return own, False
    ancestor = parent_container(resource)
    while ancestor is not None:
        doc = acl_doc_for(ancestor)
        if store.get_acl(doc) is not None:
            return doc, True
        ancestor = parent_container(ancestor)
    raise NoAclError(resource)


def _agent_matches(matcher: AgentMatcher, agent: Optional[Iri]) -> bool:
    if isinstance(matcher, PublicAgent):
        return True
    if isinstance(matcher, AuthenticatedAgent):
        return agent is not None
    return agent is not None and agent == matcher.webid


def decide(agent: Optional[Iri], mode: AccessMode, resource: Iri, store: AclSource) -> Decision:
    """Decide (agent, mode, resource); ``agent`` None means anonymous.

    Requests on ``{x}.acl`` documents require Control on ``x``.
    """
    target = resource
    required = mode
    while target.value.endswith(".acl"):
        target = Iri(target.value[: -len(".acl")])
        required = AccessMode.CONTROL
    doc_iri, inherited = governing_acl(target, store)
    graph = store.get_acl(doc_iri) or Graph()
    container = Iri(doc_iri.value[: -len(".acl")]) if inherited else None
    for rule in parse_acl(graph, doc_iri):
        if inherited:
            if not (isinstance(rule.target, Default) and rule.target.container == container):
                continue
        else:
            if not (isinstance(rule.target, AccessTo) and rule.target.resource == target):
                continue
        if required not in rule.modes:
            continue
        if any(_agent_matches(m, agent) for m in rule.agents):
            return Decision(True, rule.id, doc_iri)
    return Decision(False, None, doc_iri)


# ---------------------------------------------------------------------------
# ACL document authoring
# ---------------------------------------------------------------------------

ACL_PREFIXES = {"acl": ACL_NS, "foaf": FOAF_NS}


def authorization_triples(
    rule_iri: Iri,
    agents: list[AgentMatcher],
    modes: list[AccessMode],
    access_to: Optional[Iri] = None,
    default: Optional[Iri] = None,
) -> list[Triple]:
    triples = [Triple(rule_iri, Iri(RDF_TYPE), ACL_AUTHORIZATION)]
    for matcher in agents:
        if isinstance(matcher, ExactAgent):
            triples.append(Triple(rule_iri, ACL_AGENT, matcher.webid))
        elif isinstance(matcher, PublicAgent):
            triples.append(Triple(rule_iri, ACL_AGENT_CLASS, FOAF_AGENT))
        else:
            triples.append(Triple(rule_iri, ACL_AGENT_CLASS, ACL_AUTHENTICATED_AGENT))
    for mode in modes:
        triples.append(Triple(rule_iri, ACL_MODE, mode.iri))
    if access_to is not None:
        triples.append(Triple(rule_iri, ACL_ACCESS_TO, access_to))
    if default is not None:
        triples.append(Triple(rule_iri, ACL_DEFAULT, default))
    return triples


def bootstrap_acl_documents(pod_base: Iri, owner: Iri) -> dict[Iri, str]:
    """The two ACL documents installed at pod creation.

    The pod root grants the owner Read/Write/Control on itself and (via
    default) everything beneath; the profile container additionally grants
    public Read via default so WebIDs dereference anonymously.

    Rule ids and targets are written as relative references so a copied pod
    keeps working under a new origin; agent WebIDs stay absolute.
    """
    all_modes = [AccessMode.READ, AccessMode.WRITE, AccessMode.CONTROL]
    root_acl = acl_doc_for(pod_base)
    root = Graph(
        authorization_triples(
            Iri(root_acl.value + "#owner"),
            [ExactAgent(owner)],
            all_modes,
            access_to=pod_base,
            default=pod_base,
        )
    )
    profile = Iri(pod_base.value + "profile/")
    profile_acl = acl_doc_for(profile)
    profile_graph = Graph(
        authorization_triples(
            Iri(profile_acl.value + "#owner"),
            [ExactAgent(owner)],
            all_modes,
            access_to=profile,
            default=profile,
        )
        + authorization_triples(
            Iri(profile_acl.value + "#public"),
            [PublicAgent()],
            [AccessMode.READ],
            default=profile,
        )
    )
    return {
        root_acl: serialize_turtle(
            root,
            ACL_PREFIXES,
            base=root_acl,
            relativize={pod_base, Iri(root_acl.value + "#owner")},
        ),
        profile_acl: serialize_turtle(
            profile_graph,
            ACL_PREFIXES,
            base=profile_acl,
            relativize={profile, Iri(profile_acl.value + "#owner"), Iri(profile_acl.value + "#public")},
        ),
    }
