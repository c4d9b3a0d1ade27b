"""Minimal RDF triple model plus a Turtle-subset parser and serializer.

The subset covers exactly what the stack's own documents need: ``@prefix``
directives, the ``a`` keyword, ``<...>`` IRIs, prefixed names, relative IRIs
resolved against a base, double-quoted string literals with an optional
``^^`` datatype, ``;`` / ``,`` continuation lists, ``.`` terminators and
``#`` comments.  No blank nodes, no collections, no multiline strings, no
language tags.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Union
from urllib.parse import urljoin, urlsplit

XSD_STRING = "http://www.w3.org/2001/XMLSchema#string"
RDF_TYPE = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type"

# Namespaces used by the stack's own documents.
ACL_NS = "http://www.w3.org/ns/auth/acl#"
FOAF_NS = "http://xmlns.com/foaf/0.1/"
LDP_NS = "http://www.w3.org/ns/ldp#"
PIM_NS = "http://www.w3.org/ns/pim/space#"
GENPOD_NS = "https://example.org/ns/genpod#"

_SCHEME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.-]*:")
# Characters Turtle forbids inside <...> (plus all of C0 and space).
_IRI_FORBIDDEN = set('<>"{}|^`\\')


def resolve_reference(base: str, ref: str) -> str:
    """RFC 3986 resolution as the parser applies it; absolute refs pass through."""
    if _SCHEME_RE.match(ref):
        return ref
    resolved = urljoin(base, ref)
    # urljoin drops an empty fragment; namespaces like ...acl# need it kept.
    if ref.endswith("#") and not resolved.endswith("#"):
        resolved += "#"
    return resolved


class TurtleSyntaxError(ValueError):
    """Input outside the Turtle subset; carries the offending position."""

    def __init__(self, line: int, column: int, message: str):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
        self.message = message


class UnknownPrefixError(TurtleSyntaxError):
    """A prefixed name used a prefix with no @prefix directive."""


@dataclass(frozen=True, order=True)
class Iri:
    """An absolute IRI, optionally carrying a fragment."""

    value: str

    def __post_init__(self):
        if not self.value:
            raise ValueError("IRI must be non-empty")
        if not _SCHEME_RE.match(self.value):
            raise ValueError(f"IRI must be absolute (missing scheme): {self.value!r}")
        for ch in self.value:
            if ord(ch) <= 0x20 or ch in _IRI_FORBIDDEN:
                raise ValueError(f"IRI contains forbidden character {ch!r}: {self.value!r}")

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, order=True)
class Literal:
    """A string literal; lexical form is preserved byte-exactly."""

    lexical: str
    datatype: Iri = field(default_factory=lambda: Iri(XSD_STRING))

    def __str__(self) -> str:
        return self.lexical


Term = Union[Iri, Literal]


@dataclass(frozen=True)
class Triple:
    subject: Iri
    predicate: Iri
    object: Term


def _term_key(term: Term) -> tuple:
    if isinstance(term, Iri):
        return (0, term.value, "")
    return (1, term.lexical, term.datatype.value)


def _triple_key(t: Triple) -> tuple:
    return (t.subject.value, t.predicate.value, _term_key(t.object))


class Graph:
    """A set of triples with deterministic (s, p, o lexicographic) iteration."""

    def __init__(self, triples: Iterable[Triple] = ()):
        self._triples: set[Triple] = set(triples)

    def add(self, triple: Triple) -> None:
        self._triples.add(triple)

    def __len__(self) -> int:
        return len(self._triples)

    def __contains__(self, triple: Triple) -> bool:
        return triple in self._triples

    def __iter__(self) -> Iterator[Triple]:
        return iter(sorted(self._triples, key=_triple_key))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self._triples == other._triples

    def __repr__(self) -> str:
        return f"Graph({len(self._triples)} triples)"

    def match(
        self,
        subject: Optional[Iri] = None,
        predicate: Optional[Iri] = None,
        object: Optional[Term] = None,
    ) -> list[Triple]:
        """All triples matching the pattern; ``None`` is a wildcard."""
        found = [
            t
            for t in self._triples
            if (subject is None or t.subject == subject)
            and (predicate is None or t.predicate == predicate)
            and (object is None or t.object == object)
        ]
        found.sort(key=_triple_key)
        return found

    def objects(self, subject: Iri, predicate: Iri) -> list[Term]:
        return [t.object for t in self.match(subject, predicate)]

    def subjects(self, predicate: Iri, object: Term) -> list[Iri]:
        return sorted({t.subject for t in self.match(None, predicate, object)})


def match(g: Graph, s: Optional[Iri], p: Optional[Iri], o: Optional[Term]) -> list[Triple]:
    """Module-level alias for :meth:`Graph.match`."""
    return g.match(s, p, o)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_ECHAR = {"t": "\t", "b": "\b", "n": "\n", "r": "\r", "f": "\f", '"': '"', "'": "'", "\\": "\\"}

_PNAME_RE = re.compile(r"([A-Za-z][A-Za-z0-9_-]*)?:([A-Za-z0-9_][A-Za-z0-9_.-]*)?")


@dataclass(frozen=True)
class _Token:
    kind: str  # 'iriref' | 'pname' | 'string' | 'a' | 'prefix' | 'punct' | 'dtsep' | 'eof'
    value: str
    line: int
    column: int


class _Lexer:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.line = 1
        self.col = 1

    def _err(self, message: str, line: int | None = None, col: int | None = None):
        raise TurtleSyntaxError(line or self.line, col or self.col, message)

    def _advance(self, n: int = 1) -> None:
        for _ in range(n):
            if self.pos < len(self.text):
                if self.text[self.pos] == "\n":
                    self.line += 1
                    self.col = 1
                else:
                    self.col += 1
                self.pos += 1

    def tokens(self) -> Iterator[_Token]:
        text = self.text
        while True:
            while self.pos < len(text) and text[self.pos] in " \t\r\n":
                self._advance()
            if self.pos < len(text) and text[self.pos] == "#":
                while self.pos < len(text) and text[self.pos] != "\n":
                    self._advance()
                continue
            if self.pos >= len(text):
                while True:
                    yield _Token("eof", "", self.line, self.col)
            line, col = self.line, self.col
            ch = text[self.pos]
            if ch == "<":
                yield self._iriref(line, col)
            elif ch == '"':
                yield self._string(line, col)
            elif ch in ".;,":
                self._advance()
                yield _Token("punct", ch, line, col)
            elif ch == "^":
                if text[self.pos : self.pos + 2] != "^^":
                    self._err("expected '^^'", line, col)
                self._advance(2)
                yield _Token("dtsep", "^^", line, col)
            elif ch == "@":
                word = re.match(r"@[A-Za-z]+", text[self.pos :])
                if not word or word.group(0) != "@prefix":
                    self._err("only the @prefix directive is supported", line, col)
                self._advance(len("@prefix"))
                yield _Token("prefix", "@prefix", line, col)
            else:
                yield self._name(line, col)

    def _iriref(self, line: int, col: int) -> _Token:
        self._advance()  # consume '<'
        start = self.pos
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch == ">":
                value = self.text[start : self.pos]
                self._advance()
                return _Token("iriref", value, line, col)
            if ord(ch) <= 0x20 or ch in '<"{}|^`\\':
                self._err(f"character {ch!r} not allowed in IRI", line, col)
            self._advance()
        self._err("unterminated IRI", line, col)

    def _string(self, line: int, col: int) -> _Token:
        self._advance()  # consume '"'
        out: list[str] = []
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch == '"':
                self._advance()
                return _Token("string", "".join(out), line, col)
            if ch == "\n" or ch == "\r":
                self._err("newline in string literal (multiline strings unsupported)", line, col)
            if ch == "\\":
                self._advance()
                if self.pos >= len(self.text):
                    self._err("unterminated escape", line, col)
                esc = self.text[self.pos]
                if esc in _ECHAR:
                    out.append(_ECHAR[esc])
                    self._advance()
                elif esc in "uU":
                    width = 4 if esc == "u" else 8
                    hexs = self.text[self.pos + 1 : self.pos + 1 + width]
                    if len(hexs) != width or not re.fullmatch(r"[0-9A-Fa-f]+", hexs):
                        self._err(f"malformed \\{esc} escape", line, col)
                    out.append(chr(int(hexs, 16)))
                    self._advance(1 + width)
                else:
                    self._err(f"unknown escape '\\{esc}'", line, col)
            else:
                out.append(ch)
                self._advance()
        self._err("unterminated string literal", line, col)

    def _name(self, line: int, col: int) -> _Token:
        rest = self.text[self.pos :]
        if rest.startswith("a") and (len(rest) == 1 or not re.match(r"[A-Za-z0-9_:.-]", rest[1])):
            self._advance()
            return _Token("a", "a", line, col)
        m = _PNAME_RE.match(rest)
        if not m:
            self._err(f"unexpected character {rest[0]!r}", line, col)
        name = m.group(0)
        # A trailing '.' belongs to the statement terminator, not the local name.
        while name.endswith("."):
            name = name[:-1]
        if ":" not in name:
            self._err(f"unexpected token {name!r}", line, col)
        self._advance(len(name))
        return _Token("pname", name, line, col)


class _Parser:
    def __init__(self, text: str, base: Iri):
        self._tokens = _Lexer(text).tokens()
        self.base = base.value
        self.prefixes: dict[str, str] = {}
        self.graph = Graph()
        self._tok = next(self._tokens)

    def _next(self) -> _Token:
        tok = self._tok
        self._tok = next(self._tokens)
        return tok

    def _err(self, tok: _Token, message: str):
        if tok.kind == "eof":
            message += " (unexpected end of input)"
        raise TurtleSyntaxError(tok.line, tok.column, message)

    def _expect_punct(self, ch: str) -> None:
        tok = self._next()
        if tok.kind != "punct" or tok.value != ch:
            self._err(tok, f"expected {ch!r}, found {tok.value!r}")

    def parse(self) -> Graph:
        while self._tok.kind != "eof":
            if self._tok.kind == "prefix":
                self._directive()
            else:
                self._triples()
        return self.graph

    def _directive(self) -> None:
        self._next()  # '@prefix'
        tok = self._next()
        if tok.kind != "pname" or tok.value.split(":", 1)[1]:
            self._err(tok, "expected prefix name ending in ':'")
        shortname = tok.value[:-1]
        iritok = self._next()
        if iritok.kind != "iriref":
            self._err(iritok, "expected namespace IRI after prefix name")
        self.prefixes[shortname] = self._resolve(iritok)
        self._expect_punct(".")

    def _resolve(self, tok: _Token) -> str:
        resolved = resolve_reference(self.base, tok.value)
        try:
            Iri(resolved)
        except ValueError as exc:
            self._err(tok, str(exc))
        return resolved

    def _iri(self, tok: _Token) -> Iri:
        if tok.kind == "iriref":
            return Iri(self._resolve(tok))
        if tok.kind == "pname":
            prefix, local = tok.value.split(":", 1)
            if prefix not in self.prefixes:
                raise UnknownPrefixError(tok.line, tok.column, f"unknown prefix {prefix + ':'!r}")
            return Iri(self.prefixes[prefix] + local)
        self._err(tok, f"expected IRI, found {tok.value!r}")
        raise AssertionError("unreachable")

    def _object(self) -> Term:
        tok = self._next()
        if tok.kind == "string":
            if self._tok.kind == "dtsep":
                self._next()
                dtype = self._iri(self._next())
                return Literal(tok.value, dtype)
            return Literal(tok.value)
        if tok.kind == "a":
            self._err(tok, "keyword 'a' is only valid in the predicate position")
        return self._iri(tok)

    def _triples(self) -> None:
        subject = self._iri(self._next())
        while True:
            verbtok = self._next()
            if verbtok.kind == "a":
                predicate = Iri(RDF_TYPE)
            else:
                predicate = self._iri(verbtok)
            while True:
                self.graph.add(Triple(subject, predicate, self._object()))
                if self._tok.kind == "punct" and self._tok.value == ",":
                    self._next()
                    continue
                break
            tok = self._next()
            if tok.kind == "punct" and tok.value == ";":
                # Turtle allows a dangling ';' before the final '.'.
                if self._tok.kind == "punct" and self._tok.value == ".":
                    self._next()
                    return
                continue
            if tok.kind == "punct" and tok.value == ".":
                return
            self._err(tok, f"expected ';' or '.', found {tok.value!r}")


def parse_turtle(text: str, base: Iri) -> Graph:
    """Parse a Turtle-subset document, absolutizing all IRIs against ``base``."""
    return _Parser(text, base).parse()


# ---------------------------------------------------------------------------
# Serializer
# ---------------------------------------------------------------------------

_LOCAL_SAFE_RE = re.compile(r"[A-Za-z][A-Za-z0-9_-]*$")

_STRING_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}


def _escape_string(s: str) -> str:
    out: list[str] = []
    for ch in s:
        if ch in _STRING_ESCAPES:
            out.append(_STRING_ESCAPES[ch])
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04X}")
        else:
            out.append(ch)
    return "".join(out)


def relative_reference(iri: str, base: str) -> Optional[str]:
    """A relative form of ``iri`` against ``base``, or None when none exists.

    Covers the forms pod documents need: the document itself, its fragments,
    and resources under the document's directory. The candidate is only
    returned when it provably resolves back to ``iri``.
    """
    candidate: Optional[str] = None
    if iri == base:
        candidate = ""
    elif iri.startswith(base + "#"):
        candidate = iri[len(base):]
    else:
        path = urlsplit(base).path
        if "/" in path:
            docdir = base[: base.rfind("/") + 1]
            if iri == docdir:
                candidate = "."
            elif iri.startswith(docdir):
                candidate = iri[len(docdir):]
    if candidate is not None and resolve_reference(base, candidate) == iri:
        return candidate
    return None


def serialize_turtle(
    g: Graph,
    prefixes: Optional[dict[str, str | Iri]] = None,
    base: Optional[Iri] = None,
    relativize: Optional[set] = None,
) -> str:
    """Deterministic Turtle for the subset; output re-parses (against ``base``,
    when given) to a graph equal to ``g``.

    ``prefixes`` maps short names to namespace IRIs; only prefixes actually
    used by the graph are emitted as directives. When ``base`` is given, the
    IRIs listed in ``relativize`` are written as relative references so the
    document stays valid if the resource tree moves to another origin;
    everything else (notably agent WebIDs) stays absolute.
    """
    namespaces = {name: str(ns) for name, ns in (prefixes or {}).items()}
    # Longest namespace wins; ties broken by short name for determinism.
    by_length = sorted(namespaces.items(), key=lambda kv: (-len(kv[1]), kv[0]))
    used: set[str] = set()
    relative_ok = {i.value if isinstance(i, Iri) else i for i in (relativize or set())}

    def shorten(iri: Iri) -> Optional[str]:
        for name, ns in by_length:
            if iri.value.startswith(ns):
                local = iri.value[len(ns):]
                if local == "" or _LOCAL_SAFE_RE.fullmatch(local):
                    used.add(name)
                    return f"{name}:{local}"
        return None

    def render_iri(iri: Iri) -> str:
        if base is not None and iri.value in relative_ok:
            rel = relative_reference(iri.value, base.value)
            if rel is not None:
                return f"<{rel}>"
        return shorten(iri) or f"<{iri.value}>"

    def render_term(term: Term) -> str:
        if isinstance(term, Iri):
            return render_iri(term)
        rendered = f'"{_escape_string(term.lexical)}"'
        if term.datatype.value != XSD_STRING:
            rendered += f"^^{render_iri(term.datatype)}"
        return rendered

    blocks: list[str] = []
    by_subject: dict[Iri, list[Triple]] = {}
    for triple in g:
        by_subject.setdefault(triple.subject, []).append(triple)
    for subject in sorted(by_subject, key=lambda s: s.value):
        preds: dict[Iri, list[Term]] = {}
        for triple in by_subject[subject]:
            preds.setdefault(triple.predicate, []).append(triple.object)
        lines: list[str] = []
        for predicate in sorted(preds, key=lambda p: p.value):
            verb = "a" if predicate.value == RDF_TYPE else render_iri(predicate)
            objects = ", ".join(render_term(o) for o in sorted(preds[predicate], key=_term_key))
            lines.append(f"{verb} {objects}")
        body = " ;\n    ".join(lines)
        blocks.append(f"{render_iri(subject)} {body} .")

    header = [f"@prefix {name}: <{namespaces[name]}> ." for name in sorted(used)]
    parts = []
    if header:
        parts.append("\n".join(header))
    parts.extend(blocks)
    return "\n\n".join(parts) + ("\n" if parts else "")
