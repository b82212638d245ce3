"""HTML parsing, DOM graph construction, tokenization, answer location.

The pipeline is: parse_html -> build_dom_graph -> ingest, producing one
HTML token per retained DOM node and a flat text-token stream that
concatenates the text nodes in preorder.
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from html.parser import HTMLParser
from typing import NamedTuple

import numpy as np

from .errors import EmptyDocument, VocabError

PAD_ID = 0
UNK_ID = 1
UNK_TAG_ID = 0

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")
_WS_RE = re.compile(r"\s+")

# Elements whose content is never visible text.
_SUPPRESSED = {"script", "style", "template", "noscript", "head"}

_VOID = {
    "area", "base", "br", "col", "embed", "hr", "img", "input",
    "link", "meta", "param", "source", "track", "wbr",
}

# HTML5 sibling-style implicit closes: an incoming start tag pops the
# current open element while it is in the mapped set.  Nested formatting
# reconstruction (adoption agency) is out of scope.
_BLOCK = {
    "address", "article", "aside", "blockquote", "details", "div", "dl",
    "fieldset", "figcaption", "figure", "footer", "form", "h1", "h2", "h3",
    "h4", "h5", "h6", "header", "hr", "main", "menu", "nav", "ol", "p",
    "pre", "section", "table", "ul",
}
_CLOSES: dict[str, frozenset[str]] = {t: frozenset({"p"}) for t in _BLOCK}
_CLOSES["li"] = frozenset({"p", "li"})
_CLOSES["dt"] = _CLOSES["dd"] = frozenset({"p", "dt", "dd"})
_CLOSES["td"] = _CLOSES["th"] = frozenset({"p", "td", "th"})
_CLOSES["tr"] = frozenset({"p", "td", "th", "tr"})
_CLOSES["tbody"] = _CLOSES["thead"] = _CLOSES["tfoot"] = frozenset(
    {"p", "td", "th", "tr", "tbody", "thead", "tfoot"}
)
_CLOSES["option"] = frozenset({"option"})
_CLOSES["optgroup"] = frozenset({"option", "optgroup"})


class RawElement:
    """Parse-tree element: tag plus interleaved element/text children."""

    __slots__ = ("tag", "children")

    def __init__(self, tag: str):
        self.tag = tag
        self.children: list[RawElement | str] = []


class _TreeBuilder(HTMLParser):
    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.root = RawElement("html")
        self.stack = [self.root]
        self._suppress: list[str] = []

    def handle_starttag(self, tag, attrs):
        if self._suppress:
            if tag in _SUPPRESSED:
                self._suppress.append(tag)
            return
        if tag in _SUPPRESSED:
            self._suppress.append(tag)
            return
        for closable in (_CLOSES.get(tag, ()),):
            while len(self.stack) > 1 and self.stack[-1].tag in closable:
                self.stack.pop()
        node = RawElement(tag)
        self.stack[-1].children.append(node)
        if tag not in _VOID:
            self.stack.append(node)

    def handle_startendtag(self, tag, attrs):
        if self._suppress or tag in _SUPPRESSED:
            return
        self.stack[-1].children.append(RawElement(tag))

    def handle_endtag(self, tag):
        if self._suppress:
            if tag == self._suppress[-1]:
                self._suppress.pop()
            return
        if tag in _VOID:
            return
        for i in range(len(self.stack) - 1, 0, -1):
            if self.stack[i].tag == tag:
                del self.stack[i:]
                return
        # unmatched end tag: ignored

    def handle_data(self, data):
        if self._suppress or not data:
            return
        self.stack[-1].children.append(data)


def parse_html(html: str) -> RawElement:
    """Parse markup into an element tree under a synthetic root.

    Script/style/template/noscript/head content and comments are removed.
    If exactly one top-level element remains it becomes the root; otherwise
    the synthetic root wraps the fragments.  Raises EmptyDocument when
    nothing visible remains.
    """
    builder = _TreeBuilder()
    builder.feed(html)
    builder.close()
    root = builder.root
    elems = [c for c in root.children if isinstance(c, RawElement)]
    texts = [c for c in root.children if isinstance(c, str) and c.strip()]
    if not elems and not texts:
        raise EmptyDocument("no visible content after parsing")
    if len(elems) == 1 and not texts:
        return elems[0]
    return root


@dataclass(frozen=True)
class DomNode:
    id: int
    tag: str
    parent: int | None
    children: tuple[int, ...]
    text: str  # normalized direct text, '' for structural nodes
    is_text: bool


@dataclass(frozen=True)
class DomGraph:
    nodes: tuple[DomNode, ...]
    root: int
    text_node_ids: tuple[int, ...]  # preorder

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def normalize_ws(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def tokenize_words(text: str) -> list[str]:
    """Lowercase and split into word runs and standalone punctuation marks."""
    return _TOKEN_RE.findall(text.lower())


class _Work:
    """Mutable node used while pruning and re-indexing."""

    __slots__ = ("tag", "text", "children", "words")

    def __init__(self, tag: str, text: str):
        self.tag = tag
        self.text = text
        self.children: list[_Work] = []
        self.words: list[str] | None = None


def _to_work(elem: RawElement) -> _Work:
    # pieces joined with a space: text split by inline elements stays split
    direct = " ".join(c for c in elem.children if isinstance(c, str))
    node = _Work(elem.tag, normalize_ws(direct))
    node.children = [_to_work(c) for c in elem.children if isinstance(c, RawElement)]
    return node


def _prune_no_text(node: _Work) -> bool:
    """Drop child branches without any text node; True if subtree has text."""
    node.children = [c for c in node.children if _prune_no_text(c)]
    return bool(node.text) or bool(node.children)


def _preorder(root: _Work) -> list[_Work]:
    out, stack = [], [root]
    while stack:
        n = stack.pop()
        out.append(n)
        stack.extend(reversed(n.children))
    return out


def _drop_last_text(root: _Work) -> None:
    """Remove the last text node in preorder plus ancestors made childless."""
    parents: dict[int, _Work | None] = {id(root): None}
    last = None
    for n in _preorder(root):
        for c in n.children:
            parents[id(c)] = n
        if n.text:
            last = n
    if last is None or last is root:
        if last is root:
            root.text = ""
        return
    victim: _Work = last
    while True:
        parent = parents[id(victim)]
        if parent is None:
            break
        parent.children.remove(victim)
        if parent.children or parent.text or parents[id(parent)] is None:
            break
        victim = parent


def _freeze(root: _Work) -> DomGraph:
    order = _preorder(root)
    ids = {id(n): i for i, n in enumerate(order)}
    parent_of: dict[int, int] = {}
    for n in order:
        for c in n.children:
            parent_of[id(c)] = ids[id(n)]
    nodes = []
    text_ids = []
    for i, n in enumerate(order):
        parent = parent_of.get(id(n))
        is_text = bool(n.text)
        if is_text:
            text_ids.append(i)
        nodes.append(
            DomNode(
                id=i,
                tag=n.tag,
                parent=parent,
                children=tuple(ids[id(c)] for c in n.children),
                text=n.text,
                is_text=is_text,
            )
        )
    return DomGraph(nodes=tuple(nodes), root=0, text_node_ids=tuple(text_ids))


def build_dom_graph(tree: RawElement, max_html_tokens: int) -> DomGraph:
    """Mark text nodes, prune textless branches, cap node count, re-index.

    A text node is an element whose direct text concatenates to a non-empty
    string.  When over the cap, whole text nodes are dropped from the end of
    preorder (with ancestors made childless) until the count fits.  The root
    survives even if everything else goes.
    """
    root = _to_work(tree)
    _prune_no_text(root)
    while len(_preorder(root)) > max_html_tokens:
        before = sum(1 for n in _preorder(root) if n.text)
        _drop_last_text(root)
        after = sum(1 for n in _preorder(root) if n.text)
        if after == before:  # nothing left to drop
            break
    return _freeze(root)


@dataclass(frozen=True)
class TokenizedDoc:
    """Model-ready token arrays for a single document."""

    tag_names: tuple[str, ...]    # per DOM node, preorder
    tag_ids: np.ndarray           # (n_html,)
    node_spans: np.ndarray        # (n_html, 2) [start, end) into flat stream
    flat_word_ids: np.ndarray     # (n_text,)
    flat_words: tuple[str, ...]
    flat_node: np.ndarray         # (n_text,) owning node id
    text_node_ids: tuple[int, ...]

    @property
    def n_html(self) -> int:
        return len(self.tag_ids)

    @property
    def n_text(self) -> int:
        return len(self.flat_word_ids)


class Span(NamedTuple):
    """A span of the flat text stream; end is inclusive."""

    node: int
    begin: int
    end: int


@dataclass(frozen=True)
class IngestCaps:
    max_html_tokens: int = 256
    max_text_tokens: int = 2048


@dataclass
class Vocab:
    """Word/tag/field id maps with reserved PAD and UNK slots."""

    words: dict[str, int] = field(default_factory=dict)
    tags: dict[str, int] = field(default_factory=dict)
    fields: dict[str, int] = field(default_factory=dict)

    def word_id(self, w: str) -> int:
        return self.words.get(w, UNK_ID)

    def tag_id(self, t: str) -> int:
        return self.tags.get(t, UNK_TAG_ID)

    def field_id(self, f: str) -> int:
        try:
            return self.fields[f]
        except KeyError:
            raise VocabError(f"unknown field {f!r}")

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def n_tags(self) -> int:
        return len(self.tags)

    @property
    def n_fields(self) -> int:
        return len(self.fields)

    def to_json(self) -> str:
        payload = {"words": self.words, "tags": self.tags, "fields": self.fields}
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        d = json.loads(text)
        return cls(words=d["words"], tags=d["tags"], fields=d["fields"])

    def sha256(self) -> str:
        return hashlib.sha256(self.to_json().encode("utf-8")).hexdigest()


def tokenize_text(text: str, vocab: Vocab) -> list[int]:
    """Tokenize and map to word ids (unknown words map to UNK)."""
    return [vocab.word_id(w) for w in tokenize_words(text)]


def ingest(html: str, vocab: Vocab, caps: IngestCaps = IngestCaps()) -> tuple[DomGraph, TokenizedDoc]:
    """Full pipeline from markup to model-ready arrays.

    Text tokens are truncated per node in preorder once the total budget is
    spent; nodes truncated to zero stop being text nodes and are re-pruned,
    which re-indexes the graph.  Raises EmptyDocument if no text survives.
    """
    graph = build_dom_graph(parse_html(html), caps.max_html_tokens)
    budget = caps.max_text_tokens
    words: dict[int, list[str]] = {}
    zeroed = False
    for nid in graph.text_node_ids:
        toks = tokenize_words(graph.nodes[nid].text)[: max(0, budget)]
        budget -= len(toks)
        if toks:
            words[nid] = toks
        else:
            zeroed = True
    if not words:
        raise EmptyDocument("no text tokens after ingest")
    if zeroed:
        graph, words = _rebuild_without_empty(graph, words)
    return graph, _assemble(graph, words, vocab)


def _rebuild_without_empty(
    graph: DomGraph, words: dict[int, list[str]]
) -> tuple[DomGraph, dict[int, list[str]]]:
    """Re-prune after truncation zeroed out some text nodes."""
    work = [_Work(n.tag, n.text if n.id in words else "") for n in graph.nodes]
    for n in graph.nodes:
        work[n.id].children = [work[c] for c in n.children]
        work[n.id].words = words.get(n.id)
    root = work[graph.root]
    _prune_no_text(root)
    order = _preorder(root)
    new_graph = _freeze(root)
    new_words = {
        i: n.words for i, n in enumerate(order) if n.words and new_graph.nodes[i].is_text
    }
    return new_graph, new_words


def _assemble(graph: DomGraph, words: dict[int, list[str]], vocab: Vocab) -> TokenizedDoc:
    spans = np.zeros((graph.n_nodes, 2), dtype=np.int64)
    flat_ids: list[int] = []
    flat_words: list[str] = []
    flat_node: list[int] = []
    pos = 0
    for nid in graph.text_node_ids:
        toks = words[nid]
        spans[nid] = (pos, pos + len(toks))
        flat_words.extend(toks)
        flat_ids.extend(vocab.word_id(w) for w in toks)
        flat_node.extend([nid] * len(toks))
        pos += len(toks)
    return TokenizedDoc(
        tag_names=tuple(n.tag for n in graph.nodes),
        tag_ids=np.array([vocab.tag_id(n.tag) for n in graph.nodes], dtype=np.int64),
        node_spans=spans,
        flat_word_ids=np.array(flat_ids, dtype=np.int64),
        flat_words=tuple(flat_words),
        flat_node=np.array(flat_node, dtype=np.int64),
        text_node_ids=graph.text_node_ids,
    )


def locate_answer(doc: TokenizedDoc, answer: str) -> Span | None:
    """First occurrence of the answer's token sequence within a single node.

    Scans text nodes in preorder, then offsets left to right; matching is on
    word strings, so it is independent of vocabulary coverage.  Returns None
    when the answer does not occur (not-found is a value, not an error).
    """
    needle = tokenize_words(answer)
    if not needle:
        return None
    k = len(needle)
    for nid in doc.text_node_ids:
        start, end = doc.node_spans[nid]
        hay = doc.flat_words[start:end]
        for off in range(len(hay) - k + 1):
            if list(hay[off : off + k]) == needle:
                return Span(node=int(nid), begin=int(start + off), end=int(start + off + k - 1))
    return None
