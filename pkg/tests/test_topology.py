"""Attention topology tests: hand-derived examples plus random-page properties."""
from __future__ import annotations

import numpy as np

from webspan.errors import EmptyDocument
from webspan.ingest import Vocab, ingest
from webspan.topology import EdgeType, build_h2h, build_t2t, build_topology


def make_vocab() -> Vocab:
    words = {"<pad>": 0, "<unk>": 1}
    tags = {"<unk_tag>": 0}
    for t in ["html", "body", "div", "p", "span", "h1", "ul", "li"]:
        tags[t] = len(tags)
    return Vocab(words=words, tags=tags, fields={"name": 0})


EVENT_HTML = (
    "<html><body><h1>Fun Family Fest</h1>"
    "<div><span>Dec 13</span><span>Spark Hall SF</span></div>"
    "<p>Join the fun downtown</p></body></html>"
)


def as_sets(h2h):
    return [set(nbrs) for nbrs in h2h]


def test_h2h_hand_example():
    g, d = ingest(EVENT_HTML, make_vocab())
    sets = as_sets(build_h2h(g))
    E = EdgeType
    assert sets[0] == {(0, E.SELF), (1, E.CHILD)}
    assert sets[1] == {(1, E.SELF), (0, E.PARENT), (2, E.CHILD), (3, E.CHILD), (6, E.CHILD)}
    assert sets[2] == {(2, E.SELF), (1, E.PARENT), (3, E.SIBLING), (6, E.SIBLING)}
    assert sets[3] == {
        (3, E.SELF), (1, E.PARENT), (4, E.CHILD), (5, E.CHILD),
        (2, E.SIBLING), (6, E.SIBLING),
    }
    assert sets[4] == {(4, E.SELF), (3, E.PARENT), (5, E.SIBLING)}
    assert sets[5] == {(5, E.SELF), (3, E.PARENT), (4, E.SIBLING)}
    assert sets[6] == {(6, E.SELF), (1, E.PARENT), (2, E.SIBLING), (3, E.SIBLING)}


def test_t2t_windows_hand_example():
    g, d = ingest(EVENT_HTML, make_vocab())
    # text layout: node2 [0,3), node4 [3,5), node5 [5,8), node6 [8,12)
    lo, hi = build_t2t(d, radius=1)
    assert lo.tolist() == [0, 0, 1, 3, 3, 5, 5, 6, 8, 8, 9, 10]
    assert hi.tolist() == [1, 2, 2, 4, 4, 6, 7, 7, 9, 10, 11, 11]
    lo0, hi0 = build_t2t(d, radius=0)
    assert np.array_equal(lo0, np.arange(12))
    assert np.array_equal(hi0, np.arange(12))
    # radius larger than any node: windows become whole nodes
    lo9, hi9 = build_t2t(d, radius=9)
    assert lo9.tolist()[:5] == [0, 0, 0, 3, 3]
    assert hi9.tolist()[:5] == [2, 2, 2, 4, 4]


def random_page_html(rng: np.random.Generator) -> str:
    """Small random nested page; some nodes structural, some with text."""
    words = ["alpha", "beta", "gamma", "delta", "eps", "42", ","]
    tags = ["div", "p", "span", "ul", "section"]

    def make(depth: int) -> str:
        tag = tags[rng.integers(0, len(tags))]
        has_text = rng.random() < 0.6 or depth >= 3
        inner = ""
        if has_text:
            k = int(rng.integers(1, 6))
            inner += " ".join(words[i] for i in rng.integers(0, len(words), k))
        if depth < 3:
            for _ in range(int(rng.integers(0, 4 - depth))):
                inner += make(depth + 1)
        return f"<{tag}>{inner}</{tag}>"

    return "<body>" + "".join(make(1) for _ in range(int(rng.integers(1, 4)))) + "</body>"


def check_invariants(g, d, topo):
    E = EdgeType
    # h2h: one SELF each, reciprocity, sibling symmetry, no FIELD edges
    sets = as_sets(topo.h2h)
    for i, s in enumerate(sets):
        assert sum(1 for n, e in s if e == E.SELF) == 1
        assert (i, E.SELF) in s
        for n, e in s:
            assert e != E.FIELD
            if e == E.PARENT:
                assert (i, E.CHILD) in sets[n]
                assert g.nodes[i].parent == n
            elif e == E.CHILD:
                assert (i, E.PARENT) in sets[n]
            elif e == E.SIBLING:
                assert (i, E.SIBLING) in sets[n]
                assert g.nodes[i].parent == g.nodes[n].parent
                assert n != i
    # t2t: containment, width, radius, same node
    width = 2 * topo.radius + 1
    for i in range(d.n_text):
        lo, hi = topo.t2t_lo[i], topo.t2t_hi[i]
        assert lo <= i <= hi
        assert hi - lo + 1 <= width
        for j in range(lo, hi + 1):
            assert abs(int(i) - j) <= topo.radius
            assert d.flat_node[j] == d.flat_node[i]
        # maximality: one step beyond the window is out of node or radius
        if lo - 1 >= 0:
            assert d.flat_node[lo - 1] != d.flat_node[i] or i - (lo - 1) > topo.radius
        if hi + 1 < d.n_text:
            assert d.flat_node[hi + 1] != d.flat_node[i] or (hi + 1) - i > topo.radius
    # h2t spans: empty for structural nodes, partition [0, n_text)
    seen = []
    for nid in range(g.n_nodes):
        s, e = topo.h2t_spans[nid]
        if g.nodes[nid].is_text:
            assert e > s
            seen.append((s, e))
        else:
            assert s == e
    seen.sort()
    flat = [i for s, e in seen for i in range(s, e)]
    assert flat == list(range(d.n_text))
    assert topo.n_html == g.n_nodes and topo.n_text == d.n_text


def test_topology_invariants_random_pages():
    v = make_vocab()
    rng = np.random.default_rng(7)
    checked = 0
    for trial in range(150):
        html = random_page_html(rng)
        try:
            g, d = ingest(html, v)
        except EmptyDocument:
            continue  # all-structural page; nothing to check
        r = int(rng.integers(0, 5))
        check_invariants(g, d, build_topology(g, d, r))
        checked += 1
    assert checked > 100
