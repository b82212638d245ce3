"""Sparse attention topologies derived from the DOM graph and token layout.

Four patterns are materialized as explicit neighbor index structures:
  h2h: per HTML token, graph neighbors (self, parent, children, siblings)
  h2t: per HTML token, its own node's text-token span
  t2h: every text token attends all HTML tokens (represented by a count)
  t2t: per text token, a local window clipped to its own node
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .ingest import DomGraph, TokenizedDoc


class EdgeType(enum.IntEnum):
    SELF = 0
    PARENT = 1
    CHILD = 2
    SIBLING = 3
    FIELD = 4  # attached by the model when field-to-HTML coupling is on


def build_h2h(graph: DomGraph) -> tuple[tuple[tuple[int, EdgeType], ...], ...]:
    """Graph neighbor list per HTML token, typed by relation.

    Siblings share the same parent; anything further (grandparents,
    cousins) is reachable only through stacked layers.
    """
    out = []
    for node in graph.nodes:
        nbrs: list[tuple[int, EdgeType]] = [(node.id, EdgeType.SELF)]
        if node.parent is not None:
            nbrs.append((node.parent, EdgeType.PARENT))
        nbrs.extend((c, EdgeType.CHILD) for c in node.children)
        if node.parent is not None:
            nbrs.extend(
                (s, EdgeType.SIBLING)
                for s in graph.nodes[node.parent].children
                if s != node.id
            )
        out.append(tuple(nbrs))
    return tuple(out)


def build_t2t(doc: TokenizedDoc, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive window [lo, hi] per text token, clipped to the token's node."""
    n = doc.n_text
    lo = np.zeros(n, dtype=np.int64)
    hi = np.zeros(n, dtype=np.int64)
    for nid in doc.text_node_ids:
        s, e = doc.node_spans[nid]
        idx = np.arange(s, e)
        lo[s:e] = np.maximum(s, idx - radius)
        hi[s:e] = np.minimum(e - 1, idx + radius)
    return lo, hi


def build_h2t_t2h(graph: DomGraph, doc: TokenizedDoc) -> tuple[np.ndarray, int]:
    """H2T spans per HTML token ([start,end), empty for non-text nodes) and
    the T2H neighbor count (all HTML tokens, identical for every text token)."""
    return doc.node_spans.copy(), doc.n_html


@dataclass(frozen=True)
class AttentionTopology:
    radius: int
    h2h: tuple[tuple[tuple[int, EdgeType], ...], ...]
    t2t_lo: np.ndarray  # (n_text,)
    t2t_hi: np.ndarray  # (n_text,)
    h2t_spans: np.ndarray  # (n_html, 2)
    n_html: int
    n_text: int


def build_topology(graph: DomGraph, doc: TokenizedDoc, radius: int) -> AttentionTopology:
    """Materialize every pattern's neighbor structure for one document."""
    lo, hi = build_t2t(doc, radius)
    spans, n_html = build_h2t_t2h(graph, doc)
    return AttentionTopology(
        radius=radius,
        h2h=build_h2h(graph),
        t2t_lo=lo,
        t2t_hi=hi,
        h2t_spans=spans,
        n_html=n_html,
        n_text=doc.n_text,
    )
