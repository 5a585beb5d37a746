"""The graph over hyperedges used to mask hyperedge-to-hyperedge attention.

Hyperedges become nodes.  Intra-scale hyperedges are chained by temporal
order (edge i receives from itself and from edge i-1 of the same scale and
hop family); inter- and mixed-scale hyperedges are connected whenever they
share at least one underlying node.  The two blocks are assembled into one
block-diagonal binary adjacency, so attention never crosses the block
boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hypergraph import INTRA, Hyperedge, Hypergraph


@dataclass
class HyperedgeGraph:
    """Block-diagonal adjacency over hyperedges.

    ``order[i]`` is the hypergraph edge index behind adjacency row i; the
    first ``seq_count`` rows are the intra-scale block, the remaining
    ``assoc_count`` rows the inter+mixed block.
    """

    adjacency: np.ndarray
    seq_count: int
    assoc_count: int
    order: list[int]

    @property
    def size(self) -> int:
        return self.seq_count + self.assoc_count


def sequential_adjacency(intra_edges: list[Hyperedge]) -> np.ndarray:
    """Temporal-order adjacency: a[i, j] = 1 iff 0 <= i - j <= 1 and the two
    edges share scale and hop.  Self-loops included; left asymmetric so the
    mask lets information flow from an edge to its successor."""
    n = len(intra_edges)
    a = np.zeros((n, n))
    for i, e in enumerate(intra_edges):
        a[i, i] = 1.0
        if i > 0:
            prev = intra_edges[i - 1]
            if prev.scale == e.scale and prev.hop == e.hop:
                a[i, i - 1] = 1.0
    return a


def association_adjacency(ar_edges: list[Hyperedge]) -> np.ndarray:
    """Shared-node adjacency: a[i, j] = 1 iff the node sets intersect.
    Symmetric with unit diagonal."""
    n = len(ar_edges)
    sets = [frozenset(e.nodes) for e in ar_edges]
    a = np.zeros((n, n))
    for i in range(n):
        a[i, i] = 1.0
        for j in range(i):
            if sets[i] & sets[j]:
                a[i, j] = 1.0
                a[j, i] = 1.0
    return a


def assemble_block(
    a_sr: np.ndarray, a_ar: np.ndarray, order: list[int] | None = None
) -> HyperedgeGraph:
    """Place the two blocks on the diagonal; off-diagonal blocks stay zero."""
    d_sr, d_ar = a_sr.shape[0], a_ar.shape[0]
    a = np.zeros((d_sr + d_ar, d_sr + d_ar))
    a[:d_sr, :d_sr] = a_sr
    a[d_sr:, d_sr:] = a_ar
    if order is None:
        order = list(range(d_sr + d_ar))
    return HyperedgeGraph(adjacency=a, seq_count=d_sr, assoc_count=d_ar, order=order)


def build_edge_graph(g: Hypergraph) -> HyperedgeGraph:
    """Derive the hyperedge graph from an assembled hypergraph."""
    seq_idx = [m for m, e in enumerate(g.edges) if e.kind == INTRA]
    assoc_idx = [m for m, e in enumerate(g.edges) if e.kind != INTRA]
    a_sr = sequential_adjacency([g.edges[m] for m in seq_idx])
    a_ar = association_adjacency([g.edges[m] for m in assoc_idx])
    return assemble_block(a_sr, a_ar, order=seq_idx + assoc_idx)


def dump_adjacency(heg: HyperedgeGraph) -> str:
    """Header with the block split, then one ``i<TAB>j`` line per edge.

    Indices are 1-based adjacency coordinates sorted by (i, j).
    """
    lines = [f"blocks\t{heg.seq_count}\t{heg.assoc_count}"]
    rows, cols = np.nonzero(heg.adjacency)
    for i, j in zip(rows, cols):
        lines.append(f"{i + 1}\t{j + 1}")
    return "\n".join(lines) + "\n"
