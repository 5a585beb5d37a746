"""Deterministic multi-scale hypergraph construction.

Three hyperedge families are generated from a :class:`ScalePlan` alone:

* intra-scale: runs of ``size`` nodes within one scale, spaced ``hop`` apart;
* inter-scale: the same runs plus the parent node of the next coarser scale;
* mixed-scale: a finest-scale run plus one ancestor node from every coarser
  scale.

For hop k, the i-th run starts at d = floor((i-1)/k) * size * k
+ (i-1) % k + 1 in within-scale coordinates, so consecutive hyperedges
interleave across the k phases before jumping to the next block.  With k = 1
this reduces to the plain partition d = (i-1) * size + 1.  Hyperedges whose
indices would fall outside a scale are dropped, never padded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyHypergraphError
from .scales import ScalePlan

INTRA, INTER, MIXED = "intra", "inter", "mixed"


@dataclass(frozen=True)
class Hyperedge:
    """An ordered set of global node ids with its family tags.

    ``scale`` is the (fine) scale of intra/inter edges and 0 for mixed edges,
    which span every scale.  ``hop`` is 1 for the original family.
    For inter and mixed edges the coarse nodes come first, coarsest first.
    """

    nodes: tuple[int, ...]
    kind: str
    scale: int
    hop: int


@dataclass
class Hypergraph:
    """Edge list plus its incidence and degree views.

    ``incidence[n, m]`` is 1.0 iff node id n+1 belongs to ``edges[m]``;
    ``node_degrees`` / ``edge_degrees`` are the row / column sums.
    """

    node_count: int
    edges: list[Hyperedge]
    incidence: np.ndarray
    node_degrees: np.ndarray
    edge_degrees: np.ndarray

    @property
    def edge_count(self) -> int:
        return len(self.edges)


def _run_starts(size: int, hop: int, length: int):
    """Yield every start index d (1-based) with d <= length, in i order."""
    i = 1
    while True:
        d = ((i - 1) // hop) * size * hop + (i - 1) % hop + 1
        if d > length:
            return
        yield d
        i += 1


def intra_hyperedges(plan: ScalePlan, sizes, hop: int) -> list[Hyperedge]:
    """Within-scale runs of ``sizes[s-1]`` nodes spaced ``hop`` apart."""
    sizes = _norm_sizes(plan, sizes)
    if hop < 1:
        raise ConfigError("hop must be >= 1")
    out: list[Hyperedge] = []
    for scale, h in enumerate(plan.horizons, start=1):
        size = sizes[scale - 1]
        offset = plan.scale_offset(scale)
        for d in _run_starts(size, hop, h):
            last = d + (size - 1) * hop
            if last > h:
                continue
            nodes = tuple(offset + d + j * hop for j in range(size))
            out.append(Hyperedge(nodes, INTRA, scale, hop))
    return out


def inter_hyperedges(plan: ScalePlan, sizes, hop: int) -> list[Hyperedge]:
    """Fine-scale runs joined with their parent at the next coarser scale.

    The parent of a run starting at d is position ceil(d / window) of scale
    s+1 and is stored first.  Runs whose parent would fall past the coarser
    scale's end (possible because remainder steps were dropped) are skipped.
    """
    sizes = _norm_sizes(plan, sizes)
    if hop < 1:
        raise ConfigError("hop must be >= 1")
    out: list[Hyperedge] = []
    for scale in range(1, plan.n_scales):
        h, h_up = plan.horizons[scale - 1], plan.horizons[scale]
        size = sizes[scale - 1]
        window = plan.windows[scale - 1]
        offset = plan.scale_offset(scale)
        offset_up = plan.scale_offset(scale + 1)
        for d in _run_starts(size, hop, h):
            last = d + (size - 1) * hop
            parent = math.ceil(d / window)
            if last > h or parent > h_up:
                continue
            nodes = (offset_up + parent,) + tuple(
                offset + d + j * hop for j in range(size)
            )
            out.append(Hyperedge(nodes, INTER, scale, hop))
    return out


def mixed_hyperedges(plan: ScalePlan, run_len: int, hop: int) -> list[Hyperedge]:
    """Finest-scale runs joined with one ancestor per coarser scale.

    The ancestor at scale s sits at position ceil(d / prod(windows[:s-1])),
    i.e. the coarse position covering the run's start.  Ancestors are stored
    coarsest first, then the run.
    """
    if run_len < 2:
        raise ConfigError("mixed run length must be >= 2")
    if hop < 1:
        raise ConfigError("hop must be >= 1")
    if plan.n_scales == 1:
        return []
    out: list[Hyperedge] = []
    h1 = plan.horizons[0]
    for d in _run_starts(run_len, hop, h1):
        last = d + (run_len - 1) * hop
        if last > h1:
            continue
        ancestors = []
        ok = True
        divisor = 1
        for scale in range(2, plan.n_scales + 1):
            divisor *= plan.windows[scale - 2]
            pos = math.ceil(d / divisor)
            if pos > plan.horizons[scale - 1]:
                ok = False
                break
            ancestors.append(plan.scale_offset(scale) + pos)
        if not ok:
            continue
        nodes = tuple(reversed(ancestors)) + tuple(
            d + j * hop for j in range(run_len)
        )
        out.append(Hyperedge(nodes, MIXED, 0, hop))
    return out


def _norm_sizes(plan: ScalePlan, sizes) -> tuple[int, ...]:
    if isinstance(sizes, int):
        sizes = (sizes,) * plan.n_scales
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != plan.n_scales:
        raise ConfigError(
            f"need one hyperedge size per scale ({plan.n_scales}), got {len(sizes)}"
        )
    if any(s < 2 for s in sizes):
        raise ConfigError("hyperedge sizes must be >= 2")
    return sizes


def assemble(
    node_count: int,
    intra: list[Hyperedge],
    inter: list[Hyperedge],
    mixed: list[Hyperedge],
    use_intra: bool = True,
    use_inter: bool = True,
    use_mixed: bool = True,
) -> Hypergraph:
    """Concatenate the enabled families and build incidence and degrees."""
    edges: list[Hyperedge] = []
    if use_intra:
        edges.extend(intra)
    if use_inter:
        edges.extend(inter)
    if use_mixed:
        edges.extend(mixed)
    if not edges:
        raise EmptyHypergraphError("no hyperedges were generated or enabled")
    incidence = np.zeros((node_count, len(edges)))
    for m, e in enumerate(edges):
        if len(set(e.nodes)) != len(e.nodes):
            raise ConfigError(f"hyperedge {m + 1} repeats a node")
        for n in e.nodes:
            if not 1 <= n <= node_count:
                raise ConfigError(
                    f"hyperedge {m + 1} references node {n} outside 1..{node_count}"
                )
            incidence[n - 1, m] = 1.0
    return Hypergraph(
        node_count=node_count,
        edges=edges,
        incidence=incidence,
        node_degrees=incidence.sum(axis=1),
        edge_degrees=incidence.sum(axis=0),
    )


def build_hypergraph(plan: ScalePlan, cfg) -> Hypergraph:
    """Assemble the hypergraph for a config (hop set {1, cfg.hop})."""
    sizes = cfg.sizes_per_scale()
    hops = sorted({1, cfg.hop})
    intra = [e for k in hops for e in intra_hyperedges(plan, sizes, k)]
    inter = [e for k in hops for e in inter_hyperedges(plan, sizes, k)]
    mixed = [e for k in hops for e in mixed_hyperedges(plan, sizes[0], k)]
    return assemble(
        plan.total_nodes,
        intra,
        inter,
        mixed,
        use_intra=INTRA in cfg.edge_kinds,
        use_inter=INTER in cfg.edge_kinds,
        use_mixed=MIXED in cfg.edge_kinds,
    )


def dump_sparse(g: Hypergraph) -> str:
    """One line per incidence entry, bit-exact across identical configs.

    Format: ``edge_id<TAB>node_id<TAB>kind<TAB>scale<TAB>hop`` with 1-based
    ids, sorted by (edge_id, node_id).
    """
    lines = []
    for m, e in enumerate(g.edges, start=1):
        for n in sorted(e.nodes):
            lines.append(f"{m}\t{n}\t{e.kind}\t{e.scale}\t{e.hop}")
    return "\n".join(lines) + "\n"
