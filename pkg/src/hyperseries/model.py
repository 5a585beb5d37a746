"""The three-phase hypergraph attention network and its prediction head.

Per block: node embeddings are pooled into hyperedge embeddings through the
incidence matrix; hyperedges exchange information through attention masked
by the hyperedge graph; nodes are rebuilt by a degree-normalised hypergraph
convolution whose incidence weights are themselves learned per head from
(node, hyperedge) pairs.  The last node of every scale feeds an affine head
that emits the forecast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .edgegraph import HyperedgeGraph, build_edge_graph
from .errors import ConfigError, ShapeError
from .hypergraph import Hypergraph, build_hypergraph
from .numerics import (
    Mlp,
    Parameter,
    Tensor,
    add,
    as_tensor,
    concat,
    leaky_relu,
    masked_softmax,
    matmul,
    mean_all,
    mul,
    put_rows,
    reshape,
    scatter_pairs,
    sub,
    take_rows,
    transpose,
    uniform_init,
)
from .scales import MultiScaleSeries, ScaleParams, build_multiscale, plan_scales


class AttentionParams:
    """Learnable tensors of one message-passing block."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, name: str):
        d = cfg.d_model
        self.heads = cfg.heads
        self.mask_constant = cfg.mask_constant
        self.w_query = Parameter(uniform_init(rng, d, d), f"{name}.wq")
        self.w_key = Parameter(uniform_init(rng, d, d), f"{name}.wk")
        self.w_value = Parameter(uniform_init(rng, d, d), f"{name}.wv")
        # One pair scorer and one projection per head; scorers see the
        # concatenated (node, hyperedge) embedding and emit a single logit.
        self.scorers = [
            Mlp([2 * d, d, 1], rng, f"{name}.score{j}") for j in range(cfg.heads)
        ]
        self.projections = [
            Parameter(uniform_init(rng, d, d // cfg.heads), f"{name}.proj{j}")
            for j in range(cfg.heads)
        ]

    def parameters(self) -> list[Parameter]:
        out = [self.w_query, self.w_key, self.w_value]
        for s in self.scorers:
            out.extend(s.parameters())
        out.extend(self.projections)
        return out


class ModelParams:
    """Every learnable tensor, in the fixed declaration order used on disk."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        cfg.validate()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.scales = ScaleParams(cfg, rng)
        self.blocks = [
            AttentionParams(cfg, rng, f"block{b}") for b in range(cfg.blocks)
        ]
        head_in = cfg.n_scales * cfg.d_model
        head_out = cfg.horizon * cfg.n_vars
        self.head_w = Parameter(uniform_init(rng, head_in, head_out), "head.w")
        self.head_b = Parameter(uniform_init(rng, 1, head_out), "head.b")

    def parameters(self) -> list[Parameter]:
        out = list(self.scales.parameters())
        for b in self.blocks:
            out.extend(b.parameters())
        out.extend((self.head_w, self.head_b))
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()


@dataclass
class GraphBundle:
    """Prebuilt graphs plus the constants the forward pass needs."""

    hypergraph: Hypergraph
    edge_graph: HyperedgeGraph
    node_norm: np.ndarray  # (N, 1): degree**-0.5, 0 where degree is 0
    edge_norm: np.ndarray  # (M, 1): 1/degree
    pair_nodes: np.ndarray  # incidence coordinates, node rows
    pair_edges: np.ndarray  # incidence coordinates, edge columns
    covered: np.ndarray  # node rows with degree > 0


def bundle_graphs(g: Hypergraph) -> GraphBundle:
    """Derive the edge graph and forward-pass constants for a hypergraph."""
    heg = build_edge_graph(g)
    if heg.order != list(range(g.edge_count)):
        raise ConfigError("hyperedge graph order must match hypergraph order")
    deg = g.node_degrees
    node_norm = np.where(deg > 0, deg, 1.0) ** -0.5 * (deg > 0)
    pair_nodes, pair_edges = np.nonzero(g.incidence)
    return GraphBundle(
        hypergraph=g,
        edge_graph=heg,
        node_norm=node_norm[:, None],
        edge_norm=(1.0 / g.edge_degrees)[:, None],
        pair_nodes=pair_nodes,
        pair_edges=pair_edges,
        covered=np.nonzero(deg > 0)[0],
    )


def build_graphs(cfg: ModelConfig) -> GraphBundle:
    cfg.validate()
    plan = plan_scales(cfg.input_len, cfg.windows)
    return bundle_graphs(build_hypergraph(plan, cfg))


def init_hyperedge_embeddings(nodes, g: Hypergraph) -> Tensor:
    """Each hyperedge embedding is the sum of its member node embeddings."""
    nodes = as_tensor(nodes)
    if nodes.data.shape[0] != g.node_count:
        raise ShapeError(
            f"got {nodes.data.shape[0]} node embeddings for {g.node_count} nodes"
        )
    return matmul(Tensor(g.incidence.T), nodes)


def hyperedge_attention(edge_embs, heg: HyperedgeGraph, p: AttentionParams) -> Tensor:
    """Scaled dot-product attention between hyperedges, masked by the
    hyperedge graph so each edge only attends to its graph neighbours."""
    edge_embs = as_tensor(edge_embs)
    m, d = edge_embs.data.shape
    if heg.adjacency.shape != (m, m):
        raise ShapeError(
            f"adjacency {heg.adjacency.shape} does not match {m} hyperedges"
        )
    q = matmul(edge_embs, p.w_query)
    k = matmul(edge_embs, p.w_key)
    v = matmul(edge_embs, p.w_value)
    logits = mul(matmul(q, transpose(k)), 1.0 / math.sqrt(d))
    weights = masked_softmax(logits, heg.adjacency, p.mask_constant)
    return matmul(weights, v)


def attention_incidence(
    nodes, updated_edges, g: GraphBundle, p: AttentionParams, head: int
) -> Tensor:
    """Learned incidence weights of one head.

    For every incident (node, hyperedge) pair the head's scorer rates the
    concatenated embeddings; scores are soft-maxed over each node's incident
    hyperedges.  Rows of nodes that belong to no hyperedge stay all-zero.
    """
    nodes = as_tensor(nodes)
    updated_edges = as_tensor(updated_edges)
    n = g.hypergraph.node_count
    m = g.hypergraph.edge_count
    pairs = concat(
        [take_rows(nodes, g.pair_nodes), take_rows(updated_edges, g.pair_edges)],
        axis=1,
    )
    scores = leaky_relu(p.scorers[head](pairs))
    logits = scatter_pairs(scores, g.pair_nodes, g.pair_edges, (n, m))
    if len(g.covered) == n:
        return masked_softmax(logits, g.hypergraph.incidence, p.mask_constant)
    sub_w = masked_softmax(
        take_rows(logits, g.covered),
        g.hypergraph.incidence[g.covered],
        p.mask_constant,
    )
    return put_rows(sub_w, g.covered, n)


def hypergraph_conv(nodes, incidence, g: GraphBundle, projection) -> Tensor:
    """Degree-normalised hypergraph convolution with a given incidence.

    Computes s(Dv^-1/2 W De^-1 W^T Dv^-1/2 X P) where W is the supplied
    (possibly learned) incidence matrix, the degree matrices come from the
    static hypergraph, and s is the leaky ReLU.  Zero-degree nodes keep
    zero rows.
    """
    nodes = as_tensor(nodes)
    incidence = as_tensor(incidence)
    projected = matmul(nodes, projection)
    x = mul(projected, Tensor(g.node_norm))
    x = matmul(transpose(incidence), x)
    x = mul(x, Tensor(g.edge_norm))
    x = matmul(incidence, x)
    x = mul(x, Tensor(g.node_norm))
    return leaky_relu(x)


def hyperconv(nodes, incidences, g: GraphBundle, p: AttentionParams) -> Tensor:
    """Multi-head convolution; per-head outputs are concatenated."""
    if len(incidences) != p.heads:
        raise ShapeError(f"expected {p.heads} incidence matrices, got {len(incidences)}")
    outs = [
        hypergraph_conv(nodes, inc, g, p.projections[j])
        for j, inc in enumerate(incidences)
    ]
    return concat(outs, axis=1) if len(outs) > 1 else outs[0]


def predict(ms: MultiScaleSeries, final_nodes, params: ModelParams) -> Tensor:
    """Affine head over the last node embedding of every scale."""
    cfg = params.cfg
    final_nodes = as_tensor(final_nodes)
    last_rows = [
        ms.node_id(s, ms.plan.horizons[s - 1]) - 1 for s in range(1, ms.plan.n_scales + 1)
    ]
    gathered = take_rows(final_nodes, last_rows)
    flat = reshape(gathered, (1, cfg.n_scales * cfg.d_model))
    out = add(matmul(flat, params.head_w), params.head_b)
    return reshape(out, (cfg.horizon, cfg.n_vars))


def mse_loss(pred, truth) -> Tensor:
    """Mean squared error over every forecast element."""
    pred, truth = as_tensor(pred), as_tensor(truth)
    if pred.data.shape != truth.data.shape:
        raise ShapeError(
            f"prediction {pred.data.shape} and truth {truth.data.shape} differ"
        )
    diff = sub(pred, truth)
    return mean_all(mul(diff, diff))


def forward(
    window, cfg: ModelConfig, params: ModelParams, graphs: GraphBundle
) -> tuple[Tensor, MultiScaleSeries]:
    """Full pass from a raw window to the (horizon, n_vars) forecast."""
    ms = build_multiscale(window, cfg, params.scales)
    nodes = ms.stacked()
    for block in params.blocks:
        edge_embs = init_hyperedge_embeddings(nodes, graphs.hypergraph)
        updated = hyperedge_attention(edge_embs, graphs.edge_graph, block)
        incidences = [
            attention_incidence(nodes, updated, graphs, block, j)
            for j in range(block.heads)
        ]
        nodes = hyperconv(nodes, incidences, graphs, block)
    return predict(ms, nodes, params), ms


# ---------------------------------------------------------------------------
# Checkpoints

_CKPT_MAGIC = b"HYPERSERIES-CKPT"
_CKPT_VERSION = 1


def save_checkpoint(path, params: ModelParams) -> None:
    """Header of (name, shape) lines, then raw little-endian float64 data."""
    plist = params.parameters()
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC + b" %d\n" % _CKPT_VERSION)
        f.write(b"%d\n" % len(plist))
        for p in plist:
            dims = "x".join(str(d) for d in p.data.shape)
            f.write(f"{p.name} {dims}\n".encode())
        f.write(b"END\n")
        for p in plist:
            f.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path, cfg: ModelConfig) -> ModelParams:
    """Rebuild parameters for ``cfg`` and fill them from the file.

    The header's names and shapes must match the config-derived layout
    exactly, otherwise a ConfigError pinpoints the first mismatch.
    """
    params = ModelParams(cfg, seed=0)
    plist = params.parameters()
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != _CKPT_MAGIC + b" %d" % _CKPT_VERSION:
            raise ConfigError(f"unrecognised checkpoint header {magic!r}")
        count = int(f.readline())
        if count != len(plist):
            raise ConfigError(
                f"checkpoint has {count} tensors, config implies {len(plist)}"
            )
        for p in plist:
            name, dims = f.readline().decode().split()
            shape = tuple(int(d) for d in dims.split("x"))
            if name != p.name or shape != p.data.shape:
                raise ConfigError(
                    f"checkpoint tensor {name} {shape} does not match "
                    f"{p.name} {p.data.shape}"
                )
        if f.readline() != b"END\n":
            raise ConfigError("malformed checkpoint header")
        for p in plist:
            raw = f.read(p.data.size * 8)
            if len(raw) != p.data.size * 8:
                raise ConfigError("checkpoint data truncated")
            p.data[...] = np.frombuffer(raw, dtype="<f8").reshape(p.data.shape)
    return params
