"""Multi-scale feature extraction.

The input window is embedded to the model width and then repeatedly
collapsed by strided aggregation, one scale at a time.  Each position of
each scale becomes a node with a global 1-based id: scale 1 first, then
scale 2, and so on, temporally ordered within a scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import ConfigError, ShapeError
from .numerics import Parameter, Tensor, add, as_tensor, concat, mul, pool, take_rows


@dataclass(frozen=True)
class ScalePlan:
    """Per-scale sequence lengths derived from the window sizes.

    ``horizons[s-1]`` is the length of scale ``s``; the recursion is
    h(1) = input_len, h(s) = floor(h(s-1) / windows[s-2]), and any remainder
    steps are dropped rather than padded.
    """

    input_len: int
    windows: tuple[int, ...]
    horizons: tuple[int, ...]

    @property
    def n_scales(self) -> int:
        return len(self.horizons)

    @property
    def total_nodes(self) -> int:
        return sum(self.horizons)

    def scale_offset(self, scale: int) -> int:
        """Number of nodes in scales strictly before ``scale``."""
        if not 1 <= scale <= self.n_scales:
            raise ConfigError(f"scale {scale} out of range 1..{self.n_scales}")
        return sum(self.horizons[: scale - 1])

    def node_id(self, scale: int, position: int) -> int:
        """Global 1-based node id of (scale, position), both 1-based."""
        if not 1 <= position <= self.horizons[scale - 1]:
            raise ConfigError(
                f"position {position} out of range for scale {scale} "
                f"(length {self.horizons[scale - 1]})"
            )
        return self.scale_offset(scale) + position

    def locate(self, node_id: int) -> tuple[int, int]:
        """Inverse of node_id."""
        if not 1 <= node_id <= self.total_nodes:
            raise ConfigError(f"node id {node_id} out of range 1..{self.total_nodes}")
        remaining = node_id
        for scale, h in enumerate(self.horizons, start=1):
            if remaining <= h:
                return scale, remaining
            remaining -= h
        raise AssertionError("unreachable")


def plan_scales(input_len: int, windows) -> ScalePlan:
    """Derive per-scale lengths; any scale collapsing to zero is an error."""
    if input_len < 1:
        raise ConfigError("input_len must be >= 1")
    windows = tuple(int(w) for w in windows)
    if any(w < 2 for w in windows):
        raise ConfigError("every aggregation window must be >= 2")
    horizons = [input_len]
    for w in windows:
        nxt = horizons[-1] // w
        if nxt == 0:
            raise ConfigError(
                f"scale horizon underflow: length {horizons[-1]} cannot be "
                f"aggregated by window {w}"
            )
        horizons.append(nxt)
    return ScalePlan(input_len, windows, tuple(horizons))


@dataclass
class MultiScaleSeries:
    """Embedded per-scale sequences plus the node indexing of the plan."""

    plan: ScalePlan
    levels: list[Tensor]  # levels[s-1] has shape (horizons[s-1], d_model)

    @property
    def total_nodes(self) -> int:
        return self.plan.total_nodes

    def node_id(self, scale: int, position: int) -> int:
        return self.plan.node_id(scale, position)

    def locate(self, node_id: int) -> tuple[int, int]:
        return self.plan.locate(node_id)

    def stacked(self) -> Tensor:
        """All node embeddings as one (total_nodes, d_model) matrix."""
        if len(self.levels) == 1:
            return self.levels[0]
        return concat(self.levels, axis=0)


def aggregate(x, window: int, params=None, mode: str = "conv") -> Tensor:
    """Collapse ``window`` consecutive rows into one, stride = window.

    In "conv" mode ``params`` is a (weight, bias) pair with weight of shape
    (window, d): each channel is convolved with its own kernel, so setting
    all weights to 1/window and bias to zero reproduces average pooling.
    """
    x = as_tensor(x)
    h, d = x.data.shape
    if h < window:
        raise ConfigError(f"cannot aggregate {h} rows with window {window}")
    if mode in ("avg", "max"):
        return pool(x, window, mode)
    if mode != "conv":
        raise ConfigError(f"unknown aggregation mode {mode!r}")
    if params is None:
        raise ConfigError("conv aggregation needs its (weight, bias) parameters")
    weight, bias = params
    if weight.data.shape != (window, d):
        raise ShapeError(
            f"conv weight shape {weight.data.shape} does not match window "
            f"{window} and width {d}"
        )
    n_out = h // window
    out = None
    for j in range(window):
        rows = take_rows(x, np.arange(n_out) * window + j)
        term = mul(rows, take_rows(weight, [j]))
        out = term if out is None else add(out, term)
    return add(out, bias)


class ScaleParams:
    """Embedding layer plus per-transition conv kernels (conv mode only)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        from .numerics import Mlp, uniform_init

        self.embed = Mlp([cfg.n_vars, cfg.d_model], rng, "embed")
        self.conv: list[tuple[Parameter, Parameter]] = []
        if cfg.aggregation == "conv":
            for s, w in enumerate(cfg.windows, start=1):
                kernel = Parameter(uniform_init(rng, w, cfg.d_model), f"agg{s}.w")
                bias = Parameter(uniform_init(rng, 1, cfg.d_model), f"agg{s}.b")
                self.conv.append((kernel, bias))

    def parameters(self) -> list[Parameter]:
        out = list(self.embed.parameters())
        for w, b in self.conv:
            out.extend((w, b))
        return out


def build_multiscale(x, cfg: ModelConfig, params: ScaleParams) -> MultiScaleSeries:
    """Embed a (input_len, n_vars) window and derive every coarser scale."""
    x = as_tensor(x)
    if x.data.shape != (cfg.input_len, cfg.n_vars):
        raise ShapeError(
            f"window shape {x.data.shape} does not match "
            f"({cfg.input_len}, {cfg.n_vars})"
        )
    plan = plan_scales(cfg.input_len, cfg.windows)
    levels = [params.embed(x)]
    for s, w in enumerate(cfg.windows):
        conv = params.conv[s] if cfg.aggregation == "conv" else None
        levels.append(aggregate(levels[-1], w, conv, cfg.aggregation))
    return MultiScaleSeries(plan, levels)
