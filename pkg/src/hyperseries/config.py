"""Structural hyperparameters of the forecasting model."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError

EDGE_KINDS = ("intra", "inter", "mixed")
AGG_MODES = ("conv", "avg", "max")


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to build the graphs and the network, data aside.

    ``windows`` holds the aggregation window of each scale transition, so the
    model uses ``len(windows) + 1`` scales.  ``edge_sizes`` gives the node
    count per intra-scale hyperedge at each scale (a single int applies to
    all scales); ``hop`` is the node spacing of the long-range hyperedge
    family (1 disables it, since it would duplicate the originals).
    """

    input_len: int = 96
    horizon: int = 24
    n_vars: int = 1
    windows: tuple[int, ...] = (4, 4, 4)
    edge_sizes: tuple[int, ...] | int = 4
    hop: int = 3
    d_model: int = 64
    heads: int = 4
    mask_constant: float = 1e9
    aggregation: str = "conv"
    edge_kinds: tuple[str, ...] = EDGE_KINDS
    blocks: int = 1

    @property
    def n_scales(self) -> int:
        return len(self.windows) + 1

    def sizes_per_scale(self) -> tuple[int, ...]:
        if isinstance(self.edge_sizes, int):
            return (self.edge_sizes,) * self.n_scales
        return tuple(self.edge_sizes)

    def validate(self) -> None:
        if self.input_len < 1:
            raise ConfigError("input_len must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.n_vars < 1:
            raise ConfigError("n_vars must be >= 1")
        if any(w < 2 for w in self.windows):
            raise ConfigError("every aggregation window must be >= 2")
        sizes = self.sizes_per_scale()
        if len(sizes) != self.n_scales:
            raise ConfigError(
                f"edge_sizes needs one entry per scale ({self.n_scales}), got {len(sizes)}"
            )
        if any(s < 2 for s in sizes):
            raise ConfigError("every hyperedge size must be >= 2")
        if self.hop < 1:
            raise ConfigError("hop must be >= 1")
        if self.d_model < 1:
            raise ConfigError("d_model must be >= 1")
        if self.heads < 1 or self.d_model % self.heads != 0:
            raise ConfigError("d_model must be divisible by heads")
        if self.mask_constant <= 0:
            raise ConfigError("mask_constant must be positive")
        if self.aggregation not in AGG_MODES:
            raise ConfigError(f"aggregation must be one of {AGG_MODES}")
        if not self.edge_kinds or any(k not in EDGE_KINDS for k in self.edge_kinds):
            raise ConfigError(f"edge_kinds must be a non-empty subset of {EDGE_KINDS}")
        if self.blocks < 1:
            raise ConfigError("blocks must be >= 1")
