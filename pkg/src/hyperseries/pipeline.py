"""Data handling, training, and evaluation.

Datasets are plain CSV files (optional leading timestamp column).  Splits
are chronological, inputs are z-scored per window with the statistics kept
for de-normalising predictions, and training is plain minibatch Adam on the
mean-squared forecast error.  Losses are taken in normalised space; reported
metrics are computed on de-normalised values.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .config import ModelConfig
from .errors import ConfigError, DataError, NumericError
from .model import (
    GraphBundle,
    ModelParams,
    build_graphs,
    forward,
    mse_loss,
)
from .numerics import Tensor, adam_step, no_grad

NORM_EPS = 1e-5


@dataclass
class Dataset:
    """An in-memory numeric table, one row per time step."""

    name: str
    values: np.ndarray  # (rows, n_vars) float64
    timestamps: list[str] | None = None
    frequency: str = "unknown"

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]

    def slice(self, lo: int, hi: int, suffix: str) -> "Dataset":
        ts = self.timestamps[lo:hi] if self.timestamps is not None else None
        return Dataset(f"{self.name}.{suffix}", self.values[lo:hi], ts, self.frequency)


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/val/test fractions; must be positive and sum to 1."""

    train: float
    val: float
    test: float

    def validate(self) -> None:
        parts = (self.train, self.val, self.test)
        if any(p <= 0 for p in parts):
            raise ConfigError("every split ratio must be positive")
        if abs(sum(parts) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {sum(parts)}")


def load_csv(path, name: str | None = None, frequency: str = "unknown") -> Dataset:
    """Load a headered CSV; a non-numeric first column becomes timestamps."""
    try:
        with open(path, newline="") as f:
            reader = csv.reader(f)
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise DataError(f"{path}: need a header row and at least one data row")
    header, body = rows[0], rows[1:]
    width = len(header)
    if width == 0:
        raise DataError(f"{path}: empty header")
    first_is_time = False
    try:
        float(body[0][0])
    except (ValueError, IndexError):
        first_is_time = True
    start = 1 if first_is_time else 0
    if width - start < 1:
        raise DataError(f"{path}: no numeric columns")
    values = np.empty((len(body), width - start))
    timestamps: list[str] | None = [] if first_is_time else None
    for r, row in enumerate(body, start=2):
        if len(row) != width:
            raise DataError(f"{path}: row {r} has {len(row)} fields, expected {width}")
        if first_is_time:
            timestamps.append(row[0])
        for c in range(start, width):
            cell = row[c].strip()
            if cell == "":
                raise DataError(f"{path}: missing value at row {r}, column {c + 1}")
            try:
                values[r - 2, c - start] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: cannot parse {row[c]!r} at row {r}, column {c + 1}"
                ) from None
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: non-finite value in data")
    return Dataset(name or str(path), values, timestamps, frequency)


def chronological_split(
    data: Dataset, spec: SplitSpec, min_rows: int = 0
) -> tuple[Dataset, Dataset, Dataset]:
    """Contiguous prefix/middle/suffix split, no shuffling.

    Train and validation sizes are floored; the test part takes the rest.
    """
    spec.validate()
    n = data.rows
    n_train = int(spec.train * n)
    n_val = int(spec.val * n)
    parts = (
        data.slice(0, n_train, "train"),
        data.slice(n_train, n_train + n_val, "val"),
        data.slice(n_train + n_val, n, "test"),
    )
    if min_rows:
        for part in parts:
            if part.rows < min_rows:
                raise DataError(
                    f"split part {part.name} has {part.rows} rows, "
                    f"needs at least {min_rows}"
                )
    return parts


def instance_normalize(window: np.ndarray) -> tuple[np.ndarray, tuple[np.ndarray, np.ndarray]]:
    """Per-variable z-score of one input window; stats are kept to invert."""
    window = np.asarray(window, dtype=np.float64)
    if window.shape[0] < 2:
        raise DataError("instance normalization needs at least 2 rows")
    mu = window.mean(axis=0)
    sigma = window.std(axis=0)
    return (window - mu) / (sigma + NORM_EPS), (mu, sigma)


def denormalize(values: np.ndarray, stats: tuple[np.ndarray, np.ndarray]) -> np.ndarray:
    mu, sigma = stats
    return values * (sigma + NORM_EPS) + mu


def make_windows(
    data: Dataset, input_len: int, horizon: int, stride: int = 1
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Sliding (input, target) pairs; target follows the input directly."""
    if stride < 1:
        raise ConfigError("stride must be >= 1")
    span = input_len + horizon
    if data.rows < span:
        raise DataError(
            f"{data.name}: {data.rows} rows cannot fit input {input_len} "
            f"+ horizon {horizon}"
        )
    out = []
    for lo in range(0, data.rows - span + 1, stride):
        out.append(
            (data.values[lo : lo + input_len], data.values[lo + input_len : lo + span])
        )
    return out


def synthetic_sines(
    rows: int,
    periods=(24.0, 168.0),
    noise: float = 0.05,
    seed: int = 0,
    n_vars: int = 1,
    name: str = "synthetic",
) -> Dataset:
    """Sum of sinusoids plus Gaussian noise scaled to the clean signal."""
    if rows < 2:
        raise ConfigError("synthetic dataset needs at least 2 rows")
    rng = np.random.default_rng(seed)
    t = np.arange(rows, dtype=np.float64)
    values = np.empty((rows, n_vars))
    for v in range(n_vars):
        clean = np.zeros(rows)
        for p in periods:
            phase = rng.uniform(0.0, 2.0 * np.pi)
            clean += np.sin(2.0 * np.pi * t / p + phase)
        values[:, v] = clean + rng.normal(0.0, noise * clean.std(), size=rows)
    return Dataset(name, values, None, "synthetic")


# ---------------------------------------------------------------------------
# Training and evaluation


@dataclass
class EpochRecord:
    epoch: int
    train_mse: float
    val_mse: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochRecord]
    best_epoch: int
    stopped_early: bool = False


def _window_loss(win, tgt, cfg, params, graphs):
    norm_in, stats = instance_normalize(win)
    norm_tgt = (tgt - stats[0]) / (stats[1] + NORM_EPS)
    pred, _ = forward(norm_in, cfg, params, graphs)
    return mse_loss(pred, Tensor(norm_tgt))


def _dataset_mse(
    windows, cfg: ModelConfig, params: ModelParams, graphs: GraphBundle
) -> tuple[float, float]:
    """De-normalised (MSE, MAE) over a list of windows."""
    sq = ab = 0.0
    count = 0
    with no_grad():
        for win, tgt in windows:
            norm_in, stats = instance_normalize(win)
            pred, _ = forward(norm_in, cfg, params, graphs)
            raw = denormalize(pred.data, stats)
            err = raw - tgt
            sq += float(np.sum(err**2))
            ab += float(np.sum(np.abs(err)))
            count += err.size
    return sq / count, ab / count


def train(
    train_data: Dataset,
    val_data: Dataset,
    cfg: ModelConfig,
    lr: float = 1e-4,
    batch_size: int = 32,
    epochs: int = 10,
    patience: int = 3,
    seed: int = 0,
    graphs: GraphBundle | None = None,
    log=None,
) -> TrainResult:
    """Minibatch Adam with per-epoch validation and early stopping.

    Returns the parameters that scored best on validation.  Fully
    deterministic for a fixed seed: initialisation, batch order, and the
    gradient reduction order are all derived from ``seed``.
    """
    cfg.validate()
    if train_data.n_vars != cfg.n_vars or val_data.n_vars != cfg.n_vars:
        raise ConfigError(
            f"dataset has {train_data.n_vars} variables but config says {cfg.n_vars}"
        )
    graphs = graphs or build_graphs(cfg)
    params = ModelParams(cfg, seed=seed)
    train_windows = make_windows(train_data, cfg.input_len, cfg.horizon)
    val_windows = make_windows(val_data, cfg.input_len, cfg.horizon)
    order_rng = np.random.default_rng(seed + 1)

    history: list[EpochRecord] = []
    best_val = np.inf
    best_epoch = 0
    best_values = [p.data.copy() for p in params.parameters()]
    since_best = 0
    step = 0
    stopped_early = False
    for epoch in range(1, epochs + 1):
        order = order_rng.permutation(len(train_windows))
        losses = []
        for lo in range(0, len(order), batch_size):
            batch = order[lo : lo + batch_size]
            params.zero_grad()
            try:
                for wi in batch:
                    win, tgt = train_windows[wi]
                    loss = _window_loss(win, tgt, cfg, params, graphs)
                    value = loss.item()
                    if not np.isfinite(value):
                        raise NumericError("non-finite training loss")
                    losses.append(value)
                    loss.backward()
                step += 1
                inv = 1.0 / len(batch)
                for p in params.parameters():
                    p.grad *= inv
                    adam_step(p, lr=lr, t=step)
            except NumericError as exc:
                raise NumericError(
                    f"{exc} (epoch {epoch}, batch {lo // batch_size + 1})"
                ) from exc
        val_mse, _ = _dataset_mse(val_windows, cfg, params, graphs)
        record = EpochRecord(epoch, float(np.mean(losses)), val_mse)
        history.append(record)
        if log is not None:
            log(f"{record.epoch}\t{record.train_mse:.6f}\t{record.val_mse:.6f}")
        if val_mse < best_val:
            best_val = val_mse
            best_epoch = epoch
            best_values = [p.data.copy() for p in params.parameters()]
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                stopped_early = True
                break
    for p, v in zip(params.parameters(), best_values):
        p.data[...] = v
    return TrainResult(params, history, best_epoch, stopped_early)


def evaluate(
    params: ModelParams,
    data: Dataset,
    cfg: ModelConfig,
    graphs: GraphBundle | None = None,
) -> tuple[float, float]:
    """(MSE, MAE) of the model over every window of ``data``, de-normalised."""
    graphs = graphs or build_graphs(cfg)
    windows = make_windows(data, cfg.input_len, cfg.horizon)
    return _dataset_mse(windows, cfg, params, graphs)


def naive_baseline(data: Dataset, input_len: int, horizon: int) -> tuple[float, float]:
    """Repeat each window's last observed row across the horizon."""
    windows = make_windows(data, input_len, horizon)
    sq = ab = 0.0
    count = 0
    for win, tgt in windows:
        err = tgt - win[-1]
        sq += float(np.sum(err**2))
        ab += float(np.sum(np.abs(err)))
        count += err.size
    return sq / count, ab / count


def write_history_csv(path, history: list[EpochRecord]) -> None:
    """Same columns as the text log, one row per epoch."""
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "train_mse", "val_mse"])
        for rec in history:
            w.writerow([rec.epoch, f"{rec.train_mse:.6f}", f"{rec.val_mse:.6f}"])
