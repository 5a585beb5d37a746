"""Command-line front end.

One TOML config file drives every command; ``--set section.key=value``
overrides individual entries for sweeps.  Artifacts land in a fresh run
directory named by the config hash and a timestamp, so identical configs
are easy to diff across runs.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .config import ModelConfig
from .edgegraph import build_edge_graph, dump_adjacency
from .errors import ConfigError, HyperseriesError, MissingArtifactError
from .hypergraph import build_hypergraph, dump_sparse
from .model import (
    ModelParams,
    build_graphs,
    forward,
    load_checkpoint,
    mse_loss,
    save_checkpoint,
)
from .numerics import Tensor, grad_check
from .pipeline import (
    SplitSpec,
    chronological_split,
    denormalize,
    evaluate,
    instance_normalize,
    load_csv,
    synthetic_sines,
    train,
    write_history_csv,
)
from .scales import plan_scales

GRADCHECK_LIMIT = 1e-4

_SCHEMA = {
    "data": {
        "path": str,
        "ratios": list,
        "n_vars": int,
        "frequency": str,
        "rows": int,
        "periods": list,
        "noise": float,
        "seed": int,
    },
    "model": {
        "input_len": int,
        "horizon": int,
        "windows": list,
        "edge_size": (int, list),
        "hop": int,
        "d_model": int,
        "heads": int,
        "mask_constant": float,
        "aggregation": str,
        "edge_kinds": list,
        "blocks": int,
    },
    "train": {
        "lr": float,
        "batch_size": int,
        "epochs": int,
        "patience": int,
        "seed": int,
        "checkpoint": str,
    },
    "": {"out": str},
}


@dataclass(frozen=True)
class RunConfig:
    """Fully validated settings for one command invocation."""

    model: ModelConfig
    data_path: str
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    frequency: str = "unknown"
    synth_rows: int = 2000
    synth_periods: tuple[float, ...] = (24.0, 168.0)
    synth_noise: float = 0.05
    synth_seed: int = 0
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 10
    patience: int = 3
    seed: int = 0
    checkpoint: str | None = None
    out: str = "runs"

    def digest(self) -> str:
        return hashlib.sha256(repr(self).encode()).hexdigest()[:12]


def _check_keys(raw: dict) -> None:
    for section, content in raw.items():
        if section in _SCHEMA and isinstance(content, dict):
            for key, value in content.items():
                if key not in _SCHEMA[section]:
                    raise ConfigError(f"unknown config key [{section}] {key!r}")
                expected = _SCHEMA[section][key]
                if expected is float and isinstance(value, int):
                    continue
                if not isinstance(value, expected):
                    raise ConfigError(
                        f"config key [{section}] {key!r} has the wrong type"
                    )
        elif section in _SCHEMA[""]:
            continue
        else:
            raise ConfigError(f"unknown config key {section!r}")


def _build_run_config(raw: dict) -> RunConfig:
    _check_keys(raw)
    data = raw.get("data", {})
    model = raw.get("model", {})
    tr = raw.get("train", {})
    if "path" not in data:
        raise ConfigError("missing required config key [data] path")
    cfg = ModelConfig(
        input_len=model.get("input_len", 96),
        horizon=model.get("horizon", 24),
        n_vars=data.get("n_vars", 1),
        windows=tuple(model.get("windows", (4, 4, 4))),
        edge_sizes=(
            tuple(es) if isinstance(es := model.get("edge_size", 4), list) else es
        ),
        hop=model.get("hop", 3),
        d_model=model.get("d_model", 64),
        heads=model.get("heads", 4),
        mask_constant=float(model.get("mask_constant", 1e9)),
        aggregation=model.get("aggregation", "conv"),
        edge_kinds=tuple(model.get("edge_kinds", ("intra", "inter", "mixed"))),
        blocks=model.get("blocks", 1),
    )
    cfg.validate()
    plan_scales(cfg.input_len, cfg.windows)  # surfaces horizon underflow now
    ratios = tuple(float(r) for r in data.get("ratios", (0.7, 0.2, 0.1)))
    if len(ratios) != 3:
        raise ConfigError("[data] ratios needs exactly three entries")
    SplitSpec(*ratios).validate()
    run = RunConfig(
        model=cfg,
        data_path=data["path"],
        ratios=ratios,
        frequency=data.get("frequency", "unknown"),
        synth_rows=data.get("rows", 2000),
        synth_periods=tuple(float(p) for p in data.get("periods", (24.0, 168.0))),
        synth_noise=float(data.get("noise", 0.05)),
        synth_seed=data.get("seed", 0),
        lr=float(tr.get("lr", 1e-4)),
        batch_size=tr.get("batch_size", 32),
        epochs=tr.get("epochs", 10),
        patience=tr.get("patience", 3),
        seed=tr.get("seed", 0),
        checkpoint=tr.get("checkpoint"),
        out=raw.get("out", "runs"),
    )
    if run.lr <= 0:
        raise ConfigError("[train] lr must be positive")
    for key in ("batch_size", "epochs", "patience"):
        if getattr(run, key) < 1:
            raise ConfigError(f"[train] {key} must be >= 1")
    if run.synth_rows < 2:
        raise ConfigError("[data] rows must be >= 2")
    if run.synth_noise < 0:
        raise ConfigError("[data] noise must be >= 0")
    return run


def parse_config(path, overrides: list[str] | None = None) -> RunConfig:
    """Read a TOML config, apply ``--set`` overrides, validate everything."""
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        dotted, text = item.split("=", 1)
        keys = dotted.strip().split(".")
        if not 1 <= len(keys) <= 2:
            raise ConfigError(f"--set key must be 'key' or 'section.key': {dotted!r}")
        try:
            value = tomllib.loads(f"v = {text}")["v"]
        except tomllib.TOMLDecodeError:
            value = text
        node = raw
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set cannot descend into {k!r}")
        node[keys[-1]] = value
    return _build_run_config(raw)


def _load_dataset(run: RunConfig):
    if run.data_path == "synthetic":
        return synthetic_sines(
            run.synth_rows,
            periods=run.synth_periods,
            noise=run.synth_noise,
            seed=run.synth_seed,
            n_vars=run.model.n_vars,
        )
    data = load_csv(run.data_path, frequency=run.frequency)
    if data.n_vars != run.model.n_vars:
        raise ConfigError(
            f"dataset {run.data_path} has {data.n_vars} variables; "
            f"set [data] n_vars accordingly"
        )
    return data


def _run_dir(run: RunConfig) -> Path:
    stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S-%f")
    base = Path(run.out) / f"{run.digest()}-{stamp}"
    path = base
    counter = 1
    while path.exists():
        path = Path(f"{base}-{counter}")
        counter += 1
    path.mkdir(parents=True)
    return path


def _require_checkpoint(run: RunConfig) -> ModelParams:
    if not run.checkpoint:
        raise MissingArtifactError(
            "this command needs a checkpoint: set [train] checkpoint"
        )
    if not Path(run.checkpoint).exists():
        raise MissingArtifactError(f"checkpoint {run.checkpoint} does not exist")
    return load_checkpoint(run.checkpoint, run.model)


def run_command(cmd: str, run: RunConfig, emit=print) -> tuple[int, dict[str, Path]]:
    """Execute one CLI command; returns (exit status, artifact paths)."""
    artifacts: dict[str, Path] = {}
    if cmd == "build-graph":
        plan = plan_scales(run.model.input_len, run.model.windows)
        g = build_hypergraph(plan, run.model)
        heg = build_edge_graph(g)
        out = _run_dir(run)
        artifacts["hypergraph"] = out / "hypergraph.tsv"
        artifacts["edgegraph"] = out / "edgegraph.tsv"
        artifacts["hypergraph"].write_text(dump_sparse(g))
        artifacts["edgegraph"].write_text(dump_adjacency(heg))
        emit(f"wrote {artifacts['hypergraph']}")
        emit(f"wrote {artifacts['edgegraph']}")
    elif cmd == "dump-graph":
        plan = plan_scales(run.model.input_len, run.model.windows)
        g = build_hypergraph(plan, run.model)
        heg = build_edge_graph(g)
        emit("# hypergraph")
        emit(dump_sparse(g).rstrip("\n"))
        emit("# hyperedge-graph")
        emit(dump_adjacency(heg).rstrip("\n"))
    elif cmd == "train":
        data = _load_dataset(run)
        spec = SplitSpec(*run.ratios)
        min_rows = run.model.input_len + run.model.horizon
        train_set, val_set, test_set = chronological_split(data, spec, min_rows)
        graphs = build_graphs(run.model)
        result = train(
            train_set,
            val_set,
            run.model,
            lr=run.lr,
            batch_size=run.batch_size,
            epochs=run.epochs,
            patience=run.patience,
            seed=run.seed,
            graphs=graphs,
            log=emit,
        )
        mse, mae = evaluate(result.params, test_set, run.model, graphs)
        emit(f"test\t{mse:.6f}\t{mae:.6f}")
        out = _run_dir(run)
        artifacts["checkpoint"] = out / "model.ckpt"
        artifacts["history"] = out / "history.csv"
        save_checkpoint(artifacts["checkpoint"], result.params)
        write_history_csv(artifacts["history"], result.history)
        emit(f"wrote {artifacts['checkpoint']}")
        emit(f"wrote {artifacts['history']}")
    elif cmd == "eval":
        params = _require_checkpoint(run)
        data = _load_dataset(run)
        spec = SplitSpec(*run.ratios)
        min_rows = run.model.input_len + run.model.horizon
        _, _, test_set = chronological_split(data, spec, min_rows)
        mse, mae = evaluate(params, test_set, run.model)
        line = f"test\t{mse:.6f}\t{mae:.6f}"
        emit(line)
        out = _run_dir(run)
        artifacts["metrics"] = out / "metrics.txt"
        artifacts["metrics"].write_text(line + "\n")
    elif cmd == "predict":
        params = _require_checkpoint(run)
        data = _load_dataset(run)
        cfg = run.model
        if data.rows < cfg.input_len:
            raise ConfigError(
                f"dataset has {data.rows} rows, fewer than input_len {cfg.input_len}"
            )
        window = data.values[-cfg.input_len :]
        norm_in, stats = instance_normalize(window)
        graphs = build_graphs(cfg)
        pred, _ = forward(norm_in, cfg, params, graphs)
        raw = denormalize(pred.data, stats)
        out = _run_dir(run)
        artifacts["predictions"] = out / "predictions.csv"
        with open(artifacts["predictions"], "w") as f:
            for row in raw:
                f.write(",".join(f"{v:.6f}" for v in row) + "\n")
        emit(f"wrote {artifacts['predictions']}")
    elif cmd == "gradcheck":
        cfg = run.model
        params = ModelParams(cfg, seed=run.seed)
        graphs = build_graphs(cfg)
        rng = np.random.default_rng(run.seed)
        window = rng.standard_normal((cfg.input_len, cfg.n_vars))
        target = Tensor(rng.standard_normal((cfg.horizon, cfg.n_vars)))

        def loss_fn():
            pred, _ = forward(window, cfg, params, graphs)
            return mse_loss(pred, target)

        err = grad_check(loss_fn, params.parameters(), h=1e-5, samples=200)
        emit(f"max_rel_err\t{err:.3e}")
        if err >= GRADCHECK_LIMIT:
            return 1, artifacts
    else:
        raise ConfigError(f"unknown command {cmd!r}")
    return 0, artifacts


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hyperseries",
        description="Multi-scale hypergraph forecasting: graphs, training, "
        "evaluation, and gradient checking from one config file.",
    )
    parser.add_argument(
        "command",
        choices=["build-graph", "dump-graph", "train", "predict", "eval", "gradcheck"],
    )
    parser.add_argument("--config", required=True, help="TOML config file")
    parser.add_argument("--seed", type=int, help="override [train] seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config entry, e.g. --set model.d_model=32",
    )
    args = parser.parse_args(argv)
    try:
        run = parse_config(args.config, args.set)
        if args.seed is not None:
            run = replace(run, seed=args.seed)
        if args.out is not None:
            run = replace(run, out=args.out)
        status, _ = run_command(args.command, run)
        return status
    except HyperseriesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
