import numpy as np
import pytest

from hyperseries.cli import main, parse_config, run_command
from hyperseries.errors import ConfigError, MissingArtifactError

TINY = """
out = "{out}"

[data]
path = "synthetic"
rows = 160
periods = [12.0, 30.0]
noise = 0.05
ratios = [0.6, 0.2, 0.2]

[model]
input_len = 12
horizon = 3
windows = [2, 2]
edge_size = 2
hop = 2
d_model = 8
heads = 2

[train]
lr = 0.005
batch_size = 16
epochs = 2
patience = 5
seed = 9
"""


@pytest.fixture
def tiny_config(tmp_path):
    cfg_path = tmp_path / "run.toml"
    cfg_path.write_text(TINY.format(out=tmp_path / "runs"))
    return cfg_path


class TestParseConfig:
    def test_minimal_config_gets_defaults(self, tmp_path):
        path = tmp_path / "min.toml"
        path.write_text('[data]\npath = "synthetic"\n')
        run = parse_config(path)
        assert run.model.n_scales == 4
        assert run.model.sizes_per_scale() == (4, 4, 4, 4)
        assert run.model.hop == 3
        assert run.model.windows == (4, 4, 4)
        assert run.lr == 1e-4 and run.batch_size == 32
        assert run.epochs == 10 and run.patience == 3

    def test_horizon_underflow_caught_at_parse(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text(
            '[data]\npath = "synthetic"\n[model]\ninput_len = 8\nwindows = [4, 4, 4]\n'
        )
        with pytest.raises(ConfigError, match="underflow"):
            parse_config(path)

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('[data]\npath = "synthetic"\nfoo = 1\n')
        with pytest.raises(ConfigError, match="foo"):
            parse_config(path)
        path.write_text('[data]\npath = "x"\n[nonsense]\na = 1\n')
        with pytest.raises(ConfigError, match="nonsense"):
            parse_config(path)

    def test_missing_path_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text("[model]\nd_model = 8\n")
        with pytest.raises(ConfigError, match="path"):
            parse_config(path)

    def test_set_overrides(self, tiny_config):
        run = parse_config(tiny_config, ["model.d_model=16", "train.seed=3"])
        assert run.model.d_model == 16 and run.seed == 3

    def test_set_validated(self, tiny_config):
        with pytest.raises(ConfigError):
            parse_config(tiny_config, ["model.d_model=7"])  # not divisible by heads
        with pytest.raises(ConfigError):
            parse_config(tiny_config, ["model.bogus=1"])
        with pytest.raises(ConfigError):
            parse_config(tiny_config, ["noequalsign"])

    def test_wrong_type_rejected(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('[data]\npath = "synthetic"\n[model]\nd_model = "big"\n')
        with pytest.raises(ConfigError, match="d_model"):
            parse_config(path)


class TestCommands:
    def test_build_graph_deterministic(self, tiny_config):
        run = parse_config(tiny_config)
        lines = []
        status1, arts1 = run_command("build-graph", run, emit=lines.append)
        status2, arts2 = run_command("build-graph", run, emit=lines.append)
        assert status1 == status2 == 0
        assert arts1["hypergraph"] != arts2["hypergraph"]  # fresh run dirs
        assert arts1["hypergraph"].read_bytes() == arts2["hypergraph"].read_bytes()
        assert arts1["edgegraph"].read_bytes() == arts2["edgegraph"].read_bytes()

    def test_dump_graph_prints(self, tiny_config, capsys):
        run = parse_config(tiny_config)
        status, _ = run_command("dump-graph", run)
        assert status == 0
        out = capsys.readouterr().out
        assert "# hypergraph" in out and "# hyperedge-graph" in out
        assert "blocks\t" in out

    def test_gradcheck_passes_on_tiny_config(self, tiny_config, capsys):
        run = parse_config(tiny_config)
        status, _ = run_command("gradcheck", run)
        assert status == 0
        out = capsys.readouterr().out
        assert out.startswith("max_rel_err")
        assert float(out.split("\t")[1]) < 1e-4

    def test_eval_without_checkpoint(self, tiny_config):
        run = parse_config(tiny_config)
        with pytest.raises(MissingArtifactError):
            run_command("eval", run)

    def test_train_eval_predict_flow(self, tiny_config):
        run = parse_config(tiny_config)
        lines = []
        status, arts = run_command("train", run, emit=lines.append)
        assert status == 0
        epoch_lines = [l for l in lines if l[0].isdigit()]
        assert len(epoch_lines) == 2
        assert all(len(l.split("\t")) == 3 for l in epoch_lines)
        test_lines = [l for l in lines if l.startswith("test\t")]
        assert len(test_lines) == 1
        history = arts["history"].read_text().splitlines()
        assert history[0] == "epoch,train_mse,val_mse"
        assert len(history) == 3

        run2 = parse_config(
            tiny_config, [f'train.checkpoint="{arts["checkpoint"]}"']
        )
        lines2 = []
        status, arts2 = run_command("eval", run2, emit=lines2.append)
        assert status == 0
        assert lines2[0].startswith("test\t")
        assert arts2["metrics"].read_text() == lines2[0] + "\n"

        status, arts3 = run_command("predict", run2, emit=lines2.append)
        assert status == 0
        rows = arts3["predictions"].read_text().strip().splitlines()
        assert len(rows) == run.model.horizon
        assert all(len(r.split(",")) == run.model.n_vars for r in rows)

    def test_checkpoint_config_mismatch(self, tiny_config):
        run = parse_config(tiny_config)
        _, arts = run_command("train", run, emit=lambda *_: None)
        bad = parse_config(
            tiny_config,
            [f'train.checkpoint="{arts["checkpoint"]}"', "model.d_model=16"],
        )
        with pytest.raises(ConfigError):
            run_command("eval", bad)

    def test_unknown_command(self, tiny_config):
        with pytest.raises(ConfigError):
            run_command("frobnicate", parse_config(tiny_config))


class TestMain:
    def test_main_gradcheck_exit_zero(self, tiny_config, capsys):
        assert main(["gradcheck", "--config", str(tiny_config)]) == 0
        capsys.readouterr()

    def test_main_error_paths_exit_nonzero(self, tmp_path, capsys):
        missing = tmp_path / "none.toml"
        assert main(["build-graph", "--config", str(missing)]) == 1
        err = capsys.readouterr().err
        assert "error:" in err

    def test_main_eval_without_checkpoint_exits_nonzero(self, tiny_config, capsys):
        assert main(["eval", "--config", str(tiny_config)]) == 1
        assert "checkpoint" in capsys.readouterr().err

    def test_seed_and_out_flags(self, tiny_config, tmp_path, capsys):
        out = tmp_path / "elsewhere"
        status = main(
            ["build-graph", "--config", str(tiny_config), "--out", str(out),
             "--seed", "123"]
        )
        assert status == 0
        capsys.readouterr()
        assert any(out.iterdir())
