import json

import pytest

from chemobranch import ConfigInvalid
from chemobranch.cli import main
from chemobranch.config import ExperimentConfig, parse_config_text

BASE_CONFIG = """
# shared model block
model.sigma = 0.2
model.D = 1.0
model.r = 0.5
model.alpha = 0.5
model.lambda_bar = 0.6
birth.kind = constant
birth.c = 0.3
death.kind = constant
death.c = 0.1
drift.kind = chemotaxis
drift.chi = 0.5
drift.gsat = 2.0
grid.d = 1
grid.n = 128
grid.L = 8.0
init.mu0.kind = gaussian
init.mu0.center = 4.0
init.mu0.sd = 0.5
init.rho0.kind = bump
init.rho0.amp = 1.0
init.rho0.center = 4.0
init.rho0.width = 1.0
run.dt = 0.05
run.T = 0.5
run.seed = 42
"""


def write_config(tmp_path, extra=""):
    path = tmp_path / "run.cfg"
    path.write_text(BASE_CONFIG + extra)
    return str(path)


class TestConfigParsing:
    def test_parse_comments_and_pairs(self):
        pairs = parse_config_text("a.b = 1  # trailing\n# full comment\nc=2\n")
        assert pairs == {"a.b": "1", "c": "2"}

    def test_bad_line_names_location(self):
        with pytest.raises(ConfigInvalid) as exc:
            parse_config_text("model.sigma 0.2")
        assert "line 1" in str(exc.value)

    def test_hash_is_order_independent(self):
        a = ExperimentConfig.from_text("x = 1\ny = 2\n")
        b = ExperimentConfig.from_text("y = 2\nx = 1\n")
        assert a.hash == b.hash
        c = ExperimentConfig.from_text("x = 1\ny = 3\n")
        assert a.hash != c.hash

    def test_model_params_build(self):
        cfg = ExperimentConfig.from_text(BASE_CONFIG)
        params = cfg.model_params()
        assert params.sigma == 0.2
        assert params.birth.kind == "constant"
        assert params.grid.n == 128
        assert cfg.master_seed() == 42
        assert cfg.master_seed(7) == 7

    def test_missing_lambda_bar_names_field(self):
        text = "\n".join(line for line in BASE_CONFIG.splitlines()
                         if not line.startswith("model.lambda_bar"))
        with pytest.raises(ConfigInvalid) as exc:
            ExperimentConfig.from_text(text).model_params()
        assert exc.value.field == "model.lambda_bar"

    def test_rate_bound_violation(self):
        cfg = ExperimentConfig.from_text(
            BASE_CONFIG.replace("birth.c = 0.3", "birth.c = 0.9"))
        with pytest.raises(ConfigInvalid) as exc:
            cfg.model_params()
        assert exc.value.field == "model.lambda_bar"

    def test_grid_must_be_power_of_two(self):
        cfg = ExperimentConfig.from_text(
            BASE_CONFIG.replace("grid.n = 128", "grid.n = 100"))
        with pytest.raises(ConfigInvalid) as exc:
            cfg.model_params()
        assert exc.value.field == "grid.n"

    def test_unknown_rate_kind(self):
        cfg = ExperimentConfig.from_text(
            BASE_CONFIG.replace("birth.kind = constant", "birth.kind = spline"))
        with pytest.raises(ConfigInvalid):
            cfg.model_params()

    def test_dt_not_dividing_T(self):
        cfg = ExperimentConfig.from_text(
            BASE_CONFIG.replace("run.dt = 0.05", "run.dt = 0.07"))
        with pytest.raises(ConfigInvalid) as exc:
            cfg.model_params()
        assert exc.value.field == "run.dt"


class TestCliRuns:
    def test_missing_required_key_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text(BASE_CONFIG.replace("model.lambda_bar = 0.6", ""))
        code = main(["yule", "--config", str(path), "--out", str(tmp_path)])
        assert code == 2
        assert "model.lambda_bar" in capsys.readouterr().err

    def test_micro_outputs_and_headers(self, tmp_path):
        cfg = write_config(tmp_path, "run.n0 = 20\n")
        out = tmp_path / "out"
        assert main(["micro", "--config", cfg, "--out", str(out)]) == 0
        events = (out / "micro_events.csv").read_text().splitlines()
        assert events[0] == "# chemobranch micro"
        assert events[1].startswith("# config_hash=")
        assert "master_seed=42" in events[1]
        assert (out / "micro_snapshots.txt").exists()
        assert (out / "micro_field_final.bin").exists()
        counts = (out / "micro_live_counts.csv").read_text().splitlines()
        assert counts[2] == "time,live"

    def test_yule_pass_and_reports(self, tmp_path):
        cfg = write_config(tmp_path, "run.n0 = 30\nrun.replicas = 30\n")
        out = tmp_path / "out"
        assert main(["yule", "--config", cfg, "--out", str(out)]) == 0
        doc = json.loads((out / "yule_summary.json").read_text())
        assert doc["summary"]["pass"] is True
        assert doc["master_seed"] == 42
        report = (out / "yule_report.csv").read_text().splitlines()
        assert report[2] == "kind,n0,replica,stat,value,se,lo,hi"

    def test_byte_identical_reruns_and_thread_independence(self, tmp_path):
        cfg = write_config(tmp_path, "run.n0 = 10\nrun.replicas = 6\n")
        outs = []
        for name, threads in (("a", "1"), ("b", "1"), ("c", "4")):
            out = tmp_path / name
            assert main(["yule", "--config", cfg, "--out", str(out),
                         "--threads", threads]) == 0
            outs.append({p.name: p.read_bytes()
                         for p in sorted(out.iterdir())})
        assert outs[0] == outs[1] == outs[2]

    def test_seed_flag_changes_outputs(self, tmp_path):
        cfg = write_config(tmp_path, "run.n0 = 10\nrun.replicas = 6\n")
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        main(["yule", "--config", cfg, "--out", str(out_a)])
        main(["yule", "--config", cfg, "--out", str(out_b), "--seed", "43"])
        a = (out_a / "yule_report.csv").read_bytes()
        b = (out_b / "yule_report.csv").read_bytes()
        assert a != b

    def test_macro_order_check_fails_with_upwind(self, tmp_path):
        # first-order upwind cannot reach Strang order two: exit code 4
        cfg = write_config(tmp_path, "macro.scheme = upwind\n"
                                     "macro.order_check = true\n")
        out = tmp_path / "out"
        assert main(["macro", "--config", cfg, "--out", str(out)]) == 4
        doc = json.loads((out / "macro_order.json").read_text())
        assert doc["summary"]["pass"] is False

    def test_macro_order_check_passes_semi_lagrangian(self, tmp_path):
        cfg = write_config(tmp_path, "macro.scheme = semi_lagrangian\n"
                                     "macro.order_check = true\n")
        out = tmp_path / "out"
        assert main(["macro", "--config", cfg, "--out", str(out)]) == 0
        doc = json.loads((out / "macro_order.json").read_text())
        assert 1.8 <= doc["summary"]["observed_order"] <= 2.2

    def test_mass_and_hybrid_subcommands(self, tmp_path):
        cfg = write_config(tmp_path, "mass.replicas = 50\n")
        out = tmp_path / "out"
        assert main(["mass", "--config", cfg, "--out", str(out)]) == 0
        pairings = (out / "mass_pairings.csv").read_text().splitlines()
        assert pairings[2] == "time,phi,mean,se"
        assert main(["hybrid", "--config", cfg, "--out", str(out)]) == 0
        assert (out / "hybrid_snapshots.txt").exists()

    def test_converge_and_couple_small(self, tmp_path):
        cfg = write_config(
            tmp_path,
            "run.replicas = 4\nconverge.n0_list = 4,8\n"
            "couple.n0_list = 4,8\ncouple.eps = 0.1,0.3\n"
            "macro.scheme = semi_lagrangian\n")
        out = tmp_path / "out"
        code = main(["couple", "--config", cfg, "--out", str(out)])
        assert code in (0, 4)
        assert (out / "couple_report.csv").exists()
        doc = json.loads((out / "couple_summary.json").read_text())
        assert "exceed_0.1" in doc["summary"]
