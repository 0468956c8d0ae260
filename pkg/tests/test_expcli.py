"""Config validation, the experiment runner, and the CLI contract."""

import hashlib
import json

import numpy as np
import pytest

from diracdos import cli, estimates, models, runner
from diracdos.config import ExperimentConfig, load_config, parse_config
from diracdos.dos import DOSEstimate
from diracdos.errors import ConfigError, PreconditionError

BASE = {"kind": "dos", "model": "dirac1d", "seed": 0, "n_realizations": 4,
        "params": {"construction": "periodic", "window": [0.7, 0.95],
                   "box_side": 8}}


def write_config(tmp_path, body, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(body)
    return path


class TestConfigParsing:
    def test_toml_happy_path(self, tmp_path):
        path = write_config(tmp_path, """
kind = "wegner"
model = "dirac1d"
seed = 7
n_realizations = 12
jobs = 2
out = "results"
backend = "fourier_spectral"
points_per_cell = 4
[params]
interval = [0.7, 0.95]
widths = [0.05, 0.1]
box_sides = [8, 16]
center = 0.9
""")
        cfg = load_config(path)
        assert cfg.kind == "wegner"
        assert cfg.seed == 7 and cfg.jobs == 2 and cfg.out == "results"
        assert cfg.params["widths"] == (0.05, 0.1)
        assert cfg.params["box_sides"] == (8, 16)
        assert cfg.params["padded"] is False

    def test_json_fallback(self, tmp_path):
        path = write_config(tmp_path, json.dumps(BASE), "cfg.json")
        cfg = load_config(path)
        assert cfg.kind == "dos"
        assert cfg.params["window"] == (0.7, 0.95)
        assert cfg.params["bins"] == 1

    def test_neither_format_parses(self, tmp_path):
        path = write_config(tmp_path, "kind: dos\n  nested: [")
        with pytest.raises(ConfigError, match="neither TOML"):
            load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "absent.toml")

    def test_empty_config_names_the_missing_field(self):
        with pytest.raises(ConfigError, match="missing required field 'kind'"):
            parse_config({})

    def test_unknown_top_level_key(self):
        raw = dict(BASE, typo=1)
        with pytest.raises(ConfigError, match="unknown key.*typo"):
            parse_config(raw)

    def test_unknown_params_key(self):
        raw = dict(BASE, params=dict(BASE["params"], stray=2))
        with pytest.raises(ConfigError, match="params.*stray"):
            parse_config(raw)

    def test_unknown_disorder_key(self):
        raw = dict(BASE, disorder={"strength": 3.0})
        with pytest.raises(ConfigError, match="disorder.*strength"):
            parse_config(raw)

    def test_disorder_overrides_pass_through(self):
        cfg = parse_config(dict(BASE, disorder={"amplitude": 3.0}))
        assert cfg.disorder == {"amplitude": 3.0}

    def test_unknown_kind(self):
        with pytest.raises(ConfigError, match="kind must be one of"):
            parse_config(dict(BASE, kind="sweep"))

    def test_bool_is_not_an_integer(self):
        with pytest.raises(ConfigError):
            parse_config(dict(BASE, jobs=True))

    def test_numeric_field_bounds(self):
        with pytest.raises(ConfigError):
            parse_config(dict(BASE, seed=-1))
        with pytest.raises(ConfigError):
            parse_config(dict(BASE, n_realizations=0))
        with pytest.raises(ConfigError):
            parse_config(dict(BASE, points_per_cell=3))

    def test_spatial_requires_ambient_periodic_rejects_it(self):
        spatial = {"construction": "spatial", "window": [0.7, 0.95],
                   "box_side": 8}
        with pytest.raises(ConfigError, match="ambient_side"):
            parse_config(dict(BASE, params=spatial))
        periodic = dict(BASE["params"], ambient_side=20)
        with pytest.raises(ConfigError, match="unknown key"):
            parse_config(dict(BASE, params=periodic))

    def test_window_must_be_a_pair(self):
        bad = dict(BASE["params"], window=[0.7, 0.8, 0.9])
        with pytest.raises(ConfigError, match="two numbers"):
            parse_config(dict(BASE, params=bad))

    def test_wegner_interval_checked_against_the_gap(self):
        raw = {"kind": "wegner",
               "params": {"interval": [0.7, 1.2], "widths": [0.05],
                          "box_sides": [8]}}
        with pytest.raises(ConfigError, match="certified gap"):
            parse_config(raw)

    def test_digest_ignores_jobs_and_out(self):
        a = parse_config(dict(BASE))
        b = parse_config(dict(BASE, jobs=7, out="elsewhere"))
        c = parse_config(dict(BASE, seed=1))
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()

    def test_replace_builds_an_updated_copy(self):
        a = parse_config(dict(BASE))
        b = a.replace(seed=11, out="o2")
        assert b.seed == 11 and b.out == "o2" and a.seed == 0
        assert b.params == a.params


MODEL = models.get_model("dirac1d")


class TestEmitPlotdata:
    def wegner_report(self):
        return estimates.wegner_scan(MODEL.disorder(), MODEL.symbol(),
                                     MODEL.background(resolution=4),
                                     (0.7, 0.95), (0.05, 0.1), (8,), 3, 0)

    def test_wegner_schema(self, tmp_path):
        files = runner.emit_plotdata(self.wegner_report(), tmp_path)
        lines = files[0].read_text().strip().split("\n")
        assert files[0].name == "wegner_plot.csv"
        assert lines[0] == "L,a,b,width,mean_count,ratio,stderr"
        assert len(lines) == 3
        first = [float(v) for v in lines[1].split(",")]
        assert first[0] == 8.0
        assert first[2] - first[1] == pytest.approx(first[3])

    def test_decay_schema(self, tmp_path):
        fit = estimates.DecayFit(
            distances=(10.0, 12.0, 14.0, 16.0), energy=2.0, imag_part=0.5,
            op_norms=(1e-3, 5e-4, 2e-4, 1e-4),
            trace_norms=(4e-3, 2e-3, 8e-4, 4e-4),
            slope=0.6, intercept=1.2, r_squared=0.999)
        files = runner.emit_plotdata((fit, fit), tmp_path)
        lines = files[0].read_text().strip().split("\n")
        assert files[0].name == "ct_decay.csv"
        assert lines[0] == "y,a,op_norm,tr_norm,log_tr_norm"
        assert len(lines) == 1 + 2 * 4
        row = [float(v) for v in lines[1].split(",")]
        assert row[4] == pytest.approx(np.log(row[3]), rel=1e-12)

    def test_dos_schema(self, tmp_path):
        est = DOSEstimate(window=(0.7, 0.95),
                          bin_edges=np.array([0.7, 0.825, 0.95]),
                          means=np.array([0.1, 0.2]),
                          stderrs=np.array([0.01, 0.02]), box_side=8.0,
                          n_realizations=4, construction="periodic", seed=0,
                          smooth=False)
        files = runner.emit_plotdata(est, tmp_path)
        lines = files[0].read_text().strip().split("\n")
        assert files[0].name == "dos.csv"
        assert lines[0] == "bin_lo,bin_hi,mean,stderr"
        assert len(lines) == 3

    def test_digest_comment_prepended(self, tmp_path):
        est = DOSEstimate(window=(0.7, 0.95),
                          bin_edges=np.array([0.7, 0.95]),
                          means=np.array([0.1]), stderrs=np.array([0.0]),
                          box_side=8.0, n_realizations=1,
                          construction="periodic", seed=0, smooth=False)
        files = runner.emit_plotdata(est, tmp_path, config_digest="abc123")
        lines = files[0].read_text().split("\n")
        assert lines[0] == "# config=abc123"
        assert lines[1] == "bin_lo,bin_hi,mean,stderr"

    def test_unsupported_report_rejected(self, tmp_path):
        with pytest.raises(PreconditionError):
            runner.emit_plotdata({"ratio": 1.0}, tmp_path)


class TestJobResolution:
    def test_explicit_wins(self, monkeypatch):
        monkeypatch.setenv(runner.ENV_JOBS, "6")
        assert runner.resolve_jobs(3) == 3

    def test_environment_fills_in(self, monkeypatch):
        monkeypatch.setenv(runner.ENV_JOBS, "5")
        assert runner.resolve_jobs(0) == 5

    def test_default_is_serial(self, monkeypatch):
        monkeypatch.delenv(runner.ENV_JOBS, raising=False)
        assert runner.resolve_jobs(0) == 1

    def test_bad_environment_value(self, monkeypatch):
        monkeypatch.setenv(runner.ENV_JOBS, "many")
        with pytest.raises(PreconditionError):
            runner.resolve_jobs(0)


def run_config(tmp_path, body, subcommand, name="cfg.toml", extra=()):
    path = write_config(tmp_path, body, name)
    return cli.main([subcommand, "--config", str(path), *extra])


class TestRunnerAndCli:
    def test_spectrum_run_writes_csv_and_manifest(self, tmp_path):
        out = tmp_path / "out"
        rc = run_config(tmp_path, """
kind = "spectrum"
points_per_cell = 8
out = "%s"
[params]
box_side = 8
""" % out, "spectrum")
        assert rc == 0
        lines = (out / "spectrum.csv").read_text().strip().split("\n")
        assert lines[1] == "index,eigenvalue"
        values = np.array([float(ln.split(",")[1]) for ln in lines[2:]])
        assert values.size == 128
        assert np.all(np.diff(values) >= 0)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["files"][0]["name"] == "spectrum.csv"
        digest = hashlib.sha256((out / "spectrum.csv").read_bytes()).hexdigest()
        assert manifest["files"][0]["sha256"] == digest

    def test_rerun_is_byte_identical(self, tmp_path):
        body = """
kind = "dos"
n_realizations = 6
out = "%s"
[params]
construction = "periodic"
window = [0.7, 0.95]
box_side = 8
bins = 3
"""
        assert run_config(tmp_path, body % (tmp_path / "a"), "dos", "a.toml") == 0
        assert run_config(tmp_path, body % (tmp_path / "b"), "dos", "b.toml") == 0
        assert (tmp_path / "a" / "dos.csv").read_bytes() == \
            (tmp_path / "b" / "dos.csv").read_bytes()
        ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
        mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
        assert ma["files"] == mb["files"]

    def test_parallel_width_does_not_change_bytes(self, tmp_path):
        body = """
kind = "dos"
n_realizations = 8
jobs = %d
out = "%s"
[params]
construction = "periodic"
window = [0.7, 0.95]
box_side = 8
"""
        assert run_config(tmp_path, body % (1, tmp_path / "j1"), "dos",
                          "j1.toml") == 0
        assert run_config(tmp_path, body % (3, tmp_path / "j3"), "dos",
                          "j3.toml") == 0
        assert (tmp_path / "j1" / "dos.csv").read_bytes() == \
            (tmp_path / "j3" / "dos.csv").read_bytes()

    def test_every_file_carries_the_config_digest(self, tmp_path):
        out = tmp_path / "weg"
        rc = run_config(tmp_path, """
kind = "wegner"
n_realizations = 3
out = "%s"
[params]
interval = [0.7, 0.95]
widths = [0.05, 0.1]
box_sides = [8]
center = 0.9
""" % out, "wegner")
        assert rc == 0
        manifest = json.loads((out / "manifest.json").read_text())
        digest = manifest["config_digest"]
        names = {f["name"] for f in manifest["files"]}
        assert names == {"wegner_cells.csv", "wegner_plot.csv",
                         "wegner_summary.json"}
        for name in names:
            text = (out / name).read_text()
            if name.endswith(".csv"):
                assert text.startswith("# config=%s\n" % digest)
            else:
                assert json.loads(text)["config_digest"] == digest

    def test_geometry_failure_writes_error_json(self, tmp_path):
        out = tmp_path / "gre"
        rc = run_config(tmp_path, """
kind = "gre"
backend = "finite_difference"
n_realizations = 1
out = "%s"
[params]
box_side = 16
ambient_side = 32
margin = 0.1
ramp = 0.05
z = [0.3, 0.4]
""" % out, "gre")
        assert rc == 4
        err = json.loads((out / "error.json").read_text())
        assert err["exit_code"] == 4
        assert err["error"] == "GeometryError"
        assert not (out / "manifest.json").exists()

    def test_config_error_exits_2(self, tmp_path):
        path = write_config(tmp_path, "")
        assert cli.main(["dos", "--config", str(path)]) == 2

    def test_kind_subcommand_mismatch_exits_2(self, tmp_path):
        path = write_config(tmp_path, json.dumps(BASE), "cfg.json")
        assert cli.main(["wegner", "--config", str(path)]) == 2

    def test_missing_subcommand_exits_2(self, capsys):
        assert cli.main([]) == 2
        assert "usage" in capsys.readouterr().err

    def test_list_models_prints_registry(self, capsys):
        assert cli.main(["--list-models"]) == 0
        text = capsys.readouterr().out
        for name in ("dirac1d", "dirac2d", "dirac1d_smooth"):
            assert name in text

    def test_cli_overrides_take_effect(self, tmp_path):
        out_b = tmp_path / "redirected"
        rc = run_config(tmp_path, """
kind = "bs"
n_realizations = 2
points_per_cell = 8
out = "%s"
[params]
p = 4.0
box_side = 6
""" % (tmp_path / "ignored"), "bs", extra=("--seed", "9", "--out", str(out_b)))
        assert rc == 0
        manifest = json.loads((out_b / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 9
        first_row = (out_b / "bs_trials.csv").read_text().split("\n")[2]
        assert first_row.startswith("9,")

    def test_hs_check_matches_the_eigen_oracle(self, tmp_path):
        out = tmp_path / "hs"
        rc = run_config(tmp_path, """
kind = "hs-check"
seed = 3
out = "%s"
[params]
box_side = 8
bump = [0.2, 0.9]
family = "plateau"
order = 4
""" % out, "hs-check")
        assert rc == 0
        row = (out / "hs_check.csv").read_text().strip().split("\n")[-1]
        dim, order, error = row.split(",")
        assert int(dim) == 64
        assert float(error) < 1e-6

    def test_gre_run_residuals_are_exact(self, tmp_path):
        out = tmp_path / "gre_ok"
        rc = run_config(tmp_path, """
kind = "gre"
backend = "finite_difference"
n_realizations = 2
out = "%s"
[params]
box_side = 16
ambient_side = 32
margin = 2.0
ramp = 1.0
z = [0.3, 0.4]
""" % out, "gre")
        assert rc == 0
        rows = (out / "gre_residuals.csv").read_text().strip().split("\n")[2:]
        assert len(rows) == 2
        assert all(float(r.split(",")[1]) < 1e-9 for r in rows)
