"""The config-driven runner: exit codes, strict parsing, determinism."""
import json

from alphasde.cli import main


def write_config(tmp_path, config, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(config))
    return path


def read_outputs(outdir):
    return {p.name: p.read_bytes() for p in sorted(outdir.iterdir())}


class TestRun:
    def test_alpha_integral_passes(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "experiment": "alpha-integral",
            "alpha": 1.0,
            "params": {"dt": 1.0, "n_sub": 200, "n_samples": 20000},
            "seed": 11,
            "output_dir": str(tmp_path / "out"),
        })
        assert main(["run", str(cfg)]) == 0
        captured = capsys.readouterr().out
        assert "PASS mean" in captured
        assert "PASS variance" in captured
        summary = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert summary["passed"] is True
        assert summary["tolerances"] == {"mean_band_se": 4.0,
                                         "variance_rel": 0.05}
        assert abs(summary["measured"]["mean"] - 1.0) < 0.01

    def test_unknown_key_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "experiment": "alpha-integral",
            "alpa": 1.0,
            "params": {"dt": 1.0, "n_sub": 200, "n_samples": 20000},
        })
        assert main(["run", str(cfg)]) == 2
        assert "alpa" in capsys.readouterr().err

    def test_unknown_param_key_exits_2(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "experiment": "alpha-integral",
            "alpha": 0.5,
            "params": {"dt": 1.0, "n_sub": 200, "n_samples": 20000,
                       "subdivisions": 3},
        })
        assert main(["run", str(cfg)]) == 2
        assert "subdivisions" in capsys.readouterr().err

    def test_missing_config_exits_2(self, tmp_path, capsys):
        assert main(["run", str(tmp_path / "nope.json")]) == 2

    def test_invalid_json_exits_2(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        assert main(["run", str(path)]) == 2

    def test_failed_tolerance_exits_1(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "experiment": "alpha-integral",
            "alpha": 1.0,
            "params": {"dt": 1.0, "n_sub": 200, "n_samples": 20000},
            "tolerances": {"mean_band_se": 0.001},
            "seed": 11,
            "output_dir": str(tmp_path / "out"),
        })
        assert main(["run", str(cfg)]) == 1
        assert "FAIL mean" in capsys.readouterr().out

    def test_solver_error_exits_3(self, tmp_path):
        # dt far above the stability bound
        cfg = write_config(tmp_path, {
            "experiment": "fpe-evolve",
            "system": "temperature-profile-1d",
            "alpha": 1.0,
            "params": {"initial": {"kind": "uniform"}, "shape": 50,
                       "t_end": 1.0, "dt_scale": 50.0},
            "output_dir": str(tmp_path / "out"),
        })
        assert main(["run", str(cfg)]) == 3

    def test_cross_validate_config(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "experiment": "cross-validate",
            "system": "temperature-profile-1d",
            "alpha": 1.0,
            "params": {"x0": [0.5], "t_end": 0.2, "n_paths": 5000,
                       "dt": 2e-3, "shape": 25},
            "tolerances": {"l1": 0.1, "max_z": 5.0},
            "seed": 3,
            "output_dir": str(tmp_path / "out"),
        })
        assert main(["run", str(cfg)]) == 0
        out = tmp_path / "out"
        assert (out / "histogram.csv").exists()
        assert (out / "fpe_density.csv").exists()
        summary = json.loads((out / "summary.json").read_text())
        assert summary["measured"]["l1"] < 0.1
        assert summary["outputs"] == ["fpe_density.csv", "histogram.csv",
                                      "summary.json"]

    def test_inline_system_and_coefficients(self, tmp_path):
        cfg = write_config(tmp_path, {
            "experiment": "coefficients",
            "system": {
                "dim": 1,
                "drift": ["0"],
                "noise": [["x1"]],
                "domain": [[0.5, 3.0]],
                "boundary": ["reflecting"],
            },
            "alpha": 1.0,
            "params": {"points": [[1.0], [2.0]]},
            "tolerances": {"max_residual": 1e-6},
            "output_dir": str(tmp_path / "out"),
        })
        assert main(["run", str(cfg)]) == 0
        rows = (tmp_path / "out" / "coefficients.csv").read_text()
        assert rows.splitlines()[0] == "x1,a1,a_nid1,a_tot1,residual1"

    def test_martingale_config(self, tmp_path):
        cfg = write_config(tmp_path, {
            "experiment": "martingale",
            "system": "linear-noise-1d",
            "alpha": 0.0,
            "params": {"x0": [1.0], "dt": 1e-3, "t_end": 0.05,
                       "n_paths": 2000},
            "tolerances": {"deviation_band": 4.0},
            "seed": 9,
            "output_dir": str(tmp_path / "out"),
        })
        assert main(["run", str(cfg)]) == 0
        assert (tmp_path / "out" / "martingale.csv").exists()


class TestDeterminism:
    def test_byte_identical_reruns_and_threads(self, tmp_path):
        base = {
            "experiment": "ensemble",
            "system": "temperature-profile-1d",
            "alpha": 0.5,
            "params": {"x0": [0.5], "n_paths": 500, "dt": 1e-3,
                       "t_end": 0.05, "record_stride": 10},
            "seed": 21,
        }
        outputs = []
        for run, threads in (("a", 1), ("b", 1), ("c", 4)):
            outdir = tmp_path / run
            cfg = write_config(tmp_path, dict(base), name=f"{run}.json")
            code = main(["run", str(cfg), "--output-dir", str(outdir),
                         "--threads", str(threads)])
            assert code == 0
            outputs.append(read_outputs(outdir))
        assert outputs[0] == outputs[1]
        first_csv = {k: v for k, v in outputs[0].items() if k.endswith(".csv")}
        third_csv = {k: v for k, v in outputs[2].items() if k.endswith(".csv")}
        assert first_csv == third_csv

    def test_seed_override_changes_results(self, tmp_path):
        base = {
            "experiment": "ensemble",
            "system": "temperature-profile-1d",
            "alpha": 0.5,
            "params": {"x0": [0.5], "n_paths": 100, "dt": 1e-3,
                       "t_end": 0.02},
        }
        csvs = []
        for run, seed in (("a", 1), ("b", 2)):
            outdir = tmp_path / run
            cfg = write_config(tmp_path, dict(base), name=f"{run}.json")
            main(["run", str(cfg), "--output-dir", str(outdir), "--seed",
                  str(seed)])
            csvs.append((outdir / "paths.csv").read_bytes())
        assert csvs[0] != csvs[1]


class TestListSystems:
    def test_contains_builtins(self, capsys):
        assert main(["list-systems"]) == 0
        out = capsys.readouterr().out
        assert "temperature-profile-1d" in out
        assert "linear-noise-1d" in out

    def test_inline_system_listed(self, tmp_path, capsys):
        cfg = write_config(tmp_path, {
            "experiment": "coefficients",
            "system": {"dim": 1, "drift": ["0"], "noise": [["x1"]],
                       "domain": [[0.5, 3.0]], "boundary": ["reflecting"],
                       "name": "my-custom"},
            "alpha": 1.0,
            "params": {},
        })
        assert main(["list-systems", "--config", str(cfg)]) == 0
        assert "my-custom" in capsys.readouterr().out
