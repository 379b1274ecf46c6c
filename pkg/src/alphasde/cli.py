"""
Config-driven experiment runner.

One JSON config describes one experiment; running it writes CSV outputs
plus a summary manifest (inputs echoed, seeds, measured values, pass/fail
against every tolerance actually applied) into the output directory.

Exit codes: 0 success (or measurement-only run), 1 a configured tolerance
failed, 2 configuration error, 3 runtime/solver error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .coords import invariance_check, make_transform
from .csvout import (
    current_to_csv, density_to_csv, ensemble_to_csv, histogram_to_csv,
    series_to_csv, write_csv,
)
from .errors import AlphaSdeError, ConfigError
from .expressions import system_from_config
from .fpe import (
    current, density_mean, density_variance, evolve_to, gaussian_density,
    point_density, stationary, uniform_density,
)
from .model import evaluate, nid_identity_residual, probe_grid, symmetrize
from .paths import (
    alpha_integral_experiment, conditional_increment_report,
    martingale_deviation, simulate_ensemble,
)
from .systems import available_systems, get_system
from .validate import cross_validate

_TOP_KEYS = {"experiment", "system", "alpha", "params", "tolerances",
             "output_dir", "seed", "threads"}


def _check_keys(mapping, allowed, where):
    for key in mapping:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}")


def _require(params, key, where):
    if key not in params:
        raise ConfigError(f"missing key {key!r} in {where}")
    return params[key]


def _resolve_system(config):
    spec = config.get("system")
    if spec is None:
        raise ConfigError("this experiment needs a 'system'")
    if isinstance(spec, str):
        return get_system(spec)
    return system_from_config(spec)


def _resolve_alpha(config):
    if "alpha" not in config:
        raise ConfigError("this experiment needs 'alpha'")
    alpha = float(config["alpha"])
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha


def _initial_density(system, shape, spec):
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("'initial' must be a mapping with a 'kind'")
    kind = spec["kind"]
    if kind == "uniform":
        _check_keys(spec, {"kind"}, "initial")
        return uniform_density(system, shape)
    if kind == "gaussian":
        _check_keys(spec, {"kind", "center", "width"}, "initial")
        return gaussian_density(system, shape,
                                _require(spec, "center", "initial"),
                                _require(spec, "width", "initial"))
    if kind == "point":
        _check_keys(spec, {"kind", "x0"}, "initial")
        return point_density(system, shape, _require(spec, "x0", "initial"))
    raise ConfigError(f"unknown initial kind {kind!r}; "
                      "known: uniform, gaussian, point")


def _initial_function(spec):
    """Initial density as a smooth closure (for the invariance check)."""
    kind = spec.get("kind")
    if kind == "uniform":
        return lambda p: np.ones(p.shape[:-1])
    if kind == "gaussian":
        center = np.atleast_1d(np.asarray(spec["center"], dtype=float))
        width = np.broadcast_to(np.asarray(spec["width"], dtype=float),
                                center.shape)

        def fn(p):
            z = (p - center) / width
            return np.exp(-0.5 * np.sum(z * z, axis=-1))

        return fn
    raise ConfigError("invariance needs a 'uniform' or 'gaussian' initial")


class Check:
    def __init__(self, name, passed, detail):
        self.name = name
        self.passed = bool(passed)
        self.detail = detail


# ---------------------------------------------------------------------------
# experiment runners: (measured, checks, output files)
# ---------------------------------------------------------------------------

def _run_coefficients(config, outdir, seed, threads):
    system = _resolve_system(config)
    alpha = _resolve_alpha(config)
    params = config["params"]
    _check_keys(params, {"points", "per_axis"}, "params")
    if "points" in params:
        points = np.atleast_2d(np.asarray(params["points"], dtype=float))
    else:
        points = probe_grid(system, per_axis=int(params.get("per_axis", 5)))
    rows = []
    max_residual = 0.0
    for x in points:
        ev = evaluate(system, x, alpha)
        res = nid_identity_residual(system, x)
        max_residual = max(max_residual, float(np.max(np.abs(res))))
        rows.append(list(x) + list(ev.a) + list(ev.a_nid) + list(ev.a_tot)
                    + list(res))
    dim = system.dim
    header = ([f"x{i+1}" for i in range(dim)]
              + [f"a{i+1}" for i in range(dim)]
              + [f"a_nid{i+1}" for i in range(dim)]
              + [f"a_tot{i+1}" for i in range(dim)]
              + [f"residual{i+1}" for i in range(dim)])
    write_csv(outdir / "coefficients.csv", header, rows)
    measured = {"max_abs_residual": max_residual,
                "n_points": len(points)}
    checks = []
    tol = config["tolerances"]
    _check_keys(tol, {"max_residual"}, "tolerances")
    if "max_residual" in tol:
        limit = float(tol["max_residual"])
        checks.append(Check(
            "max_residual", max_residual <= limit,
            f"max |residual| = {max_residual:.3e} vs {limit:.3e}"))
    return measured, checks, ["coefficients.csv"]


def _run_symmetrize(config, outdir, seed, threads):
    params = config["params"]
    _check_keys(params, {"matrix", "random"}, "params")
    if ("matrix" in params) == ("random" in params):
        raise ConfigError("give exactly one of 'matrix' or 'random'")
    if "matrix" in params:
        matrices = [np.asarray(params["matrix"], dtype=float)]
    else:
        spec = params["random"]
        _check_keys(spec, {"count", "size"}, "params.random")
        rng = np.random.default_rng(seed)
        count = int(_require(spec, "count", "params.random"))
        size = int(_require(spec, "size", "params.random"))
        matrices = [rng.normal(size=(size, size)) for _ in range(count)]
    rows = []
    worst = {"symmetry": 0.0, "orthogonality": 0.0, "diffusion": 0.0}
    for i, b in enumerate(matrices):
        res = symmetrize(b)
        n = res.b_star.shape[0]
        sym = float(np.max(np.abs(res.b_star - res.b_star.T)))
        orth = float(np.max(np.abs(res.o @ res.o.T - np.eye(n))))
        if b.shape[1] < b.shape[0]:
            b_sq = np.hstack([b, np.zeros((b.shape[0],
                                           b.shape[0] - b.shape[1]))])
        else:
            b_sq = b
        diff = float(np.max(np.abs(res.b_star @ res.b_star.T
                                   - b_sq @ b_sq.T)))
        worst["symmetry"] = max(worst["symmetry"], sym)
        worst["orthogonality"] = max(worst["orthogonality"], orth)
        worst["diffusion"] = max(worst["diffusion"], diff)
        rows.append([i, b.shape[0], b.shape[1], res.padded, sym, orth,
                     diff])
    write_csv(outdir / "symmetrize.csv",
              ["case", "rows", "cols", "padded", "asymmetry",
               "orthogonality_defect", "diffusion_defect"], rows)
    tol = dict(config["tolerances"])
    _check_keys(tol, {"symmetry", "orthogonality", "diffusion"},
                "tolerances")
    applied = {"symmetry": float(tol.get("symmetry", 1e-10)),
               "orthogonality": float(tol.get("orthogonality", 1e-12)),
               "diffusion": float(tol.get("diffusion", 1e-10))}
    config["tolerances"] = applied
    checks = [Check(name, worst[name] <= limit,
                    f"worst {name} defect {worst[name]:.3e} vs {limit:.3e}")
              for name, limit in applied.items()]
    measured = {f"worst_{k}": v for k, v in worst.items()}
    measured["n_matrices"] = len(matrices)
    return measured, checks, ["symmetrize.csv"]


def _run_alpha_integral(config, outdir, seed, threads):
    alpha = _resolve_alpha(config)
    params = config["params"]
    _check_keys(params, {"dt", "n_sub", "n_samples"}, "params")
    dt = float(_require(params, "dt", "params"))
    result = alpha_integral_experiment(
        alpha, dt, int(_require(params, "n_sub", "params")),
        int(_require(params, "n_samples", "params")), seed,
        n_workers=threads)
    write_csv(outdir / "alpha_integral.csv",
              ["alpha", "dt", "n_sub", "n_samples", "mean", "se_mean",
               "variance", "se_variance"],
              [[result.alpha, result.dt, result.n_sub, result.n_samples,
                result.mean, result.se_mean, result.variance,
                result.se_variance]])
    tol = dict(config["tolerances"])
    _check_keys(tol, {"mean_band_se", "variance_rel"}, "tolerances")
    applied = {"mean_band_se": float(tol.get("mean_band_se", 4.0)),
               "variance_rel": float(tol.get("variance_rel", 0.05))}
    config["tolerances"] = applied
    target_mean = alpha * dt
    target_var = dt * dt / 2.0
    checks = [
        Check("mean",
              abs(result.mean - target_mean)
              <= applied["mean_band_se"] * result.se_mean,
              f"mean {result.mean:.6f} vs {target_mean:.6f} "
              f"(band {applied['mean_band_se']:.1f} SE, "
              f"SE {result.se_mean:.2e})"),
        Check("variance",
              abs(result.variance - target_var)
              <= applied["variance_rel"] * target_var,
              f"variance {result.variance:.6f} vs {target_var:.6f} "
              f"(rel {applied['variance_rel']})"),
    ]
    measured = {"mean": result.mean, "se_mean": result.se_mean,
                "variance": result.variance,
                "se_variance": result.se_variance}
    return measured, checks, ["alpha_integral.csv"]


def _ensemble_from_params(system, alpha, params, seed, threads):
    shape_keys = {"x0", "initial", "shape", "stepper", "n_paths", "dt",
                  "t_end", "record_stride"}
    _check_keys(params, shape_keys, "params")
    x0 = params.get("x0")
    initial = None
    if "initial" in params:
        shape = _require(params, "shape", "params (needed with 'initial')")
        initial = _initial_density(system, shape, params["initial"])
    return simulate_ensemble(
        system, alpha, x0=x0, initial_density=initial,
        stepper=params.get("stepper", "ito_equivalent"),
        n_paths=int(_require(params, "n_paths", "params")),
        dt=float(_require(params, "dt", "params")),
        t_end=float(_require(params, "t_end", "params")),
        master_seed=seed,
        record_stride=params.get("record_stride"),
        n_workers=threads)


def _run_ensemble(config, outdir, seed, threads):
    system = _resolve_system(config)
    alpha = _resolve_alpha(config)
    ensemble = _ensemble_from_params(system, alpha, config["params"], seed,
                                     threads)
    ensemble_to_csv(ensemble, outdir / "paths.csv")
    final = ensemble.states[:, -1, :]
    measured = {
        "n_paths": ensemble.n_paths,
        "n_records": len(ensemble.times),
        "absorbed_fraction": float(ensemble.absorbed.mean()),
        "final_mean": [float(v) for v in final.mean(axis=0)],
    }
    _check_keys(config["tolerances"], set(), "tolerances")
    return measured, [], ["paths.csv"]


def _run_conditional_increment(config, outdir, seed, threads):
    system = _resolve_system(config)
    alpha = _resolve_alpha(config)
    params = config["params"]
    _check_keys(params, {"x", "dt", "n_paths", "stepper"}, "params")
    report = conditional_increment_report(
        system, alpha, _require(params, "x", "params"),
        dt=float(_require(params, "dt", "params")),
        n_paths=int(_require(params, "n_paths", "params")), seed=seed,
        stepper=params.get("stepper", "ito_equivalent"),
        n_workers=threads)
    rows = [[i, report.empirical_mean[i], report.std_error[i],
             report.prediction_sde_premodel[i],
             report.prediction_ito_form[i],
             report.prediction_flux_form[i]]
            for i in range(system.dim)]
    write_csv(outdir / "conditional_increment.csv",
              ["component", "empirical_mean", "se",
               "prediction_sde_premodel", "prediction_ito_form",
               "prediction_flux_form"], rows)
    tol = dict(config["tolerances"])
    _check_keys(tol, {"se_band", "match"}, "tolerances")
    checks = []
    if "match" in tol:
        target_name = tol["match"]
        field = {"sde_premodel": report.prediction_sde_premodel,
                 "ito_form": report.prediction_ito_form,
                 "flux_form": report.prediction_flux_form}.get(target_name)
        if field is None:
            raise ConfigError(
                f"tolerances.match must be one of sde_premodel, ito_form, "
                f"flux_form, got {target_name!r}")
        band = float(tol.get("se_band", 4.0))
        ok = bool(np.all(np.abs(report.empirical_mean - field)
                         <= band * report.std_error))
        checks.append(Check(
            f"match_{target_name}", ok,
            f"empirical {report.empirical_mean} vs {field} "
            f"(band {band} SE, SE {report.std_error})"))
        config["tolerances"] = {"match": target_name, "se_band": band}
    measured = {
        "empirical_mean": [float(v) for v in report.empirical_mean],
        "std_error": [float(v) for v in report.std_error],
        "prediction_sde_premodel":
            [float(v) for v in report.prediction_sde_premodel],
        "prediction_ito_form":
            [float(v) for v in report.prediction_ito_form],
        "prediction_flux_form":
            [float(v) for v in report.prediction_flux_form],
        "resolvable": report.resolvable,
    }
    return measured, checks, ["conditional_increment.csv"]


def _run_martingale(config, outdir, seed, threads):
    system = _resolve_system(config)
    alpha = _resolve_alpha(config)
    params = config["params"]
    _check_keys(params, {"x0", "dt", "t_end", "n_paths", "stepper",
                         "record_stride"}, "params")
    series = martingale_deviation(
        system, alpha, _require(params, "x0", "params"),
        dt=float(_require(params, "dt", "params")),
        t_end=float(_require(params, "t_end", "params")),
        n_paths=int(_require(params, "n_paths", "params")), seed=seed,
        stepper=params.get("stepper", "ito_equivalent"),
        record_stride=params.get("record_stride"), n_workers=threads)
    series_to_csv(series, outdir / "martingale.csv")
    tol = dict(config["tolerances"])
    _check_keys(tol, {"deviation_band", "nid_tracking_band"}, "tolerances")
    checks = []
    later = slice(1, None)
    if "deviation_band" in tol:
        band = float(tol["deviation_band"])
        ok = bool(np.all(np.abs(series.mean_displacement[later])
                         <= band * series.std_error[later]))
        checks.append(Check(
            "martingale_deviation", ok,
            f"max |mean displacement| / SE = "
            f"{np.max(np.abs(series.mean_displacement[later]) / series.std_error[later]):.2f} "
            f"vs band {band}"))
    if "nid_tracking_band" in tol:
        band = float(tol["nid_tracking_band"])
        target = series.times[later, None] * series.nid_at_x0
        gap = np.abs(series.mean_displacement[later] - target)
        ok = bool(np.all(gap <= band * series.std_error[later]))
        checks.append(Check(
            "nid_tracking", ok,
            f"max |mean - a_nid*t| / SE = "
            f"{np.max(gap / series.std_error[later]):.2f} vs band {band}"))
    measured = {
        "final_deviation_norm": float(series.deviation_norm[-1]),
        "max_deviation_norm": float(series.deviation_norm.max()),
        "nid_at_x0": [float(v) for v in series.nid_at_x0],
    }
    return measured, checks, ["martingale.csv"]


def _run_fpe_evolve(config, outdir, seed, threads):
    system = _resolve_system(config)
    alpha = _resolve_alpha(config)
    params = config["params"]
    _check_keys(params, {"initial", "shape", "t_end", "dt_scale"}, "params")
    shape = _require(params, "shape", "params")
    grid0 = _initial_density(system, shape,
                             _require(params, "initial", "params"))
    density_to_csv(grid0, outdir / "initial_density.csv")
    diag = {}
    out = evolve_to(system, alpha, grid0,
                    float(_require(params, "t_end", "params")),
                    diagnostics=diag,
                    dt_scale=float(params.get("dt_scale", 1.0)))
    density_to_csv(out, outdir / "density.csv")
    current_to_csv(current(system, alpha, out), outdir / "current.csv")
    volume = float(np.prod([e[-1] - e[0] for e in out.edges]))
    uniform_gap = float(np.max(np.abs(out.w - 1.0 / volume)))
    measured = {
        "final_mass": diag["final_mass"],
        "max_mass_drift_per_step": diag["max_mass_drift_per_step"],
        "min_density": diag["min_density"],
        "n_steps": diag["n_steps"],
        "dt": diag["dt"],
        "max_uniform_gap": uniform_gap,
    }
    tol = dict(config["tolerances"])
    _check_keys(tol, {"mass_drift", "uniform_gap"}, "tolerances")
    applied = {"mass_drift": float(tol.get("mass_drift", 1e-12))}
    checks = [Check("mass_drift",
                    diag["max_mass_drift_per_step"] <= applied["mass_drift"],
                    f"max per-step drift {diag['max_mass_drift_per_step']:.3e} "
                    f"vs {applied['mass_drift']:.1e}")]
    if "uniform_gap" in tol:
        applied["uniform_gap"] = float(tol["uniform_gap"])
        checks.append(Check(
            "uniform_gap", uniform_gap <= applied["uniform_gap"],
            f"max |w - uniform| = {uniform_gap:.3e} vs "
            f"{applied['uniform_gap']:.1e}"))
    config["tolerances"] = applied
    return measured, checks, ["initial_density.csv", "density.csv",
                              "current.csv"]


def _run_fpe_stationary(config, outdir, seed, threads):
    system = _resolve_system(config)
    alpha = _resolve_alpha(config)
    params = config["params"]
    _check_keys(params, {"shape"}, "params")
    grid = stationary(system, alpha, _require(params, "shape", "params"))
    density_to_csv(grid, outdir / "density.csv")
    measured = {
        "mean": [float(v) for v in density_mean(grid)],
        "variance": [float(v) for v in density_variance(grid)],
        "min_density": float(grid.w.min()),
    }
    tol = dict(config["tolerances"])
    _check_keys(tol, {"variance", "variance_rel"}, "tolerances")
    checks = []
    if "variance" in tol:
        target = float(tol["variance"])
        rel = float(tol.get("variance_rel", 0.02))
        var = measured["variance"][0]
        checks.append(Check(
            "variance", abs(var - target) <= rel * target,
            f"variance {var:.5f} vs {target} (rel {rel})"))
    return measured, checks, ["density.csv"]


def _run_cross_validate(config, outdir, seed, threads):
    system = _resolve_system(config)
    alpha = _resolve_alpha(config)
    params = config["params"]
    _check_keys(params, {"x0", "initial", "t_end", "n_paths", "dt", "shape",
                         "stepper", "fpe_dt_scale"}, "params")
    shape = _require(params, "shape", "params")
    initial = None
    if "initial" in params:
        initial = _initial_density(system, shape, params["initial"])
    report = cross_validate(
        system, alpha, x0=params.get("x0"), initial_density=initial,
        t_end=float(_require(params, "t_end", "params")),
        n_paths=int(_require(params, "n_paths", "params")),
        dt=float(_require(params, "dt", "params")), shape=shape, seed=seed,
        stepper=params.get("stepper", "ito_equivalent"),
        n_workers=threads,
        fpe_dt_scale=float(params.get("fpe_dt_scale", 1.0)))
    histogram_to_csv(report.histogram, outdir / "histogram.csv")
    density_to_csv(report.fpe_density, outdir / "fpe_density.csv")
    tol = dict(config["tolerances"])
    _check_keys(tol, {"l1", "max_z", "frac_z3"}, "tolerances")
    applied = {"l1": float(tol.get("l1", 0.05)),
               "max_z": float(tol.get("max_z", 5.0))}
    checks = [
        Check("l1", report.l1 <= applied["l1"],
              f"l1 = {report.l1:.4f} vs {applied['l1']}"),
        Check("max_z", report.max_abs_z <= applied["max_z"],
              f"max |z| = {report.max_abs_z:.2f} vs {applied['max_z']}"),
    ]
    if "frac_z3" in tol:
        applied["frac_z3"] = float(tol["frac_z3"])
        checks.append(Check(
            "frac_z3", report.frac_abs_z_gt3 <= applied["frac_z3"],
            f"fraction |z|>3 = {report.frac_abs_z_gt3:.4f} vs "
            f"{applied['frac_z3']}"))
    config["tolerances"] = applied
    measured = {"l1": report.l1, "ks": report.ks,
                "max_abs_z": report.max_abs_z,
                "frac_abs_z_gt3": report.frac_abs_z_gt3,
                "absorbed_fraction": report.histogram.absorbed_fraction}
    return measured, checks, ["histogram.csv", "fpe_density.csv"]


def _run_invariance(config, outdir, seed, threads):
    system = _resolve_system(config)
    alpha = _resolve_alpha(config)
    params = config["params"]
    _check_keys(params, {"transform", "initial", "t_end", "shape", "refine",
                         "dt_scale"}, "params")
    tspec = dict(_require(params, "transform", "params"))
    _check_keys(tspec, {"name", "factors", "matrix", "offset"},
                "params.transform")
    tname = _require(tspec, "name", "params.transform")
    tkwargs = {k: v for k, v in tspec.items() if k != "name"}
    transform = make_transform(tname, system.dim, **tkwargs)
    initial_fn = _initial_function(_require(params, "initial", "params"))
    t_end = float(_require(params, "t_end", "params"))
    shape = _require(params, "shape", "params")
    dt_scale = float(params.get("dt_scale", 1.0))
    base = invariance_check(system, transform, alpha, initial_fn, t_end,
                            shape, dt_scale=dt_scale)
    density_to_csv(base.grid_transported, outdir / "transported.csv")
    density_to_csv(base.grid_direct, outdir / "direct.csv")
    measured = {"l1_mismatch": base.l1_mismatch}
    outputs = ["transported.csv", "direct.csv"]
    ratio = None
    if params.get("refine", False):
        fine_shape = tuple(2 * n for n in np.atleast_1d(shape))
        fine_shape = fine_shape[0] if len(fine_shape) == 1 else fine_shape
        fine = invariance_check(system, transform, alpha, initial_fn,
                                t_end, fine_shape, dt_scale=dt_scale)
        measured["l1_mismatch_refined"] = fine.l1_mismatch
        ratio = base.l1_mismatch / fine.l1_mismatch \
            if fine.l1_mismatch > 0 else float("inf")
        measured["refinement_ratio"] = ratio
    tol = dict(config["tolerances"])
    _check_keys(tol, {"l1", "ratio_low", "ratio_high"}, "tolerances")
    checks = []
    if "l1" in tol:
        limit = float(tol["l1"])
        checks.append(Check("l1_mismatch", base.l1_mismatch <= limit,
                            f"l1 = {base.l1_mismatch:.5f} vs {limit}"))
    if ratio is not None and ("ratio_low" in tol or "ratio_high" in tol):
        low = float(tol.get("ratio_low", 3.0))
        high = float(tol.get("ratio_high", 5.0))
        checks.append(Check(
            "refinement_ratio", low <= ratio <= high,
            f"ratio = {ratio:.2f} vs [{low}, {high}]"))
    return measured, checks, outputs


_EXPERIMENTS = {
    "coefficients": _run_coefficients,
    "symmetrize": _run_symmetrize,
    "alpha-integral": _run_alpha_integral,
    "ensemble": _run_ensemble,
    "conditional-increment": _run_conditional_increment,
    "martingale": _run_martingale,
    "fpe-evolve": _run_fpe_evolve,
    "fpe-stationary": _run_fpe_stationary,
    "cross-validate": _run_cross_validate,
    "invariance": _run_invariance,
}


def run_config(config, output_dir=None, seed=None, threads=None):
    """Run one experiment config; returns (exit_code, manifest)."""
    if not isinstance(config, dict):
        raise ConfigError("config must be a JSON object")
    _check_keys(config, _TOP_KEYS, "config")
    experiment = config.get("experiment")
    if experiment not in _EXPERIMENTS:
        known = ", ".join(sorted(_EXPERIMENTS))
        raise ConfigError(
            f"unknown experiment {experiment!r}; known: {known}")
    config = dict(config)
    config.setdefault("params", {})
    config.setdefault("tolerances", {})
    if not isinstance(config["params"], dict) \
            or not isinstance(config["tolerances"], dict):
        raise ConfigError("'params' and 'tolerances' must be mappings")
    seed = int(config.get("seed", 0) if seed is None else seed)
    threads = int(config.get("threads", 1) if threads is None else threads)
    if threads < 1:
        raise ConfigError("threads must be at least 1")
    outdir = Path(config.get("output_dir", "out")
                  if output_dir is None else output_dir)
    outdir.mkdir(parents=True, exist_ok=True)

    measured, checks, outputs = _EXPERIMENTS[experiment](
        config, outdir, seed, threads)

    passed = all(c.passed for c in checks) if checks else None
    manifest = {
        "experiment": experiment,
        "package_version": __version__,
        "seed": seed,
        "threads": threads,
        "system": config.get("system"),
        "alpha": config.get("alpha"),
        "params": config["params"],
        "tolerances": config["tolerances"],
        "measured": measured,
        "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail}
                   for c in checks],
        "passed": passed,
        "outputs": sorted(outputs) + ["summary.json"],
    }
    with open(outdir / "summary.json", "w") as handle:
        json.dump(manifest, handle, indent=2, sort_keys=True)
        handle.write("\n")

    print(f"experiment: {experiment}")
    for check in checks:
        print(f"  {'PASS' if check.passed else 'FAIL'} {check.name}: "
              f"{check.detail}")
    if not checks:
        print("  (measurement only, no tolerances configured)")
    for key, value in sorted(measured.items()):
        print(f"  measured {key}: {value}")
    print(f"  outputs in {outdir}")
    return (0 if passed in (True, None) else 1), manifest


def _cmd_run(args):
    path = Path(args.config)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        config = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    code, _ = run_config(config, output_dir=args.output_dir,
                         seed=args.seed, threads=args.threads)
    return code


def _cmd_list_systems(args):
    systems = dict(available_systems())
    if args.config:
        config = json.loads(Path(args.config).read_text())
        spec = config.get("system")
        if isinstance(spec, dict):
            inline = system_from_config(spec)
            systems[inline.name] = (f"{inline.dim}D inline system "
                                    "from config")
    for name, desc in sorted(systems.items()):
        print(f"{name}: {desc}")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="alphasde",
        description="Experiment runner for SDE evaluation-point "
                    "conventions")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="run one experiment config")
    run_p.add_argument("config", help="path to a JSON experiment config")
    run_p.add_argument("--output-dir", default=None,
                       help="override the config's output directory")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the config's seed")
    run_p.add_argument("--threads", type=int, default=None,
                       help="override the config's worker count")
    list_p = sub.add_parser("list-systems",
                            help="print the built-in system registry")
    list_p.add_argument("--config", default=None,
                        help="also list the config's inline system")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        return _cmd_list_systems(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except AlphaSdeError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
