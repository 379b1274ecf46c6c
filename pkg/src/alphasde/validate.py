"""
Cross-validation between path ensembles and grid densities.

The central consistency check of the package: the alpha-convention SDE
(sampled with the equivalent-Ito stepper) and the alpha-family evolution
equation describe the same process, so a binned ensemble and the evolved
grid density must agree within Monte Carlo noise, at every alpha.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .fpe import DensityGrid, evolve_to, point_density
from .paths import simulate_ensemble

_Z_DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class HistogramDensity:
    """Binned ensemble states, normalized over in-grid active paths.

    Absorbed paths are excluded from the density and reported separately
    (absorbed_fraction), so absorbing-boundary comparisons stay honest.
    """

    axes: tuple
    density: np.ndarray
    counts: np.ndarray
    std_error: np.ndarray
    n_paths: int
    n_active: int
    n_outside: int
    absorbed_fraction: float
    time: float

    @property
    def dim(self):
        return len(self.axes)

    @property
    def spacings(self):
        return tuple(ax[1] - ax[0] for ax in self.axes)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacings))


def histogram(ensemble, t, grid):
    """Bin ensemble states at a recorded time onto a DensityGrid's cells.

    The time must lie on the record grid (interpolation is refused).
    Density is count / (n_in * cell volume), so the in-grid mass is exactly
    one; per-bin standard errors are sqrt(count) / (n_in * cell volume).
    """
    if not isinstance(grid, DensityGrid):
        raise ConfigError("histogram needs a DensityGrid for the binning")
    states = ensemble.states_at(t)
    if states.shape[1] != grid.dim:
        raise ConfigError("ensemble dimension does not match the grid")
    gone = ensemble.absorbed & (ensemble.absorbed_time <= t + 1e-12)
    active = states[~gone]
    edges = grid.edges
    counts, _ = np.histogramdd(active, bins=edges)
    n_in = int(counts.sum())
    n_outside = active.shape[0] - n_in
    vol = grid.cell_volume
    if n_in == 0:
        raise ConfigError("no active paths fall inside the grid")
    density = counts / (n_in * vol)
    std_error = np.sqrt(counts) / (n_in * vol)
    return HistogramDensity(
        axes=grid.axes, density=density, counts=counts,
        std_error=std_error, n_paths=ensemble.n_paths,
        n_active=int(active.shape[0]), n_outside=n_outside,
        absorbed_fraction=float(gone.mean()), time=float(t))


def _density_values(obj):
    if isinstance(obj, DensityGrid):
        return obj.axes, obj.w, obj.cell_volume
    if isinstance(obj, HistogramDensity):
        return obj.axes, obj.density, obj.cell_volume
    raise ConfigError(f"not a density object: {type(obj).__name__}")


def _check_same_axes(p_axes, q_axes):
    if len(p_axes) != len(q_axes):
        raise ConfigError("densities live on different dimensions")
    for a, b in zip(p_axes, q_axes):
        if len(a) != len(b) or not np.allclose(a, b, rtol=1e-10, atol=1e-12):
            raise ConfigError("densities live on different grids")


def l1_distance(p, q):
    """Integral of |p - q|: 0 for identical densities, 2 for disjoint."""
    p_axes, p_vals, vol = _density_values(p)
    q_axes, q_vals, _ = _density_values(q)
    _check_same_axes(p_axes, q_axes)
    return float(np.sum(np.abs(p_vals - q_vals)) * vol)


def ks_distance(p, q):
    """Max absolute difference of cumulative masses (1D only)."""
    p_axes, p_vals, vol = _density_values(p)
    q_axes, q_vals, _ = _density_values(q)
    _check_same_axes(p_axes, q_axes)
    if len(p_axes) != 1:
        raise ConfigError("the KS statistic is defined for 1D densities")
    return float(np.max(np.abs(np.cumsum(p_vals * vol)
                               - np.cumsum(q_vals * vol))))


@dataclass(frozen=True)
class CrossValidationReport:
    """Ensemble histogram vs evolved grid density at the same alpha."""

    alpha: float
    t_end: float
    l1: float
    ks: float | None
    z_scores: np.ndarray
    max_abs_z: float
    frac_abs_z_gt3: float
    histogram: HistogramDensity
    fpe_density: DensityGrid
    n_paths: int
    dt: float
    seed: int
    stepper: str


def cross_validate(system, alpha, x0=None, initial_density=None, *,
                   t_end, n_paths, dt, shape, seed,
                   stepper="ito_equivalent", n_workers=1, fpe_dt_scale=1.0):
    """Simulate the alpha-SDE and evolve the alpha-density side by side.

    The ensemble uses the equivalent-Ito stepper at the given alpha; the
    grid density evolves under the matching alpha-family operator from the
    same initial condition; both are compared at t_end on the same grid
    (L1, KS in 1D, per-bin z-scores against binomial noise).
    """
    if (x0 is None) == (initial_density is None):
        raise ConfigError("provide exactly one of x0 or initial_density")
    if x0 is not None:
        fpe0 = point_density(system, shape, x0)
    else:
        shape_t = (shape,) if np.isscalar(shape) else tuple(shape)
        if initial_density.shape != shape_t:
            raise ConfigError(
                "initial_density must live on the comparison grid shape")
        fpe0 = initial_density
    n_steps = int(round(t_end / dt))
    ensemble = simulate_ensemble(
        system, alpha, x0=x0, initial_density=initial_density,
        stepper=stepper, n_paths=n_paths, dt=dt, t_end=t_end,
        master_seed=seed, record_stride=n_steps, n_workers=n_workers)
    fpe_out = evolve_to(system, alpha, fpe0, t_end, dt_scale=fpe_dt_scale)
    hist = histogram(ensemble, ensemble.times[-1], fpe_out)

    counts = hist.counts
    n_in = hist.n_active - hist.n_outside
    expected = n_in * fpe_out.w * fpe_out.cell_volume
    if expected.size and expected[expected > 0].min() < 10.0:
        warnings.warn("some bins expect fewer than 10 paths; z-scores "
                      "will be noisy", stacklevel=2)
    denom = np.sqrt(np.maximum(expected * (1.0 - expected / max(n_in, 1)),
                               _Z_DENOM_FLOOR))
    z = (counts - expected) / denom
    ks = ks_distance(hist, fpe_out) if fpe_out.dim == 1 else None
    return CrossValidationReport(
        alpha=float(alpha), t_end=float(t_end),
        l1=l1_distance(hist, fpe_out), ks=ks, z_scores=z,
        max_abs_z=float(np.max(np.abs(z))),
        frac_abs_z_gt3=float(np.mean(np.abs(z) > 3.0)),
        histogram=hist, fpe_density=fpe_out, n_paths=int(n_paths),
        dt=float(dt), seed=int(seed), stepper=stepper)
