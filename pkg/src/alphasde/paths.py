"""
Path sampling: Wiener streams, alpha-convention steppers, ensembles, and
the increment-statistics experiments.

Every path owns an independent counter-based stream (numpy Philox keyed by
the 128-bit value ``master_seed * 2**64 + path_index``), so ensembles are
reproducible bit-exactly for any chunking or worker count.  Derived
experiments that do not return ensembles (the interval-integral experiment,
one-step increment statistics) draw from fixed-size chunk streams
(``SeedSequence(seed, spawn_key=(chunk,))``) and reduce partial sums in
chunk order, which is equally reproducible.
"""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DivergenceError
from .model import (
    drift_at, nid_drift, noise_at, noise_derivatives_at, probe_grid,
    total_drift,
)

_CHUNK_PATHS = 8192           # paths advanced together per chunk
_BLOCK_TARGET_BYTES = 1.28e8  # per-chunk noise buffer budget
_MAX_AUTO_RECORDS = 128
_DIVERGENCE_FACTOR = 1e6


# ---------------------------------------------------------------------------
# per-path streams
# ---------------------------------------------------------------------------

class PathStreams:
    """Philox streams keyed by (master_seed, path_index).

    Reuses one bit generator by resetting its key/counter state, which is
    bit-identical to constructing ``Philox(key=(master_seed << 64) | path)``
    but an order of magnitude faster.  Not thread-safe: give each worker its
    own instance.
    """

    def __init__(self, master_seed):
        self.master_seed = int(master_seed) % (1 << 64)
        self._bitgen = np.random.Philox(key=0)
        self._template = self._bitgen.state

    def generator(self, path_index):
        state = self._template
        state["state"]["key"][0] = int(path_index) % (1 << 64)
        state["state"]["key"][1] = self.master_seed
        state["state"]["counter"][:] = 0
        self._bitgen.state = state
        return np.random.Generator(self._bitgen)


@dataclass(frozen=True)
class WienerIncrements:
    """One path's Gaussian increments (mean 0, variance dt per component)."""

    dt: float
    values: np.ndarray            # (n_steps, noise_dim)
    master_seed: int
    path_index: int

    @classmethod
    def generate(cls, master_seed, path_index, n_steps, noise_dim, dt):
        gen = PathStreams(master_seed).generator(path_index)
        values = gen.standard_normal((n_steps, noise_dim)) * np.sqrt(dt)
        return cls(dt=float(dt), values=values,
                   master_seed=int(master_seed), path_index=int(path_index))


# ---------------------------------------------------------------------------
# steppers and boundaries
# ---------------------------------------------------------------------------

def _core_ito_equivalent(system, alpha, x, dw, dt):
    b = noise_at(system, x)
    a_eff = drift_at(system, x)
    if alpha != 0.0:
        db = noise_derivatives_at(system, x)
        a_eff = a_eff + alpha * np.einsum("...ikm,...mk->...i", db, b)
    return x + a_eff * dt + np.einsum("...ij,...j->...i", b, dw)


def _core_alpha_point(system, alpha, x, dw, dt):
    b0 = noise_at(system, x)
    lead = np.einsum("...ij,...j->...i", b0, dw)
    b1 = noise_at(system, x + alpha * lead)
    return x + drift_at(system, x) * dt \
        + np.einsum("...ij,...j->...i", b1, dw)


def step_ito_equivalent(system, alpha, x, dw, dt):
    """One step of the Ito-form update x + (a + alpha*a_nid)*dt + B(x)*dw,
    followed by boundary handling."""
    x = np.asarray(x, dtype=float)
    return apply_boundaries(
        system, _core_ito_equivalent(system, alpha, x, dw, dt))[0]


def step_alpha_point(system, alpha, x, dw, dt):
    """One step of the two-stage alpha-point scheme: the leading noise part
    B(x)*dw is the predictor, and the coupling is re-evaluated at
    x + alpha * predictor before applying the increment."""
    x = np.asarray(x, dtype=float)
    return apply_boundaries(
        system, _core_alpha_point(system, alpha, x, dw, dt))[0]


_CORE_STEPPERS = {
    "ito_equivalent": _core_ito_equivalent,
    "alpha_point": _core_alpha_point,
}

STEPPERS = {
    "ito_equivalent": step_ito_equivalent,
    "alpha_point": step_alpha_point,
}


def apply_boundaries(system, x):
    """Fold/wrap/flag states per axis; returns (states, absorbed_mask).

    Coordinates already inside the closed domain are left bit-untouched.
    """
    x = np.array(x, dtype=float, copy=True)
    absorbed = np.zeros(x.shape[:-1], dtype=bool)
    for axis, kind in enumerate(system.boundary):
        lo, hi = system.domain[axis]
        width = hi - lo
        xi = x[..., axis]
        out = (xi < lo) | (xi > hi)
        if not np.any(out):
            continue
        if kind == "reflecting":
            y = np.mod(xi[out] - lo, 2.0 * width)
            xi[out] = lo + np.minimum(y, 2.0 * width - y)
        elif kind == "periodic":
            xi[out] = lo + np.mod(xi[out] - lo, width)
        else:  # absorbing
            absorbed |= out
            xi[out] = np.clip(xi[out], lo, hi)
    return x, absorbed


# ---------------------------------------------------------------------------
# ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PathEnsemble:
    """States of n_paths sample paths on a uniform record grid.

    ``states[p, r]`` is path p at ``times[r]``; records are every
    ``record_stride`` internal steps of size dt.  Absorbed paths stay frozen
    at their exit state from ``absorbed_time[p]`` on.
    """

    times: np.ndarray             # (R,)
    states: np.ndarray            # (n_paths, R, dim)
    alpha: float
    stepper: str
    master_seed: int
    dt: float
    record_stride: int
    boundary: tuple
    absorbed: np.ndarray          # (n_paths,) bool
    absorbed_time: np.ndarray     # (n_paths,) float, nan when never

    @property
    def n_paths(self):
        return self.states.shape[0]

    @property
    def dim(self):
        return self.states.shape[2]

    def states_at(self, t):
        """States at a recorded time (exact match up to rounding)."""
        idx = np.flatnonzero(np.isclose(self.times, t, rtol=1e-12,
                                        atol=1e-12))
        if len(idx) != 1:
            raise ConfigError(
                f"time {t} is not on the record grid "
                f"[{self.times[0]} ... {self.times[-1]}] "
                f"(stride {self.times[1] - self.times[0] if len(self.times) > 1 else 0}); "
                "interpolation is refused")
        return self.states[:, idx[0], :]


def _auto_stride(n_steps, max_records=_MAX_AUTO_RECORDS):
    lower = max(1, -(-n_steps // max_records))  # ceil division
    for stride in range(lower, n_steps + 1):
        if n_steps % stride == 0:
            return stride
    return n_steps


def _block_steps(n_steps, chunk, noise_dim):
    size = int(_BLOCK_TARGET_BYTES // (chunk * noise_dim * 8))
    return max(1, min(n_steps, size))


def _stability_warning(system, alpha, dt):
    probes = probe_grid(system, per_axis=5)
    a_max = np.max(np.abs(total_drift(system, probes, alpha)))
    b_max = np.max(np.abs(noise_at(system, probes)))
    scale = np.min(system.widths)
    step_scale = a_max * dt + b_max * np.sqrt(dt)
    if step_scale > 0.25 * scale:
        warnings.warn(
            f"step displacement scale {step_scale:.3g} is large against "
            f"the domain width {scale:.3g}; consider a smaller dt",
            stacklevel=3)


def _sample_initial(gen, density, dim):
    """Draw one starting point from a DensityGrid (cell by mass, then
    uniform inside the cell); consumes 1 + dim uniforms."""
    flat = density.w.ravel() * density.cell_volume
    cdf = np.cumsum(flat)
    cdf /= cdf[-1]
    u = gen.random(1 + dim)
    cell = int(np.searchsorted(cdf, u[0], side="right"))
    cell = min(cell, flat.size - 1)
    idx = np.unravel_index(cell, density.shape)
    point = np.empty(dim)
    for axis in range(dim):
        dx = density.spacings[axis]
        lo_cell = density.axes[axis][idx[axis]] - dx / 2
        point[axis] = lo_cell + u[1 + axis] * dx
    return point


def simulate_ensemble(system, alpha, x0=None, initial_density=None, *,
                      stepper="ito_equivalent", n_paths, dt, t_end,
                      master_seed, record_stride=None, n_workers=1):
    """Simulate n_paths independent paths and record them on a time grid.

    Parameters
    ----------
    x0 : array_like, optional
        Common starting point.  Exactly one of x0/initial_density.
    initial_density : DensityGrid, optional
        Starting points sampled per path from this density (each path's
        stream spends 1 + dim uniforms on the draw before its normals).
    stepper : str
        "ito_equivalent" or "alpha_point".
    record_stride : int, optional
        Record every this many steps (must divide the step count); by
        default the smallest divisor keeping at most 128 records.
    n_workers : int
        Worker threads over path chunks.  Results are bit-identical for
        any value: chunks are fixed and write disjoint slices.

    Raises DivergenceError when a path exceeds 1e6 times the domain scale,
    naming the path and step.
    """
    if (x0 is None) == (initial_density is None):
        raise ConfigError("provide exactly one of x0 or initial_density")
    if stepper not in STEPPERS:
        raise ConfigError(f"unknown stepper {stepper!r}; "
                          f"known: {sorted(STEPPERS)}")
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    n_paths = int(n_paths)
    if n_paths < 1:
        raise ConfigError("n_paths must be positive")
    if dt <= 0 or t_end <= 0:
        raise ConfigError("dt and t_end must be positive")
    n_steps = int(round(t_end / dt))
    if n_steps < 1 or abs(n_steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ConfigError(f"dt = {dt} does not divide t_end = {t_end}")
    if record_stride is None:
        record_stride = _auto_stride(n_steps)
    elif n_steps % int(record_stride) != 0:
        raise ConfigError(
            f"record_stride {record_stride} does not divide the "
            f"{n_steps} steps")
    record_stride = int(record_stride)
    if x0 is not None:
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        if x0.shape != (system.dim,):
            raise ConfigError(f"x0 must have shape ({system.dim},)")
        if not system.contains(x0):
            raise ConfigError(f"x0 = {x0!r} outside the domain")
    _stability_warning(system, alpha, dt)

    n_records = n_steps // record_stride + 1
    times = dt * record_stride * np.arange(n_records)
    states = np.empty((n_paths, n_records, system.dim))
    absorbed = np.zeros(n_paths, dtype=bool)
    absorbed_time = np.full(n_paths, np.nan)
    core_step = _CORE_STEPPERS[stepper]
    has_absorbing = any(kind == "absorbing" for kind in system.boundary)
    scale = _DIVERGENCE_FACTOR * max(1.0, np.max(np.abs(system.domain)))

    chunk = min(_CHUNK_PATHS, n_paths)
    block = _block_steps(n_steps, chunk, system.noise_dim)
    starts = list(range(0, n_paths, chunk))
    sqrt_dt = np.sqrt(dt)

    def run_chunk(start):
        stop = min(start + chunk, n_paths)
        size = stop - start
        # persistent per-path generators: noise is drawn in step blocks,
        # and Philox state carries across blocks, so the per-path draw
        # sequence is independent of the blocking
        gens = []
        x = np.empty((size, system.dim))
        for j in range(size):
            gen = np.random.Generator(np.random.Philox(
                key=((int(master_seed) % (1 << 64)) << 64)
                | ((start + j) % (1 << 64))))
            if initial_density is not None:
                x[j] = _sample_initial(gen, initial_density, system.dim)
            else:
                x[j] = x0
            gens.append(gen)
        eps = np.empty((block, size, system.noise_dim))
        frozen = np.zeros(size, dtype=bool)
        frozen_t = np.full(size, np.nan)
        states[start:stop, 0, :] = x
        for block_start in range(0, n_steps, block):
            n_block = min(block, n_steps - block_start)
            for j, gen in enumerate(gens):
                eps[:n_block, j, :] = gen.standard_normal(
                    (n_block, system.noise_dim))
            eps[:n_block] *= sqrt_dt
            for local in range(n_block):
                s = block_start + local
                x_raw = core_step(system, alpha, x, eps[local], dt)
                # blow-ups are judged on the raw step, before any folding;
                # checking every 16th step is enough because non-finite
                # values persist and folded states stay bounded
                if (s % 16 == 0 or local == n_block - 1) and (
                        not np.all(np.isfinite(x_raw))
                        or np.max(np.abs(x_raw)) > scale):
                    bad = np.flatnonzero(
                        ~np.isfinite(x_raw).all(axis=-1)
                        | (np.abs(x_raw).max(axis=-1) > scale))[0]
                    raise DivergenceError(
                        f"path {start + bad} diverged by step {s + 1} "
                        f"(|x| > {scale:.3g})",
                        path_index=int(start + bad), step_index=s + 1)
                x_new, hit = apply_boundaries(system, x_raw)
                if has_absorbing:
                    # freeze previously absorbed paths, flag new exits
                    x_new[frozen] = x[frozen]
                    newly = hit & ~frozen
                    frozen_t[newly] = (s + 1) * dt
                    frozen |= hit
                x = x_new
                if (s + 1) % record_stride == 0:
                    states[start:stop, (s + 1) // record_stride, :] = x
        absorbed[start:stop] = frozen
        absorbed_time[start:stop] = frozen_t

    if n_workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=int(n_workers)) as pool:
            for future in [pool.submit(run_chunk, s) for s in starts]:
                future.result()
    else:
        for start in starts:
            run_chunk(start)

    return PathEnsemble(
        times=times, states=states, alpha=float(alpha), stepper=stepper,
        master_seed=int(master_seed), dt=float(dt),
        record_stride=record_stride, boundary=system.boundary,
        absorbed=absorbed, absorbed_time=absorbed_time)


# ---------------------------------------------------------------------------
# chunked sampling experiments
# ---------------------------------------------------------------------------

_SAMPLE_CHUNK = 8192


def _chunk_streams(seed, n_total, n_workers, work):
    """Run `work(rng, count)` over fixed chunks; reduce results in order.

    work returns a tuple of arrays/floats; the reduction sums componentwise
    in chunk order, so any worker count gives identical totals.
    """
    counts = []
    offset = 0
    while offset < n_total:
        counts.append(min(_SAMPLE_CHUNK, n_total - offset))
        offset += counts[-1]

    def run(index):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=int(seed), spawn_key=(index,)))
        return work(rng, counts[index])

    if n_workers > 1 and len(counts) > 1:
        with ThreadPoolExecutor(max_workers=int(n_workers)) as pool:
            parts = list(pool.map(run, range(len(counts))))
    else:
        parts = [run(i) for i in range(len(counts))]
    totals = list(parts[0])
    for part in parts[1:]:
        for i, value in enumerate(part):
            totals[i] = totals[i] + value
    return totals


@dataclass(frozen=True)
class IntegralExperimentResult:
    """Sampled statistics of the interval integral of W against dW."""

    alpha: float
    dt: float
    n_sub: int
    n_samples: int
    mean: float
    variance: float
    se_mean: float
    se_variance: float


def alpha_integral_experiment(alpha, dt, n_sub, n_samples, seed,
                              n_workers=1):
    """Monte Carlo estimate of sum_j W(tau_j + alpha*delta) * dW_j.

    The partition splits [0, dt] into n_sub pieces; the interior value
    W(tau_j + alpha*delta) is drawn consistently with the Brownian bridge
    between the endpoints.  The sampled mean approaches alpha*dt and the
    sampled variance the alpha-independent dt^2/2.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    n_sub = int(n_sub)
    n_samples = int(n_samples)
    if n_sub < 100:
        raise ConfigError("n_sub must be at least 100")
    if n_samples < 10_000:
        raise ConfigError("n_samples must be at least 1e4")
    if dt <= 0:
        raise ConfigError("dt must be positive")
    delta = dt / n_sub
    bridge_sd = np.sqrt(alpha * (1.0 - alpha) * delta)

    def work(rng, count):
        dw = rng.standard_normal((count, n_sub)) * np.sqrt(delta)
        w_start = np.cumsum(dw, axis=1) - dw   # W at each tau_j (W_0 = 0)
        w_alpha = w_start + alpha * dw
        if bridge_sd > 0:
            w_alpha = w_alpha + bridge_sd * rng.standard_normal(
                (count, n_sub))
        values = np.sum(w_alpha * dw, axis=1)
        return values.sum(), np.square(values).sum()

    s1, s2 = _chunk_streams(seed, n_samples, n_workers, work)
    mean = s1 / n_samples
    variance = (s2 - n_samples * mean * mean) / (n_samples - 1)
    return IntegralExperimentResult(
        alpha=float(alpha), dt=float(dt), n_sub=n_sub, n_samples=n_samples,
        mean=float(mean), variance=float(variance),
        se_mean=float(np.sqrt(variance / n_samples)),
        se_variance=float(variance * np.sqrt(2.0 / (n_samples - 1))))


@dataclass(frozen=True)
class AlphaConsistencyReport:
    """Measured one-step increment mean next to the three predictions.

    The report measures; it does not assert which prediction is right.
    prediction_sde_premodel is a(x)*dt (the as-modeled reading),
    prediction_ito_form is (a + alpha*a_nid)(x)*dt (the equivalent Ito
    drift), prediction_flux_form is (a + (alpha-1)*a_nid)(x)*dt (the flux
    form's total drift).
    """

    x: np.ndarray
    alpha: float
    dt: float
    n_paths: int
    stepper: str
    empirical_mean: np.ndarray
    std_error: np.ndarray
    prediction_sde_premodel: np.ndarray
    prediction_ito_form: np.ndarray
    prediction_flux_form: np.ndarray
    resolvable: bool


def conditional_increment_report(system, alpha, x, dt, n_paths, seed,
                                 stepper="ito_equivalent", n_workers=1):
    """Mean one-step increment from a fixed state, with standard errors."""
    if stepper not in STEPPERS:
        raise ConfigError(f"unknown stepper {stepper!r}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n_paths = int(n_paths)
    if n_paths < 100:
        raise ConfigError("n_paths must be at least 100")
    if dt <= 0:
        raise ConfigError("dt must be positive")
    from .model import evaluate
    coeffs = evaluate(system, x, alpha)
    step_fn = STEPPERS[stepper]

    def work(rng, count):
        dw = rng.standard_normal((count, system.noise_dim)) * np.sqrt(dt)
        x_batch = np.broadcast_to(x, (count, system.dim))
        inc = step_fn(system, alpha, x_batch, dw, dt) - x
        return inc.sum(axis=0), np.square(inc).sum(axis=0)

    s1, s2 = _chunk_streams(seed, n_paths, n_workers, work)
    mean = s1 / n_paths
    var = (s2 - n_paths * mean * mean) / (n_paths - 1)
    se = np.sqrt(var / n_paths)
    nid_scale = float(np.linalg.norm(coeffs.a_nid)) * dt
    resolvable = nid_scale == 0.0 or nid_scale >= 10.0 * float(
        np.linalg.norm(se))
    return AlphaConsistencyReport(
        x=x, alpha=float(alpha), dt=float(dt), n_paths=n_paths,
        stepper=stepper, empirical_mean=mean, std_error=se,
        prediction_sde_premodel=coeffs.a * dt,
        prediction_ito_form=(coeffs.a + alpha * coeffs.a_nid) * dt,
        prediction_flux_form=coeffs.a_tot * dt,
        resolvable=resolvable)


@dataclass(frozen=True)
class MartingaleDeviationSeries:
    """Mean displacement from the start, per recorded time."""

    times: np.ndarray              # (R,)
    mean_displacement: np.ndarray  # (R, dim)
    std_error: np.ndarray          # (R, dim)
    deviation_norm: np.ndarray     # (R,)
    n_paths: int
    alpha: float
    x0: np.ndarray
    nid_at_x0: np.ndarray


def martingale_deviation(system, alpha, x0, dt, t_end, n_paths, seed,
                         stepper="ito_equivalent", record_stride=None,
                         n_workers=1):
    """Displacement statistics of a pure-noise system (drift must vanish).

    Archives the measured mean displacement with standard errors so both
    readings of the pure-noise behavior (martingale vs initial tendency to
    follow the noise-induced drift) can be inspected; asserts neither.
    """
    probes = probe_grid(system, per_axis=3)
    if np.max(np.abs(drift_at(system, probes))) > 1e-12:
        raise ConfigError(
            "martingale_deviation requires an identically zero drift")
    ensemble = simulate_ensemble(
        system, alpha, x0=x0, stepper=stepper, n_paths=n_paths, dt=dt,
        t_end=t_end, master_seed=seed, record_stride=record_stride,
        n_workers=n_workers)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    disp = ensemble.states - x0
    mean = disp.mean(axis=0)
    se = disp.std(axis=0, ddof=1) / np.sqrt(ensemble.n_paths)
    return MartingaleDeviationSeries(
        times=ensemble.times, mean_displacement=mean, std_error=se,
        deviation_norm=np.linalg.norm(mean, axis=-1),
        n_paths=ensemble.n_paths, alpha=float(alpha), x0=x0,
        nid_at_x0=nid_drift(system, x0))
