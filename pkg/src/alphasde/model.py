"""
SDE system definitions and coefficient-derived quantities.

A system is the pair of fields a(x) (drift) and B(x) (noise coupling) on an
axis-aligned box.  Everything the rest of the package consumes is derived
pointwise from these two fields: the diffusion tensor D = B B^T, the
noise-induced drift, the total drift for a convention parameter alpha, the
identity linking the noise-induced drift to the divergence of D, and the
orthogonal symmetrization of a square coupling matrix.

Coefficient fields are vectorized: they must accept arrays of shape
``(..., dim)`` and return ``(..., dim)`` (drift) or ``(..., dim, noise_dim)``
(noise).  All derived quantities preserve leading batch axes.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import DomainError, EvaluationError

BOUNDARY_KINDS = ("reflecting", "absorbing", "periodic")

# Default relative finite-difference step; the actual step per axis is
# fd_step * (1 + |x_i|).
DEFAULT_FD_STEP = 1e-5


def _as_array_field(values, shape, what):
    arr = np.asarray(values, dtype=float)
    if arr.shape != shape:
        raise EvaluationError(f"{what}: expected shape {shape}, got {arr.shape}")
    return arr


@dataclass(frozen=True)
class SystemSpec:
    """An SDE system dX = a(X) dt + B(X) dW on an axis-aligned box.

    Parameters
    ----------
    dim : int
        State dimension.
    noise_dim : int
        Number of independent Wiener components.
    drift : callable
        ``a(x)``, mapping ``(..., dim)`` points to ``(..., dim)`` vectors.
    noise : callable
        ``B(x)``, mapping ``(..., dim)`` points to ``(..., dim, noise_dim)``
        matrices.
    domain : array_like
        ``(dim, 2)`` array of per-axis bounds ``[lo_i, hi_i]``.
    boundary : sequence of str
        Per-axis boundary kind; each one of {"reflecting", "absorbing",
        "periodic"}.
    drift_jacobian : callable, optional
        Analytic ``da_i/dx_j`` with shape ``(..., dim, dim)``.  When absent,
        central finite differences are used.
    noise_derivatives : callable, optional
        Analytic ``dB_ik/dx_m`` with shape ``(..., dim, noise_dim, dim)``.
    fd_step : float
        Relative finite-difference step (per-axis step is
        ``fd_step * (1 + |x_i|)``).
    name : str
        Optional registry name, used in reports.
    """

    dim: int
    noise_dim: int
    drift: Callable
    noise: Callable
    domain: np.ndarray
    boundary: tuple
    drift_jacobian: Callable | None = None
    noise_derivatives: Callable | None = None
    fd_step: float = DEFAULT_FD_STEP
    name: str = ""

    def __post_init__(self):
        if self.dim < 1 or self.noise_dim < 1:
            raise EvaluationError("dim and noise_dim must be positive")
        domain = np.atleast_2d(np.asarray(self.domain, dtype=float))
        if domain.shape != (self.dim, 2):
            raise EvaluationError(
                f"domain must have shape ({self.dim}, 2), got {domain.shape}")
        if not np.all(domain[:, 0] < domain[:, 1]):
            raise EvaluationError("domain must satisfy lo < hi on every axis")
        boundary = tuple(self.boundary) if not isinstance(self.boundary, str) \
            else (self.boundary,) * self.dim
        if len(boundary) != self.dim:
            raise EvaluationError("need one boundary kind per axis")
        for kind in boundary:
            if kind not in BOUNDARY_KINDS:
                raise EvaluationError(f"unknown boundary kind {kind!r}")
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "boundary", boundary)
        self._validate_fields()

    # -- construction-time validation ------------------------------------

    def _validate_fields(self):
        probes = probe_grid(self, per_axis=3)
        a = drift_at(self, probes)
        b = noise_at(self, probes)
        if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)):
            raise EvaluationError(
                "drift/noise must be finite on the domain interior")
        if self.noise_derivatives is not None:
            self._check_against_fd(
                probes, noise_derivatives_at(self, probes),
                _fd_noise_derivatives(self, probes), "noise_derivatives")
        if self.drift_jacobian is not None:
            self._check_against_fd(
                probes, drift_jacobian_at(self, probes),
                _fd_drift_jacobian(self, probes), "drift_jacobian")

    def _check_against_fd(self, probes, analytic, fd, what):
        h = self.fd_step * (1.0 + np.max(np.abs(probes)))
        tol = 10.0 * h * h
        err = np.max(np.abs(analytic - fd) / (1.0 + np.abs(analytic)))
        if err > tol:
            raise EvaluationError(
                f"{what} disagrees with finite differences "
                f"(relative error {err:.3e} > {tol:.3e})")

    # -- geometry ---------------------------------------------------------

    @property
    def lo(self):
        return self.domain[:, 0]

    @property
    def hi(self):
        return self.domain[:, 1]

    @property
    def widths(self):
        return self.domain[:, 1] - self.domain[:, 0]

    def contains(self, x, margin=None):
        """True where every coordinate of x lies in the closed box,
        shrunk by `margin` on each side (a hair negative by default, so
        points that land on a wall up to rounding still count)."""
        x = np.asarray(x, dtype=float)
        if margin is None:
            margin = -1e-9 * np.max(self.widths)
        lo = self.lo + margin
        hi = self.hi - margin
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def is_closed(self):
        """True when no axis can lose probability (no absorbing side)."""
        return all(kind != "absorbing" for kind in self.boundary)


@dataclass(frozen=True)
class EvaluatedCoefficients:
    """Every coefficient-derived quantity at one point, for one alpha."""

    x: np.ndarray
    a: np.ndarray
    b: np.ndarray
    d: np.ndarray
    a_nid: np.ndarray
    a_tot: np.ndarray
    alpha: float


@dataclass(frozen=True)
class SymmetrizationResult:
    """Outcome of the orthogonal symmetrization b_star = b @ o."""

    b_star: np.ndarray
    o: np.ndarray
    padded: bool


def probe_grid(system, per_axis=3, margin_frac=0.1):
    """Interior probe points: a tensor grid of `per_axis` points per axis,
    inset by `margin_frac` of the width from each wall.  Shape (P, dim)."""
    axes = []
    for i in range(system.dim):
        lo, hi = system.domain[i]
        pad = margin_frac * (hi - lo)
        axes.append(np.linspace(lo + pad, hi - pad, per_axis))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


# ---------------------------------------------------------------------------
# coefficient evaluation
# ---------------------------------------------------------------------------

def drift_at(system, x):
    """Evaluate a(x); x is (..., dim), result (..., dim)."""
    x = np.asarray(x, dtype=float)
    return _as_array_field(system.drift(x), x.shape, "drift")


def noise_at(system, x):
    """Evaluate B(x); x is (..., dim), result (..., dim, noise_dim)."""
    x = np.asarray(x, dtype=float)
    shape = x.shape[:-1] + (system.dim, system.noise_dim)
    return _as_array_field(system.noise(x), shape, "noise")


def _fd_steps(system, x):
    return system.fd_step * (1.0 + np.abs(x))


def _fd_field_derivative(system, x, fn, extra_shape):
    """d(fn)/dx_m by central differences; shape (..., *extra_shape, dim)."""
    x = np.asarray(x, dtype=float)
    h = _fd_steps(system, x)
    out = np.empty(x.shape[:-1] + extra_shape + (system.dim,))
    for m in range(system.dim):
        hp = np.zeros_like(x)
        hp[..., m] = h[..., m]
        plus = np.asarray(fn(x + hp), dtype=float)
        minus = np.asarray(fn(x - hp), dtype=float)
        denom = 2.0 * h[..., m]
        denom = denom.reshape(denom.shape + (1,) * len(extra_shape))
        out[..., m] = (plus - minus) / denom
    return out


def _fd_noise_derivatives(system, x):
    return _fd_field_derivative(
        system, x, system.noise, (system.dim, system.noise_dim))


def _fd_drift_jacobian(system, x):
    return _fd_field_derivative(system, x, system.drift, (system.dim,))


def noise_derivatives_at(system, x):
    """dB_ik/dx_m, shape (..., dim, noise_dim, dim); analytic when the
    system carries derivatives, central differences otherwise."""
    x = np.asarray(x, dtype=float)
    if system.noise_derivatives is not None:
        shape = x.shape[:-1] + (system.dim, system.noise_dim, system.dim)
        return _as_array_field(system.noise_derivatives(x), shape,
                               "noise_derivatives")
    return _fd_noise_derivatives(system, x)


def drift_jacobian_at(system, x):
    """da_i/dx_j, shape (..., dim, dim)."""
    x = np.asarray(x, dtype=float)
    if system.drift_jacobian is not None:
        shape = x.shape[:-1] + (system.dim, system.dim)
        return _as_array_field(system.drift_jacobian(x), shape,
                               "drift_jacobian")
    return _fd_drift_jacobian(system, x)


def nid_drift(system, x):
    """Noise-induced drift: component i is sum_{k,m} dB_ik/dx_m * B_mk."""
    db = noise_derivatives_at(system, x)
    b = noise_at(system, x)
    return np.einsum("...ikm,...mk->...i", db, b)


def diffusion(system, x):
    """Diffusion tensor D(x) = B(x) B(x)^T, shape (..., dim, dim)."""
    x = np.asarray(x, dtype=float)
    if not system.contains(x).all():
        raise DomainError(f"point outside domain: {x!r}")
    b = noise_at(system, x)
    d = np.einsum("...ij,...kj->...ik", b, b)
    if not np.all(np.isfinite(d)):
        raise EvaluationError("non-finite diffusion value")
    return d


def total_drift(system, x, alpha):
    """a(x) + (alpha - 1) * a_nid(x), the drift of the flux form."""
    return drift_at(system, x) + (alpha - 1.0) * nid_drift(system, x)


def evaluate(system, x, alpha):
    """Evaluate every coefficient-derived quantity at an interior point.

    Returns an EvaluatedCoefficients with the drift a, coupling b, diffusion
    d = b b^T, noise-induced drift a_nid, and total drift
    a_tot = a + (alpha - 1) a_nid.

    Raises DomainError if x is not interior (with room for the derivative
    stencil) and EvaluationError on non-finite coefficient values.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (system.dim,):
        raise EvaluationError(f"expected a point of shape ({system.dim},)")
    if not 0.0 <= alpha <= 1.0:
        raise EvaluationError(f"alpha must lie in [0, 1], got {alpha}")
    _require_stencil_room(system, x)
    a = drift_at(system, x)
    b = noise_at(system, x)
    d = np.einsum("ij,kj->ik", b, b)
    a_nid = nid_drift(system, x)
    a_tot = a + (alpha - 1.0) * a_nid
    for value, what in ((a, "drift"), (b, "noise"), (a_nid, "a_nid")):
        if not np.all(np.isfinite(value)):
            raise EvaluationError(f"non-finite {what} at {x!r}")
    return EvaluatedCoefficients(x=x, a=a, b=b, d=d, a_nid=a_nid,
                                 a_tot=a_tot, alpha=float(alpha))


def _require_stencil_room(system, x):
    h = _fd_steps(system, x)
    if not (np.all(x - h >= system.lo) and np.all(x + h <= system.hi)):
        raise DomainError(
            f"point {x!r} leaves no room for the finite-difference stencil")


def diffusion_divergence(system, x):
    """Per-row divergence of D: component i is sum_k dD_ik/dx_k."""
    x = np.asarray(x, dtype=float)
    if system.noise_derivatives is not None:
        db = noise_derivatives_at(system, x)
        b = noise_at(system, x)
        # dD_ik/dx_m = sum_j (dB_ij/dx_m B_kj + B_ij dB_kj/dx_m)
        dd = (np.einsum("...ijm,...kj->...ikm", db, b)
              + np.einsum("...kjm,...ij->...ikm", db, b))
        return np.einsum("...ikk->...i", dd)

    def d_of(p):
        bp = noise_at(system, p)
        return np.einsum("...ij,...kj->...ik", bp, bp)

    dd = _fd_field_derivative(system, x, d_of, (system.dim, system.dim))
    return np.einsum("...ikk->...i", dd)


def nid_identity_residual(system, x):
    """a_nid(x) - (1/2) * row-divergence of D(x).

    Vanishes wherever B is symmetric near x; a persistent nonzero value is
    the documented mismatch for non-symmetric couplings (the two sides then
    agree only in distribution, not pointwise).
    """
    x = np.asarray(x, dtype=float)
    _require_stencil_room(system, np.atleast_2d(x).min(axis=0))
    _require_stencil_room(system, np.atleast_2d(x).max(axis=0))
    return nid_drift(system, x) - 0.5 * diffusion_divergence(system, x)


# ---------------------------------------------------------------------------
# orthogonal symmetrization
# ---------------------------------------------------------------------------

def symmetrize(b):
    """Find an orthogonal o with b @ o symmetric PSD and the same diffusion.

    Uses the polar factorization from the singular value decomposition
    b = U S V^T: o = V U^T and b_star = b @ o = U S U^T.  Tall inputs
    (fewer columns than rows) are first completed with zero columns, which
    adds Wiener components with zero coupling; wide inputs are rejected
    because completing them would add phantom state dimensions.
    """
    b = np.asarray(b, dtype=float)
    if b.ndim != 2:
        raise EvaluationError(f"expected a matrix, got shape {b.shape}")
    if not np.all(np.isfinite(b)):
        raise EvaluationError("matrix has non-finite entries")
    n, m = b.shape
    padded = False
    if m < n:
        b = np.hstack([b, np.zeros((n, n - m))])
        padded = True
    elif m > n:
        raise EvaluationError(
            f"cannot symmetrize a {n}x{m} coupling: completing it by zeros "
            "would add state rows, not Wiener components")
    u, s, vt = np.linalg.svd(b)
    o = vt.T @ u.T
    return SymmetrizationResult(b_star=b @ o, o=o, padded=padded)


def symmetrize_field(system, probes=None, tol=1e-8):
    """Symmetrize B(x) at each probe; reports whether o varies with x.

    Returns (results, o_varies).  A varying o means the pointwise
    symmetrization does not come from one global Wiener rotation.
    """
    if probes is None:
        probes = probe_grid(system, per_axis=3)
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    results = [symmetrize(noise_at(system, p)) for p in probes]
    o_ref = results[0].o
    o_varies = any(np.max(np.abs(r.o - o_ref)) > tol for r in results[1:])
    return results, o_varies
