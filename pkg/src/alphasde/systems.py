"""Registry of named built-in systems used by tests and CLI configs."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .model import SystemSpec


def constant_noise_1d(sigma=1.0, domain=(0.0, 1.0), boundary="reflecting"):
    """1D pure noise with constant coupling; the noise-induced drift is 0."""
    sigma = float(sigma)

    def noise(x):
        return np.full(x.shape[:-1] + (1, 1), sigma)

    return SystemSpec(
        dim=1, noise_dim=1,
        drift=lambda x: np.zeros_like(x),
        noise=noise,
        drift_jacobian=lambda x: np.zeros(x.shape[:-1] + (1, 1)),
        noise_derivatives=lambda x: np.zeros(x.shape[:-1] + (1, 1, 1)),
        domain=[domain], boundary=(boundary,),
        name="constant-noise",
    )


def linear_noise_1d(domain=(0.05, 20.0), boundary="reflecting"):
    """1D pure noise with b(x) = x, so a_nid(x) = x."""

    def noise(x):
        return x[..., None]

    return SystemSpec(
        dim=1, noise_dim=1,
        drift=lambda x: np.zeros_like(x),
        noise=noise,
        drift_jacobian=lambda x: np.zeros(x.shape[:-1] + (1, 1)),
        noise_derivatives=lambda x: np.ones(x.shape[:-1] + (1, 1, 1)),
        domain=[domain], boundary=(boundary,),
        name="linear-noise-1d",
    )


def diagonal_2d(domain=((0.1, 6.0), (0.1, 6.0)), boundary="reflecting"):
    """2D pure noise with B(x) = diag(x1, x2); symmetric coupling."""

    def noise(x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = x[..., 0]
        out[..., 1, 1] = x[..., 1]
        return out

    def noise_derivatives(x):
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 0, 0] = 1.0
        out[..., 1, 1, 1] = 1.0
        return out

    return SystemSpec(
        dim=2, noise_dim=2,
        drift=lambda x: np.zeros_like(x),
        noise=noise,
        drift_jacobian=lambda x: np.zeros(x.shape[:-1] + (2, 2)),
        noise_derivatives=noise_derivatives,
        domain=domain, boundary=(boundary, boundary),
        name="diagonal-2d",
    )


def shear_2d(domain=((-2.0, 2.0), (-2.0, 2.0)), boundary="reflecting"):
    """2D pure noise with the non-symmetric coupling B = [[1, x1], [0, 1]].

    The pointwise identity between the noise-induced drift and the
    divergence of D fails here by exactly (0, -1/2)."""

    def noise(x):
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = 1.0
        out[..., 0, 1] = x[..., 0]
        out[..., 1, 1] = 1.0
        return out

    def noise_derivatives(x):
        out = np.zeros(x.shape[:-1] + (2, 2, 2))
        out[..., 0, 1, 0] = 1.0
        return out

    return SystemSpec(
        dim=2, noise_dim=2,
        drift=lambda x: np.zeros_like(x),
        noise=noise,
        drift_jacobian=lambda x: np.zeros(x.shape[:-1] + (2, 2)),
        noise_derivatives=noise_derivatives,
        domain=domain, boundary=(boundary, boundary),
        name="shear-2d",
    )


def temperature_profile_1d(domain=(0.0, 1.0), boundary="reflecting",
                           base=1.0, amplitude=0.9):
    """1D pure noise in a spatial profile D(x) = base + amplitude*sin(pi x).

    Models overdamped motion in a position-dependent temperature; with
    reflecting walls and alpha = 1 the stationary density is uniform.
    """
    base = float(base)
    amplitude = float(amplitude)

    def d_profile(x):
        return base + amplitude * np.sin(np.pi * x[..., 0])

    def noise(x):
        return np.sqrt(d_profile(x))[..., None, None]

    def noise_derivatives(x):
        slope = amplitude * np.pi * np.cos(np.pi * x[..., 0])
        return (0.5 * slope / np.sqrt(d_profile(x)))[..., None, None, None]

    return SystemSpec(
        dim=1, noise_dim=1,
        drift=lambda x: np.zeros_like(x),
        noise=noise,
        drift_jacobian=lambda x: np.zeros(x.shape[:-1] + (1, 1)),
        noise_derivatives=noise_derivatives,
        domain=[domain], boundary=(boundary,),
        name="temperature-profile-1d",
    )


def ou_1d(rate=1.0, sigma=1.0, domain=(-6.0, 6.0), boundary="reflecting"):
    """Ornstein-Uhlenbeck: a(x) = -rate*x, constant coupling sigma."""
    rate = float(rate)
    sigma = float(sigma)

    def drift_jacobian(x):
        out = np.zeros(x.shape[:-1] + (1, 1))
        out[..., 0, 0] = -rate
        return out

    return SystemSpec(
        dim=1, noise_dim=1,
        drift=lambda x: -rate * x,
        noise=lambda x: np.full(x.shape[:-1] + (1, 1), sigma),
        drift_jacobian=drift_jacobian,
        noise_derivatives=lambda x: np.zeros(x.shape[:-1] + (1, 1, 1)),
        domain=[domain], boundary=(boundary,),
        name="ou-1d",
    )


_REGISTRY = {
    "constant-noise": (constant_noise_1d,
                       "1D, a=0, b=1 on [0,1] reflecting (a_nid=0)"),
    "linear-noise-1d": (linear_noise_1d,
                        "1D, a=0, b(x)=x on [0.05,20] reflecting"),
    "diagonal-2d": (diagonal_2d,
                    "2D, a=0, B=diag(x1,x2) on [0.1,6]^2 reflecting"),
    "shear-2d": (shear_2d,
                 "2D, a=0, B=[[1,x1],[0,1]] on [-2,2]^2 reflecting"),
    "temperature-profile-1d": (temperature_profile_1d,
                               "1D, a=0, D(x)=1+0.9*sin(pi*x) on [0,1] "
                               "reflecting"),
    "ou-1d": (ou_1d, "1D, a=-x, b=1 on [-6,6] reflecting"),
}


def get_system(name):
    """Instantiate a built-in system by registry name."""
    try:
        factory, _ = _REGISTRY[name]
    except KeyError:
        known = ", ".join(sorted(_REGISTRY))
        raise ConfigError(f"unknown system {name!r}; known systems: {known}") \
            from None
    return factory()


def register_system(name, factory, description=""):
    """Add a custom no-argument factory to the registry."""
    if not callable(factory):
        raise ConfigError("factory must be callable")
    _REGISTRY[name] = (factory, description)


def available_systems():
    """Mapping of registry name to a short description."""
    return {name: desc for name, (_, desc) in sorted(_REGISTRY.items())}
