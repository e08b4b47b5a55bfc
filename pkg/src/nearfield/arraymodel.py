"""ULA geometry, near/far-field steering vectors, channel synthesis and noise.

All functions are pure; stochastic ones take an explicit seed or Generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ArrayConfig:
    """Uniform linear array: M antennas, wavelength and spacing in meters."""

    num_antennas: int
    wavelength: float
    spacing: float | None = None

    def __post_init__(self):
        if self.num_antennas < 2:
            raise ValueError(f"num_antennas must be >= 2, got {self.num_antennas}")
        if self.wavelength <= 0:
            raise ValueError(f"wavelength must be > 0, got {self.wavelength}")
        if self.spacing is None:
            object.__setattr__(self, "spacing", self.wavelength / 2)
        if self.spacing <= 0:
            raise ValueError(f"spacing must be > 0, got {self.spacing}")

    @property
    def aperture(self) -> float:
        return self.num_antennas * self.spacing

    @property
    def rayleigh_distance(self) -> float:
        return 2.0 * self.aperture**2 / self.wavelength

    @property
    def wavenumber(self) -> float:
        # 2*pi/wavelength; reproduces the pi*m*cos(theta) far-field phase
        # at half-wavelength spacing.
        return 2.0 * np.pi / self.wavelength

    @property
    def min_near_distance(self) -> float:
        # Constant-amplitude model is only valid beyond 1.2 apertures.
        return 1.2 * self.aperture


@dataclass(frozen=True)
class PathParams:
    """One propagation path: angle (rad), distance (m), gain magnitude, phase."""

    theta: float
    r: float
    g: float
    phi: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.theta < np.pi:
            raise ValueError(f"theta must lie in (0, pi), got {self.theta}")
        if self.r <= 0:
            raise ValueError(f"r must be > 0, got {self.r}")
        if self.g < 0:
            raise ValueError(f"g must be >= 0, got {self.g}")

    def as_vector(self) -> np.ndarray:
        return np.array([self.theta, self.r, self.g, self.phi])


@dataclass(frozen=True)
class Measurement:
    """Received snapshot y (length M) with its noise power sigma^2."""

    y: np.ndarray
    noise_variance: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=complex))
        if self.y.ndim != 1:
            raise ValueError("y must be a 1-D complex vector")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be >= 0")


_OFFSETS_CACHE: dict[int, np.ndarray] = {}


def antenna_offsets(cfg: ArrayConfig) -> np.ndarray:
    """Element coordinates delta_m = (2m - M + 1)/2, symmetric about zero."""
    delta = _OFFSETS_CACHE.get(cfg.num_antennas)
    if delta is None:
        m = np.arange(cfg.num_antennas)
        delta = (2.0 * m - cfg.num_antennas + 1.0) / 2.0
        delta.setflags(write=False)
        _OFFSETS_CACHE[cfg.num_antennas] = delta
    return delta


def element_distances(cfg: ArrayConfig, theta: float, r: float) -> np.ndarray:
    """Distance from each antenna to a source at (theta, r)."""
    delta = antenna_offsets(cfg)
    d = cfg.spacing
    return np.sqrt(r**2 + (delta * d) ** 2 + 2.0 * delta * d * r * np.cos(theta))


def element_distance(cfg: ArrayConfig, p: PathParams, m: int) -> float:
    """Distance from antenna m to the source of path p."""
    if not 0 <= m < cfg.num_antennas:
        raise ValueError(f"antenna index {m} out of range [0, {cfg.num_antennas})")
    return float(element_distances(cfg, p.theta, p.r)[m])


def near_steering(cfg: ArrayConfig, theta: float, r: float) -> np.ndarray:
    """Spherical-wave steering vector, entries exp(j*k*(r_m - r))."""
    r_m = element_distances(cfg, theta, r)
    return np.exp(1j * cfg.wavenumber * (r_m - r))


def far_steering(cfg: ArrayConfig, theta: float) -> np.ndarray:
    """Planar-wave steering vector, entries exp(j*pi*m*cos(theta)) at d=lambda/2."""
    m = np.arange(cfg.num_antennas)
    return np.exp(2j * np.pi * cfg.spacing / cfg.wavelength * m * np.cos(theta))


def synthesize_channel(cfg: ArrayConfig, paths: list[PathParams]) -> np.ndarray:
    """Multi-path channel h = sum_l g_l e^{j phi_l} b(theta_l, r_l)."""
    if not paths:
        raise ValueError("paths must be non-empty")
    h = np.zeros(cfg.num_antennas, dtype=complex)
    for p in paths:
        h += p.g * np.exp(1j * p.phi) * near_steering(cfg, p.theta, p.r)
    return h


def add_noise(h: np.ndarray, sigma2: float, seed) -> Measurement:
    """Add circularly-symmetric complex Gaussian noise of total power sigma2."""
    if sigma2 < 0:
        raise ValueError("sigma2 must be >= 0")
    h = np.asarray(h, dtype=complex)
    rng = np.random.default_rng(seed)
    if sigma2 == 0.0:
        return Measurement(y=h.copy(), noise_variance=0.0)
    scale = np.sqrt(sigma2 / 2.0)
    n = rng.normal(scale=scale, size=h.size) + 1j * rng.normal(scale=scale, size=h.size)
    return Measurement(y=h + n, noise_variance=sigma2)


def los_gain(wavelength: float, p_t: float, r: float) -> float:
    """Free-space line-of-sight gain magnitude, lambda*sqrt(p_t)/(4*pi*r)."""
    if r <= 0:
        raise ValueError("r must be > 0")
    if p_t <= 0:
        raise ValueError("p_t must be > 0")
    return wavelength * np.sqrt(p_t) / (4.0 * np.pi * r)
