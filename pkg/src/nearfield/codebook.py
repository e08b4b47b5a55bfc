"""Angle-distance codebook construction plus the s1/s2 spacing analysis.

The angle axis samples cos(theta) uniformly; the distance axis samples 1/r
uniformly per angle. Spacings are expressed through the dimensionless
variables alpha (angle mismatch) and beta (curvature mismatch), whose
ambiguity profiles s1 and s2 bound the acceptable grid steps.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .arraymodel import ArrayConfig, near_steering

MAX_DELTA_ALPHA = 0.9
MAX_DELTA_BETA = 2.98


@dataclass(frozen=True)
class CodebookConfig:
    delta_alpha: float = 0.5
    delta_beta: float = 1.0
    cover_far_edge: bool = False

    def __post_init__(self):
        if not 0.0 < self.delta_alpha <= MAX_DELTA_ALPHA:
            raise ValueError(
                f"delta_alpha must lie in (0, {MAX_DELTA_ALPHA}], got {self.delta_alpha}"
            )
        if not 0.0 < self.delta_beta < MAX_DELTA_BETA:
            raise ValueError(
                f"delta_beta must lie in (0, {MAX_DELTA_BETA}), got {self.delta_beta}"
            )


@dataclass(frozen=True)
class Codeword:
    theta: float
    r: float
    cos_theta: float
    n_theta: int
    n_r: int


@dataclass
class Codebook:
    """Immutable ordered codeword set with a cached steering matrix."""

    array: ArrayConfig
    config: CodebookConfig
    codewords: list[Codeword]
    _steering: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.codewords)

    @property
    def steering_matrix(self) -> np.ndarray:
        """M x N matrix, one near-field steering vector per codeword."""
        if self._steering is None:
            cols = [near_steering(self.array, cw.theta, cw.r) for cw in self.codewords]
            self._steering = np.stack(cols, axis=1) if cols else np.zeros(
                (self.array.num_antennas, 0), dtype=complex
            )
        return self._steering


def angle_grid(cfg: ArrayConfig, delta_alpha: float) -> np.ndarray:
    """cos(theta) grid: (2*n*delta_alpha - M + 1)/M, values with |cos| >= 1 dropped."""
    M = cfg.num_antennas
    n = np.arange(int(np.floor(M / delta_alpha)))
    cos_vals = (2.0 * n * delta_alpha - M + 1.0) / M
    return cos_vals[np.abs(cos_vals) < 1.0]


def distance_grid(cfg: ArrayConfig, theta: float, delta_beta: float) -> np.ndarray:
    """Distances with uniform 1/r spacing, restricted to (1.2D, r_R].

    A degenerate grid (no r_n inside the annulus, which happens for angles
    near the endpoints where sin(theta) is small) keeps the single distance
    r_R so every angle retains one codeword.
    """
    if not 0.0 < theta < np.pi:
        raise ValueError(f"theta must lie in (0, pi), got {theta}")
    M, d, lam = cfg.num_antennas, cfg.spacing, cfg.wavelength
    inv_step = 2.0 * lam * delta_beta / (M**2 * d**2 * np.sin(theta) ** 2)
    r1 = 1.0 / inv_step
    # n runs until r_n drops to the 1.2D lower edge.
    n_max = int(np.floor(r1 / cfg.min_near_distance))
    n = np.arange(1, n_max + 1)
    r = 1.0 / (n * inv_step)
    r = r[(r > cfg.min_near_distance) & (r <= cfg.rayleigh_distance)]
    if r.size == 0:
        return np.array([cfg.rayleigh_distance])
    return r


def build_codebook(cfg: ArrayConfig, cbcfg: CodebookConfig) -> Codebook:
    """Cross product of the angle grid with per-angle distance grids."""
    codewords: list[Codeword] = []
    for n_theta, cos_t in enumerate(angle_grid(cfg, cbcfg.delta_alpha)):
        theta = float(np.arccos(cos_t))
        distances = list(distance_grid(cfg, theta, cbcfg.delta_beta))
        if cbcfg.cover_far_edge and cfg.rayleigh_distance not in distances:
            distances.append(cfg.rayleigh_distance)
        for n_r, r in enumerate(distances):
            codewords.append(
                Codeword(theta=theta, r=float(r), cos_theta=float(cos_t),
                         n_theta=n_theta, n_r=n_r)
            )
    return Codebook(array=cfg, config=cbcfg, codewords=codewords)


def s1(alpha: float) -> float:
    """Angle-mismatch ambiguity |sin(pi*alpha)/(pi*alpha)|, s1(0)=1."""
    return float(np.abs(np.sinc(alpha)))


def fresnel(x: float) -> tuple[float, float]:
    """Fresnel integrals (C(x), S(x)) by adaptive quadrature, |err| <= 1e-10."""
    if x < 0:
        raise ValueError(f"x must be >= 0, got {x}")
    if x == 0.0:
        return 0.0, 0.0
    c, _ = integrate.quad(lambda t: np.cos(np.pi * t**2 / 2.0), 0.0, x,
                          epsabs=1e-12, epsrel=0.0, limit=200 + int(20 * x))
    s, _ = integrate.quad(lambda t: np.sin(np.pi * t**2 / 2.0), 0.0, x,
                          epsabs=1e-12, epsrel=0.0, limit=200 + int(20 * x))
    return c, s


def s2(beta: float) -> float:
    """Distance-mismatch ambiguity |(C+jS)(sqrt|beta|)| / sqrt|beta|, even in beta."""
    b = abs(beta)
    if b == 0.0:
        return 1.0
    x = np.sqrt(b)
    c, s = fresnel(x)
    return float(np.hypot(c, s) / x)


def alpha_of(cfg: ArrayConfig, cos_theta: float, cos_theta_true: float) -> float:
    """Dimensionless angle mismatch alpha = M*(cos(theta)-cos(theta_t))/2."""
    return 0.5 * cfg.num_antennas * (cos_theta - cos_theta_true)


def beta_of(cfg: ArrayConfig, theta: float, r: float, r_true: float) -> float:
    """Dimensionless curvature mismatch between distances r and r_true at theta."""
    M, d, lam = cfg.num_antennas, cfg.spacing, cfg.wavelength
    return M**2 * d**2 * np.sin(theta) ** 2 / (2.0 * lam) * (1.0 / r - 1.0 / r_true)
