"""Fisher information and Cramer-Rao lower bounds for the path parameters.

Parameter ordering is (theta_1, r_1, g_1, phi_1, ..., theta_L, r_L, g_L,
phi_L); the FIM is 4L x 4L with all inter-path cross blocks included.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .arraymodel import ArrayConfig, PathParams, antenna_offsets, element_distances


@dataclass
class FisherMatrix:
    matrix: np.ndarray
    sigma2: float

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n) or n % 4 != 0:
            raise ValueError("FIM must be square with size a multiple of 4")

    @property
    def num_paths(self) -> int:
        return self.matrix.shape[0] // 4


def steering_derivatives(cfg: ArrayConfig, p: PathParams) -> np.ndarray:
    """Per-element derivatives of g e^{j phi} b(theta, r) w.r.t. (theta, r, g, phi).

    Returns a 4 x M complex array in that row order.
    """
    k = cfg.wavenumber
    d = cfg.spacing
    delta = antenna_offsets(cfg)
    r_m = element_distances(cfg, p.theta, p.r)
    b = np.exp(1j * k * (r_m - p.r))
    s_m = p.g * np.exp(1j * p.phi) * b
    drm_dth = -delta * d * p.r * np.sin(p.theta) / r_m
    drm_dr = (p.r + delta * d * np.cos(p.theta)) / r_m
    v_theta = s_m * 1j * k * drm_dth
    v_r = s_m * 1j * k * (drm_dr - 1.0)
    v_g = np.exp(1j * p.phi) * b
    v_phi = 1j * s_m
    return np.stack([v_theta, v_r, v_g, v_phi])


def fim(cfg: ArrayConfig, paths: list[PathParams], sigma2: float) -> FisherMatrix:
    """FIM F_ij = (2/sigma^2) Re{(ds/dmu_i)^H ds/dmu_j} over all paths."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be > 0")
    J = np.concatenate([steering_derivatives(cfg, p) for p in paths], axis=0)
    F = 2.0 / sigma2 * np.real(J.conj() @ J.T)
    return FisherMatrix(matrix=(F + F.T) / 2.0, sigma2=sigma2)


def crlb_diag(F: FisherMatrix, cond_limit: float = 1e12) -> tuple[np.ndarray, bool]:
    """Diagonal of F^{-1}; ill-conditioned matrices use the pseudo-inverse.

    Returns (variances, ill_conditioned_flag).
    """
    mat = F.matrix
    ill = bool(np.linalg.cond(mat) > cond_limit)
    inv = np.linalg.pinv(mat) if ill else np.linalg.inv(mat)
    return np.diag(inv).copy(), ill
