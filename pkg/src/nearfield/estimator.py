"""Variational Newtonized near-field channel estimation.

Single-path machinery: the reduced objective f(theta, r, g, phi), its
analytic gradient and Hessian, and a guarded Newton step that only moves
when the (theta, r) sub-Hessian is negative definite and the projection
cost G does not decrease. Multi-path estimation greedily detects paths on
the codebook and cyclically re-refines each one against the residual of
the others.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .arraymodel import ArrayConfig, Measurement, PathParams, antenna_offsets, \
    element_distances, near_steering, synthesize_channel
from .codebook import Codebook

THETA_EDGE = 1e-6

# Optional per-iteration trace record: (path_index, round_index, theta, r, g,
# phi, cost_before, cost_after, accepted).
TraceHook = Callable[..., None]


@dataclass
class SoftEstimate:
    """Path parameters plus a 4x4 confidence covariance ordered (theta, r, g, phi)."""

    params: PathParams
    cov: np.ndarray
    psd_repaired: bool = False

    def __post_init__(self):
        self.cov = np.asarray(self.cov, dtype=float)
        if self.cov.shape != (4, 4):
            raise ValueError("cov must be 4x4")


@dataclass
class EstimatorConfig:
    num_paths: int
    codebook: Codebook
    single_rounds: int = 5
    cyclic_rounds: int = 5
    psd_floor_scale: float = 1e-12
    # Optional residual-energy stop for unknown path counts: stop adding
    # paths once the best codeword cost falls below stop_tau * M * sigma^2.
    stop_tau: float | None = None

    def __post_init__(self):
        if self.num_paths < 1:
            raise ValueError("num_paths must be >= 1")
        if self.single_rounds < 0 or self.cyclic_rounds < 0:
            raise ValueError("refinement round counts must be >= 0")


def _as_vector(y) -> np.ndarray:
    return y.y if isinstance(y, Measurement) else np.asarray(y, dtype=complex)


def cost(cfg: ArrayConfig, y, theta: float, r: float) -> float:
    """Matched projection energy G(theta, r) = |b^H y|^2 / M."""
    yv = _as_vector(y)
    b = near_steering(cfg, theta, r)
    return float(np.abs(b.conj() @ yv) ** 2 / cfg.num_antennas)


def ls_gain(cfg: ArrayConfig, y, theta: float, r: float) -> complex:
    """Least-squares complex gain b^H y / M at (theta, r)."""
    yv = _as_vector(y)
    b = near_steering(cfg, theta, r)
    return complex(b.conj() @ yv / cfg.num_antennas)


def _gain_polar(gain: complex) -> tuple[float, float]:
    g = abs(gain)
    phi = float(np.angle(gain)) % (2.0 * np.pi)
    return g, phi


def _psi_terms(cfg: ArrayConfig, y, p: PathParams, ang=None):
    """Shared per-element quantities for the objective derivatives."""
    yv = _as_vector(y)
    k = cfg.wavenumber
    d = cfg.spacing
    delta = antenna_offsets(cfg)
    r_m = element_distances(cfg, p.theta, p.r)
    if ang is None:
        ang = np.angle(yv)
    psi = k * (r_m - p.r) + p.phi - ang
    # psi depends on (theta, r) only through r_m:
    #   dr_m/dtheta = -delta*d*r*sin(theta)/r_m
    #   dr_m/dr     = (r + delta*d*cos(theta))/r_m
    drm_dth = -delta * d * p.r * np.sin(p.theta) / r_m
    drm_dr = (p.r + delta * d * np.cos(p.theta)) / r_m
    psi_th = k * drm_dth
    psi_r = k * (drm_dr - 1.0)
    return yv, np.abs(yv), psi, psi_th, psi_r, delta, d, r_m, drm_dth, drm_dr


def objective(cfg: ArrayConfig, y, p: PathParams) -> float:
    """Reduced single-path objective f = sum 2|y_m| g cos(psi_m) - M g^2."""
    _, a, psi, *_ = _psi_terms(cfg, y, p)
    return float(np.sum(2.0 * a * p.g * np.cos(psi)) - cfg.num_antennas * p.g**2)


def _grad_hess(cfg: ArrayConfig, y, p: PathParams, ang=None):
    """Gradient and Hessian of the objective from one shared pass."""
    (_, a, psi, psi_th, psi_r, delta, d, r_m,
     drm_dth, drm_dr) = _psi_terms(cfg, y, p, ang)
    k = cfg.wavenumber
    s, c = np.sin(psi), np.cos(psi)
    sin_t, cos_t = np.sin(p.theta), np.cos(p.theta)
    g = p.g
    M = cfg.num_antennas

    as_ = a * s
    ac = a * c
    grad = np.array([
        np.sum(-2.0 * g * as_ * psi_th),
        np.sum(-2.0 * g * as_ * psi_r),
        np.sum(2.0 * ac) - 2.0 * M * g,
        np.sum(-2.0 * g * as_),
    ])

    # Second derivatives of r_m.
    drm_dthth = (-delta * d * p.r * cos_t - drm_dth**2) / r_m
    drm_drr = (1.0 - drm_dr**2) / r_m
    drm_dthr = (-delta * d * sin_t - drm_dth * drm_dr) / r_m

    psi_thth = k * drm_dthth
    psi_rr = k * drm_drr
    psi_thr = k * drm_dthr

    h = np.empty((4, 4))
    h[0, 0] = np.sum(-2.0 * g * (ac * psi_th**2 + as_ * psi_thth))
    h[0, 1] = h[1, 0] = np.sum(-2.0 * g * (ac * psi_th * psi_r + as_ * psi_thr))
    h[1, 1] = np.sum(-2.0 * g * (ac * psi_r**2 + as_ * psi_rr))
    h[0, 2] = h[2, 0] = np.sum(-2.0 * as_ * psi_th)
    h[1, 2] = h[2, 1] = np.sum(-2.0 * as_ * psi_r)
    h[0, 3] = h[3, 0] = np.sum(-2.0 * g * ac * psi_th)
    h[1, 3] = h[3, 1] = np.sum(-2.0 * g * ac * psi_r)
    h[2, 2] = -2.0 * M
    h[2, 3] = h[3, 2] = np.sum(-2.0 * as_)
    h[3, 3] = np.sum(-2.0 * g * ac)
    return grad, h


def grad_f(cfg: ArrayConfig, y, p: PathParams) -> np.ndarray:
    """Analytic gradient of the objective in (theta, r, g, phi) order."""
    _, a, psi, psi_th, psi_r, *_ = _psi_terms(cfg, y, p)
    s, c = np.sin(psi), np.cos(psi)
    d_theta = np.sum(-2.0 * a * p.g * s * psi_th)
    d_r = np.sum(-2.0 * a * p.g * s * psi_r)
    d_g = np.sum(2.0 * a * c) - 2.0 * cfg.num_antennas * p.g
    d_phi = np.sum(-2.0 * a * p.g * s)
    return np.array([d_theta, d_r, d_g, d_phi])


def hess_f(cfg: ArrayConfig, y, p: PathParams) -> np.ndarray:
    """Analytic 4x4 Hessian of the objective in (theta, r, g, phi) order."""
    return _grad_hess(cfg, y, p)[1]


def _psd_inverse_covariance(info: np.ndarray, floor: float) -> tuple[np.ndarray, bool]:
    """Invert an information matrix, flooring its eigenvalues to keep it PD."""
    info = (info + info.T) / 2.0
    w, v = np.linalg.eigh(info)
    repaired = bool(np.any(w < floor))
    w = np.maximum(w, floor)
    cov = (v / w) @ v.T
    return (cov + cov.T) / 2.0, repaired


def confidence_covariance(cfg: ArrayConfig, y, p: PathParams,
                          psd_floor_scale: float = 1e-12,
                          sigma2: float | None = None) -> tuple[np.ndarray, bool]:
    """Laplace covariance sigma^2 * (-H)^{-1} of the objective's Hessian.

    The reduced objective is the log-likelihood scaled by sigma^2, so the
    surrogate-posterior covariance carries the noise power back in. The
    information matrix is PSD-repaired (eigenvalue floor) before inversion.
    """
    if sigma2 is None:
        sigma2 = y.noise_variance if isinstance(y, Measurement) else 0.0
    info = -hess_f(cfg, y, p)
    cov, repaired = _psd_inverse_covariance(info, psd_floor_scale * cfg.num_antennas)
    return sigma2 * cov, repaired


def _project(cfg: ArrayConfig, yv: np.ndarray, theta: float, r: float) -> tuple[float, complex]:
    """Projection cost and LS gain from a single steering evaluation."""
    inner = near_steering(cfg, theta, r).conj() @ yv
    return float(np.abs(inner) ** 2 / cfg.num_antennas), complex(inner / cfg.num_antennas)


def _clamp_params(cfg: ArrayConfig, theta: float, r: float) -> tuple[float, float]:
    theta = float(np.clip(theta, THETA_EDGE, np.pi - THETA_EDGE))
    r = float(np.clip(r, cfg.min_near_distance, cfg.rayleigh_distance))
    return theta, r


def newton_refine_once(cfg: ArrayConfig, y, est: SoftEstimate,
                       psd_floor_scale: float = 1e-12,
                       trace: TraceHook | None = None,
                       path_index: int = 0, round_index: int = 0,
                       sigma2: float | None = None) -> SoftEstimate:
    """One guarded Newton update of (theta, r), then LS gain and covariance.

    The (theta, r) step is taken only when the 2x2 sub-Hessian is negative
    definite, the distance is clamped into the near-field annulus, and the
    update is reverted if the projection cost decreased.
    """
    if sigma2 is None:
        sigma2 = y.noise_variance if isinstance(y, Measurement) else 0.0
    yv = _as_vector(y)
    ang = np.angle(yv)
    p = est.params
    theta, r = p.theta, p.r
    cost_before, gain = _project(cfg, yv, theta, r)

    grad, hess = _grad_hess(cfg, yv, p, ang)
    h2 = hess[:2, :2]
    # Negative definite iff h00 < 0 and det > 0 (strict); singular => skip.
    det = h2[0, 0] * h2[1, 1] - h2[0, 1] * h2[1, 0]
    accepted = False
    theta_new, r_new = theta, r
    cost_after = cost_before
    if h2[0, 0] < 0.0 and det > 0.0:
        step = np.linalg.solve(h2, grad[:2])
        cand = _clamp_params(cfg, theta - step[0], r - step[1])
        cand_cost, cand_gain = _project(cfg, yv, *cand)
        if cand_cost >= cost_before:
            accepted = True
            theta_new, r_new = cand
            cost_after, gain = cand_cost, cand_gain

    g, phi = _gain_polar(gain)
    new_params = PathParams(theta=theta_new, r=r_new, g=g, phi=phi)
    info = -_grad_hess(cfg, yv, new_params, ang)[1]
    cov, repaired = _psd_inverse_covariance(info, psd_floor_scale * cfg.num_antennas)
    cov = sigma2 * cov
    if trace is not None:
        trace(path_index, round_index, theta_new, r_new, g, phi,
              cost_before, cost_after, accepted)
    return SoftEstimate(params=new_params, cov=cov, psd_repaired=repaired)


def residual(cfg: ArrayConfig, y, fixed: list[SoftEstimate]) -> np.ndarray:
    """Measurement minus the reconstructed channel of the fixed paths."""
    yv = _as_vector(y).copy()
    if fixed:
        yv -= synthesize_channel(cfg, [e.params for e in fixed])
    return yv


def _coarse_covariance(cfg: ArrayConfig, codebook: Codebook, cw, g: float,
                       sigma2: float) -> np.ndarray:
    """Grid-cell-scale diagonal sentinel covariance for a coarse detection."""
    M = cfg.num_antennas
    dcos = 2.0 * codebook.config.delta_alpha / M
    sin_t = max(np.sin(cw.theta), 1e-3)
    var_theta = (dcos / sin_t) ** 2
    dinv_r = 2.0 * cfg.wavelength * codebook.config.delta_beta / (
        M**2 * cfg.spacing**2 * sin_t**2)
    var_r = (cw.r**2 * dinv_r) ** 2
    var_g = max(sigma2 / (2.0 * M), 1e-12)
    var_phi = max(sigma2 / (2.0 * M * max(g, 1e-12) ** 2), 1e-12)
    return np.diag([var_theta, var_r, var_g, var_phi])


def omp_detect(cfg: ArrayConfig, y_r, codebook: Codebook,
               sigma2: float = 0.0) -> SoftEstimate:
    """Exhaustive codebook scan maximizing |b^H y_r|^2; ties -> lowest index."""
    if len(codebook) == 0:
        raise ValueError("codebook is empty")
    yv = _as_vector(y_r)
    scores = np.abs(codebook.steering_matrix.conj().T @ yv) ** 2
    best = int(np.argmax(scores))  # argmax returns the first (lowest) index on ties
    cw = codebook.codewords[best]
    g, phi = _gain_polar(ls_gain(cfg, yv, cw.theta, cw.r))
    params = PathParams(theta=cw.theta, r=cw.r, g=g, phi=phi)
    return SoftEstimate(params=params, cov=_coarse_covariance(cfg, codebook, cw, g, sigma2))


def _refine_rounds(cfg: ArrayConfig, y_r, est: SoftEstimate, rounds: int,
                   psd_floor_scale: float, trace: TraceHook | None,
                   path_index: int, sigma2: float = 0.0) -> SoftEstimate:
    for j in range(rounds):
        est = newton_refine_once(cfg, y_r, est, psd_floor_scale, trace,
                                 path_index=path_index, round_index=j,
                                 sigma2=sigma2)
    return est


def vnnce(y: Measurement, cfg: EstimatorConfig,
          trace: TraceHook | None = None) -> list[SoftEstimate]:
    """Greedy detect-and-refine estimation of num_paths paths.

    Each new path is detected on the running residual, refined for
    single_rounds Newton steps, and then all current paths are cyclically
    re-refined (cyclic_rounds outer rounds) against the residual of the
    others.
    """
    array = cfg.codebook.array
    sigma2 = y.noise_variance
    estimates: list[SoftEstimate] = []
    for _ in range(cfg.num_paths):
        y_r = residual(array, y, estimates)
        if cfg.stop_tau is not None:
            scores = np.abs(cfg.codebook.steering_matrix.conj().T @ y_r) ** 2
            if scores.max() / array.num_antennas < cfg.stop_tau * array.num_antennas * sigma2:
                break
        est = omp_detect(array, y_r, cfg.codebook, sigma2)
        est = _refine_rounds(array, y_r, est, cfg.single_rounds,
                             cfg.psd_floor_scale, trace,
                             path_index=len(estimates), sigma2=sigma2)
        estimates.append(est)
        for _ in range(cfg.cyclic_rounds):
            for k in range(len(estimates)):
                others = estimates[:k] + estimates[k + 1:]
                y_rk = residual(array, y, others)
                estimates[k] = _refine_rounds(array, y_rk, estimates[k],
                                              cfg.single_rounds,
                                              cfg.psd_floor_scale, trace,
                                              path_index=k, sigma2=sigma2)
    return estimates


def reconstruct(cfg: ArrayConfig, estimates: list[SoftEstimate]) -> np.ndarray:
    """Channel implied by a list of soft estimates."""
    if not estimates:
        raise ValueError("estimates must be non-empty")
    return synthesize_channel(cfg, [e.params for e in estimates])


def oracle_ls(cfg: ArrayConfig, y, true_paths: list[PathParams]) -> np.ndarray:
    """Joint LS of all complex gains on the true steering vectors.

    Returns the reconstructed channel; rank-deficient steering matrices fall
    back to the minimum-norm solution.
    """
    yv = _as_vector(y)
    B = np.stack([near_steering(cfg, p.theta, p.r) for p in true_paths], axis=1)
    gains, *_ = np.linalg.lstsq(B, yv, rcond=None)
    return B @ gains
