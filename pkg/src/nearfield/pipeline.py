"""Three-step joint architecture: per-BS estimation, fusion, LoS anchoring.

Step 1 runs the channel estimator independently at every BS. Step 2 fuses
the resulting soft positions. Step 3 rebuilds the LoS geometry of every
gated BS from the fused position, freezes it, and cyclically re-refines
the remaining paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arraymodel import Measurement, PathParams, synthesize_channel
from .estimator import (EstimatorConfig, SoftEstimate, TraceHook,
                        _refine_rounds, confidence_covariance, ls_gain,
                        _gain_polar, residual, vnnce)
from .localization import (BsConfig, FusionReport, gfcl, is_front_side,
                           relative_to_polar)


@dataclass
class JointResult:
    step1: list[list[SoftEstimate]]
    step2: FusionReport
    step3: list[list[SoftEstimate] | None]
    nmse_step1: list[float]
    nmse_step3: list[float | None]
    anchored: list[bool]


def _nmse(h_true: np.ndarray, h_est: np.ndarray) -> float:
    return float(np.linalg.norm(h_true - h_est) ** 2 / np.linalg.norm(h_true) ** 2)


def _anchor_refine(bs: BsConfig, y: Measurement, estimates: list[SoftEstimate],
                   anchor_index: int, theta_a: float, r_a: float,
                   est_cfg: EstimatorConfig,
                   trace: TraceHook | None) -> list[SoftEstimate]:
    """Freeze the anchored path's geometry; LS its gain and re-refine the rest."""
    array = bs.array
    estimates = list(estimates)

    def refit_anchor():
        others = estimates[:anchor_index] + estimates[anchor_index + 1:]
        y_ra = residual(array, y, others)
        g, phi = _gain_polar(ls_gain(array, y_ra, theta_a, r_a))
        params = PathParams(theta=theta_a, r=r_a, g=g, phi=phi)
        cov, rep = confidence_covariance(array, y_ra, params,
                                         est_cfg.psd_floor_scale,
                                         sigma2=y.noise_variance)
        estimates[anchor_index] = SoftEstimate(params=params, cov=cov,
                                               psd_repaired=rep)

    refit_anchor()
    for _ in range(max(est_cfg.cyclic_rounds, 1)):
        for k in range(len(estimates)):
            if k == anchor_index:
                refit_anchor()
                continue
            others = estimates[:k] + estimates[k + 1:]
            y_rk = residual(array, y, others)
            estimates[k] = _refine_rounds(array, y_rk, estimates[k],
                                          est_cfg.single_rounds,
                                          est_cfg.psd_floor_scale, trace,
                                          path_index=k,
                                          sigma2=y.noise_variance)
    refit_anchor()
    return estimates


def run_joint(bs_configs: list[BsConfig], measurements: list[Measurement],
              est_cfgs: list[EstimatorConfig], zeta: float,
              true_channels: list[np.ndarray] | None = None,
              trace: TraceHook | None = None) -> JointResult:
    """Run estimation, cooperative localization, and channel refinement."""
    step1 = [vnnce(y, cfg, trace) for y, cfg in zip(measurements, est_cfgs)]
    report = gfcl(step1, bs_configs, measurements, zeta)

    nmse1: list[float] = []
    if true_channels is not None:
        for i, ests in enumerate(step1):
            nmse1.append(_nmse(true_channels[i],
                               synthesize_channel(bs_configs[i].array,
                                                  [e.params for e in ests])))

    step3: list[list[SoftEstimate] | None] = [None] * len(bs_configs)
    nmse3: list[float | None] = [None] * len(bs_configs)
    anchored = [False] * len(bs_configs)
    by_bs = {c.bs_index: c for c in report.candidates}
    for i, bs in enumerate(bs_configs):
        cand = by_bs.get(i)
        if cand is None or not cand.consistent:
            continue
        rel = report.fused.mean - np.asarray(bs.position)
        theta_a, r_a = relative_to_polar(rel[0], rel[1], bs.rotation)
        if not is_front_side(theta_a):
            continue
        r_a = float(np.clip(r_a, bs.array.min_near_distance,
                            bs.array.rayleigh_distance))
        step3[i] = _anchor_refine(bs, measurements[i], step1[i],
                                  cand.path_index, theta_a, r_a,
                                  est_cfgs[i], trace)
        anchored[i] = True
        if true_channels is not None:
            nmse3[i] = _nmse(true_channels[i],
                             synthesize_channel(bs.array,
                                                [e.params for e in step3[i]]))
    return JointResult(step1=step1, step2=report, step3=step3,
                       nmse_step1=nmse1, nmse_step3=nmse3, anchored=anchored)
