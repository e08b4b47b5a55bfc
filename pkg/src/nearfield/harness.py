"""Scenario ingestion, metrics, and the seeded Monte Carlo sweep.

SNR convention: the sweep's snr_db is the per-antenna received SNR
sum_l g_l^2 / sigma^2 at the strongest BS; every row also logs the actual
per-BS SNR. Per-trial randomness is derived with a counter-based
SeedSequence spawn key (grid point, trial), so parallel and serial runs
are bit-identical.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .arraymodel import (ArrayConfig, Measurement, PathParams, add_noise,
                         los_gain, synthesize_channel)
from .codebook import Codebook, CodebookConfig, build_codebook
from .estimator import EstimatorConfig
from .localization import BsConfig, polar_to_relative, relative_to_polar, is_front_side
from .pipeline import JointResult, run_joint

SCHEMA_VERSION = 1

CSV_HEADER = ("snr_db,trial,bs,nmse_db,theta_rmse,r_rmse,single_rmse_m,"
              "fused_rmse_m,step3_nmse_db,snr_bs_db")


class ScenarioError(ValueError):
    """Raised for schema or geometry violations in a scenario file."""


@dataclass
class ScenarioBs:
    config: BsConfig
    num_nlos: int = 1
    nlos_paths: list[PathParams] = field(default_factory=list)


@dataclass
class Scenario:
    array: ArrayConfig
    bss: list[ScenarioBs]
    user: tuple[float, float]
    sigma2: float
    p_t: float
    codebook_config: CodebookConfig
    num_paths: int | None  # estimator L'; default 1 + NLoS count per BS
    single_rounds: int
    cyclic_rounds: int
    zeta: float
    seed: int
    _codebook: Codebook | None = field(default=None, repr=False)

    @property
    def codebook(self) -> Codebook:
        if self._codebook is None:
            self._codebook = build_codebook(self.array, self.codebook_config)
        return self._codebook

    def estimator_config(self, bs: ScenarioBs) -> EstimatorConfig:
        n = self.num_paths if self.num_paths is not None else 1 + self._bs_nlos_count(bs)
        return EstimatorConfig(num_paths=n, codebook=self.codebook,
                               single_rounds=self.single_rounds,
                               cyclic_rounds=self.cyclic_rounds)

    @staticmethod
    def _bs_nlos_count(bs: ScenarioBs) -> int:
        return len(bs.nlos_paths) if bs.nlos_paths else bs.num_nlos

    def los_geometry(self, bs: ScenarioBs) -> tuple[float, float]:
        """LoS (theta, r) of the user as seen from a BS."""
        rel = np.asarray(self.user) - np.asarray(bs.config.position)
        return relative_to_polar(rel[0], rel[1], bs.config.rotation)


def _require(cond: bool, msg: str):
    if not cond:
        raise ScenarioError(msg)


def scenario_from_dict(data: dict) -> Scenario:
    """Build and validate a Scenario, filling defaults for omitted fields."""
    _require(isinstance(data, dict), "scenario must be a JSON object")
    version = data.get("schema_version", SCHEMA_VERSION)
    _require(version == SCHEMA_VERSION, f"unsupported schema_version {version}")

    arr = data.get("array", {})
    _require("num_antennas" in arr, "array.num_antennas is required")
    _require("wavelength" in arr, "array.wavelength is required")
    try:
        array = ArrayConfig(num_antennas=int(arr["num_antennas"]),
                            wavelength=float(arr["wavelength"]),
                            spacing=arr.get("spacing"))
    except ValueError as exc:
        raise ScenarioError(f"array: {exc}") from exc

    if "sigma2" in data:
        sigma2 = float(data["sigma2"])
    else:
        sigma2 = 10.0 ** (float(data.get("sigma2_dbm", -110.0)) / 10.0)
    _require(sigma2 >= 0, "sigma2 must be >= 0")

    cb = data.get("codebook", {})
    try:
        cbcfg = CodebookConfig(delta_alpha=float(cb.get("delta_alpha", 0.5)),
                               delta_beta=float(cb.get("delta_beta", 1.0)),
                               cover_far_edge=bool(cb.get("cover_far_edge", False)))
    except ValueError as exc:
        raise ScenarioError(f"codebook: {exc}") from exc

    est = data.get("estimator", {})
    single_rounds = int(est.get("single_rounds", 5))
    cyclic_rounds = int(est.get("cyclic_rounds", 5))
    num_paths = est.get("num_paths")
    if num_paths is not None:
        num_paths = int(num_paths)
        _require(num_paths >= 1, "estimator.num_paths must be >= 1")

    bss_data = data.get("bss")
    if bss_data is None:
        bss_data = [{"position": [0.0, 0.0], "rotation": 0.0, "num_nlos": 1}]
    _require(len(bss_data) >= 1, "at least one BS is required")

    if "user" in data:
        user = (float(data["user"][0]), float(data["user"][1]))
    else:
        # Default: mid-annulus along the first BS's boresight.
        mid = (array.min_near_distance + array.rayleigh_distance) / 2.0
        bs0 = bss_data[0]
        x, y = polar_to_relative(np.pi / 2, mid, float(bs0.get("rotation", 0.0)))
        user = (float(bs0.get("position", [0, 0])[0]) + x,
                float(bs0.get("position", [0, 0])[1]) + y)

    bss: list[ScenarioBs] = []
    for i, b in enumerate(bss_data):
        _require("position" in b or b is bss_data[0],
                 f"bss[{i}].position is required")
        pos = tuple(float(v) for v in b.get("position", (0.0, 0.0)))
        bs = BsConfig(position=pos, rotation=float(b.get("rotation", 0.0)),
                      array=array)
        nlos_paths = []
        for j, p in enumerate(b.get("nlos", [])):
            phi = p.get("phi")  # omitted -> drawn uniformly per trial
            try:
                path = PathParams(theta=float(p["theta"]), r=float(p["r"]),
                                  g=float(p["g"]),
                                  phi=float(phi) if phi is not None else math.nan)
            except (KeyError, ValueError) as exc:
                raise ScenarioError(f"bss[{i}].nlos[{j}]: {exc}") from exc
            _require(array.min_near_distance < path.r <= array.rayleigh_distance,
                     f"bss[{i}].nlos[{j}]: r={path.r} outside near-field annulus "
                     f"({array.min_near_distance}, {array.rayleigh_distance}]")
            nlos_paths.append(path)
        num_nlos = int(b.get("num_nlos", len(nlos_paths) or 1))
        bss.append(ScenarioBs(config=bs, num_nlos=num_nlos, nlos_paths=nlos_paths))

    scenario = Scenario(array=array, bss=bss, user=user, sigma2=sigma2,
                        p_t=float(data.get("p_t", 1.0)),
                        codebook_config=cbcfg, num_paths=num_paths,
                        single_rounds=single_rounds, cyclic_rounds=cyclic_rounds,
                        zeta=float(data.get("zeta", 3.5)),
                        seed=int(data.get("seed", 0)))

    for i, bs in enumerate(bss):
        theta, r = scenario.los_geometry(bs)
        _require(is_front_side(theta),
                 f"bss[{i}]: user lies behind the array (theta={theta:.4f})")
        _require(array.min_near_distance < r <= array.rayleigh_distance,
                 f"bss[{i}]: LoS distance {r:.4f} m outside near-field annulus "
                 f"({array.min_near_distance:.4f}, {array.rayleigh_distance:.4f}]")
    return scenario


def load_scenario(path: str) -> Scenario:
    if not os.path.exists(path):
        raise FileNotFoundError(f"scenario file not found: {path}")
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: invalid JSON ({exc})") from exc
    return scenario_from_dict(data)


def nmse(h_true: np.ndarray, h_est: np.ndarray) -> float:
    """Normalized channel error ||h - h_est||^2 / ||h||^2."""
    h_true = np.asarray(h_true)
    h_est = np.asarray(h_est)
    if h_true.shape != h_est.shape:
        raise ValueError("length mismatch")
    denom = float(np.linalg.norm(h_true) ** 2)
    if denom == 0.0:
        raise ValueError("true channel is zero")
    return float(np.linalg.norm(h_true - h_est) ** 2 / denom)


def to_db(value: float) -> float:
    """10*log10 with -inf sentinel at zero."""
    return -math.inf if value <= 0.0 else 10.0 * math.log10(value)


def rmse(errors) -> float:
    """Root mean squared error over scalars or 2-vectors."""
    errors = [np.linalg.norm(e) if np.ndim(e) else abs(e) for e in errors]
    if not errors:
        raise ValueError("errors must be non-empty")
    return float(np.sqrt(np.mean(np.square(errors))))


def dbmeter(value_m: float) -> float:
    return -math.inf if value_m <= 0.0 else 20.0 * math.log10(value_m)


def draw_paths(scenario: Scenario, rng: np.random.Generator
               ) -> list[list[PathParams]]:
    """Per-BS path lists: geometric LoS first, then explicit or random NLoS."""
    arr = scenario.array
    out = []
    for bs in scenario.bss:
        theta, r = scenario.los_geometry(bs)
        g_los = los_gain(arr.wavelength, scenario.p_t, r)
        paths = [PathParams(theta=theta, r=r, g=g_los,
                            phi=rng.uniform(0.0, 2.0 * np.pi))]
        if bs.nlos_paths:
            for p in bs.nlos_paths:
                phi = p.phi if math.isfinite(p.phi) else rng.uniform(0.0, 2.0 * np.pi)
                paths.append(PathParams(theta=p.theta, r=p.r, g=p.g, phi=phi))
        else:
            for _ in range(bs.num_nlos):
                paths.append(PathParams(
                    theta=rng.uniform(1e-3, np.pi - 1e-3),
                    r=rng.uniform(arr.min_near_distance, arr.rayleigh_distance),
                    g=rng.uniform(0.0, g_los / 3.0),
                    phi=rng.uniform(0.0, 2.0 * np.pi)))
        out.append(paths)
    return out


def run_trial(scenario: Scenario, snr_db: float | None, point_idx: int,
              trial: int, trace=None, return_joint: bool = False):
    """One Monte Carlo trial: synthesize, estimate, localize, refine.

    Returns one metrics row per BS. snr_db=None uses the scenario's sigma2.
    With return_joint=True, returns (rows, JointResult) instead.
    """
    ss = np.random.SeedSequence(entropy=scenario.seed,
                                spawn_key=(point_idx, trial))
    rng = np.random.default_rng(ss)
    per_bs_paths = draw_paths(scenario, rng)
    powers = [sum(p.g**2 for p in paths) for paths in per_bs_paths]
    if snr_db is None:
        sigma2 = scenario.sigma2
    else:
        sigma2 = max(powers) / 10.0 ** (snr_db / 10.0)

    arr = scenario.array
    channels = [synthesize_channel(arr, paths) for paths in per_bs_paths]
    measurements = [
        Measurement(y=ch if sigma2 == 0.0 else add_noise(ch, sigma2, rng).y,
                    noise_variance=sigma2)
        for ch in channels
    ]
    est_cfgs = [scenario.estimator_config(bs) for bs in scenario.bss]
    result = run_joint([bs.config for bs in scenario.bss], measurements,
                       est_cfgs, scenario.zeta, true_channels=channels,
                       trace=trace)

    user = np.asarray(scenario.user)
    fused_err = float(np.linalg.norm(result.step2.fused.mean - user))
    by_bs = {c.bs_index: c for c in result.step2.candidates}
    rows = []
    for i, bs in enumerate(scenario.bss):
        cand = by_bs[i]
        sel = result.step1[i][cand.path_index].params
        theta_t, r_t = scenario.los_geometry(bs)
        nmse3 = result.nmse_step3[i]
        rows.append({
            "snr_db": (snr_db if snr_db is not None else
                       math.inf if sigma2 == 0.0 else to_db(powers[i] / sigma2)),
            "trial": trial,
            "bs": i,
            "nmse_db": to_db(result.nmse_step1[i]),
            "theta_rmse": abs(sel.theta - theta_t),
            "r_rmse": abs(sel.r - r_t),
            "single_rmse_m": float(np.linalg.norm(cand.position.mean - user)),
            "fused_rmse_m": fused_err,
            "step3_nmse_db": to_db(nmse3) if nmse3 is not None else math.nan,
            "snr_bs_db": to_db(powers[i] / sigma2) if sigma2 > 0 else math.inf,
            "_point": point_idx,
        })
    if return_joint:
        return rows, result
    return rows


@dataclass
class SweepResult:
    rows: list[dict]

    def to_csv(self) -> str:
        cols = CSV_HEADER.split(",")
        lines = [CSV_HEADER]
        for row in self.rows:
            lines.append(",".join(_fmt(row[c]) for c in cols))
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        if math.isinf(v):
            return "-inf" if v < 0 else "inf"
        return f"{v:.12g}"
    return str(v)


def _sweep_task(args) -> list[dict]:
    scenario, snr_db, point_idx, trial = args
    return run_trial(scenario, snr_db, point_idx, trial)


def sweep(scenario: Scenario, snr_grid_db: list[float], trials: int,
          threads: int = 1) -> SweepResult:
    """Monte Carlo sweep over an SNR grid; deterministic given scenario.seed."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    scenario.codebook  # build once so workers inherit the cached matrix
    tasks = [(scenario, snr, pi, t)
             for pi, snr in enumerate(snr_grid_db) for t in range(trials)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(_sweep_task, tasks, chunksize=4))
    else:
        chunks = [_sweep_task(t) for t in tasks]
    rows = [row for chunk in chunks for row in chunk]
    rows.sort(key=lambda r: (r["_point"], r["trial"], r["bs"]))
    return SweepResult(rows=rows)
