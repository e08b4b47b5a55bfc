"""Command-line interface: estimate, sweep, crlb, codebook, validate.

Exit codes: 0 success, 1 usage error, 2 config error, 3 runtime anomaly.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import harness
from .bounds import crlb_diag, fim
from .codebook import angle_grid, build_codebook
from .harness import Scenario, ScenarioError, load_scenario
from .localization import is_front_side

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nearfield",
        description="Near-field joint channel estimation and cooperative "
                    "localization simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, trials=False, snr=False):
        p.add_argument("--config", required=True, help="scenario JSON path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the scenario seed")
        p.add_argument("--out", default=None, help="output path (default stdout)")
        p.add_argument("--threads", type=int,
                       default=int(os.environ.get("NEARFIELD_THREADS", "1")))
        if trials:
            p.add_argument("--trials", type=int, default=200)
        if snr:
            p.add_argument("--snr-db", default=None,
                           help="comma-separated SNR grid in dB")

    common(sub.add_parser("estimate", help="one scenario, one draw, full "
                                           "joint result as JSON"))
    common(sub.add_parser("sweep", help="Monte Carlo SNR sweep to CSV"),
           trials=True, snr=True)
    common(sub.add_parser("crlb", help="CRLB table for the scenario's LoS "
                                       "geometry to CSV"))
    common(sub.add_parser("codebook", help="dump the codebook as CSV"))
    common(sub.add_parser("validate", help="run invariant checks on a scenario"))
    return parser


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _load(args) -> Scenario:
    scenario = load_scenario(args.config)
    if args.seed is not None:
        scenario.seed = args.seed
    return scenario


def _cmd_estimate(args) -> int:
    scenario = _load(args)
    result_rows, result = harness.run_trial(scenario, None, 0, 0,
                                            return_joint=True)
    payload = {
        "fusion": json.loads(result.step2.to_json()),
        "anchored": result.anchored,
        "per_bs": [{
            "nmse_db_step1": harness.to_db(result.nmse_step1[i]),
            "nmse_db_step3": (harness.to_db(result.nmse_step3[i])
                              if result.nmse_step3[i] is not None else None),
            "paths": [{"theta": e.params.theta, "r": e.params.r,
                       "g": e.params.g, "phi": e.params.phi,
                       "cov": [float(v) for v in e.cov.ravel()]}
                      for e in result.step1[i]],
        } for i in range(len(scenario.bss))],
        "metrics": [{k: _jsonable(v) for k, v in row.items()
                     if not k.startswith("_")} for row in result_rows],
    }
    _emit(json.dumps(payload, indent=2) + "\n", args.out)
    return EXIT_OK


def _jsonable(v):
    if isinstance(v, float) and (math.isnan(v) or math.isinf(v)):
        return None
    return v


def _cmd_sweep(args) -> int:
    scenario = _load(args)
    if args.snr_db is None:
        grid = [0.0, 10.0, 20.0, 30.0]
    else:
        grid = [float(v) for v in args.snr_db.split(",")]
    result = harness.sweep(scenario, grid, args.trials, threads=args.threads)
    _emit(result.to_csv(), args.out)
    return EXIT_OK


def _cmd_crlb(args) -> int:
    scenario = _load(args)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=scenario.seed,
                                                       spawn_key=(0, 0)))
    per_bs_paths = harness.draw_paths(scenario, rng)
    lines = ["bs,path,param,crlb,sqrt_crlb"]
    names = ["theta", "r", "g", "phi"]
    for i, paths in enumerate(per_bs_paths):
        F = fim(scenario.array, paths, scenario.sigma2)
        variances, ill = crlb_diag(F)
        for l in range(len(paths)):
            for j, name in enumerate(names):
                v = variances[4 * l + j]
                lines.append(f"{i},{l},{name},{v:.12g},{math.sqrt(max(v, 0)):.12g}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _cmd_codebook(args) -> int:
    scenario = _load(args)
    cb = build_codebook(scenario.array, scenario.codebook_config)
    lines = ["n_theta,n_r,cos_theta,theta_rad,r_m"]
    for cw in cb.codewords:
        lines.append(f"{cw.n_theta},{cw.n_r},{cw.cos_theta:.12g},"
                     f"{cw.theta:.12g},{cw.r:.12g}")
    text = "\n".join(lines) + "\n"
    _emit(text, args.out)
    n_angles = len(angle_grid(scenario.array, scenario.codebook_config.delta_alpha))
    sys.stderr.write(f"codebook: {len(cb)} codewords over {n_angles} angles\n")
    return EXIT_OK


def _cmd_validate(args) -> int:
    scenario = _load(args)
    arr = scenario.array
    checks: list[tuple[str, bool]] = []

    cb = scenario.codebook
    checks.append(("codebook non-empty", len(cb) > 0))
    checks.append(("codewords in near-field annulus",
                   all(arr.min_near_distance < cw.r <= arr.rayleigh_distance
                       for cw in cb.codewords)))
    B = cb.steering_matrix
    checks.append(("steering entries unit modulus",
                   bool(np.allclose(np.abs(B), 1.0, atol=1e-12))))
    for i, bs in enumerate(scenario.bss):
        theta, r = scenario.los_geometry(bs)
        checks.append((f"bs{i} LoS front-side", is_front_side(theta)))
        checks.append((f"bs{i} LoS in annulus",
                       arr.min_near_distance < r <= arr.rayleigh_distance))
    # Noiseless single-draw pipeline sanity.
    noiseless = Scenario(**{**scenario.__dict__, "sigma2": 0.0,
                            "_codebook": scenario._codebook})
    rows = harness.run_trial(noiseless, None, 0, 0)
    checks.append(("noiseless NMSE <= -40 dB",
                   all(r["nmse_db"] <= -40.0 for r in rows)))
    checks.append(("noiseless fused error < 1e-3 m",
                   all(r["fused_rmse_m"] < 1e-3 for r in rows)))

    ok = True
    for name, passed in checks:
        print(f"{'PASS' if passed else 'FAIL'}  {name}")
        ok &= passed
    return EXIT_OK if ok else EXIT_RUNTIME


def cli(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        handler = {
            "estimate": _cmd_estimate,
            "sweep": _cmd_sweep,
            "crlb": _cmd_crlb,
            "codebook": _cmd_codebook,
            "validate": _cmd_validate,
        }[args.command]
    except KeyError:  # pragma: no cover
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return handler(args)
    except (FileNotFoundError, ScenarioError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        sys.stderr.write(f"runtime error: {exc}\n")
        return EXIT_RUNTIME


def main() -> None:  # console entry point
    sys.exit(cli())


if __name__ == "__main__":
    main()
