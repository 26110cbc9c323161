"""Experiment command line.

Four subcommands reproduce the synthetic studies at desk scale:

* ``transport-recovery``: sample SPD points, build the k-nearest-neighbor
  sheaf, integrate ground-truth transports, and compare fitted per-edge
  losses of each hypothesis class against its analytic plateau.
* ``spectral-stability``: compare bottom-k sheaf spectra across sample sizes
  against a fixed high-resolution reference.
* ``circle-convergence``: error of the rescaled point-cloud Laplacian on the
  circle against the analytic limit operator, over a sample-size grid.
* ``gaussian-oracle``: Monte-Carlo checks of the centered-Gaussian moment
  identities.

Configs are flat key-value text files (``key = value``, one per line, '#'
comments); every flag has a default mirroring the synthetic-study
hyperparameters. Output is a CSV whose first line records the code version,
generator name, seed, and the full scientific config, so a rerun with the
same seed is byte-identical regardless of ``--workers``. Exit codes: 0 on
success, 2 on configuration errors, 3 when ``--validate`` finds a numerical
tolerance violation.
"""

from __future__ import annotations

import argparse
import multiprocessing
import sys

import numpy as np

from . import __version__
from ._csvio import write_csv
from .circle import circle_convergence_row, gaussian_identity_oracle
from .rng import GENERATOR_NAME, derive
from .sheaf import assemble_laplacian, rescaled_edge_transports, spd_knn_graph
from .spd import sample_spd, sym_dim
from .spectral import bottom_k_eigenvalues, spec_l2, spec_rel_max
from .transport import (TransportClass, fit_transports, per_edge_plateau,
                        plateau_circulant, plateau_frozen)


class ConfigError(Exception):
    """Bad experiment configuration (unknown key, bad value, missing file)."""


_TRANSPORT_DEFAULTS = {
    "p": 4, "n_grid": (16, 64, 256), "k": 8, "t": 0.5, "seeds": 3,
    "euler_steps": 50, "reflections": 16, "epsilon": 1e-12,
    "free_iters": 20000, "free_step": 1.5,
    "circ_iters": 500, "circ_step": 1.0, "stop_excess": 1e-8,
}
_SPECTRAL_DEFAULTS = {
    "p": 2, "n_grid": (50, 100, 200, 400, 800), "n_ref": 800, "k": 8,
    "t": 0.5, "seeds": 5, "k_eig": 32, "euler_steps": 50,
    "dense_limit": 10_000, "orth_tol": 0.05,
}
_CIRCLE_DEFAULTS = {
    "n_grid": (256, 512, 1024, 2048, 4096), "alpha": 1.0, "seeds": 10,
    "section": "sin", "queries": 32,
}
_GAUSS_DEFAULTS = {"m": 3, "a": 2.0, "t": 0.1, "trials": 1_000_000}

_DEFAULTS = {
    "transport-recovery": _TRANSPORT_DEFAULTS,
    "spectral-stability": _SPECTRAL_DEFAULTS,
    "circle-convergence": _CIRCLE_DEFAULTS,
    "gaussian-oracle": _GAUSS_DEFAULTS,
}

# seed-path tags, one per experiment, so streams never collide across
# subcommands run from the same master seed
_EXP_TAG = {
    "transport-recovery": 0,
    "spectral-stability": 1,
    "circle-convergence": 2,
    "gaussian-oracle": 3,
}


def parse_config_file(path) -> dict:
    raw = {}
    try:
        with open(path, "r", encoding="ascii") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" in line:
            key, _, value = line.partition("=")
        else:
            key, _, value = line.partition(" ")
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigError(f"malformed config line {lineno}: {line!r}")
        raw[key] = value
    return raw


def _coerce(experiment: str, raw: dict) -> dict:
    defaults = _DEFAULTS[experiment]
    cfg = dict(defaults)
    seed = None
    for key, value in raw.items():
        if key == "seed":
            seed = _parse_int(key, value)
            continue
        if key == "experiment":
            if value != experiment:
                raise ConfigError(
                    f"config is for experiment {value!r}, not {experiment!r}")
            continue
        if key not in defaults:
            raise ConfigError(f"unknown config key {key!r} for {experiment}")
        default = defaults[key]
        if isinstance(default, tuple):
            cfg[key] = tuple(_parse_int(key, v)
                             for v in value.replace(",", " ").split())
        elif isinstance(default, bool):
            cfg[key] = value.lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            cfg[key] = _parse_int(key, value)
        elif isinstance(default, float):
            cfg[key] = _parse_float(key, value)
        else:
            cfg[key] = value
    _check_config(experiment, cfg)
    return cfg, seed


def _parse_int(key, value):
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} needs an integer, got {value!r}") \
            from None


def _parse_float(key, value):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r} needs a number, got {value!r}") \
            from None


def _check_config(experiment: str, cfg: dict) -> None:
    for key, value in cfg.items():
        if isinstance(value, tuple):
            if any(v <= 0 for v in value):
                raise ConfigError(f"{key} entries must be positive")
            if list(value) != sorted(value):
                raise ConfigError(f"{key} must be ascending")
        elif isinstance(value, (int, float)) and value <= 0:
            raise ConfigError(f"{key} must be positive")
    if experiment == "circle-convergence" and cfg["section"] not in (
            "sin", "cos", "sin2", "constant"):
        raise ConfigError(f"unknown section {cfg['section']!r}")
    if experiment == "spectral-stability":
        nd = cfg["n_ref"] * sym_dim(cfg["p"])
        if nd > cfg["dense_limit"]:
            raise ConfigError(
                f"reference problem size {nd} exceeds dense_limit "
                f"{cfg['dense_limit']}; reduce n_ref or p")
    if experiment == "gaussian-oracle" and cfg["trials"] < 10_000:
        raise ConfigError("trials must be at least 10^4")


def _comment(experiment: str, cfg: dict, seed: int) -> str:
    body = " ".join(f"{k}={_cfg_str(v)}" for k, v in sorted(cfg.items()))
    return (f"netsheaf {__version__} | experiment={experiment} | "
            f"rng={GENERATOR_NAME} | seed={seed} | {body}")


def _cfg_str(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _map_cells(fn, args_list, workers: int):
    if workers <= 1 or len(args_list) <= 1:
        return [fn(a) for a in args_list]
    with multiprocessing.get_context("fork").Pool(min(workers, len(args_list))) as pool:
        return pool.map(fn, args_list)


# ---------------------------------------------------------------------------
# transport recovery
# ---------------------------------------------------------------------------

def _transport_cell(args):
    (seed, n_idx, rep, n, cfg) = args
    tag = _EXP_TAG["transport-recovery"]
    pts = sample_spd(cfg["p"], n, derive(seed, tag, n_idx, rep, 0))
    graph = spd_knn_graph(pts, cfg["k"], cfg["t"])
    targets = rescaled_edge_transports(graph, steps=cfg["euler_steps"])
    out = {}
    frozen = plateau_frozen(targets)
    out["frozen"] = (frozen, frozen)
    free_class = TransportClass.free_orthogonal(cfg["reflections"])
    fit_free = fit_transports(
        targets, free_class, iters=cfg["free_iters"], step=cfg["free_step"],
        seed=derive(seed, tag, n_idx, rep, 1), epsilon=cfg["epsilon"],
        stop_excess=cfg["stop_excess"])
    free_theory = float(np.mean([per_edge_plateau(t, free_class)
                                 for t in targets.values()]))
    out["free"] = (float(np.mean(list(fit_free.final_losses.values()))),
                   free_theory)
    fit_circ = fit_transports(
        targets, TransportClass.circulant(), iters=cfg["circ_iters"],
        step=cfg["circ_step"], seed=0, stop_excess=cfg["stop_excess"])
    out["circulant"] = (float(np.mean(list(fit_circ.final_losses.values()))),
                        plateau_circulant(targets))
    return out


def run_transport_recovery(cfg: dict, seed: int, workers: int = 1):
    """Rows (n, class, empirical_mean, empirical_std, theory)."""
    cells = [(seed, n_idx, rep, n, cfg)
             for n_idx, n in enumerate(cfg["n_grid"])
             for rep in range(cfg["seeds"])]
    results = _map_cells(_transport_cell, cells, workers)
    rows = []
    reps = cfg["seeds"]
    for n_idx, n in enumerate(cfg["n_grid"]):
        per_seed = results[n_idx * reps:(n_idx + 1) * reps]
        for cls in ("free", "circulant", "frozen"):
            emp = np.array([r[cls][0] for r in per_seed])
            theory = np.array([r[cls][1] for r in per_seed])
            rows.append([n, cls, float(emp.mean()), float(emp.std()),
                         float(theory.mean())])
    return rows


def _validate_transport(rows) -> list:
    failures = []
    theory = {(r[0], r[1]): r[4] for r in rows}
    for n, cls, emp_mean, _, th in rows:
        if cls == "free" and emp_mean > 1e-6:
            failures.append(f"free empirical loss {emp_mean:.3e} > 1e-6 at n={n}")
        if cls in ("circulant", "frozen") and abs(emp_mean - th) > 0.03 * th:
            failures.append(
                f"{cls} empirical {emp_mean:.6e} deviates from plateau "
                f"{th:.6e} by more than 3% at n={n}")
    for n in {r[0] for r in rows}:
        if not theory[(n, "circulant")] < theory[(n, "frozen")]:
            failures.append(f"plateau ordering violated at n={n}")
    return failures


# ---------------------------------------------------------------------------
# spectral stability
# ---------------------------------------------------------------------------

def _spectral_lap(pts, cfg):
    graph = spd_knn_graph(pts, cfg["k"], cfg["t"])
    transports = rescaled_edge_transports(graph, steps=cfg["euler_steps"])
    return assemble_laplacian(graph, transports, orth_tol=cfg["orth_tol"])


def _spectral_cell(args):
    (seed, rep, cfg) = args
    tag = _EXP_TAG["spectral-stability"]
    k_eig = cfg["k_eig"]
    ref_pts = sample_spd(cfg["p"], cfg["n_ref"], derive(seed, tag, rep, 0))
    ref_eigs = bottom_k_eigenvalues(_spectral_lap(ref_pts, cfg), k_eig,
                                    dense_limit=cfg["dense_limit"])
    rows = []
    for n_idx, n in enumerate(cfg["n_grid"]):
        if n == cfg["n_ref"]:
            eigs = ref_eigs
        else:
            pts = sample_spd(cfg["p"], n, derive(seed, tag, rep, 1 + n_idx))
            eigs = bottom_k_eigenvalues(_spectral_lap(pts, cfg), k_eig,
                                        dense_limit=cfg["dense_limit"])
        rows.append([cfg["p"], sym_dim(cfg["p"]), n, rep, k_eig,
                     spec_l2(eigs, ref_eigs, k_eig),
                     spec_rel_max(eigs, ref_eigs, k_eig)]
                    + [float(v) for v in eigs])
    return rows


def run_spectral_stability(cfg: dict, seed: int, workers: int = 1):
    """Rows (p, d, n, seed, k, spec_l2, spec_rel_max, eig_0..eig_{k-1})."""
    cells = [(seed, rep, cfg) for rep in range(cfg["seeds"])]
    results = _map_cells(_spectral_cell, cells, workers)
    rows = []
    for n_idx in range(len(cfg["n_grid"])):
        for rep in range(cfg["seeds"]):
            rows.append(results[rep][n_idx])
    return rows


def _validate_spectral(rows, cfg) -> list:
    failures = []
    grid = cfg["n_grid"]
    below_ref = [n for n in grid if n != cfg["n_ref"]]
    if len(below_ref) >= 2:
        lo, hi = below_ref[0], below_ref[-1]
        for col, name in ((5, "spec_l2"), (6, "spec_rel_max")):
            avg = {n: float(np.mean([r[col] for r in rows if r[2] == n]))
                   for n in (lo, hi)}
            if not avg[hi] < avg[lo]:
                failures.append(
                    f"seed-averaged {name} at n={hi} ({avg[hi]:.6e}) is not "
                    f"below its value at n={lo} ({avg[lo]:.6e})")
    for r in rows:
        if r[6] < 0.0:
            failures.append(f"negative spec_rel_max at n={r[2]}")
        if r[2] == cfg["n_ref"] and (r[5] != 0.0 or r[6] != 0.0):
            failures.append("self-referenced row has nonzero metrics")
    return failures


# ---------------------------------------------------------------------------
# circle convergence and gaussian oracle
# ---------------------------------------------------------------------------

def _circle_cell(args):
    (seed, n_idx, rep, n, cfg) = args
    tag = _EXP_TAG["circle-convergence"]
    row = circle_convergence_row(n, cfg["alpha"], cfg["section"],
                                 derive(seed, tag, n_idx, rep),
                                 n_queries=cfg["queries"])
    return [n, cfg["alpha"], row.t_n, cfg["section"], rep,
            row.pointwise_error, row.l2_error]


def run_circle_convergence(cfg: dict, seed: int, workers: int = 1):
    """Rows (n, alpha, t_n, section, seed, pointwise_error, l2_error)."""
    cells = [(seed, n_idx, rep, n, cfg)
             for n_idx, n in enumerate(cfg["n_grid"])
             for rep in range(cfg["seeds"])]
    return _map_cells(_circle_cell, cells, workers)


def _validate_circle(rows, cfg) -> list:
    failures = []
    if cfg["section"] == "constant":
        bad = [r for r in rows if r[5] != 0.0 or r[6] != 0.0]
        if bad:
            failures.append("constant section produced nonzero error")
        return failures
    grid = cfg["n_grid"]
    avg = [float(np.mean([r[6] for r in rows if r[0] == n])) for n in grid]
    for a, b, n_a, n_b in zip(avg, avg[1:], grid, grid[1:]):
        if not b < a:
            failures.append(
                f"seed-averaged l2 error did not decrease from n={n_a} "
                f"({a:.6e}) to n={n_b} ({b:.6e})")
    return failures


def run_gaussian_oracle(cfg: dict, seed: int, workers: int = 1):
    """Rows (quantity, estimate, target, std_error)."""
    tag = _EXP_TAG["gaussian-oracle"]
    rep = gaussian_identity_oracle(cfg["m"], cfg["a"], cfg["t"], cfg["trials"],
                                   derive(seed, tag))
    return [
        ["first_moment", rep.mean_estimate, 0.0, rep.mean_se],
        ["cov_diag", rep.cov_diag_estimate, rep.cov_diag_target, rep.cov_diag_se],
        ["cov_offdiag", rep.cov_offdiag_estimate, 0.0, rep.cov_offdiag_se],
        ["odd_ratio", rep.odd_ratio_estimate, rep.odd_ratio_target, rep.odd_ratio_se],
    ]


def _validate_gaussian(rows, cfg) -> list:
    failures = []
    by_name = {r[0]: r for r in rows}
    scale = cfg["a"] * cfg["t"]
    _, est, _, se = by_name["first_moment"]
    if abs(est) > 3.0 * se:
        failures.append(f"first moment {est:.3e} exceeds 3 standard errors")
    for name in ("cov_diag", "cov_offdiag"):
        _, est, target, _ = by_name[name]
        if not np.isnan(est) and abs(est - target) > 0.01 * scale:
            failures.append(f"{name} {est:.6e} off target {target:.6e} by >1%")
    _, est, target, _ = by_name["odd_ratio"]
    if abs(est - target) > 0.05 * target:
        failures.append(f"odd-moment ratio {est:.6f} off sqrt(2) by >5%")
    return failures


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

_HEADERS = {
    "transport-recovery": ["n", "class", "empirical_mean", "empirical_std",
                           "theory"],
    "circle-convergence": ["n", "alpha", "t_n", "section", "seed",
                           "pointwise_error", "l2_error"],
    "gaussian-oracle": ["quantity", "estimate", "target", "std_error"],
}

_RUNNERS = {
    "transport-recovery": run_transport_recovery,
    "spectral-stability": run_spectral_stability,
    "circle-convergence": run_circle_convergence,
    "gaussian-oracle": run_gaussian_oracle,
}


def _spectral_header(cfg):
    return (["p", "d", "n", "seed", "k", "spec_l2", "spec_rel_max"]
            + [f"eig_{i}" for i in range(cfg["k_eig"])])


def _validate(experiment, rows, cfg) -> list:
    if experiment == "transport-recovery":
        return _validate_transport(rows)
    if experiment == "spectral-stability":
        return _validate_spectral(rows, cfg)
    if experiment == "circle-convergence":
        return _validate_circle(rows, cfg)
    return _validate_gaussian(rows, cfg)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netsheaf",
        description="seeded synthetic experiments over network sheaves")
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name in _RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="flat key-value config file")
        p.add_argument("--seed", type=int, default=None,
                       help="master seed (overrides the config)")
        p.add_argument("--out", default=None,
                       help="output CSV path (default: <experiment>.csv)")
        p.add_argument("--workers", type=int, default=1,
                       help="worker processes for grid cells")
        p.add_argument("--validate", action="store_true",
                       help="check tolerance gates; exit 3 on violation")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    experiment = args.experiment
    try:
        raw = parse_config_file(args.config) if args.config else {}
        cfg, cfg_seed = _coerce(experiment, raw)
        if args.workers < 1:
            raise ConfigError("workers must be at least 1")
        seed = args.seed if args.seed is not None else \
            (cfg_seed if cfg_seed is not None else 0)
        if seed < 0:
            raise ConfigError("seed must be a non-negative integer")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    rows = _RUNNERS[experiment](cfg, seed, workers=args.workers)
    out = args.out if args.out is not None else f"{experiment.replace('-', '_')}.csv"
    header = _spectral_header(cfg) if experiment == "spectral-stability" \
        else _HEADERS[experiment]
    write_csv(out, comment=_comment(experiment, cfg, seed), header=header,
              rows=rows)
    if args.validate:
        failures = _validate(experiment, rows, cfg)
        if failures:
            for failure in failures:
                print(f"validation failure: {failure}", file=sys.stderr)
            return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
