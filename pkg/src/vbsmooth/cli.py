"""Command-line front end.

Subcommands
-----------
simulate
    Draw one dataset from a tracking scenario: ``truth.csv``,
    ``measurements.csv`` and a ``manifest.ini`` that can be passed back
    as ``--config`` to regenerate the same files.
smooth
    Run one smoother on a dataset directory and write state estimates,
    covariance estimates and per-iteration traces.
benchmark
    Monte Carlo comparison of several smoothers: ``runs.csv``,
    ``summary.csv`` and ``timings.csv``.
compare
    Diff two ``summary.csv`` files with numeric tolerances.

Exit codes are 0 on success, 1 for invalid configuration or input (and for
``compare`` mismatches), 2 for numerical failures and 3 for I/O errors.

Experiment files are INI files::

    [scenario]
    schedule = time-invariant
    K = 1000
    mc_runs = 100
    seed = 7

    [priors]
    q_dof = 11
    r_dof = 7

    [algorithms]
    names = rts, vbs-rq, ems-rq

    [algorithm:vbs-rq]
    lambda_q = 1.0
    max_iterations = 50

Algorithm names are the kinds (``oracle-rts``, ``rts``, ``vbs-r``,
``vbs-rq``, ``ems-rq``, ``vbs-rq-d``) unless a section sets ``kind``.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .baselines import AlgorithmKind, AlgorithmSpec, run_algorithm
from .covdyn import DofPredictionMode
from .matstat import InverseWishartParams
from .simbench import (
    CwnaScenario, ScheduleKind, build_cwna_model, covariance_schedule, desk_profile, full_profile,
    matrix_error, monte_carlo, default_roster, rmse, simulate,
)
from .vbsmoother import VbPriors

log = logging.getLogger("vbsmooth")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_IO = 0, 1, 2, 3

_SCENARIO_INTS = ("K", "mc_runs", "seed")
_SCENARIO_FLOATS = ("tau", "sigma_e2", "sigma_v2", "r_scale", "q_scale", "p0_std")
_ALG_KEYS = {"kind", "lambda_q", "lambda_r", "max_iterations", "convergence_tol", "dof_mode"}


class ConfigError(ValueError):
    """Invalid experiment configuration or input file."""


class AlgorithmFailure(RuntimeError):
    """A smoother failed numerically on a dataset."""


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    scenario: CwnaScenario
    algorithms: tuple
    priors: VbPriors
    workers: int = 1


# --- formatting -------------------------------------------------------------

def fmt(v) -> str:
    """Shortest round-trip text for a number; empty for missing or NaN."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def matrix_columns(prefix: str, d: int) -> list[str]:
    return [f"{prefix}_{i + 1}{j + 1}" for i in range(d) for j in range(d)]


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([c if isinstance(c, str) else fmt(c) for c in row])


def read_numeric_csv(path: Path) -> tuple[list[str], np.ndarray]:
    """Header and float matrix of a CSV file; errors name the offending line."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ConfigError(f"{path}: empty file") from None
        rows = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ConfigError(f"{path}:{reader.line_num}: non-numeric value in {row!r}") from None
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


# --- configuration ------------------------------------------------------------

def _get(section, key, conv, what):
    try:
        return conv(section[key])
    except ValueError:
        raise ConfigError(f"[{section.name}] {key}: cannot parse {section[key]!r} as {what}") from None


def _scenario_from(cp: configparser.ConfigParser, base: CwnaScenario) -> CwnaScenario:
    if not cp.has_section("scenario"):
        return base
    sec = cp["scenario"]
    kw = {}
    for key in sec:
        if key == "schedule":
            kw["schedule"] = sec[key].strip()
        elif key == "k":
            kw["K"] = _get(sec, key, int, "an integer")
        elif key in _SCENARIO_INTS:
            kw[key] = _get(sec, key, int, "an integer")
        elif key in _SCENARIO_FLOATS:
            kw[key] = _get(sec, key, float, "a number")
        elif key == "m0":
            kw["m0"] = tuple(_get(sec, key, lambda s: [float(t) for t in s.split(",")], "numbers"))
        else:
            raise ConfigError(f"[scenario] unknown key {key!r}")
    try:
        return dataclasses.replace(base, **kw)
    except ValueError as exc:
        raise ConfigError(f"[scenario] {exc}") from None


def _priors_from(cp, Q0, R0) -> VbPriors:
    n_x, n_y = Q0.shape[0], R0.shape[0]
    q_dof, r_dof = 2.0 * n_x + 3, 2.0 * n_y + 3
    if cp.has_section("priors"):
        sec = cp["priors"]
        for key in sec:
            if key not in ("q_dof", "r_dof"):
                raise ConfigError(f"[priors] unknown key {key!r}")
        if "q_dof" in sec:
            q_dof = _get(sec, "q_dof", float, "a number")
        if "r_dof" in sec:
            r_dof = _get(sec, "r_dof", float, "a number")
    if not q_dof > 2 * n_x + 2:
        raise ConfigError(f"[priors] q_dof must exceed 2*n_x + 2 = {2 * n_x + 2}, got {q_dof}")
    if not r_dof > 2 * n_y + 2:
        raise ConfigError(f"[priors] r_dof must exceed 2*n_y + 2 = {2 * n_y + 2}, got {r_dof}")
    # scales chosen so the prior means equal the nominal covariances
    return VbPriors(InverseWishartParams(q_dof, (q_dof - 2 * n_x - 2) * Q0),
                    InverseWishartParams(r_dof, (r_dof - 2 * n_y - 2) * R0))


def _algorithms_from(cp, s: CwnaScenario) -> tuple:
    roster = {a.name: a for a in default_roster(s)}
    default_lam = next(iter(roster.values())).lambda_r
    if cp.has_section("algorithms") and "names" in cp["algorithms"]:
        names = [n.strip() for n in cp["algorithms"]["names"].split(",") if n.strip()]
    else:
        names = list(roster)
    if not names:
        raise ConfigError("[algorithms] names is empty")
    if len(set(names)) != len(names):
        raise ConfigError("[algorithms] names must be unique")
    for sec_name in cp.sections():
        if sec_name.startswith("algorithm:") and sec_name.split(":", 1)[1] not in names:
            log.warning("[%s] does not match any name in [algorithms]; ignored", sec_name)
    out = []
    for name in names:
        sec = cp[f"algorithm:{name}"] if cp.has_section(f"algorithm:{name}") else {}
        unknown = set(sec) - _ALG_KEYS
        if unknown:
            raise ConfigError(f"[algorithm:{name}] unknown key(s) {sorted(unknown)}")
        kind = sec.get("kind", name).strip()
        try:
            kind = AlgorithmKind(kind)
        except ValueError:
            raise ConfigError(f"unknown algorithm kind {kind!r}; choose from "
                              f"{', '.join(k.value for k in AlgorithmKind)}") from None
        kw = dict(kind=kind, name=name, lambda_q=default_lam, lambda_r=default_lam)
        for key in ("lambda_q", "lambda_r"):
            if key in sec:
                kw[key] = _get(sec, key, float, "a number")
            if not 0.0 < kw[key] <= 1.0:
                raise ConfigError(f"[algorithm:{name}] {key} must lie in (0, 1], got {kw[key]}")
        if "max_iterations" in sec:
            kw["max_iterations"] = _get(sec, "max_iterations", int, "an integer")
            if kw["max_iterations"] < 1:
                raise ConfigError(f"[algorithm:{name}] max_iterations must be at least 1")
        if "convergence_tol" in sec:
            raw = sec["convergence_tol"].strip().lower()
            tol = None if raw in ("", "none") else _get(sec, "convergence_tol", float, "a number")
            if tol is not None and not tol > 0:
                raise ConfigError(f"[algorithm:{name}] convergence_tol must be positive")
            kw["convergence_tol"] = tol
        if "dof_mode" in sec:
            try:
                kw["dof_mode"] = DofPredictionMode(sec["dof_mode"].strip())
            except ValueError:
                raise ConfigError(f"[algorithm:{name}] dof_mode must be one of "
                                  f"{', '.join(m.value for m in DofPredictionMode)}") from None
        out.append(AlgorithmSpec(**kw))
    return tuple(out)


def load_config(path, *, kind=None, profile="desk", seed=None, workers=None) -> ExperimentConfig:
    """Parse and validate an experiment file; ``path=None`` gives the
    profile defaults.  Command-line values override the file."""
    cp = configparser.ConfigParser()
    cp.optionxform = str.lower
    if path is not None:
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if kind is None and cp.has_option("scenario", "schedule"):
        kind = cp["scenario"]["schedule"].strip()
    try:
        kind = ScheduleKind(kind or ScheduleKind.TIME_VARYING)
    except ValueError:
        raise ConfigError(f"unknown schedule {kind!r}; choose time-varying or time-invariant") from None
    base = full_profile(kind) if profile == "full" else desk_profile(kind)
    s = _scenario_from(cp, base)
    s = dataclasses.replace(s, schedule=kind)
    if seed is not None:
        s = dataclasses.replace(s, seed=seed)
    _, Q0, R0 = build_cwna_model(s)
    priors = _priors_from(cp, Q0, R0)
    algorithms = _algorithms_from(cp, s)
    if workers is None:
        workers = _get(cp["run"], "workers", int, "an integer") if cp.has_option("run", "workers") else 1
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    return ExperimentConfig(s, algorithms, priors, workers)


def scenario_manifest(s: CwnaScenario, run: int) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["scenario"] = {
        "schedule": s.schedule.value, "K": str(s.K), "tau": fmt(s.tau), "sigma_e2": fmt(s.sigma_e2),
        "sigma_v2": fmt(s.sigma_v2), "r_scale": fmt(s.r_scale), "q_scale": fmt(s.q_scale),
        "mc_runs": str(s.mc_runs), "seed": str(s.seed), "m0": ", ".join(fmt(v) for v in s.m0),
        "p0_std": fmt(s.p0_std),
    }
    cp["dataset"] = {"run": str(run)}
    return cp


# --- commands -----------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = load_config(args.config, kind=args.scenario, profile=args.profile, seed=args.seed)
    s = cfg.scenario
    run = args.run
    if run is None:
        run = 0
        if args.config is not None:
            cp = configparser.ConfigParser()
            cp.read(args.config)
            if cp.has_option("dataset", "run"):
                run = cp.getint("dataset", "run")
    model, Q0, R0 = build_cwna_model(s)
    x, y = simulate(model, covariance_schedule(s, Q0, R0), s.seed, run)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ks = range(s.K + 1)
    write_csv(out / "truth.csv", ["k", "p_x", "v_x", "p_y", "v_y"], ([k, *x[k]] for k in ks))
    write_csv(out / "measurements.csv", ["k", "y_1", "y_2"], ([k, *y[k]] for k in ks))
    with open(out / "manifest.ini", "w") as fh:
        scenario_manifest(s, run).write(fh)
    print(f"wrote {s.K + 1} steps to {out}")
    return EXIT_OK


def _load_dataset(path: Path, cfg_path, profile):
    manifest = path / "manifest.ini"
    if not manifest.exists():
        raise FileNotFoundError(f"{manifest} not found")
    cfg = load_config(cfg_path if cfg_path is not None else manifest, profile=profile)
    if cfg_path is not None:
        # the dataset's own scenario wins over the experiment file
        cfg = dataclasses.replace(cfg, scenario=load_config(manifest, profile=profile).scenario)
    s = cfg.scenario
    header, y = read_numeric_csv(path / "measurements.csv")
    if header != ["k", "y_1", "y_2"]:
        raise ConfigError(f"{path / 'measurements.csv'}: unexpected header {header}")
    if y.shape[0] != s.K + 1:
        raise ConfigError(f"{path / 'measurements.csv'}: {y.shape[0]} rows but manifest says K={s.K}")
    truth = None
    if (path / "truth.csv").exists():
        _, truth = read_numeric_csv(path / "truth.csv")
        truth = truth[:, 1:]
    return cfg, y[:, 1:], truth


def cmd_smooth(args) -> int:
    cfg, y, x_true = _load_dataset(Path(args.dataset), args.config, args.profile)
    s = cfg.scenario
    spec = next((a for a in cfg.algorithms if a.name == args.algorithm), None)
    if spec is None:
        try:
            kind = AlgorithmKind(args.algorithm)
        except ValueError:
            raise ConfigError(f"unknown algorithm {args.algorithm!r}") from None
        lam = default_roster(s)[0].lambda_r
        spec = AlgorithmSpec(kind, lambda_q=lam, lambda_r=lam)
    overrides = {}
    for key in ("lambda_q", "lambda_r", "max_iterations"):
        v = getattr(args, key)
        if v is not None:
            overrides[key] = v
    if args.tol is not None:
        overrides["convergence_tol"] = args.tol if args.tol > 0 else None
    for key in ("lambda_q", "lambda_r"):
        if key in overrides and not 0.0 < overrides[key] <= 1.0:
            raise ConfigError(f"--{key.replace('_', '-')} must lie in (0, 1], got {overrides[key]}")
    if overrides.get("max_iterations", 1) < 1:
        raise ConfigError("--max-iterations must be at least 1")
    spec = dataclasses.replace(spec, **overrides)

    model, Q0, R0 = build_cwna_model(s)
    truth = covariance_schedule(s, Q0, R0)
    try:
        est = run_algorithm(spec, model, y, cfg.priors, truth)
    except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
        raise AlgorithmFailure(f"{spec.name} failed on {args.dataset}: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n_x, n_y = model.n_x, model.n_y
    mean, cov = est.state.mean, est.state.cov
    write_csv(out / "states.csv", ["k", *[f"m_{i + 1}" for i in range(n_x)], *[f"P_{i + 1}{i + 1}" for i in range(n_x)]],
              ([k, *mean[k], *np.diagonal(cov[k])] for k in range(s.K + 1)))
    if est.q_hat is not None:
        write_csv(out / "q_hat.csv", ["k", *matrix_columns("Q", n_x)],
                  ([k, *est.q_hat[k].ravel()] for k in range(s.K)))
    if est.r_hat is not None:
        write_csv(out / "r_hat.csv", ["k", *matrix_columns("R", n_y)],
                  ([k, *est.r_hat[k].ravel()] for k in range(s.K + 1)))
    if est.trace_r is not None:
        cols = ["iteration", *matrix_columns("R", n_y)]
        if est.trace_q is not None:
            cols += matrix_columns("Q", n_x)
        rows = []
        for i in range(len(est.trace_r)):
            row = [i + 1, *est.trace_r[i].ravel()]
            if est.trace_q is not None:
                row += list(est.trace_q[i].ravel())
            rows.append(row)
        write_csv(out / "trace.csv", cols, rows)
    metrics = [["algorithm", spec.name], ["iterations", fmt(est.iterations)]]
    if x_true is not None:
        metrics.append(["rmse", fmt(rmse(mean, x_true, model.C[0]))])
        if est.r_hat is not None:
            metrics.append(["e_r", fmt(matrix_error(est.r_hat, truth.R))])
        if est.q_hat is not None:
            metrics.append(["e_q", fmt(matrix_error(est.q_hat, truth.Q))])
    write_csv(out / "metrics.csv", ["metric", "value"], metrics)
    for key, value in metrics:
        print(f"{key:>10s}  {value}")
    return EXIT_OK


SUMMARY_HEADER = ["algorithm", "n_ok", "n_failed", "rmse_mean", "rmse_std", "e_r_mean", "e_r_std",
                  "e_q_mean", "e_q_std"]


def cmd_benchmark(args) -> int:
    cfg = load_config(args.config, kind=args.scenario, profile=args.profile, seed=args.seed,
                      workers=args.workers)
    s = cfg.scenario
    if args.runs is not None:
        if args.runs < 1:
            raise ConfigError("--runs must be at least 1")
        s = dataclasses.replace(s, mc_runs=args.runs)
    log.info("benchmark: %d runs x %d algorithms, K=%d", s.mc_runs, len(cfg.algorithms), s.K)
    def progress(j):
        print(f"  run {j + 1}/{s.mc_runs}", file=sys.stderr)
    res = monte_carlo(s, cfg.algorithms, priors=cfg.priors, workers=cfg.workers,
                      progress=progress if args.verbose else None)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run_rows, time_rows = [], []
    for a in cfg.algorithms:
        for r in sorted(res.runs[a.name], key=lambda r: r.run):
            run_rows.append([a.name, r.run, r.rmse if r.ok else None, r.e_r, r.e_q, r.iterations, r.error or ""])
            time_rows.append([a.name, r.run, r.wall_time])
    write_csv(out / "runs.csv", ["algorithm", "run", "rmse", "e_r", "e_q", "iterations", "error"], run_rows)
    write_csv(out / "timings.csv", ["algorithm", "run", "wall_time"], time_rows)
    write_csv(out / "summary.csv", SUMMARY_HEADER,
              ([r.algorithm, r.n_ok, r.n_failed, r.rmse_mean, r.rmse_std, r.e_r_mean, r.e_r_std,
                r.e_q_mean, r.e_q_std] for r in res.summary))
    print(f"{'algorithm':<12s} {'ARMSE':>16s} {'E_R':>16s} {'E_Q':>16s}")
    for r in res.summary:
        def pm(m, sd):
            if m is None:
                return "-"
            return f"{m:.3f}" + ("" if sd is None or math.isnan(sd) else f" ± {sd:.3f}")
        print(f"{r.algorithm:<12s} {pm(r.rmse_mean, r.rmse_std):>16s} {pm(r.e_r_mean, r.e_r_std):>16s} "
              f"{pm(r.e_q_mean, r.e_q_std):>16s}")
    return EXIT_RUNTIME if all(r.n_ok == 0 for r in res.summary) else EXIT_OK


def cmd_compare(args) -> int:
    rows = []
    for p in (args.a, args.b):
        with open(p, newline="") as fh:
            rows.append(list(csv.reader(fh)))
    a, b = rows
    if not a or not b or a[0] != b[0]:
        print("headers differ")
        return EXIT_VALIDATION
    header = a[0]
    ta = {r[0]: r for r in a[1:] if r}
    tb = {r[0]: r for r in b[1:] if r}
    mismatches = []
    for name in sorted(set(ta) ^ set(tb)):
        mismatches.append(f"row {name!r} present in only one file")
    for name in [r[0] for r in a[1:] if r and r[0] in tb]:
        for col, x, y in zip(header[1:], ta[name][1:], tb[name][1:]):
            if x == y:
                continue
            try:
                fx, fy = float(x), float(y)
            except ValueError:
                mismatches.append(f"{name}.{col}: {x!r} != {y!r}")
                continue
            if not math.isclose(fx, fy, rel_tol=args.rtol, abs_tol=args.atol):
                mismatches.append(f"{name}.{col}: {x} vs {y}")
    for m in mismatches:
        print(m)
    if mismatches:
        return EXIT_VALIDATION
    print("summaries match")
    return EXIT_OK


# --- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vbsmooth", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True):
        sp.add_argument("--config", type=Path, help="experiment INI file")
        sp.add_argument("--profile", choices=("desk", "full"), default="desk")
        sp.add_argument("--out", type=Path, default=Path("."), help="output directory")
        if seed:
            sp.add_argument("--seed", type=int)
            sp.add_argument("--scenario", choices=[k.value for k in ScheduleKind])

    sp = sub.add_parser("simulate", help="draw one dataset")
    common(sp)
    sp.add_argument("--run", type=int, help="Monte Carlo run index (random substream)")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("smooth", help="run one smoother on a dataset directory")
    sp.add_argument("dataset", type=Path)
    common(sp, seed=False)
    sp.add_argument("--algorithm", default="vbs-rq")
    sp.add_argument("--lambda-q", type=float)
    sp.add_argument("--lambda-r", type=float)
    sp.add_argument("--max-iterations", type=int)
    sp.add_argument("--tol", type=float, help="convergence tolerance; 0 runs all iterations")
    sp.set_defaults(func=cmd_smooth)

    sp = sub.add_parser("benchmark", help="Monte Carlo comparison")
    common(sp)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--runs", type=int, help="override the number of Monte Carlo runs")
    sp.set_defaults(func=cmd_benchmark)

    sp = sub.add_parser("compare", help="diff two summary.csv files")
    sp.add_argument("a", type=Path)
    sp.add_argument("b", type=Path)
    sp.add_argument("--rtol", type=float, default=1e-9)
    sp.add_argument("--atol", type=float, default=0.0)
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (AlgorithmFailure, np.linalg.LinAlgError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
