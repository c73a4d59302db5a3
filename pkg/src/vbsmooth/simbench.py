"""Constant-velocity tracking scenarios, data simulation, error metrics and
the Monte Carlo harness.

The state is ``(p_x, v_x, p_y, v_y)`` and the sensor measures both
positions.  Two truth schedules are provided: a sinusoidal time-varying
one, where ``R_k = (2 - cos(4 pi k / K)) R_0`` and
``Q_k = (2/3 + cos(4 pi k / K) / 3) Q_0``, and a constant one with
``R = r_scale * R_0``, ``Q = q_scale * Q_0``.
"""
from __future__ import annotations

import enum
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import AlgorithmKind, AlgorithmSpec, run_algorithm
from .lgss import LgssModel, NoiseSchedule
from .matstat import GaussianParams
from .vbsmoother import VbPriors

log = logging.getLogger(__name__)


class ScheduleKind(enum.Enum):
    TIME_VARYING = "time-varying"
    TIME_INVARIANT = "time-invariant"


@dataclass(frozen=True)
class CwnaScenario:
    """Tracking scenario; units are metres and seconds.

    ``sigma_e2`` scales the nominal measurement covariance (m^2) and
    ``sigma_v2`` the process noise intensity (m^2/s^3).
    """

    tau: float = 1.0
    K: int = 4000
    sigma_e2: float = 2.0
    sigma_v2: float = 3.0
    schedule: ScheduleKind = ScheduleKind.TIME_VARYING
    r_scale: float = 2.0
    q_scale: float = 0.2
    mc_runs: int = 25
    seed: int = 0
    m0: tuple = (0.0, 5.0, 0.0, 5.0)
    p0_std: float = 30.0

    def __post_init__(self):
        object.__setattr__(self, "schedule", ScheduleKind(self.schedule))
        object.__setattr__(self, "m0", tuple(float(v) for v in self.m0))
        if not self.tau > 0:
            raise ValueError("sampling time tau must be positive")
        if int(self.K) < 1:
            raise ValueError("horizon K must be at least 1")
        for name in ("sigma_e2", "sigma_v2", "r_scale", "q_scale", "p0_std"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if int(self.mc_runs) < 1:
            raise ValueError("mc_runs must be at least 1")
        if len(self.m0) != 4:
            raise ValueError("m0 must have four entries (p_x, v_x, p_y, v_y)")

    @classmethod
    def time_varying(cls, **kw) -> "CwnaScenario":
        kw.setdefault("K", 4000)
        return cls(schedule=ScheduleKind.TIME_VARYING, **kw)

    @classmethod
    def time_invariant(cls, **kw) -> "CwnaScenario":
        kw.setdefault("K", 1000)
        kw.setdefault("mc_runs", 100)
        return cls(schedule=ScheduleKind.TIME_INVARIANT, **kw)


def build_cwna_model(s: CwnaScenario) -> tuple[LgssModel, np.ndarray, np.ndarray]:
    """Model and nominal covariances ``(Q_0, R_0)`` of a scenario."""
    tau = s.tau
    a = np.array([[1.0, tau], [0.0, 1.0]])
    q = s.sigma_v2 * np.array([[tau ** 3 / 3, tau ** 2 / 2], [tau ** 2 / 2, tau]])
    A = np.kron(np.eye(2), a)
    Q0 = np.kron(np.eye(2), q)
    C = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    R0 = s.sigma_e2 * np.array([[5.0, 1.0], [1.0, 5.0]])
    prior = GaussianParams(np.array(s.m0), np.diag(np.full(4, s.p0_std ** 2)))
    return LgssModel(A, C, prior, K=s.K), Q0, R0


def covariance_schedule(s: CwnaScenario, Q0, R0) -> NoiseSchedule:
    """True noise covariances for every step."""
    K = s.K
    if s.schedule is ScheduleKind.TIME_VARYING:
        phase = np.cos(4.0 * np.pi * np.arange(K + 1) / K)
        r_factor = 2.0 - phase
        q_factor = (2.0 / 3.0 + phase / 3.0)[:K]
    else:
        r_factor = np.full(K + 1, s.r_scale)
        q_factor = np.full(K, s.q_scale)
    return NoiseSchedule(q_factor[:, None, None] * Q0, r_factor[:, None, None] * R0)


def nominal_priors(Q0, R0) -> VbPriors:
    """``nu_0 = 2 n_x + 3``, ``V_0 = Q_0``; ``mu_0 = 2 n_y + 3``, ``M_0 = R_0``:
    the weakest inverse-Wishart priors whose means are the nominal values."""
    return VbPriors.from_nominal(Q0, R0, excess_dof=1.0)


def run_rng(seed: int, run: int) -> np.random.Generator:
    """Independent generator for Monte Carlo run ``run`` of master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(run,)))


def _colored(rng, covs, n):
    """Zero-mean Gaussian draws with per-step covariances ``covs`` (n, d, d)."""
    z = rng.standard_normal((n, covs.shape[-1]))
    if n == 0:
        return z
    if np.all(covs == covs[0]):
        return z @ np.linalg.cholesky(covs[0]).T
    return np.einsum("kij,kj->ki", np.linalg.cholesky(covs), z)


def simulate(model: LgssModel, schedule: NoiseSchedule, seed: int, run: int = 0, *,
             zero_noise: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Draw a state trajectory ``x_{0:K}`` and measurements ``y_{0:K}``.

    Deterministic in ``(seed, run)``.  ``zero_noise=True`` drops the process
    and measurement noise (the initial state is still drawn).
    """
    rng = run_rng(seed, run)
    K, nx = model.K, model.n_x
    x0 = model.m0 + np.linalg.cholesky(model.P0) @ rng.standard_normal(nx)
    w = _colored(rng, schedule.Q, K)
    v = _colored(rng, schedule.R, K + 1)
    if zero_noise:
        w[:] = 0.0
        v[:] = 0.0
    x = np.empty((K + 1, nx))
    x[0] = x0
    for k in range(K):
        x[k + 1] = model.A[k] @ x[k] + w[k]
    y = np.einsum("kij,kj->ki", model.C, x) + v
    return x, y


def rmse(est, truth, C) -> float:
    """Root mean square position error over ``k = 0..K``; ``C`` maps state
    to position (single matrix or per-step stack)."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape:
        raise ValueError(f"length mismatch: {est.shape} vs {truth.shape}")
    C = np.asarray(C, dtype=float)
    err = est - truth
    pos = err @ C.T if C.ndim == 2 else np.einsum("kij,kj->ki", C, err)
    return float(np.sqrt(np.mean(np.sum(pos ** 2, axis=1))))


def matrix_error(estimates, truth, n: int | None = None) -> float:
    """``(sum_k tr((X_hat_k - X_k)^2) / (n^2 * N))^(1/4)`` over N steps.

    The quarter power is intentional: it is the square root of the
    per-element root-mean-square Frobenius error.
    """
    estimates = np.asarray(estimates, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimates.shape != truth.shape:
        raise ValueError(f"length mismatch: {estimates.shape} vs {truth.shape}")
    if n is None:
        n = truth.shape[-1]
    elif n != truth.shape[-1]:
        raise ValueError(f"matrix dimension is {truth.shape[-1]}, not {n}")
    diff = estimates - truth
    # tr(D^2) for symmetric D is the squared Frobenius norm
    total = np.einsum("kij,kji->", diff, diff)
    return float((total / (n * n * truth.shape[0])) ** 0.25)


def default_roster(s: CwnaScenario, max_iterations: int = 50) -> list[AlgorithmSpec]:
    """The smoothers compared for a scenario: four for the time-varying
    study (discount 0.98), six for the time-invariant one (discount 1)."""
    if s.schedule is ScheduleKind.TIME_VARYING:
        lam = 0.98
        kinds = [AlgorithmKind.ORACLE_RTS, AlgorithmKind.RTS, AlgorithmKind.VBS_R, AlgorithmKind.VBS_RQ]
    else:
        lam = 1.0
        kinds = list(AlgorithmKind)
    return [AlgorithmSpec(k, lambda_q=lam, lambda_r=lam, max_iterations=max_iterations) for k in kinds]


@dataclass(frozen=True)
class McRunResult:
    algorithm: str
    run: int
    rmse: float = math.nan
    e_r: float | None = None
    e_q: float | None = None
    wall_time: float = 0.0
    iterations: int = 0
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class McSummaryRow:
    algorithm: str
    n_ok: int
    n_failed: int
    rmse_mean: float
    rmse_std: float
    e_r_mean: float | None
    e_r_std: float | None
    e_q_mean: float | None
    e_q_std: float | None


@dataclass(frozen=True, eq=False)
class McResult:
    scenario: CwnaScenario
    algorithms: tuple
    runs: dict = field(default_factory=dict)
    summary: list = field(default_factory=list)

    def row(self, name: str) -> McSummaryRow:
        for r in self.summary:
            if r.algorithm == name:
                return r
        raise KeyError(name)


def _mean_std(values):
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return math.nan, math.nan
    mean = float(np.mean(values))
    std = float(np.std(values, ddof=1)) if values.size > 1 else math.nan
    return mean, std


def summarize(name: str, results: list[McRunResult]) -> McSummaryRow:
    """Mean and sample standard deviation (``ddof=1``) over successful runs;
    the std is NaN for a single run."""
    ok = [r for r in results if r.ok]
    rm, rs = _mean_std([r.rmse for r in ok])
    if ok and ok[0].e_r is not None:
        erm, ers = _mean_std([r.e_r for r in ok])
    else:
        erm = ers = None
    if ok and ok[0].e_q is not None:
        eqm, eqs = _mean_std([r.e_q for r in ok])
    else:
        eqm = eqs = None
    return McSummaryRow(name, len(ok), len(results) - len(ok), rm, rs, erm, ers, eqm, eqs)


def evaluate_run(s: CwnaScenario, algorithms, run: int, priors: VbPriors | None = None) -> list[McRunResult]:
    """Simulate dataset ``run`` and score every algorithm on it.  ``priors``
    default to `nominal_priors`."""
    model, Q0, R0 = build_cwna_model(s)
    truth = covariance_schedule(s, Q0, R0)
    if priors is None:
        priors = nominal_priors(Q0, R0)
    x, y = simulate(model, truth, s.seed, run)
    C = model.C[0]
    out = []
    for spec in algorithms:
        t0 = time.perf_counter()
        try:
            est = run_algorithm(spec, model, y, priors, truth)
        except (np.linalg.LinAlgError, ValueError, FloatingPointError) as exc:
            log.warning("run %d of %s failed: %s", run, spec.name, exc)
            out.append(McRunResult(spec.name, run, wall_time=time.perf_counter() - t0, error=str(exc)))
            continue
        e_r = matrix_error(est.r_hat, truth.R) if est.r_hat is not None else None
        e_q = matrix_error(est.q_hat, truth.Q) if est.q_hat is not None else None
        out.append(McRunResult(spec.name, run, rmse(est.state.mean, x, C), e_r, e_q,
                               time.perf_counter() - t0, est.iterations))
    return out


def _evaluate_star(args):
    return evaluate_run(*args)


def monte_carlo(s: CwnaScenario, algorithms=None, *, priors: VbPriors | None = None, workers: int = 1,
                runs=None, progress=None) -> McResult:
    """Run every algorithm on ``s.mc_runs`` simulated datasets.

    Run ``j`` always uses the random substream ``(s.seed, j)``, and results
    are gathered by run index, so the output does not depend on
    ``workers``.  Failed runs are recorded and left out of the summary.
    """
    algorithms = tuple(default_roster(s) if algorithms is None else algorithms)
    names = [a.name for a in algorithms]
    if len(set(names)) != len(names):
        raise ValueError("algorithm names must be unique")
    run_ids = list(range(s.mc_runs)) if runs is None else list(runs)
    tasks = [(s, algorithms, j, priors) for j in run_ids]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_run = list(pool.map(_evaluate_star, tasks))
    else:
        per_run = []
        for t in tasks:
            per_run.append(_evaluate_star(t))
            if progress is not None:
                progress(t[2])
    by_alg = {n: [] for n in names}
    for results in per_run:
        for r in results:
            by_alg[r.algorithm].append(r)
    summary = [summarize(n, by_alg[n]) for n in names]
    return McResult(s, algorithms, by_alg, summary)


def desk_profile(kind: ScheduleKind | str, **kw) -> CwnaScenario:
    """Reduced-size scenario for desk runs: 25 runs at K=4000 (time-varying)
    or 100 runs at K=1000 (time-invariant)."""
    kind = ScheduleKind(kind)
    if kind is ScheduleKind.TIME_VARYING:
        return CwnaScenario.time_varying(**{"mc_runs": 25, **kw})
    return CwnaScenario.time_invariant(**{"mc_runs": 100, **kw})


def full_profile(kind: ScheduleKind | str, **kw) -> CwnaScenario:
    """Full-size scenario: 5000 runs, K=4000 (time-varying) or K=1000."""
    kind = ScheduleKind(kind)
    if kind is ScheduleKind.TIME_VARYING:
        return CwnaScenario.time_varying(**{"mc_runs": 5000, **kw})
    return CwnaScenario.time_invariant(**{"mc_runs": 5000, **kw})


def with_runs(s: CwnaScenario, mc_runs: int) -> CwnaScenario:
    return replace(s, mc_runs=mc_runs)
