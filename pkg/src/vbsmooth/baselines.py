"""Comparison smoothers: RTS with fixed (nominal or true) noise, an EM
smoother for constant unknown Q and R, and thin wrappers around
`vb_smooth` for the R-only and diagonal variants.

`run_algorithm` gives all of them a common calling convention for the
benchmark harness.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .covdyn import DofPredictionMode
from .lgss import GaussianTrajectoryFactor, LgssModel, NoiseSchedule, kalman_filter, smooth
from .matstat import InverseWishartParams, NotPositiveDefiniteError, iw_mean
from .vbsmoother import (
    VbConfig, VbPosterior, VbPriors, measurement_statistics, process_statistics, vb_smooth,
)


def _schedule(model: LgssModel, Q, R) -> NoiseSchedule:
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    if Q.ndim == 2:
        Q = np.broadcast_to(Q, (model.K,) + Q.shape)
    if R.ndim == 2:
        R = np.broadcast_to(R, (model.K + 1,) + R.shape)
    return NoiseSchedule(Q, R)


def rts_with_fixed_noise(model: LgssModel, Q, R, ys) -> GaussianTrajectoryFactor:
    """RTS smoother with given noise covariances (one matrix or a full
    schedule each)."""
    return smooth(model, _schedule(model, Q, R), ys)[1]


def log_likelihood(model: LgssModel, Q, R, ys) -> float:
    """Observed-data log-likelihood from the innovation decomposition."""
    return kalman_filter(model, _schedule(model, Q, R), ys).loglik


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 50
    convergence_tol: float | None = 1e-6
    estimate_q: bool = True
    estimate_r: bool = True

    def __post_init__(self):
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.convergence_tol is not None and not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive (or None)")


@dataclass(frozen=True, eq=False)
class EmResult:
    """Final estimates and per-iteration history of `em_smooth`.

    ``loglik[i]`` is the log-likelihood of the parameters used in E-step
    ``i``; the last entry belongs to the returned ``q_hat``, ``r_hat``.
    ``trace_q[i]``, ``trace_r[i]`` are the estimates after M-step ``i``.
    """

    q_hat: np.ndarray
    r_hat: np.ndarray
    state: GaussianTrajectoryFactor
    iterations: int
    converged: bool
    loglik: np.ndarray
    trace_q: np.ndarray
    trace_r: np.ndarray


def em_m_step(model: LgssModel, state: GaussianTrajectoryFactor, ys) -> tuple[np.ndarray, np.ndarray]:
    """Maximizing constant ``(Q, R)`` for the expected complete-data
    log-likelihood under ``state``."""
    q = process_statistics(model, state).mean(axis=0)
    r = measurement_statistics(model, state, ys).mean(axis=0)
    return q, r


def _rel_change(a, b):
    return np.linalg.norm(b - a) / max(np.linalg.norm(a), np.finfo(float).tiny)


def em_smooth(model: LgssModel, ys, Q_init, R_init, cfg: EmConfig = EmConfig()) -> EmResult:
    """Expectation-maximization for time-invariant ``Q`` and ``R``.

    Each iteration runs the Kalman filter and RTS smoother with the current
    estimates (E-step) and replaces them by the averaged expected residual
    outer products (M-step).  Stops when both estimates change by less
    than ``convergence_tol`` relative (Frobenius norm) or after
    ``max_iterations`` M-steps.

    Raises
    ------
    NotPositiveDefiniteError
        If an M-step produces a covariance that is not positive definite.
    """
    if model.K < 1:
        raise ValueError("EM needs at least two time steps")
    ys = np.asarray(ys, dtype=float).reshape(model.K + 1, model.n_y)
    Q = np.array(Q_init, dtype=float)
    R = np.array(R_init, dtype=float)
    logliks, trace_q, trace_r = [], [], []
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        fr, state = smooth(model, _schedule(model, Q, R), ys)
        logliks.append(fr.loglik)
        q_new, r_new = em_m_step(model, state, ys)
        if not cfg.estimate_q:
            q_new = Q
        if not cfg.estimate_r:
            r_new = R
        for name, m in (("Q", q_new), ("R", r_new)):
            try:
                np.linalg.cholesky(m)
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefiniteError(f"EM M-step produced a non-PD {name} at iteration {it}") from exc
        change = max(_rel_change(Q, q_new), _rel_change(R, r_new))
        Q, R = q_new, r_new
        trace_q.append(Q)
        trace_r.append(R)
        if cfg.convergence_tol is not None and change < cfg.convergence_tol:
            converged = True
            break
    fr, state = smooth(model, _schedule(model, Q, R), ys)
    logliks.append(fr.loglik)
    return EmResult(Q, R, state, it, converged, np.array(logliks), np.array(trace_q), np.array(trace_r))


def vbs_r(model: LgssModel, ys, r_prior: InverseWishartParams, cfg: VbConfig, Q_nominal) -> VbPosterior:
    """VB smoother estimating only ``R_k``; ``Q`` is held at ``Q_nominal``."""
    Q_nominal = np.asarray(Q_nominal, dtype=float)
    n = Q_nominal.shape[-1]
    q_prior = InverseWishartParams(2 * n + 3, Q_nominal)
    return vb_smooth(model, ys, VbPriors(q_prior, r_prior), replace(cfg, estimate_q=False),
                     fixed_q=Q_nominal)


def vbs_rq_diagonal(model: LgssModel, ys, priors: VbPriors, cfg: VbConfig) -> VbPosterior:
    """VB smoother restricted to diagonal noise covariances."""
    return vb_smooth(model, ys, priors, replace(cfg, diagonal_restriction=True))


class AlgorithmKind(enum.Enum):
    ORACLE_RTS = "oracle-rts"
    RTS = "rts"
    VBS_R = "vbs-r"
    VBS_RQ = "vbs-rq"
    EMS_RQ = "ems-rq"
    VBS_RQ_D = "vbs-rq-d"

    @property
    def estimates_r(self) -> bool:
        return self in (AlgorithmKind.VBS_R, AlgorithmKind.VBS_RQ, AlgorithmKind.EMS_RQ, AlgorithmKind.VBS_RQ_D)

    @property
    def estimates_q(self) -> bool:
        return self in (AlgorithmKind.VBS_RQ, AlgorithmKind.EMS_RQ, AlgorithmKind.VBS_RQ_D)


@dataclass(frozen=True)
class AlgorithmSpec:
    """One smoother with its options; ``name`` labels result rows."""

    kind: AlgorithmKind
    name: str = ""
    lambda_q: float = 1.0
    lambda_r: float = 1.0
    max_iterations: int = 50
    convergence_tol: float | None = None
    dof_mode: DofPredictionMode = DofPredictionMode.MEAN_PRESERVING

    def __post_init__(self):
        object.__setattr__(self, "kind", AlgorithmKind(self.kind))
        object.__setattr__(self, "dof_mode", DofPredictionMode(self.dof_mode))
        if not self.name:
            object.__setattr__(self, "name", self.kind.value)

    def vb_config(self) -> VbConfig:
        return VbConfig(lambda_q=self.lambda_q, lambda_r=self.lambda_r, max_iterations=self.max_iterations,
                        convergence_tol=self.convergence_tol, dof_mode=self.dof_mode)


@dataclass(frozen=True, eq=False)
class Estimate:
    """Common output: smoothed state means and, where estimated, per-step
    ``Q_hat`` (K) and ``R_hat`` (K + 1) stacks."""

    state: GaussianTrajectoryFactor
    q_hat: np.ndarray | None = None
    r_hat: np.ndarray | None = None
    iterations: int = 0
    trace_q: np.ndarray | None = None
    trace_r: np.ndarray | None = None


def run_algorithm(spec: AlgorithmSpec, model: LgssModel, ys, priors: VbPriors, truth: NoiseSchedule
                  ) -> Estimate:
    """Run one smoother.  The nominal covariances are the prior means;
    ``truth`` is only read by the oracle smoother."""
    Q0 = iw_mean(priors.q_prior).array
    R0 = iw_mean(priors.r_prior).array
    kind = spec.kind
    if kind is AlgorithmKind.ORACLE_RTS:
        return Estimate(smooth(model, truth, ys)[1])
    if kind is AlgorithmKind.RTS:
        return Estimate(rts_with_fixed_noise(model, Q0, R0, ys))
    if kind is AlgorithmKind.EMS_RQ:
        res = em_smooth(model, ys, Q0, R0, EmConfig(spec.max_iterations, spec.convergence_tol))
        K = model.K
        return Estimate(res.state, np.broadcast_to(res.q_hat, (K,) + res.q_hat.shape),
                        np.broadcast_to(res.r_hat, (K + 1,) + res.r_hat.shape), res.iterations,
                        res.trace_q, res.trace_r)
    cfg = spec.vb_config()
    if kind is AlgorithmKind.VBS_R:
        post = vbs_r(model, ys, priors.r_prior, cfg, Q0)
        return Estimate(post.state, None, post.r_hat, post.iterations_used, None, post.trace_r)
    if kind is AlgorithmKind.VBS_RQ_D:
        post = vbs_rq_diagonal(model, ys, priors, cfg)
    else:
        post = vb_smooth(model, ys, priors, cfg)
    return Estimate(post.state, post.q_hat, post.r_hat, post.iterations_used, post.trace_q, post.trace_r)
