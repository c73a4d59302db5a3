"""Variational-Bayes RTS smoother with unknown, possibly time-varying process
and measurement noise covariances (VBS-RQ).

The posterior over states and covariances is approximated by a product
``q_x(x_{0:K}) q_Q(Q_{0:K-1}) q_R(R_{0:K})``.  ``q_x`` is Gaussian and is
computed by an RTS smoother run with plug-in covariances
``E[Q_k^{-1}]^{-1}`` and ``E[R_k^{-1}]^{-1}``; ``q_Q`` and ``q_R`` are
per-step inverse-Wishart factors, filtered forward and smoothed backward
with the matrix Beta-Bartlett recursions.  The two updates alternate until
the point estimates stop moving or an iteration cap is hit.

Notes
-----
The backward pass over the process noise factors runs from ``k = K-2``
down to 0, so the last factor ``q_Q(Q_{K-1})`` is its forward-filtered
value.  This is not an off-by-one: no ``Q_K`` exists, hence the filtered
factor at ``K-1`` is already conditioned on all the data that informs it.

Like any mean-field approximation, the Gaussian state factor tends to
understate posterior uncertainty when the exact posterior is skewed or
multi-modal.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .covdyn import DofPredictionMode, as_discount
from .lgss import GaussianTrajectoryFactor, LgssModel, NoiseSchedule, smooth
from .matstat import InverseWishartParams, PsdMatrix, iw_mean, spd_inverse_guarded, symmetrize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class VbConfig:
    """Iteration controls for `vb_smooth`.

    ``convergence_tol=None`` disables the early stop, so exactly
    ``max_iterations`` iterations run.
    """

    lambda_q: float = 1.0
    lambda_r: float = 1.0
    max_iterations: int = 50
    convergence_tol: float | None = 1e-6
    dof_mode: DofPredictionMode = DofPredictionMode.MEAN_PRESERVING
    diagonal_restriction: bool = False
    estimate_q: bool = True
    estimate_r: bool = True

    def __post_init__(self):
        object.__setattr__(self, "lambda_q", as_discount(self.lambda_q).value)
        object.__setattr__(self, "lambda_r", as_discount(self.lambda_r).value)
        object.__setattr__(self, "dof_mode", DofPredictionMode(self.dof_mode))
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.convergence_tol is not None and not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive (or None)")


@dataclass(frozen=True)
class VbPriors:
    """Inverse-Wishart priors of the initial process and measurement noise
    covariances.  Both must have a finite mean (``dof > 2d + 2``)."""

    q_prior: InverseWishartParams
    r_prior: InverseWishartParams

    def __post_init__(self):
        for name, p in (("q_prior", self.q_prior), ("r_prior", self.r_prior)):
            if not p.dof > 2 * p.dim + 2:
                raise ValueError(f"{name} needs dof > 2d + 2 = {2 * p.dim + 2}, got {p.dof}")

    @classmethod
    def from_nominal(cls, Q0, R0, excess_dof: float = 1.0) -> "VbPriors":
        """Priors whose means equal the nominal covariances.

        Uses ``dof = 2d + 2 + excess_dof`` and ``scale = excess_dof * nominal``;
        ``excess_dof=1`` gives the weakest priors that still have a mean.
        """
        Q0, R0 = PsdMatrix(Q0), PsdMatrix(R0)
        return cls(
            InverseWishartParams(2 * Q0.dim + 2 + excess_dof, excess_dof * Q0.array),
            InverseWishartParams(2 * R0.dim + 2 + excess_dof, excess_dof * R0.array),
        )

    @property
    def n_x(self) -> int:
        return self.q_prior.dim

    @property
    def n_y(self) -> int:
        return self.r_prior.dim


@dataclass(frozen=True, eq=False)
class IwFactorSeq:
    """A time sequence of inverse-Wishart factors stored as arrays.

    Indexing returns `InverseWishartParams`; ``dof`` has shape ``(n,)`` and
    ``scale`` shape ``(n, d, d)``.
    """

    dof: np.ndarray
    scale: np.ndarray

    @classmethod
    def repeat(cls, p: InverseWishartParams, n: int) -> "IwFactorSeq":
        return cls(np.full(n, p.dof), np.broadcast_to(p.scale.array, (n, p.dim, p.dim)).copy())

    def __len__(self):
        return self.dof.shape[0]

    def __getitem__(self, k) -> InverseWishartParams:
        return InverseWishartParams(self.dof[k], self.scale[k])

    def __iter__(self):
        return (self[k] for k in range(len(self)))

    @property
    def dim(self) -> int:
        return self.scale.shape[-1]

    def mean(self) -> np.ndarray:
        """``E[Sigma_k] = Psi_k / (nu_k - 2d - 2)`` for every step."""
        return self.scale / (self.dof - 2 * self.dim - 2)[:, None, None]

    def plugin(self) -> np.ndarray:
        """``E[Sigma_k^{-1}]^{-1} = Psi_k / (nu_k - d - 1)`` for every step."""
        return self.scale / (self.dof - self.dim - 1)[:, None, None]

    def mode(self) -> np.ndarray:
        return self.scale / self.dof[:, None, None]


@dataclass(frozen=True, eq=False)
class VbIterate:
    """Point estimates compared between successive iterations."""

    q_hat: np.ndarray
    r_hat: np.ndarray
    mean: np.ndarray


@dataclass(frozen=True, eq=False)
class VbPosterior:
    """Output of `vb_smooth`.

    ``q_hat[k]`` and ``r_hat[k]`` are the posterior means of ``Q_k`` and
    ``R_k``.  ``trace_q``/``trace_r`` hold the time-averaged estimates after
    every iteration (one row per iteration).
    """

    state: GaussianTrajectoryFactor
    q_factors: IwFactorSeq
    r_factors: IwFactorSeq
    iterations_used: int
    converged: bool
    trace_q: np.ndarray
    trace_r: np.ndarray
    q_hat: np.ndarray = field(init=False)
    r_hat: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "q_hat", self.q_factors.mean())
        object.__setattr__(self, "r_hat", self.r_factors.mean())

    @property
    def q_mode(self) -> np.ndarray:
        return self.q_factors.mode()

    @property
    def r_mode(self) -> np.ndarray:
        return self.r_factors.mode()

    def iterate(self) -> VbIterate:
        return VbIterate(self.q_hat, self.r_hat, self.state.mean)


def _offdiag_zeroed(x):
    d = x.shape[-1]
    return x * np.eye(d)


def _discounted_cumsum(x, decay: float):
    """``y_0 = x_0``, ``y_k = decay * y_{k-1} + x_k`` along axis 0."""
    if decay == 1.0:
        return np.cumsum(x, axis=0)
    return lfilter([1.0], [1.0, -decay], x, axis=0)


def _filter_factors(stats, prior: InverseWishartParams, lam: float, mode: DofPredictionMode, diagonal: bool):
    """Forward pass: add one observation's worth of sufficient statistics
    per step, then apply the Beta-Bartlett prediction."""
    n, d = stats.shape[0], prior.dim
    prior_scale = prior.scale.array
    if diagonal:
        stats = _offdiag_zeroed(stats)
        prior_scale = _offdiag_zeroed(prior_scale)
    increments = stats.copy()
    increments[0] += prior_scale
    scale = _discounted_cumsum(increments, lam)

    inflate = (1.0 - lam) * (2 * d + 2)
    dof_incr = np.full(n, 1.0 + inflate)
    dof_incr[0] = prior.dof + 1.0
    dof_decay = lam if mode is DofPredictionMode.MEAN_PRESERVING else 1.0
    dof = _discounted_cumsum(dof_incr, dof_decay)
    return dof, symmetrize(scale)


def _smooth_factors(dof_f, scale_f, lam: float):
    """Backward pass combining filtered precisions with discount ``lam``."""
    n = dof_f.shape[0]
    if n == 0:
        return dof_f, scale_f
    if lam == 1.0:
        return np.full(n, dof_f[-1]), np.broadcast_to(scale_f[-1], scale_f.shape).copy()
    dof_in = (1.0 - lam) * dof_f[::-1]
    dof_in[0] = dof_f[-1]
    dof_s = _discounted_cumsum(dof_in, lam)[::-1]

    prec_f = spd_inverse_guarded(scale_f, what="filtered scale matrix")
    prec_in = (1.0 - lam) * prec_f[::-1]
    prec_in[0] = prec_f[-1]
    prec_s = _discounted_cumsum(prec_in, lam)[::-1]
    scale_s = symmetrize(spd_inverse_guarded(symmetrize(prec_s), what="smoothed precision matrix"))
    # the last step has nothing to combine with
    scale_s[-1] = scale_f[-1]
    return np.ascontiguousarray(dof_s), scale_s


def measurement_statistics(model: LgssModel, state: GaussianTrajectoryFactor, ys) -> np.ndarray:
    """``E[(y_k - C_k x_k)(y_k - C_k x_k)^T]`` under the state factor, k = 0..K."""
    C = model.C
    resid = ys - np.einsum("kij,kj->ki", C, state.mean)
    return symmetrize(C @ state.cov @ np.swapaxes(C, 1, 2) + resid[:, :, None] * resid[:, None, :])


def process_statistics(model: LgssModel, state: GaussianTrajectoryFactor) -> np.ndarray:
    """``E[(x_{k+1} - A_k x_k)(x_{k+1} - A_k x_k)^T]`` under the state factor, k = 0..K-1."""
    A = model.A
    At = np.swapaxes(A, 1, 2)
    m, P = state.mean, state.cov
    resid = m[1:] - np.einsum("kij,kj->ki", A, m[:-1])
    # cross[k] = Cov(x_k, x_{k+1}); Cov(x_{k+1}, x_k) is its transpose
    a_cross = A @ state.cross
    stats = (P[1:] + A @ P[:-1] @ At - np.swapaxes(a_cross, 1, 2) - a_cross
             + resid[:, :, None] * resid[:, None, :])
    return symmetrize(stats)


def update_state_factor(model: LgssModel, q_factors: IwFactorSeq, r_factors: IwFactorSeq, ys,
                        *, fixed_q=None, fixed_r=None) -> GaussianTrajectoryFactor:
    """Gaussian factor of the state trajectory given the noise factors.

    Runs the Kalman filter and RTS smoother with plug-in covariances
    ``V_k / (nu_k - n_x - 1)`` and ``M_k / (mu_k - n_y - 1)``.  ``fixed_q`` /
    ``fixed_r`` (a single matrix or a full stack) override the plug-ins of
    a factor that is not being estimated.
    """
    K = model.K
    q_tilde = q_factors.plugin()[:K] if fixed_q is None else np.broadcast_to(fixed_q, (K, model.n_x, model.n_x))
    r_tilde = r_factors.plugin() if fixed_r is None else np.broadcast_to(fixed_r, (K + 1, model.n_y, model.n_y))
    _, state = smooth(model, NoiseSchedule(q_tilde, r_tilde), ys)
    return state


def update_noise_factors(model: LgssModel, state: GaussianTrajectoryFactor, ys, priors: VbPriors,
                         cfg: VbConfig) -> tuple[IwFactorSeq, IwFactorSeq]:
    """Inverse-Wishart factors of ``Q_{0:K-1}`` and ``R_{0:K}`` given the state
    factor.  A factor that is not estimated is returned at its prior."""
    K = model.K
    ys = np.asarray(ys, dtype=float).reshape(K + 1, model.n_y)
    if cfg.estimate_r:
        dof, scale = _filter_factors(measurement_statistics(model, state, ys), priors.r_prior,
                                     cfg.lambda_r, cfg.dof_mode, cfg.diagonal_restriction)
        r_factors = IwFactorSeq(*_smooth_factors(dof, scale, cfg.lambda_r))
    else:
        r_factors = IwFactorSeq.repeat(priors.r_prior, K + 1)
    if cfg.estimate_q and K > 0:
        dof, scale = _filter_factors(process_statistics(model, state), priors.q_prior,
                                     cfg.lambda_q, cfg.dof_mode, cfg.diagonal_restriction)
        q_factors = IwFactorSeq(*_smooth_factors(dof, scale, cfg.lambda_q))
    else:
        q_factors = IwFactorSeq.repeat(priors.q_prior, K)
    return q_factors, r_factors


def _max_relative_change(prev, curr, axes):
    if prev.size == 0:
        return 0.0
    diff = np.sqrt(np.sum((curr - prev) ** 2, axis=axes))
    base = np.sqrt(np.sum(prev ** 2, axis=axes))
    return float(np.max(diff / np.maximum(base, np.finfo(float).tiny)))


def relative_change(prev: VbIterate, curr: VbIterate) -> float:
    """Largest per-step relative change across ``Q_hat``, ``R_hat`` (Frobenius)
    and the smoothed means (2-norm)."""
    return max(_max_relative_change(prev.q_hat, curr.q_hat, (1, 2)),
               _max_relative_change(prev.r_hat, curr.r_hat, (1, 2)),
               _max_relative_change(prev.mean, curr.mean, 1))


def convergence_check(prev: VbIterate, curr: VbIterate, tol: float) -> bool:
    if prev.q_hat.shape != curr.q_hat.shape or prev.r_hat.shape != curr.r_hat.shape \
            or prev.mean.shape != curr.mean.shape:
        raise ValueError("iterates have different shapes")
    return relative_change(prev, curr) < tol


def vb_smooth(model: LgssModel, ys, priors: VbPriors, cfg: VbConfig = VbConfig(), *,
              fixed_q=None, fixed_r=None, init: VbPosterior | None = None) -> VbPosterior:
    """Jointly estimate the state trajectory and the noise covariances.

    Parameters
    ----------
    model : LgssModel
        Known dynamics, measurement matrices and initial-state prior.
    ys : array_like, shape (K + 1, n_y)
        Measurements.
    priors : VbPriors
        Inverse-Wishart priors of ``Q_0`` and ``R_0``.
    cfg : VbConfig
        Discount factors, iteration cap and tolerance, and switches for
        estimating ``Q``/``R`` and for the diagonal restriction.
    fixed_q, fixed_r : array_like, optional
        Covariances used in the state update when the corresponding factor
        is frozen (``estimate_q`` / ``estimate_r`` false).  Default to the
        prior mean.
    init : VbPosterior, optional
        Warm start from the noise factors of a previous run.

    Returns
    -------
    VbPosterior
        Never raises on non-convergence; check ``converged``.
    """
    K = model.K
    ys = np.asarray(ys, dtype=float).reshape(K + 1, model.n_y)
    if priors.n_x != model.n_x or priors.n_y != model.n_y:
        raise ValueError("prior dimensions do not match the model")
    if cfg.diagonal_restriction:
        priors = VbPriors(
            InverseWishartParams(priors.q_prior.dof, _offdiag_zeroed(priors.q_prior.scale.array)),
            InverseWishartParams(priors.r_prior.dof, _offdiag_zeroed(priors.r_prior.scale.array)))
    fixed_q = None if cfg.estimate_q else np.asarray(
        iw_mean(priors.q_prior).array if fixed_q is None else fixed_q, dtype=float)
    fixed_r = None if cfg.estimate_r else np.asarray(
        iw_mean(priors.r_prior).array if fixed_r is None else fixed_r, dtype=float)

    if init is not None:
        q_factors, r_factors = init.q_factors, init.r_factors
    else:
        q_factors = IwFactorSeq.repeat(priors.q_prior, K)
        r_factors = IwFactorSeq.repeat(priors.r_prior, K + 1)

    trace_q, trace_r = [], []
    prev = None
    converged = False
    iterations = 0
    for iterations in range(1, cfg.max_iterations + 1):
        state = update_state_factor(model, q_factors, r_factors, ys, fixed_q=fixed_q, fixed_r=fixed_r)
        q_factors, r_factors = update_noise_factors(model, state, ys, priors, cfg)
        curr = VbIterate(q_factors.mean(), r_factors.mean(), state.mean)
        trace_q.append(curr.q_hat.mean(axis=0) if K else np.full((model.n_x, model.n_x), np.nan))
        trace_r.append(curr.r_hat.mean(axis=0))
        if prev is not None and cfg.convergence_tol is not None \
                and convergence_check(prev, curr, cfg.convergence_tol):
            converged = True
            break
        prev = curr
    log.debug("vb_smooth stopped after %d iterations (converged=%s)", iterations, converged)
    return VbPosterior(state, q_factors, r_factors, iterations, converged,
                       np.array(trace_q), np.array(trace_r))

