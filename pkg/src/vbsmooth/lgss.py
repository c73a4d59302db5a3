"""Linear-Gaussian state-space models: Kalman filter, RTS smoother with
lag-one cross-covariances, and an exact batch posterior used as a test
oracle.

The model is

    x_{k+1} = A_k x_k + w_k,   w_k ~ N(0, Q_k),   0 <= k <= K-1
    y_k     = C_k x_k + v_k,   v_k ~ N(0, R_k),   0 <= k <= K
    x_0 ~ N(m_0, P_0)

Time-indexed quantities are stored as stacked arrays with time on axis 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import _kernels
from .matstat import EIGEN_RTOL, GaussianParams, NotPositiveDefiniteError, symmetrize

MAX_ORACLE_SIZE = 64


def _stack(x, n, shape, name):
    x = np.asarray(x, dtype=float)
    if x.shape == shape:
        x = np.broadcast_to(x, (n,) + shape)
    if x.shape != (n,) + shape:
        raise ValueError(f"{name} must have shape {(n,) + shape} or {shape}, got {x.shape}")
    return np.ascontiguousarray(x)


def _readonly(*arrays):
    for a in arrays:
        a.setflags(write=False)


@dataclass(frozen=True, eq=False)
class LgssModel:
    """Known part of a linear-Gaussian state-space model.

    Parameters
    ----------
    A : array_like, shape (K, n_x, n_x) or (n_x, n_x)
        Transition matrices. A single matrix is broadcast over time, in
        which case ``K`` must be given.
    C : array_like, shape (K + 1, n_y, n_x) or (n_y, n_x)
        Measurement matrices.
    prior : GaussianParams
        Prior of the initial state.
    K : int, optional
        Horizon; inferred from ``A`` or ``C`` when they are stacked.
    """

    A: np.ndarray
    C: np.ndarray
    prior: GaussianParams

    def __init__(self, A, C, prior: GaussianParams, K: int | None = None):
        A = np.asarray(A, dtype=float)
        C = np.asarray(C, dtype=float)
        if K is None:
            if A.ndim == 3:
                K = A.shape[0]
            elif C.ndim == 3:
                K = C.shape[0] - 1
            else:
                raise ValueError("horizon K must be given when A and C are single matrices")
        if K < 0:
            raise ValueError("horizon must be non-negative")
        nx = prior.dim
        ny = C.shape[-2]
        A = _stack(A, K, (nx, nx), "A")
        C = _stack(C, K + 1, (ny, nx), "C")
        _readonly(A, C)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "prior", prior)

    @property
    def K(self) -> int:
        return self.A.shape[0]

    @property
    def n_x(self) -> int:
        return self.prior.dim

    @property
    def n_y(self) -> int:
        return self.C.shape[1]

    @property
    def m0(self) -> np.ndarray:
        return self.prior.mean

    @property
    def P0(self) -> np.ndarray:
        return self.prior.cov.array

    def truncated(self, K: int) -> "LgssModel":
        """The same model restricted to steps ``0..K``."""
        if not 0 <= K <= self.K:
            raise ValueError(f"cannot truncate horizon {self.K} to {K}")
        return LgssModel(self.A[:K], self.C[:K + 1], self.prior, K=K)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Process noise covariances ``Q`` (K of them) and measurement noise
    covariances ``R`` (K + 1 of them).

    ``R`` must be positive definite; ``Q`` only positive semi-definite, so
    that deterministic dynamics can be expressed.
    """

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        R = np.array(self.R, dtype=float)
        if Q.ndim != 3 or R.ndim != 3:
            raise ValueError("Q and R must be stacks of matrices; use NoiseSchedule.constant")
        if R.shape[0] != Q.shape[0] + 1:
            raise ValueError(f"expected K process and K+1 measurement covariances, "
                             f"got {Q.shape[0]} and {R.shape[0]}")
        Q = symmetrize(Q)
        R = symmetrize(R)
        if Q.shape[0]:
            _check_psd(Q, "Q")
        _check_pd(R, "R")
        _readonly(Q, R)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    @classmethod
    def constant(cls, Q, R, K: int) -> "NoiseSchedule":
        Q = np.asarray(Q, dtype=float)
        R = np.asarray(R, dtype=float)
        return cls(np.broadcast_to(Q, (K,) + Q.shape), np.broadcast_to(R, (K + 1,) + R.shape))

    @property
    def K(self) -> int:
        return self.Q.shape[0]


def _check_pd(stack, name):
    try:
        np.linalg.cholesky(stack)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"{name} schedule contains a non-positive-definite matrix") from exc


def _check_psd(stack, name):
    eig = np.linalg.eigvalsh(stack)
    if np.any(eig[..., 0] < -EIGEN_RTOL * np.maximum(eig[..., -1], 0.0)):
        raise NotPositiveDefiniteError(f"{name} schedule contains a matrix that is not positive semi-definite")


@dataclass(frozen=True, eq=False)
class FilterResult:
    """Predicted and filtered moments, gains, and the innovation-form
    log-likelihood ``log p(y_{0:K})``."""

    m_pred: np.ndarray
    P_pred: np.ndarray
    m_filt: np.ndarray
    P_filt: np.ndarray
    gain: np.ndarray
    loglik: float


@dataclass(frozen=True, eq=False)
class GaussianTrajectoryFactor:
    """Smoothed Gaussian over the state trajectory.

    ``cross[k]`` is ``Cov(x_k, x_{k+1} | y_{0:K})``; the reverse lag is its
    transpose.
    """

    mean: np.ndarray
    cov: np.ndarray
    gain: np.ndarray
    cross: np.ndarray

    @property
    def K(self) -> int:
        return self.mean.shape[0] - 1


def _check_dims(model: LgssModel, noise: NoiseSchedule, ys):
    ys = np.ascontiguousarray(ys, dtype=float)
    if ys.ndim == 1 and model.n_y == 1:
        ys = ys.reshape(-1, 1)
    if ys.shape != (model.K + 1, model.n_y):
        raise ValueError(f"measurements must have shape {(model.K + 1, model.n_y)}, got {ys.shape}")
    if noise.K != model.K:
        raise ValueError(f"noise schedule horizon {noise.K} differs from model horizon {model.K}")
    if noise.Q.shape[1:] != (model.n_x, model.n_x) or noise.R.shape[1:] != (model.n_y, model.n_y):
        raise ValueError("noise covariance dimensions do not match the model")
    return ys


def kalman_filter(model: LgssModel, noise: NoiseSchedule, ys, *, joseph: bool = False) -> FilterResult:
    """Run the Kalman filter over ``y_0 .. y_K``.

    The covariance update uses ``(I - K_k C_k) P_{k|k-1}`` followed by
    symmetrization; ``joseph=True`` selects the Joseph form instead.
    """
    ys = _check_dims(model, noise, ys)
    *out, status = _kernels.kalman_filter_kernel(
        model.A, model.C, np.ascontiguousarray(noise.Q), np.ascontiguousarray(noise.R), ys,
        np.array(model.m0), np.array(model.P0), joseph)
    if status >= 0:
        raise NotPositiveDefiniteError(f"innovation covariance is singular at step k={status}")
    m_pred, P_pred, m_filt, P_filt, gain, loglik = out
    return FilterResult(m_pred, P_pred, m_filt, P_filt, gain, float(loglik))


def rts_smoother(model: LgssModel, noise: NoiseSchedule, fr: FilterResult) -> GaussianTrajectoryFactor:
    """Backward RTS pass, also returning smoother gains ``G_k`` and lag-one
    cross-covariances ``P_{k,k+1|K} = G_k P_{k+1|K}``.

    ``noise`` is accepted for interface symmetry; the predicted covariances
    already carry it.
    """
    if fr.m_filt.shape[0] != model.K + 1:
        raise ValueError("filter result does not match the model horizon")
    m, P, G, cross, status = _kernels.rts_kernel(model.A, fr.m_pred, fr.P_pred, fr.m_filt, fr.P_filt)
    if status >= 0:
        raise NotPositiveDefiniteError(f"predicted covariance P_{{{status + 1}|{status}}} is singular")
    return GaussianTrajectoryFactor(m, P, G, cross)


def smooth(model: LgssModel, noise: NoiseSchedule, ys, *, joseph: bool = False):
    """Filter then smooth; returns ``(FilterResult, GaussianTrajectoryFactor)``."""
    fr = kalman_filter(model, noise, ys, joseph=joseph)
    return fr, rts_smoother(model, noise, fr)


@dataclass(frozen=True, eq=False)
class BatchPosterior:
    """Exact joint posterior of ``x_{0:K}`` from dense conditioning."""

    joint_mean: np.ndarray
    joint_cov: np.ndarray
    loglik: float
    n_x: int

    def _block(self, i, j):
        n = self.n_x
        return self.joint_cov[i * n:(i + 1) * n, j * n:(j + 1) * n]

    @property
    def mean(self) -> np.ndarray:
        return self.joint_mean.reshape(-1, self.n_x)

    @property
    def cov(self) -> np.ndarray:
        return np.stack([self._block(k, k) for k in range(self.mean.shape[0])])

    @property
    def cross(self) -> np.ndarray:
        K = self.mean.shape[0] - 1
        return np.stack([self._block(k, k + 1) for k in range(K)]) if K else np.empty((0, self.n_x, self.n_x))


def batch_posterior_oracle(model: LgssModel, noise: NoiseSchedule, ys) -> BatchPosterior:
    """Condition the joint Gaussian of ``(x_{0:K}, y_{0:K})`` directly.

    The state trajectory is written as a linear map of ``(x_0, w_0..w_{K-1})``;
    no recursion of the filter or smoother is reused.  Only for small
    problems: ``K * n_x`` may not exceed 64.
    """
    ys = _check_dims(model, noise, ys)
    K, nx = model.K, model.n_x
    n = (K + 1) * nx
    if K * nx > MAX_ORACLE_SIZE:
        raise ValueError(f"batch oracle limited to K*n_x <= {MAX_ORACLE_SIZE}")

    # x_k = Phi(k, 0) x_0 + sum_{j<k} Phi(k, j+1) w_j
    phi = np.zeros((n, n))
    for k in range(K + 1):
        trans = np.eye(nx)
        for j in range(k, -1, -1):
            phi[k * nx:(k + 1) * nx, j * nx:(j + 1) * nx] = trans
            if j > 0:
                trans = trans @ model.A[j - 1]
    src_cov = linalg.block_diag(model.P0, *noise.Q)
    src_mean = np.concatenate([model.m0, np.zeros(K * nx)])
    prior_mean = phi @ src_mean
    prior_cov = phi @ src_cov @ phi.T

    H = linalg.block_diag(*model.C)
    y_mean = H @ prior_mean
    y_cov = symmetrize(H @ prior_cov @ H.T + linalg.block_diag(*noise.R))
    cross = prior_cov @ H.T
    try:
        cf = linalg.cho_factor(y_cov, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("joint measurement covariance is singular") from exc
    resid = ys.reshape(-1) - y_mean
    post_mean = prior_mean + cross @ linalg.cho_solve(cf, resid)
    post_cov = symmetrize(prior_cov - cross @ linalg.cho_solve(cf, cross.T))
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    loglik = -0.5 * (resid @ linalg.cho_solve(cf, resid) + logdet + resid.size * np.log(2 * np.pi))
    return BatchPosterior(post_mean, post_cov, float(loglik), nx)
