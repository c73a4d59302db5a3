"""Matrix-variate statistics: validated PSD matrices, Gaussian parameters and
the inverse-Wishart distribution.

The inverse-Wishart density used throughout the package is

    IW(S; nu, Psi) = |Psi|^{(nu-d-1)/2} exp(-tr(Psi S^{-1}) / 2)
                     / (2^{(nu-d-1)d/2} Gamma_d((nu-d-1)/2) |S|^{nu/2})

for d x d matrices, with nu > 2d.  Under this parameterization
``E[S] = Psi / (nu - 2d - 2)`` and ``E[S^{-1}] = (nu - d - 1) Psi^{-1}``.
It coincides with the textbook form IW(n, Psi) with n = nu - d - 1.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln

log = logging.getLogger(__name__)

SYMMETRY_RTOL = 1e-12
EIGEN_RTOL = 1e-10


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a Cholesky factorization is requested of a matrix that is
    not (numerically) positive definite."""


def symmetrize(x):
    """Return ``(x + x^T) / 2`` over the last two axes."""
    x = np.asarray(x, dtype=float)
    return 0.5 * (x + np.swapaxes(x, -1, -2))


def cholesky(x, *, what="matrix"):
    """Lower Cholesky factor, raising `NotPositiveDefiniteError` on failure.

    Accepts stacks of matrices (``(..., d, d)``).
    """
    try:
        return np.linalg.cholesky(x)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(f"{what} is not positive definite") from exc


def spd_inverse(x, *, what="matrix"):
    """Inverse of a (stack of) symmetric positive definite matrices via Cholesky."""
    chol = cholesky(x, what=what)
    eye = np.broadcast_to(np.eye(x.shape[-1]), x.shape)
    linv = np.linalg.solve(chol, eye)
    return np.swapaxes(linv, -1, -2) @ linv


def spd_inverse_guarded(x, *, what="scale matrix"):
    """Like `spd_inverse`, but adds jitter ``1e-10 * tr(x) / d`` to the
    matrices whose factorization fails and logs a warning.

    Well-posed inputs go through untouched.
    """
    try:
        return spd_inverse(x, what=what)
    except NotPositiveDefiniteError:
        pass
    x = np.array(x, dtype=float)
    stack = x.reshape(-1, x.shape[-2], x.shape[-1])
    d = x.shape[-1]
    bad = 0
    for i, mat in enumerate(stack):
        try:
            np.linalg.cholesky(mat)
        except np.linalg.LinAlgError:
            stack[i] = mat + 1e-10 * np.trace(mat) / d * np.eye(d)
            bad += 1
    log.warning("added jitter to %d non-positive-definite %s(s)", bad, what)
    return spd_inverse(stack.reshape(x.shape), what=what)


@dataclass(frozen=True, eq=False)
class PsdMatrix:
    """Symmetric positive semi-definite matrix with validated construction.

    The stored array is symmetrized and made read-only.  Construction fails
    if the input is asymmetric beyond a relative tolerance of 1e-12 or has
    an eigenvalue below ``-1e-10 * lambda_max``.
    """

    array: np.ndarray

    def __init__(self, entries):
        a = np.array(entries, dtype=float)
        if a.ndim == 0:
            a = a.reshape(1, 1)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
            raise ValueError(f"expected a non-empty square matrix, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValueError("matrix has non-finite entries")
        scale = max(np.abs(a).max(), np.finfo(float).tiny)
        asym = np.abs(a - a.T).max()
        if asym > SYMMETRY_RTOL * scale:
            raise ValueError(f"matrix is not symmetric (max asymmetry {asym:.3g})")
        a = symmetrize(a)
        eig = np.linalg.eigvalsh(a)
        if eig[0] < -EIGEN_RTOL * max(eig[-1], 0.0):
            raise ValueError(f"matrix is not positive semi-definite (min eigenvalue {eig[0]:.3g})")
        a.setflags(write=False)
        object.__setattr__(self, "array", a)

    @property
    def dim(self) -> int:
        return self.array.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.array.copy() if copy else self.array
        return self.array.astype(dtype)

    def __repr__(self):
        return f"PsdMatrix({self.array.tolist()!r})"

    def cholesky(self) -> np.ndarray:
        return cholesky(self.array)

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.cholesky()))))

    def inv(self) -> np.ndarray:
        return spd_inverse(self.array)

    def is_positive_definite(self) -> bool:
        try:
            self.cholesky()
        except NotPositiveDefiniteError:
            return False
        return True

    def scaled(self, c: float) -> "PsdMatrix":
        if c < 0:
            raise ValueError("scale factor must be non-negative")
        return PsdMatrix(c * self.array)


def as_psd(x) -> PsdMatrix:
    return x if isinstance(x, PsdMatrix) else PsdMatrix(x)


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Mean vector and covariance of a multivariate Gaussian."""

    mean: np.ndarray
    cov: PsdMatrix

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        cov = as_psd(self.cov)
        if mean.shape[0] != cov.dim:
            raise ValueError(f"mean has length {mean.shape[0]} but covariance is {cov.dim}x{cov.dim}")
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.cov.dim


@dataclass(frozen=True, eq=False)
class InverseWishartParams:
    """Degrees of freedom ``dof`` (nu > 2d) and positive definite ``scale``."""

    dof: float
    scale: PsdMatrix

    def __post_init__(self):
        scale = as_psd(self.scale)
        dof = float(self.dof)
        if not dof > 2 * scale.dim:
            raise ValueError(f"degrees of freedom must exceed 2d = {2 * scale.dim}, got {dof}")
        if not scale.is_positive_definite():
            raise NotPositiveDefiniteError("inverse-Wishart scale must be positive definite")
        object.__setattr__(self, "dof", dof)
        object.__setattr__(self, "scale", scale)

    @property
    def dim(self) -> int:
        return self.scale.dim


def multigammaln(a: float, d: int) -> float:
    """Log of the multivariate gamma function Gamma_d(a).

    Uses ``log Gamma_d(a) = d(d-1)/4 log(pi) + sum_{j=1}^{d} log Gamma(a + (1-j)/2)``.
    Requires ``a > (d - 1) / 2``.
    """
    if a <= 0.5 * (d - 1):
        raise ValueError(f"multivariate gamma needs a > (d-1)/2, got a={a}, d={d}")
    j = np.arange(1, d + 1)
    return 0.25 * d * (d - 1) * np.log(np.pi) + float(np.sum(gammaln(a + 0.5 * (1 - j))))


def iw_log_pdf(p: InverseWishartParams, sigma) -> float:
    """Log density of the inverse-Wishart distribution at ``sigma``.

    Parameters
    ----------
    p : InverseWishartParams
        Degrees of freedom and scale.
    sigma : array_like or PsdMatrix
        Symmetric positive definite ``d x d`` matrix.

    Returns
    -------
    float
    """
    sigma = as_psd(sigma)
    d = p.dim
    if sigma.dim != d:
        raise ValueError(f"dimension mismatch: sigma is {sigma.dim}x{sigma.dim}, scale is {d}x{d}")
    l_sigma = cholesky(sigma.array, what="sigma")
    logdet_sigma = 2.0 * np.sum(np.log(np.diag(l_sigma)))
    # tr(Psi Sigma^{-1}) = tr(L^{-1} Psi L^{-T})
    half = linalg.solve_triangular(l_sigma, p.scale.array, lower=True)
    tr = np.trace(linalg.solve_triangular(l_sigma, half.T, lower=True))
    n = p.dof - d - 1
    return float(
        0.5 * n * p.scale.logdet()
        - 0.5 * tr
        - 0.5 * n * d * np.log(2.0)
        - multigammaln(0.5 * n, d)
        - 0.5 * p.dof * logdet_sigma
    )


def iw_mean(p: InverseWishartParams) -> PsdMatrix:
    """Expected value ``Psi / (nu - 2d - 2)``; undefined unless nu > 2d + 2."""
    denom = p.dof - 2 * p.dim - 2
    if denom <= 0:
        raise ValueError(f"inverse-Wishart mean is undefined for dof={p.dof}, d={p.dim}")
    return PsdMatrix(p.scale.array / denom)


def iw_mean_inverse_inv(p: InverseWishartParams) -> PsdMatrix:
    """``E[Sigma^{-1}]^{-1} = Psi / (nu - d - 1)``, the plug-in covariance used
    by the variational state update."""
    denom = p.dof - p.dim - 1
    if denom <= 0:
        raise ValueError(f"E[Sigma^-1] is undefined for dof={p.dof}, d={p.dim}")
    return PsdMatrix(p.scale.array / denom)


def iw_mode(p: InverseWishartParams) -> PsdMatrix:
    """Mode of the density, ``Psi / nu``."""
    return PsdMatrix(p.scale.array / p.dof)


def gaussian_log_pdf(x, g: GaussianParams) -> float:
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != g.dim:
        raise ValueError("dimension mismatch")
    chol = g.cov.cholesky()
    z = linalg.solve_triangular(chol, x - g.mean, lower=True)
    return float(-0.5 * (z @ z) - np.sum(np.log(np.diag(chol))) - 0.5 * g.dim * np.log(2 * np.pi))
