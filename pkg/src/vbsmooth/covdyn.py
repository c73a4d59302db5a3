"""Matrix Beta-Bartlett evolution of inverse-Wishart covariance factors.

A discount factor ``lam`` in (0, 1] inflates the spread of an
inverse-Wishart factor between time steps while leaving its mean intact;
``lam = 1`` is the static-parameter case.
"""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass

from scipy import linalg

from .matstat import InverseWishartParams, NotPositiveDefiniteError, PsdMatrix, symmetrize


class DofPredictionMode(enum.Enum):
    """How the degrees of freedom are propagated by the forward prediction.

    ``MEAN_PRESERVING`` uses ``nu' = lam * nu + (1 - lam)(2d + 2)``, which keeps
    ``E[Sigma]`` unchanged.  ``ADDITIVE`` uses ``nu' = nu + (1 - lam)(2d + 2)``,
    which does not preserve the mean and is kept only for comparison runs.
    """

    MEAN_PRESERVING = "mean-preserving"
    ADDITIVE = "additive"


@dataclass(frozen=True)
class DiscountFactor:
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not 0.0 < v <= 1.0:
            raise ValueError(f"discount factor must lie in (0, 1], got {v}")
        if v < 0.5:
            warnings.warn(f"discount factor {v} is unusually small; expected values close to 1",
                          stacklevel=3)
        object.__setattr__(self, "value", v)

    def __float__(self):
        return self.value


def as_discount(lam) -> DiscountFactor:
    return lam if isinstance(lam, DiscountFactor) else DiscountFactor(lam)


def predicted_dof(dof, lam: float, d: int, mode: DofPredictionMode = DofPredictionMode.MEAN_PRESERVING):
    """Degrees of freedom after one forward prediction step (works elementwise)."""
    if mode is DofPredictionMode.MEAN_PRESERVING:
        return lam * dof + (1.0 - lam) * (2 * d + 2)
    return dof + (1.0 - lam) * (2 * d + 2)


def bb_predict(p: InverseWishartParams, lam, mode: DofPredictionMode = DofPredictionMode.MEAN_PRESERVING
               ) -> InverseWishartParams:
    """Forward prediction ``(nu, Psi) -> (nu', lam * Psi)``.

    Raises
    ------
    ValueError
        If the predicted degrees of freedom fall to ``2d`` or below.
    """
    lam = as_discount(lam).value
    if lam == 1.0:
        return p
    dof = predicted_dof(p.dof, lam, p.dim, DofPredictionMode(mode))
    if dof <= 2 * p.dim:
        raise ValueError(f"predicted degrees of freedom {dof} <= 2d")
    return InverseWishartParams(dof, PsdMatrix(lam * p.scale.array))


def bb_smooth(filtered: InverseWishartParams, next_smoothed: InverseWishartParams, lam
              ) -> InverseWishartParams:
    """Backward smoothing step.

    Returns ``nu = (1 - lam) nu_f + lam nu_n`` and the scale whose inverse is
    ``(1 - lam) Psi_f^{-1} + lam Psi_n^{-1}``.
    """
    lam = as_discount(lam).value
    if filtered.dim != next_smoothed.dim:
        raise ValueError("dimension mismatch between filtered and smoothed factors")
    if lam == 1.0:
        return next_smoothed
    dof = (1.0 - lam) * filtered.dof + lam * next_smoothed.dof
    psi_f = filtered.scale.array
    psi_n = next_smoothed.scale.array
    # (a A^-1 + b B^-1)^-1 = B (a B + b A)^-1 A
    try:
        cf = linalg.cho_factor((1.0 - lam) * psi_n + lam * psi_f, lower=True)
    except linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("singular scale in backward smoothing") from exc
    scale = symmetrize(psi_n @ linalg.cho_solve(cf, psi_f))
    return InverseWishartParams(dof, PsdMatrix(scale))
