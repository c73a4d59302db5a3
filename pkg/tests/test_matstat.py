import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose
from scipy import integrate, special, stats

from vbsmooth.matstat import (
    GaussianParams, InverseWishartParams, NotPositiveDefiniteError, PsdMatrix,
    iw_log_pdf, iw_mean, iw_mean_inverse_inv, iw_mode, multigammaln, spd_inverse,
    spd_inverse_guarded,
)


def random_spd(rng, d, floor=0.1):
    a = rng.normal(size=(d, d))
    return a @ a.T + floor * np.eye(d)


class TestPsdMatrix:
    def test_symmetrizes_roundoff(self):
        a = np.array([[2.0, 1.0], [1.0 + 1e-14, 3.0]])
        m = PsdMatrix(a)
        assert_allclose(m.array, m.array.T, rtol=0, atol=0)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError, match="symmetric"):
            PsdMatrix([[1.0, 0.5], [0.0, 1.0]])

    def test_rejects_negative_eigenvalue(self):
        with pytest.raises(ValueError, match="semi-definite"):
            PsdMatrix([[1.0, 2.0], [2.0, 1.0]])

    def test_accepts_roundoff_negative_eigenvalue(self):
        v = np.array([1.0, -1.0]) / np.sqrt(2)
        a = np.outer(v, v) * 4.0 - 1e-12 * np.eye(2)
        assert PsdMatrix(a).dim == 2

    def test_rejects_nonsquare_and_nonfinite(self):
        with pytest.raises(ValueError):
            PsdMatrix(np.ones((2, 3)))
        with pytest.raises(ValueError):
            PsdMatrix([[np.nan]])

    def test_is_immutable(self):
        m = PsdMatrix(np.eye(2))
        with pytest.raises(ValueError):
            m.array[0, 0] = 5.0

    def test_scalar_promotes(self):
        assert PsdMatrix(3.0).array.shape == (1, 1)

    def test_cholesky_requires_strict_pd(self):
        m = PsdMatrix(np.zeros((2, 2)))
        assert not m.is_positive_definite()
        with pytest.raises(NotPositiveDefiniteError):
            m.cholesky()

    def test_logdet_and_inverse(self):
        a = random_spd(np.random.default_rng(1), 3)
        m = PsdMatrix(a)
        assert m.logdet() == pytest.approx(np.linalg.slogdet(a)[1], rel=1e-12)
        assert_allclose(m.inv() @ a, np.eye(3), atol=1e-10)


def test_spd_inverse_stack():
    rng = np.random.default_rng(2)
    stack = np.stack([random_spd(rng, 3) for _ in range(5)])
    assert_allclose(spd_inverse(stack) @ stack, np.broadcast_to(np.eye(3), stack.shape), atol=1e-10)


def test_guarded_inverse_adds_jitter_only_when_needed(caplog):
    good = np.eye(2)
    assert_allclose(spd_inverse_guarded(good), good)
    assert not caplog.records
    singular = np.stack([np.eye(2), np.array([[1.0, 1.0], [1.0, 1.0]])])
    inv = spd_inverse_guarded(singular)
    assert np.all(np.isfinite(inv))
    assert_allclose(inv[0], np.eye(2))
    assert "jitter" in caplog.text


def test_gaussian_params_dimension_check():
    with pytest.raises(ValueError):
        GaussianParams(np.zeros(3), np.eye(2))
    g = GaussianParams([1.0, 2.0], np.eye(2))
    assert g.dim == 2


class TestInverseWishartParams:
    def test_dof_must_exceed_2d(self):
        with pytest.raises(ValueError):
            InverseWishartParams(4.0, np.eye(2))
        InverseWishartParams(4.5, np.eye(2))

    def test_scale_must_be_pd(self):
        with pytest.raises(NotPositiveDefiniteError):
            InverseWishartParams(10.0, np.zeros((2, 2)))


@pytest.mark.parametrize("d", [1, 2, 3, 4])
@pytest.mark.parametrize("a", [2.5, 3.7, 10.0])
def test_multigammaln_matches_scipy(a, d):
    assert multigammaln(a, d) == pytest.approx(special.multigammaln(a, d), rel=1e-13)


class TestIwLogPdf:
    def test_scalar_hand_value(self):
        # d=1, nu=4, Psi=2, sigma=1: log(2) - 1 - log(2) - log Gamma(1) - 0
        p = InverseWishartParams(4.0, [[2.0]])
        assert iw_log_pdf(p, [[1.0]]) == pytest.approx(-1.0, abs=1e-14)

    @pytest.mark.parametrize("nu,psi", [(3.5, 0.7), (4.0, 2.0), (9.0, 5.0)])
    def test_scalar_matches_inverse_gamma_on_grid(self, nu, psi):
        p = InverseWishartParams(nu, [[psi]])
        ig = stats.invgamma(a=(nu - 2) / 2, scale=psi / 2)
        grid = np.geomspace(0.05, 50.0, 100)
        ours = np.exp([iw_log_pdf(p, [[s]]) for s in grid])
        assert_allclose(ours, ig.pdf(grid), rtol=1e-10)

    @pytest.mark.parametrize("nu,psi", [(2.5, 1.0), (4.0, 2.0), (7.0, 0.3)])
    def test_scalar_density_integrates_to_one(self, nu, psi):
        p = InverseWishartParams(nu, [[psi]])
        total, err = integrate.quad(lambda s: np.exp(iw_log_pdf(p, [[s]])), 0, np.inf, limit=200)
        assert total == pytest.approx(1.0, abs=1e-7)

    @pytest.mark.parametrize("d", [2, 3])
    def test_matches_textbook_parameterization(self, d):
        rng = np.random.default_rng(d)
        psi = random_spd(rng, d)
        sigma = random_spd(rng, d)
        nu = 2 * d + 3.3
        ref = stats.invwishart(df=nu - d - 1, scale=psi).logpdf(sigma)
        assert iw_log_pdf(InverseWishartParams(nu, psi), sigma) == pytest.approx(ref, rel=1e-11)

    def test_orthogonal_invariance(self):
        rng = np.random.default_rng(7)
        psi, sigma = random_spd(rng, 3), random_spd(rng, 3)
        u, _ = np.linalg.qr(rng.normal(size=(3, 3)))
        a = iw_log_pdf(InverseWishartParams(9.0, psi), sigma)
        b = iw_log_pdf(InverseWishartParams(9.0, u @ psi @ u.T), u @ sigma @ u.T)
        assert a == pytest.approx(b, rel=1e-11)

    def test_errors(self):
        p = InverseWishartParams(9.0, np.eye(2))
        with pytest.raises(ValueError, match="dimension"):
            iw_log_pdf(p, np.eye(3))
        with pytest.raises(NotPositiveDefiniteError):
            iw_log_pdf(p, np.zeros((2, 2)))


class TestIwMoments:
    def test_mean_recovers_nominal_with_minimal_dof(self):
        r0 = np.array([[10.0, 2.0], [2.0, 10.0]])
        nu = 2 * 2 + 3
        p = InverseWishartParams(nu, (nu - 2 * 2 - 2) * r0)
        assert_allclose(iw_mean(p).array, r0, rtol=1e-15)

    def test_mean_scalar(self):
        assert iw_mean(InverseWishartParams(5.0, [[3.0]])).array[0, 0] == 3.0

    def test_mean_undefined_at_boundary(self):
        with pytest.raises(ValueError, match="undefined"):
            iw_mean(InverseWishartParams(6.0, np.eye(2)))

    def test_mean_inverse_inv(self):
        assert_allclose(iw_mean_inverse_inv(InverseWishartParams(7.0, 4 * np.eye(2))).array, np.eye(2))
        assert iw_mean_inverse_inv(InverseWishartParams(3.0, [[2.0]])).array[0, 0] == 2.0

    def test_mode(self):
        assert_allclose(iw_mode(InverseWishartParams(8.0, 4 * np.eye(2))).array, 0.5 * np.eye(2))

    def test_mean_inverse_inv_matches_monte_carlo_precision(self):
        # E[Sigma^-1] = (nu - d - 1) Psi^-1, checked by sampling Sigma^-1 ~ Wishart
        rng = np.random.default_rng(3)
        psi = random_spd(rng, 2)
        nu = 9.0
        w = stats.wishart(df=nu - 2 - 1, scale=np.linalg.inv(psi)).rvs(200_000, random_state=rng)
        expected = np.linalg.inv(iw_mean_inverse_inv(InverseWishartParams(nu, psi)).array)
        assert_allclose(w.mean(axis=0), expected, rtol=0.02, atol=0.02 * np.abs(expected).max())


@settings(max_examples=50, deadline=None)
@given(d=st.integers(1, 4), extra=st.floats(0.1, 50.0), c=st.floats(1e-3, 1e3), seed=st.integers(0, 2**31))
def test_mean_linear_in_scale_and_dominates_plugin(d, extra, c, seed):
    rng = np.random.default_rng(seed)
    psi = random_spd(rng, d)
    nu = 2 * d + 2 + extra
    p = InverseWishartParams(nu, psi)
    assert_allclose(iw_mean(InverseWishartParams(nu, c * psi)).array, c * iw_mean(p).array, rtol=1e-12)
    gap = iw_mean(p).array - iw_mean_inverse_inv(p).array
    assert np.linalg.eigvalsh(gap).min() > -1e-12 * np.abs(psi).max()
