import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import k0

from robinmass.errors import BranchError, ConvergenceError, DomainError, PoleProximityError
from robinmass.green import robin_theta_table
from robinmass.scattering import (
    A0_THEORY,
    alpha_beta_convert,
    det_ratio,
    det_ratio_beta,
    det_ratio_contour,
    fay_fit,
    pseudo_spectrum,
    scattering_T,
    scattering_curve,
    trace_diff_check,
)
from robinmass.special_fn import EULER_GAMMA
from robinmass.spectral import torus_spin_spectrum

SPIN = (-1, -1)


@pytest.fixture(scope="module")
def es():
    return torus_spin_spectrum(1j, SPIN, 2e5, validate=False)


@pytest.fixture(scope="module")
def m():
    return robin_theta_table(SPIN, 1j).value


def T_images(lam, tau, spin, m):
    """Free resolvent image sum minus the Green function at the diagonal."""
    kappa = np.sqrt(-lam)
    r = np.arange(-12, 13)
    M, N = np.meshgrid(r, r, indexing="ij")
    om = M + N * tau
    chi = np.where(M % 2 == 0, 1, spin[0]) * np.where(N % 2 == 0, 1, spin[1])
    nz = (M != 0) | (N != 0)
    images = np.sum(chi[nz] * k0(kappa * np.abs(om[nz]))) / (2 * np.pi)
    return -(np.log(kappa / 2) + EULER_GAMMA) / (2 * np.pi) - m + images


@pytest.mark.parametrize("lam", [-3.0, -50.0, -800.0])
def test_T_matches_resolvent_images(es, m, lam):
    assert scattering_T(es, 0.0, lam).T == pytest.approx(T_images(lam, 1j, SPIN, m), abs=1e-10)


@pytest.mark.parametrize("lam", [-20.0, 5.0])
def test_dT_by_finite_differences(es, lam):
    h = 1e-4
    fd = (scattering_T(es, 0.0, lam + h).T - scattering_T(es, 0.0, lam - h).T) / (2 * h)
    assert scattering_T(es, 0.0, lam).dT == pytest.approx(fd, rel=1e-7)


def test_T_at_zero_vanishes(es):
    assert scattering_T(es, 0.0, 0.0).T == pytest.approx(0.0, abs=1e-14)


def test_weyl_and_ewald_agree(es):
    for lam in (-1.0, -100.0, 10.0):
        a = scattering_T(es, 0.0, lam, "weyl").T
        b = scattering_T(es, 0.0, lam, "ewald").T
        assert a == pytest.approx(b, abs=1e-6)


def test_trace_identity_gap(es):
    for lam in (-1.0, -5.0):
        assert trace_diff_check(es, 0.0, np.pi / 4, lam).gap < 1e-6


def test_pole_guard(es):
    with pytest.raises(PoleProximityError):
        scattering_T(es, 0.0, es.lam[0] * (1 + 1e-8))
    # guard=0 disables the check
    assert np.isfinite(scattering_T(es, 0.0, es.lam[0] * (1 + 1e-4), guard=0.0).T)


def test_kernel_and_cutoff_errors():
    with pytest.raises(DomainError):
        scattering_T(torus_spin_spectrum(1j, (1, 1), 2e3, validate=False), 0.0, -1.0)
    with pytest.raises(ConvergenceError):
        scattering_T(torus_spin_spectrum(1j, SPIN, 2e3, validate=False), 0.0, -1.0)
    with pytest.raises(ValueError):
        scattering_T(torus_spin_spectrum(1j, SPIN, 2e5, validate=False), 0.0, -1.0, method="other")


# --------------------------------------------------------------------- pseudo-spectrum


@pytest.mark.parametrize("alpha", [np.pi / 4, -np.pi / 4, 1.3])
def test_pseudo_spectrum_interlaces(es, alpha):
    ps = pseudo_spectrum(es, 0.0, alpha, count=50)
    assert ps.eigenvalues.size == 50
    assert ps.interlaces(es.lam, tol=1e-9)
    assert ps.n_below == 1
    assert np.all(ps.secular_residuals < 1e-8)
    assert np.all(np.diff(ps.eigenvalues) >= 0)


def test_pseudo_spectrum_roots_solve_secular_equation(es):
    alpha = np.pi / 4
    ps = pseudo_spectrum(es, 0.0, alpha, count=12)
    c = 1 / np.tan(alpha)
    perturbed = [mu for mu in ps.eigenvalues if np.min(np.abs(es.lam - mu)) > 1e-9 * mu]
    for mu in perturbed:
        assert scattering_T(es, 0.0, mu, "weyl", guard=0.0).T == pytest.approx(c, abs=1e-6)


def test_pseudo_spectrum_keeps_degenerate_copies(es):
    # lambda_1 of the (-,-) square torus is 4-fold; three copies survive
    ps = pseudo_spectrum(es, 0.0, np.pi / 4, count=8)
    lam1 = es.lam[0]
    assert np.sum(np.isclose(ps.eigenvalues, lam1, rtol=1e-12)) == 3
    assert 0 < ps.eigenvalues[0] < lam1


def test_pseudo_spectrum_negative_alpha_has_negative_bottom_root(es):
    ps = pseudo_spectrum(es, 0.0, -np.pi / 4, count=5)
    assert ps.eigenvalues[0] < 0
    assert scattering_T(es, 0.0, ps.eigenvalues[0]).T == pytest.approx(-1.0, abs=1e-9)


def test_pseudo_spectrum_rejects_friedrichs(es):
    with pytest.raises(DomainError):
        pseudo_spectrum(es, 0.0, 0.0)


# --------------------------------------------------------------------- asymptotics


def test_fay_fit_recovers_constants(es, m):
    curve = scattering_curve(es, -np.logspace(2, 5, 40))
    fit = fay_fit(curve, m_ref=m)
    assert fit.a0_est == pytest.approx(A0_THEORY, abs=1e-3)
    assert fit.m_est == pytest.approx(m, abs=1e-3)
    assert fit.a_m1_est == pytest.approx(1.0, abs=1e-2)
    assert fit.residual < 1e-6


def test_fay_fit_rejects_bad_curve(es):
    curve = scattering_curve(es, -np.logspace(2, 5, 20))
    curve.T[5] += 1e-3
    with pytest.raises(ConvergenceError):
        fay_fit(curve)


# --------------------------------------------------------------------- determinants


@pytest.mark.parametrize("alpha", [-np.pi / 4, -1.2, -0.3])
def test_contour_matches_closed_form(es, m, alpha):
    target = np.log(det_ratio(alpha))
    vals = [det_ratio_contour(es, 0.0, alpha, eps, m=m).value for eps in (0.5, 1.0, 2.0, 5.0)]
    assert np.ptp(vals) < 1e-8
    assert np.max(np.abs(np.array(vals) - target)) < 1e-6


def test_contour_branch_error(es, m):
    with pytest.raises(BranchError):
        det_ratio_contour(es, 0.0, np.pi / 4, 1.0, m=m)
    with pytest.raises(DomainError):
        det_ratio_contour(es, 0.0, 0.0, 1.0, m=m)


def test_det_ratio_closed_form():
    assert det_ratio(-np.pi / 4) == pytest.approx(4 * np.pi * np.exp(EULER_GAMMA))
    assert det_ratio(np.pi / 2) == 0.0
    with pytest.raises(DomainError):
        det_ratio(0.0)


@settings(max_examples=30, deadline=None)
@given(st.floats(-1.5, 1.5).filter(lambda a: abs(a) > 1e-3), st.floats(-0.5, 0.5), st.floats(0.2, 5.0))
def test_alpha_beta_round_trip(alpha, m, rho):
    beta = alpha_beta_convert(m, rho, alpha=alpha)
    back = alpha_beta_convert(m, rho, beta=beta)
    assert 1 / np.tan(back) == pytest.approx(1 / np.tan(alpha), rel=1e-9, abs=1e-9)
    assert det_ratio_beta(beta, m, rho) == pytest.approx(det_ratio(alpha), rel=1e-8, abs=1e-8)


def test_alpha_beta_requires_exactly_one():
    with pytest.raises(ValueError):
        alpha_beta_convert(0.1, 1.0)
    with pytest.raises(ValueError):
        alpha_beta_convert(0.1, 1.0, alpha=0.2, beta=0.3)
