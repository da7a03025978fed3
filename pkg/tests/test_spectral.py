import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robinmass.errors import ConvergenceError, DomainError, TruncationError
from robinmass.geometry import BundleSpec, SurfaceSpec, log_rho
from robinmass.special_fn import EULER_GAMMA, dedekind_eta, theta1, theta1_deriv0
from robinmass.spectral import (
    export_csv,
    galerkin_build,
    galerkin_eigenvalues,
    galerkin_green,
    galerkin_robin,
    spectral_green,
    spectral_robin,
    torus_spin_spectrum,
    validate_modes,
    zeta_direct,
    zeta_mellin,
    zeta_reg1,
)

SPINS = [(1, 1), (1, -1), (-1, 1), (-1, -1)]
CATALAN = 0.915965594177219015054603514932


def G0(z, tau):
    return -np.log(np.abs(theta1(z, tau) / theta1_deriv0(tau))) / (2 * np.pi) + np.imag(z) ** 2 / (2 * tau.imag)


def spin_green_images(spin, z, tau):
    """Spin Green functions as image sums of the scalar closed form."""
    if spin == (1, 1):
        return G0(z, tau) - np.log(2 * np.pi * abs(dedekind_eta(tau)) ** 2) / (2 * np.pi)
    if spin == (1, -1):
        return G0(z, 2 * tau) - G0(z - tau, 2 * tau)
    if spin == (-1, 1):
        return G0(z / 2, tau / 2) - G0((z - 1) / 2, tau / 2)
    return G0(z / 2, tau) - G0((z - 1) / 2, tau) - G0((z - tau) / 2, tau) + G0((z - 1 - tau) / 2, tau)


def brute_force_eigenvalues(tau, spin, cutoff):
    d1 = 0.5 if spin[0] < 0 else 0.0
    d2 = 0.5 if spin[1] < 0 else 0.0
    out = []
    for p in np.arange(-40, 41) + d1:
        for q in np.arange(-80, 81) + d2:
            lam = (2 * np.pi) ** 2 * (p**2 + (q - p * tau.real) ** 2 / tau.imag**2)
            if lam <= cutoff:
                out.append(lam)
    return np.sort(out)


@pytest.mark.parametrize("spin", SPINS)
def test_enumeration_matches_brute_force(spin):
    tau = 0.3 + 1.7j
    es = torus_spin_spectrum(tau, spin, 800.0)
    assert np.allclose(es.lam, brute_force_eigenvalues(tau, spin, 800.0), rtol=1e-13)
    assert es.max_residual < 1e-8
    assert es.has_kernel == (spin == (1, 1))


def test_weyl_count():
    es = torus_spin_spectrum(1j, (-1, -1), 4e4, validate=False)
    weyl = es.area * 4e4 / (4 * np.pi)
    assert abs(es.lam.size - weyl) / weyl < 0.01


def test_truncation_error_when_empty():
    with pytest.raises(TruncationError):
        torus_spin_spectrum(1j, (1, 1), 1.0)


def test_validate_modes_residual():
    es = torus_spin_spectrum(1j, (1, -1), 500.0, validate=False)
    assert validate_modes(es, np.arange(es.lam.size)) < 1e-9


def test_export_csv(tmp_path):
    es = torus_spin_spectrum(1j, (-1, 1), 300.0)
    path = tmp_path / "modes.csv"
    export_csv(es, path)
    rows = list(csv.reader(open(path)))
    assert len(rows) == es.lam.size + 1
    assert float(rows[1][1]) == pytest.approx(es.lam[0])


@pytest.mark.parametrize("tau", [1j, 0.3 + 1.7j])
@pytest.mark.parametrize("spin", SPINS)
def test_spectral_green_matches_image_sums(tau, spin):
    es = torus_spin_spectrum(tau, spin, 3e4, validate=False)
    for x, y in [(0.31 + 0.17j, 0.0), (0.7 + 0.9j, 0.2 + 0.4j)]:
        ref = spin_green_images(spin, x - y, tau)
        g = spectral_green(es, x, y)
        assert abs(g.value - ref) < 1e-10
        assert g.error_estimate < 1e-9


def test_spectral_green_split_independence():
    es = torus_spin_spectrum(1j, (-1, -1), 3e4, validate=False)
    a = spectral_green(es, 0.3 + 0.1j, 0.0, t_schedule=[0.01]).value
    b = spectral_green(es, 0.3 + 0.1j, 0.0, t_schedule=[0.003]).value
    assert abs(a - b) < 1e-12


def test_spectral_green_requires_cutoff():
    es = torus_spin_spectrum(1j, (-1, -1), 200.0, validate=False)
    with pytest.raises(ConvergenceError):
        spectral_green(es, 0.3, 0.0)


@pytest.mark.parametrize("tau", [1j, 0.3 + 1.7j])
def test_spectral_robin_scalar(tau):
    es = torus_spin_spectrum(tau, (1, 1), 3e4, validate=False)
    c = np.log(2 * np.pi * abs(dedekind_eta(tau)) ** 2) / (2 * np.pi)
    assert spectral_robin(es).value == pytest.approx(-c, abs=1e-10)


def test_spectral_robin_matches_green_limit():
    tau = 0.3 + 1.7j
    es = torus_spin_spectrum(tau, (1, -1), 3e4, validate=False)
    r = 1e-4
    near = np.mean([spectral_green(es, r * np.exp(1j * a), 0.0).value.real for a in np.linspace(0, 2 * np.pi, 8, endpoint=False)])
    assert spectral_robin(es).value == pytest.approx(near + np.log(r) / (2 * np.pi), abs=1e-7)


@pytest.mark.parametrize("tau", [1j, 0.3 + 1.7j, -0.2 + 0.8j])
def test_zeta_reg1_kronecker_limit(tau):
    # Kronecker's first limit formula for the scalar flat torus
    es = torus_spin_spectrum(tau, (1, 1), 2e4, validate=False)
    A = tau.imag
    ref = A / (2 * np.pi) * (EULER_GAMMA - np.log(2) - np.log(2 * np.pi * abs(dedekind_eta(tau)) ** 2))
    z = zeta_reg1(es)
    assert z.value == pytest.approx(ref, abs=1e-12)
    assert z.regularized and z.truncation_error_estimate < 1e-10


def test_zeta2_square_torus_catalan():
    # sum' (m^2+n^2)^-2 = 4 zeta(2) beta(2)
    es = torus_spin_spectrum(1j, (1, 1), 2e4, validate=False)
    ref = 4 * (np.pi**2 / 6) * CATALAN / (4 * np.pi**2) ** 2
    assert zeta_mellin(es, 2).value == pytest.approx(ref, rel=1e-12)
    assert zeta_direct(es, 2).value == pytest.approx(ref, rel=1e-4)


@pytest.mark.parametrize("spin", SPINS)
def test_zeta_direct_vs_mellin(spin):
    es = torus_spin_spectrum(0.3 + 1.7j, spin, 2e5, validate=False)
    for s in (2, 3):
        d, m = zeta_direct(es, s), zeta_mellin(es, s)
        assert abs(d.value - m.value) <= 10 * d.truncation_error_estimate + 1e-12


def test_zeta_domain_errors():
    es = torus_spin_spectrum(1j, (-1, -1), 1e3, validate=False)
    with pytest.raises(DomainError):
        zeta_direct(es, 1.0)
    with pytest.raises(DomainError):
        zeta_mellin(es, 2.5)


@settings(max_examples=10, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(0.7, 2.0))
def test_zeta_reg1_split_independence(a, b):
    es = torus_spin_spectrum(complex(a, b), (-1, 1), 2e4, validate=False)
    z1, z2 = zeta_reg1(es, 2e-3), zeta_reg1(es, 5e-3)
    assert abs(z1.value - z2.value) <= z1.truncation_error_estimate + z2.truncation_error_estimate + 1e-12


@pytest.mark.parametrize("spin", [(1, 1), (-1, -1)])
def test_galerkin_flat_eigenvalues(spin):
    tau = 0.3 + 1.7j
    b = BundleSpec("TorusSpin", spin)
    op = galerkin_build(SurfaceSpec("FlatTorus", tau), b, 6)
    ev = galerkin_eigenvalues(op)
    es = torus_spin_spectrum(tau, spin, ev[20] * 1.0001, validate=False)
    assert np.allclose(ev[:20], es.lam[:20], rtol=1e-12, atol=1e-10)


def test_galerkin_metric_perturbation_shift():
    # changing rho alone shifts the Robin mass by -(1/2 pi) log rho(y)
    tau, y = 1j, 0.2 + 0.3j
    s = SurfaceSpec("ConformalTorus", tau, ((1, 2, 0.1, 0.05),))
    op = galerkin_build(s, BundleSpec("TorusSpin", (-1, -1)), 8)
    flat = spin_green_images((-1, -1), 1e-7, tau) + np.log(1e-7) / (2 * np.pi)
    m = galerkin_robin(op, y).value
    assert m - flat == pytest.approx(-float(log_rho(s, np.asarray(y))) / (2 * np.pi), abs=1e-6)


def test_galerkin_green_hermitian():
    # the discrete solution is Hermitian only in the limit; the defect must shrink with K
    b = BundleSpec("TorusSpin", (-1, -1), ((1, 0, 0.1, 0.0), (0, 1, 0.0, 0.05)))
    x, y = 0.3 + 0.6j, 0.7 + 0.1j
    defects = []
    for K in (8, 16):
        op = galerkin_build(SurfaceSpec("FlatTorus", 1j), b, K)
        defects.append(abs(galerkin_green(op, x, y).value - np.conj(galerkin_green(op, y, x).value)))
    assert defects[1] < defects[0] / 3
    assert defects[1] < 2e-7


def test_galerkin_rejects_sphere():
    with pytest.raises(DomainError):
        galerkin_build(SurfaceSpec("RoundSphere"), BundleSpec(), 4)
