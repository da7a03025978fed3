import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robinmass.errors import DomainError, SchemaError
from robinmass.geometry import (
    BundleSpec,
    ChartPoint,
    SurfaceSpec,
    TorusGrid,
    apply_laplacian,
    area,
    canonical_sphere_perturbation,
    fourier_eval,
    gauss_curvature,
    l2_pairing,
    load_specs,
    log_rho,
    sphere_table_eval,
    twist,
)
from robinmass.sphere_harmonics import SHGrid

TORUS_PERT = ((1, 0, 0.1, 0.05), (1, -2, 0.0, 0.04))


def test_surface_validation():
    with pytest.raises(SchemaError):
        SurfaceSpec("FlatTorus")
    with pytest.raises(SchemaError):
        SurfaceSpec("FlatTorus", 0.2 - 1j)
    with pytest.raises(SchemaError):
        SurfaceSpec("Klein", 1j)
    with pytest.raises(SchemaError):
        SurfaceSpec("RoundSphere", 1j)
    with pytest.raises(SchemaError):
        SurfaceSpec("FlatTorus", 1j, TORUS_PERT)
    with pytest.raises(SchemaError):
        SurfaceSpec("ConformalSphere", None, ((1, 2, 0.1),))
    with pytest.raises(SchemaError):
        SurfaceSpec("ConformalTorus", 1j, ((0.5, 0, 0.1, 0.0),))


def test_bundle_validation():
    with pytest.raises(SchemaError):
        BundleSpec("TorusSpin")
    with pytest.raises(SchemaError):
        BundleSpec("TorusSpin", (1, 0))
    with pytest.raises(SchemaError):
        BundleSpec("Trivial", (1, 1))
    with pytest.raises(SchemaError):
        BundleSpec("SphereSpin", None, TORUS_PERT)
    b = BundleSpec("TorusSpin", (-1, 1))
    assert b.shifts == (0.5, 0.0)
    assert BundleSpec().signs == (1, 1)


def test_json_round_trip():
    s = SurfaceSpec("ConformalTorus", 0.3 + 1.7j, TORUS_PERT)
    b = BundleSpec("TorusSpin", (-1, -1), ((0, 1, 0.1, 0.0),))
    text = json.dumps({"surface": s.to_dict(), "bundle": b.to_dict()})
    s2, b2 = load_specs(text)
    assert s2 == s and b2 == b
    s3, _ = load_specs('{"surface": {"kind": "FlatTorus", "tau": {"re": 0.1, "im": 2.0}}}')
    assert s3.tau == 0.1 + 2.0j
    with pytest.raises(SchemaError):
        load_specs('{"surface": {"kind": "FlatTorus", "tau": [0.1, 2.0], "colour": 1}}')
    with pytest.raises(SchemaError):
        load_specs("{not json")


def test_chart_points():
    p = ChartPoint.torus(1.3 + 2.2j, 1j)
    assert p.z == pytest.approx(0.3 + 0.2j)
    assert ChartPoint("SphereStereoDual", 0.5).north() == pytest.approx(2.0)
    assert ChartPoint("SphereStereoDual", 0).north() == complex(np.inf)
    with pytest.raises(DomainError):
        ChartPoint("TorusFundamental", 0.1).north()


def test_fourier_eval_derivatives():
    tau = 0.3 + 1.7j
    z = 0.21 + 0.4j
    h = 1e-5
    f = lambda w: fourier_eval(TORUS_PERT, w, tau)
    fx = (f(z + h) - f(z - h)) / (2 * h)
    fy = (f(z + 1j * h) - f(z - 1j * h)) / (2 * h)
    assert fourier_eval(TORUS_PERT, z, tau, "x") == pytest.approx(fx, rel=1e-8)
    assert fourier_eval(TORUS_PERT, z, tau, "y") == pytest.approx(fy, rel=1e-8)
    assert fourier_eval(TORUS_PERT, z, tau, "dz") == pytest.approx(0.5 * (fx - 1j * fy), rel=1e-8)
    lap = (f(z + h) + f(z - h) + f(z + 1j * h) + f(z - 1j * h) - 4 * f(z)) / h**2
    assert fourier_eval(TORUS_PERT, z, tau, "lap") == pytest.approx(lap, rel=1e-4)


def test_gauss_bonnet_torus():
    s = SurfaceSpec("ConformalTorus", 0.3 + 1.7j, TORUS_PERT)
    g = TorusGrid(s.tau, 64)
    dS = np.exp(-2 * log_rho(s, g.z))
    assert abs(g.integrate(gauss_curvature(s, g.z) * dS)) < 1e-12


def test_gauss_bonnet_sphere():
    s = SurfaceSpec("ConformalSphere", None, canonical_sphere_perturbation())
    g = SHGrid(48, 96)
    P = sphere_table_eval(s.log_rho_perturbation, g.z)
    assert g.integrate(gauss_curvature(s, g.z) * np.exp(-2 * P)) == pytest.approx(4 * np.pi, rel=1e-12)
    assert area(SurfaceSpec("RoundSphere")) == pytest.approx(np.pi)


def test_round_sphere_curvature_from_metric():
    # K = 4 rho^2 d dbar log rho with rho = 1 + |z|^2, by finite differences
    s = SurfaceSpec("ConformalSphere", None, canonical_sphere_perturbation())
    z = 0.4 - 0.3j
    h = 1e-4
    L = lambda w: float(log_rho(s, np.asarray(w)))
    lap = (L(z + h) + L(z - h) + L(z + 1j * h) + L(z - 1j * h) - 4 * L(z)) / h**2
    K = np.exp(2 * L(z)) * lap
    assert gauss_curvature(s, np.asarray(z)) == pytest.approx(K, rel=1e-6)


def test_dual_chart_consistency():
    s = SurfaceSpec("ConformalSphere", None, canonical_sphere_perturbation())
    z = 0.7 + 0.2j
    north = float(log_rho(s, ChartPoint("SphereStereo", z)))
    dual = float(log_rho(s, ChartPoint("SphereStereoDual", 1 / z)))
    # rho'(z') = rho(z) |z'|^2 for the chart change z' = 1/z
    assert dual == pytest.approx(north + np.log(abs(1 / z) ** 2), rel=1e-12)
    K1 = gauss_curvature(s, ChartPoint("SphereStereo", z))
    K2 = gauss_curvature(s, ChartPoint("SphereStereoDual", 1 / z))
    assert K1 == pytest.approx(K2, rel=1e-12)


@pytest.mark.parametrize("spin", [(1, 1), (-1, 1), (1, -1), (-1, -1)])
def test_flat_laplacian_eigen_residual(spin):
    tau = 0.3 + 1.7j
    b = BundleSpec("TorusSpin", spin)
    g = TorusGrid(tau, 32)
    d1, d2 = b.shifts
    p, q = 2 + d1, -1 + d2
    e = np.exp(2j * np.pi * (p * g.uv[0] + q * g.uv[1]))
    kx, ky = 2 * np.pi * p, 2 * np.pi * (q - p * tau.real) / tau.imag
    lap = apply_laplacian(SurfaceSpec("FlatTorus", tau), b, e, g)
    assert np.abs(lap - (kx**2 + ky**2) * e).max() < 1e-9 * (kx**2 + ky**2)


def test_laplacian_rejects_wrong_quasi_periodicity():
    g = TorusGrid(1j, 32)
    periodic = np.exp(2j * np.pi * g.uv[0])
    with pytest.raises(DomainError):
        apply_laplacian(SurfaceSpec("FlatTorus", 1j), BundleSpec("TorusSpin", (-1, 1)), periodic, g)


def test_laplacian_self_adjoint_perturbed():
    s = SurfaceSpec("ConformalTorus", 1j, TORUS_PERT)
    b = BundleSpec("TorusSpin", (-1, -1), ((0, 1, 0.1, 0.0),))
    g = TorusGrid(1j, 32)
    tw = twist(g, b)
    u = tw * np.exp(2j * np.pi * g.uv[0]) * (1 + 0.2 * np.cos(2 * np.pi * g.uv[1]))
    v = tw * (0.5 + np.sin(2 * np.pi * (g.uv[0] + g.uv[1])))
    a = l2_pairing(s, b, g, apply_laplacian(s, b, u, g, None), v)
    c = l2_pairing(s, b, g, u, apply_laplacian(s, b, v, g, None))
    assert a == pytest.approx(c, rel=1e-10)
    assert l2_pairing(s, b, g, apply_laplacian(s, b, u, g, None), u).real > 0


def test_sphere_laplacian_trivial_only():
    s = SurfaceSpec("RoundSphere")
    g = SHGrid(8, 16)
    with pytest.raises(DomainError):
        apply_laplacian(s, BundleSpec("SphereSpin"), np.ones(g.z.shape), g)
    # constants are harmonic
    assert np.abs(apply_laplacian(s, BundleSpec(), np.ones(g.z.shape), g)).max() < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.3), st.floats(-0.3, 0.3))
def test_conformal_torus_area_positive_and_finite(a, b):
    s = SurfaceSpec("ConformalTorus", 1j, ((1, 1, a, b),))
    A = area(s, 32)
    assert np.isfinite(A) and A > 0
    # e^{-2P} >= e^{-2 max P}
    assert A >= np.exp(-2 * np.hypot(a, b)) - 1e-12
