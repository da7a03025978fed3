"""Closed-form Green functions, Szego kernels, the F/Phi decomposition and Robin masses.

Torus spin Green functions are finite image sums of the scalar closed form
G(z|tau) = -(1/2 pi) log|theta1(z|tau)/theta1'(0|tau)| + (Im z)^2/(2 Im tau); they are kept
as term lists (coef, a, b, tau') meaning coef * G(a (z - b) | tau') so that derivatives follow
from one formula.  The closed form G(.|tau) is not orthogonal to constants: its mean over the
torus is c(tau) = (1/2 pi) log(2 pi |eta(tau)|^2) (see ``closed_form_mean``).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConvergenceError, DomainError, SingularityError
from .geometry import (
    BundleSpec,
    ChartPoint,
    SurfaceSpec,
    TorusGrid,
    fourier_eval,
    gauss_curvature,
    log_rho,
    mode_wavevector,
    sphere_table_eval,
)
from .quadrature import SphereQuadrature, TorusQuadrature, torus_min_image
from .special_fn import (
    EULER_GAMMA,
    dedekind_eta,
    theta1,
    theta1_deriv0,
    theta1_logderiv,
    theta_char_genus1,
)
from .sphere_harmonics import SHGrid

METHODS = ("ThetaTable", "NearDiagonalFit", "RegularizedIntegral", "ConformalShift", "SpectralFit")
SPINS = ((1, 1), (1, -1), (-1, 1), (-1, -1))

# even characteristic (a, b) of theta[a, b] for each non-trivial spin structure
SPIN_CHARACTERISTIC = {(-1, -1): (0.0, 0.0), (1, -1): (0.5, 0.0), (-1, 1): (0.0, 0.5)}


@dataclass(frozen=True)
class RobinMass:
    value: float
    point: ChartPoint | None
    method: str
    error_estimate: float = 0.0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown Robin-mass method {self.method!r}")

    def agrees_with(self, other: "RobinMass", slack: float = 1e-12) -> bool:
        return abs(self.value - other.value) <= self.error_estimate + other.error_estimate + slack


def _spin(spin):
    if spin is None or spin == "scalar":
        return (1, 1)
    spin = (int(spin[0]), int(spin[1]))
    if spin not in SPINS:
        raise DomainError(f"spin signs must be +-1, got {spin}")
    return spin


# ----------------------------------------------------------------------------- torus Green


def green_terms(spin, tau: complex):
    """Image-sum representation [(coef, a, b, tau')] of the spin Green function."""
    tau = complex(tau)
    s = _spin(spin)
    if s == (1, 1):
        return [(1.0, 1.0, 0.0, tau)]
    if s == (1, -1):
        return [(1.0, 1.0, 0.0, 2 * tau), (-1.0, 1.0, tau, 2 * tau)]
    if s == (-1, 1):
        return [(1.0, 0.5, 0.0, tau / 2), (-1.0, 0.5, 1.0, tau / 2)]
    return [(1.0, 0.5, 0.0, tau), (-1.0, 0.5, 1.0, tau), (-1.0, 0.5, tau, tau), (1.0, 0.5, 1 + tau, tau)]


def _g_closed(w, tau):
    th = theta1(w, tau)
    if np.any(th == 0):
        raise SingularityError("Green function evaluated on the lattice")
    return -np.log(np.abs(th / theta1_deriv0(tau))) / (2 * np.pi) + np.imag(w) ** 2 / (2 * tau.imag)


def _g_closed_dz(w, tau):
    return -theta1_logderiv(w, tau) / (4 * np.pi) - 1j * np.imag(w) / (2 * tau.imag)


def _check_off_lattice(z, tau):
    d = np.abs(torus_min_image(np.asarray(z, dtype=complex), tau))
    if np.any(d < 1e-14 * max(1.0, abs(tau))):
        raise SingularityError("z lies on the period lattice")


def torus_green(spin, z, tau):
    """Closed-form Green function G_{e1,e2}(z | tau) of the flat torus bundle (z = x - y)."""
    tau = complex(tau)
    _check_off_lattice(z, tau)
    z = np.asarray(z, dtype=complex)
    return sum(c * _g_closed(a * (z - b), tp) for c, a, b, tp in green_terms(spin, tau))


def torus_green_dz(spin, z, tau):
    """d/dz of ``torus_green``."""
    tau = complex(tau)
    _check_off_lattice(z, tau)
    z = np.asarray(z, dtype=complex)
    return sum(c * a * _g_closed_dz(a * (z - b), tp) for c, a, b, tp in green_terms(spin, tau))


def torus_green_printed(spin, z, tau):
    """The explicit theta-quotient forms of the spin Green functions."""
    tau = complex(tau)
    z = np.asarray(z, dtype=complex)
    s = _spin(spin)
    L = lambda x: np.log(np.abs(x)) / (2 * np.pi)
    if s == (1, 1):
        return _g_closed(z, tau)
    if s == (1, -1):
        return L(theta1(z - tau, 2 * tau) / theta1(z, 2 * tau)) + np.imag(2 * z - tau) / 4
    if s == (-1, 1):
        return L(theta1((z - 1) / 2, tau / 2) / theta1(z / 2, tau / 2))
    return L(theta1((z - 1) / 2, tau) * theta1((z - tau) / 2, tau) / (theta1(z / 2, tau) * theta1((z - 1 - tau) / 2, tau)))


def closed_form_mean(tau) -> float:
    """Torus average of G(z | tau): (1/2 pi) log(2 pi |eta(tau)|^2)."""
    return float(np.log(2 * np.pi * abs(dedekind_eta(complex(tau))) ** 2) / (2 * np.pi))


def scalar_torus_green(z, tau):
    """Scalar flat-torus Green function orthogonal to constants."""
    return torus_green((1, 1), z, tau) - closed_form_mean(tau)


def robin_theta_table(spin, tau) -> RobinMass:
    """Robin masses of the flat spin bundles from theta values.

    The (+,+) entry is 0 for the closed form G(z|tau); the Green function orthogonal to
    constants has Robin mass -c(tau) instead (``scalar_robin_mass``).
    """
    tau = complex(tau)
    s = _spin(spin)
    L = lambda x: float(np.log(np.abs(x)) / (2 * np.pi))
    if s == (1, 1):
        val = 0.0
    elif s == (-1, -1):
        val = L(2 * theta1(0.5, tau) * theta1(tau / 2, tau) / (theta1_deriv0(tau) * theta1((1 + tau) / 2, tau)))
    elif s == (1, -1):
        val = L(theta1(tau, 2 * tau) / theta1_deriv0(2 * tau)) - tau.imag / 4
    else:
        val = L(2 * theta1(0.5, tau / 2) / theta1_deriv0(tau / 2))
    return RobinMass(val, ChartPoint("TorusFundamental", 0.0), "ThetaTable", 1e-15)


def scalar_robin_mass(tau, normalization: str = "orthogonal") -> float:
    if normalization == "closed":
        return 0.0
    if normalization == "orthogonal":
        return -closed_form_mean(tau)
    raise ValueError("normalization is 'closed' or 'orthogonal'")


# ----------------------------------------------------------------------------- sphere


def sphere_spinor_green(x):
    """G(x, 0) = (1/4 pi) log(1 + |x|^{-2}) for the spinor bundle of the round sphere."""
    x = np.asarray(x, dtype=complex)
    if np.any(x == 0):
        raise SingularityError("x = 0 is the source point")
    return np.log1p(1.0 / np.abs(x) ** 2) / (4 * np.pi)


def round_sphere_scalar_green(x, y):
    """Scalar Green function of the round sphere orthogonal to constants."""
    d2 = np.abs(np.asarray(x) - np.asarray(y)) ** 2 / ((1 + np.abs(x) ** 2) * (1 + np.abs(y) ** 2))
    if np.any(d2 == 0):
        raise SingularityError("x = y")
    return -(1.0 + np.log(d2)) / (4 * np.pi)


# ----------------------------------------------------------------------------- near-diagonal


def default_radii(r0: float = 0.02, count: int = 6):
    return r0 * 2.0 ** -np.arange(count)


def robin_from_green(sampler: Callable, rho_y: float, h_y: float, y, radii=None, n_angles: int = 16) -> RobinMass:
    """Finite part m(y) of h(y) G(x, y) + (1/2 pi) log|x - y| - (1/2 pi) log rho(y).

    The bracket is averaged over circles |x - y| = r (killing the angular harmonics of
    order < n_angles) and fitted by a polynomial in r^2; the spread between the quadratic
    and linear fits estimates the error.
    """
    yz = y.z if isinstance(y, ChartPoint) else complex(y)
    radii = np.asarray(default_radii() if radii is None else radii, dtype=float)
    ang = np.exp(2j * np.pi * (np.arange(n_angles) + 0.5) / n_angles)
    F = []
    for r in radii:
        g = np.asarray(sampler(yz + r * ang))
        F.append(h_y * np.mean(np.real(g)) + np.log(r) / (2 * np.pi) - np.log(rho_y) / (2 * np.pi))
    F = np.array(F)
    x = radii**2
    fits = []
    for deg in (1, 2):
        if x.size > deg + 1:
            fits.append(np.polynomial.polynomial.polyfit(x, F, deg)[0])
    if len(fits) < 2:
        raise ConvergenceError("need at least four radii")
    err = abs(fits[1] - fits[0])
    if not np.isfinite(fits[1]):
        raise ConvergenceError("near-diagonal fit produced a non-finite value")
    pt = y if isinstance(y, ChartPoint) else None
    return RobinMass(float(fits[1]), pt, "NearDiagonalFit", float(err))


# ----------------------------------------------------------------------------- F and Phi


@dataclass(frozen=True)
class TorusAbelianData:
    """Genus-1 data: holomorphic differential dz, period tau, Abel map x - y."""

    tau: complex

    @property
    def B(self) -> complex:
        return self.tau

    def abel(self, x, y):
        return np.asarray(x) - np.asarray(y)


@dataclass(frozen=True)
class PhiEval:
    x: complex
    y: complex
    value: float


def verlinde_F(x, y, surface: SurfaceSpec):
    """F(x, y): exp(-2 pi (Im(x-y))^2/Im tau) |theta1(x-y)/theta1'(0)|^2 or |x-y|^2."""
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    if surface.is_torus:
        tau = surface.tau
        d = x - y
        E = theta1(d, tau) / theta1_deriv0(tau)
        return np.exp(-2 * np.pi * np.imag(d) ** 2 / tau.imag) * np.abs(E) ** 2
    return np.abs(x - y) ** 2


def phi_values(x, y, surface: SurfaceSpec):
    """Phi(x, y) = -(1/4 pi) log(F(x, y)/(rho(x) rho(y))), vectorized."""
    F = verlinde_F(x, y, surface)
    if np.any(F == 0):
        raise SingularityError("Phi is singular at coincident points")
    return -(np.log(F) - log_rho(surface, np.asarray(x)) - log_rho(surface, np.asarray(y))) / (4 * np.pi)


def phi(x, y, surface: SurfaceSpec) -> PhiEval:
    return PhiEval(complex(x), complex(y), float(phi_values(x, y, surface)))


def phi_dz(y, z, surface: SurfaceSpec):
    """d/dz Phi(y, z)."""
    z = np.asarray(z, dtype=complex)
    if surface.is_torus:
        tau = surface.tau
        d = z - y
        dlr = fourier_eval(surface.log_rho_perturbation, z, tau, "dz") if surface.log_rho_perturbation else 0.0
        return -theta1_logderiv(d, tau) / (4 * np.pi) - 1j * np.imag(d) / (2 * tau.imag) + dlr / (4 * np.pi)
    if surface.log_rho_perturbation:
        raise DomainError("phi_dz is implemented for the round sphere only")
    return -(1.0 / (z - y) - np.conj(z) / (1 + np.abs(z) ** 2)) / (4 * np.pi)


_FD6 = np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90])
_FD2 = np.array([1.0, -2.0, 1.0])
_D1_6 = np.array([-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60])
_D1_2 = np.array([-0.5, 0.0, 0.5])


def fd_laplacian(values, grid: TorusGrid, order: int = 6):
    """Periodic finite-difference Laplacian d_x^2 + d_y^2 on a torus grid (order 2 or 6)."""
    h = 1.0 / grid.n
    second = _FD6 if order == 6 else _FD2
    first = _D1_6 if order == 6 else _D1_2

    def d2(f, ax):
        k = second.size // 2
        return sum(c * np.roll(f, k - j, axis=ax) for j, c in enumerate(second)) / h**2

    def d1(f, ax):
        k = first.size // 2
        return sum(c * np.roll(f, k - j, axis=ax) for j, c in enumerate(first)) / h

    a, b = grid.tau.real, grid.tau.imag
    uu = d2(values, 0)
    vv = d2(values, 1)
    lap = uu * (1 + a**2 / b**2) + vv / b**2
    if a != 0:
        lap = lap - 2 * a / b**2 * d1(d1(values, 0), 1)
    return lap


def laplace_phi_check(x, n: int, surface: SurfaceSpec, order: int = 6, exclusion: float = 0.2):
    """Residual 4 dbar d Phi(x, .) - [K/(4 pi rho^2) + 1/Im tau] on a torus grid.

    Returns (residual field, mask of points used, max residual).  The grid is shifted so
    that x sits at a cell centre; points within ``exclusion`` of x are masked out.
    """
    if not surface.is_torus:
        raise DomainError("use laplace_phi_check_sphere for genus 0")
    tau = surface.tau
    g = TorusGrid(tau, n)
    z = g.z + x + (0.5 + 0.5 * tau) / n
    vals = phi_values(x, z, surface)
    lap = fd_laplacian(vals, g, order)
    rhs = gauss_curvature(surface, z) / (4 * np.pi * np.exp(2 * log_rho(surface, z))) + 1.0 / tau.imag
    res = lap - rhs
    mask = np.abs(torus_min_image(z - x, tau)) > exclusion
    return res, mask, float(np.abs(res[mask]).max())


def laplace_phi_check_sphere(x, n: int, surface: SurfaceSpec, order: int = 6, exclusion: float = 0.2, half_width: float = 1.0):
    """Residual of 4 dbar d Phi(x, .) - K/(4 pi rho^2) on a square chart grid."""
    h = 2 * half_width / n
    s = -half_width + h * (np.arange(n + 1) + 0.5)
    X, Y = np.meshgrid(s, s, indexing="ij")
    z = X + 1j * Y
    vals = phi_values(x, z, surface)
    st = _FD6 if order == 6 else _FD2
    k = st.size // 2
    lap = np.zeros_like(vals)
    for ax in (0, 1):
        lap += sum(c * np.roll(vals, k - j, axis=ax) for j, c in enumerate(st)) / h**2
    rhs = gauss_curvature(surface, z) / (4 * np.pi * np.exp(2 * log_rho(surface, z)))
    res = lap - rhs
    mask = np.zeros(z.shape, dtype=bool)
    mask[k:-k, k:-k] = True
    mask &= np.abs(z - x) > exclusion
    return res, mask, float(np.abs(res[mask]).max())


def phi_integral_identity(x, y, surface: SurfaceSpec, quad: TorusQuadrature | None = None):
    """Both sides of Phi(x,y) = int 4 d_z Phi(x,z) dbar_z Phi(z,y) + int (K/4pi rho^2 + 1/Im tau) Phi(z, y).

    On a flat torus with real Phi, 4 (d Phi)(dbar Phi) = 4 d_z Phi(x, z) conj(d_z Phi(y, z)).
    """
    if not surface.is_flat:
        raise DomainError("implemented for flat tori")
    tau = surface.tau
    quad = quad or TorusQuadrature(tau, 64)
    f1 = lambda z: 4 * phi_dz(x, z, surface) * np.conj(phi_dz(y, z, surface))
    f2 = lambda z: phi_values(z, y, surface) / tau.imag
    rhs = quad.integrate(f1, [x, y]) + quad.integrate(f2, [y])
    return float(phi_values(x, y, surface)), float(np.real(rhs))


# ----------------------------------------------------------------------------- Szego kernel


def szego_torus(spin, x, y, tau):
    """S(x, y) = theta[chi](y-x) theta1'(0) / (theta[chi](0) theta1(y-x)) for an even spin."""
    tau = complex(tau)
    s = _spin(spin)
    if s not in SPIN_CHARACTERISTIC:
        raise DomainError("the (+,+) structure has an odd characteristic: theta[chi](0) = 0")
    a, b = SPIN_CHARACTERISTIC[s]
    w = np.asarray(y, dtype=complex) - np.asarray(x, dtype=complex)
    th = theta1(w, tau)
    if np.any(th == 0):
        raise SingularityError("Szego kernel is singular on the diagonal")
    return theta_char_genus1(a, b, w, tau) * theta1_deriv0(tau) / (theta_char_genus1(a, b, 0.0, tau) * th)


def green_from_szego(spin, x, y, tau, quad: TorusQuadrature | None = None) -> complex:
    """G(x, y) = (1/4 pi^2) int S(x, z) conj(S(y, z)) dA(z) on a flat spin torus (h = 1)."""
    tau = complex(tau)
    quad = quad or TorusQuadrature(tau, 128)
    f = lambda z: szego_torus(spin, x, z, tau) * np.conj(szego_torus(spin, y, z, tau))
    return complex(quad.integrate(f, [x, y])) / (4 * np.pi**2)


# ----------------------------------------------------------------------------- regularized Robin


def robin_regularized(spin, y, tau=None, quad=None) -> RobinMass:
    """Robin mass by the regularized integral of |S|^2 h(y)/h - 16 pi^2 |d Phi|^2 minus the
    curvature-weighted mean of Phi.

    ``spin`` is a torus spin pair (flat torus, h = 1) or 'sphere' (round sphere spinor
    bundle, h = rho).  The two 1/|z-y|^2 singularities cancel and the bounded remainder is
    integrated with polar patches (torus) or geodesic polar coordinates (sphere).
    """
    if spin == "sphere":
        return _robin_regularized_sphere(complex(y), quad)
    tau = complex(tau)
    y = complex(y)
    surface = SurfaceSpec("FlatTorus", tau)
    quad = quad or TorusQuadrature(tau, 64)

    def f(z):
        S = szego_torus(spin, y, z, tau)
        return np.abs(S) ** 2 / (4 * np.pi**2) - 4 * np.abs(phi_dz(y, z, surface)) ** 2

    first = float(np.real(quad.integrate(f, [y])))
    second = float(np.real(quad.integrate(lambda z: phi_values(z, y, surface), [y]))) / tau.imag
    # error estimate: half-resolution rerun
    q2 = TorusQuadrature(tau, max(16, quad.n // 2), quad.n_r, quad.n_theta)
    first2 = float(np.real(q2.integrate(f, [y])))
    val = first - second
    return RobinMass(val, ChartPoint.torus(y, tau), "RegularizedIntegral", abs(first - first2))


def _sphere_regularized_integrand(y: complex):
    surface = SurfaceSpec("RoundSphere")

    def f(z):
        # integrand w.r.t. dA = (1+|z|^2)^2 dS0 (converted by the caller)
        rho_y = 1 + abs(y) ** 2
        rho_z = 1 + np.abs(z) ** 2
        S2 = 1.0 / np.abs(z - y) ** 2
        a = S2 * rho_y / rho_z / (4 * np.pi**2) - 4 * np.abs(phi_dz(y, z, surface)) ** 2
        b = 4.0 / (4 * np.pi * rho_z**2) * phi_values(z, y, surface)
        return a - b

    return f


def _robin_regularized_sphere(y: complex, quad=None) -> RobinMass:
    quad = quad or SphereQuadrature(64, 128)
    f = _sphere_regularized_integrand(y)
    g = lambda z: np.where(np.isfinite(z), f(np.where(np.isfinite(z), z, 0.0)) * (1 + np.abs(np.where(np.isfinite(z), z, 0.0)) ** 2) ** 2, 0.0)
    with np.errstate(invalid="ignore", over="ignore"):
        val = float(np.real(quad.integrate_singular(g, y)))
        coarse = SphereQuadrature(quad.n_r // 2, quad.n_theta // 2)
        val2 = float(np.real(coarse.integrate_singular(g, y)))
    return RobinMass(val, ChartPoint("SphereStereo", y), "RegularizedIntegral", abs(val - val2))


def sphere_radial_reduction(n: int = 64, n_angles: int = 8) -> float:
    """Regularized sphere integrand at y = 0 reduced to a radial integral over r = |z|.

    The integrand is rotation invariant about 0, so its angle average times 2 pi r is
    integrated over r in [0, 1] and, after r -> 1/r, over [1, inf); both with r = s^2
    Gauss-Legendre nodes to absorb the logarithm at r = 0.
    """
    f = _sphere_regularized_integrand(0.0)
    x, w = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (x + 1)
    ws = 0.5 * w
    r = s**2
    dr = 2 * s * ws
    ang = np.exp(2j * np.pi * (np.arange(n_angles) + 0.5) / n_angles)
    inner = np.real(f(r[:, None] * ang[None, :])).mean(axis=1) * 2 * np.pi * r
    # z = 1/r': dA = r'^{-4} dA', radial weight 2 pi r dr = 2 pi r'^{-3} dr'
    outer = np.real(f(ang[None, :] / r[:, None])).mean(axis=1) * 2 * np.pi / r**3
    return float(np.sum(inner * dr) + np.sum(outer * dr))


# ----------------------------------------------------------------------------- conformal shift


def conformal_robin_shift(spin, tau, y, log_rho_ratio=None, log_h_table=(), quad: TorusQuadrature | None = None) -> RobinMass:
    """Robin mass m' of (rho', h') from the flat spin data (rho = h = 1) at y.

    m' - m = (1/2 pi) log(rho/rho') - 4 h'(y) int d_z(1/h') G(y,z) dbar_z G(z,y) dA.
    ``log_rho_ratio`` is a callable z -> log(rho'/rho) (default 0); ``log_h_table`` is a
    torus Fourier table for log h'.
    """
    tau = complex(tau)
    y = complex(y)
    quad = quad or TorusQuadrature(tau, 64)
    base = robin_theta_table(spin, tau).value if _spin(spin) != (1, 1) else scalar_robin_mass(tau)
    log_rho_shift = 0.0 if log_rho_ratio is None else float(log_rho_ratio(np.asarray(y)))
    shift = -log_rho_shift / (2 * np.pi)
    err = 0.0
    if log_h_table:
        if _spin(spin) == (1, 1):
            raise DomainError("the comparison formula needs a bundle without zero modes")
        hy = float(np.exp(fourier_eval(log_h_table, np.asarray(y), tau)))

        def f(z):
            lh = fourier_eval(log_h_table, z, tau)
            d_inv_h = -np.exp(-lh) * fourier_eval(log_h_table, z, tau, "dz")
            G = torus_green(spin, y - z, tau)
            dbarG = np.conj(torus_green_dz(spin, z - y, tau))  # G real
            return d_inv_h * G * dbarG

        I = quad.integrate(f, [y])
        q2 = TorusQuadrature(tau, max(16, quad.n // 2), quad.n_r, quad.n_theta)
        I2 = q2.integrate(f, [y])
        shift += float(np.real(-4 * hy * I))
        err = float(abs(4 * hy * (I - I2)))
    return RobinMass(base + shift, ChartPoint.torus(y, tau), "ConformalShift", err)


# ----------------------------------------------------------------------------- scalar Robin field


def scalar_robin_field(surface: SurfaceSpec, n: int = 64):
    """m^(sc)(x) = A^-2 int int Phi dS dS - 2 A^-1 int Phi(x, y) dS(y) on a grid.

    Torus: the log-singular convolution with G(.|tau) is done exactly in Fourier space on the
    n x n grid.  Sphere: SH grid with nlat = n, using the Legendre expansion of the log
    chordal distance.  Returns (grid, field, mean) with mean the dS-average.
    """
    if surface.is_torus:
        return _scalar_robin_field_torus(surface, n)
    grid = SHGrid(n, 2 * n)
    P = sphere_table_eval(surface.log_rho_perturbation, grid.z) if surface.log_rho_perturbation else np.zeros(grid.z.shape)
    m, mean = sphere_robin_from_logrho(grid, P)
    return grid, m, mean


def _scalar_robin_field_torus(surface: SurfaceSpec, n: int):
    tau = surface.tau
    g = TorusGrid(tau, n)
    lr = np.asarray(log_rho(surface, g.z)) * np.ones(g.z.shape)
    w = np.exp(-2 * lr)
    A = g.integrate(w)
    W = np.fft.fft2(w) / n**2  # w = sum W_k E_k
    k = g.integer_freqs
    kx, ky = mode_wavevector(k[:, None], k[None, :], tau)
    lam = kx**2 + ky**2
    c = closed_form_mean(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        conv_hat = np.where(lam > 0, W / lam, 0.0)
    # int G(x - y) w(y) dA(y) = c A + sum_{k != 0} W_k E_k(x) / lam_k
    conv = c * A + np.real(np.fft.ifft2(conv_hat) * n**2)
    # int Phi(x, y) dS(y) = conv(x) + (A/4pi) log rho(x) + (1/4pi) int log rho dS
    I_lr = g.integrate(lr * w)
    inner = conv + A * lr / (4 * np.pi) + I_lr / (4 * np.pi)
    double = g.integrate(inner * w)
    m = double / A**2 - 2 * inner / A
    return g, m, float(g.integrate(m * w) / A)


def sphere_robin_from_logrho(grid: SHGrid, P: np.ndarray):
    """Scalar Robin field and mean for log rho = log(1+|z|^2) + P on an SH grid.

    With f = e^{-2P} (so dS = f dS0) and L(x) = int log d_c^2(x, y) f(y) dS0(y),
    m(x) = L(x)/(2 pi A) - P(x)/(2 pi) - (1/(4 pi A^2)) int L f dS0.
    """
    f = np.exp(-2 * P)
    A = grid.integrate(f)
    L = log_chordal_potential(grid, f)
    LF = grid.integrate(L * f)
    m = L / (2 * np.pi * A) - P / (2 * np.pi) - LF / (4 * np.pi * A**2)
    mean = grid.integrate(m * f) / A
    return m, float(mean)


def log_chordal_potential(grid: SHGrid, f: np.ndarray) -> np.ndarray:
    """int log sin^2(gamma/2) f(y) dS0(y), using log d^2 = -1 - sum (2l+1)/(l(l+1)) P_l."""
    a = grid.analysis(f)
    ell = grid.ell.astype(float)
    mult = np.zeros_like(ell)
    mult[1:] = -4 * np.pi / (ell[1:] * (ell[1:] + 1))
    mult[0] = 0.0
    mean_part = -np.real(a[0, 0]) * np.sqrt(4 * np.pi)  # -int f dOmega
    return 0.25 * (mean_part + grid.synthesis(a * mult[:, None]))


def laplacian_robin_identity(surface: SurfaceSpec, n: int = 64):
    """Residual of Delta m = -2/A + K/(2 pi) + 2 rho^2 / Im tau (torus) or -2/A + K/(2 pi)."""
    grid, m, _ = scalar_robin_field(surface, n)
    from .geometry import apply_laplacian  # local import to keep the module graph flat

    if surface.is_torus:
        lap = np.real(apply_laplacian(surface, BundleSpec("Trivial"), m, grid, check_tol=None))
        A = grid.integrate(np.exp(-2 * log_rho(surface, grid.z)))
        rhs = -2 / A + gauss_curvature(surface, grid.z) / (2 * np.pi) + 2 * np.exp(2 * log_rho(surface, grid.z)) / surface.tau.imag
    else:
        lap = np.real(apply_laplacian(surface, BundleSpec("Trivial"), m, grid, check_tol=None))
        P = sphere_table_eval(surface.log_rho_perturbation, grid.z) if surface.log_rho_perturbation else 0.0
        A = grid.integrate(np.exp(-2 * P) * np.ones(grid.z.shape))
        rhs = -2 / A + gauss_curvature(surface, grid.z) / (2 * np.pi)
    res = lap - rhs
    return res, float(np.abs(res).max())


def laplacian_robin_identity_fd(surface: SurfaceSpec, n: int, order: int = 2):
    """Same identity with a finite-difference Laplacian (torus), for convergence-order tests."""
    if not surface.is_torus:
        raise DomainError("finite-difference variant is for tori")
    grid, m, _ = scalar_robin_field(surface, n)
    lr = log_rho(surface, grid.z)
    lap = -np.exp(2 * lr) * fd_laplacian(m, grid, order)
    A = grid.integrate(np.exp(-2 * lr))
    rhs = -2 / A + gauss_curvature(surface, grid.z) / (2 * np.pi) + 2 * np.exp(2 * lr) / surface.tau.imag
    return float(np.abs(lap - rhs).max())
