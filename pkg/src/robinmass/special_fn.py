"""Theta functions, the genus-one prime form and the exponential integral.

Conventions
-----------
``theta1(z, tau)`` is the Jacobi function

    theta_1(z|tau) = 2 sum_{n>=0} (-1)^n q^{(n+1/2)^2} sin((2n+1) pi z),   q = exp(i pi tau),

so that theta_1(z+1) = -theta_1(z) and theta_1'(0) = 2 pi eta(tau)^3.

``theta_char`` is the Riemann theta function with real characteristics

    theta[a, b](z|B) = sum_{n in Z^g} exp(i pi (n+a).B.(n+a) + 2 pi i (n+a).(z+b)).

At genus one theta[1/2, 1/2] = -theta_1, theta[1/2, 0] = theta_2, theta[0, 0] = theta_3
and theta[0, 1/2] = theta_4.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expi

from .errors import DomainError, SingularityError, TruncationError

EULER_GAMMA = 0.57721566490153286060651209


@dataclass(frozen=True)
class SeriesControl:
    """Cutoff and tolerance for truncated theta series.

    ``tolerance`` bounds the dropped tail relative to the largest retained term.
    """

    max_index: int = 200
    tolerance: float = 1e-16

    def __post_init__(self):
        if self.max_index < 1:
            raise DomainError("max_index must be >= 1")
        if not self.tolerance > 0:
            raise DomainError("tolerance must be positive")


DEFAULT_CONTROL = SeriesControl()


@dataclass(frozen=True)
class ThetaChar:
    a: tuple
    b: tuple

    def __post_init__(self):
        if len(self.a) != len(self.b) or len(self.a) == 0:
            raise DomainError("characteristic vectors must have equal positive length")

    @property
    def genus(self) -> int:
        return len(self.a)

    @classmethod
    def genus1(cls, a: float, b: float) -> "ThetaChar":
        return cls((float(a),), (float(b),))


def check_modulus(tau) -> complex:
    tau = complex(tau)
    if not tau.imag > 0:
        raise DomainError(f"modulus tau={tau} must have Im(tau) > 0")
    return tau


def _sine_series_terms(im_tau: float, max_abs_imz: float, ctrl: SeriesControl) -> int:
    """Number of terms of the theta_1 sine series meeting ``ctrl``.

    Term n is bounded by exp(-pi Im(tau) (n+1/2)^2 + (2n+1) pi |Im z|).  The log-bound
    is concave in n, so once it decreases the tail is dominated geometrically.
    """
    n = np.arange(ctrl.max_index + 2)
    logb = -np.pi * im_tau * (n + 0.5) ** 2 + (2 * n + 1) * np.pi * max_abs_imz
    peak = logb.max()
    log_tol = np.log(ctrl.tolerance)
    for k in range(1, ctrl.max_index + 1):
        step = logb[k + 1] - logb[k]
        if step < 0 and logb[k] - peak - np.log1p(-np.exp(step)) < log_tol:
            return k
    raise TruncationError(
        f"theta series needs more than max_index={ctrl.max_index} terms "
        f"(Im tau={im_tau:.3g}, |Im z|={max_abs_imz:.3g})"
    )


def _reduce_strip(z, tau):
    """Shift z by multiples of tau so that |Im z| <= Im(tau)/2.

    Returns the reduced argument and the integer shifts k with z = z_red + k tau.
    """
    k = np.round(np.imag(z) / tau.imag)
    return z - k * tau, k


def theta1(z, tau, ctrl: SeriesControl = DEFAULT_CONTROL):
    """Jacobi theta_1(z|tau) for scalar or array ``z``."""
    tau = check_modulus(tau)
    z = np.asarray(z, dtype=complex)
    zr, k = _reduce_strip(z, tau)
    nterms = _sine_series_terms(tau.imag, float(np.max(np.abs(zr.imag), initial=0.0)), ctrl)
    n = np.arange(nterms).reshape((-1,) + (1,) * zr.ndim)
    coef = 2.0 * (-1.0) ** n * np.exp(1j * np.pi * tau * (n + 0.5) ** 2)
    val = np.sum(coef * np.sin((2 * n + 1) * np.pi * zr), axis=0)
    # theta_1(z + k tau) = (-1)^k exp(-i pi k^2 tau - 2 pi i k z) theta_1(z)
    return val * (-1.0) ** k * np.exp(-1j * np.pi * k**2 * tau - 2j * np.pi * k * zr)


def theta1_dz(z, tau, ctrl: SeriesControl = DEFAULT_CONTROL):
    """Holomorphic derivative d/dz theta_1(z|tau) by termwise differentiation."""
    tau = check_modulus(tau)
    z = np.asarray(z, dtype=complex)
    zr, k = _reduce_strip(z, tau)
    nterms = _sine_series_terms(tau.imag, float(np.max(np.abs(zr.imag), initial=0.0)), ctrl) + 1
    n = np.arange(nterms).reshape((-1,) + (1,) * zr.ndim)
    coef = 2.0 * (-1.0) ** n * np.exp(1j * np.pi * tau * (n + 0.5) ** 2)
    arg = (2 * n + 1) * np.pi * zr
    val = np.sum(coef * np.sin(arg), axis=0)
    der = np.sum(coef * (2 * n + 1) * np.pi * np.cos(arg), axis=0)
    fac = (-1.0) ** k * np.exp(-1j * np.pi * k**2 * tau - 2j * np.pi * k * zr)
    return fac * (der - 2j * np.pi * k * val)


def theta1_logderiv(z, tau, ctrl: SeriesControl = DEFAULT_CONTROL):
    """theta_1'(z)/theta_1(z); raises at lattice points."""
    t = theta1(z, tau, ctrl)
    if np.any(t == 0):
        raise SingularityError("theta_1 vanishes at a lattice point")
    return theta1_dz(z, tau, ctrl) / t


def theta1_deriv0(tau, ctrl: SeriesControl = DEFAULT_CONTROL) -> complex:
    """theta_1'(0|tau) = 2 pi sum_n (-1)^n (2n+1) q^{(n+1/2)^2}."""
    tau = check_modulus(tau)
    nterms = _sine_series_terms(tau.imag, 0.0, ctrl) + 1
    n = np.arange(nterms)
    return complex(
        2 * np.pi * np.sum((-1.0) ** n * (2 * n + 1) * np.exp(1j * np.pi * tau * (n + 0.5) ** 2))
    )


def dedekind_eta(tau, ctrl: SeriesControl = DEFAULT_CONTROL) -> complex:
    """eta(tau) from theta_1'(0|tau) = 2 pi eta^3, choosing the branch q^{1/24}(1 - ...)."""
    tau = check_modulus(tau)
    q = np.exp(2j * np.pi * tau)
    prod = 1.0 + 0j
    for n in range(1, ctrl.max_index + 1):
        term = q**n
        prod *= 1 - term
        if abs(term) < ctrl.tolerance:
            return complex(np.exp(1j * np.pi * tau / 12) * prod)
    raise TruncationError("eta product did not converge")


def _check_period_matrix(B) -> np.ndarray:
    B = np.atleast_2d(np.asarray(B, dtype=complex))
    if B.shape[0] != B.shape[1]:
        raise DomainError("period matrix must be square")
    if not np.allclose(B, B.T, atol=1e-13):
        raise DomainError("period matrix must be symmetric")
    ev = np.linalg.eigvalsh(B.imag)
    if ev.min() <= 0:
        raise DomainError("Im(B) must be positive definite")
    return B


def theta_char(char: ThetaChar, z, B, ctrl: SeriesControl = DEFAULT_CONTROL) -> complex:
    """Riemann theta with characteristics as a truncated sum over Z^g.

    The summation box is centred on the maximum of the Gaussian envelope and sized so
    that every dropped term is below ``ctrl.tolerance`` times the peak term.
    """
    B = _check_period_matrix(B)
    g = B.shape[0]
    if char.genus != g:
        raise DomainError("characteristic genus does not match period matrix")
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if z.shape != (g,):
        raise DomainError("z must be a vector of length genus")
    a = np.asarray(char.a, dtype=float)
    b = np.asarray(char.b, dtype=float)
    Y = B.imag
    lam_min = np.linalg.eigvalsh(Y).min()
    centre = -np.linalg.solve(Y, z.imag) - a
    radius = np.sqrt(-np.log(ctrl.tolerance) / (np.pi * lam_min)) + 1.0
    lo = np.floor(centre - radius).astype(int)
    hi = np.ceil(centre + radius).astype(int)
    if np.any(np.maximum(np.abs(lo), np.abs(hi)) > ctrl.max_index):
        raise TruncationError("lattice box exceeds max_index")
    axes = [np.arange(l, h + 1) for l, h in zip(lo, hi)]
    n = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, g) + a
    quad = np.einsum("ki,ij,kj->k", n, B, n)
    lin = n @ (z + b)
    return complex(np.sum(np.exp(1j * np.pi * quad + 2j * np.pi * lin)))


def theta_char_genus1(a: float, b: float, z, tau, ctrl: SeriesControl = DEFAULT_CONTROL):
    """Vectorised genus-one theta[a, b](z|tau)."""
    tau = check_modulus(tau)
    z = np.asarray(z, dtype=complex)
    zr, k = _reduce_strip(z, tau)
    # envelope exp(-pi Im tau (n+a)^2 - 2 pi (n+a) Im z) peaks near n+a = -Im z / Im tau
    radius = np.sqrt(-np.log(ctrl.tolerance) / (np.pi * tau.imag)) + 2.0
    nmax = int(np.ceil(radius + 1))
    if nmax > ctrl.max_index:
        raise TruncationError("theta series needs more terms than max_index")
    n = np.arange(-nmax, nmax + 1).reshape((-1,) + (1,) * zr.ndim) + a
    val = np.sum(np.exp(1j * np.pi * tau * n**2 + 2j * np.pi * n * (zr + b)), axis=0)
    # theta[a,b](z + k tau) = exp(-2 pi i k b - i pi k^2 tau - 2 pi i k z) theta[a,b](z)
    return val * np.exp(-2j * np.pi * k * b - 1j * np.pi * k**2 * tau - 2j * np.pi * k * zr)


def prime_form_torus(x, y, tau, ctrl: SeriesControl = DEFAULT_CONTROL):
    """Genus-one prime form E(x, y) = theta_1(x - y)/theta_1'(0) in the flat coordinate."""
    return theta1(np.asarray(x) - np.asarray(y), tau, ctrl) / theta1_deriv0(tau, ctrl)


def prime_form_sphere(x, y):
    return np.asarray(x, dtype=complex) - np.asarray(y, dtype=complex)


def exp_integral(x: float) -> float:
    """Real exponential integral Ei(x) = PV int_{-inf}^x e^t/t dt (scipy.special.expi)."""
    x = float(x)
    if x == 0.0:
        raise SingularityError("Ei has a logarithmic pole at 0")
    return float(expi(x))


def ein(x: float) -> float:
    """Entire function Ein(x) = int_0^x (1 - e^{-u})/u du."""
    x = float(x)
    if x == 0.0:
        return 0.0
    if abs(x) < 1e-3:
        # 1 - e^{-u} = u - u^2/2 + ...
        return x - x**2 / 4 + x**3 / 18 - x**4 / 96
    return EULER_GAMMA + np.log(abs(x)) - exp_integral(-x)
