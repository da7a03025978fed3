"""Scattering coefficient, pseudo-laplacian spectra, Fay-asymptotics fits and the
epsilon-contour functional for the determinant ratio, on flat torus spin bundles.

For a flat torus h |phi_k(y)|^2 = 1/A, so every quantity is independent of the point y.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .errors import BranchError, ConvergenceError, DomainError, PoleProximityError
from .quadrature import shortest_lattice_vector
from .special_fn import EULER_GAMMA, ein
from .spectral import EigenSystem, spectral_robin

A0_THEORY = 2 * (np.log(2) - EULER_GAMMA)
GUARD = 1e-6

_ein = np.vectorize(ein, otypes=[float])


class TValue(NamedTuple):
    T: float
    dT: float


def _check_es(es: EigenSystem):
    if es.has_kernel:
        raise DomainError("the scattering coefficient needs Ker Delta = {0}")


def _check_pole(es: EigenSystem, lam: float, guard: float = GUARD):
    lk = es.lam
    j = np.searchsorted(lk, lam)
    for i in (j - 1, j):
        if 0 <= i < lk.size and abs(lam - lk[i]) <= guard * lk[i]:
            raise PoleProximityError(f"lambda = {lam} is within the guard band of eigenvalue {lk[i]}")


def ewald_time(es: EigenSystem) -> float:
    """Split time: short enough that non-trivial heat images are below e^-40."""
    return shortest_lattice_vector(es.tau) ** 2 / 160.0


def scattering_T(es: EigenSystem, y=None, lam: float = 0.0, method: str = "ewald", guard: float = GUARD) -> TValue:
    """T(lambda) = h(y) [R_lambda - G](y, y) and its lambda-derivative.

    method 'ewald': exact split  (1/A) sum [e^{-(l_k - lam)t}/(l_k - lam) - e^{-l_k t}/l_k]
                    - (1/4 pi) Ein(-lam t)   (requires cutoff * t >> 1).
    method 'weyl':  truncated eigen-sum plus the Weyl tail (1/4 pi) log(L/(L - lam)),
                    L = 4 pi N / A.
    """
    _check_es(es)
    lam = float(lam)
    _check_pole(es, lam, guard)
    A = es.area
    lk = es.lam
    if method == "weyl":
        L = es.effective_cutoff()
        if lam >= L:
            raise DomainError("lambda beyond the enumerated spectrum")
        T = np.sum(lam / (lk * (lk - lam))) / A + np.log(L / (L - lam)) / (4 * np.pi)
        dT = np.sum(1.0 / (lk - lam) ** 2) / A + 1.0 / (4 * np.pi * (L - lam))
        return TValue(float(T), float(dT))
    if method != "ewald":
        raise ValueError("method is 'ewald' or 'weyl'")
    t = ewald_time(es)
    if (es.cutoff - max(lam, 0.0)) * t < 40:
        raise ConvergenceError("cutoff too small for the Ewald split; raise it")
    d = lk - lam
    e = np.exp(-d * t)
    T = np.sum(e / d - np.exp(-lk * t) / lk) / A - _ein(-lam * t) / (4 * np.pi)
    short_d = t / (4 * np.pi) if lam == 0 else -(1 - np.exp(lam * t)) / (4 * np.pi * lam)
    dT = np.sum(e * (t / d + 1.0 / d**2)) / A + short_d
    return TValue(float(T), float(dT))


@dataclass
class ScatteringCurve:
    es: EigenSystem
    y: complex
    lam: np.ndarray
    T: np.ndarray
    dT: np.ndarray
    tail_correction: str


def scattering_curve(es: EigenSystem, lams, y=0.0, method: str = "ewald") -> ScatteringCurve:
    vals = [scattering_T(es, y, l, method) for l in lams]
    return ScatteringCurve(es, complex(y), np.asarray(lams, dtype=float), np.array([v.T for v in vals]), np.array([v.dT for v in vals]), method)


# ----------------------------------------------------------------------------- trace identity


class TraceCheck(NamedTuple):
    lhs: float
    rhs: float
    gap: float


def trace_diff_check(es: EigenSystem, y, alpha: float, lam: float) -> TraceCheck:
    """lhs: h(y) (R_lam, R_conj(lam))/(ctg a - T) by eigen-sum with Weyl tail;
    rhs: -d/dlam log(ctg a - T) from the Ewald T and dT.  gap is relative."""
    c = 1.0 / np.tan(alpha)
    w = scattering_T(es, y, lam, "weyl")
    lhs = w.dT / (c - w.T)
    e = scattering_T(es, y, lam, "ewald")
    rhs = e.dT / (c - e.T)
    return TraceCheck(float(lhs), float(rhs), float(abs(lhs - rhs) / max(abs(rhs), 1e-300)))


# ----------------------------------------------------------------------------- pseudo spectrum


@dataclass
class PseudoSpectrum:
    alpha: float
    eigenvalues: np.ndarray
    secular_residuals: np.ndarray
    n_below: int

    def interlaces(self, lam: np.ndarray, tol: float = 0.0) -> bool:
        n = min(self.eigenvalues.size, lam.size)
        mu = self.eigenvalues
        ok = all(mu[j] <= lam[j] + tol for j in range(n))
        ok &= all(lam[j] <= mu[j + 1] + tol for j in range(min(n, mu.size - 1)))
        return bool(ok)


def _distinct(lam: np.ndarray, rtol: float = 1e-12):
    vals, mult = [], []
    for l in lam:
        if vals and abs(l - vals[-1]) <= rtol * max(1.0, l):
            mult[-1] += 1
        else:
            vals.append(l)
            mult.append(1)
    return np.array(vals), np.array(mult)


def pseudo_spectrum(es: EigenSystem, y, alpha: float, count: int = 50) -> PseudoSpectrum:
    """First ``count`` eigenvalues of the pseudo-laplacian: roots of T(lam) = ctg(alpha).

    One root per gap between distinct eigenvalues, (d - 1) copies of each d-fold eigenvalue
    (eigenfunctions vanishing at y), and one root below the spectrum.  Residuals are
    |T - ctg alpha| evaluated with an independent Ewald split time.
    """
    if alpha == 0:
        raise DomainError("alpha = 0 is the unperturbed operator")
    _check_es(es)
    c = 0.0 if np.isclose(alpha, np.pi / 2) else 1.0 / np.tan(alpha)
    vals, mult = _distinct(es.lam)
    f = lambda l: scattering_T(es, y, l, guard=0.0).T - c
    roots = []
    # below the spectrum: T -> -inf as lam -> -inf
    hi = vals[0] * (1 - 1e-12)
    lo = min(-1.0, -abs(vals[0]))
    while f(lo) > 0:
        lo *= 10
        if lo < -1e14:
            raise ConvergenceError("bottom root not bracketed")
    roots.append(brentq(f, lo, hi, xtol=1e-14, rtol=1e-15, maxiter=500))
    j = 0
    while len(roots) < count and j + 1 < vals.size:
        roots.extend([vals[j]] * (mult[j] - 1))
        a, b = vals[j], vals[j + 1]
        span = b - a
        lo, hi = a + 1e-12 * span, b - 1e-12 * span
        if f(lo) > 0 or f(hi) < 0:
            raise ConvergenceError(f"root not bracketed in ({a}, {b})")
        roots.append(brentq(f, lo, hi, xtol=1e-14 * max(1.0, a), rtol=1e-15, maxiter=500))
        j += 1
    roots = np.array(sorted(roots)[:count])
    if roots.size < count:
        raise ConvergenceError("cutoff too small for the requested number of pseudo-eigenvalues")
    res = []
    for r in roots:
        if np.any(np.abs(es.lam - r) <= 1e-12 * max(1.0, r)):
            res.append(0.0)  # unperturbed eigenvalue (multiplicity reduction)
        else:
            res.append(abs(_T_alt(es, r) - c))
    return PseudoSpectrum(float(alpha), roots, np.array(res), int(np.sum(roots < es.lam[0])))


def _T_alt(es: EigenSystem, lam: float) -> float:
    """Ewald T with half the default split time (independent truncation)."""
    t = ewald_time(es) / 2
    lk = es.lam
    d = lk - lam
    return float(np.sum(np.exp(-d * t) / d - np.exp(-lk * t) / lk) / es.area - ein(-lam * t) / (4 * np.pi))


# ----------------------------------------------------------------------------- Fay fit


@dataclass
class FayFit:
    m_est: float
    a0_est: float
    a_m1_est: float
    constant: float  # a0/(4 pi) - m, the identifiable combination
    residual: float


def fay_fit(curve: ScatteringCurve, m_ref: float | None = None, a0_ref: float = A0_THEORY, tol: float = 1e-6, order: int = 4) -> FayFit:
    """Least squares fit of 4 pi T + log(|lam|+1) = 4 pi C + a_{-1} x + sum_{j=2..order} b_j x^j,
    x = 1/(|lam|+1).

    Only C = a0/(4 pi) - m is identifiable; m is reported with a0 fixed at ``a0_ref`` and a0
    with m fixed at ``m_ref`` (default: the spectral Robin mass of the curve's system).
    """
    lam = curve.lam
    if np.any(lam >= 0):
        raise DomainError("fit samples must have lam < 0")
    x = 1.0 / (np.abs(lam) + 1)
    yv = 4 * np.pi * curve.T + np.log(np.abs(lam) + 1)
    M = np.stack([x**j for j in range(order + 1)], axis=1)
    coef, *_ = np.linalg.lstsq(M, yv, rcond=None)
    resid = float(np.abs(M @ coef - yv).max() / (4 * np.pi))
    if resid > tol:
        raise ConvergenceError(f"Fay fit residual {resid:.2e}: truncation cutoff too low")
    C = coef[0] / (4 * np.pi)
    m_ref = spectral_robin(curve.es).value if m_ref is None else m_ref
    return FayFit(float(a0_ref / (4 * np.pi) - C), float(4 * np.pi * (C + m_ref)), float(coef[1]), float(C), resid)


# ----------------------------------------------------------------------------- contour functional


@dataclass
class ContourFunctional:
    alpha: float
    epsilon: float
    value: float
    components: dict = field(default_factory=dict)


def det_ratio_contour(es: EigenSystem, y, alpha: float, epsilon: float, m: float | None = None, a_m1: float = 1.0) -> ContourFunctional:
    """log(-(log eps + q)) + gamma + int_{-inf}^{-eps} qt(mu) dmu + log[(ctg a - T(0))/(ctg a - T(-eps))]

    with q = 4 pi (m + ctg a) - a0 and qt = d/dmu log(ctg a - T) + 1/(|mu| (q + log|mu|)).
    In s = log|mu| the integrand has simple poles at s = -q and at the bottom root of
    T = ctg a; both are removed analytically (principal value) before quadrature, and the
    tail beyond s_max uses the Fay model with coefficient ``a_m1``.
    """
    if alpha == 0:
        raise DomainError("alpha = 0 (Friedrichs) has no log-regularized ratio")
    _check_es(es)
    c = 1.0 / np.tan(alpha)
    m = spectral_robin(es).value if m is None else m
    qq = 4 * np.pi * (m + c) - A0_THEORY
    s0 = np.log(epsilon)
    if s0 + qq >= 0:
        raise BranchError("log(-(log eps + q)) is complex: positive-ratio branch only (alpha < 0)")
    T = lambda s: scattering_T(es, y, -np.exp(s))
    f = lambda s: c - T(s).T
    s_a = -qq
    # bottom root of ctg a = T(mu) on the ray, if it lies beyond -eps
    s_star = None
    if f(s0) < 0:
        hi = s0 + 1.0
        while f(hi) < 0:
            hi += 2.0
        s_star = brentq(f, s0, hi, xtol=1e-13)
    s_max = max(s_a, s_star or s0) + 8.0

    def Q(s):
        tv = T(s)
        return -np.exp(s) * tv.dT / (c - tv.T) + 1.0 / (s + qq)

    def R(s):
        r = 1.0 / (s - s_a)
        if s_star is not None:
            r -= 1.0 / (s - s_star)
        return r

    smooth = lambda s: Q(s) - R(s)
    pts = sorted(p for p in (s_a, s_star) if p is not None and s0 < p < s_max)
    edges = [s0] + pts + [s_max]
    xg, wg = np.polynomial.legendre.leggauss(24)
    num = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        if b - a < 1e-6:
            # between nearly coincident poles: Q - R is bounded but cannot be evaluated there
            continue
        cuts = np.linspace(a, b, int(np.ceil(b - a)) + 1)
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            h = 0.5 * (hi - lo)
            num += h * sum(w * smooth(lo + h * (1 + x)) for x, w in zip(xg, wg))
    analytic = np.log(abs(s_max - s_a)) - np.log(abs(s0 - s_a))
    if s_star is not None:
        analytic -= np.log(abs(s_max - s_star)) - np.log(abs(s0 - s_star))
    tail = -a_m1 * np.exp(-s_max) / (s_max + qq)
    integral = num + analytic + tail
    log_term = np.log(-(s0 + qq))
    ratio = np.log(abs((c - 0.0) / f(s0)))
    value = log_term + EULER_GAMMA + integral + ratio
    comps = {"log_term": float(log_term), "gamma": EULER_GAMMA, "tail_integral": float(integral), "T_ratio_log": float(ratio), "q": float(qq), "s_star": s_star}
    return ContourFunctional(float(alpha), float(epsilon), float(value), comps)


def det_ratio(alpha: float) -> float:
    """det^(r) Delta_alpha / det Delta = -4 pi e^gamma ctg alpha."""
    if alpha == 0:
        raise DomainError("alpha = 0 is the Friedrichs extension itself")
    c = 0.0 if np.isclose(alpha, np.pi / 2) else 1.0 / np.tan(alpha)
    return float(-4 * np.pi * np.exp(EULER_GAMMA) * c)


def _arccot(c: float) -> float:
    return np.pi / 2 if c == 0 else float(np.arctan(1.0 / c))


def alpha_beta_convert(m: float, rho_at_P: float, alpha: float | None = None, beta: float | None = None) -> float:
    """ctg beta = ctg alpha + m(P) + (1/2 pi) log rho(P); give exactly one of alpha, beta."""
    if (alpha is None) == (beta is None):
        raise ValueError("give exactly one of alpha and beta")
    shift = m + np.log(rho_at_P) / (2 * np.pi)
    if alpha is not None:
        c = 0.0 if np.isclose(alpha, np.pi / 2) else 1.0 / np.tan(alpha)
        return _arccot(c + shift)
    c = 0.0 if np.isclose(beta, np.pi / 2) else 1.0 / np.tan(beta)
    return _arccot(c - shift)


def det_ratio_beta(beta: float, m: float, rho_at_P: float) -> float:
    """Coordinate-dependent form -4 pi e^gamma (ctg beta - m - (1/2 pi) log rho(P))."""
    c = 0.0 if np.isclose(beta, np.pi / 2) else 1.0 / np.tan(beta)
    return float(-4 * np.pi * np.exp(EULER_GAMMA) * (c - m - np.log(rho_at_P) / (2 * np.pi)))
