"""Flat-torus spin spectra, Ewald-split Green functions and spectral zeta values, and a
Fourier-Galerkin oracle for conformally perturbed tori.

Conventions
-----------
Modes on C/(Z + tau Z) with f(z+1) = e1 f, f(z+tau) = e2 f are
    e_k(z) = exp(2 pi i (p u + q v)) / sqrt(A),  z = u + v tau,  p in Z + d1, q in Z + d2,
with d = 1/2 for an antiperiodic direction and A = Im tau.  The eigenvalue of
Delta = -4 d dbar is |k|^2 = kx^2 + ky^2 (see ``geometry.mode_wavevector``).
Green kernels are taken with respect to h rho^{-2} dA, so that
h(y) G(x, y) = -(1/2 pi) log|x - y| + O(1).  On the trivial bundle G is orthogonal to
constants.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np
import scipy.linalg
from scipy.special import exp1, expn, gammaincc, gamma

from .errors import ConvergenceError, DomainError, SingularityError, TruncationError
from .geometry import (
    BundleSpec,
    ChartPoint,
    SurfaceSpec,
    TorusGrid,
    apply_laplacian,
    fourier_eval,
    log_rho,
    mode_wavevector,
)
from .quadrature import torus_uv
from .special_fn import EULER_GAMMA

RESIDUAL_TOL = 1e-8
N_GRID_VALIDATED = 256


def spin_bundle(spin) -> BundleSpec:
    """BundleSpec for a torus spin pair; (1, 1) and 'scalar' give the trivial bundle."""
    if spin is None or spin == "scalar" or tuple(spin) == (1, 1):
        return BundleSpec("Trivial")
    return BundleSpec("TorusSpin", tuple(spin))


def _as_z(p):
    return p.z if isinstance(p, ChartPoint) else complex(p)


# ----------------------------------------------------------------------------- spectrum


@dataclass(frozen=True)
class EigenSystem:
    """Eigenpairs (lam_k, (p_k, q_k)) of a flat torus bundle, sorted by lam, lam <= cutoff."""

    surface: SurfaceSpec
    bundle: BundleSpec
    lam: np.ndarray
    p: np.ndarray
    q: np.ndarray
    cutoff: float
    max_residual: float = 0.0

    @property
    def area(self) -> float:
        return self.surface.tau.imag

    @property
    def tau(self) -> complex:
        return self.surface.tau

    @property
    def weyl_density(self) -> float:
        return self.area / (4 * np.pi)

    @property
    def has_kernel(self) -> bool:
        return bool(self.lam.size) and self.lam[0] == 0.0

    @property
    def signs(self):
        return self.bundle.signs

    @property
    def pairs(self):
        return [(float(l), (float(a), float(b))) for l, a, b in zip(self.lam, self.p, self.q)]

    def positive(self):
        m = self.lam > 0
        return self.lam[m], self.p[m], self.q[m]

    def modes_at(self, z, which=None):
        """Matrix of e_k(z) with shape (n_modes, *z.shape)."""
        p, q = (self.p, self.q) if which is None else (self.p[which], self.q[which])
        u, v = torus_uv(z, self.tau)
        u = np.asarray(u)[None]
        v = np.asarray(v)[None]
        sh = (-1,) + (1,) * (u.ndim - 1)
        return np.exp(2j * np.pi * (p.reshape(sh) * u + q.reshape(sh) * v)) / np.sqrt(self.area)

    def counting(self, lam):
        return np.searchsorted(self.lam, lam, side="right")

    def effective_cutoff(self) -> float:
        """Weyl-matched cutoff 4 pi N / A, which cancels the leading lattice-count error."""
        return 4 * np.pi * self.lam.size / self.area


def _enumerate(tau: complex, shifts, cutoff: float):
    d1, d2 = shifts
    kmax = np.sqrt(cutoff) / (2 * np.pi)
    pmax = int(np.ceil(kmax + 1))
    p = np.arange(-pmax, pmax + 1) + d1
    p = p[np.abs(p) <= kmax + 1e-12]
    ps, qs = [], []
    for pv in p:
        c = pv * tau.real
        w = kmax * tau.imag
        qs_ = np.arange(np.floor(c - w - d2) - 1, np.ceil(c + w - d2) + 2) + d2
        ps.append(np.full(qs_.size, pv))
        qs.append(qs_)
    P = np.concatenate(ps) if ps else np.zeros(0)
    Q = np.concatenate(qs) if qs else np.zeros(0)
    kx, ky = mode_wavevector(P, Q, tau)
    lam = kx**2 + ky**2
    keep = lam <= cutoff
    P, Q, lam = P[keep], Q[keep], lam[keep]
    order = np.lexsort((Q, P, lam))
    return lam[order], P[order], Q[order]


def validate_modes(es: EigenSystem, indices) -> float:
    """Max relative apply_laplacian residual |Delta e - lam e| / max(lam, 1) over modes."""
    indices = np.asarray(indices, dtype=int)
    if indices.size == 0:
        return 0.0
    kmax = int(np.max(np.abs(np.concatenate([es.p[indices], es.q[indices]])))) + 1
    n = 16
    while n < 2 * kmax + 4:
        n *= 2
    grid = TorusGrid(es.tau, n)
    worst = 0.0
    for k in indices:
        f = es.modes_at(grid.z, [k])[0]
        r = apply_laplacian(es.surface, es.bundle, f, grid, check_tol=1e-10)
        worst = max(worst, float(np.abs(r - es.lam[k] * f).max() * np.sqrt(es.area) / max(es.lam[k], 1.0)))
    return worst


def torus_spin_spectrum(tau, spin, cutoff: float, validate: bool = True) -> EigenSystem:
    """All eigenpairs with lam <= cutoff of the flat torus bundle with spin signs ``spin``.

    Up to N_GRID_VALIDATED modes (the lowest half and an even spread of the rest) are
    checked against the grid Laplacian; a residual above RESIDUAL_TOL raises.
    """
    surface = SurfaceSpec("FlatTorus", complex(tau))
    bundle = spin_bundle(spin)
    lam, P, Q = _enumerate(surface.tau, bundle.shifts, float(cutoff))
    if lam.size == 0 or (lam.size == 1 and lam[0] == 0):
        raise TruncationError(f"cutoff {cutoff} is below the first nonzero eigenvalue")
    es = EigenSystem(surface, bundle, lam, P, Q, float(cutoff))
    if validate:
        half = N_GRID_VALIDATED // 2
        idx = np.unique(np.concatenate([np.arange(min(half, lam.size)), np.linspace(0, lam.size - 1, half).astype(int)]))
        res = validate_modes(es, idx)
        if res > RESIDUAL_TOL:
            raise ConvergenceError(f"eigenpair residual {res:.2e} exceeds {RESIDUAL_TOL}")
        es = EigenSystem(surface, bundle, lam, P, Q, float(cutoff), res)
    return es


def export_csv(es: EigenSystem, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "lambda", "p", "q"])
        for i, (l, a, b) in enumerate(zip(es.lam, es.p, es.q)):
            w.writerow([i, repr(float(l)), repr(float(a)), repr(float(b))])


# ----------------------------------------------------------------------------- Ewald sums


def lattice_images(tau: complex, d, radius: float):
    """Lattice vectors w = m + n tau (with m, n) such that |d - w| <= radius for some d."""
    d = np.atleast_1d(np.asarray(d, dtype=complex))
    dmax = float(np.abs(d).max())
    nmax = int(np.ceil((dmax + radius) / tau.imag)) + 1
    out_m, out_n = [], []
    for n in range(-nmax, nmax + 1):
        c = n * tau.real
        mmax = int(np.ceil(dmax + radius + abs(c))) + 1
        m = np.arange(-mmax, mmax + 1)
        out_m.append(m)
        out_n.append(np.full(m.size, n))
    m = np.concatenate(out_m)
    n = np.concatenate(out_n)
    w = m + n * tau
    near = np.abs(w[:, None] - d[None, :]).min(axis=1) <= radius
    return m[near], n[near], w[near]


def _chi(signs, m, n):
    e1, e2 = signs
    return np.where(np.asarray(m) % 2 == 0, 1.0, float(e1)) * np.where(np.asarray(n) % 2 == 0, 1.0, float(e2))


class GreenValue(NamedTuple):
    value: complex
    error_estimate: float


def default_t_schedule(es: EigenSystem):
    lam_min = es.lam[es.lam > 0][0]
    return [0.2 / lam_min, 0.1 / lam_min, 0.05 / lam_min]


def _ewald_green(es: EigenSystem, d, t: float):
    """G at displacement d (array) with heat split time t, plus a tail bound."""
    lam, P, Q = es.positive()
    A = es.area
    u, v = torus_uv(d, es.tau)
    u = np.atleast_1d(u)
    v = np.atleast_1d(v)
    w = np.exp(-lam * t) / lam
    ph = np.exp(2j * np.pi * (np.outer(P, u) + np.outer(Q, v)))
    eig = (w @ ph) / A
    x = 40.0
    mi, ni, om = lattice_images(es.tau, d, np.sqrt(4 * t * x))
    r2 = np.abs(np.atleast_1d(d)[None, :] - om[:, None]) ** 2
    chi = _chi(es.signs, mi, ni)[:, None]
    with np.errstate(divide="ignore"):
        heat = (chi * exp1(r2 / (4 * t))).sum(axis=0) / (4 * np.pi)
    val = eig + heat
    if es.has_kernel:
        val = val - t / A
    tail = exp1(es.cutoff * t) / (4 * np.pi) + np.exp(-x)
    return val, tail


def spectral_green(es: EigenSystem, x, y, t_schedule=None, tol: float = 1e-9) -> GreenValue:
    """Green function G(x, y) by Ewald splitting of the heat-regularized eigen-sum.

    The eigen-series is damped by e^{-lam t} and the removed short-time part is restored
    exactly by the image sum of the flat heat kernel, so the result is independent of t.
    The spread over ``t_schedule`` together with the Weyl tail bound is the error estimate.
    """
    xs, ys = _as_z(x), _as_z(y)
    d = np.asarray(xs - ys, dtype=complex)
    ts = list(t_schedule) if t_schedule is not None else default_t_schedule(es)
    vals, tails = [], []
    for t in ts:
        val, tail = _ewald_green(es, d, t)
        if np.any(~np.isfinite(val)):
            raise SingularityError("x coincides with y modulo the lattice")
        vals.append(val)
        tails.append(tail)
    vals = np.array(vals)
    # the eigen-sum phases are in terms of x - y; multiply back the section phase (none for flat)
    est = float(np.abs(vals - vals[-1]).max() + max(tails))
    if est > tol:
        raise ConvergenceError(f"Ewald estimate {est:.2e} above {tol:.1e}: raise the cutoff")
    out = vals[-1]
    return GreenValue(out[0] if np.ndim(xs - ys) == 0 else out, est)


def spectral_robin(es: EigenSystem, t: float | None = None) -> GreenValue:
    """Robin mass of a flat torus bundle from the Ewald form of G at coincidence."""
    lam, _, _ = es.positive()
    t = t if t is not None else 36.0 / es.cutoff
    A = es.area
    mi, ni, om = lattice_images(es.tau, 0.0, np.sqrt(160 * t))
    nz = om != 0
    heat = (_chi(es.signs, mi[nz], ni[nz]) * exp1(np.abs(om[nz]) ** 2 / (4 * t))).sum() / (4 * np.pi)
    val = np.sum(np.exp(-lam * t) / lam) / A + heat + (np.log(4 * t) - EULER_GAMMA) / (4 * np.pi)
    if es.has_kernel:
        val -= t / A
    return GreenValue(float(val), float(exp1(es.cutoff * t) / (4 * np.pi)))


# ----------------------------------------------------------------------------- zeta


@dataclass(frozen=True)
class ZetaValue:
    s: complex
    value: complex
    regularized: bool
    truncation_error_estimate: float

    def __post_init__(self):
        if self.s == 1 and not self.regularized:
            raise ValueError("zeta at s = 1 is only defined after regularization")


def _zeta_reg1_at(es: EigenSystem, t0: float):
    lam, _, _ = es.positive()
    A = es.area
    mi, ni, om = lattice_images(es.tau, 0.0, np.sqrt(160 * t0))
    nz = om != 0
    img = (_chi(es.signs, mi[nz], ni[nz]) * exp1(np.abs(om[nz]) ** 2 / (4 * t0))).sum()
    val = A / (4 * np.pi) * (EULER_GAMMA + np.log(t0) + img) + np.sum(np.exp(-lam * t0) / lam)
    if es.has_kernel:
        val -= t0
    return val, A / (4 * np.pi) * exp1(es.cutoff * t0)


def zeta_reg1(es: EigenSystem, t0: float | None = None) -> ZetaValue:
    """Finite part at s = 1 of zeta(s) - A/(4 pi (s-1)) (zero modes excluded).

    Mellin split at t0: exact mode sum of the incomplete-gamma part for t > t0 and the
    Poisson image form of the heat trace for t < t0.  Evaluated at two split points; their
    difference plus the Weyl tail bound is the reported error.
    """
    t0 = t0 if t0 is not None else 36.0 / es.cutoff
    v1, tail1 = _zeta_reg1_at(es, t0)
    v2, tail2 = _zeta_reg1_at(es, 1.25 * t0)
    return ZetaValue(1, float(v1), True, float(abs(v1 - v2) + max(tail1, tail2)))


def zeta_direct(es: EigenSystem, s: float) -> ZetaValue:
    """sum lam^{-s} for s > 1 with the Weyl tail (A/4pi) L^{1-s}/(s-1) at L = 4 pi N / A."""
    if s <= 1:
        raise DomainError("direct summation needs s > 1")
    lam, _, _ = es.positive()
    L = es.effective_cutoff()
    tail = es.weyl_density * L ** (1 - s) / (s - 1)
    return ZetaValue(s, float(np.sum(lam ** (-s)) + tail), False, float(tail * np.sqrt(4 * np.pi / (es.area * L))))


def zeta_mellin(es: EigenSystem, s: int, t0: float | None = None) -> ZetaValue:
    """zeta(s) for integer s >= 2 by the same Mellin split as ``zeta_reg1``."""
    if int(s) != s or s < 2:
        raise DomainError("zeta_mellin takes integer s >= 2")
    s = int(s)
    t0 = t0 if t0 is not None else 36.0 / es.cutoff
    lam, _, _ = es.positive()
    A = es.area
    large = np.sum(gammaincc(s, lam * t0) * lam ** (-float(s)))
    mi, ni, om = lattice_images(es.tau, 0.0, np.sqrt(160 * t0))
    nz = om != 0
    a = np.abs(om[nz]) ** 2 / 4
    img = (_chi(es.signs, mi[nz], ni[nz]) * t0 ** (s - 1) * expn(s, a / t0)).sum()
    small = A / (4 * np.pi) * (t0 ** (s - 1) / (s - 1) + img)
    if es.has_kernel:
        small -= t0**s / s
    val = large + small / gamma(s)
    tail = A / (4 * np.pi) * gammaincc(s - 1, es.cutoff * t0) * es.cutoff ** (1 - s) * gamma(s - 1) / gamma(s)
    return ZetaValue(s, float(val), False, float(tail))


# ----------------------------------------------------------------------------- Galerkin


@dataclass
class GalerkinOperator:
    """Dense matrix of the Laplacian in the quasi-periodic Fourier basis |p-d1|,|q-d2| <= K.

    ``stiffness`` is 4 int h dbar(e_k) conj(dbar e_l) dA and ``mass`` is int h rho^{-2} e_k
    conj(e_l) dA, so Delta c = lam c becomes stiffness c = lam mass c.
    """

    surface: SurfaceSpec
    bundle: BundleSpec
    mode_cutoff: int
    P: np.ndarray
    Q: np.ndarray
    fk: np.ndarray  # dbar symbol of each mode
    stiffness: np.ndarray
    mass: np.ndarray
    fft_n: int

    @property
    def tau(self) -> complex:
        return self.surface.tau

    @property
    def area(self) -> float:
        return self.tau.imag

    @cached_property
    def flat_spectrum(self) -> EigenSystem:
        kmax = 2 * np.pi * (self.mode_cutoff + 1) * max(1.0, abs(self.tau)) / self.tau.imag
        return torus_spin_spectrum(self.tau, self.bundle.signs, max(4.0e4, 4 * kmax**2), validate=False)

    @cached_property
    def differences(self):
        dp = np.rint(self.P[:, None] - self.P[None, :]).astype(int)
        dq = np.rint(self.Q[:, None] - self.Q[None, :]).astype(int)
        return dp, dq

    @cached_property
    def weight_coefficients(self):
        s, b = self.surface, self.bundle
        return self.coefficients(lambda z: np.exp(_log_h(s, b, z) - 2 * log_rho(s, z)))

    def coefficients(self, func) -> callable:
        """Fourier coefficients c_n (n integer pairs) of a periodic function of z."""
        g = TorusGrid(self.tau, self.fft_n)
        F = np.fft.fft2(func(g.z)) / self.fft_n**2
        return lambda dp, dq: F[np.rint(dp).astype(int) % self.fft_n, np.rint(dq).astype(int) % self.fft_n]


def _log_h(surface, bundle, z):
    if not bundle.log_h_perturbation:
        return np.zeros(np.shape(z))
    return fourier_eval(bundle.log_h_perturbation, z, surface.tau)


def galerkin_build(surface: SurfaceSpec, bundle: BundleSpec, mode_cutoff: int = 16) -> GalerkinOperator:
    if not surface.is_torus:
        raise DomainError("the Galerkin oracle is implemented for tori only")
    K = int(mode_cutoff)
    d1, d2 = bundle.shifts
    r = np.arange(-K, K + 1)
    P, Q = np.meshgrid(r + d1, r + d2, indexing="ij")
    P, Q = P.ravel(), Q.ravel()
    kx, ky = mode_wavevector(P, Q, surface.tau)
    fk = 0.5j * (kx + 1j * ky)
    n = 16
    while n < 4 * K + 16:
        n *= 2
    op = GalerkinOperator(surface, bundle, K, P, Q, fk, None, None, n)
    hhat = op.coefficients(lambda z: np.exp(_log_h(surface, bundle, z)))
    what = op.weight_coefficients
    dp, dq = op.differences
    # entry [l, k]: mode k tested against mode l
    S = 4 * np.conj(fk)[:, None] * fk[None, :] * hhat(dp, dq)
    M = what(dp, dq)
    op.stiffness = 0.5 * (S + S.conj().T)
    op.mass = 0.5 * (M + M.conj().T)
    return op


def galerkin_eigenvalues(op: GalerkinOperator) -> np.ndarray:
    return scipy.linalg.eigh(op.stiffness, op.mass, eigvals_only=True)


@dataclass(frozen=True)
class GalerkinSolution:
    """G(x, y) = G_flat(x - y)/h(y) + u(x) + const for a fixed source point y."""

    op: GalerkinOperator
    y: complex
    h_y: float
    coeffs: np.ndarray
    const: float

    def smooth_part(self, z):
        return _galerkin_u(self.op, self.coeffs, z) + self.const


def galerkin_solve(op: GalerkinOperator, y, cond_max: float = 1e12) -> GalerkinSolution:
    """Solve for the smooth part of G(., y).

    With q = h/h(y) - 1 (which vanishes at y) the correction u satisfies
    -4 d(h dbar u) = 4 d(q dbar G_flat) on spin bundles, and on the trivial bundle also the
    constant source 1/A - h rho^{-2}/A_w; neither right side has a point singularity.
    """
    y = _as_z(y)
    h_y = float(np.exp(_log_h(op.surface, op.bundle, np.asarray(y))))
    A = op.area
    P, Q, fk = op.P, op.Q, op.fk
    lam = 4 * np.abs(fk) ** 2
    uy, vy = torus_uv(y, op.tau)
    ey = np.exp(2j * np.pi * (P * uy + Q * vy)) / np.sqrt(A)
    pos = lam > 0
    # dbar G_flat = sum g_k e_k decays only like 1/|k|, so project q dbar G_flat using a
    # wider box of g than the trial space
    E = max(op.mode_cutoff, 16)
    d1, d2 = op.bundle.shifts
    r = np.arange(-(op.mode_cutoff + E), op.mode_cutoff + E + 1)
    Pe, Qe = (a.ravel() for a in np.meshgrid(r + d1, r + d2, indexing="ij"))
    kx, ky = mode_wavevector(Pe, Qe, op.tau)
    fe = 0.5j * (kx + 1j * ky)
    le = 4 * np.abs(fe) ** 2
    ge = np.zeros(Pe.size, dtype=complex)
    pe = le > 0
    ge[pe] = fe[pe] * np.exp(-2j * np.pi * (Pe[pe] * uy + Qe[pe] * vy)) / np.sqrt(A) / le[pe]
    n = 16
    while n < 2 * (2 * op.mode_cutoff + E) + 16:
        n *= 2
    grid = TorusGrid(op.tau, n)
    F = np.fft.fft2(np.exp(_log_h(op.surface, op.bundle, grid.z)) / h_y - 1.0) / n**2
    dp = np.rint(P[:, None] - Pe[None, :]).astype(int) % n
    dq = np.rint(Q[:, None] - Qe[None, :]).astype(int) % n
    C = F[dp, dq] @ ge  # q dbar G_flat = sum C_l e_l
    b = -4 * np.conj(fk) * C
    trivial = op.bundle.kind == "Trivial"
    keep = pos if trivial else np.ones(P.size, dtype=bool)
    if trivial:
        A_w = float(np.real(op.weight_coefficients(0, 0))) * A
        b = b - np.sqrt(A) * op.weight_coefficients(P, Q) / A_w
    Sk = op.stiffness[np.ix_(keep, keep)]
    try:
        cf = scipy.linalg.cho_factor(Sk)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceError("Galerkin stiffness is not positive definite") from exc
    d = np.abs(np.diag(cf[0]))
    cond = (d.max() / d.min()) ** 2  # cheap lower estimate of the condition number
    if cond > cond_max:
        raise ConvergenceError(f"Galerkin stiffness condition number >= {cond:.2e}")
    c = np.zeros(P.size, dtype=complex)
    c[keep] = scipy.linalg.cho_solve(cf, b[keep])
    const = 0.0
    if trivial:
        # orthogonality to constants in the h rho^{-2} dA pairing
        w_minus = np.sqrt(A) * op.weight_coefficients(-P, -Q)
        g0 = np.zeros(P.size, dtype=complex)
        g0[pos] = np.conj(ey[pos]) / lam[pos]
        const = -float(np.real((g0 @ w_minus) / h_y + c @ w_minus)) / A_w
    return GalerkinSolution(op, complex(y), h_y, c, const)


def galerkin_green(op: GalerkinOperator, x, y, sol: GalerkinSolution | None = None) -> GreenValue:
    """G(x, y) for the perturbed metric, flat part by the Ewald sum."""
    sol = sol if sol is not None and sol.y == _as_z(y) else galerkin_solve(op, y)
    x = _as_z(x)
    flat = spectral_green(op.flat_spectrum, x, sol.y)
    return GreenValue(flat.value / sol.h_y + complex(sol.smooth_part(np.asarray(x))), flat.error_estimate)


def galerkin_robin(op: GalerkinOperator, y, sol: GalerkinSolution | None = None, estimate_error: bool = True) -> GreenValue:
    """m(y) = m_flat + h(y) (u(y) + const) - (1/2 pi) log rho(y).

    The error estimate is the change against a rerun with half the mode cutoff, which
    bounds the discretization error for the observed algebraic convergence.
    """
    sol = sol if sol is not None and sol.y == _as_z(y) else galerkin_solve(op, y)
    m_flat = spectral_robin(op.flat_spectrum)
    u_y = complex(sol.smooth_part(np.asarray(sol.y)))
    val = m_flat.value + sol.h_y * u_y.real - float(log_rho(op.surface, np.asarray(sol.y))) / (2 * np.pi)
    err = m_flat.error_estimate
    if estimate_error and op.mode_cutoff >= 4:
        half = galerkin_build(op.surface, op.bundle, op.mode_cutoff // 2)
        err = max(err, abs(val - galerkin_robin(half, y, estimate_error=False).value))
    return GreenValue(val, err)


def _galerkin_u(op, c, z):
    u, v = torus_uv(z, op.tau)
    ph = np.exp(2j * np.pi * (np.multiply.outer(np.asarray(u), op.P) + np.multiply.outer(np.asarray(v), op.Q)))
    return ph @ c / np.sqrt(op.area)
