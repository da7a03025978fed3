"""Surfaces, line bundles, metrics and a grid Laplacian oracle.

Metrics are conformal, rho^{-2}|dz|^2, in a holomorphic chart.  Tori are C/(Z + tau Z) with
the flat metric |dz|^2 optionally multiplied by a smooth factor; spheres use the stereographic
chart z and the round metric |dz|^2/(1+|z|^2)^2 (radius 1/2, area pi, K = 4).

Perturbation tables
-------------------
torus : rows (p, q, a, b) meaning  a cos(2 pi (p u + q v)) + b sin(2 pi (p u + q v)),
        where z = u + v tau;  log rho (or log h) is the sum of the rows.
sphere: rows (l, m, c) meaning c * Y^R_lm, the real orthonormal unit-sphere harmonic;
        log rho = log(1+|z|^2) + sum of rows.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError, SchemaError
from .quadrature import torus_reduce, torus_uv
from .sphere_harmonics import SHGrid, real_harmonic

SURFACE_KINDS = ("RoundSphere", "ConformalSphere", "FlatTorus", "ConformalTorus")
BUNDLE_KINDS = ("Trivial", "TorusSpin", "SphereSpin")
CHARTS = ("TorusFundamental", "SphereStereo", "SphereStereoDual")


# ----------------------------------------------------------------------------- specs


@dataclass(frozen=True)
class SurfaceSpec:
    kind: str
    tau: complex | None = None
    log_rho_perturbation: tuple = ()

    def __post_init__(self):
        if self.kind not in SURFACE_KINDS:
            raise SchemaError(f"unknown surface kind {self.kind!r}")
        pert = tuple(tuple(float(c) for c in row) for row in self.log_rho_perturbation)
        object.__setattr__(self, "log_rho_perturbation", pert)
        if self.is_torus:
            if self.tau is None:
                raise SchemaError("torus surfaces need a modulus tau")
            tau = complex(self.tau)
            if not np.isfinite(tau) or tau.imag <= 0:
                raise SchemaError(f"modulus must have Im(tau) > 0, got {tau}")
            object.__setattr__(self, "tau", tau)
            _check_rows(pert, 4, integer_cols=2)
        else:
            if self.tau is not None:
                raise SchemaError("sphere surfaces take no modulus")
            _check_rows(pert, 3, integer_cols=2)
            for l, m, _ in pert:
                if l < 1 or abs(m) > l:
                    raise SchemaError(f"invalid harmonic index (l={l}, m={m})")
        if self.kind in ("FlatTorus", "RoundSphere") and pert:
            raise SchemaError(f"{self.kind} takes no perturbation")

    @property
    def is_torus(self) -> bool:
        return self.kind in ("FlatTorus", "ConformalTorus")

    @property
    def is_flat(self) -> bool:
        return self.kind == "FlatTorus" or (self.kind == "ConformalTorus" and not self.log_rho_perturbation)

    @property
    def genus(self) -> int:
        return 1 if self.is_torus else 0

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "log_rho_perturbation": [list(r) for r in self.log_rho_perturbation]}
        if self.tau is not None:
            d["tau"] = [self.tau.real, self.tau.imag]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SurfaceSpec":
        if not isinstance(d, dict) or "kind" not in d:
            raise SchemaError("surface must be an object with a 'kind' field")
        extra = set(d) - {"kind", "tau", "log_rho_perturbation"}
        if extra:
            raise SchemaError(f"unknown surface fields {sorted(extra)}")
        return cls(d["kind"], _parse_complex(d.get("tau")), tuple(d.get("log_rho_perturbation", ())))


@dataclass(frozen=True)
class BundleSpec:
    kind: str = "Trivial"
    spin: tuple | None = None
    log_h_perturbation: tuple = ()

    def __post_init__(self):
        if self.kind not in BUNDLE_KINDS:
            raise SchemaError(f"unknown bundle kind {self.kind!r}")
        if self.kind == "TorusSpin":
            if self.spin is None or len(self.spin) != 2 or any(int(e) not in (1, -1) for e in self.spin):
                raise SchemaError("TorusSpin needs spin = (e1, e2) with entries +1 or -1")
            object.__setattr__(self, "spin", (int(self.spin[0]), int(self.spin[1])))
        elif self.spin is not None:
            raise SchemaError(f"{self.kind} takes no spin signs")
        pert = tuple(tuple(float(c) for c in row) for row in self.log_h_perturbation)
        _check_rows(pert, 4, integer_cols=2)
        if pert and self.kind == "SphereSpin":
            raise SchemaError("perturbed sphere bundles are not supported")
        object.__setattr__(self, "log_h_perturbation", pert)

    @property
    def signs(self) -> tuple:
        return self.spin if self.kind == "TorusSpin" else (1, 1)

    @property
    def shifts(self) -> tuple:
        """Frequency offsets (delta1, delta2): 1/2 for an antiperiodic direction."""
        e1, e2 = self.signs
        return (0.5 if e1 < 0 else 0.0, 0.5 if e2 < 0 else 0.0)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "log_h_perturbation": [list(r) for r in self.log_h_perturbation]}
        if self.spin is not None:
            d["spin"] = list(self.spin)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BundleSpec":
        if not isinstance(d, dict) or "kind" not in d:
            raise SchemaError("bundle must be an object with a 'kind' field")
        extra = set(d) - {"kind", "spin", "log_h_perturbation"}
        if extra:
            raise SchemaError(f"unknown bundle fields {sorted(extra)}")
        spin = d.get("spin")
        return cls(d["kind"], None if spin is None else tuple(spin), tuple(d.get("log_h_perturbation", ())))


@dataclass(frozen=True)
class ChartPoint:
    chart: str
    z: complex

    def __post_init__(self):
        if self.chart not in CHARTS:
            raise SchemaError(f"unknown chart {self.chart!r}")
        object.__setattr__(self, "z", complex(self.z))

    @classmethod
    def torus(cls, z, tau) -> "ChartPoint":
        return cls("TorusFundamental", complex(torus_reduce(z, complex(tau))))

    def north(self) -> complex:
        """Coordinate in the north stereographic chart (sphere points only)."""
        if self.chart == "SphereStereo":
            return self.z
        if self.chart == "SphereStereoDual":
            return complex(np.inf) if self.z == 0 else 1.0 / self.z
        raise DomainError("not a sphere chart point")


def _parse_complex(v):
    if v is None:
        return None
    if isinstance(v, (list, tuple)) and len(v) == 2:
        return complex(float(v[0]), float(v[1]))
    if isinstance(v, dict) and set(v) == {"re", "im"}:
        return complex(float(v["re"]), float(v["im"]))
    if isinstance(v, (int, float)):
        return complex(v)
    raise SchemaError(f"cannot read complex number from {v!r}")


def _check_rows(rows, width, integer_cols):
    for r in rows:
        if len(r) != width:
            raise SchemaError(f"perturbation rows must have {width} entries, got {r}")
        if any(float(c) != int(c) for c in r[:integer_cols]):
            raise SchemaError(f"mode indices must be integers, got {r}")
        if not all(np.isfinite(r)):
            raise SchemaError("perturbation coefficients must be finite")


def load_specs(text: str):
    """Parse {"surface": ..., "bundle": ...} JSON into specs."""
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    surface = SurfaceSpec.from_dict(d.get("surface", {}))
    bundle = BundleSpec.from_dict(d.get("bundle", {"kind": "Trivial"}))
    return surface, bundle


# ----------------------------------------------------------------------------- fourier tables


def mode_wavevector(p, q, tau: complex):
    """(kx, ky) with d/dx -> i kx, d/dy -> i ky acting on exp(2 pi i (p u + q v))."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    return 2 * np.pi * p, 2 * np.pi * (q - p * tau.real) / tau.imag


_SYMBOLS = {
    "": lambda kx, ky: 1.0 + 0.0 * kx,
    "x": lambda kx, ky: 1j * kx,
    "y": lambda kx, ky: 1j * ky,
    "dz": lambda kx, ky: 0.5j * (kx - 1j * ky),
    "dzbar": lambda kx, ky: 0.5j * (kx + 1j * ky),
    "lap": lambda kx, ky: -(kx**2 + ky**2),
}


def fourier_eval(table, z, tau: complex, deriv: str = ""):
    """Evaluate a torus Fourier table, or its derivative 'x', 'y', 'dz', 'dzbar', 'lap'."""
    u, v = torus_uv(z, tau)
    sym = _SYMBOLS[deriv]
    out = np.zeros(np.shape(u), dtype=complex)
    for p, q, a, b in table:
        e = np.exp(2j * np.pi * (p * u + q * v))
        c = 0.5 * (a - 1j * b)  # a cos + b sin = c e + conj(c) conj(e)
        kx, ky = mode_wavevector(p, q, tau)
        out += c * sym(kx, ky) * e + np.conj(c) * sym(-kx, -ky) * np.conj(e)
    return out.real if deriv in ("", "x", "y", "lap") else out


def sphere_table_eval(table, z):
    """Sum of c Y^R_lm at north-chart points z."""
    z = np.asarray(z, dtype=complex)
    r = np.abs(z)
    theta = 2 * np.arctan(r)
    phi = np.angle(z)
    out = np.zeros(z.shape)
    for l, m, c in table:
        out += c * real_harmonic(int(l), int(m), theta, phi)
    return out


def sphere_table_lap_coeffs(table):
    """Rows (l, m, c * (-4 l (l+1))): round Laplace-Beltrami of a sphere table."""
    return tuple((l, m, -4.0 * l * (l + 1) * c) for l, m, c in table)


def canonical_sphere_perturbation(amplitude: float = 0.3) -> tuple:
    """Table for amplitude * Re(z^2)/(1+|z|^2)^2 = amplitude * sin^2(theta) cos(2 phi)/4."""
    return ((2, 2, amplitude * np.sqrt(np.pi / 15.0)),)


# ----------------------------------------------------------------------------- metric


def _point_z(surface: SurfaceSpec, p):
    if isinstance(p, ChartPoint):
        if surface.is_torus:
            if p.chart != "TorusFundamental":
                raise DomainError("torus surfaces need TorusFundamental points")
            return p.z, "north"
        if p.chart == "TorusFundamental":
            raise DomainError("sphere surfaces need stereographic points")
        return p.z, ("north" if p.chart == "SphereStereo" else "dual")
    return np.asarray(p, dtype=complex), "north"


def log_rho(surface: SurfaceSpec, p):
    """log rho at a ChartPoint or at an array of chart coordinates (north chart for spheres)."""
    z, chart = _point_z(surface, p)
    if surface.is_torus:
        if not surface.log_rho_perturbation:
            return np.zeros(np.shape(z)) if np.ndim(z) else 0.0
        return fourier_eval(surface.log_rho_perturbation, z, surface.tau)
    z = np.asarray(z, dtype=complex)
    if chart == "dual":
        # rho'(z') = rho(1/z') |z'|^2 ; with rho0(1/z')|z'|^2 = 1 + |z'|^2
        base = np.log1p(np.abs(z) ** 2)
        zn = np.where(z == 0, np.inf, 1.0 / np.where(z == 0, 1.0, z))
    else:
        if not np.all(np.isfinite(z)):
            raise DomainError("point at infinity: use the dual chart")
        base = np.log1p(np.abs(z) ** 2)
        zn = z
    return base + (sphere_table_eval(surface.log_rho_perturbation, zn) if surface.log_rho_perturbation else 0.0)


def rho(surface: SurfaceSpec, p):
    return np.exp(log_rho(surface, p))


def gauss_curvature(surface: SurfaceSpec, p):
    """K = 4 rho^2 d dbar log rho."""
    z, chart = _point_z(surface, p)
    if surface.is_torus:
        if not surface.log_rho_perturbation:
            return np.zeros(np.shape(z)) if np.ndim(z) else 0.0
        P = surface.log_rho_perturbation
        return np.exp(2 * fourier_eval(P, z, surface.tau)) * fourier_eval(P, z, surface.tau, "lap")
    if not surface.log_rho_perturbation:
        return np.full(np.shape(z), 4.0) if np.ndim(z) else 4.0
    zn = z if chart == "north" else np.where(np.asarray(z) == 0, np.inf, 1.0 / np.where(np.asarray(z) == 0, 1.0, z))
    P = surface.log_rho_perturbation
    # metric e^{-2P} g0:  K = e^{2P} (4 + Lap0 P)
    return np.exp(2 * sphere_table_eval(P, zn)) * (4.0 + sphere_table_eval(sphere_table_lap_coeffs(P), zn))


def area(surface: SurfaceSpec, n: int = 64) -> float:
    """Area of the surface; trapezoid (torus) or Gauss (sphere) quadrature for perturbed kinds."""
    if surface.kind == "FlatTorus" or (surface.is_torus and not surface.log_rho_perturbation):
        return surface.tau.imag
    if surface.kind == "RoundSphere" or not surface.log_rho_perturbation:
        return np.pi
    if surface.is_torus:
        g = TorusGrid(surface.tau, n)
        return g.integrate(np.exp(-2 * log_rho(surface, g.z)))
    g = SHGrid(n, 2 * n)
    return g.integrate(np.exp(-2 * sphere_table_eval(surface.log_rho_perturbation, g.z)))


# ----------------------------------------------------------------------------- grids


@dataclass(frozen=True)
class TorusGrid:
    """Uniform n x n grid over the fundamental cell, z = u + v tau with u, v in {0, 1/n, ...}."""

    tau: complex
    n: int = 64

    @cached_property
    def uv(self):
        s = np.arange(self.n) / self.n
        return np.meshgrid(s, s, indexing="ij")

    @cached_property
    def z(self) -> np.ndarray:
        u, v = self.uv
        return u + v * self.tau

    @property
    def cell_area(self) -> float:
        return self.tau.imag / self.n**2

    def integrate(self, f):
        return np.sum(f) * self.cell_area

    @cached_property
    def integer_freqs(self) -> np.ndarray:
        return np.fft.fftfreq(self.n, 1.0 / self.n)


def twist(grid: TorusGrid, bundle: BundleSpec) -> np.ndarray:
    """exp(2 pi i (d1 u + d2 v)): multiplies periodic functions into sections of the bundle."""
    d1, d2 = bundle.shifts
    u, v = grid.uv
    return np.exp(2j * np.pi * (d1 * u + d2 * v))


def _spectral_derivatives(grid: TorusGrid, bundle: BundleSpec, values: np.ndarray, check_tol: float | None):
    tw = twist(grid, bundle)
    per = values / tw
    F = np.fft.fft2(per)
    if check_tol is not None:
        k = np.abs(grid.integer_freqs)
        band = (k[:, None] >= grid.n // 2 - 2) | (k[None, :] >= grid.n // 2 - 2)
        scale = np.abs(F).max()
        if scale > 0 and np.abs(F[band]).max() > check_tol * scale:
            raise DomainError("section is not resolved or violates the bundle's quasi-periodicity")
    d1, d2 = bundle.shifts
    p = grid.integer_freqs[:, None] + d1
    q = grid.integer_freqs[None, :] + d2
    kx, ky = mode_wavevector(p, q, grid.tau)
    return F, kx, ky, tw


def dbar_section(grid: TorusGrid, bundle: BundleSpec, values, check_tol=None):
    F, kx, ky, tw = _spectral_derivatives(grid, bundle, values, check_tol)
    return np.fft.ifft2(F * 0.5j * (kx + 1j * ky)) * tw


def apply_laplacian(surface: SurfaceSpec, bundle: BundleSpec, values, grid=None, check_tol: float | None = 1e-8):
    """Delta u = -4 rho^2 h^{-1} d(h dbar u) on grid samples of a section.

    Torus: ``grid`` is a TorusGrid; spectral differentiation in the quasi-periodic basis.
    Sphere (trivial bundle): ``grid`` is an SHGrid; Delta = -e^{2P} Lap0 with P the
    log-rho perturbation.  ``check_tol`` bounds the relative spectral content allowed in
    the highest frequency band (None disables the check).
    """
    values = np.asarray(values, dtype=complex)
    if surface.is_torus:
        grid = grid or TorusGrid(surface.tau, values.shape[0])
        if values.shape != (grid.n, grid.n):
            raise DomainError("section samples do not match the grid")
        z = grid.z
        F, kx, ky, tw = _spectral_derivatives(grid, bundle, values, check_tol)
        if not bundle.log_h_perturbation:
            lap = np.fft.ifft2(F * (kx**2 + ky**2)) * tw
        else:
            logh = fourier_eval(bundle.log_h_perturbation, z, surface.tau)
            h = np.exp(logh)
            dbu = np.fft.ifft2(F * 0.5j * (kx + 1j * ky)) * tw
            G = np.fft.fft2(h * dbu / tw)
            dz = np.fft.ifft2(G * 0.5j * (kx - 1j * ky)) * tw
            lap = -4.0 * dz / h
        return np.exp(2 * log_rho(surface, z)) * lap
    if bundle.kind != "Trivial":
        raise DomainError("sphere Laplacian is implemented for the trivial bundle only")
    grid = grid or SHGrid(values.shape[0], values.shape[1])
    P = sphere_table_eval(surface.log_rho_perturbation, grid.z) if surface.log_rho_perturbation else 0.0
    re = grid.laplace_beltrami(values.real)
    im = grid.laplace_beltrami(values.imag) if np.any(values.imag) else 0.0
    return -np.exp(2 * P) * (re + 1j * im)


def l2_pairing(surface: SurfaceSpec, bundle: BundleSpec, grid, u, v):
    """(u, v) = integral of u conj(v) h rho^{-2} dA on the grid."""
    if surface.is_torus:
        w = np.exp(-2 * log_rho(surface, grid.z))
        if bundle.log_h_perturbation:
            w = w * np.exp(fourier_eval(bundle.log_h_perturbation, grid.z, surface.tau))
        return grid.integrate(u * np.conj(v) * w)
    P = sphere_table_eval(surface.log_rho_perturbation, grid.z) if surface.log_rho_perturbation else 0.0
    return np.sum(grid.area_weights * np.exp(-2 * P) * u * np.conj(v))
