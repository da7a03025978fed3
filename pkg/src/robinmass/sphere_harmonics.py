"""Spherical-harmonic transforms on a Gauss-Legendre x uniform-longitude grid.

Orthonormal harmonics on the unit sphere, Y_lm = Pbar_lm(cos theta) e^{i m phi}, without the
Condon-Shortley phase.  Real functions are stored by their coefficients a_lm for m >= 0.
The round sphere of the rest of the package has radius 1/2, so its area element is
dS0 = dOmega/4 and its Laplace-Beltrami operator is 4 times the unit-sphere one.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


def normalized_legendre(lmax: int, x: np.ndarray) -> np.ndarray:
    """Array P[m, l, j] of orthonormal associated Legendre functions, zero for l < m."""
    x = np.asarray(x, dtype=float)
    s = np.sqrt(np.clip(1.0 - x**2, 0.0, None))
    P = np.zeros((lmax + 1, lmax + 1, x.size))
    pmm = np.full(x.size, 1.0 / np.sqrt(4 * np.pi))
    for m in range(lmax + 1):
        if m > 0:
            pmm = np.sqrt((2 * m + 1) / (2.0 * m)) * s * pmm
        P[m, m] = pmm
        if m + 1 <= lmax:
            P[m, m + 1] = np.sqrt(2 * m + 3.0) * x * pmm
        for l in range(m + 2, lmax + 1):
            a = np.sqrt((4.0 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1) ** 2 - 1))
            P[m, l] = a * (x * P[m, l - 1] - b * P[m, l - 2])
    return P


@dataclass(frozen=True)
class SHGrid:
    """Quadrature grid exact for band-limited products up to degree 2*nlat - 1 in latitude.

    Points are (theta_j, phi_k) with cos(theta_j) the Gauss-Legendre nodes (north first).
    """

    nlat: int = 64
    nlon: int = 128

    def __post_init__(self):
        if self.nlat < 2 or self.nlon < 2 * (self.nlat - 1) + 1:
            raise ValueError("need nlon >= 2*nlat - 1 for an alias-free transform")

    @property
    def lmax(self) -> int:
        return self.nlat - 1

    @cached_property
    def _gauss(self):
        x, w = np.polynomial.legendre.leggauss(self.nlat)
        return x[::-1].copy(), w[::-1].copy()

    @property
    def cos_theta(self) -> np.ndarray:
        return self._gauss[0]

    @property
    def theta(self) -> np.ndarray:
        return np.arccos(self._gauss[0])

    @property
    def phi(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.nlon) / self.nlon

    @cached_property
    def mesh(self):
        return np.meshgrid(self.theta, self.phi, indexing="ij")

    @cached_property
    def z(self) -> np.ndarray:
        """North stereographic coordinate of every grid point."""
        th, ph = self.mesh
        return np.tan(th / 2) * np.exp(1j * ph)

    @cached_property
    def area_weights(self) -> np.ndarray:
        """Weights for the radius-1/2 round area element dS0."""
        w = self._gauss[1][:, None] * (2 * np.pi / self.nlon) * np.ones(self.nlon)
        return 0.25 * w

    @cached_property
    def legendre(self) -> np.ndarray:
        return normalized_legendre(self.lmax, self.cos_theta)

    @cached_property
    def ell(self) -> np.ndarray:
        return np.arange(self.lmax + 1)

    def integrate(self, f) -> float:
        """Integral of grid samples against dS0."""
        return float(np.sum(self.area_weights * np.real(f)))

    def analysis(self, f: np.ndarray) -> np.ndarray:
        """Coefficients a[l, m] (m >= 0) of a real grid function w.r.t. dOmega."""
        F = np.fft.fft(np.asarray(f, dtype=float), axis=1) * (2 * np.pi / self.nlon)
        wj = self._gauss[1]
        L = self.lmax
        a = np.zeros((L + 1, L + 1), dtype=complex)
        for m in range(L + 1):
            a[m:, m] = self.legendre[m, m:] @ (wj * F[:, m])
        return a

    def synthesis(self, a: np.ndarray) -> np.ndarray:
        L = self.lmax
        G = np.zeros((self.nlat, self.nlon), dtype=complex)
        for m in range(L + 1):
            G[:, m] = a[m:, m] @ self.legendre[m, m:]
        G[:, 1 : L + 1] *= 2.0
        return np.real(np.fft.ifft(G, axis=1) * self.nlon)

    def multiply_ell(self, a: np.ndarray, factor) -> np.ndarray:
        """Apply a zonal multiplier factor(l) to coefficients."""
        return a * np.asarray(factor(self.ell), dtype=float)[:, None]

    def laplace_beltrami(self, f: np.ndarray) -> np.ndarray:
        """Round (radius 1/2) Laplace-Beltrami operator, eigenvalues -4 l (l+1)."""
        a = self.analysis(f)
        return self.synthesis(self.multiply_ell(a, lambda l: -4.0 * l * (l + 1)))

    def power(self, a: np.ndarray) -> np.ndarray:
        """Sum over m of |a_lm|^2 for a real function (dOmega normalization)."""
        p = np.abs(a) ** 2
        return p[:, 0] + 2 * p[:, 1:].sum(axis=1)


def real_harmonic(l: int, m: int, theta, phi) -> np.ndarray:
    """Real orthonormal harmonic on the unit sphere, sqrt(2) Pbar cos/sin for m != 0."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    am = abs(m)
    P = normalized_legendre(l, np.cos(theta).ravel())[am, l].reshape(theta.shape)
    if m == 0:
        return P
    trig = np.cos(am * phi) if m > 0 else np.sin(am * phi)
    return np.sqrt(2.0) * P * trig
