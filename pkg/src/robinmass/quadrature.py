"""Quadrature on flat tori and on the sphere, with integrable point singularities.

Torus integrals use a smooth partition of unity: a periodic trapezoid rule for the part
of the integrand away from the singular points and a polar Gauss rule (radial variable
r = R t^2) on a disk around each of them.  The substitution makes 1/r and log r
singularities harmless, so convergence is far faster than first order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import DomainError


def _psi(s):
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    a, b = _psi(s), _psi(1.0 - s)
    return a / (a + b)


def bump(r, radius, inner_fraction=0.25):
    """Radial cutoff equal to 1 for r <= inner_fraction*radius and 0 for r >= radius."""
    r_in = inner_fraction * radius
    return smooth_step((radius - np.asarray(r, dtype=float)) / (radius - r_in))


def shortest_lattice_vector(tau: complex) -> float:
    m, n = np.meshgrid(np.arange(-3, 4), np.arange(-3, 4))
    w = np.abs(m + n * tau)
    return float(w[w > 0].min())


def torus_reduce(z, tau: complex):
    """Representative of z in the fundamental parallelogram {u + v tau : u, v in [0,1)}."""
    z = np.asarray(z, dtype=complex)
    v = np.floor(z.imag / tau.imag)
    zz = z - v * tau
    u = np.floor(zz.real - (zz.imag / tau.imag) * tau.real)
    return zz - u


def torus_uv(z, tau: complex):
    z = np.asarray(z, dtype=complex)
    v = z.imag / tau.imag
    u = z.real - v * tau.real
    return u, v


def torus_min_image(d, tau: complex):
    """Shortest representative of the displacement d modulo the lattice."""
    d = torus_reduce(d, tau)
    best = d.copy()
    for m in (-1, 0, 1):
        for n in (-1, 0, 1):
            cand = d + m + n * tau
            best = np.where(np.abs(cand) < np.abs(best), cand, best)
    return best


@dataclass(frozen=True)
class TorusQuadrature:
    """Integration of periodic functions over C/(Z + tau Z) against Lebesgue measure.

    Parameters
    ----------
    tau : modulus
    n : trapezoid points per period direction
    n_r, n_theta : polar Gauss-Legendre / trapezoid sizes on singular patches
    """

    tau: complex
    n: int = 64
    n_r: int = 32
    n_theta: int = 64
    inner_fraction: float = 0.25

    @property
    def area(self) -> float:
        return self.tau.imag

    @cached_property
    def nodes(self) -> np.ndarray:
        s = np.arange(self.n) / self.n
        u, v = np.meshgrid(s, s, indexing="ij")
        return u + v * self.tau

    @property
    def weight(self) -> float:
        return self.area / self.n**2

    @cached_property
    def _radial(self):
        t, wt = np.polynomial.legendre.leggauss(self.n_r)
        t = 0.5 * (t + 1.0)
        wt = 0.5 * wt
        return t, wt

    def patch_radius(self, points) -> float:
        dmin = 0.45 * shortest_lattice_vector(self.tau)
        pts = list(points)
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                sep = abs(complex(torus_min_image(pts[i] - pts[j], self.tau)))
                if sep == 0:
                    raise DomainError("singular points must be distinct on the torus")
                dmin = min(dmin, 0.45 * sep)
        return dmin

    def polar_nodes(self, centre: complex, radius: float):
        """Nodes z and weights w (including the bump) of one singular patch.

        Radial panels: [0, r_in] with r = r_in t^2, then Gauss panels over the
        transition band of the cutoff.
        """
        t, wt = self._radial
        r_in = 0.25 * radius
        r0 = r_in * t**2
        w0 = wt * 2 * r_in * t * r0 * bump(r0, radius, self.inner_fraction)
        edges = np.linspace(r_in, radius, 4)
        rs, ws = [r0], [w0]
        for a, b in zip(edges[:-1], edges[1:]):
            r = a + (b - a) * t
            rs.append(r)
            ws.append(wt * (b - a) * r * bump(r, radius, self.inner_fraction))
        r, w_r = np.concatenate(rs), np.concatenate(ws)
        th = 2 * np.pi * np.arange(self.n_theta) / self.n_theta
        z = centre + r[:, None] * np.exp(1j * th)[None, :]
        w = np.broadcast_to(w_r[:, None] * (2 * np.pi / self.n_theta), z.shape)
        return z, w

    def integrate(self, f, singular_points=(), radius=None):
        """Integral of the periodic function ``f`` over the torus.

        ``f`` is called with complex arrays and must accept any point of C; it may be
        integrably singular at ``singular_points`` (reduced modulo the lattice).
        """
        pts = [complex(p) for p in singular_points]
        grid = self.nodes
        cut = np.ones(grid.shape)
        if pts:
            R = radius if radius is not None else self.patch_radius(pts)
        total = 0.0
        for p in pts:
            d = np.abs(torus_min_image(grid - p, self.tau))
            cut -= bump(d, R, self.inner_fraction)
        mask = cut > 0
        vals = np.zeros(grid.shape, dtype=complex)
        vals[mask] = f(grid[mask])
        total = np.sum(cut * vals) * self.weight
        for p in pts:
            z, w = self.polar_nodes(p, R)
            total = total + np.sum(w * f(z))
        return total


# ----------------------------------------------------------------------------- sphere
#
# Charts: z (north, centred at theta=0) with z = tan(theta/2) e^{i phi}, and the dual
# chart z' = 1/z.  The round metric |dz|^2/(1+|z|^2)^2 has area pi and curvature 4.


def sphere_to_chart(theta, phi):
    return np.tan(np.asarray(theta) / 2) * np.exp(1j * np.asarray(phi))


def chart_to_unit_vector(z):
    """Unit vector in R^3 of the point with north-chart coordinate z (z = inf allowed)."""
    z = np.asarray(z, dtype=complex)
    a = np.abs(z) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        x = 2 * z.real / (1 + a)
        y = 2 * z.imag / (1 + a)
        c = (1 - a) / (1 + a)
    inf = ~np.isfinite(a)
    x = np.where(inf, 0.0, x)
    y = np.where(inf, 0.0, y)
    c = np.where(inf, -1.0, c)
    return np.stack([x, y, c], axis=-1)


def unit_vector_to_chart(X):
    """North-chart coordinate of unit vectors (complex inf at the south pole)."""
    X = np.asarray(X, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return (X[..., 0] + 1j * X[..., 1]) / (1 + X[..., 2])


@dataclass(frozen=True)
class SphereQuadrature:
    """Integration over the Riemann sphere.

    ``integrate`` covers the sphere by the two unit disks |z| <= 1 and |z'| <= 1 with
    polar Gauss rules (the round-area element is exact in each chart).
    ``integrate_singular`` uses geodesic polar coordinates about a point, which takes
    care of log- and 1/r-type singularities there.
    Integrands are scalar functions given as callables of the north-chart coordinate;
    weights are for the round area element dS0 = |dz|^2/(1+|z|^2)^2.
    """

    n_r: int = 48
    n_theta: int = 96

    @cached_property
    def chart_nodes(self):
        t, wt = np.polynomial.legendre.leggauss(self.n_r)
        r = 0.5 * (t + 1.0)
        wr = 0.5 * wt
        th = 2 * np.pi * (np.arange(self.n_theta) + 0.5) / self.n_theta
        zeta = r[:, None] * np.exp(1j * th)[None, :]
        w = (wr * r / (1 + r**2) ** 2)[:, None] * (2 * np.pi / self.n_theta) * np.ones_like(th)
        north = zeta
        south = 1.0 / zeta  # dual chart z' = zeta, north coordinate 1/z'
        return np.concatenate([north.ravel(), south.ravel()]), np.concatenate([w.ravel(), w.ravel()])

    def integrate(self, f):
        z, w = self.chart_nodes
        return np.sum(w * f(z))

    def geodesic_nodes(self, y: complex, n_beta: int | None = None, n_alpha: int | None = None):
        n_beta = n_beta or self.n_r * 2
        n_alpha = n_alpha or self.n_theta
        Y = chart_to_unit_vector(np.asarray(y))
        helper = np.array([1.0, 0.0, 0.0]) if abs(Y[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        E1 = helper - Y * (helper @ Y)
        E1 /= np.linalg.norm(E1)
        E2 = np.cross(Y, E1)
        t, wt = np.polynomial.legendre.leggauss(n_beta)
        s = 0.5 * (t + 1.0)
        ws = 0.5 * wt
        beta = np.pi * s**2
        wb = ws * 2 * np.pi * s
        al = 2 * np.pi * np.arange(n_alpha) / n_alpha
        cb, sb = np.cos(beta)[:, None, None], np.sin(beta)[:, None, None]
        dirs = np.cos(al)[None, :, None] * E1 + np.sin(al)[None, :, None] * E2
        X = cb * Y + sb * dirs
        z = unit_vector_to_chart(X)
        # radius-1/2 sphere: dS0 = (1/4) sin(beta) dbeta dalpha
        w = (0.25 * np.sin(beta) * wb)[:, None] * (2 * np.pi / n_alpha) * np.ones(n_alpha)
        return z, w, beta

    def integrate_singular(self, f, y: complex, **kw):
        z, w, _ = self.geodesic_nodes(y, **kw)
        return np.sum(w * f(z))
