"""Inhomogeneous line shapes and the ensemble response function.

All frequencies are angular (rad/s) or, in dimensionless runs, in units of
the waveguide decay rate.  The response function of a line with density
``rho`` is

    W(dc) = integral rho(x) / (dc - x + i*gamma_prime/2) dx

and ``chi = gamma_inh * W`` is its dimensionless counterpart.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate, special, stats

from .errors import InvalidHole, QuadratureFailure

logger = logging.getLogger(__name__)

KINDS = ("gaussian", "uniform", "lorentzian", "tabulated")

SQRT_LN2 = math.sqrt(math.log(2.0))
SQRT_PI = math.sqrt(math.pi)

# Lorentzian quantile nodes are cut to this central probability mass.
LORENTZ_TRUNCATION = (0.001, 0.999)


@dataclass(frozen=True, eq=False)
class SpectralLine:
    """Density of emitter detunings measured from the line mean.

    ``gamma_inh`` is the width parameter of the closed-form densities.  For
    tabulated lines it is the scale used to turn ``W`` into ``chi``; holes
    burned into a closed-form line keep the width of the base line.
    """

    kind: str
    gamma_inh: float
    delta: np.ndarray | None = field(default=None, repr=False)
    rho: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown line kind {self.kind!r}")
        if not self.gamma_inh > 0:
            raise ValueError("gamma_inh must be positive")
        if self.kind == "tabulated":
            if self.delta is None or self.rho is None:
                raise ValueError("tabulated line needs delta and rho nodes")
            d = np.asarray(self.delta, dtype=float)
            r = np.asarray(self.rho, dtype=float)
            if d.ndim != 1 or d.shape != r.shape or d.size < 2:
                raise ValueError("delta and rho must be 1-D of equal length >= 2")
            if np.any(np.diff(d) <= 0):
                raise ValueError("tabulated delta nodes must be strictly increasing")
            if np.any(r < 0):
                raise ValueError("tabulated density must be non-negative")
            norm = np.trapezoid(r, d)
            if abs(norm - 1.0) > 1e-10:
                raise ValueError(f"tabulated density integrates to {norm!r}, not 1")
            object.__setattr__(self, "delta", d)
            object.__setattr__(self, "rho", r)

    @classmethod
    def gaussian(cls, gamma_inh):
        return cls("gaussian", float(gamma_inh))

    @classmethod
    def uniform(cls, gamma_inh):
        return cls("uniform", float(gamma_inh))

    @classmethod
    def lorentzian(cls, gamma_inh):
        return cls("lorentzian", float(gamma_inh))

    @classmethod
    def tabulated(cls, delta, rho, gamma_inh=None, normalize=False):
        delta = np.asarray(delta, dtype=float)
        rho = np.asarray(rho, dtype=float)
        if normalize:
            rho = rho / np.trapezoid(rho, delta)
        if gamma_inh is None:
            gamma_inh = table_fwhm(delta, rho)
        return cls("tabulated", float(gamma_inh), delta, rho)

    @property
    def gaussian_scale(self):
        """The 1/e half width ``gamma_inh / sqrt(ln 2)`` of the Gaussian density."""
        return self.gamma_inh / SQRT_LN2

    @property
    def is_even(self):
        if self.kind != "tabulated":
            return True
        return bool(
            np.allclose(self.delta, -self.delta[::-1], rtol=0, atol=1e-12 * self.gamma_inh)
            and np.allclose(self.rho, self.rho[::-1], rtol=1e-12, atol=0)
        )

    def support(self):
        """Closed interval outside of which the density vanishes."""
        if self.kind == "uniform":
            return (-0.5 * self.gamma_inh, 0.5 * self.gamma_inh)
        if self.kind == "tabulated":
            return (float(self.delta[0]), float(self.delta[-1]))
        return (-math.inf, math.inf)

    def density(self, delta):
        return density_eval(self, delta)

    def response(self, delta_c, gamma_prime):
        return response(self, delta_c, gamma_prime)

    def quantile(self, u):
        """Inverse cumulative distribution at probabilities ``u``."""
        u = np.asarray(u, dtype=float)
        g = self.gamma_inh
        if self.kind == "gaussian":
            return stats.norm.ppf(u, scale=self.gaussian_scale / math.sqrt(2.0))
        if self.kind == "uniform":
            return g * (u - 0.5)
        if self.kind == "lorentzian":
            return 0.5 * g * np.tan(np.pi * (u - 0.5))
        return _table_quantile(self.delta, self.rho, u)


def table_fwhm(delta, rho):
    """Distance between the outermost half-maximum crossings of a table."""
    delta = np.asarray(delta, dtype=float)
    rho = np.asarray(rho, dtype=float)
    half = 0.5 * rho.max()
    above = np.nonzero(rho >= half)[0]
    i, j = above[0], above[-1]

    def cross(k0, k1):
        if k0 < 0 or k0 >= rho.size or rho[k0] == rho[k1]:
            return delta[k1]
        return delta[k0] + (half - rho[k0]) * (delta[k1] - delta[k0]) / (rho[k1] - rho[k0])

    width = cross(j + 1, j) - cross(i - 1, i)
    return float(width) if width > 0 else float(delta[-1] - delta[0])


def density_eval(line: SpectralLine, delta):
    """Density of the line at ``delta``; tabulated lines interpolate linearly."""
    x = np.asarray(delta, dtype=float)
    g = line.gamma_inh
    if line.kind == "gaussian":
        a = line.gaussian_scale
        out = np.exp(-((x / a) ** 2)) / (a * SQRT_PI)
    elif line.kind == "uniform":
        out = np.where(np.abs(x) <= 0.5 * g, 1.0 / g, 0.0)
    elif line.kind == "lorentzian":
        h = 0.5 * g
        out = (h / np.pi) / (h * h + x * x)
    else:
        out = np.interp(x, line.delta, line.rho, left=0.0, right=0.0)
    return out if out.ndim else float(out)


def erfcx_complex(z):
    """Scaled complementary error function ``exp(z**2) * erfc(z)`` for complex z.

    Evaluated through the Faddeeva function, ``erfcx(z) = w(i z)``.
    """
    z = np.asarray(z, dtype=complex)
    out = special.wofz(1j * z)
    return out if out.ndim else complex(out)


@dataclass(frozen=True)
class ResponseValue:
    chi: complex | np.ndarray
    delta_c: float | np.ndarray
    gamma_prime: float


def _zeta(delta_c, gamma_prime):
    dc = np.asarray(delta_c, dtype=float)
    # an explicit +0 imaginary part picks the limit from the upper half plane
    return dc + 1j * (0.5 * gamma_prime) + 0j


def response(line: SpectralLine, delta_c, gamma_prime, method="auto"):
    """Unnormalized response ``W(delta_c)`` (units of 1/frequency).

    ``method='quadrature'`` forces direct adaptive integration of the density,
    which is also the oracle the closed forms are tested against.
    """
    if gamma_prime < 0:
        raise ValueError("gamma_prime must be non-negative")
    if method == "quadrature":
        return response_quadrature(line, delta_c, gamma_prime)
    z = _zeta(delta_c, gamma_prime)
    g = line.gamma_inh
    if line.kind == "gaussian":
        a = line.gaussian_scale
        out = (-1j * SQRT_PI / a) * erfcx_complex(-1j * z / a)
    elif line.kind == "uniform":
        h = 0.5 * g
        # (1/(i h)) arctan(i h / z) written as a difference of principal logs
        out = (np.log(z + h) - np.log(z - h)) / g
    elif line.kind == "lorentzian":
        out = 1.0 / (z + 0.5j * g)
    else:
        out = _table_response(line.delta, line.rho, z)
    return out if np.ndim(out) else complex(out)


def chi_eval(line: SpectralLine, delta_c, gamma_prime, method="auto") -> ResponseValue:
    chi = line.gamma_inh * response(line, delta_c, gamma_prime, method=method)
    return ResponseValue(chi=chi, delta_c=delta_c, gamma_prime=float(gamma_prime))


def inverse_response(line: SpectralLine, delta_c, gamma_prime):
    """``1/W = gamma_inh / chi``, the effective complex detuning of the line."""
    return 1.0 / response(line, delta_c, gamma_prime)


def chi_asymptotic(line: SpectralLine, delta_c, gamma_prime):
    """Large-detuning expansion of ``gamma_inh / chi``.

    Returns ``dc + i*pi*dc**2*rho(dc) + i*gamma_prime/2``; only meaningful for
    ``|dc| >> gamma_inh`` and a symmetric density.
    """
    dc = np.asarray(delta_c, dtype=float)
    if np.any(dc == 0):
        raise ValueError("asymptotic form needs |delta_c| > 0")
    out = dc + 1j * np.pi * dc**2 * density_eval(line, dc) + 0.5j * gamma_prime
    return out if out.ndim else complex(out)


def _table_response(x, rho, z):
    """Exact integral of the piecewise-linear table against 1/(z - x)."""
    z = np.asarray(z, dtype=complex)
    flat = z.reshape(-1)
    tiny = np.where(flat.imag == 0, 1e-300, 0.0)
    flat = flat + 1j * tiny
    h = np.diff(x)
    s = np.diff(rho) / h
    out = np.empty(flat.shape, dtype=complex)
    # chunked to bound memory for long tables
    chunk = max(1, 2_000_000 // x.size)
    for lo in range(0, flat.size, chunk):
        zz = flat[lo : lo + chunk, None]
        u1 = zz - x[None, :-1]
        u2 = zz - x[None, 1:]
        ratio = h[None, :] / u2
        small = np.abs(ratio) < 0.5
        with np.errstate(divide="ignore", invalid="ignore"):
            lg = np.where(small, np.log1p(np.where(small, ratio, 0.0)), np.log(u1) - np.log(u2))
        a = rho[None, :-1] + s[None, :] * u1
        out[lo : lo + chunk] = np.sum(a * lg, axis=1) - np.sum(s * h)
    return out.reshape(z.shape)


def response_quadrature(line: SpectralLine, delta_c, gamma_prime, epsrel=1e-12, limit=2000):
    """Adaptive Gauss-Kronrod quadrature of the response integral.

    The pole at ``x = delta_c`` is handled by subtracting ``rho(delta_c)``
    over a symmetric core window whose contribution is integrated exactly.
    """
    dcs = np.atleast_1d(np.asarray(delta_c, dtype=float))
    out = np.array([_quad_one(line, float(c), float(gamma_prime), epsrel, limit) for c in dcs])
    return out if np.ndim(delta_c) else complex(out[0])


def _breakpoints(line):
    if line.kind == "uniform":
        h = 0.5 * line.gamma_inh
        return [-h, h]
    if line.kind == "tabulated":
        return list(line.delta)
    return []


def _quad_piecewise(f, a, b, points, epsabs, epsrel, limit):
    """Integrate complex ``f`` over [a, b], splitting at interior ``points``."""
    edges = [a, *sorted(p for p in points if a < p < b), b]
    total = 0j
    for lo, hi in zip(edges[:-1], edges[1:]):
        for unit, part in ((1.0, np.real), (1j, np.imag)):
            val, err, info, *msg = integrate.quad(
                lambda x: part(f(x)), lo, hi,
                epsabs=epsabs, epsrel=epsrel, limit=limit, full_output=1,
            )
            if msg and err > 100 * max(epsabs, epsrel * abs(val)):
                raise QuadratureFailure(f"no convergence on [{lo}, {hi}]: {msg[0]}")
            total += unit * val
    return total


def _quad_one(line, c, gamma_prime, epsrel, limit):
    g = line.gamma_inh
    zeta = complex(c, 0.5 * gamma_prime)
    lo, hi = line.support()
    breaks = _breakpoints(line)
    if line.kind == "tabulated":
        k = int(np.clip(np.searchsorted(line.delta, c), 1, line.delta.size - 1))
        widths = np.diff(line.delta)[max(k - 6, 0) : k + 5]
        core = max(5 * widths.max(), 50 * gamma_prime)
    else:
        core = max(0.5 * g, 50 * gamma_prime)
    # the subtraction window must not straddle a jump of the density
    for b in breaks if line.kind == "uniform" else ():
        if abs(c - b) < core:
            core = 0.5 * abs(c - b)
    ca, cb = max(c - core, lo), min(c + core, hi)
    rho_c = density_eval(line, c)
    epsabs = 1e-15 / g

    def sub(x):
        return (density_eval(line, x) - rho_c) / (zeta - x)

    def full(x):
        return density_eval(line, x) / (zeta - x)

    val = 0j
    if cb > ca:
        val += _quad_piecewise(sub, ca, cb, [c, *breaks], epsabs, epsrel, limit)
        val += rho_c * (np.log(zeta - ca + 0j) - np.log(zeta - cb + 0j))
    if lo < ca:
        val += _quad_piecewise(full, lo, ca, breaks, epsabs, epsrel, limit)
    if cb < hi:
        val += _quad_piecewise(full, cb, hi, breaks, epsabs, epsrel, limit)
    return val


def _table_quantile(x, rho, u):
    u = np.asarray(u, dtype=float)
    h = np.diff(x)
    s = np.diff(rho) / h
    seg_mass = 0.5 * (rho[:-1] + rho[1:]) * h
    cdf = np.concatenate([[0.0], np.cumsum(seg_mass)])
    cdf /= cdf[-1]
    k = np.clip(np.searchsorted(cdf, u, side="right") - 1, 0, h.size - 1)
    dm = (u - cdf[k]) * np.sum(seg_mass)
    r0 = rho[k]
    sk = s[k]
    disc = np.maximum(r0 * r0 + 2.0 * sk * dm, 0.0)
    denom = r0 + np.sqrt(disc)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom > 0, 2.0 * dm / denom, 0.0)
    return x[k] + np.clip(t, 0.0, h[k])


@dataclass(frozen=True)
class HoleSpec:
    center: float
    width: float
    depth: float

    def __post_init__(self):
        if not self.width > 0:
            raise InvalidHole("hole width must be positive")
        if not 0.0 <= self.depth <= 1.0:
            raise InvalidHole("hole depth must lie in [0, 1]")


def hole_grid(base: SpectralLine, holes: Sequence[HoleSpec], grid: int = 4001):
    """Node set used to tabulate a burned line."""
    g = base.gamma_inh
    if base.kind == "tabulated":
        parts = [base.delta, np.linspace(base.delta[0], base.delta[-1], grid)]
    elif base.kind == "lorentzian":
        core = np.linspace(-10 * g, 10 * g, grid)
        tail = np.geomspace(10 * g, 1e3 * g, 400)[1:]
        parts = [core, tail, -tail]
    elif base.kind == "uniform":
        h = 0.5 * g
        eps = 1e-13 * g
        parts = [
            np.linspace(-10 * g, 10 * g, grid),
            np.linspace(-h, h, grid),
            [-h - eps, h + eps],
        ]
    else:
        parts = [np.linspace(-10 * g, 10 * g, grid)]
    for hole in holes:
        parts.append(hole.center + hole.width * np.linspace(-5.0, 5.0, 101))
        parts.append([hole.center])
    nodes = np.unique(np.concatenate([np.asarray(p, dtype=float) for p in parts]))
    if base.kind == "uniform":
        h = 0.5 * g
        inside = np.abs(nodes) <= h
        outside = np.abs(nodes) > h + 0.5e-13 * g
        nodes = nodes[inside | outside | (np.abs(np.abs(nodes) - h - 1e-13 * g) < 1e-15 * g)]
    lo, hi = (base.delta[0], base.delta[-1]) if base.kind == "tabulated" else (-np.inf, np.inf)
    return nodes[(nodes >= lo) & (nodes <= hi)]


def apply_hole_burn(base: SpectralLine, holes: Sequence[HoleSpec], grid: int = 4001) -> SpectralLine:
    """Tabulate ``base`` with Lorentzian notches removed and renormalize.

    Each hole multiplies the density by ``1 - depth * L(x)`` where ``L`` is a
    unit-peak Lorentzian of full width ``width`` centred on ``center``.
    """
    if grid < 1000:
        raise ValueError("hole-burn grid needs at least 1000 nodes")
    g = base.gamma_inh
    for hole in holes:
        if abs(hole.center) > 10 * g:
            raise InvalidHole(f"hole at {hole.center!r} lies outside +-10 gamma_inh")
    nodes = hole_grid(base, holes, grid)
    rho = np.asarray(density_eval(base, nodes), dtype=float)
    if base.kind == "uniform":
        rho = np.where(np.abs(nodes) <= 0.5 * g, 1.0 / g, 0.0)
    for hole in holes:
        hw = 0.5 * hole.width
        rho = rho * (1.0 - hole.depth * hw * hw / ((nodes - hole.center) ** 2 + hw * hw))
    rho = np.clip(rho, 0.0, None)
    norm = np.trapezoid(rho, nodes)
    if norm < 1e-6:
        raise InvalidHole("line burned away: remaining integral below 1e-6")
    return SpectralLine.tabulated(nodes, rho / norm, gamma_inh=g)


def save_table_csv(line: SpectralLine, path):
    """Write a tabulated line as ``delta_hz, rho_per_hz`` columns."""
    if line.kind != "tabulated":
        raise ValueError("only tabulated lines can be saved")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta_hz", "rho_per_hz"])
        for d, r in zip(line.delta / (2 * np.pi), line.rho * (2 * np.pi)):
            w.writerow([repr(float(d)), repr(float(r))])


def load_table_csv(path, gamma_inh=None, hz=True) -> SpectralLine:
    """Read a two-column line table; values in Hz unless ``hz`` is false.

    The table is renormalized so that its trapezoidal integral is exactly one.
    """
    data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
    delta, rho = data[:, 0], data[:, 1]
    if hz:
        delta = 2 * np.pi * delta
        rho = rho / (2 * np.pi)
    norm = np.trapezoid(rho, delta)
    if abs(norm - 1.0) > 1e-3:
        logger.warning("table %s integrates to %.6g; renormalizing", path, norm)
    return SpectralLine.tabulated(delta, rho / norm, gamma_inh=gamma_inh)
