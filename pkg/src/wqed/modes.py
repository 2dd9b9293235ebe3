"""Collective modes of the waveguide coupling kernel.

The kernel for bins at positions ``z_p`` (wavelength units) is

    M[p, q] = (i/2) sqrt(n_p G_p n_q G_q) exp(i beta |z_p - z_q|)

with ``G_p`` the waveguide decay rate of bin p.  Its eigenvalues
``L = w + i g/2`` give the frequency shift and decay rate of each mode.
Three routes are provided: dense diagonalization, the continuum
transcendental equation for equally dense ensembles, and the small-extent
perturbative series.
"""

from __future__ import annotations

import cmath
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import optimize

from .ensemble import BETA, BinnedLayout
from .errors import EigenFailure, RootDivergence, SizeLimit

logger = logging.getLogger(__name__)

DENSE_LIMIT = 10_000


@dataclass(frozen=True, eq=False)
class CouplingMatrix:
    matrix: np.ndarray
    positions: np.ndarray
    amplitude: np.ndarray  # sqrt(n_p * gamma_p)

    @property
    def m(self):
        return self.matrix.shape[0]

    def hermitian_part(self):
        return 0.5 * (self.matrix + self.matrix.conj().T)

    def dissipator(self):
        """Anti-Hermitian part divided by i: ``(s s^T / 2) cos(beta (z - z'))``."""
        return (self.matrix - self.matrix.conj().T) / 2j


@dataclass(frozen=True, eq=False)
class ModeSet:
    eigenvalues: np.ndarray
    method: str
    wavenumbers: np.ndarray | None = None

    def __len__(self):
        return self.eigenvalues.size

    @property
    def frequencies(self):
        return self.eigenvalues.real

    @property
    def decay_rates(self):
        return 2.0 * self.eigenvalues.imag


def _sort_modes(values, extra=None):
    order = np.lexsort((values.real, -values.imag))
    return values[order], (None if extra is None else extra[order])


def coupling_matrix(layout: BinnedLayout) -> CouplingMatrix:
    z = layout.positions
    amp = np.sqrt(layout.bin_weight * layout.gamma_1d)
    phase = np.exp(1j * layout.beta * np.abs(z[:, None] - z[None, :]))
    mat = 0.5j * (amp[:, None] * amp[None, :]) * phase
    return CouplingMatrix(matrix=mat, positions=z.copy(), amplitude=amp)


def collective_modes(matrix: CouplingMatrix, dense_limit=DENSE_LIMIT) -> ModeSet:
    """All eigenvalues, ordered by decay rate (descending) then frequency."""
    if matrix.m > dense_limit:
        raise SizeLimit(f"dense eigensolve of size {matrix.m} exceeds limit {dense_limit}")
    try:
        vals = scipy.linalg.eigvals(matrix.matrix, overwrite_a=False, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise EigenFailure(str(exc)) from exc
    vals, _ = _sort_modes(vals)
    return ModeSet(eigenvalues=vals, method="dense")


def layout_modes(layout: BinnedLayout, dense_limit=DENSE_LIMIT) -> ModeSet:
    return collective_modes(coupling_matrix(layout), dense_limit)


def _perturbative_values(n_gamma, nu, mu_max):
    mu = np.arange(1, mu_max + 1, dtype=float)
    a = (mu * math.pi) ** 2
    lam0 = 0.5 * n_gamma * complex(-nu / 3.0, 1.0 - 4.0 * nu * nu / 45.0)
    lam = 0.5 * n_gamma * (2.0 * nu / a + 1j * 8.0 * nu * nu / a**2)
    return np.concatenate([[lam0], lam])


def perturbative_modes(n_emitters, gamma_1d, nu, mu_max=10) -> ModeSet:
    """Small-extent eigenvalues, correct to second order in ``nu``.

    Entry 0 is the broad symmetric mode; entry mu >= 1 follows the
    ``1/mu**2`` shift and ``1/mu**4`` width series.  Not re-sorted.
    """
    if nu < 0:
        raise ValueError("nu must be non-negative")
    if nu >= 1:
        raise ValueError("perturbative series needs nu < 1")
    if nu > 0.5:
        logger.warning("nu=%.3g: perturbative eigenvalues lose accuracy above 0.5", nu)
    return ModeSet(_perturbative_values(n_emitters * gamma_1d, nu, mu_max), method="perturbative")


def _log_ratio(k, nu, ref=None):
    """log((k+nu)/(k-nu)) on the branch closest to ``ref``."""
    val = cmath.log((k + nu) / (k - nu))
    if ref is not None:
        turns = round((ref - val).imag / (2 * math.pi))
        val += 2j * math.pi * turns
    return val


def _seed(mu, nu):
    if mu == 0:
        return cmath.sqrt(nu * nu - 2j * nu)
    a = mu * math.pi
    return a - 2j * nu / a + 4.0 * nu * nu / a**3


def _newton(k, nu, shift, log_ref, max_iter=200, tol=1e-14):
    logv = log_ref
    for it in range(max_iter):
        logv = _log_ratio(k, nu, logv)
        f = 2j * k - 2.0 * logv - shift
        df = 2j + 4.0 * nu / (k * k - nu * nu)
        step = f / df
        lim = 0.25 * max(1.0, abs(k))
        if abs(step) > lim:
            step *= lim / abs(step)
        k -= step
        if abs(step) <= tol * max(1.0, abs(k)):
            return k, _log_ratio(k, nu, logv), it + 1
    raise RootDivergence(f"Newton did not converge in {max_iter} iterations (nu={nu:.6g})")


def continuum_root(mu, nu, nu_start=0.01, max_iter=200):
    """Root ``k_mu`` of ``((k+nu)/(k-nu))**2 = exp(2ik)`` tracked in ``nu``.

    The branch is identified at small ``nu`` from the perturbative series and
    followed by predictor-corrector continuation up to the target ``nu``.
    """
    if nu <= 0:
        raise ValueError("continuum roots need nu > 0")
    shift = 2j * math.pi * mu
    cur = min(nu, nu_start)
    k = _seed(mu, cur)
    k, logv, _ = _newton(k, cur, shift, _log_ratio(k, cur), max_iter)
    step = 0.25 * cur
    while cur < nu:
        d = min(step, nu - cur)
        dfdk = 2j + 4.0 * cur / (k * k - cur * cur)
        dfdnu = -4.0 * k / (k * k - cur * cur)
        pred = k - (dfdnu / dfdk) * d
        try:
            knew, lognew, its = _newton(pred, cur + d, shift, _log_ratio(pred, cur + d, logv), 30)
            ok = abs(knew - k) <= 0.5 * math.pi and abs(knew - pred) <= 0.05 * max(1.0, abs(k))
        except RootDivergence:
            ok = False
        if not ok:
            step = 0.5 * d
            if step < 1e-10 * max(nu, 1.0):
                raise RootDivergence(f"lost branch mu={mu} near nu={cur:.6g}")
            continue
        k, logv, cur = knew, lognew, cur + d
        step = min(2.0 * d if its < 6 else d, 0.25 * max(cur, 0.05))
    return k


def continuum_modes(n_emitters, gamma_1d, nu, count=8) -> ModeSet:
    """Eigenvalues from the continuum transcendental equation.

    Returns ``count`` modes, ``L = N G nu / (k**2 - nu**2)``, sorted by decay
    rate; wavenumbers are carried along.
    """
    if count < 1:
        raise ValueError("count must be at least 1")
    ks = np.array([continuum_root(mu, nu) for mu in range(count)])
    lam = n_emitters * gamma_1d * nu / (ks * ks - nu * nu)
    lam, ks = _sort_modes(lam, ks)
    return ModeSet(eigenvalues=lam, method="continuum", wavenumbers=ks)


def dark_coupling_rate(n_emitters, gamma_1d, delta_z):
    """Loss rate of the symmetric coherence into narrow modes, ``N G dz / 2``."""
    if delta_z < 0:
        raise ValueError("delta_z must be non-negative")
    return 0.5 * n_emitters * gamma_1d * delta_z


def dark_mode_couplings(n_emitters, gamma_1d, nu, mu_max=20):
    """Leading-order coupling of the symmetric mode to mode mu (zero for odd mu).

    Diagnostic only; their sum is not the same as ``dark_coupling_rate``.
    """
    mu = np.arange(1, mu_max + 1)
    val = n_emitters * gamma_1d * nu / (2.0 * math.sqrt(2.0) * (mu * math.pi) ** 2)
    return np.where(mu % 2 == 0, val, 0.0)


def single_resonance_margin(n_emitters, gamma_1d, nu):
    """``Im L_1 / Im L_0`` from the perturbative series."""
    if nu < 0:
        raise ValueError("nu must be non-negative")
    lam = _perturbative_values(n_emitters * gamma_1d, nu, 1)
    return float(lam[1].imag / lam[0].imag)


def single_resonance_threshold():
    """Extent ``nu`` where the first narrow mode becomes as broad as the symmetric one."""
    return optimize.brentq(lambda v: single_resonance_margin(1.0, 1.0, v) - 1.0, 0.1, 3.0, xtol=1e-14)


def mode_residuals(matrix: CouplingMatrix):
    """Per-mode residual ``|M v - L v| / |M|`` of the dense eigenpairs."""
    vals, vecs = scipy.linalg.eig(matrix.matrix)
    res = np.linalg.norm(matrix.matrix @ vecs - vecs * vals, axis=0) / np.linalg.norm(vecs, axis=0)
    return res / np.linalg.norm(matrix.matrix, 2)


def nu_from_extent(delta_z):
    return BETA * delta_z
