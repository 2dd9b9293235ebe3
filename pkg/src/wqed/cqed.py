"""Reduced qubit-cavity model for a qubit ensemble between two mirror ensembles.

With mirrors half a wavelength (plus whole wavelengths) apart and the qubit
midway, the qubit couples only to the mirror combination that does not
radiate into the waveguide.  For Lorentzian lines the symmetric qubit and
cavity coherences then obey a closed 2x2 linear system with

    gamma = N_Q G + g_inh,   kappa = g_inh,   g = sqrt(N_Q N_C / 2) G.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .dynamics import TimeTrace
from .modes import dark_coupling_rate
from .spectral import SpectralLine, density_eval


@dataclass(frozen=True)
class CavityParams:
    gamma: float
    kappa: float
    g: float
    n_q: float
    n_c: float
    gamma_1d: float
    gamma_inh: float


@dataclass(frozen=True)
class CqedEigenvalues:
    lambda_plus: complex
    lambda_minus: complex
    regime: str  # "strong" or "weak"

    def __iter__(self):
        return iter((self.lambda_plus, self.lambda_minus))

    @property
    def splitting(self):
        return abs(self.lambda_plus.real - self.lambda_minus.real)


@dataclass(frozen=True)
class StrongCouplingReport:
    lambda_plus: complex
    lambda_minus: complex
    splitting: float
    regime: str
    params: CavityParams
    collective_ratio: float  # sqrt(N_C N_Q) G / g_inh, want >> 1
    balanced: bool  # 2 N_C >= N_Q
    dark_qubit_ratio: float  # eta(N_Q) / g, want <~ 1
    dark_mirror_ratio: float  # eta(2 N_C) / g, want <~ 1

    @property
    def flags(self):
        """Conditions that are not met (ratios on the wrong side of 1)."""
        out = []
        if self.collective_ratio <= 1:
            out.append("collective")
        if not self.balanced:
            out.append("balance")
        if self.dark_qubit_ratio > 1:
            out.append("dark_qubit")
        if self.dark_mirror_ratio > 1:
            out.append("dark_mirrors")
        return out

    def to_dict(self, unit=1.0):
        """Rates divided by ``unit`` (e.g. ``2*pi`` for Hz)."""
        p = self.params
        return {
            "lambda_plus": [self.lambda_plus.real / unit, self.lambda_plus.imag / unit],
            "lambda_minus": [self.lambda_minus.real / unit, self.lambda_minus.imag / unit],
            "splitting": self.splitting / unit,
            "gamma": p.gamma / unit,
            "kappa": p.kappa / unit,
            "g": p.g / unit,
            "regime": self.regime,
            "collective_ratio": self.collective_ratio,
            "balanced": self.balanced,
            "dark_qubit_ratio": self.dark_qubit_ratio,
            "dark_mirror_ratio": self.dark_mirror_ratio,
            "flags": self.flags,
        }


def cqed_params(n_q, n_c, gamma_1d, gamma_inh) -> CavityParams:
    if n_q < 1 or n_c < 1:
        raise ValueError("N_Q and N_C must be at least 1")
    return CavityParams(
        gamma=n_q * gamma_1d + gamma_inh,
        kappa=gamma_inh,
        g=math.sqrt(0.5 * n_q * n_c) * gamma_1d,
        n_q=n_q,
        n_c=n_c,
        gamma_1d=gamma_1d,
        gamma_inh=gamma_inh,
    )


def reduced_matrix(n_q, n_c, gamma_1d, gamma_inh, delta_c=0.0):
    """Coefficient matrix of ``d/dt (B_Q, B_C)``."""
    p = cqed_params(n_q, n_c, gamma_1d, gamma_inh)
    return np.array(
        [[1j * delta_c - 0.5 * p.gamma, 1j * p.g], [1j * p.g, 1j * delta_c - 0.5 * p.kappa]],
        dtype=complex,
    )


def cqed_eigenvalues(n_q, n_c, gamma_1d, gamma_inh) -> CqedEigenvalues:
    """Closed-form normal-mode frequencies ``L`` (time dependence ``exp(-i L t)``).

    ``L = +-(G/4) sqrt(8 N_Q N_C - N_Q**2) - i(N_Q G/4 + g_inh/2)``.  Below
    threshold the square root is imaginary and the pair is tagged ``weak``.
    """
    root = cmath.sqrt(8.0 * n_q * n_c - n_q * n_q)
    split = 0.25 * gamma_1d * root
    damp = -1j * (0.25 * n_q * gamma_1d + 0.5 * gamma_inh)
    regime = "strong" if 8.0 * n_q * n_c > n_q * n_q else "weak"
    return CqedEigenvalues(lambda_plus=split + damp, lambda_minus=-split + damp, regime=regime)


def reduced_evolve(n_q, n_c, gamma_1d, gamma_inh, times, initial=(1.0, 0.0), delta_c=0.0):
    """Exact propagation of the 2x2 system; returns ``(P_Q, P_C)`` traces.

    ``delta_c`` rotates both coherences together and leaves populations unchanged.
    """
    a = reduced_matrix(n_q, n_c, gamma_1d, gamma_inh, delta_c)
    vals, vecs = np.linalg.eig(a)
    coef = np.linalg.solve(vecs, np.asarray(initial, dtype=complex))
    t = np.asarray(times, dtype=float)
    states = (vecs[None, :, :] * (coef[None, None, :] * np.exp(np.outer(t, vals))[:, None, :])).sum(axis=2)
    p_q = TimeTrace(times=t, values=np.abs(states[:, 0]) ** 2, initial="qubit")
    p_c = TimeTrace(times=t, values=np.abs(states[:, 1]) ** 2, initial="qubit")
    return p_q, p_c


def protected_rates(line: SpectralLine, lam: complex, gamma_prime, n_q=0.0, gamma_1d=0.0):
    """Effective ``(gamma, kappa)`` with the inhomogeneous width replaced by the tail loss.

    The substitution is ``g_inh -> 2 (pi Re(L)^2 rho(Re L) + G'/2)``; for
    lines with finite variance and ``|Re L|`` far outside the line this tends
    to ``G'``, giving ``gamma -> N_Q G + G'`` and ``kappa -> G'``.
    """
    w = float(np.real(lam))
    kappa = 2.0 * (math.pi * w * w * float(density_eval(line, w)) + 0.5 * gamma_prime)
    return n_q * gamma_1d + kappa, kappa


def strong_coupling_report(n_q, n_c, gamma_1d, gamma_inh, delta_z=0.0) -> StrongCouplingReport:
    p = cqed_params(n_q, n_c, gamma_1d, gamma_inh)
    ev = cqed_eigenvalues(n_q, n_c, gamma_1d, gamma_inh)
    collective = math.sqrt(n_c * n_q) * gamma_1d / gamma_inh if gamma_inh > 0 else math.inf
    return StrongCouplingReport(
        lambda_plus=ev.lambda_plus,
        lambda_minus=ev.lambda_minus,
        splitting=ev.splitting,
        regime=ev.regime,
        params=p,
        collective_ratio=collective,
        balanced=2 * n_c >= n_q,
        dark_qubit_ratio=dark_coupling_rate(n_q, gamma_1d, delta_z) / p.g,
        dark_mirror_ratio=dark_coupling_rate(2 * n_c, gamma_1d, delta_z) / p.g,
    )
