"""Shared numerical experiments used by unit and acceptance tests."""

import math

import numpy as np
from scipy.optimize import brentq

from wqed.ensemble import EnsembleSpec, build_bins
from wqed.modes import ModeSet
from wqed.spectral import SpectralLine, density_eval, response
from wqed.steady_state import (
    exact_steady_transmission,
    fit_dip_linewidth,
    narrow_feature_mask,
    rms_difference,
    spectrum_scan,
    transmission_product,
)

ACCEPTANCE_LINES = []


def report(label, passed, detail):
    """Record one acceptance line; ``passed=None`` marks an informational line."""
    status = "INFO" if passed is None else ("PASS" if passed else "FAIL")
    line = f"[{status}] {label}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def dip_linewidth(line, omega, gamma_mu, gamma_prime):
    """Fitted half width of the dip from one mode ``omega + i gamma_mu / 2`` and its tail prediction."""
    modes = ModeSet(np.array([omega + 0.5j * gamma_mu]), "single")
    c = brentq(lambda x: (1 / response(line, x, gamma_prime)).real + omega, -omega - 3 * line.gamma_inh,
               -omega + 0.5 * line.gamma_inh)

    def tail(x):
        return 0.5 * (gamma_prime + gamma_mu + 2 * math.pi * x * x * density_eval(line, x))

    hw = tail(c)
    grid = np.linspace(c - 15 * hw, c + 15 * hw, 3001)
    power = transmission_product(modes, line, gamma_prime, grid).power
    center, fitted = fit_dip_linewidth(grid, power, c, hw)
    return fitted, tail(center)


def oracle_panel(gamma_inh, delta_z, seed, n=1000, m=50, count=400):
    """RMS of |t| between the binned model and individually resolved emitters (unit Gamma_1D)."""
    spec = EnsembleSpec(n, 1.0, 1.0, SpectralLine.gaussian(gamma_inh), delta_z=delta_z)
    half = 0.5 * (n + 4 * gamma_inh)
    grid = np.linspace(-half, half, count)
    binned = np.abs(spectrum_scan(build_bins(spec, m, seed), grid, method="transfer").values)
    exact = np.abs(exact_steady_transmission(spec, seed, grid).values)
    return rms_difference(binned, exact, narrow_feature_mask(exact))
