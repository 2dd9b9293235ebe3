"""Emitter ensembles, positional binning and frequency quadrature nodes.

Positions are in units of the guided wavelength, so the propagation phase
between two bins is ``2*pi*|z - z'|``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import BadBinCount, OverlapError
from .spectral import LORENTZ_TRUNCATION, SpectralLine

logger = logging.getLogger(__name__)

BETA = 2.0 * math.pi
PLACEMENTS = ("random", "equal", "explicit")


@dataclass(frozen=True, eq=False)
class EnsembleSpec:
    n_emitters: int
    gamma_1d: float
    gamma_prime: float
    line: SpectralLine
    delta_z: float = 0.0
    center: float = 0.0
    detuning_offset: float = 0.0
    placement: str = "random"
    positions: np.ndarray | None = field(default=None, repr=False)
    role: str = "single"

    def __post_init__(self):
        if self.n_emitters < 1:
            raise ValueError("an ensemble needs at least one emitter")
        if not self.gamma_1d > 0:
            raise ValueError("gamma_1d must be positive")
        if self.gamma_prime < 0 or self.delta_z < 0:
            raise ValueError("gamma_prime and delta_z must be non-negative")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.placement == "explicit":
            if self.positions is None:
                raise ValueError("explicit placement needs positions")
            pos = np.asarray(self.positions, dtype=float)
            lo, hi = self.extent()
            if np.any(pos < lo - 1e-12) or np.any(pos > hi + 1e-12):
                raise ValueError("explicit positions must lie within center +- delta_z/2")
            object.__setattr__(self, "positions", pos)

    @property
    def nu(self):
        """Dimensionless extent ``beta * delta_z``."""
        return BETA * self.delta_z

    def extent(self):
        return (self.center - 0.5 * self.delta_z, self.center + 0.5 * self.delta_z)

    def with_(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True, eq=False)
class BinnedLayout:
    """Positional bins, possibly drawn from several ensembles.

    Per-bin arrays all have length ``m``.  ``bin_weight`` is the number of
    emitters represented by each bin and ``ensemble_id`` indexes
    ``ensembles``.
    """

    positions: np.ndarray
    bin_weight: np.ndarray
    ensemble_id: np.ndarray
    detuning_offset: np.ndarray
    ensembles: tuple
    beta: float = BETA

    @property
    def m(self):
        return self.positions.size

    @property
    def gamma_1d(self):
        return np.array([self.ensembles[k].gamma_1d for k in self.ensemble_id])

    @property
    def gamma_prime(self):
        return np.array([self.ensembles[k].gamma_prime for k in self.ensemble_id])

    def n_emitters(self, ensemble=None):
        if ensemble is None:
            return float(np.sum(self.bin_weight))
        return float(np.sum(self.bin_weight[self.ensemble_id == ensemble]))

    def bins_of(self, ensemble):
        return np.nonzero(self.ensemble_id == ensemble)[0]

    def role_ids(self, role):
        return [k for k, e in enumerate(self.ensembles) if e.role == role]

    def shifted(self, delta):
        """Same layout with every detuning offset moved by ``delta``."""
        ens = tuple(e.with_(detuning_offset=e.detuning_offset + delta) for e in self.ensembles)
        return replace(self, detuning_offset=self.detuning_offset + delta, ensembles=ens)


@dataclass(frozen=True)
class FrequencyGrid:
    nodes: np.ndarray
    weights: np.ndarray

    @property
    def n_f(self):
        return self.nodes.size


def nearest_divisor(n, m):
    """Divisor of ``n`` closest to ``m`` (ties go to the smaller one)."""
    best = 1
    for d in range(1, int(math.isqrt(n)) + 1):
        if n % d == 0:
            for c in (d, n // d):
                if abs(c - m) < abs(best - m) or (abs(c - m) == abs(best - m) and c < best):
                    best = c
    return best


def check_bin_count(n_emitters, m):
    if m < 1 or m > n_emitters:
        raise BadBinCount(f"bin count {m} outside [1, {n_emitters}]", nearest_divisor(n_emitters, m))
    if n_emitters % m:
        s = nearest_divisor(n_emitters, m)
        raise BadBinCount(f"m={m} does not divide N={n_emitters}; nearest valid m is {s}", s)


def _rng(seed, ensemble_id):
    # Philox is counter based: the draw for bin p is fixed by (seed, ensemble, p)
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(ensemble_id)])
    return np.random.Generator(np.random.Philox(ss))


def draw_positions(spec: EnsembleSpec, count, seed, ensemble_id=0):
    lo, hi = spec.extent()
    if spec.delta_z == 0:
        return np.full(count, spec.center, dtype=float)
    if spec.placement == "equal":
        return lo + np.arange(1, count + 1) * (spec.delta_z / count)
    if spec.placement == "explicit":
        pos = spec.positions
        if pos.size != count:
            raise BadBinCount(f"{pos.size} explicit positions but m={count}")
        return pos.copy()
    return lo + spec.delta_z * _rng(seed, ensemble_id).random(count)


def build_bins(spec: EnsembleSpec, m: int, seed: int = 0, ensemble_id: int = 0) -> BinnedLayout:
    """Split one ensemble into ``m`` positional bins of ``N/m`` emitters each."""
    check_bin_count(spec.n_emitters, m)
    if spec.delta_z > 0 and m < 100:
        logger.warning("only %d positional bins for a finite extent; 100 or more advised", m)
    pos = draw_positions(spec, m, seed, ensemble_id)
    n = spec.n_emitters // m
    return BinnedLayout(
        positions=pos,
        bin_weight=np.full(m, float(n)),
        ensemble_id=np.zeros(m, dtype=int),
        detuning_offset=np.full(m, float(spec.detuning_offset)),
        ensembles=(spec,),
    )


def concat_layouts(parts: Sequence[BinnedLayout]) -> BinnedLayout:
    ens, ids = [], []
    for part in parts:
        ids.append(part.ensemble_id + len(ens))
        ens.extend(part.ensembles)
    return BinnedLayout(
        positions=np.concatenate([p.positions for p in parts]),
        bin_weight=np.concatenate([p.bin_weight for p in parts]),
        ensemble_id=np.concatenate(ids),
        detuning_offset=np.concatenate([p.detuning_offset for p in parts]),
        ensembles=tuple(ens),
    )


def sample_frequencies(line: SpectralLine, n_f: int) -> FrequencyGrid:
    """Equal-weight quantile nodes ``F^-1((q - 1/2)/n_f)``.

    Lorentzian lines are truncated to the central 99.8 % of their mass.
    """
    if n_f < 2:
        raise ValueError("need at least two frequency nodes")
    u = (np.arange(1, n_f + 1) - 0.5) / n_f
    if line.kind == "lorentzian":
        a, b = LORENTZ_TRUNCATION
        u = a + (b - a) * u
    nodes = np.asarray(line.quantile(u), dtype=float)
    if line.is_even:
        # enforce exact mirror symmetry of the node set
        nodes = 0.5 * (nodes - nodes[::-1])
    return FrequencyGrid(nodes=nodes, weights=np.full(n_f, 1.0 / n_f))


def compensation_detuning(spec: EnsembleSpec):
    """Perturbative shift of the collective line, ``-(N Gamma_1D / 2)(nu / 3)``."""
    return -0.5 * spec.n_emitters * spec.gamma_1d * spec.nu / 3.0


@dataclass(frozen=True, eq=False)
class CqedLayout:
    """Mirror, qubit, mirror; the mirrors sit ``1/2 + r`` wavelengths apart."""

    mirror1: EnsembleSpec
    qubit: EnsembleSpec
    mirror2: EnsembleSpec
    r: int
    layout: BinnedLayout

    @property
    def separation(self):
        return 0.5 + self.r

    @property
    def qubit_id(self):
        return 1

    @property
    def qubit_bins(self):
        return self.layout.bins_of(self.qubit_id)


def build_cqed_layout(
    mirror: EnsembleSpec,
    qubit: EnsembleSpec,
    r: int = 0,
    m_per_ensemble: int = 1000,
    seed: int = 0,
    compensate: bool = True,
    compensation: str = "difference",
) -> CqedLayout:
    """Assemble the composite cavity: mirrors at 0 and 1/2 + r, qubit midway.

    ``compensation='difference'`` shifts the qubit by the difference of the
    two collective line shifts; ``'qubit'`` cancels only the qubit's own shift.
    """
    if r < 0:
        raise ValueError("r must be a non-negative integer")
    sep = 0.5 + r
    m1 = mirror.with_(center=0.0, role="mirror")
    m2 = mirror.with_(center=sep, role="mirror")
    offset = qubit.detuning_offset
    if compensate:
        if compensation == "difference":
            offset += compensation_detuning(mirror) - compensation_detuning(qubit)
        elif compensation == "qubit":
            offset -= compensation_detuning(qubit)
        else:
            raise ValueError(f"unknown compensation mode {compensation!r}")
    q = qubit.with_(center=0.5 * sep, role="qubit", detuning_offset=offset)
    spans = sorted((e.extent() for e in (m1, q, m2)))
    for (a0, a1), (b0, b1) in zip(spans[:-1], spans[1:]):
        if b0 < a1:
            raise OverlapError("ensemble supports overlap; reduce delta_z or raise r")
    parts = [build_bins(e, m_per_ensemble, seed, k) for k, e in enumerate((m1, q, m2))]
    return CqedLayout(mirror1=m1, qubit=q, mirror2=m2, r=r, layout=concat_layouts(parts))


def composite_layout(specs: Sequence[EnsembleSpec], m_per_ensemble, seed=0) -> BinnedLayout:
    return concat_layouts([build_bins(e, m_per_ensemble, seed, k) for k, e in enumerate(specs)])
