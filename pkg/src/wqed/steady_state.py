"""Frequency-domain transport through binned ensembles.

For bins with collective coherences ``B_p`` the steady state of the linear
equations of motion reads

    (diag(1/W_p) + M) B = -sqrt(n) * Omega

where ``W_p`` is the response of bin p's line at the drive detuning and ``M``
the waveguide coupling kernel.  Two solvers are provided: a dense
partial-pivot LU (``method='dense'``) and a scattering sweep that treats
each bin as a point scatterer on the waveguide (``method='transfer'``),
which costs O(m) per detuning.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import numpy as np
from scipy import optimize
from scipy.linalg import lapack

from .ensemble import BinnedLayout, CqedLayout, EnsembleSpec, _rng, draw_positions
from .errors import IncompatibleOffsets, InvalidGrid, NoQubit, SingularSystem, SizeLimit, WqedError
from .modes import ModeSet, coupling_matrix
from .spectral import SpectralLine, response

logger = logging.getLogger(__name__)

COND_LIMIT = 1e14
EXACT_LIMIT = 10_000


@dataclass(frozen=True)
class DriveSpec:
    """``forward``: waveguide field from the left; ``backward``: from the right;
    ``side``: uniform-phase illumination of the ``targets`` ensembles only."""

    kind: str = "forward"
    amplitude: float = 1.0
    targets: tuple = ()

    def __post_init__(self):
        if self.kind not in ("forward", "backward", "side"):
            raise ValueError(f"unknown drive kind {self.kind!r}")
        if self.amplitude == 0:
            raise ValueError("drive amplitude must be non-zero")


@dataclass(frozen=True, eq=False)
class SpectrumTrace:
    grid: np.ndarray
    values: np.ndarray
    quantity: str = "t"  # "t" complex transmission, "s" normalized emission
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.grid.size > 1 and np.any(np.diff(self.grid) <= 0):
            raise InvalidGrid("spectrum grid must be strictly increasing")

    @property
    def power(self):
        return np.abs(self.values) ** 2 if self.quantity == "t" else np.asarray(self.values)


def make_grid(spec) -> np.ndarray:
    """Grid from ``(min, max, count)`` or an explicit increasing list."""
    if isinstance(spec, dict):
        spec = (spec["min"], spec["max"], spec["count"])
    if isinstance(spec, tuple) and len(spec) == 3:
        lo, hi, count = spec
        count = int(count)
        if count < 1:
            raise InvalidGrid("grid count must be positive")
        if count == 1:
            return np.array([float(lo)])
        if not hi > lo:
            raise InvalidGrid("grid max must exceed min")
        return np.linspace(float(lo), float(hi), count)
    grid = np.atleast_1d(np.asarray(spec, dtype=float))
    if grid.ndim != 1 or grid.size == 0:
        raise InvalidGrid("grid must be a non-empty list")
    if np.any(np.diff(grid) <= 0):
        raise InvalidGrid("grid must be strictly increasing")
    return grid


def reference_rate(layout: BinnedLayout):
    return layout.ensembles[0].gamma_1d


def bin_inverse_response(layout: BinnedLayout, delta_c, responses=None):
    """``1/W_p`` for every bin, shape ``(len(delta_c), m)``.

    ``responses`` optionally maps ensemble index to a callable returning
    ``W`` at the shifted detunings, to substitute a discretized line.
    """
    dc = np.atleast_1d(np.asarray(delta_c, dtype=float))
    out = np.empty((dc.size, layout.m), dtype=complex)
    keys = np.stack([layout.ensemble_id.astype(float), layout.detuning_offset], axis=1)
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    for u, (eid, off) in enumerate(uniq):
        ens = layout.ensembles[int(eid)]
        if responses is not None and int(eid) in responses:
            w = responses[int(eid)](dc - off)
        else:
            w = response(ens.line, dc - off, ens.gamma_prime)
        out[:, inv == u] = (1.0 / np.asarray(w, dtype=complex))[:, None]
    return out


def drive_vector(layout: BinnedLayout, drive: DriveSpec):
    """Right-hand side ``sqrt(n_p) * Omega_p``."""
    n = layout.bin_weight
    if drive.kind == "side":
        mask = np.isin(layout.ensemble_id, list(drive.targets))
        if not mask.any():
            raise NoQubit("side illumination has no target bins")
        omega = np.where(mask, drive.amplitude, 0.0).astype(complex)
    else:
        sign = 1.0 if drive.kind == "forward" else -1.0
        scale = np.sqrt(layout.gamma_1d / reference_rate(layout))
        omega = drive.amplitude * scale * np.exp(sign * 1j * layout.beta * layout.positions)
    return np.sqrt(n) * omega


def solve_linear_response(matrix: np.ndarray, inv_w: np.ndarray, rhs: np.ndarray):
    """Solve ``(diag(inv_w) + matrix) B = -rhs`` with a conditioned LU."""
    a = matrix + np.diag(inv_w)
    anorm = np.linalg.norm(a, 1)
    lu, piv, info = lapack.zgetrf(a)
    if info > 0:
        raise SingularSystem("exactly singular linear-response matrix")
    rcond, _ = lapack.zgecon(lu, anorm, norm="1")
    if rcond == 0 or 1.0 / rcond > COND_LIMIT:
        raise SingularSystem(f"condition estimate {1.0 / max(rcond, 1e-300):.3g} exceeds {COND_LIMIT:g}")
    sol, info = lapack.zgetrs(lu, piv, -rhs)
    logger.debug("linear response solved, condition estimate %.3g", 1.0 / rcond)
    return sol


def scatter_fields(layout: BinnedLayout, inv_w: np.ndarray, direction=1):
    """Waveguide transmission and local fields from a point-scatterer sweep.

    ``inv_w`` has shape ``(k, m)``.  For unit incident amplitude travelling in
    ``direction`` (+1 from the left, -1 from the right) returns the
    transmission ``t`` (length k) and the total field at every bin
    ``(k, m)``, with the incident field ``exp(+-i beta z)``.
    """
    inv_w = np.atleast_2d(inv_w)
    z = direction * layout.positions
    order = np.argsort(z, kind="stable")
    coupling = layout.bin_weight * layout.gamma_1d
    # an exactly resonant lossless bin is a perfect mirror; keep it finite
    tiny = 1e-150 * coupling.max()
    inv_w = np.where(inv_w == 0, tiny, inv_w)
    a = -0.5j * coupling[None, :] / inv_w  # scattering strength of each bin
    k = inv_w.shape[0]
    right = np.ones(k, dtype=complex)
    left = np.zeros(k, dtype=complex)
    fields = np.empty_like(inv_w)
    beta = layout.beta
    for p in order[::-1]:
        e = np.exp(1j * beta * z[p])
        phi = right * e + left / e
        fields[:, p] = phi
        right = right - a[:, p] * phi / e
        left = left + a[:, p] * phi * e
    t = 1.0 / right
    return t, fields * t[:, None]


def solve_collective_steady(
    layout: BinnedLayout,
    delta_c,
    drive: DriveSpec = DriveSpec(),
    method="dense",
    matrix=None,
    responses=None,
):
    """Collective coherences ``B_p`` at one detuning (or a grid, transfer only)."""
    inv_w = bin_inverse_response(layout, delta_c, responses)
    if method == "dense":
        if np.ndim(delta_c):
            raise ValueError("dense solve takes one detuning at a time")
        mat = coupling_matrix(layout).matrix if matrix is None else matrix
        return solve_linear_response(mat, inv_w[0], drive_vector(layout, drive))
    if method != "transfer":
        raise ValueError(f"unknown method {method!r}")
    w = 1.0 / inv_w
    root_n = np.sqrt(layout.bin_weight)
    if drive.kind == "side":
        raise ValueError("side illumination coherences need the dense route")
    direction = 1 if drive.kind == "forward" else -1
    _, fields = scatter_fields(layout, inv_w, direction)
    scale = np.sqrt(layout.gamma_1d / reference_rate(layout))
    out = -root_n * w * scale * drive.amplitude * fields
    return out if np.ndim(delta_c) else out[0]


def transmission_input_output(b, layout: BinnedLayout, drive: DriveSpec = DriveSpec()):
    """``t = 1 + (i sqrt(G_ref) / 2 Omega) sum_p sqrt(n_p G_p) exp(-i beta z_p) B_p``."""
    if drive.kind != "forward":
        raise ValueError("input-output transmission needs a forward waveguide drive")
    amp = np.sqrt(layout.bin_weight * layout.gamma_1d)
    phase = np.exp(-1j * layout.beta * layout.positions)
    coef = 0.5j * math.sqrt(reference_rate(layout)) / drive.amplitude
    return 1.0 + coef * np.sum(amp * phase * np.asarray(b), axis=-1)


def transmission_product(modes: ModeSet, line: SpectralLine, gamma_prime, grid, offset=0.0):
    """Transmission as the product over collective modes of ``1 / (1 + L W)``."""
    grid = make_grid(grid) if not isinstance(grid, np.ndarray) else grid
    w = np.asarray(response(line, grid - offset, gamma_prime), dtype=complex).reshape(-1)
    lam = np.asarray(modes.eigenvalues, dtype=complex)
    if lam.size == 0:
        vals = np.ones_like(w)
    else:
        vals = np.exp(-np.sum(np.log1p(w[:, None] * lam[None, :]), axis=1))
    return SpectrumTrace(grid=np.asarray(grid, dtype=float), values=vals, quantity="t",
                         metadata={"method": f"product/{modes.method}"})


def check_uniform_response(layout: BinnedLayout):
    if np.unique(layout.detuning_offset).size > 1:
        raise IncompatibleOffsets("bins carry different detuning offsets; use the input-output route")
    lines = {(id(e.line), e.gamma_prime, e.gamma_1d) for e in layout.ensembles}
    if len(lines) > 1:
        raise IncompatibleOffsets("bins carry different responses; use the input-output route")


def _trace_metadata(layout, method, extra=None):
    meta = {"method": method, "m": int(layout.m), "n_emitters": layout.n_emitters()}
    if extra:
        meta.update(extra)
    return meta


def spectrum_scan(
    layout: BinnedLayout,
    grid,
    drive: DriveSpec = DriveSpec(),
    method="auto",
    threads=1,
    port="right",
    metadata=None,
) -> SpectrumTrace:
    """Transmission (forward drive) or emitted power (side drive) over a grid."""
    grid = make_grid(grid)
    if method == "auto":
        method = "transfer" if layout.m > 200 or grid.size > 50 else "dense"
    started = time.perf_counter()
    if drive.kind == "side":
        values = _side_emission(layout, grid, drive, method, port, threads)
        quantity = "s"
    elif method == "transfer":
        inv_w = bin_inverse_response(layout, grid)
        t, _ = scatter_fields(layout, inv_w, 1 if drive.kind == "forward" else -1)
        values, quantity = t, "t"
    else:
        mat = coupling_matrix(layout).matrix
        rhs = drive_vector(layout, drive)

        def one(dc):
            try:
                inv_w = bin_inverse_response(layout, dc)[0]
                b = solve_linear_response(mat, inv_w, rhs)
            except WqedError as exc:
                raise type(exc)(f"{exc} (at delta_c={dc!r})") from exc
            return transmission_input_output(b, layout, DriveSpec("forward", drive.amplitude))

        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                values = np.array(list(pool.map(one, grid)))
        else:
            values = np.array([one(dc) for dc in grid])
        quantity = "t"
    meta = _trace_metadata(layout, method, metadata)
    meta["wall_time_s"] = time.perf_counter() - started
    return SpectrumTrace(grid=grid, values=np.asarray(values), quantity=quantity, metadata=meta)


def _side_emission(layout, grid, drive, method, port, threads):
    """Amplitude radiated into the waveguide port(s) under side illumination."""
    targets = np.isin(layout.ensemble_id, list(drive.targets))
    if not targets.any():
        raise NoQubit("no qubit bins to illuminate")
    amp = np.sqrt(layout.bin_weight * layout.gamma_1d)
    coef = 0.5j * math.sqrt(reference_rate(layout)) / drive.amplitude
    ports = {"right": (-1,), "left": (1,), "both": (-1, 1)}[port]
    if method == "transfer":
        inv_w = bin_inverse_response(layout, grid)
        w = 1.0 / inv_w
        power = np.zeros(grid.size)
        src = np.where(targets, np.sqrt(layout.bin_weight) * drive.amplitude, 0.0)
        for sign in ports:
            # reciprocity: emission towards a port equals the response to a wave entering from it
            _, fields = scatter_fields(layout, inv_w, sign)
            y = amp * w * fields
            emitted = -coef * np.sum(src * y, axis=1)
            power += np.abs(emitted) ** 2
        return power
    mat = coupling_matrix(layout).matrix
    rhs = drive_vector(layout, drive)

    def one(dc):
        b = solve_linear_response(mat, bin_inverse_response(layout, dc)[0], rhs)
        return sum(abs(coef * np.sum(amp * np.exp(s * 1j * layout.beta * layout.positions) * b)) ** 2
                   for s in ports)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return np.array(list(pool.map(one, grid)))
    return np.array([one(dc) for dc in grid])


def side_illumination_spectrum(cqed, grid, method="transfer", port="right", normalize=True,
                               threads=1) -> SpectrumTrace:
    """Power emitted into the waveguide when only the qubit ensemble is driven.

    Normalized to the maximum on the grid unless ``normalize`` is false.
    """
    layout = cqed.layout if isinstance(cqed, CqedLayout) else cqed
    qubits = layout.role_ids("qubit")
    if not qubits:
        raise NoQubit("layout has no ensemble tagged as qubit")
    trace = spectrum_scan(layout, grid, DriveSpec("side", 1.0, tuple(qubits)), method=method,
                          port=port, threads=threads)
    s = trace.values
    if normalize and s.max() > 0:
        s = s / s.max()
    trace.metadata["port"] = port
    return SpectrumTrace(grid=trace.grid, values=s, quantity="s", metadata=trace.metadata)


def sample_emitters(spec: EnsembleSpec, seed, ensemble_id=0):
    """Individually placed emitters and detunings for the exact model."""
    z = draw_positions(spec, spec.n_emitters, seed, ensemble_id)
    u = _rng(seed, ensemble_id + 1_000_003).random(spec.n_emitters)
    return z, np.asarray(spec.line.quantile(u), dtype=float)


def exact_steady_transmission(spec: EnsembleSpec, seed, grid, method="transfer") -> SpectrumTrace:
    """Transmission through ``N`` individually resolved emitters.

    Every emitter gets its own position and detuning and a Lorentzian
    response of width ``gamma_prime``; no binning is involved.
    """
    if spec.n_emitters > EXACT_LIMIT:
        raise SizeLimit(f"exact model limited to {EXACT_LIMIT} emitters")
    grid = make_grid(grid)
    z, det = sample_emitters(spec, seed)
    single = spec.with_(n_emitters=1, line=SpectralLine.lorentzian(1.0))
    layout = BinnedLayout(positions=z, bin_weight=np.ones(z.size), ensemble_id=np.zeros(z.size, int),
                          detuning_offset=np.zeros(z.size), ensembles=(single,))
    zeta = grid[:, None] + 0.5j * spec.gamma_prime
    inv_w = zeta - det[None, :]
    if method == "transfer":
        t, _ = scatter_fields(layout, inv_w, 1)
    elif method == "dense":
        mat = coupling_matrix(layout).matrix
        rhs = drive_vector(layout, DriveSpec())
        t = np.array([transmission_input_output(solve_linear_response(mat, iw, rhs), layout)
                      for iw in inv_w])
    else:
        raise ValueError(f"unknown method {method!r}")
    return SpectrumTrace(grid=grid, values=t, quantity="t",
                         metadata={"method": f"exact/{method}", "seed": int(seed),
                                   "n_emitters": spec.n_emitters})


def find_peaks_quadratic(grid, values):
    """Local maxima refined by a parabola through each grid maximum and its neighbours.

    Returns arrays of peak positions and heights, highest first.
    """
    y = np.asarray(values, dtype=float)
    x = np.asarray(grid, dtype=float)
    idx = np.nonzero((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:]))[0] + 1
    pos, height = [], []
    for i in idx:
        y0, y1, y2 = y[i - 1], y[i], y[i + 1]
        denom = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
        shift = float(np.clip(shift, -1.0, 1.0))
        h = x[i + 1] - x[i] if shift >= 0 else x[i] - x[i - 1]
        pos.append(x[i] + shift * h)
        height.append(y1 - 0.25 * (y0 - y2) * shift)
    order = np.argsort(height)[::-1]
    return np.asarray(pos)[order], np.asarray(height)[order]


@dataclass(frozen=True)
class Doublet:
    left: float
    right: float
    splitting: float
    peak_to_valley: float


def resolve_doublet(grid, values, min_prominence=0.05):
    """The two dominant peaks of a spectrum and their peak-to-valley ratio.

    Peaks lower than ``min_prominence`` of the maximum are ignored.  Returns
    ``None`` if fewer than two peaks remain.
    """
    from scipy.signal import find_peaks

    y = np.asarray(values, dtype=float)
    x = np.asarray(grid, dtype=float)
    idx, props = find_peaks(y, prominence=min_prominence * y.max())
    if idx.size < 2:
        return None
    top = np.sort(idx[np.argsort(props["prominences"])[::-1][:2]])
    i, j = top
    valley = y[i : j + 1].min()
    pos, _ = find_peaks_quadratic(x[i - 1 : i + 2], y[i - 1 : i + 2])
    left = pos[0] if pos.size else x[i]
    pos, _ = find_peaks_quadratic(x[j - 1 : j + 2], y[j - 1 : j + 2])
    right = pos[0] if pos.size else x[j]
    ratio = min(y[i], y[j]) / valley if valley > 0 else math.inf
    return Doublet(left=float(left), right=float(right), splitting=float(right - left),
                   peak_to_valley=float(ratio))


def fit_dip_linewidth(grid, power, guess_center, guess_width):
    """Fit ``|x - a|^2 / |x - b|^2`` to a transmission dip; returns ``(Re b, Im b)``.

    ``Im b`` is the half linewidth of the dip.
    """
    x = np.asarray(grid, dtype=float)
    y = np.asarray(power, dtype=float)
    scale = guess_width

    def model(p):
        a = complex(p[0], p[1]) * scale
        b = complex(p[2], p[3]) * scale
        return np.abs(x - a) ** 2 / np.abs(x - b) ** 2

    p0 = [guess_center / scale, 0.1, guess_center / scale, 1.0]
    res = optimize.least_squares(lambda p: model(p) - y, p0, x_scale="jac")
    return res.x[2] * scale, abs(res.x[3]) * scale


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def narrow_feature_mask(values, threshold=0.02):
    """False at samples inside features narrower than two grid steps.

    A sample is flagged when it departs from the mean of its neighbours by
    more than ``threshold``; the flagged sample and both neighbours are
    excluded.
    """
    y = np.asarray(values, dtype=float)
    mask = np.ones(y.size, dtype=bool)
    if y.size < 3:
        return mask
    spike = np.abs(y[1:-1] - 0.5 * (y[:-2] + y[2:]))
    bad = np.nonzero(spike > threshold)[0] + 1
    for k in (-1, 0, 1):
        mask[np.clip(bad + k, 0, y.size - 1)] = False
    return mask


def rms_difference(a, b, mask=None):
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if mask is not None:
        d = d[mask]
    return float(np.sqrt(np.mean(d * d))) if d.size else math.nan
