"""Time-domain evolution of the low-intensity equations over position and frequency bins.

The state is ``x[p, q] = sqrt(n_p w_q) sigma[p, q]``, the collective
coherence of the ``n_p w_q`` emitters of bin p sitting at frequency node q.
In these variables

    dx/dt = (i(dc - D_q - off_p) - G'_p/2) x
            - (c_pq / 2) sum_p' exp(i beta |z_p - z_p'|) sum_q' c_p'q' x_p'q'
            + i sqrt(n_p w_q) Omega_p

with ``c_pq = sqrt(n_p G_p w_q)``.  The sum over p' is applied with prefix
sums over sorted positions, so one evaluation costs O(m n_f).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.integrate import RK45

from .ensemble import BinnedLayout, CqedLayout, FrequencyGrid, sample_frequencies
from .errors import NoQubit, SizeLimit, StepFailure
from .steady_state import DriveSpec, drive_vector, solve_collective_steady

logger = logging.getLogger(__name__)

DIM_LIMIT = 1_000_000

# Dormand-Prince 5(4) tableau and its continuous extension
_C = RK45.C
_A = RK45.A
_B = RK45.B
_E = RK45.E
_P = RK45.P


@dataclass(frozen=True, eq=False)
class LinearGenerator:
    layout: BinnedLayout
    nodes: np.ndarray  # (m, n_f) emitter detunings including bin offsets
    weights: np.ndarray  # (m, n_f)
    diag: np.ndarray  # (m, n_f)
    coupling: np.ndarray  # (m, n_f) c_pq
    source: np.ndarray  # (m, n_f) constant drive term
    delta_c: float = 0.0

    @property
    def shape(self):
        return self.diag.shape

    @property
    def dim(self):
        return self.diag.size

    def kernel(self, u):
        """``y_p = sum_p' exp(i beta |z_p - z_p'|) u_p'`` in O(m)."""
        z = self.layout.positions
        order = np.argsort(z, kind="stable")
        zs = z[order]
        us = u[order]
        e = np.exp(1j * self.layout.beta * zs)
        lower = np.cumsum(us / e)  # p' <= p
        upper = np.cumsum((us * e)[::-1])[::-1]  # p' >= p
        ys = e * lower + (upper - us * e) / e
        out = np.empty_like(ys)
        out[order] = ys
        return out

    def apply(self, x, driven=True):
        x = x.reshape(self.shape)
        u = np.sum(self.coupling * x, axis=1)
        dx = self.diag * x - 0.5 * self.coupling * self.kernel(u)[:, None]
        if driven:
            dx = dx + self.source
        return dx

    def dense(self):
        """Full matrix of the homogeneous part (small systems only)."""
        if self.dim > 4000:
            raise SizeLimit("dense generator limited to 4000 states")
        z = self.layout.positions
        g = np.exp(1j * self.layout.beta * np.abs(z[:, None] - z[None, :]))
        c = self.coupling
        m, nf = self.shape
        big = -0.5 * (c.reshape(m, nf, 1, 1) * g.reshape(m, 1, m, 1) * c.reshape(1, 1, m, nf))
        big = big.reshape(m * nf, m * nf)
        big[np.diag_indices_from(big)] += self.diag.reshape(-1)
        return big

    def bin_projection(self, x):
        """Bin coherences ``B_p = sum_q sqrt(w_q) x_pq``."""
        return np.sum(np.sqrt(self.weights) * x.reshape(self.shape), axis=1)

    def discrete_response(self, ensemble):
        """Response of the node set of one ensemble, a callable of the bin detuning."""
        bins = self.layout.bins_of(ensemble)
        p = bins[0]
        off = self.layout.detuning_offset[p]
        det = self.nodes[p] - off
        w = self.weights[p]
        gp = self.layout.ensembles[ensemble].gamma_prime

        def resp(delta):
            delta = np.atleast_1d(np.asarray(delta, dtype=float))
            return np.sum(w[None, :] / (delta[:, None] - det[None, :] + 0.5j * gp), axis=1)

        return resp

    def steady_state(self, drive: DriveSpec):
        """Stationary state from the frequency-domain solve with this node set."""
        lay = self.layout
        responses = {k: self.discrete_response(k) for k in range(len(lay.ensembles))}
        b = solve_collective_steady(lay, self.delta_c, drive, method="dense", responses=responses)
        omega = drive_vector(lay, drive) / np.sqrt(lay.bin_weight)
        field = 0.5j * np.sqrt(lay.gamma_1d) * self.kernel(np.sqrt(lay.bin_weight * lay.gamma_1d) * b)
        gp = lay.gamma_prime[:, None]
        w_pq = 1.0 / (self.delta_c - self.nodes + 0.5j * gp)
        sigma = -w_pq * (omega[:, None] + field[:, None])
        return np.sqrt(lay.bin_weight[:, None] * self.weights) * sigma


def assemble_generator(
    layout: BinnedLayout,
    grids: Mapping[int, FrequencyGrid] | Sequence[FrequencyGrid] | None = None,
    n_f: int = 200,
    drive: DriveSpec | None = None,
    delta_c: float = 0.0,
    dim_limit: int = DIM_LIMIT,
) -> LinearGenerator:
    """Build the generator; ``grids`` default to quantile nodes of each line."""
    n_ens = len(layout.ensembles)
    if grids is None:
        grids = [sample_frequencies(e.line, n_f) for e in layout.ensembles]
    elif isinstance(grids, Mapping):
        grids = [grids.get(k) or sample_frequencies(layout.ensembles[k].line, n_f) for k in range(n_ens)]
    sizes = {g.n_f for g in grids}
    if len(sizes) != 1:
        raise ValueError("all ensembles must use the same number of frequency nodes")
    nf = sizes.pop()
    dim = layout.m * nf
    if dim > dim_limit:
        raise SizeLimit(f"generator dimension {dim} exceeds limit {dim_limit}")
    node_tab = np.stack([g.nodes for g in grids])
    weight_tab = np.stack([g.weights for g in grids])
    eid = layout.ensemble_id
    nodes = node_tab[eid] + layout.detuning_offset[:, None]
    weights = weight_tab[eid]
    gp = layout.gamma_prime[:, None]
    diag = 1j * (delta_c - nodes) - 0.5 * gp
    n = layout.bin_weight[:, None]
    coupling = np.sqrt(n * layout.gamma_1d[:, None] * weights)
    if drive is None:
        source = np.zeros_like(diag)
    else:
        omega = drive_vector(layout, drive) / np.sqrt(layout.bin_weight)
        source = 1j * np.sqrt(n * weights) * omega[:, None]
    return LinearGenerator(layout=layout, nodes=nodes, weights=weights, diag=diag,
                           coupling=coupling, source=source, delta_c=float(delta_c))


@dataclass(frozen=True, eq=False)
class TimeTrace:
    times: np.ndarray
    values: np.ndarray
    initial: str = ""
    stats: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


@dataclass
class IntegratorStats:
    steps: int = 0
    rejected: int = 0
    fev: int = 0
    error_estimate: float = 0.0  # sum of local error norms (2-norm of the state)
    norms: list = field(default_factory=list)


def _initial_step(fun, t0, y0, f0, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = np.linalg.norm(y0 / scale) / math.sqrt(y0.size)
    d1 = np.linalg.norm(f0 / scale) / math.sqrt(y0.size)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = fun(t0 + h0, y0 + h0 * f0)
    d2 = np.linalg.norm((f1 - f0) / scale) / math.sqrt(y0.size) / h0
    h1 = max(1e-6, h0 * 1e-3) if max(d1, d2) <= 1e-15 else (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def dopri5(fun, y0, t_eval, rtol=1e-8, atol=1e-10, max_steps=200_000, on_step=None):
    """Adaptive Dormand-Prince 5(4) with dense output at ``t_eval``.

    Returns ``(states, stats)`` with one row per requested time.  ``on_step``
    is called with ``(t, y)`` after every accepted step.
    """
    if not (1e-12 <= rtol <= 1e-3):
        raise ValueError("rtol must lie in [1e-12, 1e-3]")
    t_eval = np.asarray(t_eval, dtype=float)
    y = np.asarray(y0, dtype=complex).copy()
    t = float(t_eval[0])
    t_end = float(t_eval[-1])
    stats = IntegratorStats()
    out = np.empty((t_eval.size, y.size), dtype=complex)
    out[0] = y
    nxt = 1
    if t_eval.size == 1:
        return out, stats
    f = fun(t, y)
    stats.fev += 1
    h = _initial_step(fun, t, y, f, rtol, atol)
    stats.fev += 1
    k = np.empty((7, y.size), dtype=complex)
    while t < t_end:
        if stats.steps + stats.rejected >= max_steps:
            raise StepFailure(f"step budget of {max_steps} exhausted", t_reached=t)
        h = min(h, t_end - t)
        if h < 10 * np.spacing(max(abs(t), 1e-300)):
            raise StepFailure(f"step size underflow at t={t:.6g}", t_reached=t)
        k[0] = f
        for i in range(1, 6):
            dy = np.dot(_A[i, :i], k[:i])
            k[i] = fun(t + _C[i] * h, y + h * dy)
        y_new = y + h * np.dot(_B, k[:6])
        f_new = fun(t + h, y_new)
        k[6] = f_new
        stats.fev += 6
        local = h * np.dot(_E, k)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.linalg.norm(local / scale) / math.sqrt(y.size)
        if err > 1.0:
            stats.rejected += 1
            h *= max(0.2, 0.9 * err ** -0.2)
            continue
        t_new = t + h
        q = None
        while nxt < t_eval.size and t_eval[nxt] <= t_new:
            theta = (t_eval[nxt] - t) / h
            if q is None:
                q = k.T @ _P
            powers = np.cumprod(np.full(_P.shape[1], theta))
            out[nxt] = y + h * (q @ powers)
            nxt += 1
        stats.steps += 1
        stats.error_estimate += float(np.linalg.norm(local))
        t, y, f = t_new, y_new, f_new
        if on_step is not None:
            on_step(t, y)
        h *= min(10.0, 0.9 * err ** -0.2) if err > 0 else 10.0
    if nxt < t_eval.size:
        out[nxt:] = y
    return out, stats


def evolve(
    gen: LinearGenerator,
    initial,
    times,
    rel_tol=1e-8,
    abs_tol=1e-10,
    driven=True,
    observable: Callable | None = None,
    track_norm=False,
    label="",
) -> TimeTrace:
    """Integrate the generator from ``initial`` and sample ``observable`` at ``times``.

    Without an observable the full state is stored (shape ``(len(times), D)``).
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")
    x0 = np.asarray(initial, dtype=complex).reshape(-1)
    if x0.size != gen.dim:
        raise ValueError(f"initial state has size {x0.size}, expected {gen.dim}")

    def fun(t, y):
        return gen.apply(y, driven).reshape(-1)

    norms = []
    hook = (lambda t, y: norms.append((t, float(np.vdot(y, y).real)))) if track_norm else None
    states, stats = dopri5(fun, x0, times, rel_tol, abs_tol, on_step=hook)
    stats.norms = norms
    values = states if observable is None else np.array([observable(s) for s in states])
    info = {"steps": stats.steps, "rejected": stats.rejected, "fev": stats.fev,
            "error_estimate": stats.error_estimate, "rel_tol": rel_tol, "abs_tol": abs_tol}
    if track_norm:
        info["norms"] = norms
    logger.info("integrated %d states: %d steps, %d rejected", gen.dim, stats.steps, stats.rejected)
    return TimeTrace(times=times, values=values, initial=label, stats=info)


def symmetric_state(gen: LinearGenerator, ensemble: int, init="symmetric"):
    """Unit-norm single excitation on one ensemble.

    ``symmetric``: equal amplitude on every emitter, so ``x_pq`` scales with
    ``sqrt(w_q)``; ``uniform``: equal amplitude on every (bin, node) pair.
    """
    bins = gen.layout.bins_of(ensemble)
    x = np.zeros(gen.shape, dtype=complex)
    if init == "symmetric":
        x[bins] = np.sqrt(gen.weights[bins] / bins.size)
    elif init == "uniform":
        x[bins] = 1.0 / math.sqrt(bins.size * gen.shape[1])
    else:
        raise ValueError(f"unknown initial state {init!r}")
    return x


def ensemble_amplitude(gen: LinearGenerator, ensemble: int):
    """Observable ``(1/sqrt(m_e)) sum_p sum_q sqrt(w_q) x_pq`` over one ensemble."""
    bins = gen.layout.bins_of(ensemble)
    proj = np.zeros(gen.shape)
    proj[bins] = np.sqrt(gen.weights[bins]) / math.sqrt(bins.size)
    proj = proj.reshape(-1)
    return lambda x: complex(np.dot(proj, x))


def cavity_amplitude(gen: LinearGenerator, cqed: CqedLayout, kind="cavity"):
    """Observable for a combination of the two mirror coherences.

    With each mirror referred to the propagation phase at its centre,
    ``cavity`` is ``(B_1 - B_2)/sqrt(2)``, the combination that does not
    radiate into the waveguide; ``bright`` is the orthogonal sum.
    """
    if kind not in ("cavity", "bright"):
        raise ValueError(f"unknown mirror combination {kind!r}")
    lay = gen.layout
    ids = [k for k, e in enumerate(lay.ensembles) if e.role == "mirror"]
    if len(ids) != 2:
        raise ValueError("need exactly two mirror ensembles")
    proj = np.zeros(gen.shape, dtype=complex)
    sign = -1.0 if kind == "cavity" else 1.0
    for j, eid in enumerate(ids):
        bins = lay.bins_of(eid)
        centre = lay.ensembles[eid].center
        ref = np.exp(-1j * lay.beta * centre)
        coef = ref * (sign if j else 1.0) / math.sqrt(2.0 * bins.size)
        proj[bins] = coef * np.sqrt(gen.weights[bins])
    proj = proj.reshape(-1)
    return lambda x: complex(np.dot(proj, x))


def rabi_trace(cqed, times, n_f=200, grids=None, rel_tol=1e-7, abs_tol=1e-10, init="symmetric",
               dim_limit=DIM_LIMIT) -> TimeTrace:
    """Normalized qubit population ``P(t)/P(0)`` after exciting the qubit ensemble."""
    layout = cqed.layout if isinstance(cqed, CqedLayout) else cqed
    qubits = layout.role_ids("qubit")
    if not qubits:
        raise NoQubit("layout has no ensemble tagged as qubit")
    q = qubits[0]
    gen = assemble_generator(layout, grids, n_f=n_f, dim_limit=dim_limit)
    x0 = symmetric_state(gen, q, init)
    obs = ensemble_amplitude(gen, q)
    p0 = abs(obs(x0.reshape(-1))) ** 2
    trace = evolve(gen, x0, times, rel_tol, abs_tol, driven=False, observable=obs, label=init)
    p = np.abs(trace.values) ** 2 / p0
    stats = dict(trace.stats)
    # |dP| <= 2 |dB| since |B| <= 1 and the projection has unit norm
    stats["p_error_estimate"] = 2.0 * stats["error_estimate"]
    return TimeTrace(times=trace.times, values=p, initial=init, stats=stats,
                     metadata={"n_f": gen.shape[1], "m": layout.m, "dim": gen.dim})


def oscillation_frequency(times, values, count=2):
    """Frequency (cycles per unit time) from the spacing of the first local minima.

    Minima are refined by a parabola through neighbouring samples.  Needs at
    least two minima; returns ``nan`` otherwise.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    idx = np.nonzero((y[1:-1] < y[:-2]) & (y[1:-1] <= y[2:]))[0] + 1
    mins = []
    for i in idx[: count + 1]:
        y0, y1, y2 = y[i - 1], y[i], y[i + 1]
        denom = y0 - 2 * y1 + y2
        shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
        mins.append(t[i] + shift * (t[i + 1] - t[i]))
    if len(mins) < 2:
        return math.nan
    return 1.0 / float(np.mean(np.diff(mins)))
