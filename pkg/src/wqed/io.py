"""CSV traces, JSON sidecars and gnuplot scripts.

Floats are written with ``repr`` so identical runs give identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .dynamics import TimeTrace
from .modes import ModeSet
from .steady_state import SpectrumTrace

TWO_PI = 2.0 * math.pi


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, header, columns):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = zip(*columns)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])
    return path


def read_csv(path):
    """Header and float columns of a file written by :func:`write_csv`."""
    with Path(path).open() as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    cols = {h: np.array([float(r[i]) for r in rows[1:]]) for i, h in enumerate(header)}
    return header, cols


def spectrum_columns(trace: SpectrumTrace, scale=TWO_PI):
    """Detuning divided by ``scale`` plus either t components or normalized emission."""
    x = trace.grid / scale
    if trace.quantity == "t":
        t = np.asarray(trace.values, dtype=complex)
        return ["delta_hz", "re_t", "im_t", "abs_t2"], [x, t.real, t.imag, np.abs(t) ** 2]
    return ["delta_hz", "s_norm"], [x, np.asarray(trace.values, dtype=float)]


def write_spectrum(path, trace: SpectrumTrace, scale=TWO_PI):
    header, cols = spectrum_columns(trace, scale)
    return write_csv(path, header, cols)


def modes_columns(modes: ModeSet, scale=TWO_PI):
    lam = modes.eigenvalues
    k = modes.wavenumbers if modes.wavenumbers is not None else np.full(lam.size, np.nan + 0j)
    return (["mu", "re_lambda_hz", "im_lambda_hz", "re_k", "im_k", "method"],
            [np.arange(lam.size), lam.real / scale, lam.imag / scale, k.real, k.imag, [modes.method] * lam.size])


def write_modes(path, sets, scale=TWO_PI):
    """Stack one or more mode sets into a single CSV."""
    sets = [sets] if isinstance(sets, ModeSet) else list(sets)
    cols = None
    for ms in sets:
        header, c = modes_columns(ms, scale)
        cols = [list(x) for x in c] if cols is None else [a + list(b) for a, b in zip(cols, c)]
    return write_csv(path, header, cols)


def write_time_trace(path, trace: TimeTrace, gamma_1d, scale=TWO_PI):
    """Columns ``t_s`` (physical time), ``t_gamma1d`` and ``p_norm``.

    With ``scale == 1`` the internal time is already in units of ``1/gamma_1d``.
    """
    t = trace.times
    t_phys = t if scale != 1.0 else t / gamma_1d
    return write_csv(path, ["t_s", "t_gamma1d", "p_norm"], [t_phys, t * gamma_1d, np.real(trace.values)])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, payload, timestamp=True):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = _jsonable(dict(payload))
    if timestamp:
        data["timestamp"] = datetime.now(timezone.utc).isoformat()
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def write_gnuplot(csv_path, header, x_col=1, y_cols=None, title=""):
    """Ready-to-run script plotting the CSV next to it into a PNG."""
    csv_path = Path(csv_path)
    y_cols = y_cols or list(range(2, len(header) + 1))
    script = csv_path.with_suffix(".gp")
    plots = ", ".join(
        f"'{csv_path.name}' using {x_col}:{c} with lines title '{header[c - 1]}'" for c in y_cols
    )
    script.write_text(
        "set datafile separator ','\n"
        "set key autotitle columnhead\n"
        "set terminal pngcairo size 900,600\n"
        f"set output '{csv_path.with_suffix('.gp.png').name}'\n"
        f"set title '{title}'\n"
        f"set xlabel '{header[x_col - 1]}'\n"
        f"plot {plots}\n"
    )
    return script
