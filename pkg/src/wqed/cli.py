"""Command line front end.

    wqed <command> --config run.toml [--set key=value]... [--seed N | --seeds A..B]
                   [--out DIR] [--threads K] [--gnuplot] [--plot]

Every run writes CSV data plus a JSON sidecar; failures print a JSON error
record to stderr and exit with 2 (configuration), 3 (numerical) or 4 (size).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .config import COMMANDS, RunConfig, config_dict, config_hash, get_path, parse_config, with_values
from .cqed import cqed_eigenvalues, reduced_evolve, strong_coupling_report
from .dynamics import oscillation_frequency, rabi_trace
from .ensemble import build_bins, build_cqed_layout, concat_layouts
from .errors import ConfigError, SchemaError, WqedError
from .modes import continuum_modes, layout_modes, perturbative_modes
from .spectral import chi_eval
from .steady_state import (
    SpectrumTrace,
    exact_steady_transmission,
    narrow_feature_mask,
    resolve_doublet,
    rms_difference,
    side_illumination_spectrum,
    spectrum_scan,
)

logger = logging.getLogger("wqed")


@dataclass
class RunOptions:
    out_dir: Path
    threads: int = 1
    gnuplot: bool = False
    plot: bool = False
    base_dir: Path | None = None


@dataclass
class RunResult:
    files: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    trace: SpectrumTrace | None = None


def parse_seeds(seed, seeds):
    if seeds:
        m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", seeds)
        if not m:
            raise ConfigError(f"--seeds expects A..B, got {seeds!r}")
        a, b = int(m.group(1)), int(m.group(2))
        if b < a:
            raise ConfigError("--seeds range is empty")
        return list(range(a, b + 1))
    return [seed] if seed is not None else None


def _unit_label(cfg):
    return "hz" if cfg.units == "hz" else "gamma_1d"


class Runner:
    """Executes one command for one configuration and seed."""

    def __init__(self, cfg: RunConfig, opts: RunOptions):
        self.cfg = cfg
        self.opts = opts
        self.scale = cfg.scale

    def stem(self, command, suffix=""):
        return self.opts.out_dir / f"{self.cfg.output.prefix}{command}{suffix}"

    def run(self, command, seed, suffix=""):
        handler = getattr(self, "cmd_" + command.replace("-", "_"))
        started = time.perf_counter()
        result = handler(seed, suffix)
        meta = {
            "command": command,
            "seed": seed,
            "config_hash": config_hash(self.cfg),
            "config": config_dict(self.cfg),
            "units": _unit_label(self.cfg),
            "wall_time_s": time.perf_counter() - started,
            "summary": result.summary,
            "files": [p.name for p in result.files],
        }
        if result.trace is not None:
            meta["trace"] = {k: v for k, v in result.trace.metadata.items() if k != "wall_time_s"}
        sidecar = io.write_json(self.stem(command, suffix).with_suffix(".json"), meta)
        result.files.append(sidecar)
        return result

    # helpers -----------------------------------------------------------

    def _finish_csv(self, path, header, columns, title, ylabel=None, ycol=None, xcol=0):
        io.write_csv(path, header, columns)
        files = [path]
        if self.opts.gnuplot:
            files.append(io.write_gnuplot(path, header, xcol + 1, [ycol + 1] if ycol else None, title))
        if self.opts.plot:
            from .plotting import plot_spectrum

            y = columns[ycol if ycol is not None else 1]
            files.append(plot_spectrum(path.with_suffix(".png"), columns[xcol], y, ylabel or header[-1],
                                       xlabel=header[xcol]))
        return files

    def _single_ensemble(self):
        specs = self.cfg.build_ensembles(self.opts.base_dir)
        if not specs:
            raise SchemaError("this command needs at least one [[ensembles]] entry", "ensembles")
        return specs

    def _layout(self, seed):
        specs = self._single_ensemble()
        parts = [build_bins(s, self.cfg.numerics.m, seed, k) for k, s in enumerate(specs)]
        return parts[0] if len(parts) == 1 else concat_layouts(parts)

    def _cqed(self, seed):
        if self.cfg.cqed is None:
            raise SchemaError("this command needs a [cqed] section", "cqed")
        c = self.cfg.cqed
        mirror, qubit = self.cfg.build_cqed_specs(self.opts.base_dir)
        return build_cqed_layout(mirror, qubit, r=c.r, m_per_ensemble=self.cfg.numerics.m, seed=seed,
                                 compensate=c.compensate, compensation=c.compensation)

    # commands ----------------------------------------------------------

    def cmd_chi(self, seed, suffix):
        cfg = self.cfg
        line = cfg.build_line(cfg.line or (cfg.ensembles[0].line if cfg.ensembles else None), self.opts.base_dir)
        if cfg.ensembles:
            gp = cfg.ensembles[0].gamma_prime * self.scale
        elif cfg.cqed is not None:
            gp = cfg.cqed.gamma_prime * self.scale
        else:
            gp = 0.0
        grid = cfg.build_grid()
        chi = np.asarray(chi_eval(line, grid, gp).chi, dtype=complex)
        path = self.stem("chi", suffix).with_suffix(".csv")
        files = self._finish_csv(path, ["delta_hz", "re_chi", "im_chi"], [grid / self.scale, chi.real, chi.imag],
                                 "response", "chi", ycol=2)
        return RunResult(files=files, summary={"max_abs_chi": float(np.abs(chi).max())})

    def cmd_modes(self, seed, suffix):
        spec = self._single_ensemble()[0]
        num = self.cfg.numerics
        sets = []
        if num.m <= num.dense_limit:
            sets.append(layout_modes(build_bins(spec, num.m, seed), num.dense_limit))
        if spec.nu > 0:
            sets.append(continuum_modes(spec.n_emitters, spec.gamma_1d, spec.nu, num.mode_count))
            if spec.nu < 1:
                sets.append(perturbative_modes(spec.n_emitters, spec.gamma_1d, spec.nu, num.mode_count - 1))
        path = self.stem("modes", suffix).with_suffix(".csv")
        io.write_modes(path, sets, self.scale)
        files = [path]
        if self.opts.plot:
            from .plotting import plot_modes

            files.append(plot_modes(path.with_suffix(".png"), sets[0].eigenvalues, self.scale))
        if self.opts.gnuplot:
            files.append(io.write_gnuplot(path, ["mu", "re_lambda_hz", "im_lambda_hz"], 2, [3], "modes"))
        total = complex(np.sum(sets[0].eigenvalues)) if sets and sets[0].method == "dense" else None
        summary = {"methods": [s.method for s in sets], "count": sum(len(s) for s in sets)}
        if total is not None:
            summary["trace_sum"] = [total.real / self.scale, total.imag / self.scale]
        return RunResult(files=files, summary=summary)

    def cmd_transmit(self, seed, suffix):
        layout = self._layout(seed)
        trace = spectrum_scan(layout, self.cfg.build_grid(), method=self.cfg.numerics.method,
                              threads=self.opts.threads, metadata={"seed": seed})
        header, cols = io.spectrum_columns(trace, self.scale)
        path = self.stem("transmit", suffix).with_suffix(".csv")
        files = self._finish_csv(path, header, cols, "transmission", "|t|^2", ycol=3)
        p = trace.power
        return RunResult(files=files, summary={"min_abs_t2": float(p.min()), "max_abs_t2": float(p.max())},
                         trace=trace)

    def cmd_oracle_compare(self, seed, suffix):
        spec = self._single_ensemble()[0]
        grid = self.cfg.build_grid()
        exact = exact_steady_transmission(spec, seed, grid)
        binned = spectrum_scan(build_bins(spec, self.cfg.numerics.oracle_m, seed), grid,
                               method=self.cfg.numerics.method)
        a, b = np.abs(exact.values), np.abs(binned.values)
        mask = narrow_feature_mask(a)
        path = self.stem("oracle-compare", suffix).with_suffix(".csv")
        header = ["delta_hz", "abs_t_exact", "abs_t_binned"]
        cols = [grid / self.scale, a, b]
        io.write_csv(path, header, cols)
        files = [path]
        if self.opts.gnuplot:
            files.append(io.write_gnuplot(path, header, 1, [2, 3], "exact vs binned"))
        if self.opts.plot:
            from .plotting import plot_overlay

            files.append(plot_overlay(path.with_suffix(".png"), cols[0], {"exact": a, "binned": b},
                                      header[0], "|t|", markers=("binned",)))
        summary = {"rms": rms_difference(a, b), "rms_masked": rms_difference(a, b, mask),
                   "masked_points": int((~mask).sum())}
        return RunResult(files=files, summary=summary, trace=exact)

    def cmd_cqed_spectrum(self, seed, suffix):
        cq = self._cqed(seed)
        grid = self.cfg.build_grid()
        trace = side_illumination_spectrum(cq, grid, method=self.cfg.numerics.method
                                           if self.cfg.numerics.method != "auto" else "transfer",
                                           port=self.cfg.cqed.port, threads=self.opts.threads)
        path = self.stem("cqed-spectrum", suffix).with_suffix(".csv")
        header, cols = io.spectrum_columns(trace, self.scale)
        files = self._finish_csv(path, header, cols, "side illumination", "S (normalized)")
        d = resolve_doublet(grid / self.scale, trace.values)
        c = self.cfg.cqed
        ev = cqed_eigenvalues(c.n_q, c.n_c, c.gamma_1d, self.cfg.line.gamma_inh)
        summary = {"predicted_splitting": 2 * ev.lambda_plus.real, "regime": ev.regime}
        if d is None:
            summary.update(resolved=False)
        else:
            summary.update(resolved=d.peak_to_valley >= 2.0, splitting=d.splitting,
                           peak_to_valley=d.peak_to_valley, peaks=[d.left, d.right])
        return RunResult(files=files, summary=summary, trace=trace)

    def cmd_rabi(self, seed, suffix):
        cq = self._cqed(seed)
        c, num = self.cfg.cqed, self.cfg.numerics
        s = self.scale
        gamma_1d = c.gamma_1d * s
        gamma_inh = self.cfg.line.gamma_inh * s
        ev = cqed_eigenvalues(c.n_q, c.n_c, gamma_1d, gamma_inh)
        t_max = self.cfg.time.t_max
        if t_max is None:
            split = ev.lambda_plus.real
            t_max = self.cfg.time.periods * math.pi / split if split > 0 else 10.0 / gamma_1d
        times = np.linspace(0.0, t_max, self.cfg.time.count)
        trace = rabi_trace(cq, times, n_f=num.n_f, rel_tol=num.rel_tol, abs_tol=num.abs_tol,
                           init=c.init, dim_limit=num.dim_limit)
        path = self.stem("rabi", suffix).with_suffix(".csv")
        header = ["t_s", "t_gamma1d", "p_norm"]
        t_phys = times if s != 1.0 else times / gamma_1d
        cols = [t_phys, times * gamma_1d, trace.values]
        files = self._finish_csv(path, header, cols, "qubit population", "P", ycol=2)
        freq = oscillation_frequency(times, trace.values)
        summary = {"frequency": freq, "predicted_frequency": 2 * ev.lambda_plus.real / (2 * math.pi),
                   "steps": trace.stats["steps"], "rejected": trace.stats["rejected"],
                   "p_error_estimate": trace.stats["p_error_estimate"]}
        if self.cfg.line.kind == "lorentzian":
            p_red, _ = reduced_evolve(c.n_q, c.n_c, gamma_1d, gamma_inh, times)
            summary["max_dev_reduced"] = float(np.abs(p_red.values - trace.values).max())
        return RunResult(files=files, summary=summary)

    def cmd_report(self, seed, suffix):
        if self.cfg.cqed is None:
            raise SchemaError("report needs a [cqed] section", "cqed")
        c = self.cfg.cqed
        s = self.scale
        rep = strong_coupling_report(c.n_q, c.n_c, c.gamma_1d * s, self.cfg.line.gamma_inh * s, c.delta_z)
        payload = {"hz" if s != 1.0 else "rad": rep.to_dict(unit=s), "gamma_1d": rep.to_dict(unit=c.gamma_1d * s)}
        path = io.write_json(self.stem("report", suffix).with_suffix(".report.json"), payload, timestamp=False)
        return RunResult(files=[path], summary={"splitting": rep.splitting / s, "flags": rep.flags})


def _envelope(runner: Runner, command, traces):
    """Min/max/mean over seeds, written next to the per-seed files."""
    grid = traces[0].grid
    stack = np.array([t.power for t in traces])
    path = runner.stem(command, "_envelope").with_suffix(".csv")
    cols = [grid / runner.scale, stack.min(axis=0), stack.max(axis=0), stack.mean(axis=0)]
    name = "abs_t2" if traces[0].quantity == "t" else "s_norm"
    header = ["delta_hz", f"{name}_min", f"{name}_max", f"{name}_mean"]
    io.write_csv(path, header, cols)
    files = [path]
    if runner.opts.plot:
        from .plotting import plot_spectrum

        files.append(plot_spectrum(path.with_suffix(".png"), cols[0], cols[3], name, band=(cols[1], cols[2])))
    if runner.opts.gnuplot:
        files.append(io.write_gnuplot(path, header, 1, [2, 3, 4], "envelope over seeds"))
    return files


def run_seeds(cfg: RunConfig, command, seeds, opts: RunOptions, suffix=""):
    """Run one command for every seed; returns the list of per-seed results."""
    runner = Runner(cfg, opts)
    if seeds is None:
        return [runner.run(command, cfg.seed, suffix)]
    single = len(seeds) == 1

    def one(seed):
        return runner.run(command, seed, suffix if single else f"{suffix}_seed{seed}")

    if opts.threads > 1 and not single:
        # seeds are independent; each worker writes only its own files
        with ThreadPoolExecutor(opts.threads) as pool:
            results = list(pool.map(one, seeds))
    else:
        results = [one(s) for s in seeds]
    traces = [r.trace for r in results if r.trace is not None]
    if not single and traces and command in ("transmit", "cqed-spectrum"):
        results[0].files.extend(_envelope(runner, command + suffix, traces))
    if not single:
        _seed_summary(runner, command + suffix, seeds, results)
    return results


def _seed_summary(runner, command, seeds, results):
    keys = sorted({k for r in results for k, v in r.summary.items() if isinstance(v, (int, float, bool))})
    cols = [seeds] + [[float(r.summary.get(k, math.nan)) for r in results] for k in keys]
    io.write_csv(runner.stem(command, "_seeds").with_suffix(".csv"), ["seed"] + keys, cols)


def parse_axis(text):
    """``key=start:stop:count[:geom]`` or ``key=v1,v2,...``."""
    if "=" not in text:
        raise ConfigError(f"--axis expects key=spec, got {text!r}")
    key, spec = text.split("=", 1)
    if ":" in spec:
        parts = spec.split(":")
        start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
        geometric = len(parts) > 3 and parts[3].startswith("geom")
        vals = np.geomspace(start, stop, count) if geometric else np.linspace(start, stop, count)
        return key.strip(), [float(v) for v in vals]
    spec = spec.strip()
    return key.strip(), [float(v) for v in spec.split(",")] if spec else []


def run_sweep(cfg: RunConfig, command, seeds, opts: RunOptions, axis=None):
    """One artifact set per axis value plus a summary CSV of scalar observables."""
    if axis is None and cfg.sweep is not None:
        axis = (cfg.sweep.key, cfg.sweep.points())
    if axis is None or not axis[1]:
        return run_seeds(cfg, command, seeds, opts)
    key, values = axis
    base = config_dict(cfg)
    try:
        current = get_path(base, key)
    except (KeyError, IndexError, ValueError):
        raise SchemaError("sweep key not found in configuration", key) from None
    if not isinstance(current, (int, float)) or isinstance(current, bool):
        raise SchemaError("sweep key must reference a numeric value", key)
    rows = []
    all_results = []
    for k, value in enumerate(values):
        v = int(round(value)) if isinstance(current, int) else value
        point = with_values(cfg, **{key: v})
        point = point.model_copy(update={"sweep": None})
        results = run_seeds(point, command, seeds, opts, suffix=f"_p{k:03d}")
        all_results.extend(results)
        for r in results:
            row = {"index": k, key: v}
            row.update({n: x for n, x in r.summary.items() if isinstance(x, (int, float, bool))})
            rows.append(row)
    names = []
    for row in rows:
        names.extend(n for n in row if n not in names)
    cols = [[row.get(n, math.nan) for row in rows] for n in names]
    cols = [[float(x) if isinstance(x, bool) else x for x in c] for c in cols]
    path = Runner(cfg, opts).stem("sweep", "_summary").with_suffix(".csv")
    io.write_csv(path, names, cols)
    return all_results


def build_parser():
    p = argparse.ArgumentParser(prog="wqed", description="Waveguide transport through emitter ensembles.")
    p.add_argument("command", choices=list(COMMANDS) + ["sweep"])
    p.add_argument("--config", required=True, help="TOML run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a configuration value (dotted key)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--seed", type=int)
    g.add_argument("--seeds", help="inclusive seed range A..B")
    p.add_argument("--out", help="output directory (default from config)")
    p.add_argument("--threads", type=int, help="worker threads (default $WQED_THREADS or 1)")
    p.add_argument("--axis", help="sweep axis key=start:stop:count[:geom] or key=v1,v2")
    p.add_argument("--gnuplot", action="store_true", help="write a gnuplot script next to each CSV")
    p.add_argument("--plot", action="store_true", help="render PNG figures next to each CSV")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _error_record(exc):
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": getattr(exc, "exit_code", 1)}
    for attr in ("key_path", "suggestion", "t_reached"):
        if getattr(exc, attr, None) is not None:
            rec[attr] = getattr(exc, attr)
    return rec


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config, args.overrides)
        command = args.command
        if command == "sweep":
            if cfg.command is None:
                raise SchemaError("sweep needs 'command' in the configuration", "command")
            command = cfg.command
        threads = args.threads or int(os.environ.get("WQED_THREADS", "1") or 1)
        if threads < 1:
            raise ConfigError("thread count must be positive")
        out = Path(args.out or cfg.output.dir)
        out.mkdir(parents=True, exist_ok=True)
        opts = RunOptions(out_dir=out, threads=threads, gnuplot=args.gnuplot, plot=args.plot,
                          base_dir=Path(args.config).resolve().parent)
        seeds = parse_seeds(args.seed, args.seeds)
        if args.command == "sweep":
            results = run_sweep(cfg, command, seeds, opts, parse_axis(args.axis) if args.axis else None)
        else:
            results = run_seeds(cfg, command, seeds, opts)
        for r in results:
            for f in r.files:
                print(f)
        return 0
    except WqedError as exc:
        print(json.dumps(_error_record(exc)), file=sys.stderr)
        return exc.exit_code
    except (ValueError, ArithmeticError) as exc:
        rec = _error_record(exc)
        rec["exit_code"] = 2 if isinstance(exc, ValueError) else 3
        print(json.dumps(rec), file=sys.stderr)
        return rec["exit_code"]


if __name__ == "__main__":
    sys.exit(main())
