"""Run configuration: TOML files validated against a strict schema.

Rates are given in Hz (``units = "hz"``, converted to angular frequency once
when runtime objects are built) or as plain numbers in units of the
waveguide rate (``units = "gamma_1d"``).  Positions are in wavelengths.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
import re
import sys
from pathlib import Path
from typing import Any, Literal, Optional

import numpy as np
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .ensemble import EnsembleSpec, nearest_divisor
from .errors import ParseError, SchemaError
from .spectral import HoleSpec, SpectralLine, apply_hole_burn, load_table_csv

COMMANDS = ("chi", "modes", "transmit", "oracle-compare", "cqed-spectrum", "rabi", "report")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class HoleCfg(_Strict):
    center: float = 0.0
    width: float
    depth: float = Field(ge=0.0, le=1.0)


class LineCfg(_Strict):
    kind: Literal["gaussian", "uniform", "lorentzian", "tabulated"] = "gaussian"
    gamma_inh: float = Field(gt=0)
    table: Optional[str] = None  # CSV with delta_hz, rho_per_hz
    holes: list[HoleCfg] = []

    @model_validator(mode="after")
    def _table(self):
        if self.kind == "tabulated" and not self.table:
            raise ValueError("tabulated line needs a table path")
        return self


class EnsembleCfg(_Strict):
    n: int = Field(ge=1)
    gamma_1d: float = Field(gt=0)
    gamma_prime: float = Field(ge=0)
    delta_z: float = Field(default=0.0, ge=0)
    center: float = 0.0
    detuning_offset: float = 0.0
    placement: Literal["random", "equal"] = "random"
    role: str = "single"
    line: Optional[LineCfg] = None


class CqedCfg(_Strict):
    n_q: int = Field(ge=1)
    n_c: int = Field(ge=1)
    gamma_1d: float = Field(gt=0)
    gamma_prime: float = Field(ge=0)
    delta_z: float = Field(default=0.0, ge=0)
    r: int = Field(default=0, ge=0)
    compensate: bool = True
    compensation: Literal["difference", "qubit"] = "difference"
    port: Literal["right", "left", "both"] = "right"
    init: Literal["symmetric", "uniform"] = "symmetric"


class NumericsCfg(_Strict):
    m: int = Field(default=1000, ge=1)
    n_f: int = Field(default=200, ge=2)
    method: Literal["auto", "dense", "transfer"] = "auto"
    rel_tol: float = Field(default=1e-7, ge=1e-12, le=1e-3)
    abs_tol: float = Field(default=1e-10, gt=0)
    dense_limit: int = Field(default=10_000, ge=1)
    dim_limit: int = Field(default=1_000_000, ge=1)
    mode_count: int = Field(default=8, ge=1)
    oracle_m: int = Field(default=50, ge=1)


class GridCfg(_Strict):
    min: Optional[float] = None
    max: Optional[float] = None
    count: int = Field(default=401, ge=1)
    values: Optional[list[float]] = None

    @model_validator(mode="after")
    def _shape(self):
        if self.values is None and (self.min is None or self.max is None):
            raise ValueError("grid needs min and max, or an explicit values list")
        if self.values is not None and any(b <= a for a, b in zip(self.values, self.values[1:])):
            raise ValueError("grid values must be strictly increasing")
        if self.values is None and self.count > 1 and not self.max > self.min:
            raise ValueError("grid max must exceed min")
        return self


class TimeCfg(_Strict):
    t_max: Optional[float] = None  # seconds ("hz" units) or 1/gamma_1d
    periods: float = Field(default=2.5, gt=0)  # used when t_max is absent
    count: int = Field(default=401, ge=2)


class SweepCfg(_Strict):
    key: str
    values: Optional[list[float]] = None
    start: Optional[float] = None
    stop: Optional[float] = None
    count: int = Field(default=5, ge=1)
    scale: Literal["linear", "geometric"] = "linear"

    def points(self):
        if self.values is not None:
            return list(self.values)
        if self.start is None or self.stop is None:
            raise ValueError("sweep needs values or start/stop")
        if self.scale == "geometric":
            return [float(v) for v in np.geomspace(self.start, self.stop, self.count)]
        return [float(v) for v in np.linspace(self.start, self.stop, self.count)]


class OutputCfg(_Strict):
    dir: str = "out"
    prefix: str = ""


class RunConfig(_Strict):
    command: Optional[Literal["chi", "modes", "transmit", "oracle-compare", "cqed-spectrum", "rabi", "report"]] = None
    units: Literal["hz", "gamma_1d"] = "hz"
    seed: int = Field(default=0, ge=0)
    line: Optional[LineCfg] = None
    ensembles: list[EnsembleCfg] = []
    cqed: Optional[CqedCfg] = None
    numerics: NumericsCfg = NumericsCfg()
    grid: Optional[GridCfg] = None
    time: TimeCfg = TimeCfg()
    sweep: Optional[SweepCfg] = None
    output: OutputCfg = OutputCfg()

    @model_validator(mode="after")
    def _consistency(self):
        for k, ens in enumerate(self.ensembles):
            if ens.line is None and self.line is None:
                raise ValueError(f"ensembles.{k}: no line section and no default line")
            m = self.numerics.m
            if m > ens.n or ens.n % m:
                raise ValueError(
                    f"ensembles.{k}: m={m} does not divide n={ens.n}; nearest valid m is "
                    f"{nearest_divisor(ens.n, m)}"
                )
        if self.cqed is not None:
            if self.line is None:
                raise ValueError("cqed section needs a top-level line")
            m = self.numerics.m
            for name in ("n_q", "n_c"):
                n = getattr(self.cqed, name)
                if m > n or n % m:
                    raise ValueError(f"cqed.{name}: m={m} does not divide {n}; nearest valid m is "
                                     f"{nearest_divisor(n, m)}")
        return self

    # runtime conversion -------------------------------------------------

    @property
    def scale(self):
        """Factor turning configured rates into angular frequency."""
        return 2.0 * math.pi if self.units == "hz" else 1.0

    def build_line(self, cfg: LineCfg | None = None, base_dir: Path | None = None) -> SpectralLine:
        cfg = cfg or self.line
        s = self.scale
        g = cfg.gamma_inh * s
        if cfg.kind == "tabulated":
            path = Path(cfg.table)
            if not path.is_absolute() and base_dir is not None:
                path = base_dir / path
            line = load_table_csv(path, gamma_inh=g, hz=self.units == "hz")
        else:
            line = getattr(SpectralLine, cfg.kind)(g)
        if cfg.holes:
            line = apply_hole_burn(line, [HoleSpec(h.center * s, h.width * s, h.depth) for h in cfg.holes])
        return line

    def build_ensembles(self, base_dir=None) -> list[EnsembleSpec]:
        s = self.scale
        out = []
        for ens in self.ensembles:
            out.append(EnsembleSpec(
                n_emitters=ens.n,
                gamma_1d=ens.gamma_1d * s,
                gamma_prime=ens.gamma_prime * s,
                line=self.build_line(ens.line, base_dir),
                delta_z=ens.delta_z,
                center=ens.center,
                detuning_offset=ens.detuning_offset * s,
                placement=ens.placement,
                role=ens.role,
            ))
        return out

    def build_cqed_specs(self, base_dir=None):
        """``(mirror, qubit)`` ensemble specs from the cqed section."""
        c = self.cqed
        s = self.scale
        line = self.build_line(None, base_dir)
        mirror = EnsembleSpec(c.n_c, c.gamma_1d * s, c.gamma_prime * s, line, delta_z=c.delta_z)
        qubit = EnsembleSpec(c.n_q, c.gamma_1d * s, c.gamma_prime * s, line, delta_z=c.delta_z)
        return mirror, qubit

    def build_grid(self) -> np.ndarray:
        if self.grid is None:
            raise SchemaError("this command needs a [grid] section", "grid")
        s = self.scale
        g = self.grid
        if g.values is not None:
            return np.asarray(g.values, dtype=float) * s
        if g.count == 1:
            return np.array([g.min * s])
        return np.linspace(g.min * s, g.max * s, g.count)


def _key_path(loc) -> str:
    return ".".join(str(p) for p in loc if not (isinstance(p, str) and p.startswith("function-")))


def validate_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        path = _key_path(err["loc"])
        msg = err["msg"].removeprefix("Value error, ")
        if err["type"] == "extra_forbidden":
            msg = "unknown key"
        m = re.match(r"([\w.]+): (.*)", msg)
        if m:
            path = ".".join(p for p in (path, m.group(1)) if p)
            msg = m.group(2)
        raise SchemaError(msg, path) from None


def parse_text(text: str, overrides=()) -> RunConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ParseError(f"invalid TOML: {exc}") from None
    for item in overrides:
        apply_override(data, item)
    return validate_config(data)


def parse_config(path, overrides=()) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror}") from None
    return parse_text(text, overrides)


def _parse_value(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_override(data: dict, item: str):
    """Apply ``dotted.key=value`` in place; list elements are addressed by index."""
    if "=" not in item:
        raise ParseError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    set_path(data, key.strip(), _parse_value(raw.strip()))


def set_path(data: dict, key: str, value: Any):
    parts = key.split(".")
    node = data
    for i, part in enumerate(parts[:-1]):
        nxt = parts[i + 1]
        if isinstance(node, list):
            node = node[int(part)]
            continue
        if part not in node:
            node[part] = [] if nxt.isdigit() else {}
        node = node[part]
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def get_path(data: dict, key: str):
    node = data
    for part in key.split("."):
        node = node[int(part)] if isinstance(node, list) else node[part]
    return node


def config_dict(cfg: RunConfig) -> dict:
    return cfg.model_dump(mode="json", exclude_none=True)


def emit_config(cfg: RunConfig) -> str:
    return tomli_w.dumps(config_dict(cfg))


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(config_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def with_values(cfg: RunConfig, **changes) -> RunConfig:
    """Copy with dotted-key replacements, re-validated."""
    data = copy.deepcopy(config_dict(cfg))
    for key, value in changes.items():
        set_path(data, key, value)
    return validate_config(data)
