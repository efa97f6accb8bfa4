"""Run configuration: an INI file with fixed sections, converted to SI on load.

Grammar (every key optional, unknown sections or keys are rejected)::

    [model]     gamma, v_max_kmh, rho_max_veh_km, length_m,
                t_pref_slow_s, t_pref_fast_s, t_relax_slow_s, t_relax_fast_s
    [steady]    rho_star_slow_veh_km, mode (consistent|as_given),
                pressure_norm (lane|shared), lane_max_rule (zero|printed),
                rho_star_fast_veh_km, v_star_slow_kmh, v_star_fast_kmh   (as_given only)
    [scenario]  name (stop_and_go|bottleneck), amplitude, wavenumber,
                shock_position, shock_width, downstream_rise, upstream_drop,
                inlet_pulse
    [run]       mode (open_loop|full_state|observer|output_feedback),
                plant (nonlinear|linearized), n_cells, cfl, t_end_s,
                record_every, threshold, observer_init (steady|truth)
    [kernels]   n, tol, max_iter, cache_dir
    [control]   saturation_kmh (0 = off), noise_veh_km, seed
    [output]    dir

Values are plain numbers or words; ``#`` and ``;`` start comments.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field

from ..errors import ConfigError
from ..model import KMH, VEH_PER_KM, ModelParams

SCENARIOS = ("stop_and_go", "bottleneck")
MODES = ("open_loop", "full_state", "observer", "output_feedback")
PLANTS = ("nonlinear", "linearized")


@dataclass(frozen=True)
class ScenarioSpec:
    name: str = "stop_and_go"
    amplitude: float = 0.1
    wavenumber: int = 1
    shock_position: float = 0.7
    shock_width: float = 0.1
    downstream_rise: float = 0.25
    upstream_drop: float = 0.10
    inlet_pulse: float = 0.20


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a run needs, in SI units."""

    model: ModelParams = field(default_factory=ModelParams.defaults)
    rho_star_slow: float = 180.0 * VEH_PER_KM
    steady_mode: str = "consistent"
    pressure_norm: str = "lane"
    lane_max_rule: str = "zero"
    given: dict | None = None
    scenario: ScenarioSpec = field(default_factory=ScenarioSpec)
    mode: str = "output_feedback"
    plant: str = "nonlinear"
    n_cells: int = 200
    cfl: float = 0.8
    t_end: float = 600.0
    record_every: int = 1
    threshold: float | None = None
    observer_init: str = "steady"
    kernel_n: int = 129
    kernel_tol: float = 1e-9
    kernel_max_iter: int = 200
    kernel_cache: str | None = None
    saturation: float | None = None
    noise: float = 0.0
    seed: int = 0
    out_dir: str | None = None

    def __post_init__(self):
        _check_choice("steady.mode", self.steady_mode, ("consistent", "as_given"))
        _check_choice("steady.pressure_norm", self.pressure_norm, ("lane", "shared"))
        _check_choice("steady.lane_max_rule", self.lane_max_rule, ("zero", "printed"))
        _check_choice("scenario.name", self.scenario.name, SCENARIOS)
        _check_choice("run.mode", self.mode, MODES)
        _check_choice("run.plant", self.plant, PLANTS)
        _check_choice("run.observer_init", self.observer_init, ("steady", "truth"))
        sc = self.scenario
        _check_range("scenario.amplitude", sc.amplitude, 0.0, 0.5, lo_open=False)
        for name in ("downstream_rise", "upstream_drop", "inlet_pulse"):
            _check_range(f"scenario.{name}", getattr(sc, name), 0.0, 0.5, lo_open=False)
        _check_range("scenario.shock_position", sc.shock_position, 0.0, 1.0)
        _check_range("scenario.shock_width", sc.shock_width, 0.0, 1.0)
        if sc.wavenumber < 1:
            raise ConfigError("must be >= 1", field="scenario.wavenumber")
        _check_range("run.cfl", self.cfl, 0.0, 1.0, hi_open=False)
        if self.n_cells < 8:
            raise ConfigError("must be >= 8", field="run.n_cells")
        if not self.t_end > 0.0:
            raise ConfigError("must be > 0", field="run.t_end_s")
        if self.record_every < 1:
            raise ConfigError("must be >= 1", field="run.record_every")
        if self.threshold is not None:
            _check_range("run.threshold", self.threshold, 0.0, 1.0)
        if self.kernel_n < 16:
            raise ConfigError("must be >= 16", field="kernels.n")
        if not self.kernel_tol > 0.0:
            raise ConfigError("must be > 0", field="kernels.tol")
        if self.kernel_max_iter < 1:
            raise ConfigError("must be >= 1", field="kernels.max_iter")
        if self.saturation is not None and not self.saturation > 0.0:
            raise ConfigError("must be > 0", field="control.saturation_kmh")
        if self.noise < 0.0:
            raise ConfigError("must be >= 0", field="control.noise_veh_km")
        if not self.rho_star_slow > 0.0:
            raise ConfigError("must be > 0", field="steady.rho_star_slow_veh_km")

    @property
    def convergence_threshold(self):
        if self.threshold is not None:
            return self.threshold
        return 0.05 if self.plant == "nonlinear" else 0.01

    def resolved(self):
        """JSON-ready SI view of the configuration."""
        d = dataclasses.asdict(self)
        d["units"] = "SI: m, s, veh/m, m/s"
        return d

    def digest(self):
        blob = json.dumps(self.resolved(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def _check_choice(name, value, allowed):
    if value not in allowed:
        raise ConfigError(f"must be one of {', '.join(allowed)}; got {value!r}", field=name)


def _check_range(name, value, lo, hi, lo_open=True, hi_open=True):
    ok = math.isfinite(value)
    ok = ok and (value > lo if lo_open else value >= lo)
    ok = ok and (value < hi if hi_open else value <= hi)
    if not ok:
        lb = "(" if lo_open else "["
        rb = ")" if hi_open else "]"
        raise ConfigError(f"must lie in {lb}{lo}, {hi}{rb}; got {value!r}", field=name)


# key -> (parser, target, scale to SI)
_FLOAT, _INT, _STR = float, int, str

_KEYS = {
    "model": {
        "gamma": (_FLOAT, "gamma", 1.0),
        "v_max_kmh": (_FLOAT, "v_max", KMH),
        "rho_max_veh_km": (_FLOAT, "rho_max_equiv", VEH_PER_KM),
        "length_m": (_FLOAT, "seg_length", 1.0),
        "t_pref_slow_s": (_FLOAT, "t_pref_slow", 1.0),
        "t_pref_fast_s": (_FLOAT, "t_pref_fast", 1.0),
        "t_relax_slow_s": (_FLOAT, "t_relax_slow", 1.0),
        "t_relax_fast_s": (_FLOAT, "t_relax_fast", 1.0),
    },
    "steady": {
        "rho_star_slow_veh_km": (_FLOAT, "rho_star_slow", VEH_PER_KM),
        "mode": (_STR, "steady_mode", None),
        "pressure_norm": (_STR, "pressure_norm", None),
        "lane_max_rule": (_STR, "lane_max_rule", None),
        "rho_star_fast_veh_km": (_FLOAT, "given.rho_star_fast", VEH_PER_KM),
        "v_star_slow_kmh": (_FLOAT, "given.v_star_slow", KMH),
        "v_star_fast_kmh": (_FLOAT, "given.v_star_fast", KMH),
    },
    "scenario": {
        "name": (_STR, "scenario.name", None),
        "amplitude": (_FLOAT, "scenario.amplitude", 1.0),
        "wavenumber": (_INT, "scenario.wavenumber", None),
        "shock_position": (_FLOAT, "scenario.shock_position", 1.0),
        "shock_width": (_FLOAT, "scenario.shock_width", 1.0),
        "downstream_rise": (_FLOAT, "scenario.downstream_rise", 1.0),
        "upstream_drop": (_FLOAT, "scenario.upstream_drop", 1.0),
        "inlet_pulse": (_FLOAT, "scenario.inlet_pulse", 1.0),
    },
    "run": {
        "mode": (_STR, "mode", None),
        "plant": (_STR, "plant", None),
        "n_cells": (_INT, "n_cells", None),
        "cfl": (_FLOAT, "cfl", 1.0),
        "t_end_s": (_FLOAT, "t_end", 1.0),
        "record_every": (_INT, "record_every", None),
        "threshold": (_FLOAT, "threshold", 1.0),
        "observer_init": (_STR, "observer_init", None),
    },
    "kernels": {
        "n": (_INT, "kernel_n", None),
        "tol": (_FLOAT, "kernel_tol", 1.0),
        "max_iter": (_INT, "kernel_max_iter", None),
        "cache_dir": (_STR, "kernel_cache", None),
    },
    "control": {
        "saturation_kmh": (_FLOAT, "saturation", KMH),
        "noise_veh_km": (_FLOAT, "noise", VEH_PER_KM),
        "seed": (_INT, "seed", None),
    },
    "output": {
        "dir": (_STR, "out_dir", None),
    },
}


def _line_of(text, section, key):
    cur = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line.startswith("[") and line.endswith("]"):
            cur = line[1:-1].strip()
        elif cur == section and line.split("=", 1)[0].split(":", 1)[0].strip().lower() == key:
            return no
    return None


def parse_config(text, source="<string>"):
    """Parse INI text into a validated :class:`ScenarioConfig`."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc.message if hasattr(exc, 'message') else exc}", line=getattr(exc, "lineno", None)) from None

    model = {}
    top = {}
    scen = {}
    given = {}
    for section in cp.sections():
        if section not in _KEYS:
            raise ConfigError(f"{source}: unknown section [{section}]", field=section, line=_line_of(text, section, "") or None)
        for key, raw in cp.items(section):
            spec = _KEYS[section].get(key)
            name = f"{section}.{key}"
            line = _line_of(text, section, key)
            if spec is None:
                raise ConfigError(f"{source}: unknown key {name}", field=name, line=line)
            kind, target, scale = spec
            try:
                if kind is _STR:
                    value = raw.strip()
                elif kind is _INT:
                    value = int(raw.strip())
                else:
                    value = float(raw.strip())
            except ValueError:
                raise ConfigError(f"{source}: {name} = {raw!r} is not a valid {kind.__name__}", field=name, line=line) from None
            if scale not in (None, 1.0):
                value = value * scale
            if section == "model":
                model[target] = value
            elif target.startswith("scenario."):
                scen[target.split(".", 1)[1]] = value
            elif target.startswith("given."):
                given[target.split(".", 1)[1]] = value
            else:
                top[target] = value
    if "saturation" in top and top["saturation"] == 0.0:
        top["saturation"] = None
    if top.get("kernel_cache") == "":
        top["kernel_cache"] = None
    try:
        params = ModelParams.defaults(**model)
    except Exception as exc:
        raise ConfigError(f"{source}: {exc}", field="model") from None
    try:
        cfg = ScenarioConfig(model=params, scenario=ScenarioSpec(**scen), given=given or None, **top)
    except ConfigError as exc:
        section, _, key = (exc.field or "").partition(".")
        raise ConfigError(f"{source}: {exc.field}: {exc}", field=exc.field, line=_line_of(text, section, key)) from None
    if cfg.steady_mode == "as_given":
        missing = {"rho_star_fast", "v_star_slow", "v_star_fast"} - set(given)
        if missing:
            raise ConfigError(f"{source}: as_given steady state needs {sorted(missing)}", field="steady")
    return cfg


def config_from_resolved(d):
    """Inverse of :meth:`ScenarioConfig.resolved` (exact, no unit conversion)."""
    d = dict(d)
    d.pop("units", None)
    try:
        model = ModelParams(**d.pop("model"))
        scen = ScenarioSpec(**d.pop("scenario"))
        return ScenarioConfig(model=model, scenario=scen, **d)
    except TypeError as exc:
        raise ConfigError(f"resolved config does not match the schema: {exc}") from None


def save_config(cfg, path):
    """Write the SI-resolved form; :func:`load_config` reads it back exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(cfg.resolved(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_config(path):
    """Read and validate a config file.

    ``.json`` files hold the resolved SI form written by :func:`save_config`;
    anything else is parsed as INI, where an empty file gives the reference
    defaults.
    """
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", field="path") from None
    if os.fspath(path).endswith(".json"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc.msg}", line=exc.lineno) from None
        return config_from_resolved(data)
    return parse_config(text, source=os.fspath(path))


def dump_config(cfg):
    """INI text that :func:`parse_config` maps back to ``cfg``."""
    m = cfg.model
    sc = cfg.scenario
    lines = [
        "[model]",
        f"gamma = {m.gamma!r}",
        f"v_max_kmh = {m.v_max / KMH!r}",
        f"rho_max_veh_km = {m.rho_max_equiv / VEH_PER_KM!r}",
        f"length_m = {m.seg_length!r}",
        f"t_pref_slow_s = {m.t_pref_slow!r}",
        f"t_pref_fast_s = {m.t_pref_fast!r}",
        f"t_relax_slow_s = {m.t_relax_slow!r}",
        f"t_relax_fast_s = {m.t_relax_fast!r}",
        "",
        "[steady]",
        f"rho_star_slow_veh_km = {cfg.rho_star_slow / VEH_PER_KM!r}",
        f"mode = {cfg.steady_mode}",
        f"pressure_norm = {cfg.pressure_norm}",
        f"lane_max_rule = {cfg.lane_max_rule}",
    ]
    if cfg.given:
        g = cfg.given
        lines += [
            f"rho_star_fast_veh_km = {g['rho_star_fast'] / VEH_PER_KM!r}",
            f"v_star_slow_kmh = {g['v_star_slow'] / KMH!r}",
            f"v_star_fast_kmh = {g['v_star_fast'] / KMH!r}",
        ]
    lines += [
        "",
        "[scenario]",
        f"name = {sc.name}",
        f"amplitude = {sc.amplitude!r}",
        f"wavenumber = {sc.wavenumber}",
        f"shock_position = {sc.shock_position!r}",
        f"shock_width = {sc.shock_width!r}",
        f"downstream_rise = {sc.downstream_rise!r}",
        f"upstream_drop = {sc.upstream_drop!r}",
        f"inlet_pulse = {sc.inlet_pulse!r}",
        "",
        "[run]",
        f"mode = {cfg.mode}",
        f"plant = {cfg.plant}",
        f"n_cells = {cfg.n_cells}",
        f"cfl = {cfg.cfl!r}",
        f"t_end_s = {cfg.t_end!r}",
        f"record_every = {cfg.record_every}",
        f"observer_init = {cfg.observer_init}",
    ]
    if cfg.threshold is not None:
        lines.append(f"threshold = {cfg.threshold!r}")
    lines += [
        "",
        "[kernels]",
        f"n = {cfg.kernel_n}",
        f"tol = {cfg.kernel_tol!r}",
        f"max_iter = {cfg.kernel_max_iter}",
        f"cache_dir = {cfg.kernel_cache or ''}",
        "",
        "[control]",
        f"saturation_kmh = {(cfg.saturation or 0.0) / KMH!r}",
        f"noise_veh_km = {cfg.noise / VEH_PER_KM!r}",
        f"seed = {cfg.seed}",
    ]
    if cfg.out_dir:
        lines += ["", "[output]", f"dir = {cfg.out_dir}"]
    return "\n".join(lines) + "\n"
