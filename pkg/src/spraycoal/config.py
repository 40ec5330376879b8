"""Run configuration: INI files with one section per method.

Example::

    [run]
    case = mono_lin_coal
    method = lagrangian
    output = runs/mono_lin_coal_lag
    stations_cm = 16, 22

    [lagrangian]
    seed = 42
    injection_scale = 0.1

Unknown sections or keys are rejected with the offending name in the message.
"""
from __future__ import annotations

import configparser
import dataclasses
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .cases import parse_case_id
from .dqmom import DqmomOptions
from .errors import ConfigError
from .harness import METHODS
from .lagrangian import DsmcConfig
from .multifluid import MultifluidOptions

OUTPUT_ROOT_ENV = "SPRAYCOAL_OUTPUT_ROOT"
OPTION_CLASSES = {"dqmom": DqmomOptions, "multifluid": MultifluidOptions, "lagrangian": DsmcConfig}
RUN_KEYS = ("case", "method", "output", "stations_cm", "n_points")


def output_root() -> Path:
    """Base directory for run outputs; ``$SPRAYCOAL_OUTPUT_ROOT`` overrides ``./runs``."""
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))


def _coerce(cls, name: str, raw: str):
    hints = typing.get_type_hints(cls)
    hint = hints[name]
    text = raw.strip()
    args = typing.get_args(hint)
    optional = type(None) in args
    if optional and text.lower() in ("none", ""):
        return None
    base = next((a for a in args if a is not type(None)), hint) if args else hint
    origin = typing.get_origin(base)
    try:
        if base is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if base is int:
            return int(text)
        if base is float:
            return float(text)
        if origin is tuple or base is tuple:
            return tuple(float(x) for x in text.split(",") if x.strip())
        if origin is typing.Literal:
            if text not in typing.get_args(base):
                raise ValueError(text)
            return text
        return text
    except ValueError:
        raise ConfigError(f"key {name!r}: cannot interpret {raw!r}") from None


def build_options(method: str, values: dict[str, str]):
    """Method option dataclass from string values, rejecting unknown keys."""
    if method not in OPTION_CLASSES:
        raise ConfigError(f"unknown method {method!r}; expected one of {', '.join(METHODS)}")
    cls = OPTION_CLASSES[method]
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, raw in values.items():
        if key not in names:
            raise ConfigError(f"unknown key {key!r} in section [{method}]")
        kwargs[key] = _coerce(cls, key, raw)
    return cls(**kwargs)


@dataclass
class RunConfig:
    case_id: str
    method: str
    options: object
    output: Path
    stations: tuple[float, ...] | None = None
    n_points: int = 200
    raw: dict = field(default_factory=dict)

    def resolved(self) -> dict:
        return {"case": self.case_id, "method": self.method, "output": str(self.output),
                "stations_cm": "" if self.stations is None else ",".join(f"{100 * s:g}" for s in self.stations),
                "n_points": self.n_points}


def load_config(path: str | Path | None, overrides: dict[str, dict[str, str]] | None = None) -> RunConfig:
    """Read an INI file (optional) and apply ``{section: {key: value}}`` overrides."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if path is not None:
        if not cp.read(path):
            raise ConfigError(f"cannot read config file {path}")
    for section, kv in (overrides or {}).items():
        if not cp.has_section(section):
            cp.add_section(section)
        for k, v in kv.items():
            cp.set(section, k, str(v))
    for section in cp.sections():
        if section != "run" and section not in OPTION_CLASSES:
            raise ConfigError(f"unknown section [{section}]")
    run = dict(cp["run"]) if cp.has_section("run") else {}
    for key in run:
        if key not in RUN_KEYS:
            raise ConfigError(f"unknown key {key!r} in section [run]")
    if "case" not in run:
        raise ConfigError("missing key 'case' in section [run]")
    if "method" not in run:
        raise ConfigError("missing key 'method' in section [run]")
    case_id, method = run["case"], run["method"]
    parse_case_id(case_id)
    if method not in METHODS:
        raise ConfigError(f"key 'method': unknown method {method!r}")
    options = build_options(method, dict(cp[method]) if cp.has_section(method) else {})
    stations = None
    if run.get("stations_cm", "").strip():
        try:
            stations = tuple(float(x) / 100.0 for x in run["stations_cm"].split(","))
        except ValueError:
            raise ConfigError(f"key 'stations_cm': cannot interpret {run['stations_cm']!r}") from None
    try:
        n_points = int(run.get("n_points", 200))
    except ValueError:
        raise ConfigError(f"key 'n_points': cannot interpret {run['n_points']!r}") from None
    output = Path(run["output"]) if run.get("output") else output_root() / f"{case_id}_{method}"
    raw = {s: dict(cp[s]) for s in cp.sections()}
    return RunConfig(case_id, method, options, output, stations, n_points, raw)
