"""Experiment configuration: a flat ``key = value`` file plus method blocks.

Example::

    family = langevin-variable
    d = 50
    M = 10
    kappa = 4, 2

    [method:m3]
    kind = m3
    dt = 0.05

    [method:reference]
    kind = euler
    dt = 1e-5

Lines before the first ``[method:LABEL]`` header are global settings. Command
line flags override the file. Validation collects every problem before
raising.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigurationError
from .operators import CoefficientFamily
from .stochastics import steps_between

METHOD_KINDS = ("euler", "m1", "m2", "m3", "m3-adaptive")
DEFAULT_DT = {"euler": 1e-4, "m1": 0.1, "m2": 0.1, "m3": 0.1, "m3-adaptive": 0.1}
FAMILIES = ("langevin-constant", "langevin-variable")

_GLOBAL = "experiment"
_METHOD_PREFIX = "method:"

GLOBAL_KEYS = {
    "family": str,
    "a": float,
    "sigma": float,
    "d": int,
    "a_x": float,
    "b_x": float,
    "a_v": float,
    "b_v": float,
    "T": float,
    "dt_leb": float,
    "M": int,
    "seed": int,
    "kappa": "int-list",
    "record_times": "float-list",
    "out": str,
    "expmv_tol": float,
    "blowup_norm_cap": float,
    "workers": int,
    "dt": float,
    "order": int,
}
METHOD_KEYS = {"kind": str, "dt": float, "adaptive_tol": float, "shrink": float}


@dataclass(frozen=True)
class MethodSpec:
    label: str
    kind: str
    dt: float | None
    adaptive_tol: float = 1e-3
    shrink: float = 0.5

    @property
    def order(self) -> int | None:
        return None if self.kind == "euler" else int(self.kind[1])

    @property
    def is_magnus(self) -> bool:
        return self.kind != "euler"


@dataclass(frozen=True)
class ExperimentConfig:
    family: str = "langevin-constant"
    a: float = 1.1
    sigma: float = 1.0 / math.sqrt(10.0)
    d: int = 50
    a_x: float = -4.0
    b_x: float = 4.0
    a_v: float = -4.0
    b_v: float = 4.0
    T: float = 1.0
    dt_leb: float = 1e-4
    M: int = 10
    seed: int = 0
    kappa: tuple = (4,)
    record_times: tuple | None = None
    out: str = "results"
    expmv_tol: float = 1e-10
    blowup_norm_cap: float = 1e10
    workers: int = 1
    dt: float | None = None
    order: int | None = None
    methods: tuple = field(default_factory=tuple)

    def coefficient_family(self) -> CoefficientFamily:
        return CoefficientFamily(self.family, self.a, self.sigma)

    @property
    def times(self) -> tuple:
        return (self.T,) if self.record_times is None else tuple(sorted(self.record_times))

    def method(self, label: str) -> MethodSpec:
        for m in self.methods:
            if m.label == label:
                return m
        raise KeyError(label)


def default_methods(order: int | None = None, dt: float | None = None) -> tuple:
    """``m2``, ``m3`` and ``euler``; only ``m<order>`` and ``euler`` when ``order`` is set."""
    kinds = ("m2", "m3") if order is None else (f"m{order}",)
    magnus = tuple(MethodSpec(k, k, DEFAULT_DT[k] if dt is None else dt) for k in kinds)
    return magnus + (MethodSpec("euler", "euler", DEFAULT_DT["euler"]),)


def _resolve_dt(method: MethodSpec, dt: float | None) -> MethodSpec:
    if method.dt is not None:
        return method
    step = dt if dt is not None and method.is_magnus else DEFAULT_DT[method.kind]
    return replace(method, dt=step)


def _convert(kind, raw, key, problems):
    try:
        if kind == "int-list":
            return tuple(int(s) for s in raw.replace(",", " ").split())
        if kind == "float-list":
            return tuple(float(s) for s in raw.replace(",", " ").split())
        if kind is int:
            value = float(raw)
            if value != int(value):
                raise ValueError
            return int(value)
        return kind(raw)
    except ValueError:
        problems.append(f"{key}: cannot parse {raw!r}")
        return None


def parse_method_flag(text: str, default_dt: float | None = None) -> MethodSpec:
    """``KIND[:DT]`` as given to ``--method``; the label is ``KIND`` or ``KIND@DT``.

    Without an explicit step the dt stays ``None`` until :func:`build_config`
    fills in the global ``dt`` (Magnus kinds) or the per-kind default.
    """
    kind, _, dt = text.partition(":")
    kind = kind.strip()
    if kind not in METHOD_KINDS:
        raise ConfigurationError(f"unknown method kind {kind!r}; expected one of {', '.join(METHOD_KINDS)}")
    if dt:
        try:
            value = float(dt)
        except ValueError:
            raise ConfigurationError(f"--method {text}: cannot parse step {dt!r}") from None
        return MethodSpec(f"{kind}@{dt.strip()}", kind, value)
    return MethodSpec(kind, kind, default_dt)


def read_config_file(path) -> tuple[dict, list, list]:
    """Raw global settings, method blocks and parse problems of a config file."""
    text = Path(path).read_text()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    problems = []
    try:
        parser.read_string(f"[{_GLOBAL}]\n" + text, source=str(path))
    except configparser.Error as exc:
        raise ConfigurationError(f"{path}: {exc}") from None

    settings = {}
    for key, raw in parser.items(_GLOBAL):
        if key not in GLOBAL_KEYS:
            problems.append(f"unknown key {key!r}")
            continue
        value = _convert(GLOBAL_KEYS[key], raw, key, problems)
        if value is not None:
            settings[key] = value

    methods = []
    for section in parser.sections():
        if section == _GLOBAL:
            continue
        if not section.startswith(_METHOD_PREFIX):
            problems.append(f"unknown section [{section}]")
            continue
        label = section[len(_METHOD_PREFIX):].strip()
        block = {}
        for key, raw in parser.items(section):
            if key not in METHOD_KEYS:
                problems.append(f"[{section}]: unknown key {key!r}")
                continue
            value = _convert(METHOD_KEYS[key], raw, f"[{section}] {key}", problems)
            if value is not None:
                block[key] = value
        kind = block.pop("kind", label)
        if kind not in METHOD_KINDS:
            problems.append(f"[{section}]: unknown method kind {kind!r}")
            continue
        block.setdefault("dt", None)
        methods.append(MethodSpec(label or kind, kind, **block))
    return settings, methods, problems


def validate(cfg: ExperimentConfig) -> list:
    """Every problem with ``cfg``; empty when it is runnable."""
    problems = []
    if cfg.family not in FAMILIES:
        problems.append(f"family must be one of {', '.join(FAMILIES)}, got {cfg.family!r}")
    else:
        try:
            cfg.coefficient_family()
        except ConfigurationError as exc:
            problems.append(str(exc))
    if cfg.d < 2:
        problems.append(f"d must be at least 2, got {cfg.d}")
    for lo, hi in (("a_x", "b_x"), ("a_v", "b_v")):
        if not getattr(cfg, hi) > getattr(cfg, lo):
            problems.append(f"{hi} must exceed {lo}")
    if cfg.M < 1:
        problems.append(f"M must be at least 1, got {cfg.M}")
    if not cfg.kappa or any(k < 0 for k in cfg.kappa):
        problems.append("kappa must be a non-empty list of non-negative integers")
    if cfg.workers < 1:
        problems.append("workers must be at least 1")
    if not cfg.expmv_tol > 0:
        problems.append("expmv_tol must be positive")

    def divides(length, step, what):
        try:
            steps_between(length, step, what)
        except ConfigurationError as exc:
            problems.append(str(exc))

    if cfg.T > 0 and cfg.dt_leb > 0:
        divides(cfg.T, cfg.dt_leb, "T over dt_leb")
    else:
        problems.append("T and dt_leb must be positive")
    if cfg.record_times is not None:
        for t in cfg.record_times:
            if not 0 < t <= cfg.T:
                problems.append(f"record time {t} outside (0, {cfg.T}]")
    if not cfg.methods:
        problems.append("no methods configured")
    labels = [m.label for m in cfg.methods]
    for label in sorted({x for x in labels if labels.count(x) > 1}):
        problems.append(f"duplicate method label {label!r}")
    for m in cfg.methods:
        if not m.dt > 0:
            problems.append(f"{m.label}: dt must be positive")
            continue
        if cfg.dt_leb > 0:
            divides(m.dt, cfg.dt_leb, f"{m.label}: dt over dt_leb")
        if cfg.T > 0:
            divides(cfg.T, m.dt, f"{m.label}: T over dt")
            for t in cfg.record_times or ():
                if 0 < t <= cfg.T and m.kind != "m3-adaptive":
                    divides(t, m.dt, f"{m.label}: record time over dt")
        if m.kind == "m3-adaptive" and not 0 < m.shrink < 1:
            problems.append(f"{m.label}: shrink must lie in (0, 1)")
    if cfg.family == "langevin-variable" and cfg.methods and not any(m.kind == "euler" for m in cfg.methods):
        problems.append("langevin-variable needs an euler method to serve as the reference")
    return problems


def build_config(path=None, overrides: dict | None = None, methods=None) -> ExperimentConfig:
    """File settings, then ``overrides``, then validation.

    ``methods`` (a list of :class:`MethodSpec`) replaces the file's method
    blocks when non-empty.
    """
    settings, file_methods, problems = ({}, [], []) if path is None else read_config_file(path)
    settings.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = set(settings) - set(GLOBAL_KEYS)
    problems.extend(f"unknown key {k!r}" for k in sorted(unknown))
    for k in unknown:
        settings.pop(k)
    dt, order = settings.get("dt"), settings.get("order")
    if order is not None and order not in (1, 2, 3):
        problems.append(f"order must be 1, 2 or 3, got {order}")
        order = None
    chosen = tuple(methods) if methods else tuple(file_methods) or default_methods(order, dt)
    chosen = tuple(_resolve_dt(m, dt) for m in chosen)
    cfg = replace(ExperimentConfig(), **settings, methods=chosen)
    problems.extend(validate(cfg))
    if problems:
        listing = "\n".join(f"  - {p}" for p in problems)
        raise ConfigurationError(f"invalid configuration:\n{listing}", problems)
    return cfg
