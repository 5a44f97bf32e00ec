"""Experiment configuration: flat ``key = value`` files with dotted keys.

Values may be numbers, simple arithmetic (``2*pi``, ``100/128``), lists
(``[256, 256]`` or ``256, 256``) or bare words.  Unknown keys are an error
so that typos do not silently fall back to defaults.
"""
from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .grid import BoundaryCondition
from .model import DissipationKind
from .relaxed import RelaxedScheme
from .tableau import BUILTIN_NAMES

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_value",
    "parse_text",
    "load_config",
    "preset_names",
    "resolve_config_path",
]

PRESETS = ("example1", "example2", "example3", "example4")


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


_BINOPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.Pow: operator.pow,
}
_NAMES = {"pi": math.pi, "e": math.e}


def _eval(node):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
        return node.value
    if isinstance(node, ast.Name) and node.id in _NAMES:
        return _NAMES[node.id]
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        v = _eval(node.operand)
        return -v if isinstance(node.op, ast.USub) else v
    if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
        return _BINOPS[type(node.op)](_eval(node.left), _eval(node.right))
    if isinstance(node, (ast.List, ast.Tuple)):
        return [_eval(e) for e in node.elts]
    raise ValueError("not a numeric expression")


def parse_value(text: str):
    """Number, list of numbers, boolean or plain string."""
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", ""):
        return None
    try:
        return _eval(ast.parse(text, mode="eval").body)
    except (SyntaxError, ValueError, ZeroDivisionError, OverflowError):
        return text


def parse_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def preset_names() -> tuple[str, ...]:
    return PRESETS


def resolve_config_path(name) -> Path:
    """A file path, or the name of a shipped preset (``example1``..``example4``)."""
    p = Path(name)
    if p.is_file():
        return p
    stem = p.name[:-4] if p.name.endswith(".cfg") else p.name
    if stem in PRESETS:
        return Path(str(resources.files("dvdflow") / "presets" / f"{stem}.cfg"))
    raise FileNotFoundError(f"no config file or preset named {str(name)!r}")


def _as_list(v, n: int, what: str) -> list:
    if isinstance(v, (list, tuple)):
        if len(v) != n:
            raise ConfigError(f"{what} needs {n} entries, got {len(v)}")
        return list(v)
    return [v] * n


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "CH"
    scheme: str = "Sch-1"
    grid_dim: int = 1
    grid_n: tuple = (128,)
    grid_length: tuple = (2 * math.pi,)
    grid_origin: tuple = (0.0,)
    grid_bc: str = "periodic"
    gamma: float = 1.0
    epsilon: float = 0.1
    beta: float = 0.0
    c0: float | None = None
    m: int = 1
    stab_a0: float | None = None
    stab_a1: float = 0.0
    stab_a2: float = 0.0
    h: float = 1e-3
    t_end: float = 0.01
    init_kind: str = "sine"
    init_amplitude: float = 0.2
    init_radius: float = 0.5
    init_center: tuple = (0.0, 0.0)
    init_low: float = -0.02
    init_high: float = 0.02
    init_value: float = 0.0
    init_path: str | None = None
    seed: int = 0
    output_dir: str | None = None
    output_csv: str = "timeseries.csv"
    output_snapshots: tuple = ()
    radius_enabled: bool = False
    radius_scale: float = 1.0
    newton_eps_rel: float = 1e-12
    newton_eps_abs: float = 1e-12
    newton_max_iters: int = 50
    krylov_xi_rel: float | None = None
    krylov_xi_abs: float | None = None
    krylov_restart: int = 30
    krylov_max_iters: int = 600
    precond_block: int | None = None
    precond_overlap: int = 0
    source: str = field(default="", compare=False)

    # dotted key -> attribute
    KEYS = {
        "model": "model", "scheme": "scheme",
        "grid.dim": "grid_dim", "grid.n": "grid_n", "grid.length": "grid_length",
        "grid.origin": "grid_origin", "grid.bc": "grid_bc",
        "fe.gamma": "gamma", "fe.epsilon": "epsilon", "fe.beta": "beta", "fe.c0": "c0", "fe.m": "m",
        "stabilized.a0": "stab_a0", "stabilized.a1": "stab_a1", "stabilized.a2": "stab_a2",
        "h": "h", "t_end": "t_end",
        "init.kind": "init_kind", "init.amplitude": "init_amplitude", "init.radius": "init_radius",
        "init.center": "init_center", "init.low": "init_low", "init.high": "init_high",
        "init.value": "init_value", "init.path": "init_path",
        "seed": "seed",
        "output.dir": "output_dir", "output.csv": "output_csv", "output.snapshots": "output_snapshots",
        "radius.enabled": "radius_enabled", "radius.scale": "radius_scale",
        "newton.eps_rel": "newton_eps_rel", "newton.eps_abs": "newton_eps_abs",
        "newton.max_iters": "newton_max_iters",
        "krylov.xi_rel": "krylov_xi_rel", "krylov.xi_abs": "krylov_xi_abs",
        "krylov.restart": "krylov_restart", "krylov.max_iters": "krylov_max_iters",
        "precond.block": "precond_block", "precond.overlap": "precond_overlap",
    }

    @classmethod
    def from_mapping(cls, values: dict, source: str = "") -> "ExperimentConfig":
        unknown = sorted(set(values) - set(cls.KEYS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        kw = {cls.KEYS[k]: v for k, v in values.items()}
        dim = kw.get("grid_dim", 1)
        if dim not in (1, 2):
            raise ConfigError("grid.dim must be 1 or 2")
        for name, default in (("grid_n", 128), ("grid_length", 2 * math.pi), ("grid_origin", 0.0)):
            kw[name] = tuple(_as_list(kw.get(name, default), dim, name.replace("_", ".")))
        kw["init_center"] = tuple(_as_list(kw.get("init_center", 0.0), dim, "init.center"))
        snaps = kw.get("output_snapshots", ())
        if snaps is None:
            snaps = ()
        kw["output_snapshots"] = tuple(snaps if isinstance(snaps, (list, tuple)) else [snaps])
        for name in ("model", "scheme", "grid_bc", "init_kind"):
            if name in kw:
                kw[name] = str(kw[name])
        for name in ("output_dir", "output_csv", "init_path"):
            if kw.get(name) is not None:
                kw[name] = str(kw[name])
        cfg = cls(**kw, source=source)
        cfg.validate()
        return cfg

    # -- derived views ----------------------------------------------------------
    @property
    def kind(self) -> DissipationKind:
        return DissipationKind.for_model(self.model)

    @property
    def bc(self) -> BoundaryCondition:
        return BoundaryCondition.parse(self.grid_bc)

    @property
    def is_dvd(self) -> bool:
        return self.scheme in BUILTIN_NAMES or self.scheme.startswith("file:")

    @property
    def relaxed_scheme(self) -> RelaxedScheme:
        return RelaxedScheme.parse(self.scheme)

    @property
    def aux_m(self) -> int:
        if self.is_dvd:
            return 1
        s = self.relaxed_scheme
        if s is RelaxedScheme.SAVCN:
            return 2
        if s is RelaxedScheme.IEQ:
            return int(self.m)
        return 1

    @property
    def c0_value(self) -> float:
        """C0 default: 0 for m = 1, 1 for m = 2."""
        if self.c0 is not None:
            return float(self.c0)
        return 1.0 if self.aux_m % 2 == 0 else 0.0

    @property
    def steps(self) -> int:
        return steps_for(self.t_end, self.h)

    def validate(self) -> None:
        try:
            self.kind
            self.bc
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.is_dvd:
            try:
                self.relaxed_scheme
            except ValueError:
                raise ConfigError(
                    f"unknown scheme {self.scheme!r}; use one of {', '.join(BUILTIN_NAMES)}, "
                    f"{', '.join(s.value for s in RelaxedScheme)} or file:<tableau>") from None
        if any(not isinstance(k, int) or k < 2 for k in self.grid_n):
            raise ConfigError("grid.n must be integers >= 2")
        if any(not (isinstance(x, (int, float)) and x > 0) for x in self.grid_length):
            raise ConfigError("grid.length must be positive")
        for name in ("gamma", "epsilon", "h", "t_end", "beta", "radius_scale"):
            if not isinstance(getattr(self, name), (int, float)) or isinstance(getattr(self, name), bool):
                raise ConfigError(f"{name} must be a number")
        if not self.h > 0:
            raise ConfigError("h must be positive")
        if not self.t_end >= self.h:
            raise ConfigError("t_end must be at least h (zero steps requested)")
        if not (self.gamma > 0 and self.epsilon > 0):
            raise ConfigError("fe.gamma and fe.epsilon must be positive")
        if self.beta < 0:
            raise ConfigError("fe.beta must be nonnegative")
        if not isinstance(self.m, int) or self.m < 1:
            raise ConfigError("fe.m must be a positive integer")
        if not self.is_dvd and self.relaxed_scheme is RelaxedScheme.IEQ and self.m not in (1, 2):
            raise ConfigError("IEQ scheme supports fe.m = 1 or 2")
        try:
            self.steps
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.init_kind not in ("sine", "sine2d", "circle", "random", "constant", "file"):
            raise ConfigError(f"unknown init.kind {self.init_kind!r}")
        if self.init_kind == "sine2d" and self.grid_dim != 2:
            raise ConfigError("init.kind = sine2d needs grid.dim = 2")
        if self.init_kind == "circle" and self.grid_dim != 2:
            raise ConfigError("init.kind = circle needs grid.dim = 2")
        if self.init_kind == "file" and not self.init_path:
            raise ConfigError("init.kind = file needs init.path")
        if self.init_kind == "random" and not self.init_low <= self.init_high:
            raise ConfigError("init.low must not exceed init.high")
        if not isinstance(self.seed, int):
            raise ConfigError("seed must be an integer")
        if any(not isinstance(t, (int, float)) or t <= 0 or t > self.t_end for t in self.output_snapshots):
            raise ConfigError("output.snapshots must be times in (0, t_end]")
        if self.precond_block is not None and (not isinstance(self.precond_block, int) or self.precond_block < 0):
            raise ConfigError("precond.block must be a nonnegative integer")
        if not isinstance(self.precond_overlap, int) or self.precond_overlap < 0:
            raise ConfigError("precond.overlap must be a nonnegative integer")

    def with_overrides(self, **changes) -> "ExperimentConfig":
        cfg = replace(self, **changes)
        cfg.validate()
        return cfg

    def as_mapping(self) -> dict:
        inv = {v: k for k, v in self.KEYS.items()}
        return {inv[f.name]: getattr(self, f.name) for f in fields(self) if f.name in inv}


def steps_for(t_end: float, h: float) -> int:
    """Number of steps of size h reaching t_end; h must divide t_end."""
    n = round(t_end / h)
    if n < 1 or abs(n * h - t_end) > 1e-9 * max(abs(t_end), 1.0):
        raise ValueError(f"h = {h!r} does not divide t_end = {t_end!r}")
    return int(n)


def load_config(path) -> ExperimentConfig:
    p = resolve_config_path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {p}: {exc}") from exc
    return ExperimentConfig.from_mapping(parse_text(text), source=str(p))
