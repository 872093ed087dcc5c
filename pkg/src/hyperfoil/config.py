"""Flat ``section.key = value`` run configuration.

Example::

    # desk-scale KGZ run
    grid.nx = 512
    grid.h = 0.25
    time.dt = 0.1
    time.t_final = 60
    ic.eps = 0.01
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

SECTIONS = ("grid", "time", "ic", "coeffs", "verify", "output", "run")


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where = f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}".strip())
        self.line = line


@dataclass
class RunConfig:
    """Parameters shared by both evolution systems.

    ``n_hyperboloids`` hyperbolic times are spread uniformly on
    ``[s_min, s_max]`` with ``s_max = sqrt(2 t_final - 1)``.
    """

    eps: float = 0.01
    nx: int = 512
    h: float = 0.25
    order: int = 2
    dt: float = 0.1
    t0: float = 2.0
    t_final: float = 60.0
    cfl_factor: float = 0.5
    seed: int = 0
    radius: float = 1.0
    coeff_set: str = "a"
    P1: list[float] | None = None
    P2: list[float] | None = None
    n_hyperboloids: int = 24
    s_min: float = 2.0
    gamma: float = 0.5
    delta: float = 1.0 / 32.0
    words_order: int = 2
    ghost_times: list[float] = field(default_factory=list)
    keep_slices: bool = True
    checkpoint_every: int = 0
    figures: bool = True
    threads: int = 1

    @property
    def s_max(self) -> float:
        return (2.0 * self.t_final - 1.0) ** 0.5

    @property
    def extent(self) -> float:
        return 0.5 * self.h * (self.nx - 1)

    def validate(self):
        if self.eps < 0:
            raise ConfigError(f"ic.eps must be non-negative, got {self.eps}")
        if self.cfl_factor > 0.5:
            raise ConfigError(f"time.cfl_factor must be <= 0.5, got {self.cfl_factor}")
        if not 0 < self.dt <= self.cfl_factor * self.h * (1 + 1e-12):
            raise ConfigError(f"CFL violation: dt={self.dt} exceeds {self.cfl_factor} * h = {self.cfl_factor * self.h}")
        if self.order not in (2, 4):
            raise ConfigError(f"grid.order must be 2 or 4, got {self.order}")
        if self.nx < 16:
            raise ConfigError(f"grid.nx must be >= 16, got {self.nx}")
        if self.extent < self.t_final + 1.0 - 1e-9:
            raise ConfigError(
                f"domain half-width {self.extent:g} must be >= t_final + 1 = {self.t_final + 1:g}")
        if self.t_final <= self.t0:
            raise ConfigError("time.t_final must exceed t0")
        if not 0 < self.radius <= 1.0:
            raise ConfigError(f"ic.radius must lie in (0, 1]: data must stay in the unit ball, got {self.radius}")
        if self.words_order not in (0, 1, 2):
            raise ConfigError("verify.words_order must be 0, 1 or 2")
        if self.coeff_set not in ("a", "b", "c", "custom", "zero"):
            raise ConfigError(f"coeffs.set must be a, b, c, zero or custom, got {self.coeff_set!r}")
        return self

    def hyperboloid_times(self):
        import numpy as np

        return np.linspace(self.s_min, self.s_max, self.n_hyperboloids)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        payload = {k: v for k, v in self.as_dict().items() if k not in ("threads", "figures")}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


# config key -> (RunConfig attribute, parser)
def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> list[float]:
    text = text.strip().strip("[]")
    if not text:
        return []
    return [float(v) for v in text.replace(",", " ").split()]


KEYS = {
    "grid.nx": ("nx", int),
    "grid.h": ("h", float),
    "grid.order": ("order", int),
    "time.dt": ("dt", float),
    "time.t0": ("t0", float),
    "time.t_final": ("t_final", float),
    "time.cfl_factor": ("cfl_factor", float),
    "ic.eps": ("eps", float),
    "ic.seed": ("seed", int),
    "ic.radius": ("radius", float),
    "coeffs.set": ("coeff_set", str),
    "coeffs.P1": ("P1", _floats),
    "coeffs.P2": ("P2", _floats),
    "verify.n_hyperboloids": ("n_hyperboloids", int),
    "verify.s_min": ("s_min", float),
    "verify.gamma": ("gamma", float),
    "verify.delta": ("delta", float),
    "verify.words_order": ("words_order", int),
    "verify.ghost_times": ("ghost_times", _floats),
    "verify.keep_slices": ("keep_slices", _bool),
    "output.checkpoint_every": ("checkpoint_every", int),
    "output.figures": ("figures", _bool),
    "run.threads": ("threads", int),
}


def parse_config(text: str, path: str | None = None, base: RunConfig | None = None) -> RunConfig:
    cfg = dataclasses.replace(base) if base is not None else RunConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, path)
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"unknown key {key!r}", lineno, path)
        attr, conv = KEYS[key]
        try:
            setattr(cfg, attr, conv(value))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}", lineno, path) from None
    if cfg.P1 is not None or cfg.P2 is not None:
        if cfg.coeff_set not in ("custom",):
            cfg.coeff_set = "custom"
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(str(exc), None, path) from None
    return cfg


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text(), str(path))


def dump_config(cfg: RunConfig) -> str:
    lines = []
    inverse = {attr: key for key, (attr, _) in KEYS.items()}
    for attr, value in cfg.as_dict().items():
        key = inverse.get(attr)
        if key is None or value is None:
            continue
        if isinstance(value, list):
            value = ", ".join(repr(float(v)) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
