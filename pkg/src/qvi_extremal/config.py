"""Run configuration: an INI file with CLI overrides, plus named analytic sources.

Sources are written as ``name`` or ``name:args``:

* ``sin_pi``            sin(pi x)
* ``pi2_sin_pi``        pi^2 sin(pi x)
* ``zero``              0
* ``const:c``           c
* ``bump:c,w,amp``      amp exp(-((x-c)/w)^2)
* ``parabola:a,b,x0``   a + b (x-x0)^2
* ``csv:path``          linear interpolation of an ``x,value`` file

A source is turned into a load vector with the lumped mass, so ``const:c``
as a right-hand side means the function c.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigurationError
from .fem import DiscreteSpace, assemble_space
from .io import read_field_csv
from .obstacles import ConstantObstacle, InverseLaplacianObstacle, ObstacleMap, ThermoformingObstacle

OBSTACLE_KINDS = ("constant", "inverse_laplacian", "thermoforming")


def _numbers(spec: str, args: str, count: int) -> list[float]:
    try:
        vals = [float(a) for a in args.split(",")]
    except ValueError:
        raise ConfigurationError(f"bad numbers in source '{spec}'") from None
    if len(vals) != count:
        raise ConfigurationError(f"source '{spec}' needs {count} numbers")
    return vals


def parse_source(spec: str, base_dir: Path | None = None) -> Callable[[np.ndarray], np.ndarray]:
    spec = spec.strip()
    name, _, args = spec.partition(":")
    name = name.strip().lower()
    if name == "sin_pi":
        return lambda x: np.sin(np.pi * x)
    if name == "pi2_sin_pi":
        return lambda x: np.pi**2 * np.sin(np.pi * x)
    if name == "zero":
        return lambda x: np.zeros_like(x)
    if name == "const":
        (c,) = _numbers(spec, args, 1)
        return lambda x: np.full_like(x, c, dtype=float)
    if name == "bump":
        c, w, amp = _numbers(spec, args, 3)
        if w <= 0:
            raise ConfigurationError("bump width must be positive")
        return lambda x: amp * np.exp(-(((x - c) / w) ** 2))
    if name == "parabola":
        a, b, x0 = _numbers(spec, args, 3)
        return lambda x: a + b * (x - x0) ** 2
    if name == "csv":
        path = Path(args.strip())
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        xs, vs = read_field_csv(path)
        order = np.argsort(xs)
        return lambda x: np.interp(x, xs[order], vs[order])
    raise ConfigurationError(f"unknown source '{spec}'")


@dataclass
class RunConfig:
    # space
    n: int = 64
    coefficient: str = "const:1"
    # obstacle map
    obstacle: str = "inverse_laplacian"
    psi: str = "const:0.5"
    scale: float = 3.0
    offset: float = 0.6
    k: float = float(np.pi**2)
    # data
    source: str = "const:8"
    bound: str = "const:12"
    direction: str = "const:1"
    # iteration
    branch: str = "max"
    rho: float = 0.0
    rho0: float = 1.0
    rho_factor: float = 0.5
    rho_steps: int = 20
    tol_fp: float = 1e-9
    max_n: int = 200
    pdas_c: float = 1.0
    perturbations: int = 20
    perturbation_size: float = 0.05
    # control
    a: float = 1.0
    b: float = 0.0
    y_d: str = "const:1"
    nu: float = 1e-2
    u_a: str = "const:0"
    u_b: str = "const:10"
    f0: str = "zero"
    control_schedule: tuple = (1e-2, 1e-4, 1e-6, 1e-8)
    tol_kkt: float = 1e-7
    max_iter: int = 500
    f_star: str = ""
    # run
    seed: int = 0
    proptest_count: int = 50
    out: str = "out"
    base_dir: Path = field(default=Path("."), repr=False)

    def validate(self) -> "RunConfig":
        if self.n < 2:
            raise ConfigurationError("n must be at least 2")
        if self.obstacle not in OBSTACLE_KINDS:
            raise ConfigurationError(f"obstacle must be one of {OBSTACLE_KINDS}")
        if self.branch not in ("min", "max"):
            raise ConfigurationError("branch must be min or max")
        for name in ("tol_fp", "tol_kkt", "rho0", "nu", "k", "pdas_c", "perturbation_size"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0 < self.rho_factor < 1:
            raise ConfigurationError("rho_factor must lie in (0, 1)")
        if self.rho < 0 or self.scale < 0:
            raise ConfigurationError("rho and scale must be nonnegative")
        if self.rho_steps < 1 or self.max_n < 1 or self.max_iter < 1:
            raise ConfigurationError("step counts must be positive")
        sched = [float(r) for r in self.control_schedule]
        if not sched or any(r <= 0 for r in sched):
            raise ConfigurationError("control_schedule must hold positive values")
        # resolve every source now so that missing files fail early
        for name in ("coefficient", "psi", "source", "bound", "direction", "y_d", "u_a", "u_b", "f0"):
            parse_source(getattr(self, name), self.base_dir)
        if self.f_star:
            parse_source(self.f_star, self.base_dir)
        return self

    @property
    def rho_schedule(self) -> list[float]:
        return [self.rho0 * self.rho_factor**k for k in range(self.rho_steps)]

    def nodal(self, name: str, space: DiscreteSpace) -> np.ndarray:
        return space.interpolate(parse_source(getattr(self, name), self.base_dir))

    def load(self, name: str, space: DiscreteSpace) -> np.ndarray:
        return space.load(self.nodal(name, space))

    def to_dict(self) -> dict:
        return {f.name: (list(v) if isinstance(v := getattr(self, f.name), tuple) else v)
                for f in fields(self) if f.name != "base_dir"}


# INI layout: section -> keys understood in that section
_SECTIONS = {
    "space": ("n", "coefficient"),
    "obstacle": ("obstacle", "psi", "scale", "offset", "k"),
    "data": ("source", "bound", "direction"),
    "iteration": ("branch", "rho", "rho0", "rho_factor", "rho_steps", "tol_fp", "max_n", "pdas_c",
                  "perturbations", "perturbation_size"),
    "control": ("a", "b", "y_d", "nu", "u_a", "u_b", "f0", "control_schedule", "tol_kkt",
                "max_iter", "f_star"),
    "run": ("seed", "proptest_count", "out"),
}
_ALIASES = {("obstacle", "kind"): "obstacle", ("control", "rho_schedule"): "control_schedule"}


def _coerce(name: str, raw: str):
    default = getattr(RunConfig, name, None)
    if name == "control_schedule":
        try:
            return tuple(float(v) for v in raw.split(","))
        except ValueError:
            raise ConfigurationError(f"bad rho schedule '{raw}'") from None
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: '{raw}'") from None
    return raw.strip()


def load_config(path: str | Path | None = None, **overrides) -> RunConfig:
    """Read an INI file (optional) and apply keyword overrides (None values ignored)."""
    values: dict = {}
    base = Path(".")
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"config file not found: {path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        try:
            parser.read(path)
        except configparser.Error as exc:
            raise ConfigurationError(f"{path}: {exc}") from None
        base = path.parent
        for section in parser.sections():
            if section not in _SECTIONS:
                raise ConfigurationError(f"unknown section [{section}]")
            for key, raw in parser.items(section):
                name = _ALIASES.get((section, key), key)
                if name not in _SECTIONS[section]:
                    raise ConfigurationError(f"unknown key '{key}' in [{section}]")
                values[name] = _coerce(name, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(values) - {f.name for f in fields(RunConfig)}
    if unknown:
        raise ConfigurationError(f"unknown settings: {sorted(unknown)}")
    return replace(RunConfig(), base_dir=base, **values).validate()


def build_space(cfg: RunConfig) -> DiscreteSpace:
    coeff = parse_source(cfg.coefficient, cfg.base_dir)
    return assemble_space(cfg.n, coeff)


def build_obstacle(cfg: RunConfig, space: DiscreteSpace) -> ObstacleMap:
    if cfg.obstacle == "constant":
        return ConstantObstacle(space, cfg.nodal("psi", space))
    if cfg.obstacle == "inverse_laplacian":
        return InverseLaplacianObstacle(space, scale=cfg.scale, offset=cfg.offset)
    return ThermoformingObstacle(space, k=cfg.k)
