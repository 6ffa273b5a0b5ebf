"""Declarative scenario configuration and the built-in function catalog.

A scenario is a JSON document validated by :class:`ScenarioConfig`. Dynamics,
observation maps and costs are chosen by name from a small catalog instead of
user code, which keeps configs portable and hashable. The canonical JSON form
(sorted keys, no whitespace) is what gets hashed into run reports.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .densities import bump, step, tilt, truncated_normal, uniform
from .errors import ConfigError
from .grid import Grid, GridDensity
from .model import SystemModel

__all__ = [
    "ScenarioConfig",
    "load_config",
    "parse_config",
    "builtin_scenario",
    "builtin_names",
    "canonical_json",
    "config_hash",
    "build_model",
    "build_menu_densities",
    "Linear",
    "Affine",
    "Quadratic",
    "QuadraticTerminal",
    "TargetWell",
    "Zero",
]


# -- function catalog ---------------------------------------------------------


@dataclass(frozen=True)
class Zero:
    def __call__(self, x, u=None):
        return np.zeros_like(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class Linear:
    """``b(x, u) = a x + b u``."""

    a: float = 1.0
    b: float = 1.0

    def __call__(self, x, u):
        return self.a * np.asarray(x, dtype=float) + self.b * np.asarray(u, dtype=float)


@dataclass(frozen=True)
class Affine:
    """``h(x) = slope x + offset``."""

    slope: float = 1.0
    offset: float = 0.0

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.offset


@dataclass(frozen=True)
class Quadratic:
    """``L(x, u) = q x^2 + r u^2``."""

    q: float = 0.0
    r: float = 0.0

    def __call__(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return self.q * x * x + self.r * u * u


@dataclass(frozen=True)
class QuadraticTerminal:
    """``weight * (x - center)^2``."""

    weight: float = 1.0
    center: float = 0.0

    def __call__(self, x):
        d = np.asarray(x, dtype=float) - self.center
        return self.weight * d * d


@dataclass(frozen=True)
class TargetWell:
    """``-depth * exp(-((x - target) / width)^2)``: cheapest near ``target``."""

    depth: float = 1.0
    target: float = 0.0
    width: float = 1.0

    def __call__(self, x):
        d = (np.asarray(x, dtype=float) - self.target) / self.width
        return -self.depth * np.exp(-d * d)


# -- schema -------------------------------------------------------------------


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridSpec(_Strict):
    lower: float
    upper: float
    n_points: int = Field(ge=2, le=4001)

    @model_validator(mode="after")
    def _ordered(self):
        if not self.lower < self.upper:
            raise ValueError("lower must be below upper")
        return self


class IncrementSpec(_Strict):
    half_width: float = Field(gt=0)
    n_points: int = Field(ge=3, le=4001)


class NoiseSpec(_Strict):
    family: Literal["truncated_normal", "uniform"] = "truncated_normal"
    loc: float = 0.0
    scale: float = Field(default=1.0, gt=0)


class DynamicsSpec(_Strict):
    kind: Literal["linear"] = "linear"
    a: float = 1.0
    b: float = 1.0


class ObservationSpec(_Strict):
    kind: Literal["identity", "zero", "affine"] = "identity"
    slope: float = 1.0
    offset: float = 0.0


class RunningCostSpec(_Strict):
    kind: Literal["zero", "quadratic"] = "zero"
    q: float = Field(default=0.0, ge=0)
    r: float = Field(default=0.0, ge=0)


class TerminalSpec(_Strict):
    kind: Literal["zero", "quadratic", "target_well"] = "zero"
    weight: float = 1.0
    center: float = 0.0
    depth: float = 1.0
    target: float = 0.0
    width: float = Field(default=1.0, gt=0)


class EffortSpec(_Strict):
    kind: Literal["nominal", "tilt", "bump", "step"]
    epsilon: float = Field(default=0.0, gt=-1, lt=1)
    center: float = 0.5
    width: float = Field(default=0.2, gt=0)
    amplitude: float = Field(default=0.0, gt=-1)
    label: Optional[str] = None

    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "nominal":
            return "nominal"
        if self.kind == "bump":
            return f"bump(c={self.center:g},w={self.width:g},a={self.amplitude:g})"
        return f"{self.kind}({self.epsilon:g})"


class GameSpec(_Strict):
    s: float = Field(default=1.0, gt=0)
    t: float = Field(default=0.01, ge=0)
    epsilon: Union[float, list[float]] = 0.0
    stealth_filter: bool = True
    menu: list[EffortSpec] = Field(default_factory=lambda: [EffortSpec(kind="nominal")])

    def epsilons(self, horizon: int) -> list[float]:
        if isinstance(self.epsilon, list):
            if len(self.epsilon) != horizon:
                raise ConfigError(f"game.epsilon: need {horizon} values, got {len(self.epsilon)}")
            return [float(e) for e in self.epsilon]
        return [float(self.epsilon)] * horizon


class TrialSpec(_Strict):
    simulate: int = Field(default=1000, ge=1)
    cost: int = Field(default=100_000, ge=2)
    random_instances: int = Field(default=1000, ge=1)
    theorem1_seeds: int = Field(default=1000, ge=1)
    theorem2: int = Field(default=10_000, ge=2)
    ess_sigma_samples: int = Field(default=256, ge=1)
    ess_reachable: int = Field(default=64, ge=0)
    equilibrium: int = Field(default=10_000, ge=2)
    w_rollouts: int = Field(default=200, ge=2)
    w_starts: int = Field(default=50, ge=1)


class DPSpec(_Strict):
    obs_nodes: int = Field(default=3, ge=1, le=9)
    alpha_cap: int = Field(default=20_000, ge=1)
    oracle: bool = True


class ScenarioConfig(_Strict):
    name: str = "scenario"
    seed: int = Field(default=0, ge=0, lt=2**63)
    state_grid: GridSpec
    obs_grid: GridSpec
    increment_grid: IncrementSpec
    horizon: int = Field(ge=0, le=8)
    controls: Union[list[float], list[list[float]]]
    dynamics: DynamicsSpec = DynamicsSpec()
    observation: ObservationSpec = ObservationSpec()
    running_cost: RunningCostSpec = RunningCostSpec()
    terminal_cost: TerminalSpec = TerminalSpec()
    gaslighter_cost: TerminalSpec = TerminalSpec()
    process_noise: NoiseSpec = NoiseSpec()
    observation_noise: NoiseSpec = NoiseSpec()
    prior: NoiseSpec = NoiseSpec()
    mu: float = Field(gt=0)
    zeta_mode: Literal["analytic", "empirical"] = "analytic"
    game: GameSpec = GameSpec()
    trials: TrialSpec = TrialSpec()
    dp: DPSpec = DPSpec()

    @field_validator("controls")
    @classmethod
    def _nonempty(cls, v):
        if len(v) == 0:
            raise ValueError("control set must be nonempty")
        if isinstance(v[0], list) and any(len(s) == 0 for s in v):
            raise ValueError("every stage control set must be nonempty")
        return v


def _format_error(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{path}: {e['msg']}")
    return "invalid config: " + "; ".join(lines)


def parse_config(data: dict) -> ScenarioConfig:
    try:
        return ScenarioConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_format_error(err)) from None


def load_config(path) -> ScenarioConfig:
    """Read and validate a scenario, or one of the built-in names."""
    p = Path(path)
    if not p.exists() and str(path) in builtin_names():
        return builtin_scenario(str(path))
    try:
        data = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    return parse_config(data)


def builtin_names() -> list[str]:
    root = resources.files("gaslight") / "scenarios"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".json"))


def builtin_scenario(name: str) -> ScenarioConfig:
    root = resources.files("gaslight") / "scenarios"
    f = root / f"{name}.json"
    if not f.is_file():
        raise ConfigError(f"unknown built-in scenario {name!r}")
    return parse_config(json.loads(f.read_text()))


def canonical_json(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def config_hash(cfg: ScenarioConfig) -> str:
    return hashlib.sha256(canonical_json(cfg).encode()).hexdigest()


# -- builders -----------------------------------------------------------------


def _grid(spec: GridSpec) -> Grid:
    return Grid(spec.lower, spec.upper, spec.n_points)


def _noise(spec: NoiseSpec, grid: Grid) -> GridDensity:
    if spec.family == "uniform":
        return uniform(grid)
    return truncated_normal(grid, spec.loc, spec.scale)


def _observation(spec: ObservationSpec):
    if spec.kind == "identity":
        return Affine(1.0, 0.0)
    if spec.kind == "zero":
        return Affine(0.0, 0.0)
    return Affine(spec.slope, spec.offset)


def _terminal(spec: TerminalSpec):
    if spec.kind == "zero":
        return Zero()
    if spec.kind == "quadratic":
        return QuadraticTerminal(spec.weight, spec.center)
    return TargetWell(spec.depth, spec.target, spec.width)


def build_model(cfg: ScenarioConfig) -> SystemModel:
    sg = _grid(cfg.state_grid)
    og = _grid(cfg.obs_grid)
    inc = Grid(-cfg.increment_grid.half_width, cfg.increment_grid.half_width, cfg.increment_grid.n_points)
    rc = cfg.running_cost
    return SystemModel(
        state_grid=sg,
        obs_grid=og,
        horizon=cfg.horizon,
        controls=cfg.controls,
        dynamics=Linear(cfg.dynamics.a, cfg.dynamics.b),
        observation=_observation(cfg.observation),
        running_cost=Zero() if rc.kind == "zero" else Quadratic(rc.q, rc.r),
        terminal_cost=_terminal(cfg.terminal_cost),
        gaslighter_cost=_terminal(cfg.gaslighter_cost),
        process_noise=_noise(cfg.process_noise, inc),
        observation_noise=_noise(cfg.observation_noise, og),
        mu=cfg.mu,
        prior=_noise(cfg.prior, sg),
        name=cfg.name,
    )


def effort_density(spec: EffortSpec, phi: GridDensity) -> GridDensity:
    if spec.kind == "nominal":
        return phi
    if spec.kind == "tilt":
        return tilt(phi, spec.epsilon)
    if spec.kind == "step":
        return step(phi, spec.epsilon)
    return bump(phi, spec.center, spec.width, spec.amplitude)


def build_menu_densities(cfg: ScenarioConfig, model: SystemModel) -> list[tuple[str, GridDensity]]:
    """Menu members as ``(label, density)``; the nominal density comes first."""
    out = [("nominal", model.phi)]
    for spec in cfg.game.menu:
        if spec.kind == "nominal":
            continue
        try:
            out.append((spec.name(), effort_density(spec, model.phi)))
        except ValueError as err:
            raise ConfigError(f"game.menu: {spec.name()}: {err}") from None
    return out
