"""Expected stage-wise stealthiness of an effort and the gaslighter's design cost.

An effort density ``phi°`` is ``s``-stealthy at a stage when, for every
admissible control and every state with ``||sigma||_1 <= zeta``, the expected
(under the nominal ``phi``) L1 distance between the gaslit and the nominal
update is at most ``s``. A sufficient condition is the ratio-deviation
integral ``int |phi / phi° - 1| dy <= s / (c zeta)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DegenerateDensityError, GaslightError
from .grid import GridDensity
from .model import GaslightEffort, SystemModel
from .robustness import RobustnessConstants, random_states
from .filtering import batch_filter
from .seeding import mix

__all__ = [
    "ess_sufficient_integral",
    "ess_lhs",
    "ess_definition_check",
    "design_cost",
    "certify_effort",
    "StageStealth",
    "StealthReport",
    "s_bar",
]


def ess_sufficient_integral(phi: GridDensity, effort_density: GridDensity) -> float:
    """Trapezoid integral of ``|phi / phi° - 1|`` over the observation grid."""
    if phi.grid != effort_density.grid:
        raise GaslightError("incompatible grids")
    if np.any(effort_density.values <= 0):
        raise DegenerateDensityError("degenerate effort density")
    dev = np.abs(phi.values / effort_density.values - 1.0)
    return float(np.dot(phi.grid.weights, dev))


def design_cost(phi: GridDensity, effort_density: GridDensity, t: float) -> float:
    """``t * int |phi / phi° - 1| dy``; zero for the nominal density."""
    if t < 0:
        raise GaslightError("design-cost parameter t must be nonnegative")
    return float(t) * ess_sufficient_integral(phi, effort_density)


def s_bar(s: float, constants: RobustnessConstants) -> float:
    return s / (constants.c * constants.zeta)


def ess_lhs(model: SystemModel, effort_density: GridDensity, stage: int, states: np.ndarray) -> np.ndarray:
    """Expected update deviation for each state, maximized over the stage's controls.

    The expectation over ``y ~ phi`` uses the trapezoid rule on the
    observation grid nodes; both updates are computed explicitly.
    """
    states = np.ascontiguousarray(np.atleast_2d(states))
    y = model.obs_grid.nodes
    q = model.obs_grid.weights * model.phi.values
    lik_nom = model.likelihood(y, model.obs_density(y))
    den = model.obs_density(y, effort_density)
    if np.any(den <= 0):
        raise DegenerateDensityError("degenerate effort density")
    lik_gas = model.likelihood(y, den)
    w = model.state_grid.weights
    ops = model.stage_operators(stage)
    best = np.zeros(len(states))
    for a in range(len(ops.controls)):
        k = ops.kernels[a]
        total = np.zeros(len(states))
        for j in range(len(y)):
            nom = (states * lik_nom[j]) @ k.T
            gas = (states * lik_gas[j]) @ k.T
            total += q[j] * (np.abs(gas - nom) @ w)
        best = np.maximum(best, total)
    return best


def _reachable_states(model: SystemModel, effort_density: GridDensity, stage: int, n: int,
                      rng: np.random.Generator) -> np.ndarray:
    if n == 0 or stage == 0:
        return np.empty((0, model.n_states)) if stage else model.prior.values[None, :].copy()
    u_idx = np.column_stack([rng.integers(0, len(model.controls[k]), size=n) for k in range(stage)])
    y = rng.uniform(model.obs_grid.lower, model.obs_grid.upper, size=(n, stage))
    nom = batch_filter(model, model.prior.values, u_idx, y)
    eff = GaslightEffort((effort_density,) * model.horizon)
    gas = batch_filter(model, model.prior.values, u_idx, y, effort=eff)
    return np.vstack([nom, gas])


def ess_definition_check(
    model: SystemModel,
    effort_density: GridDensity,
    s: float,
    constants: RobustnessConstants,
    stage: int = 0,
    n_sigma_samples: int = 256,
    n_reachable: int = 64,
    seed: int = 0,
) -> tuple[float, float, bool]:
    """Estimate the stealthiness supremum over states with ``||sigma||_1 = zeta``.

    Candidate states are random smooth/rough states, filter-reachable states
    (random controls, uniform observations) and states concentrated on a
    single node; all are scaled to norm ``zeta``. The objective is linear in
    nonnegative ``sigma``, so the node-concentrated states already attain the
    supremum; the other candidates serve as a cross-check. ``stage`` is the
    0-based index of the control set preceding the observation. The
    expectation is a deterministic quadrature, so the returned standard error
    is zero.
    """
    if not s > 0:
        raise GaslightError("trust level s must be positive")
    rng = np.random.default_rng(mix(seed, "ess", stage))
    w = model.state_grid.weights
    parts = [random_states(model, rng, n_sigma_samples, constants.zeta)]
    reach = _reachable_states(model, effort_density, stage, n_reachable, rng)
    if len(reach):
        parts.append(reach / (reach @ w)[:, None] * constants.zeta)
    parts.append(np.diag(constants.zeta / w))
    lhs = float(np.max(ess_lhs(model, effort_density, stage, np.vstack(parts))))
    return lhs, 0.0, lhs <= s + 1e-9


@dataclass(frozen=True)
class StageStealth:
    stage: int
    integral: float
    s_bar: float
    ess_lhs: Optional[float]
    ess_se: Optional[float]
    passed: bool
    ess_pass: Optional[bool]

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "integral": self.integral,
            "s_bar": self.s_bar,
            "ess_lhs": self.ess_lhs,
            "ess_se": self.ess_se,
            "pass": self.passed,
            "ess_pass": self.ess_pass,
        }


@dataclass
class StealthReport:
    """Per-stage certification of an effort at trust level ``s``.

    ``stage`` is 1-based: entry ``k`` concerns the density of ``y_k``.
    """

    s: float
    c: float
    zeta: float
    stages: list = field(default_factory=list)
    label: str = ""

    @property
    def s_bar(self) -> float:
        return self.s / (self.c * self.zeta)

    @property
    def passed(self) -> bool:
        return all(st.passed for st in self.stages)

    @property
    def offending_stages(self) -> list:
        return [st.stage for st in self.stages if not st.passed]

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "s": self.s,
            "c": self.c,
            "zeta": self.zeta,
            "s_bar": self.s_bar,
            "pass": self.passed,
            "offending_stages": self.offending_stages,
            "stages": [st.to_dict() for st in self.stages],
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def certify_effort(
    model: SystemModel,
    effort: GaslightEffort,
    s: float,
    constants: RobustnessConstants,
    definition_check: bool = True,
    n_sigma_samples: int = 256,
    n_reachable: int = 64,
    seed: int = 0,
    label: str = "",
) -> StealthReport:
    """Check the sufficient integral at every stage, with optional spot checks of the definition."""
    effort.check(model)
    sb = s_bar(s, constants)
    stages = []
    for k, d in enumerate(effort.densities):
        v = ess_sufficient_integral(model.phi, d)
        if definition_check:
            lhs, se, ok = ess_definition_check(model, d, s, constants, k, n_sigma_samples, n_reachable, seed)
        else:
            lhs = se = ok = None
        stages.append(StageStealth(k + 1, v, sb, lhs, se, v <= sb, ok))
    return StealthReport(s=s, c=constants.c, zeta=constants.zeta, stages=stages, label=label)
