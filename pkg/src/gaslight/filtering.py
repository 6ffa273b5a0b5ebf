"""Information-state filtering and the two representations of the DM's cost.

One update maps an unnormalized density ``sigma`` over the state grid to::

    sigma'(z) = sum_j w_j P(z | xi_j, u) exp(mu L(xi_j, u)) Psi(xi_j, y) sigma(xi_j)

with ``Psi(xi, y) = phi(y - h(xi)) / phi(y)`` for the nominal operator and
``phi(y - h(xi)) / phi°(y)`` under a gaslighting effort. States are never
renormalized; their mass carries the risk-sensitive cost.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .errors import DegenerateDensityError, GaslightError
from .grid import GridDensity, InformationState
from .model import GaslightEffort, SamplingMode, SystemModel, pathwise_costs, simulate_batch
from .seeding import trial_seeds

__all__ = [
    "FilterRun",
    "info_state_update",
    "gaslit_update",
    "run_filter",
    "batch_filter",
    "terminal_functional",
    "terminal_values",
    "cost_info_state",
    "cost_direct",
    "mc_mean",
]


@dataclass(frozen=True)
class FilterRun:
    states: tuple
    controls: tuple
    observations: tuple
    effort_used: Optional[GaslightEffort] = None

    @property
    def final(self) -> InformationState:
        return self.states[-1]


def _update(model: SystemModel, sigma: InformationState, u: float, y: float, denom: float) -> InformationState:
    if sigma.grid != model.state_grid:
        raise GaslightError("information state is not on the model's state grid")
    lik = model.likelihood(np.array([float(y)]), np.array([denom]))
    kern = model.operator(float(u))[None, :, :]
    out = kernels.filter_step(
        np.ascontiguousarray(sigma.values[None, :]), lik, np.zeros(1, dtype=np.int64),
        np.ascontiguousarray(kern),
    )[0]
    return InformationState(model.state_grid, out)


def info_state_update(model: SystemModel, sigma: InformationState, u: float, y: float) -> InformationState:
    """Nominal information-state update for control ``u`` and observation ``y``."""
    denom = float(model.obs_density(y))
    if denom <= 0:
        raise DegenerateDensityError("degenerate reference density")
    return _update(model, sigma, u, y, denom)


def gaslit_update(
    model: SystemModel, sigma: InformationState, u: float, y: float, effort_density: GridDensity
) -> InformationState:
    """Update under an effort density: the observation ratio uses ``phi°(y)``."""
    denom = float(model.obs_density(y, effort_density))
    if denom <= 0:
        raise DegenerateDensityError("degenerate effort density")
    return _update(model, sigma, u, y, denom)


def run_filter(model: SystemModel, controls, observations, effort: Optional[GaslightEffort] = None) -> FilterRun:
    """Run the recursion from the prior (or the effort's prior) over given inputs."""
    controls = tuple(float(u) for u in controls)
    observations = tuple(float(y) for y in observations)
    if len(controls) != len(observations):
        raise GaslightError("controls and observations must have equal length")
    if len(controls) > model.horizon:
        raise GaslightError("more inputs than the horizon")
    if effort is not None:
        effort.check(model)
        start = effort.prior if effort.prior is not None else model.prior
    else:
        start = model.prior
    states = [InformationState(model.state_grid, start.values)]
    for k, (u, y) in enumerate(zip(controls, observations)):
        if effort is None:
            states.append(info_state_update(model, states[-1], u, y))
        else:
            states.append(gaslit_update(model, states[-1], u, y, effort.densities[k]))
    return FilterRun(tuple(states), controls, observations, effort)


def batch_filter(model: SystemModel, sigma0, u_idx, y, effort: Optional[GaslightEffort] = None,
                 start_stage: int = 0, record_path: bool = False):
    """Vectorized recursion over trials for given control indices and observations.

    ``u_idx`` and ``y`` have shape ``(T, K - start_stage)``. Returns the final
    states ``(T, n)``, or the whole path ``(T, steps + 1, n)`` when requested.
    """
    u_idx = np.asarray(u_idx, dtype=np.int64)
    y = np.asarray(y, dtype=float)
    T, steps = y.shape
    sigma = np.ascontiguousarray(np.broadcast_to(np.asarray(sigma0, dtype=float), (T, model.n_states)))
    path = [sigma] if record_path else None
    for s in range(steps):
        k = start_stage + s
        ops = model.stage_operators(k)
        yk = np.ascontiguousarray(y[:, s])
        lik = model.likelihood(yk, model.filter_denominator(yk, k, effort))
        sigma = kernels.filter_step(sigma, lik, np.ascontiguousarray(u_idx[:, s]), ops.kernels)
        if record_path:
            path.append(sigma)
    return np.stack(path, axis=1) if record_path else sigma


def terminal_weights(model: SystemModel, cost=None) -> np.ndarray:
    """``w * exp(mu * cost(z))`` so that the terminal functional is a dot product."""
    cost = model.terminal_cost if cost is None else cost
    z = model.state_grid.nodes
    return model.state_grid.weights * np.exp(model.mu * np.broadcast_to(np.asarray(cost(z), dtype=float), z.shape))


def terminal_functional(model: SystemModel, sigma_K: InformationState) -> float:
    """``integral sigma_K(z) exp(mu Phi(z)) dz``."""
    return float(np.dot(terminal_weights(model), sigma_K.values))


def terminal_values(model: SystemModel, sigma_batch: np.ndarray) -> np.ndarray:
    return np.asarray(sigma_batch) @ terminal_weights(model)


def mc_mean(samples) -> tuple[float, float]:
    """Sample mean and its standard error."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    mean = float(np.mean(samples))
    se = float(np.std(samples, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
    return mean, se


def _chunks(n: int, size: int):
    for start in range(0, n, size):
        yield start, min(size, n - start)


CHUNK = 25_000


def cost_info_state(model: SystemModel, policy, effort: Optional[GaslightEffort] = None,
                    n_trials: int = 10_000, seed: int = 0, tag: str = "cost") -> tuple[float, float]:
    """Monte Carlo estimate of ``E_ref[integral sigma_K exp(mu Phi)]``.

    Observations are i.i.d. ``phi`` (reference measure); the policy acts on
    the online filter, which is the gaslit one when ``effort`` is given.
    """
    if n_trials < 1:
        raise GaslightError("n_trials must be at least 1")
    vals = np.empty(n_trials)
    for start, size in _chunks(n_trials, CHUNK):
        seeds = trial_seeds(seed, tag, size, start)
        b = simulate_batch(model, policy, mode=SamplingMode.REFERENCE, seeds=seeds, effort=effort)
        vals[start:start + size] = terminal_values(model, b.sigma_final)
    return mc_mean(vals)


def cost_direct(model: SystemModel, policy, n_trials: int = 10_000, seed: int = 0,
                tag: str = "cost") -> tuple[float, float]:
    """Monte Carlo estimate of ``E[exp(mu (sum L + Phi))]`` under the true model."""
    if n_trials < 1:
        raise GaslightError("n_trials must be at least 1")
    vals = np.empty(n_trials)
    for start, size in _chunks(n_trials, CHUNK):
        seeds = trial_seeds(seed, tag, size, start)
        b = simulate_batch(model, policy, mode=SamplingMode.NOMINAL, seeds=seeds)
        vals[start:start + size] = pathwise_costs(model, b)
    return mc_mean(vals)
