"""Controlled system, observation channel and trajectory simulation.

The hidden state lives on the nodes of ``state_grid``. From node ``xi`` under
control ``u`` the next node ``z`` is drawn with probability proportional to
``w_z * psi(z - b(xi, u))`` (trapezoid weight times process-noise density),
the column being renormalized so that no mass leaves the grid. When
``b(xi, u)`` itself falls outside the grid it is clamped to the nearest bound
and the transition is counted as a clamp event.

Observations live on the circle obtained by identifying the ends of
``obs_grid``: ``y = wrap(h(x) + v)`` with ``v`` drawn from the observation
noise density. Under this convention ``y -> phi(wrap(y - h(x)))`` is an exact
probability density on the observation interval for every ``x``, so the
likelihood ratio ``prod phi(y_i - h(x_{i-1})) / phi(y_i)`` is an exact change
of measure to i.i.d. ``phi`` observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from . import kernels
from .errors import DegenerateDensityError, GaslightError, GridError
from .grid import Grid, GridDensity, interpolate, sample_density, wrap
from .seeding import mix, uniforms

__all__ = [
    "SamplingMode",
    "SystemModel",
    "StageOperators",
    "GaslightEffort",
    "Trajectory",
    "TrajectoryBatch",
    "simulate",
    "simulate_batch",
    "pathwise_cost",
    "pathwise_costs",
    "likelihood_ratio",
    "likelihood_ratios",
]


class SamplingMode(str, Enum):
    """How observations are generated during a simulation.

    ``NOMINAL``: ``y_{k+1} = wrap(h(x_k) + v_k)``, ``v_k ~ phi``.
    ``GASLIT``: ``y_k ~ effort[k-1]`` i.i.d., independent of the state.
    ``REFERENCE``: ``y_k ~ phi`` i.i.d., independent of the state.
    """

    NOMINAL = "nominal"
    GASLIT = "gaslit"
    REFERENCE = "reference"


@dataclass(frozen=True)
class StageOperators:
    """Discretized dynamics for the control set of one stage.

    ``kernels[a, i, j] = P(z_i | xi_j, u_a) / w_i * w_j * exp(mu L(xi_j, u_a))``
    so that one filter step is ``kernels[a] @ (sigma * lik)``.
    ``cdf[a * n + j]`` is the cumulative distribution over next nodes from
    node ``j`` under control ``a``.
    """

    controls: np.ndarray
    kernels: np.ndarray
    cdf: np.ndarray
    clamped: np.ndarray
    mass_deficit: np.ndarray


@dataclass(frozen=True, eq=False)
class SystemModel:
    """Partially observed risk-sensitive control problem on compact grids.

    Callables are vectorized over numpy arrays: ``dynamics(x, u)``,
    ``observation(x)``, ``running_cost(x, u)``, ``terminal_cost(x)`` and
    ``gaslighter_cost(x)``. ``controls`` holds one finite control set per
    stage ``0..K-1``; a single flat sequence is broadcast to every stage.
    """

    state_grid: Grid
    obs_grid: Grid
    horizon: int
    controls: tuple
    dynamics: Callable
    observation: Callable
    running_cost: Callable
    terminal_cost: Callable
    gaslighter_cost: Callable
    process_noise: GridDensity
    observation_noise: GridDensity
    mu: float
    prior: GridDensity
    name: str = "model"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.mu > 0:
            raise GaslightError(f"risk sensitivity mu must be positive, got {self.mu}")
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise GaslightError(f"horizon must be a nonnegative integer, got {self.horizon}")
        ctrl = self.controls
        if len(ctrl) > 0 and np.isscalar(ctrl[0]):
            ctrl = (tuple(float(c) for c in ctrl),) * self.horizon
        else:
            ctrl = tuple(tuple(float(c) for c in stage) for stage in ctrl)
        if len(ctrl) != self.horizon:
            raise GaslightError(f"need {self.horizon} control sets, got {len(ctrl)}")
        if any(len(c) == 0 for c in ctrl):
            raise GaslightError("every control set must be nonempty")
        object.__setattr__(self, "controls", ctrl)
        if self.prior.grid != self.state_grid:
            raise GridError("prior must live on the state grid")
        if self.observation_noise.grid != self.obs_grid:
            raise GridError("observation noise must live on the observation grid")
        if np.any(self.observation_noise.values <= 0):
            raise DegenerateDensityError("degenerate reference density")
        inc = self.process_noise.grid
        if not np.isclose(inc.lower, -inc.upper):
            raise GridError("process noise must live on a symmetric increment grid")
        h = np.asarray(self.observation(self.state_grid.nodes), dtype=float)
        h = np.broadcast_to(h, self.state_grid.nodes.shape).copy()
        if not np.all(np.isfinite(h)):
            raise GaslightError("observation map returned non-finite values")
        h.flags.writeable = False
        self._cache["h_nodes"] = h

    # -- derived quantities -------------------------------------------------

    @property
    def n_states(self) -> int:
        return self.state_grid.n_points

    @property
    def h_nodes(self) -> np.ndarray:
        return self._cache["h_nodes"]

    @property
    def phi(self) -> GridDensity:
        return self.observation_noise

    def control_set(self, k: int) -> tuple:
        return self.controls[k]

    def all_controls(self) -> np.ndarray:
        return np.unique(np.concatenate([np.asarray(c) for c in self.controls])) if self.controls else np.empty(0)

    def control_index(self, k: int, u: float) -> int:
        cs = self.controls[k]
        for a, c in enumerate(cs):
            if c == u:
                return a
        raise GaslightError(f"control {u} not in the control set of stage {k}")

    def _transition(self, u: float):
        key = ("transition", float(u))
        if key in self._cache:
            return self._cache[key]
        g = self.state_grid
        z = g.nodes
        w = g.weights
        n = g.n_points
        b = np.broadcast_to(np.asarray(self.dynamics(z, u), dtype=float), z.shape)
        if not np.all(np.isfinite(b)):
            raise GaslightError("dynamics returned non-finite values")
        clamped = (b < g.lower) | (b > g.upper)
        b = np.clip(b, g.lower, g.upper)
        raw = interpolate(self.process_noise, z[:, None] - b[None, :], outside="zero")
        mass = w @ raw
        probs = np.empty((n, n))
        for j in range(n):
            if mass[j] > 1e-300:
                probs[:, j] = w * raw[:, j] / mass[j]
            else:
                # noise narrower than the grid spacing: split between neighbours
                pos = (b[j] - g.lower) / g.spacing
                i = min(int(pos), n - 2)
                frac = pos - i
                probs[:, j] = 0.0
                probs[i, j] = 1.0 - frac
                probs[i + 1, j] += frac
        probs /= probs.sum(axis=0, keepdims=True)
        cost = np.broadcast_to(np.asarray(self.running_cost(z, u), dtype=float), z.shape)
        kern = probs / w[:, None] * (w * np.exp(self.mu * cost))[None, :]
        cdf = np.cumsum(probs.T, axis=1)
        cdf[:, -1] = 1.0
        out = (kern, cdf, clamped, np.maximum(1.0 - mass, 0.0))
        self._cache[key] = out
        return out

    def stage_operators(self, k: int) -> StageOperators:
        key = ("stage", k)
        if key not in self._cache:
            parts = [self._transition(u) for u in self.controls[k]]
            ops = StageOperators(
                controls=np.asarray(self.controls[k], dtype=float),
                kernels=np.ascontiguousarray(np.stack([p[0] for p in parts])),
                cdf=np.ascontiguousarray(np.concatenate([p[1] for p in parts])),
                clamped=np.stack([p[2] for p in parts]),
                mass_deficit=np.stack([p[3] for p in parts]),
            )
            self._cache[key] = ops
        return self._cache[key]

    def operator(self, u: float) -> np.ndarray:
        """Folded update matrix for a single control value."""
        return self._transition(u)[0]

    def prior_cdf(self, density: Optional[GridDensity] = None) -> np.ndarray:
        d = self.prior if density is None else density
        p = self.state_grid.weights * d.values
        cdf = np.cumsum(p) / p.sum()
        cdf[-1] = 1.0
        return cdf[None, :]

    def obs_density(self, y, density: Optional[GridDensity] = None) -> np.ndarray:
        """Evaluate ``phi`` (or an effort density) at observations ``y``."""
        d = self.observation_noise if density is None else density
        return interpolate(d, y, outside="clamp")

    def likelihood(self, y, denom) -> np.ndarray:
        """``lik[t, j] = phi(wrap(y_t - h(xi_j))) / denom_t`` for a batch of ``y``."""
        g = self.obs_grid
        y = np.ascontiguousarray(np.atleast_1d(np.asarray(y, dtype=float)))
        denom = np.ascontiguousarray(np.broadcast_to(np.asarray(denom, dtype=float), y.shape))
        return kernels.likelihood_matrix(
            np.ascontiguousarray(self.phi.values), g.lower, g.spacing, g.length,
            np.ascontiguousarray(self.h_nodes), y, denom,
        )

    def filter_denominator(self, y, k: int, effort: Optional["GaslightEffort"]) -> np.ndarray:
        """Denominator of the observation ratio for ``y_{k+1}``.

        ``phi(y)`` without effort; ``effort[k](y)`` when an effort is supplied.
        """
        if effort is None:
            d = self.obs_density(y)
            if np.any(d <= 0):
                raise DegenerateDensityError("degenerate reference density")
        else:
            d = self.obs_density(y, effort.densities[k])
            if np.any(d <= 0):
                raise DegenerateDensityError("degenerate effort density")
        return d

    def with_(self, **changes) -> "SystemModel":
        """Copy with some fields replaced (derived caches are rebuilt)."""
        fields = {
            f: getattr(self, f)
            for f in (
                "state_grid", "obs_grid", "horizon", "controls", "dynamics", "observation",
                "running_cost", "terminal_cost", "gaslighter_cost", "process_noise",
                "observation_noise", "mu", "prior", "name",
            )
        }
        fields.update(changes)
        return SystemModel(**fields)


@dataclass(frozen=True, eq=False)
class GaslightEffort:
    """Observation densities ``phi°_1..phi°_K`` and design-cost parameter ``t``.

    ``densities[k]`` governs observation ``y_{k+1}``. ``prior`` optionally
    replaces the initial information state of the gaslit filter.
    """

    densities: tuple
    t: float = 0.0
    prior: Optional[GridDensity] = None
    labels: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "densities", tuple(self.densities))
        if self.t < 0:
            raise GaslightError("design-cost parameter t must be nonnegative")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"stage{k + 1}" for k in range(len(self.densities))))
        for d in self.densities:
            if np.any(d.values <= 0):
                raise DegenerateDensityError("degenerate effort density")

    def __len__(self):
        return len(self.densities)

    @classmethod
    def nominal(cls, model: SystemModel, t: float = 0.0) -> "GaslightEffort":
        return cls((model.observation_noise,) * model.horizon, t=t, labels=("nominal",) * model.horizon)

    def check(self, model: SystemModel):
        if len(self.densities) != model.horizon:
            raise GaslightError(f"effort has {len(self.densities)} stages, model has {model.horizon}")
        for d in self.densities:
            if d.grid != model.obs_grid:
                raise GridError("effort densities must live on the observation grid")


@dataclass(frozen=True)
class Trajectory:
    states: tuple
    observations: tuple
    controls: tuple
    sampling_mode: SamplingMode
    seed: int
    clamp_events: int = 0


@dataclass
class TrajectoryBatch:
    """Vectorized trajectories; row ``t`` is one trial.

    ``x_idx`` has shape ``(T, K+1)`` (node indices), ``y`` and ``u`` have
    shape ``(T, K)``. ``masses[:, k]`` is the L1 norm of the online filter
    state at stage ``k`` and ``sigma_final`` the last filter state.
    """

    x_idx: np.ndarray
    x: np.ndarray
    y: np.ndarray
    u_idx: np.ndarray
    u: np.ndarray
    clamp_events: np.ndarray
    masses: np.ndarray
    sigma_final: np.ndarray
    mode: SamplingMode
    seeds: np.ndarray
    start_stage: int = 0
    sigma_path: Optional[np.ndarray] = None

    def __len__(self):
        return self.x_idx.shape[0]

    def trajectory(self, t: int) -> Trajectory:
        return Trajectory(
            states=tuple(float(v) for v in self.x[t]),
            observations=tuple(float(v) for v in self.y[t]),
            controls=tuple(float(v) for v in self.u[t]),
            sampling_mode=self.mode,
            seed=int(self.seeds[t]),
            clamp_events=int(self.clamp_events[t]),
        )


def simulate_batch(
    model: SystemModel,
    policy,
    *,
    mode: SamplingMode | str,
    seeds,
    effort: Optional[GaslightEffort] = None,
    start_stage: int = 0,
    x0_idx=None,
    sigma0=None,
    record_path: bool = False,
) -> TrajectoryBatch:
    """Simulate one trajectory per seed with online filtering and feedback.

    The controller sees the information state produced by the gaslit
    operator when ``effort`` is given and by the nominal operator otherwise.
    Uniform slot 0 draws ``x_0``; slots ``1 + 2k`` and ``2 + 2k`` drive the
    transition and the observation of stage ``k``. The same slots are used in
    every mode, giving common random numbers across modes.

    A run may start at ``start_stage`` from given node indices and filter
    states.
    """
    mode = SamplingMode(mode)
    if mode is SamplingMode.GASLIT and effort is None:
        raise GaslightError("missing effort")
    if effort is not None:
        effort.check(model)
    K = model.horizon
    n = model.n_states
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.uint64))
    T = len(seeds)
    U = uniforms(seeds, 1 + 2 * K)

    x_idx = np.zeros((T, K + 1), dtype=np.int64)
    y = np.full((T, K), np.nan)
    u_idx = np.full((T, K), -1, dtype=np.int64)
    u = np.full((T, K), np.nan)
    masses = np.full((T, K + 1), np.nan)
    clamp = np.zeros(T, dtype=np.int64)
    path = np.full((T, K + 1, n), np.nan) if record_path else None
    w = model.state_grid.weights

    if start_stage == 0 and x0_idx is None:
        x_idx[:, 0] = kernels.categorical_sample(
            model.prior_cdf(), np.zeros(T, dtype=np.int64), np.ascontiguousarray(U[:, 0])
        )
    else:
        x_idx[:, start_stage] = np.broadcast_to(np.asarray(x0_idx, dtype=np.int64), (T,))
    if sigma0 is None:
        start = model.prior if effort is None or effort.prior is None else effort.prior
        sigma = np.tile(start.values, (T, 1))
    else:
        sigma = np.array(np.broadcast_to(np.asarray(sigma0, dtype=float), (T, n)))
    sigma = np.ascontiguousarray(sigma)
    masses[:, start_stage] = sigma @ w
    if record_path:
        path[:, start_stage] = sigma

    for k in range(start_stage, K):
        ops = model.stage_operators(k)
        a = np.ascontiguousarray(np.asarray(policy.select(sigma, k), dtype=np.int64))
        xk = x_idx[:, k]
        clamp += ops.clamped[a, xk]
        uo = U[:, 2 + 2 * k]
        if mode is SamplingMode.NOMINAL:
            v = sample_density(model.phi, uo)
            yk = wrap(model.h_nodes[xk] + v, model.obs_grid)
        elif mode is SamplingMode.REFERENCE:
            yk = sample_density(model.phi, uo)
        else:
            yk = sample_density(effort.densities[k], uo)
        x_idx[:, k + 1] = kernels.categorical_sample(
            ops.cdf, a * n + xk, np.ascontiguousarray(U[:, 1 + 2 * k])
        )
        denom = model.filter_denominator(yk, k, effort)
        lik = model.likelihood(yk, denom)
        sigma = kernels.filter_step(sigma, lik, a, ops.kernels)
        y[:, k] = yk
        u_idx[:, k] = a
        u[:, k] = ops.controls[a]
        masses[:, k + 1] = sigma @ w
        if record_path:
            path[:, k + 1] = sigma

    x = model.state_grid.nodes[x_idx]
    if start_stage > 0:
        x[:, :start_stage] = np.nan
    return TrajectoryBatch(
        x_idx=x_idx, x=x, y=y, u_idx=u_idx, u=u, clamp_events=clamp, masses=masses,
        sigma_final=sigma, mode=mode, seeds=seeds, start_stage=start_stage, sigma_path=path,
    )


def simulate(model, policy, effort=None, mode: SamplingMode | str = SamplingMode.NOMINAL, seed: int = 0) -> Trajectory:
    """Single seeded trajectory; see :func:`simulate_batch`."""
    seeds = mix(seed, "simulate", np.array([0], dtype=np.uint64))
    return simulate_batch(model, policy, mode=mode, seeds=seeds, effort=effort).trajectory(0)


def pathwise_costs(model: SystemModel, batch: TrajectoryBatch) -> np.ndarray:
    """``exp(mu (sum_i L(x_i, u_i) + Phi(x_K)))`` for every trial."""
    K = model.horizon
    total = np.zeros(len(batch))
    for k in range(K):
        total += np.asarray(model.running_cost(batch.x[:, k], batch.u[:, k]), dtype=float)
    total += np.asarray(model.terminal_cost(batch.x[:, K]), dtype=float)
    return np.exp(model.mu * total)


def pathwise_cost(model: SystemModel, traj: Trajectory) -> float:
    x = np.asarray(traj.states)
    u = np.asarray(traj.controls)
    total = sum(float(model.running_cost(x[i], u[i])) for i in range(len(u)))
    total += float(model.terminal_cost(x[-1]))
    return float(np.exp(model.mu * total))


def likelihood_ratios(model: SystemModel, batch: TrajectoryBatch, k: Optional[int] = None) -> np.ndarray:
    """``Z_k = prod_{i<=k} phi(wrap(y_i - h(x_{i-1}))) / phi(y_i)`` per trial."""
    k = model.horizon if k is None else k
    z = np.ones(len(batch))
    h = model.h_nodes
    for i in range(1, k + 1):
        yi = batch.y[:, i - 1]
        num = interpolate(model.phi, yi - h[batch.x_idx[:, i - 1]], outside="wrap")
        den = model.obs_density(yi)
        if np.any(den <= 0):
            raise DegenerateDensityError("degenerate reference density")
        z *= num / den
    return z


def likelihood_ratio(model: SystemModel, traj: Trajectory, k: int) -> float:
    if not 0 <= k <= len(traj.observations):
        raise GaslightError(f"stage {k} outside 0..{len(traj.observations)}")
    z = 1.0
    for i in range(1, k + 1):
        yi = traj.observations[i - 1]
        num = float(interpolate(model.phi, yi - float(model.observation(traj.states[i - 1])), outside="wrap"))
        den = float(model.obs_density(yi))
        if den <= 0:
            raise DegenerateDensityError("degenerate reference density")
        z *= num / den
    return z

