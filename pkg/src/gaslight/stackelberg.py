"""The gaslighter's objective, its value recursion and the equilibrium search.

The gaslighter picks one observation density per stage from a finite menu.
The DM responds optimally to what she perceives (backward induction with the
gaslit operator). The gaslighter's objective is

    I = E_gaslit[exp(mu Gamma(x_K))] - gamma + sum_k H(phi°_k)

where ``gamma`` is the same expectation when the DM's observations are
i.i.d. ``phi`` and she plays her nominal best response. Both expectations
are estimated with common random numbers: every candidate and the ``gamma``
run consume the same uniform streams.
"""

from __future__ import annotations

import csv
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .dp import AlphaPolicy, AlphaVectorSet, backward_induction
from .errors import BudgetExceededError, GaslightError
from .filtering import mc_mean
from .grid import GridDensity
from .model import GaslightEffort, SamplingMode, SystemModel, simulate_batch
from .robustness import RobustnessConstants, compute_constants
from .seeding import trial_seeds
from .stealth import certify_effort, design_cost, s_bar

__all__ = [
    "EffortMenu",
    "ObjectiveEstimate",
    "EquilibriumResult",
    "gaslighter_objective",
    "w_recursion_check",
    "search_equilibrium",
    "theorem5_bounds",
]

DEFAULT_MAX_CANDIDATES = 125


@dataclass(frozen=True)
class EffortMenu:
    """Finite set of per-stage observation densities; index 0 is always ``phi``."""

    labels: tuple
    densities: tuple

    @classmethod
    def build(cls, phi: GridDensity, members: Sequence[tuple] = ()) -> "EffortMenu":
        labels, dens = ["nominal"], [phi]
        for label, d in members:
            if d.grid != phi.grid:
                raise GaslightError("menu densities must live on the observation grid")
            if np.any(d.values <= 0):
                raise GaslightError(f"menu member {label!r} is not strictly positive")
            if label == "nominal" or np.array_equal(d.values, phi.values):
                continue
            labels.append(label)
            dens.append(d)
        return cls(tuple(labels), tuple(dens))

    def __len__(self):
        return len(self.densities)

    def effort(self, indices: Sequence[int], t: float = 0.0) -> GaslightEffort:
        return GaslightEffort(tuple(self.densities[i] for i in indices), t=t,
                              labels=tuple(self.labels[i] for i in indices))

    def sequences(self, horizon: int):
        return itertools.product(range(len(self)), repeat=horizon)


@dataclass(frozen=True)
class ObjectiveEstimate:
    value: float
    se: float
    gaslit_term: float
    gamma: float
    design_cost: float
    n_trials: int


def _terminal_gamma(model: SystemModel, batch) -> np.ndarray:
    return np.exp(model.mu * np.asarray(model.gaslighter_cost(batch.x[:, -1]), dtype=float))


def gamma_samples(model: SystemModel, nominal_policy, n_trials: int, seed: int) -> np.ndarray:
    """``exp(mu Gamma(x_K))`` with i.i.d. ``phi`` observations and the nominal policy."""
    seeds = trial_seeds(seed, "gaslighter", n_trials)
    b = simulate_batch(model, nominal_policy, mode=SamplingMode.REFERENCE, seeds=seeds)
    return _terminal_gamma(model, b)


def gaslighter_objective(
    model: SystemModel,
    effort: GaslightEffort,
    dm_policy,
    nominal_policy,
    n_trials: int,
    seed: int,
    gamma: Optional[np.ndarray] = None,
) -> ObjectiveEstimate:
    """Monte Carlo estimate of the gaslighter's objective with a paired standard error."""
    if n_trials < 2:
        raise GaslightError("n_trials must be at least 2")
    seeds = trial_seeds(seed, "gaslighter", n_trials)
    b = simulate_batch(model, dm_policy, mode=SamplingMode.GASLIT, seeds=seeds, effort=effort)
    first = _terminal_gamma(model, b)
    g = gamma_samples(model, nominal_policy, n_trials, seed) if gamma is None else gamma
    h = sum(design_cost(model.phi, d, effort.t) for d in effort.densities)
    diff_mean, diff_se = mc_mean(first - g)
    return ObjectiveEstimate(
        value=diff_mean + h,
        se=diff_se,
        gaslit_term=float(np.mean(first)),
        gamma=float(np.mean(g)),
        design_cost=h,
        n_trials=n_trials,
    )


def _stage_costs(model: SystemModel, effort: GaslightEffort) -> np.ndarray:
    return np.array([design_cost(model.phi, d, effort.t) for d in effort.densities])


def _rollout_values(model, effort, dm_policy, k, x_idx, sigma, seeds):
    """Remaining design cost plus ``exp(mu Gamma(x_K))`` from stage ``k``."""
    b = simulate_batch(model, dm_policy, mode=SamplingMode.GASLIT, seeds=seeds, effort=effort,
                       start_stage=k, x0_idx=x_idx, sigma0=sigma)
    return b, _terminal_gamma(model, b) + _stage_costs(model, effort)[k:].sum()


@dataclass(frozen=True)
class StageW:
    stage: int
    direct: float
    nested: float
    se: float
    holds: bool


def w_recursion_check(
    model: SystemModel,
    effort: GaslightEffort,
    dm_policy,
    n_trials: int,
    seed: int,
    n_starts: int = 50,
    n_inner: int = 20,
) -> list:
    """Per-stage check of ``W_k = H(phi°_{k+1}) + E[W_{k+1}]`` at harvested points.

    Pairs ``(x_k, sigma°_k)`` are harvested from forward gaslit runs. At each
    pair, ``W_k`` is estimated directly by ``n_trials`` rollouts to the
    horizon, and by nesting: ``n_trials`` one-step transitions, each followed
    by ``n_inner`` rollouts from the resulting pair. The paired difference
    over starts must be within four standard errors of zero. At ``k = K`` the
    value is ``exp(mu Gamma(x_K))`` per sample and the check is exact.
    """
    if n_starts < 2:
        raise GaslightError("need at least two start points")
    K = model.horizon
    H = _stage_costs(model, effort)
    fwd = simulate_batch(model, dm_policy, mode=SamplingMode.GASLIT, seeds=trial_seeds(seed, "w-start", n_starts),
                         effort=effort, record_path=True)
    out = []
    for k in range(K + 1):
        if k == K:
            vals = _terminal_gamma(model, fwd)
            direct = float(np.mean(vals))
            out.append(StageW(k, direct, direct, 0.0, True))
            continue
        diffs = np.empty(n_starts)
        directs = np.empty(n_starts)
        nesteds = np.empty(n_starts)
        for i in range(n_starts):
            xi = fwd.x_idx[i, k]
            si = fwd.sigma_path[i, k]
            seeds = trial_seeds(seed, f"w-direct-{k}-{i}", n_trials)
            _, v = _rollout_values(model, effort, dm_policy, k, xi, si, seeds)
            directs[i] = v.mean()
            # one step, then rollouts from each child
            step_seeds = trial_seeds(seed, f"w-step-{k}-{i}", n_trials)
            child = simulate_batch(model, dm_policy, mode=SamplingMode.GASLIT, seeds=step_seeds, effort=effort,
                                   start_stage=k, x0_idx=xi, sigma0=si, record_path=True)
            if k + 1 == K:
                inner_mean = float(np.mean(_terminal_gamma(model, child)))
            else:
                inner = trial_seeds(seed, f"w-inner-{k}-{i}", n_trials * n_inner)
                _, v2 = _rollout_values(model, effort, dm_policy, k + 1,
                                        np.repeat(child.x_idx[:, k + 1], n_inner),
                                        np.repeat(child.sigma_path[:, k + 1], n_inner, axis=0), inner)
                inner_mean = float(v2.mean())
            nesteds[i] = H[k] + inner_mean
            diffs[i] = directs[i] - nesteds[i]
        m, se = mc_mean(diffs)
        out.append(StageW(k, float(directs.mean()), float(nesteds.mean()), se, abs(m) <= 4 * se + 1e-12))
    return out


def theorem5_bounds(constants: RobustnessConstants, s: float, t: float, K: Optional[int] = None,
                    form: str = "conservative") -> float:
    """Lower bound on the gaslighter's objective for stealthy efforts (zero running cost).

    ``paper``: ``-e_Gamma (phi_hat^K d0 + s sum_{i=1}^{K-1} phi_hat^i) + K t s_bar``.
    ``conservative``: the same without the ``K t s_bar`` term.
    """
    K = constants.horizon if K is None else int(K)
    ph = constants.phi_hat
    core = -constants.e_gamma * (ph ** K * constants.d0 + s * sum(ph ** i for i in range(1, K)))
    if form == "conservative":
        return float(core)
    if form == "paper":
        return float(core + K * t * s_bar(s, constants))
    raise GaslightError(f"unknown form {form!r}")


@dataclass
class CandidateRow:
    index: tuple
    labels: tuple
    value: float
    se: float
    design_cost: float
    stealth_pass: bool
    dm_value: float
    integrals: tuple

    def to_dict(self) -> dict:
        return {
            "index": list(self.index),
            "labels": list(self.labels),
            "value": self.value,
            "se": self.se,
            "design_cost": self.design_cost,
            "stealth_pass": self.stealth_pass,
            "dm_value": self.dm_value,
            "integrals": list(self.integrals),
        }


@dataclass
class EquilibriumResult:
    """Outcome of the exhaustive search over the menu product."""

    chosen: tuple
    chosen_labels: tuple
    value: float
    se: float
    epsilon: tuple
    certification: dict
    theorem5: dict
    table: list
    acceptable: list
    coverage: Optional[float] = None
    alphas: Optional[AlphaVectorSet] = field(default=None, repr=False)

    @property
    def chosen_row(self) -> CandidateRow:
        return next(r for r in self.table if r.index == self.chosen)

    def evaluated(self) -> list:
        return [r for r in self.table if np.isfinite(r.value)]

    def consistency(self, n_sigma: float = 4.0) -> bool:
        """Chosen value is within slack of every evaluated candidate."""
        eps = min(self.epsilon) if self.epsilon else 0.0
        return all(
            self.value <= r.value + eps + n_sigma * float(np.hypot(self.se, r.se)) + 1e-12
            for r in self.evaluated()
        )

    def to_dict(self) -> dict:
        return {
            "chosen": list(self.chosen),
            "chosen_labels": list(self.chosen_labels),
            "value": self.value,
            "se": self.se,
            "epsilon": list(self.epsilon),
            "certification": self.certification,
            "theorem5": self.theorem5,
            "acceptable": [list(a) for a in self.acceptable],
            "coverage": self.coverage,
            "consistent": self.consistency(),
            "candidates": len(self.table),
            "evaluated": len(self.evaluated()),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)

    def write_table(self, path):
        """CSV columns: stage1..stageK labels, value, se, design_cost, stealth_pass, dm_value."""
        K = len(self.chosen)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"stage{k + 1}" for k in range(K)] + ["value", "se", "design_cost", "stealth_pass", "dm_value"])
            for r in self.table:
                w.writerow(list(r.labels) + [repr(r.value), repr(r.se), repr(r.design_cost), int(r.stealth_pass),
                                             repr(r.dm_value)])


def search_equilibrium(
    model: SystemModel,
    menu: EffortMenu,
    epsilon: Sequence[float],
    s: float,
    t: float,
    n_trials: int,
    seed: int,
    stealth_filter: bool = True,
    constants: Optional[RobustnessConstants] = None,
    obs_quadrature_nodes: int = 3,
    alpha_cap: int = 20_000,
    max_candidates: int = DEFAULT_MAX_CANDIDATES,
    coverage_starts: int = 0,
    coverage_rollouts: int = 200,
    threads: int = 1,
) -> EquilibriumResult:
    """Evaluate every effort sequence in ``menu^K`` and pick an epsilon-optimal one.

    The selected sequence is the first one in enumeration order whose
    estimate is within ``min(epsilon)`` of the smallest estimate. With
    ``coverage_starts > 0`` the per-stage deviation condition is also checked
    at harvested ``(x_k, sigma°_k)`` points, reported as a fraction.
    Candidates are evaluated on ``threads`` worker threads; results are
    reduced in enumeration order, so the output does not depend on it.
    """
    K = model.horizon
    eps = tuple(float(e) for e in epsilon)
    if len(eps) != K:
        raise GaslightError(f"need {K} epsilon values, got {len(eps)}")
    n_cand = len(menu) ** K
    if n_cand > max_candidates:
        raise BudgetExceededError(f"menu product has {n_cand} candidates (cap {max_candidates})")
    if constants is None:
        constants = compute_constants(model, efforts=[GaslightEffort((d,) * K) for d in menu.densities])
    nominal_alphas = backward_induction(model, None, obs_quadrature_nodes, alpha_cap)
    nominal_policy = AlphaPolicy(nominal_alphas)
    gamma = gamma_samples(model, nominal_policy, n_trials, seed)

    cache: dict = {}

    def responder(idx):
        if idx in cache:
            return cache[idx]
        if all(i == 0 for i in idx):
            return nominal_alphas
        return backward_induction(model, menu.effort(idx, t), obs_quadrature_nodes, alpha_cap)

    certs = {idx: certify_effort(model, menu.effort(idx, t), s, constants, definition_check=False,
                                 label="/".join(menu.labels[i] for i in idx))
             for idx in menu.sequences(K)}
    todo = [idx for idx in certs if certs[idx].passed or not stealth_filter]

    def evaluate(idx):
        alphas = responder(idx)
        est = gaslighter_objective(model, menu.effort(idx, t), AlphaPolicy(alphas), nominal_policy,
                                   n_trials, seed, gamma)
        return idx, alphas, est

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(evaluate, todo))
    else:
        results = [evaluate(idx) for idx in todo]
    done = {}
    for idx, alphas, est in results:
        cache[idx] = alphas
        done[idx] = (alphas, est)
    table = []
    for idx, cert in certs.items():
        ints = tuple(st.integral for st in cert.stages)
        labels = tuple(menu.labels[i] for i in idx)
        if idx not in done:
            table.append(CandidateRow(idx, labels, float("nan"), float("nan"), sum(t * v for v in ints), False,
                                      float("nan"), ints))
            continue
        alphas, est = done[idx]
        table.append(CandidateRow(idx, labels, est.value, est.se, est.design_cost, cert.passed,
                                  alphas.value(model.prior, 0), ints))
    evaluated = [r for r in table if np.isfinite(r.value)]
    if not evaluated:
        raise GaslightError("no stealthy candidates")
    best = min(r.value for r in evaluated)
    slack = min(eps) if eps else 0.0
    acceptable = [r.index for r in evaluated if r.value <= best + slack]
    chosen = acceptable[0]
    row = next(r for r in table if r.index == chosen)
    t5 = {
        "paper": theorem5_bounds(constants, s, t, K, "paper"),
        "conservative": theorem5_bounds(constants, s, t, K, "conservative"),
    }
    t5["conservative_violations"] = sum(r.value < t5["conservative"] - 4 * r.se for r in evaluated)
    t5["paper_violations"] = sum(r.value < t5["paper"] - 4 * r.se for r in evaluated)
    coverage = None
    if coverage_starts > 0:
        coverage = _coverage(model, menu, chosen, eps, t, cache, responder, certs, stealth_filter,
                             coverage_starts, coverage_rollouts, seed)
    return EquilibriumResult(
        chosen=chosen,
        chosen_labels=row.labels,
        value=row.value,
        se=row.se,
        epsilon=eps,
        certification=certs[chosen].to_dict(),
        theorem5=t5,
        table=table,
        acceptable=acceptable,
        coverage=coverage,
        alphas=cache.get(chosen, nominal_alphas),
    )


def _coverage(model, menu, chosen, eps, t, cache, responder, certs, stealth_filter, n_starts, n_rollouts, seed):
    """Fraction of (stage, point, deviation) triples meeting the per-stage condition.

    At a harvested pair ``(x_k, sigma°_k)`` the chosen sequence's continuation
    value must not exceed that of any admissible one-stage deviation by more
    than ``epsilon_k`` plus four standard errors.
    """
    K = model.horizon
    eff = menu.effort(chosen, t)
    pol = AlphaPolicy(responder(chosen))
    fwd = simulate_batch(model, pol, mode=SamplingMode.GASLIT, seeds=trial_seeds(seed, "coverage", n_starts),
                         effort=eff, record_path=True)
    ok = total = 0
    for k in range(K):
        for m in range(len(menu)):
            if m == chosen[k]:
                continue
            dev = chosen[:k] + (m,) + chosen[k + 1:]
            if stealth_filter and not certs[dev].passed:
                continue
            dev_eff = menu.effort(dev, t)
            dev_pol = AlphaPolicy(responder(dev))
            for i in range(n_starts):
                seeds = trial_seeds(seed, f"coverage-{k}-{i}", n_rollouts)
                _, a = _rollout_values(model, eff, pol, k, fwd.x_idx[i, k], fwd.sigma_path[i, k], seeds)
                _, b = _rollout_values(model, dev_eff, dev_pol, k, fwd.x_idx[i, k], fwd.sigma_path[i, k], seeds)
                m_, se = mc_mean(a - b)
                total += 1
                ok += m_ <= eps[k] + 4 * se + 1e-12
    return ok / total if total else 1.0
