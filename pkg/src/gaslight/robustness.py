"""Constants and bound chains for the deviation between gaslit and nominal filters.

Three per-step facts drive everything here. For a fixed observation ``y``:

* the nominal update is Lipschitz in the L1 metric with factor
  ``phi_hat * l / phi(y)``;
* the gaslit and nominal updates of the same state differ by at most
  ``phi_hat * l * zeta * |1/phi°(y) - 1/phi(y)|`` when ``||sigma||_1 <= zeta``;
* chaining the two gives a pathwise bound ``d~_k`` on the distance between
  the gaslit and nominal information states after ``k`` observations.

Taking expectations under i.i.d. ``phi`` observations turns the pathwise bound
into bounds on the DM's objective.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateDensityError, GaslightError
from .filtering import batch_filter, gaslit_update, info_state_update, mc_mean, terminal_values
from .grid import GridDensity, InformationState, density_stats, l1_distance, quadrature
from .model import GaslightEffort, SamplingMode, SystemModel, simulate_batch
from .seeding import mix, trial_seeds

__all__ = [
    "RobustnessConstants",
    "BoundReport",
    "compute_constants",
    "lemma1_bound",
    "lemma1_check",
    "lemma2_bound",
    "lemma2_check",
    "theorem1_bound",
    "theorem1_closed_form",
    "theorem2_check",
    "theorem3_bound",
    "ObjectiveGapResult",
    "lemma1_harness",
    "lemma2_harness",
    "theorem1_harness",
    "random_states",
]

SLACK = 1e-9
THEOREM3_FORMS = ("paper", "volume_corrected", "recursion")


@dataclass(frozen=True)
class RobustnessConstants:
    """Model-level constants shared by every bound.

    ``l`` is the maximum of ``exp(mu L)`` over grid nodes and controls,
    ``c = phi_hat * l`` and ``zeta`` caps the L1 norm of every information
    state (nominal or gaslit) reachable within the horizon.
    """

    phi_hat: float
    phi_min: float
    l: float
    c: float
    zeta: float
    e_phi: float
    e_gamma: float
    vol_y: float
    d0: float
    horizon: int
    zeta_mode: str = "analytic"

    def to_dict(self) -> dict:
        return asdict(self)


def _max_running(model: SystemModel) -> float:
    z = model.state_grid.nodes
    best = -np.inf
    for u in model.all_controls():
        best = max(best, float(np.max(np.broadcast_to(model.running_cost(z, u), z.shape))))
    return best if np.isfinite(best) else 0.0


def _max_exp(model: SystemModel, cost) -> float:
    z = model.state_grid.nodes
    return float(np.exp(model.mu * np.max(np.broadcast_to(np.asarray(cost(z), dtype=float), z.shape))))


def compute_constants(
    model: SystemModel,
    effort: Optional[GaslightEffort] = None,
    zeta_mode: str = "analytic",
    efforts: Sequence[GaslightEffort] = (),
    policy=None,
    n_trials: int = 10_000,
    seed: int = 0,
) -> RobustnessConstants:
    """Evaluate the constants by enumeration over grid nodes and controls.

    The analytic ``zeta`` is ``max(1, phi_hat l / phi_min)^K * max(||rho||, ||rho°||)``
    where ``phi_min`` runs over ``phi`` and every supplied effort density, so
    it caps gaslit states as well. The empirical ``zeta`` is twice the
    largest state norm seen in ``n_trials`` reference-mode runs of ``policy``
    (nominal filter, and gaslit filter for each supplied effort).
    """
    all_efforts = ([effort] if effort is not None else []) + list(efforts)
    phi_hat, phi_min = density_stats(model.phi)
    for e in all_efforts:
        e.check(model)
        for d in e.densities:
            phi_min = min(phi_min, density_stats(d)[1])
    if phi_min <= 0:
        raise DegenerateDensityError("degenerate reference density")
    l = float(np.exp(model.mu * _max_running(model)))
    c = phi_hat * l
    rho_norm = quadrature(model.prior)
    d0 = 0.0
    for e in all_efforts:
        if e.prior is not None:
            rho_norm = max(rho_norm, quadrature(e.prior))
    if effort is not None and effort.prior is not None:
        d0 = l1_distance(effort.prior, model.prior)
    if zeta_mode == "analytic":
        zeta = max(1.0, c / phi_min) ** model.horizon * rho_norm
    elif zeta_mode == "empirical":
        from .dp import ConstantPolicy

        pol = policy if policy is not None else ConstantPolicy(0)
        seeds = trial_seeds(seed, "zeta", n_trials)
        peak = float(np.max(simulate_batch(model, pol, mode=SamplingMode.REFERENCE, seeds=seeds).masses))
        for e in all_efforts:
            b = simulate_batch(model, pol, mode=SamplingMode.REFERENCE, seeds=seeds, effort=e)
            peak = max(peak, float(np.max(b.masses)))
        zeta = 2.0 * peak
    else:
        raise GaslightError(f"unknown zeta mode {zeta_mode!r}")
    return RobustnessConstants(
        phi_hat=phi_hat,
        phi_min=phi_min,
        l=l,
        c=c,
        zeta=float(zeta),
        e_phi=_max_exp(model, model.terminal_cost),
        e_gamma=_max_exp(model, model.gaslighter_cost),
        vol_y=model.obs_grid.length,
        d0=float(d0),
        horizon=model.horizon,
        zeta_mode=zeta_mode,
    )


# -- per-step bounds ------------------------------------------------------------


def _phi_at(model: SystemModel, y) -> np.ndarray:
    p = model.obs_density(y)
    if np.any(p <= 0):
        raise DegenerateDensityError("degenerate reference density")
    return p


def _effort_at(model: SystemModel, y, density: GridDensity) -> np.ndarray:
    p = model.obs_density(y, density)
    if np.any(p <= 0):
        raise DegenerateDensityError("degenerate effort density")
    return p


def lemma1_bound(model: SystemModel, constants: RobustnessConstants, y, distance: float) -> float:
    """``phi_hat * l * d / phi(y)``."""
    return float(constants.c * distance / _phi_at(model, y))


def lemma1_check(model: SystemModel, sigma_a: InformationState, sigma_b: InformationState, u: float, y: float,
                 constants: RobustnessConstants) -> tuple[float, float]:
    """L1 distance of the nominal updates of two states, and its bound."""
    actual = l1_distance(info_state_update(model, sigma_a, u, y), info_state_update(model, sigma_b, u, y))
    return actual, lemma1_bound(model, constants, y, l1_distance(sigma_a, sigma_b))


def deviation_ratio(model: SystemModel, y, density: GridDensity) -> np.ndarray:
    """``|1/phi°(y) - 1/phi(y)|``."""
    return np.abs(1.0 / _effort_at(model, y, density) - 1.0 / _phi_at(model, y))


def lemma2_bound(model: SystemModel, constants: RobustnessConstants, y, density: GridDensity) -> float:
    """``phi_hat * l * zeta * |1/phi°(y) - 1/phi(y)|``."""
    return float(constants.c * constants.zeta * deviation_ratio(model, y, density))


def lemma2_check(model: SystemModel, sigma: InformationState, u: float, y: float, density: GridDensity,
                 constants: RobustnessConstants) -> tuple[float, float]:
    """L1 distance between the gaslit and nominal updates of one state, and its bound."""
    if sigma.mass > constants.zeta * (1 + 1e-12):
        raise GaslightError("state norm exceeds zeta")
    actual = l1_distance(gaslit_update(model, sigma, u, y, density), info_state_update(model, sigma, u, y))
    return actual, lemma2_bound(model, constants, y, density)


# -- pathwise chain ---------------------------------------------------------------


def _theorem1_terms(model, constants, observations, effort):
    y = np.asarray(observations, dtype=float)
    if y.ndim == 1:
        y = y[None, :]
    k = y.shape[1]
    if k > len(effort.densities):
        raise GaslightError("more observations than effort stages")
    gain = np.empty_like(y)
    drive = np.empty_like(y)
    for i in range(k):
        gain[:, i] = constants.c / _phi_at(model, y[:, i])
        drive[:, i] = constants.c * constants.zeta * deviation_ratio(model, y[:, i], effort.densities[i])
    return gain, drive


def theorem1_bound(model: SystemModel, constants: RobustnessConstants, observations,
                   effort: GaslightEffort) -> np.ndarray:
    """Pathwise bound ``d~_1..d~_k`` by the one-step recursion.

    ``d~_{i+1} = c d~_i / phi(y_{i+1}) + c zeta |1/phi°_{i+1} - 1/phi|(y_{i+1})``
    from ``d~_0 = d0``. Accepts one observation path or a batch ``(T, k)``.
    """
    gain, drive = _theorem1_terms(model, constants, observations, effort)
    out = np.empty_like(gain)
    d = np.full(gain.shape[0], constants.d0)
    for i in range(gain.shape[1]):
        d = gain[:, i] * d + drive[:, i]
        out[:, i] = d
    return out[0] if np.asarray(observations).ndim == 1 else out


def theorem1_closed_form(model: SystemModel, constants: RobustnessConstants, observations,
                         effort: GaslightEffort) -> np.ndarray:
    """Unrolled sum ``prod gains * d0 + sum_j drive_j * prod_{i>j} gains``."""
    gain, drive = _theorem1_terms(model, constants, observations, effort)
    T, k = gain.shape
    out = np.empty_like(gain)
    for m in range(1, k + 1):
        total = constants.d0 * np.prod(gain[:, :m], axis=1)
        for j in range(m):
            total = total + drive[:, j] * np.prod(gain[:, j + 1:m], axis=1)
        out[:, m - 1] = total
    return out[0] if np.asarray(observations).ndim == 1 else out


def theorem3_bound(constants: RobustnessConstants, s: float, K: Optional[int] = None,
                   form: str = "volume_corrected") -> float:
    """Bound on ``e_Phi * E_ref[d~_K]`` for efforts meeting the trust level ``s``.

    ``paper``: ``e_Phi (c^K d0 + s sum_{i=1}^{K-1} c^i)``.
    ``volume_corrected``: ``c`` replaced by ``c * vol_Y`` throughout, since
    ``E[1/phi(y)] = vol_Y`` for ``y ~ phi`` on a compact interval.
    ``recursion``: the expectation of the pathwise recursion itself,
    ``e_Phi ((c vol)^K d0 + s sum_{i=0}^{K-1} (c vol)^i)``, which also counts
    the deviation injected at the last stage.
    """
    if not s > 0:
        raise GaslightError("trust level s must be positive")
    K = constants.horizon if K is None else int(K)
    if form == "paper":
        g, lo = constants.c, 1
    elif form == "volume_corrected":
        g, lo = constants.c * constants.vol_y, 1
    elif form == "recursion":
        g, lo = constants.c * constants.vol_y, 0
    else:
        raise GaslightError(f"unknown form {form!r}; expected one of {THEOREM3_FORMS}")
    geometric = sum(g ** i for i in range(lo, K))
    return float(constants.e_phi * (g ** K * constants.d0 + s * geometric))


# -- reports ----------------------------------------------------------------------


@dataclass
class BoundReport:
    """Per-instance actual and bound values of one check."""

    name: str
    trial: list = field(default_factory=list)
    stage: list = field(default_factory=list)
    actual: list = field(default_factory=list)
    bound: list = field(default_factory=list)
    slack_tol: float = SLACK

    def add(self, trial, stage, actual, bound):
        self.trial.append(int(trial))
        self.stage.append(int(stage))
        self.actual.append(float(actual))
        self.bound.append(float(bound))

    def extend(self, trials, stages, actual, bound):
        for t, k, a, b in zip(trials, stages, actual, bound):
            self.add(t, k, a, b)

    @property
    def slack(self) -> np.ndarray:
        return np.asarray(self.bound) - np.asarray(self.actual)

    @property
    def violations(self) -> int:
        return int(np.sum(self.slack < -self.slack_tol))

    def summary(self) -> dict:
        sl = self.slack
        return {
            "check": self.name,
            "instances": len(sl),
            "violations": self.violations,
            "min_slack": float(sl.min()) if len(sl) else None,
            "median_slack": float(np.median(sl)) if len(sl) else None,
            "max_ratio": float(np.max(np.asarray(self.actual) / np.maximum(np.asarray(self.bound), 1e-300)))
            if len(sl) else None,
        }

    def rows(self):
        for t, k, a, b in zip(self.trial, self.stage, self.actual, self.bound):
            yield {"check": self.name, "trial": t, "stage": k, "actual": repr(a), "bound": repr(b),
                   "slack": repr(b - a)}


def write_reports(reports: Sequence[BoundReport], csv_path, json_path=None, extra: Optional[dict] = None):
    """CSV columns: check, trial, stage, actual, bound, slack."""
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["check", "trial", "stage", "actual", "bound", "slack"])
        w.writeheader()
        for r in reports:
            w.writerows(r.rows())
    if json_path is not None:
        doc = {"checks": [r.summary() for r in reports], "violations": sum(r.violations for r in reports)}
        if extra:
            doc.update(extra)
        with open(json_path, "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)


# -- randomized harnesses ---------------------------------------------------------


def random_states(model: SystemModel, rng: np.random.Generator, n: int, norm: Optional[float] = None) -> np.ndarray:
    """Random nonnegative states: smooth bumps mixed with rough noise.

    Rows are scaled to L1 norm ``norm`` when given, else to a norm drawn
    uniformly from ``(0, 2]``.
    """
    z = model.state_grid.nodes
    w = model.state_grid.weights
    centers = rng.uniform(z[0], z[-1], size=(n, 1))
    widths = rng.uniform(0.1, 1.5, size=(n, 1)) * model.state_grid.length / 4
    smooth = np.exp(-0.5 * ((z[None, :] - centers) / widths) ** 2)
    rough = rng.exponential(size=(n, len(z))) * (rng.uniform(size=(n, 1)) < 0.3)
    raw = smooth + rough
    target = np.full(n, norm) if norm is not None else rng.uniform(0.05, 2.0, size=n)
    return raw / (raw @ w)[:, None] * target[:, None]


def lemma1_harness(model: SystemModel, constants: RobustnessConstants, n: int, seed: int) -> BoundReport:
    rng = np.random.default_rng(mix(seed, "lemma1", 0))
    report = BoundReport("lemma1")
    g = model.state_grid
    a = random_states(model, rng, n)
    b = random_states(model, rng, n)
    controls = model.all_controls()
    us = rng.choice(controls, size=n)
    ys = rng.uniform(model.obs_grid.lower, model.obs_grid.upper, size=n)
    for i in range(n):
        act, bnd = lemma1_check(model, InformationState(g, a[i]), InformationState(g, b[i]), us[i], ys[i], constants)
        report.add(i, 1, act, bnd)
    return report


def lemma2_harness(model: SystemModel, constants: RobustnessConstants, densities: Sequence[GridDensity],
                   n: int, seed: int) -> BoundReport:
    rng = np.random.default_rng(mix(seed, "lemma2", 0))
    report = BoundReport("lemma2")
    g = model.state_grid
    norms = rng.uniform(0.0, 1.0, size=n) * constants.zeta
    norms[: max(1, n // 10)] = constants.zeta
    states = np.vstack([random_states(model, rng, 1, nm) for nm in norms])
    controls = model.all_controls()
    us = rng.choice(controls, size=n)
    ys = rng.uniform(model.obs_grid.lower, model.obs_grid.upper, size=n)
    pick = rng.integers(0, len(densities), size=n)
    for i in range(n):
        act, bnd = lemma2_check(model, InformationState(g, states[i]), us[i], ys[i], densities[pick[i]], constants)
        report.add(i, 1, act, bnd)
    return report


def theorem1_harness(model: SystemModel, constants: RobustnessConstants, effort: GaslightEffort,
                     n: int, seed: int) -> tuple[BoundReport, float]:
    """Pathwise check of ``d_k <= d~_k`` for random controls and observations.

    Returns the report and the largest relative gap between the recursion and
    the closed form.
    """
    rng = np.random.default_rng(mix(seed, "theorem1", 0))
    K = model.horizon
    report = BoundReport("theorem1")
    u_idx = np.column_stack([rng.integers(0, len(model.controls[k]), size=n) for k in range(K)]) if K else \
        np.zeros((n, 0), dtype=np.int64)
    y = rng.uniform(model.obs_grid.lower, model.obs_grid.upper, size=(n, K))
    start_g = effort.prior if effort.prior is not None else model.prior
    gas = batch_filter(model, start_g.values, u_idx, y, effort=effort, record_path=True)
    nom = batch_filter(model, model.prior.values, u_idx, y, effort=None, record_path=True)
    w = model.state_grid.weights
    actual = np.abs(gas - nom) @ w  # (n, K+1)
    rec = theorem1_bound(model, constants, y, effort)
    closed = theorem1_closed_form(model, constants, y, effort)
    denom = np.maximum(np.abs(rec), 1e-300)
    rel = float(np.max(np.abs(rec - closed) / denom)) if rec.size else 0.0
    for k in range(1, K + 1):
        report.extend(range(n), [k] * n, actual[:, k], rec[:, k - 1])
    return report, rel


@dataclass(frozen=True)
class ObjectiveGapResult:
    """Objective gap (gaslit minus nominal information state) against its bound."""

    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    diff_se: float
    n_trials: int
    pathwise_violations: int

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs + 4.0 * self.diff_se + SLACK

    def to_dict(self) -> dict:
        d = asdict(self)
        d["holds"] = self.holds
        return d


def theorem2_check(model: SystemModel, effort: GaslightEffort, policy, n_trials: int, seed: int,
                   constants: Optional[RobustnessConstants] = None) -> ObjectiveGapResult:
    """Reference-mode estimate of the objective gap and of ``e_Phi E[d~_K]``.

    The policy acts on the gaslit filter; the nominal filter is run as a
    shadow on the same controls and observations, so both sides share every
    draw.
    """
    if n_trials < 2:
        raise GaslightError("n_trials must be at least 2")
    constants = compute_constants(model, effort) if constants is None else constants
    seeds = trial_seeds(seed, "theorem2", n_trials)
    b = simulate_batch(model, policy, mode=SamplingMode.REFERENCE, seeds=seeds, effort=effort)
    nominal = batch_filter(model, model.prior.values, b.u_idx, b.y)
    lhs = terminal_values(model, b.sigma_final) - terminal_values(model, nominal)
    if model.horizon:
        rhs = constants.e_phi * theorem1_bound(model, constants, b.y, effort)[:, -1]
    else:
        rhs = np.full(n_trials, constants.e_phi * constants.d0)
    lm, ls = mc_mean(lhs)
    rm, rs = mc_mean(rhs)
    _, ds = mc_mean(lhs - rhs)
    return ObjectiveGapResult(lm, ls, rm, rs, ds, n_trials, int(np.sum(lhs > rhs + SLACK)))
