"""The DM's dynamic program over information states.

The value function ``Z(sigma, k)`` is a minimum of functionals linear in
``sigma``: the terminal cost is linear and each update is linear, so backward
induction propagates a finite set of coefficient vectors ("alpha vectors").
The expectation over the next observation is discretized at ``N`` fixed nodes
of the observation interval, weighted by the mass ``phi`` assigns to the
surrounding cell. Vectors are stored in weighted form ``beta = w * alpha`` so
that ``<sigma, alpha> = sigma @ beta``.

With an effort, the gaslit operator replaces the nominal one; this yields the
DM's best response to that effort.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import BudgetExceededError, GaslightError
from .filtering import gaslit_update, info_state_update, terminal_functional, terminal_weights
from .grid import InformationState, cdf_at
from .model import GaslightEffort, SystemModel

__all__ = [
    "AlphaVectorSet",
    "AlphaPolicy",
    "ConstantPolicy",
    "OpenLoopPolicy",
    "ResponseSet",
    "obs_quadrature",
    "backward_induction",
    "value",
    "response_set",
    "evaluate_open_loop",
    "lookahead_value",
    "enumerate_policies_oracle",
    "prune",
]

DEFAULT_ALPHA_CAP = 20_000
TOL_TIE = 1e-9
PRUNE_BLOCK = 128
# unpruned cross-sums larger than this multiple of the cap are refused outright
GENERATION_FACTOR = 4


def obs_quadrature(model: SystemModel, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Midpoints of ``n_nodes`` equal cells and the ``phi`` mass of each cell."""
    if n_nodes < 1:
        raise GaslightError("obs_quadrature_nodes must be at least 1")
    g = model.obs_grid
    edges = np.linspace(g.lower, g.upper, n_nodes + 1)
    nodes = 0.5 * (edges[:-1] + edges[1:])
    weights = np.diff(cdf_at(model.phi, edges))
    return nodes, weights


def _denominators(model: SystemModel, y: np.ndarray, k: int, effort: Optional[GaslightEffort]) -> np.ndarray:
    return model.filter_denominator(y, k, effort)


def prune(vectors: np.ndarray, tags: np.ndarray, rtol: float = 1e-13) -> tuple[np.ndarray, np.ndarray]:
    """Drop vectors pointwise dominated by another vector of the set.

    On nonnegative states a vector ``a`` with some ``b <= a`` everywhere is
    never the unique minimizer, so removing it leaves the minimum unchanged.
    Exact duplicates keep the lowest tag. Output is sorted by tag.
    """
    if len(vectors) <= 1:
        return vectors, tags
    order = np.lexsort((tags, vectors.sum(axis=1)))
    kept: list[int] = []
    kept_arr = np.empty((len(vectors), vectors.shape[1]))
    for start in range(0, len(order), PRUNE_BLOCK):
        block = order[start:start + PRUNE_BLOCK]
        cand = vectors[block]
        slack = cand + rtol * np.abs(cand)
        if kept:
            dominated = np.all(kept_arr[None, :len(kept)] <= slack[:, None, :], axis=2).any(axis=1)
        else:
            dominated = np.zeros(len(block), dtype=bool)
        first = len(kept)
        for b in np.flatnonzero(~dominated):
            if len(kept) > first and np.any(np.all(kept_arr[first:len(kept)] <= slack[b], axis=1)):
                continue
            kept_arr[len(kept)] = cand[b]
            kept.append(block[b])
    kept_idx = np.array(kept)
    final = kept_idx[np.lexsort((kept_idx, tags[kept_idx]))]
    return vectors[final], tags[final]


@dataclass
class AlphaVectorSet:
    """Per-stage coefficient vectors representing ``Z(., k)``.

    ``coeffs[k]`` has shape ``(m_k, n)`` in weighted form and ``tags[k]`` holds
    the first action (control index) of each vector; the stage-K tag is -1.
    """

    coeffs: list
    tags: list
    weights: np.ndarray
    obs_nodes: np.ndarray
    obs_weights: np.ndarray
    stats: list = field(default_factory=list)
    controls: tuple = ()

    @property
    def horizon(self) -> int:
        return len(self.coeffs) - 1

    def vectors(self, k: int) -> np.ndarray:
        """Alpha vectors as functions on the state grid."""
        return self.coeffs[k] / self.weights[None, :]

    def value(self, sigma, k: int) -> float:
        s = sigma.values if hasattr(sigma, "values") else np.asarray(sigma)
        return float(np.min(self.coeffs[k] @ s))

    def values(self, sigma_batch: np.ndarray, k: int) -> np.ndarray:
        return np.min(np.asarray(sigma_batch) @ self.coeffs[k].T, axis=1)

    def to_dict(self) -> dict:
        stages = []
        for k in range(len(self.coeffs)):
            vecs = self.vectors(k)
            stages.append({
                "stage": k,
                "vectors": [
                    {"action": int(t), "control": (None if t < 0 else float(self.controls[k][t])),
                     "values": [float(x) for x in v]}
                    for t, v in zip(self.tags[k], vecs)
                ],
            })
        return {
            "horizon": self.horizon,
            "obs_nodes": [float(x) for x in self.obs_nodes],
            "obs_weights": [float(x) for x in self.obs_weights],
            "stats": self.stats,
            "stages": stages,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


class AlphaPolicy:
    """Feedback policy: the first action of the minimizing alpha vector."""

    def __init__(self, alphas: AlphaVectorSet):
        self.alphas = alphas
        self._c = [np.ascontiguousarray(c) for c in alphas.coeffs]
        self._t = [np.ascontiguousarray(t, dtype=np.int64) for t in alphas.tags]

    def select(self, sigma: np.ndarray, k: int) -> np.ndarray:
        tags, _ = kernels.alpha_argmin(np.ascontiguousarray(sigma), self._c[k], self._t[k])
        return tags


class ConstantPolicy:
    """Always the same control index."""

    def __init__(self, index: int = 0):
        self.index = int(index)

    def select(self, sigma: np.ndarray, k: int) -> np.ndarray:
        return np.full(len(sigma), self.index, dtype=np.int64)


class OpenLoopPolicy:
    """Fixed control index per stage, ignoring the information state."""

    def __init__(self, indices: Sequence[int]):
        self.indices = tuple(int(i) for i in indices)

    def select(self, sigma: np.ndarray, k: int) -> np.ndarray:
        return np.full(len(sigma), self.indices[k], dtype=np.int64)


def _stage_likelihoods(model, k, effort, y_nodes, q):
    denom = _denominators(model, y_nodes, k, effort)
    return model.likelihood(y_nodes, denom) * q[:, None]


def backward_induction(
    model: SystemModel,
    effort: Optional[GaslightEffort] = None,
    obs_quadrature_nodes: int = 3,
    alpha_cap: int = DEFAULT_ALPHA_CAP,
    min_stage: int = 0,
) -> AlphaVectorSet:
    """Exact (up to observation quadrature) alpha-vector representation of the DP.

    Stages ``min_stage..K`` are built; earlier entries are left as ``None``.
    """
    if effort is not None:
        effort.check(model)
    K = model.horizon
    w = model.state_grid.weights
    y_nodes, q = obs_quadrature(model, obs_quadrature_nodes)
    coeffs: list = [None] * (K + 1)
    tags: list = [None] * (K + 1)
    stats: list = [None] * (K + 1)
    coeffs[K] = terminal_weights(model)[None, :].copy()
    tags[K] = np.array([-1], dtype=np.int64)
    stats[K] = {"stage": K, "generated": 1, "kept": 1}
    for k in range(K - 1, min_stage - 1, -1):
        ops = model.stage_operators(k)
        lik = _stage_likelihoods(model, k, effort, y_nodes, q)
        nxt = coeffs[k + 1]
        all_vecs, all_tags = [], []
        generated = 0
        for a in range(len(ops.controls)):
            back = nxt @ ops.kernels[a]  # (M, n): kernel^T beta for each next vector
            partial = np.zeros((1, model.n_states))
            for nd in range(len(y_nodes)):
                proj = back * lik[nd][None, :]
                cand = (partial[:, None, :] + proj[None, :, :]).reshape(-1, model.n_states)
                generated += len(cand)
                if len(cand) > GENERATION_FACTOR * alpha_cap:
                    raise BudgetExceededError("alpha budget exceeded")
                partial, _ = prune(cand, np.zeros(len(cand), dtype=np.int64))
                if len(partial) > alpha_cap:
                    raise BudgetExceededError("alpha budget exceeded")
            all_vecs.append(partial)
            all_tags.append(np.full(len(partial), a, dtype=np.int64))
        vecs, tg = prune(np.concatenate(all_vecs), np.concatenate(all_tags))
        if len(vecs) > alpha_cap:
            raise BudgetExceededError("alpha budget exceeded")
        coeffs[k] = vecs
        tags[k] = tg
        stats[k] = {"stage": k, "generated": int(generated), "kept": int(len(vecs))}
    return AlphaVectorSet(
        coeffs=coeffs, tags=tags, weights=np.asarray(w), obs_nodes=y_nodes, obs_weights=q,
        stats=stats, controls=model.controls + ((),),
    )


def value(alphas: AlphaVectorSet, sigma: InformationState, k: int) -> float:
    """``min over stage-k vectors of <sigma, alpha>``."""
    return alphas.value(sigma, k)


@dataclass(frozen=True)
class ResponseSet:
    stage: int
    indices: tuple
    controls: tuple
    lookahead: tuple

    def __contains__(self, u):
        return u in self.controls


def response_set(
    model: SystemModel,
    effort: Optional[GaslightEffort],
    sigma: InformationState,
    k: int,
    tol_tie: float = TOL_TIE,
    alphas: Optional[AlphaVectorSet] = None,
    obs_quadrature_nodes: int = 3,
) -> ResponseSet:
    """Controls whose one-step lookahead value is within ``tol_tie`` of the best."""
    if alphas is None:
        alphas = backward_induction(model, effort, obs_quadrature_nodes)
    ops = model.stage_operators(k)
    lik = _stage_likelihoods(model, k, effort, alphas.obs_nodes, alphas.obs_weights)
    s = np.asarray(sigma.values)
    q_vals = []
    for a in range(len(ops.controls)):
        nxt = (s[None, :] * lik) @ ops.kernels[a].T  # one successor state per node, weight folded in
        q_vals.append(float(np.sum(alphas.values(nxt, k + 1))))
    q_vals = np.array(q_vals)
    best = q_vals.min()
    idx = tuple(int(a) for a in np.flatnonzero(q_vals <= best + tol_tie))
    return ResponseSet(k, idx, tuple(float(ops.controls[a]) for a in idx), tuple(float(v) for v in q_vals))


def lookahead_value(
    model: SystemModel,
    effort: Optional[GaslightEffort],
    sigma: InformationState,
    k: int = 0,
    obs_quadrature_nodes: int = 3,
    alpha_cap: int = DEFAULT_ALPHA_CAP,
) -> float:
    """Exact value at one state from the stage-``k+1`` vectors and a single lookahead.

    Avoids building the stage-``k`` vector set, which is the largest one.
    """
    if k == model.horizon:
        return float(np.dot(sigma.values, terminal_weights(model)))
    alphas = backward_induction(model, effort, obs_quadrature_nodes, alpha_cap, min_stage=k + 1)
    rs = response_set(model, effort, sigma, k, alphas=alphas)
    return min(rs.lookahead)


def evaluate_open_loop(
    model: SystemModel,
    effort: Optional[GaslightEffort],
    control_indices: Sequence[int],
    obs_quadrature_nodes: int = 3,
) -> list:
    """Per-stage coefficient vectors of ``V`` for a fixed control sequence.

    ``sigma @ result[k]`` is the expected terminal functional from stage ``k``
    when the controls ``control_indices[k:]`` are applied regardless of the
    observations.
    """
    K = model.horizon
    y_nodes, q = obs_quadrature(model, obs_quadrature_nodes)
    beta = terminal_weights(model)
    out = [None] * (K + 1)
    out[K] = beta
    for k in range(K - 1, -1, -1):
        ops = model.stage_operators(k)
        lik = _stage_likelihoods(model, k, effort, y_nodes, q)
        beta = (lik * (beta @ ops.kernels[control_indices[k]])[None, :]).sum(axis=0)
        out[k] = beta
    return out


def _count_trees(model: SystemModel, n_nodes: int) -> int:
    count = 1
    for k in range(model.horizon - 1, -1, -1):
        count = len(model.controls[k]) * count ** n_nodes
    return count


def enumerate_policies_oracle(
    model: SystemModel,
    effort: Optional[GaslightEffort] = None,
    obs_quadrature_nodes: int = 3,
    sigma: Optional[InformationState] = None,
    max_work: int = 1_000_000,
) -> float:
    """Brute-force minimum over every observation-feedback policy tree.

    Each tree fixes a control at the root and, for each observation node, a
    subtree for the next stage. Trees are evaluated by forward filtering with
    the scalar update operators, independently of the alpha-vector machinery.
    """
    K = model.horizon
    y_nodes, q = obs_quadrature(model, obs_quadrature_nodes)
    N = len(y_nodes)
    n_trees = _count_trees(model, N)
    if n_trees * N ** K > max_work:
        raise BudgetExceededError(f"policy enumeration too large ({n_trees} trees)")
    if sigma is None:
        start = effort.prior if effort is not None and effort.prior is not None else model.prior
        sigma = InformationState(model.state_grid, start.values)

    def trees(k):
        if k == K:
            return [None]
        sub = trees(k + 1)
        return [(a, children) for a in range(len(model.controls[k]))
                for children in itertools.product(sub, repeat=N)]

    cache: dict = {}

    def step(path, s, k, a, nd):
        key = path + ((a, nd),)
        if key not in cache:
            u = model.controls[k][a]
            if effort is None:
                cache[key] = info_state_update(model, s, u, y_nodes[nd])
            else:
                cache[key] = gaslit_update(model, s, u, y_nodes[nd], effort.densities[k])
        return key, cache[key]

    def evaluate(tree, s, k, path):
        if tree is None:
            return terminal_functional(model, s)
        a, children = tree
        total = 0.0
        for nd in range(N):
            key, nxt = step(path, s, k, a, nd)
            total += q[nd] * evaluate(children[nd], nxt, k + 1, key)
        return total

    return min(evaluate(t, sigma, 0, ()) for t in trees(0))
