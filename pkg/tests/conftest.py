import math

import numpy as np
import pytest

from gaslight.config import Affine, Linear, Quadratic, QuadraticTerminal, TargetWell, build_model, builtin_scenario
from gaslight.densities import truncated_normal, uniform
from gaslight.grid import Grid
from gaslight.model import SystemModel


@pytest.fixture(scope="session")
def canonical():
    return build_model(builtin_scenario("canonical"))


@pytest.fixture(scope="session")
def canonical_alphas(canonical):
    from gaslight.dp import backward_induction

    return backward_induction(canonical, None, 3)


@pytest.fixture(scope="session")
def canonical_cfg():
    return builtin_scenario("canonical")


def make_model(
    n_state=9,
    n_obs=11,
    horizon=2,
    controls=(-0.3, 0.3),
    a=0.8,
    h=Affine(0.25, 0.0),
    running=Quadratic(0.1, 0.5),
    terminal=QuadraticTerminal(0.5, 0.0),
    gaslighter=TargetWell(1.0, -1.0, 0.7),
    psi_scale=0.4,
    phi_scale=0.3,
    obs=(0.0, 1.0),
    mu=0.3,
    prior_scale=0.6,
    n_inc=None,
):
    sg = Grid(-2.0, 2.0, n_state)
    og = Grid(obs[0], obs[1], n_obs)
    inc = Grid(-1.0, 1.0, n_inc or n_state)
    phi = truncated_normal(og, 0.5 * (obs[0] + obs[1]), phi_scale) if phi_scale else uniform(og)
    return SystemModel(
        state_grid=sg,
        obs_grid=og,
        horizon=horizon,
        controls=controls,
        dynamics=Linear(a, 1.0),
        observation=h,
        running_cost=running,
        terminal_cost=terminal,
        gaslighter_cost=gaslighter,
        process_noise=truncated_normal(inc, 0.0, psi_scale),
        observation_noise=phi,
        mu=mu,
        prior=truncated_normal(sg, 0.0, prior_scale),
    )


def random_tiny_model(seed):
    """Random instance: K = 2, two controls, three state nodes."""
    rng = np.random.default_rng(seed)
    return make_model(
        n_state=3, n_obs=9, horizon=2,
        controls=tuple(np.round(rng.uniform(-1, 1, size=2), 3)),
        a=float(rng.uniform(0.3, 1.1)),
        h=Affine(float(rng.uniform(-0.5, 0.5)), 0.0),
        running=Quadratic(float(rng.uniform(0, 0.5)), float(rng.uniform(0, 0.5))),
        terminal=QuadraticTerminal(float(rng.uniform(0.1, 1)), float(rng.uniform(-1, 1))),
        psi_scale=float(rng.uniform(0.3, 1.5)), phi_scale=float(rng.uniform(0.2, 0.6)),
        mu=float(rng.uniform(0.1, 1.0)), prior_scale=float(rng.uniform(0.4, 2.0)), n_inc=5,
    )


@pytest.fixture
def small_model():
    return make_model()


# -- independent oracles ------------------------------------------------------


def interp_loop(nodes, values, x):
    """Scalar piecewise-linear evaluation, zero outside the nodes."""
    if x < nodes[0] or x > nodes[-1]:
        return 0.0
    for i in range(len(nodes) - 1):
        if nodes[i] <= x <= nodes[i + 1]:
            t = (x - nodes[i]) / (nodes[i + 1] - nodes[i])
            return (1 - t) * values[i] + t * values[i + 1]
    return float(values[-1])


def wrap_scalar(x, lo, hi):
    length = hi - lo
    return lo + math.fmod(math.fmod(x - lo, length) + length, length)


def update_oracle(model, sigma, u, y, denom):
    """Direct double sum for one information-state update."""
    g = model.state_grid
    z, w = list(g.nodes), list(g.weights)
    inc = model.process_noise
    og = model.obs_grid
    phi = model.phi
    out = []
    for i in range(len(z)):
        total = 0.0
        for j in range(len(z)):
            b = min(max(float(model.dynamics(z[j], u)), g.lower), g.upper)
            norm = sum(w[k] * interp_loop(list(inc.grid.nodes), list(inc.values), z[k] - b) for k in range(len(z)))
            kern = interp_loop(list(inc.grid.nodes), list(inc.values), z[i] - b) / norm
            h = float(model.observation(z[j]))
            lik = interp_loop(list(og.nodes), list(phi.values), wrap_scalar(y - h, og.lower, og.upper)) / denom
            cost = math.exp(model.mu * float(model.running_cost(z[j], u)))
            total += w[j] * kern * cost * lik * sigma[j]
        out.append(total)
    return np.array(out)


def normal_cdf(x):
    return 0.5 * (1 + math.erf(x / math.sqrt(2)))
