import csv
import json
import math

import numpy as np
import pytest

from conftest import interp_loop, make_model
from gaslight.config import Zero
from gaslight.densities import bump, tilt
from gaslight.dp import AlphaPolicy, ConstantPolicy, backward_induction
from gaslight.errors import BudgetExceededError, GaslightError
from gaslight.model import GaslightEffort
from gaslight.robustness import RobustnessConstants, compute_constants
from gaslight.stackelberg import (
    EffortMenu,
    gaslighter_objective,
    search_equilibrium,
    theorem5_bounds,
    w_recursion_check,
)
from gaslight.stealth import design_cost, ess_sufficient_integral, s_bar


def consts(**kw):
    base = dict(phi_hat=1.0, phi_min=1.0, l=1.0, c=1.0, zeta=1.0, e_phi=1.0, e_gamma=1.0, vol_y=1.0, d0=0.0,
                horizon=3)
    base.update(kw)
    return RobustnessConstants(**base)


def zero_running(**kw):
    return make_model(running=Zero(), **kw)


class TestMenu:
    def test_nominal_first_and_deduplicated(self, small_model):
        phi = small_model.phi
        m = EffortMenu.build(phi, [("nominal", phi), ("same", phi), ("tilt", tilt(phi, 0.2))])
        assert m.labels == ("nominal", "tilt") and len(m) == 2
        assert len(list(m.sequences(2))) == 4
        e = m.effort((1, 0), t=0.5)
        assert e.labels == ("tilt", "nominal") and e.t == 0.5

    def test_invalid_member(self, small_model, canonical):
        with pytest.raises(GaslightError):
            EffortMenu.build(small_model.phi, [("x", canonical.phi)])


class TestObjective:
    def test_nominal_is_exactly_zero(self, small_model):
        pol = AlphaPolicy(backward_induction(small_model))
        est = gaslighter_objective(small_model, GaslightEffort.nominal(small_model, t=0.3), pol, pol, 500, seed=1)
        assert est.value == 0.0 and est.se == 0.0 and est.design_cost == 0.0

    def test_zero_gaslighter_cost_leaves_design_cost(self):
        m = make_model(gaslighter=Zero())
        d = (tilt(m.phi, 0.3), bump(m.phi, 0.5, 0.2, 0.4))
        eff = GaslightEffort(d, t=0.7)
        pol = ConstantPolicy(0)
        est = gaslighter_objective(m, eff, pol, pol, 100, seed=2)
        expected = sum(0.7 * ess_sufficient_integral(m.phi, x) for x in d)
        assert est.value == pytest.approx(expected, rel=1e-14) and est.se == 0.0
        assert est.design_cost == pytest.approx(sum(design_cost(m.phi, x, 0.7) for x in d), rel=1e-15)

    def test_too_few_trials(self, small_model):
        with pytest.raises(GaslightError):
            gaslighter_objective(small_model, GaslightEffort.nominal(small_model), ConstantPolicy(0),
                                 ConstantPolicy(0), 1, seed=0)

    def test_rollout_oracle(self):
        # independent loop: numpy generator, transition matrices rebuilt from the noise, rejection-sampled y
        m = zero_running()
        eff = GaslightEffort((tilt(m.phi, 0.5), tilt(m.phi, -0.5)), t=0.05)
        dm = AlphaPolicy(backward_induction(m, eff))
        nom = AlphaPolicy(backward_induction(m))
        n = 20_000
        est = gaslighter_objective(m, eff, dm, nom, n, seed=3)

        g, og = m.state_grid, m.obs_grid
        z, w = g.nodes, g.weights
        inc = m.process_noise
        trans = {}
        for u in m.all_controls():
            b = np.clip(0.8 * z + u, g.lower, g.upper)
            raw = np.array([[interp_loop(inc.grid.nodes, inc.values, z[i] - b[j]) for j in range(9)]
                            for i in range(9)]) * w[:, None]
            trans[float(u)] = raw / raw.sum(axis=0)
        rng = np.random.default_rng(12345)

        def draw_y(d):
            top = d.values.max()
            while True:
                y = rng.uniform(og.lower, og.upper)
                if rng.uniform() * top <= interp_loop(og.nodes, d.values, y):
                    return y

        def rollout(policy, densities):
            x = rng.choice(9, p=w * m.prior.values / (w @ m.prior.values))
            sigma = m.prior.values.copy()
            for k in range(2):
                a = int(policy.select(sigma[None, :], k)[0])
                u = m.controls[k][a]
                y = draw_y(densities[k])
                x = rng.choice(9, p=trans[u][:, x])
                lik = np.array([interp_loop(og.nodes, m.phi.values, (y - 0.25 * zj) % 1.0) for zj in z])
                denom = interp_loop(og.nodes, densities[k].values, y)
                sigma = (trans[u] / w[:, None] * w[None, :]) @ (sigma * lik / denom)
            return math.exp(m.mu * float(m.gaslighter_cost(z[x])))

        trials = 4000
        first = np.array([rollout(dm, eff.densities) for _ in range(trials)])
        ref = np.array([rollout(nom, (m.phi, m.phi)) for _ in range(trials)])
        h = sum(design_cost(m.phi, d, 0.05) for d in eff.densities)
        oracle = first.mean() - ref.mean() + h
        oracle_se = math.hypot(first.std(ddof=1), ref.std(ddof=1)) / math.sqrt(trials)
        assert abs(est.value - oracle) <= 4 * math.hypot(est.se, oracle_se)


class TestWRecursion:
    def test_holds(self):
        m = zero_running(horizon=3)
        eff = GaslightEffort((tilt(m.phi, 0.3), m.phi, bump(m.phi, 0.5, 0.2, 0.5)), t=0.1)
        pol = AlphaPolicy(backward_induction(m, eff))
        rows = w_recursion_check(m, eff, pol, n_trials=100, seed=4, n_starts=12, n_inner=10)
        assert [r.stage for r in rows] == [0, 1, 2, 3]
        assert all(r.holds for r in rows)
        assert rows[-1].se == 0.0 and rows[-1].direct == rows[-1].nested

    def test_trivial_costs(self):
        m = make_model(gaslighter=Zero())
        eff = GaslightEffort((tilt(m.phi, 0.3),) * 2, t=0.0)
        rows = w_recursion_check(m, eff, ConstantPolicy(1), n_trials=20, seed=0, n_starts=4, n_inner=3)
        for r in rows:
            assert r.direct == 1.0 and r.nested == 1.0 and r.holds

    def test_needs_starts(self, small_model):
        with pytest.raises(GaslightError):
            w_recursion_check(small_model, GaslightEffort.nominal(small_model), ConstantPolicy(0), 10, 0, n_starts=1)


class TestGaslighterLowerBound:
    def test_single_stage(self):
        c = consts(c=2.0, zeta=3.0, horizon=1)
        assert theorem5_bounds(c, 1.5, 0.1, form="conservative") == 0.0
        assert theorem5_bounds(c, 1.5, 0.1, form="paper") == pytest.approx(0.1 * s_bar(1.5, c), rel=1e-15)
        assert s_bar(1.5, c) == pytest.approx(0.25)

    def test_flat_density(self):
        c = consts(e_gamma=1.7, horizon=3)
        assert theorem5_bounds(c, 0.4, 0.0, form="conservative") == pytest.approx(-1.7 * 0.4 * 2)

    def test_prior_term(self):
        c = consts(phi_hat=1.5, d0=0.2, e_gamma=2.0, horizon=2)
        assert theorem5_bounds(c, 0.3, 0.0, form="conservative") == pytest.approx(-2.0 * (1.5**2 * 0.2 + 0.3 * 1.5))

    def test_forms_ordered(self):
        c = consts(phi_hat=1.3, d0=0.1)
        assert theorem5_bounds(c, 0.5, 0.2, form="paper") >= theorem5_bounds(c, 0.5, 0.2, form="conservative")
        with pytest.raises(GaslightError):
            theorem5_bounds(c, 0.5, 0.2, form="other")


class TestSearch:
    @pytest.fixture
    def game(self):
        m = zero_running()
        phi = m.phi
        menu = EffortMenu.build(phi, [("up", tilt(phi, 0.3)), ("down", tilt(phi, -0.3)),
                                      ("far", tilt(phi, 0.9))])
        return m, menu

    def test_singleton_menu(self, game):
        m, _ = game
        res = search_equilibrium(m, EffortMenu.build(m.phi), [0.0, 0.0], s=1.0, t=0.01, n_trials=400, seed=0)
        assert res.chosen == (0, 0) and res.value == 0.0 and res.se == 0.0
        assert res.consistency()

    def test_stealth_filter(self, game):
        m, menu = game
        c = compute_constants(m, efforts=[GaslightEffort((d,) * 2) for d in menu.densities])
        ints = [ess_sufficient_integral(m.phi, d) for d in menu.densities]
        limit = 0.5 * (max(ints[1:3]) + ints[3])  # the 0.9 tilt fails, the 0.3 tilts pass
        s = limit * c.c * c.zeta
        res = search_equilibrium(m, menu, [0.0, 0.0], s=s, t=0.01, n_trials=400, seed=1, constants=c)
        assert len(res.table) == 16
        for r in res.table:
            assert r.stealth_pass == all(v <= limit for v in r.integrals)
            assert np.isfinite(r.value) == r.stealth_pass
            assert (3 in r.index) == (not r.stealth_pass)
        assert res.chosen in [r.index for r in res.evaluated()]
        assert res.consistency()
        best = min(r.value for r in res.evaluated())
        assert res.value == best
        unfiltered = search_equilibrium(m, menu, [0.0, 0.0], s=s, t=0.01, n_trials=400, seed=1, constants=c,
                                        stealth_filter=False)
        assert len(unfiltered.evaluated()) == 16

    def test_huge_epsilon(self, game):
        m, menu = game
        res = search_equilibrium(m, menu, [1e9, 1e9], s=50.0, t=0.01, n_trials=200, seed=2)
        ev = [r.index for r in res.evaluated()]
        assert res.acceptable == ev and res.chosen == ev[0]

    def test_thread_invariance(self, game):
        m, menu = game
        a = search_equilibrium(m, menu, [0.0, 0.0], s=50.0, t=0.01, n_trials=200, seed=5)
        b = search_equilibrium(m, menu, [0.0, 0.0], s=50.0, t=0.01, n_trials=200, seed=5, threads=3)
        assert a.to_dict() == b.to_dict()

    def test_coverage(self, game):
        m, menu = game
        res = search_equilibrium(m, menu, [0.0, 0.0], s=50.0, t=0.01, n_trials=200, seed=6, coverage_starts=3,
                                 coverage_rollouts=50)
        assert 0.0 <= res.coverage <= 1.0

    def test_errors(self, game):
        m, menu = game
        with pytest.raises(BudgetExceededError):
            search_equilibrium(m, menu, [0.0, 0.0], s=1.0, t=0.0, n_trials=10, seed=0, max_candidates=10)
        with pytest.raises(GaslightError):
            search_equilibrium(m, menu, [0.0], s=1.0, t=0.0, n_trials=10, seed=0)

    def test_outputs(self, game, tmp_path):
        m, menu = game
        res = search_equilibrium(m, menu, [0.0, 0.0], s=50.0, t=0.01, n_trials=100, seed=3)
        doc = json.loads(res.to_json())
        assert {"chosen", "value", "se", "theorem5", "consistent", "certification"} <= set(doc)
        res.write_table(tmp_path / "c.csv")
        rows = list(csv.reader(open(tmp_path / "c.csv")))
        assert rows[0] == ["stage1", "stage2", "value", "se", "design_cost", "stealth_pass", "dm_value"]
        assert len(rows) == 17
