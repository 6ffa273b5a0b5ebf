import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_model
from gaslight.densities import bump, step, tilt, truncated_normal, uniform
from gaslight.errors import DegenerateDensityError, GaslightError
from gaslight.grid import Grid, GridDensity, GridFunction, normalize, quadrature
from gaslight.model import GaslightEffort
from gaslight.robustness import compute_constants
from gaslight.stealth import (
    certify_effort,
    design_cost,
    ess_definition_check,
    ess_lhs,
    ess_sufficient_integral,
    s_bar,
)


class TestSufficientIntegral:
    def test_identity(self, canonical):
        assert ess_sufficient_integral(canonical.phi, canonical.phi) == 0.0

    @pytest.mark.parametrize("eps", [0.01, 0.1, 0.3, 0.5])
    def test_step_closed_form(self, eps):
        g = Grid(0, 1, 64)
        phi = uniform(g)
        d = step(phi, eps)
        # even node count: each half carries trapezoid weight 1/2, so no rescaling occurs
        assert quadrature(d) == pytest.approx(1.0, abs=1e-15)
        exact = eps / (1 + eps) / 2 + eps / (1 - eps) / 2
        assert ess_sufficient_integral(phi, d) == pytest.approx(exact, rel=1e-12)

    @staticmethod
    def _shifted(n, shift):
        g = Grid(0, 1, n)
        return ess_sufficient_integral(truncated_normal(g, 0.5, 0.3), truncated_normal(g, 0.5 + shift, 0.3))

    def test_grid_refinement(self):
        assert abs(self._shifted(33, 0.02) - self._shifted(321, 0.02)) <= 1e-4

    def test_refinement_converges(self):
        # the error is second order in the spacing and grows with the shift
        coarse = abs(self._shifted(33, 0.05) - self._shifted(321, 0.05))
        fine = abs(self._shifted(321, 0.05) - self._shifted(3201, 0.05))
        assert fine < coarse / 50

    def test_degenerate(self, small_model):
        g = small_model.obs_grid
        vals = np.ones(g.n_points)
        vals[2] = 0
        with pytest.raises(DegenerateDensityError, match="degenerate effort density"):
            ess_sufficient_integral(small_model.phi, GridDensity(g, vals / (vals @ g.weights)))

    def test_grid_mismatch(self, small_model):
        with pytest.raises(GaslightError):
            ess_sufficient_integral(small_model.phi, uniform(Grid(0, 1, 5)))


class TestDesignCost:
    def test_nominal_zero(self, canonical):
        assert design_cost(canonical.phi, canonical.phi, 3.0) == 0.0

    def test_scaling(self, canonical):
        d = tilt(canonical.phi, 0.2)
        v = ess_sufficient_integral(canonical.phi, d)
        assert design_cost(canonical.phi, d, 2.0) == pytest.approx(2 * v, rel=1e-15)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31), st.floats(0.001, 10))
    def test_product_oracle(self, seed, t):
        g = Grid(0, 1, 17)
        rng = np.random.default_rng(seed)
        phi = truncated_normal(g, 0.5, 0.3)
        d = normalize(GridFunction(g, phi.values * rng.uniform(0.5, 1.5, size=17)))
        w = np.full(17, 1 / 16)
        w[[0, -1]] /= 2
        direct = sum(w[i] * abs(phi.values[i] / d.values[i] - 1) for i in range(17))
        assert design_cost(phi, d, t) == pytest.approx(t * direct, rel=1e-12)
        assert design_cost(phi, d, t) >= 0

    def test_negative_t(self, canonical):
        with pytest.raises(GaslightError):
            design_cost(canonical.phi, canonical.phi, -1.0)


class TestStealthDefinitionCheck:
    def test_nominal_passes(self, canonical):
        c = compute_constants(canonical)
        lhs, se, ok = ess_definition_check(canonical, canonical.phi, 1e-6, c, stage=1)
        assert lhs == 0.0 and se == 0.0 and ok

    def test_lhs_bounded_by_integral_chain(self, canonical):
        d = tilt(canonical.phi, 0.1)
        c = compute_constants(canonical, GaslightEffort((d,) * 3))
        v = ess_sufficient_integral(canonical.phi, d)
        lhs, _, _ = ess_definition_check(canonical, d, 1.0, c, stage=1, n_sigma_samples=64, n_reachable=16)
        assert 0 < lhs <= c.c * c.zeta * v

    def test_vertex_states_attain_sup(self, small_model):
        # the objective is linear on nonnegative states, so no mixture beats the best node-concentrated state
        d = bump(small_model.phi, 0.5, 0.2, 0.8)
        c = compute_constants(small_model, GaslightEffort((d, d)))
        w = small_model.state_grid.weights
        vertices = np.diag(c.zeta / w)
        best = ess_lhs(small_model, d, 0, vertices).max()
        rng = np.random.default_rng(0)
        mix = rng.dirichlet(np.ones(len(w)), size=200) @ vertices
        assert np.all(ess_lhs(small_model, d, 0, mix) <= best * (1 + 1e-12))

    def test_spike_fails(self, canonical):
        g = canonical.obs_grid
        factor = np.ones(g.n_points)
        factor[16] = 0.02
        spike = normalize(GridFunction(g, canonical.phi.values * factor))
        c = compute_constants(canonical, GaslightEffort((spike,) * 3))
        s = 0.01
        lhs, _, ok = ess_definition_check(canonical, spike, s, c, stage=0)
        assert not ok and lhs > s
        assert ess_sufficient_integral(canonical.phi, spike) > s_bar(s, c)

    def test_invalid_s(self, canonical):
        with pytest.raises(GaslightError):
            ess_definition_check(canonical, canonical.phi, 0.0, compute_constants(canonical))


class TestCertify:
    def test_nominal(self, canonical):
        c = compute_constants(canonical)
        r = certify_effort(canonical, GaslightEffort.nominal(canonical), 2.0, c, n_sigma_samples=16, n_reachable=4)
        assert r.passed and all(st.integral == 0 for st in r.stages)
        assert r.s_bar * r.c * r.zeta == pytest.approx(2.0, rel=1e-15)

    def test_offending_stage(self, canonical):
        big = tilt(canonical.phi, 0.9)
        eff = GaslightEffort((canonical.phi, big, canonical.phi))
        c = compute_constants(canonical, eff)
        r = certify_effort(canonical, eff, 2.0, c, definition_check=False)
        assert not r.passed and r.offending_stages == [2]
        doc = json.loads(r.to_json())
        assert set(doc["stages"][0]) == {"stage", "integral", "s_bar", "ess_lhs", "ess_se", "pass", "ess_pass"}

    def test_sweep_downward_closed(self):
        m = make_model(phi_scale=None, n_obs=20)
        epsilons = [0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5]
        effs = [GaslightEffort((step(m.phi, e),) * 2) for e in epsilons]
        c = compute_constants(m, efforts=effs)
        s = 0.1 * c.c * c.zeta  # s_bar = 0.1
        passed = [certify_effort(m, e, s, c, definition_check=False).passed for e in effs]
        integrals = [e / (1 + e) / 2 + e / (1 - e) / 2 for e in epsilons]
        assert passed == [v <= 0.1 for v in integrals]
        assert passed == sorted(passed, reverse=True) and any(passed) and not all(passed)

    def test_chain_soundness(self, canonical):
        dens = [tilt(canonical.phi, e) for e in (-0.05, 0.01, 0.05)] + [bump(canonical.phi, 0.5, 0.2, 0.05)]
        effs = [GaslightEffort((d,) * 3) for d in dens]
        c = compute_constants(canonical, efforts=effs)
        for e in effs:
            r = certify_effort(canonical, e, 2.0, c, n_sigma_samples=32, n_reachable=8)
            for st_ in r.stages:
                if st_.passed:
                    assert st_.ess_pass and st_.ess_lhs <= 2.0
