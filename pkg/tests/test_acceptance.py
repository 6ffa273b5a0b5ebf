"""Exit criteria. Each test prints one PASS/FAIL line and enforces its runtime limit."""

import json
import math
import time

import numpy as np
import pytest

from conftest import random_tiny_model
from gaslight.cli import run
from gaslight.config import build_model, builtin_scenario
from gaslight.densities import bump, tilt
from gaslight.dp import AlphaPolicy, backward_induction, enumerate_policies_oracle
from gaslight.filtering import cost_direct, cost_info_state
from gaslight.grid import GridFunction, normalize
from gaslight.model import GaslightEffort
from gaslight.robustness import (
    compute_constants,
    lemma1_harness,
    lemma2_harness,
    theorem1_harness,
    theorem2_check,
    theorem3_bound,
)
from gaslight.stealth import certify_effort

pytestmark = pytest.mark.acceptance


def report(capsys, n, name, ok, elapsed, limit, detail):
    line = f"criterion {n} ({name}): {'PASS' if ok and elapsed < limit else 'FAIL'} [{elapsed:.1f}s < {limit}s] {detail}"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line
    assert elapsed < limit, line


def menu_densities(phi, lo, hi):
    mid, span = 0.5 * (lo + hi), hi - lo
    return ([tilt(phi, e) for e in (0.005, -0.005, 0.01, -0.01, 0.02, -0.02)]
            + [bump(phi, mid, 0.2 * span, a) for a in (0.01, -0.01, 0.03, -0.03)])


def test_cost_representations(capsys):
    start = time.perf_counter()
    model = build_model(builtin_scenario("canonical"))
    policy = AlphaPolicy(backward_induction(model, None, 3))
    a, sa = cost_direct(model, policy, n_trials=100_000, seed=11)
    b, sb = cost_info_state(model, policy, n_trials=100_000, seed=12)
    gap, tol = abs(a - b), 4 * math.hypot(sa, sb)
    report(capsys, 1, "cost equivalence", gap <= tol, time.perf_counter() - start, 120,
           f"direct={a:.6f}±{sa:.1e} info_state={b:.6f}±{sb:.1e} gap={gap:.2e} tol={tol:.2e}")


def test_deviation_bounds(capsys):
    start = time.perf_counter()
    model = build_model(builtin_scenario("canonical"))
    dens = menu_densities(model.phi, 0.0, 1.0)
    efforts = [GaslightEffort((d,) * 3) for d in dens]
    c = compute_constants(model, efforts=efforts)
    l1 = lemma1_harness(model, c, 1000, seed=21)
    l2 = lemma2_harness(model, c, dens, 1000, seed=22)
    # one seed per instance, cycling through the menu with a perturbed prior
    eff = GaslightEffort((dens[0], dens[7], dens[4]), prior=normalize(GridFunction(
        model.state_grid, model.prior.values * (1 + 0.2 * np.tanh(model.state_grid.nodes)))))
    c1 = compute_constants(model, eff)
    t1, rel = theorem1_harness(model, c1, eff, 1000, seed=23)
    counts = (len(l1.actual), len(l2.actual), len(t1.actual))
    ok = l1.violations == l2.violations == t1.violations == 0 and rel <= 1e-10 and min(counts) >= 1000
    report(capsys, 2, "deviation bounds and their recursion", ok, time.perf_counter() - start, 60,
           f"violations={l1.violations}/{l2.violations}/{t1.violations} instances={counts} rel_gap={rel:.1e}")


def test_objective_gap_bounds(capsys):
    start = time.perf_counter()
    lines, ok = [], True
    for name, forms in (("canonical", ("paper", "volume_corrected")), ("wide_obs", ("volume_corrected",))):
        cfg = builtin_scenario(name)
        model = build_model(cfg)
        g = model.obs_grid
        efforts = [GaslightEffort((d,) * model.horizon) for d in menu_densities(model.phi, g.lower, g.upper)]
        c = compute_constants(model, efforts=efforts)
        certified = [e for e in efforts if certify_effort(model, e, cfg.game.s, c, definition_check=False).passed]
        ok &= len(certified) == 10
        policy = AlphaPolicy(backward_induction(model, None, cfg.dp.obs_nodes))
        bounds = {f: theorem3_bound(c, cfg.game.s, form=f) for f in (*forms, "recursion")}
        worst = -np.inf
        for i, e in enumerate(certified):
            r = theorem2_check(model, e, policy, 10_000, seed=30 + i, constants=c)
            ok &= r.lhs <= r.rhs + 4 * r.diff_se + 1e-12
            ok &= all(r.lhs <= bounds[f] + 4 * r.lhs_se for f in forms)
            ok &= r.rhs <= bounds["recursion"] + 4 * r.rhs_se
            worst = max(worst, r.lhs + 4 * r.lhs_se)
        lines.append(f"{name}: certified={len(certified)} max(lhs+4se)={worst:.2e} "
                     + " ".join(f"{f}={v:.3g}" for f, v in bounds.items()))
    report(capsys, 3, "objective gap and stealth bounds", ok, time.perf_counter() - start, 300, "; ".join(lines))


def test_ess_chain(capsys):
    start = time.perf_counter()
    cfg = builtin_scenario("canonical")
    model = build_model(cfg)
    efforts = [GaslightEffort((d,) * 3) for d in menu_densities(model.phi, 0.0, 1.0)]
    c = compute_constants(model, efforts=efforts)
    factor = np.ones(model.obs_grid.n_points)
    factor[16] = 0.5
    notch = GaslightEffort((normalize(GridFunction(model.obs_grid, model.phi.values * factor)),) * 3)
    sound, passing = True, 0
    for e in efforts:
        for st in certify_effort(model, e, cfg.game.s, c, True, 256, 64, seed=40).stages:
            if st.passed:
                passing += 1
                sound &= st.ess_pass and st.ess_lhs <= cfg.game.s + 4 * st.ess_se
    bad = certify_effort(model, notch, cfg.game.s, c, True, 256, 64, seed=41)
    fails_both = all(not st.passed and not st.ess_pass for st in bad.stages)
    report(capsys, 4, "stealth chain", sound and passing > 0 and fails_both, time.perf_counter() - start, 60,
           f"passing_stages={passing} chain_sound={sound} notch_integral={bad.stages[0].integral:.3f} "
           f"notch_lhs={bad.stages[0].ess_lhs:.3f} s={cfg.game.s}")


def test_dp_oracle(capsys):
    start = time.perf_counter()
    worst, worst_hom, worst_conc = 0.0, 0.0, 0.0
    rng = np.random.default_rng(50)
    for seed in range(100):
        m = random_tiny_model(1000 + seed)
        a = backward_induction(m, None, 3)
        v, o = a.value(m.prior, 0), enumerate_policies_oracle(m, None, 3)
        worst = max(worst, abs(v - o) / max(1.0, abs(o)))
        s1, s2 = rng.uniform(0, 2, size=(2, 3))
        lam = rng.uniform(0.01, 100)
        for k in range(3):
            v1 = a.value(s1, k)
            worst_hom = max(worst_hom, abs(a.value(lam * s1, k) - lam * v1) / max(1.0, abs(lam * v1)))
            avg = 0.5 * (v1 + a.value(s2, k))
            worst_conc = max(worst_conc, (avg - a.value(0.5 * (s1 + s2), k)) / max(1.0, abs(avg)))
    ok = worst <= 1e-10 and worst_hom <= 1e-12 and worst_conc <= 1e-12
    report(capsys, 5, "dp oracle", ok, time.perf_counter() - start, 60,
           f"max_rel_gap={worst:.1e} homogeneity={worst_hom:.1e} concavity_excess={worst_conc:.1e}")


@pytest.fixture(scope="module")
def favorable(tmp_path_factory):
    out = tmp_path_factory.mktemp("favorable")
    start = time.perf_counter()
    rep = run("equilibrium", builtin_scenario("gaslight_favorable"), out, threads=1)
    return out, rep, time.perf_counter() - start


def test_equilibrium(capsys, tmp_path, favorable):
    start = time.perf_counter()
    run("equilibrium", builtin_scenario("nominal_singleton"), tmp_path, threads=1)
    single = json.loads((tmp_path / "equilibrium.json").read_text())
    out, rep, fav_time = favorable
    doc = json.loads((out / "equilibrium.json").read_text())
    t5 = doc["theorem5"]
    ok = (
        abs(single["value"]) <= 4 * single["se"] + 1e-15
        and any(label != "nominal" for label in doc["chosen_labels"])
        and doc["value"] < -4 * doc["se"]
        and t5["applies"] and t5["conservative_violations"] == 0
        and doc["value"] >= t5["conservative"] - 4 * doc["se"]
        and doc["consistent"] and rep.status == "ok"
    )
    report(capsys, 6, "equilibrium", ok, time.perf_counter() - start + fav_time, 600,
           f"singleton={single['value']:.2e}±{single['se']:.1e} chosen={doc['chosen_labels']} "
           f"value={doc['value']:.5f}±{doc['se']:.5f} conservative_bound={t5['conservative']:.3f} "
           f"consistent={doc['consistent']}")


def test_determinism(capsys, tmp_path, favorable):
    start = time.perf_counter()
    compared = []
    cfg = builtin_scenario("canonical")
    for command in ("simulate", "solve", "stealth"):
        a, b = tmp_path / f"{command}-a", tmp_path / f"{command}-b"
        ra = run(command, cfg, a)
        run(command, cfg, b)
        compared += [(a / p.split("/")[-1], b / p.split("/")[-1]) for p in ra.artifacts]
    out, rep, _ = favorable
    again = tmp_path / "favorable"
    run("equilibrium", builtin_scenario("gaslight_favorable"), again, threads=4)
    compared += [(out / p.split("/")[-1], again / p.split("/")[-1]) for p in rep.artifacts]
    mismatched = [str(x.name) for x, y in compared if x.read_bytes() != y.read_bytes()]
    report(capsys, 7, "determinism", not mismatched, time.perf_counter() - start, 600,
           f"files_compared={len(compared)} mismatched={mismatched}")
