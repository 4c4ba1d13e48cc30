"""Exit criteria at their stated tolerances and sample sizes.

Each check prints one PASS/FAIL line (collected again in the terminal
summary).  Monte Carlo runs are cached so that the determinism check can
repeat every one of them at a different worker count.
"""

import math
import time

import numpy as np
import pytest
from scipy.stats import halfnorm

from parisian import asymptotics as asy
from parisian.constants_lab import FunctionalSpec, estimate_ladder, extrapolate_pickands
from parisian.gaussian_paths import GaussianModel, fbm_local_expansion
from parisian.parisian_estimator import (
    Constant,
    MCConfig,
    RuinProblem,
    Scaled,
    estimate_parisian_is,
    estimate_ruin_time_law,
)
from parisian.stable_sim import StableSpec, estimate_parisian_stable_ladder

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

BM = GaussianModel.brownian()
ALT_WORKERS = 3
RUNS = {}


def timed(fn, *args, **kw):
    t0 = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t0


def cached(key, fn):
    if key not in RUNS:
        RUNS[key] = timed(fn, None)
    return RUNS[key]


# --------------------------------------------------------------------------
# runs (each returns a dict whose "p" entry lists the Monte Carlo numbers)


def run_c2(workers):
    p = RuinProblem(BM, 1.0, 1.0, 3.0, Constant(1.0), t_from=1.0)
    cfg = MCConfig(1_000_000, 2002, 1 / 512, importance_sampling=True, bridge=True, workers=workers)
    e = estimate_parisian_is(p, cfg)
    return dict(est=e, p=[e.p_hat, e.diagnostics["halving_p"]])


def run_c3(workers):
    out = {}
    for alpha in (1.0, 2.0):
        raw = estimate_ladder(FunctionalSpec("pickands", alpha, grid_step=0.01), [5, 10, 20], 100_000, 2003,
                              workers=workers)
        out[alpha] = (raw, extrapolate_pickands(raw))
    return dict(H=out, p=[e.value for a in out for e in out[a][0]])


def run_c6(workers):
    T, u = 1.0, 4.0
    p = RuinProblem(BM, 1.0, 1.0, u, Scaled(T, 2.0))
    e = estimate_parisian_is(p, MCConfig(1_000_000, 2006, 1 / 1024, importance_sampling=True, workers=workers))
    # real step h maps to lag h u^2 D / sigma^2(S) = 1/128 in the constant's time scale
    spec = FunctionalSpec("piterbarg", 1.0, T=T / 2, grid_step=1 / 128, beta=1.0, b1=1.0, b2=-1.0)
    raw = estimate_ladder(spec, [5, 10, 20], 100_000, 2106, workers=workers)
    P = extrapolate_pickands(raw, mode="piterbarg")
    asym = asy.fbm_corollary_asymptotic(1.0, 1.0, 1.0, u, T, constant=P.value)
    return dict(est=e, P=P, asym=asym, p=[e.p_hat, e.diagnostics["halving_p"]] + [r.value for r in raw])


def run_c7(workers):
    out = []
    for u in (2.0, 3.0):
        p = RuinProblem(BM, 1.0, 1.0, u, Constant(1.0))
        e = estimate_parisian_is(p, MCConfig(200_000, 2007, 1 / 256, importance_sampling=True, workers=workers))
        out.append((u, e, asy.lower_bound_thm31(BM.variance, BM.variance_derivative, 1.0, 1.0, 1.0, u)))
    return dict(rows=out, p=[e.p_hat for _, e, _ in out])


def run_c8(workers):
    us = [3.0, 4.0, 5.0]
    ests = [
        estimate_parisian_is(
            RuinProblem(BM, 1.0, 1.0, u, Constant(0.1)),
            MCConfig(200_000, 2008, 1 / 640, importance_sampling=True, workers=workers),
        )
        for u in us
    ]
    return dict(us=us, ests=ests, p=[e.p_hat for e in ests])


def run_c9(workers):
    us = [15.0, 30.0, 60.0]
    ests = estimate_parisian_stable_ladder(
        StableSpec(1.5, 0.0), 1.0, 1.0, 0.1, us, MCConfig(1_000_000, 2009, 1e-3, workers=workers)
    )
    return dict(us=us, ests=ests, p=[e.p_hat for e in ests])


C11_X = np.array([0.5, 2 * math.log(2), 3.0])


def run_c11(workers):
    p = RuinProblem(BM, 1.0, 1.0, 4.0, Scaled(1.0, 2.0))
    law = estimate_ruin_time_law(
        p, MCConfig(1_000_000, 2011, 1 / 1024, importance_sampling=True, workers=workers), C11_X
    )
    return dict(law=law, p=list(law.cdf) + [law.p_ruin])


MC_RUNS = dict(c2=run_c2, c3=run_c3, c6=run_c6, c7=run_c7, c8=run_c8, c9=run_c9, c11=run_c11)


# --------------------------------------------------------------------------
# analytic criteria


def c1_values():
    us = [3, 4, 5, 6, 7, 8]
    return np.array([asy.bm_inf_tail_asymptotic(1, 1, 2, u).value / asy.bm_inf_tail_exact(1, 1, 2, u) for u in us])


def test_c1_inf_tail_convergence(report):
    r, dt = timed(c1_values)
    d = np.diff(r)
    monotone = bool(np.all(d > 0) or np.all(d < 0))
    ok = monotone and abs(r[-1] - 1) <= 0.15 and dt < 1
    report("C1 inf-tail asymptotic/exact, u=3..8", ok,
           f"ratios {np.round(r, 5).tolist()}, monotone={monotone}, |r(8)-1|={abs(r[-1] - 1):.4f} <= 0.15, {dt:.2f}s")
    RUNS["c1"] = (dict(p=list(r)), dt)
    assert ok


def c4_sweep(seed=2004):
    rng = np.random.default_rng(seed)
    worst, mismatched = 0.0, 0
    for case in ("i", "ii", "iii"):
        for _ in range(100):
            alpha = {"i": rng.uniform(0.05, 0.99), "ii": 1.0, "iii": rng.uniform(1.01, 2.0)}[case]
            S, c, u, T = rng.uniform(0.1, 10), rng.uniform(0.1, 5), rng.uniform(1, 50), rng.uniform(0, 5)
            H = rng.uniform(0.2, 3.0)
            a = asy.gauss_exact_asymptotic(fbm_local_expansion(alpha, S), c, S, u, T, H)
            b = asy.fbm_corollary_asymptotic(alpha, c, S, u, T, H)
            mismatched += a.regime.split("_")[1] != case or b.regime.split("_")[1] != case
            if b.value > 0:
                worst = max(worst, abs(a.value - b.value) / b.value)
    return worst, mismatched


def test_c4_corollary_identity(report):
    (worst, bad), dt = timed(c4_sweep)
    ok = worst <= 1e-12 and bad == 0 and dt < 1
    report("C4 theorem vs corollary on fBm, 3x100 draws", ok,
           f"max rel diff {worst:.2e} <= 1e-12, regime mismatches {bad}, {dt:.2f}s")
    RUNS["c4"] = (dict(p=[worst]), dt)
    assert ok


def c5_grid():
    g = np.logspace(-2, 2, 20)
    worst = 0.0
    for c in g:
        for y in g:
            a = asy.k_constant(c, y)
            b = asy.k_constant(c * math.sqrt(y), 1.0) / math.sqrt(y)
            if b != 0:
                worst = max(worst, abs(a - b) / abs(b))
            elif a != 0:
                worst = math.inf
    return worst


def test_c5_k_scaling(report):
    worst, dt = timed(c5_grid)
    ok = worst <= 1e-13 and dt < 1
    report("C5 K scaling identity, 20x20 log grid", ok, f"max rel diff {worst:.2e} <= 1e-13, {dt:.2f}s")
    RUNS["c5"] = (dict(p=[worst]), dt)
    assert ok


def c10_ratios(density_form=True):
    spec = asy.half_normal_diff_spec(density_form)
    return [asy.diff_tail_asymptotic(spec, u).value / asy.diff_tail_exact(spec.x_tail, halfnorm.pdf, u) for u in (5, 7)]


def test_c10_difference_tail(report):
    (r5, r7), dt = timed(c10_ratios)
    ok = abs(r5 - 1) <= 0.10 and abs(r7 - 1) < abs(r5 - 1) and dt < 1
    v5, v7 = c10_ratios(False)
    report("C10 half-normal difference tail", ok,
           f"ratio u=5 {r5:.5f} (|r-1| <= 0.10), u=7 {r7:.5f}, {dt:.2f}s; "
           f"with the exact low tail P(|Z|<1/u): {v5:.5f}, {v7:.5f}")
    RUNS["c10"] = (dict(p=[r5, r7]), dt)
    assert ok


# --------------------------------------------------------------------------
# Monte Carlo criteria


def test_c2_inf_tail_oracle(report):
    out, dt = cached("c2", run_c2)
    e = out["est"]
    exact = asy.bm_inf_tail_exact(1, 1, 2, 3)
    drift = abs(e.diagnostics["drift"])
    ok = abs(e.p_hat - exact) <= 3 * e.stderr + drift and dt < 120
    report("C2 IS estimate of P(inf_[1,2](B-t)>3) vs exact", ok,
           f"p={e.p_hat:.5e} +- {e.stderr:.2e}, exact {exact:.5e}, |diff| {abs(e.p_hat - exact):.2e} "
           f"<= 3se+drift {3 * e.stderr + drift:.2e}; grid-only {e.diagnostics['uncorrected_p']:.5e}, "
           f"ess {e.ess:.0f}, {dt:.0f}s")
    assert ok


def test_c3_pickands_constants(report):
    out, dt = cached("c3", run_c3)
    h1, h2 = out["H"][1.0][1], out["H"][2.0][1]
    ok = 0.9 <= h1.value <= 1.1 and 0.51 <= h2.value <= 0.62 and dt < 600
    report("C3 Pickands constants by lambda extrapolation", ok,
           f"H1 {h1.value:.4f} +- {h1.stderr:.4f} in [0.9, 1.1], H2 {h2.value:.4f} +- {h2.stderr:.4f} "
           f"in [0.51, 0.62] (1/sqrt(pi) = {1 / math.sqrt(math.pi):.4f}), {dt:.0f}s")
    assert ok


def test_c6_piterbarg_case(report):
    out, dt = cached("c6", run_c6)
    e, P, a = out["est"], out["P"], out["asym"].value
    tol = max(3 * e.stderr, 0.2 * a)
    ok = abs(e.p_hat - a) <= tol and dt < 900
    report("C6 BM, T_u = u^-2, u=4: IS vs P(1/2) Psi(5)", ok,
           f"p={e.p_hat:.4e} +- {e.stderr:.1e}, P={P.value:.4f} +- {P.stderr:.4f}, asymptotic {a:.4e}, "
           f"ratio {e.p_hat / a:.3f}, |diff| {abs(e.p_hat - a):.2e} <= {tol:.2e}, "
           f"halving drift {e.diagnostics['drift']:.1e}, {dt:.0f}s")
    assert ok


def test_c7_lower_bound(report):
    out, dt = cached("c7", run_c7)
    parts, ok = [], dt < 120
    for u, e, b in out["rows"]:
        ok &= b.value <= e.p_hat + 3 * e.stderr
        parts.append(f"u={u:g}: bound {b.value:.4e} <= p {e.p_hat:.4e} + 3*{e.stderr:.1e}")
    report("C7 lower bound, BM, S=T=1", ok, "; ".join(parts) + f", {dt:.0f}s")
    assert ok


def test_c8_log_rate(report):
    out, dt = cached("c8", run_c8)
    us = np.array(out["us"])
    lp = np.log([e.p_hat for e in out["ests"]])
    slope = np.polyfit(us**2, lp, 1)[0]
    target = asy.log_rate(BM, 1.0)
    shown = asy.log_asymptotic(BM, 1.0, 3.0).inputs_echo["displayed_rate"]
    ok = abs(slope - target) <= 0.15 * abs(target) and dt < 600
    report("C8 log-rate slope over u in {3,4,5}", ok,
           f"slope {slope:.4f} vs {target} (15%: [{1.15 * target:.3f}, {0.85 * target:.3f}]); "
           f"displayed rate -1/sigma^2(S) = {shown}; p = {[f'{e.p_hat:.3e}' for e in out['ests']]}, {dt:.0f}s")
    assert ok


def test_c9_stable(report):
    out, dt = cached("c9", run_c9)
    us, ests = out["us"], out["ests"]
    r = [e.p_hat / asy.levy_stable_asymptotic(1.5, 0.0, 1.0, u).value for u, e in zip(us, ests)]
    ok = 0.7 <= r[1] <= 1.3 and abs(r[2] - 1) < abs(r[0] - 1) and dt < 600
    report("C9 stable Parisian ruin vs tail", ok,
           f"ratios u=15,30,60: {np.round(r, 4).tolist()}, u=30 in [0.7, 1.3], "
           f"|r60-1| {abs(r[2] - 1):.3f} < |r15-1| {abs(r[0] - 1):.3f}, {dt:.0f}s")
    assert ok


def test_c11_ruin_time_law(report):
    out, dt = cached("c11", run_c11)
    law = out["law"]
    limit = asy.ruin_time_limit_cdf(C11_X, 1.0, 1.0)
    z = (law.cdf - limit) / law.stderr
    ok = bool(np.all(np.abs(z) <= 4)) and dt < 900
    report("C11 scaled ruin time u^2(S - tau), u=4", ok,
           f"cdf {np.round(law.cdf, 4).tolist()} vs limit {np.round(limit, 4).tolist()}, "
           f"z {np.round(z, 1).tolist()} (|z| <= 4), events {law.n_events}, {dt:.0f}s")
    assert ok


def test_c12_worker_invariance(report):
    worst, parts = 0.0, []
    for key, fn in MC_RUNS.items():
        first = cached(key, fn)[0]["p"]
        again = fn(ALT_WORKERS)["p"]
        rel = max(abs(a - b) / abs(a) if a else abs(b) for a, b in zip(first, again))
        worst = max(worst, rel)
        parts.append(f"{key} {rel:.1e}")
    for key, fn in dict(c1=c1_values, c4=c4_sweep, c5=c5_grid, c10=c10_ratios).items():
        a, b = fn(), fn()
        same = np.array_equal(np.ravel(a), np.ravel(b))
        worst = max(worst, 0.0 if same else math.inf)
    ok = worst <= 1e-12
    report(f"C12 rerun at workers={ALT_WORKERS}", ok, f"max rel diff {worst:.1e} <= 1e-12 ({', '.join(parts)})")
    assert ok
