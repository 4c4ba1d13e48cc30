import math

import numpy as np
import pytest
from scipy import stats

from parisian import asymptotics as asy
from parisian import streams
from parisian.gaussian_paths import make_grid
from parisian.parisian_estimator import MCConfig
from parisian.stable_sim import (
    StableSpec,
    estimate_parisian_stable,
    estimate_parisian_stable_ladder,
    sample_stable_paths,
    stable_variates,
)


def test_spec_validation():
    for bad in [dict(alpha=1.0), dict(alpha=2.0), dict(alpha=1.5, beta=1.5)]:
        with pytest.raises(ValueError):
            StableSpec(**bad)
    assert StableSpec(1.5, 0.5).tag == "stable(alpha=1.5, beta=0.5)"


@pytest.mark.parametrize("alpha,beta", [(1.5, 0.0), (1.3, 0.7), (1.8, -0.5)])
def test_variates_match_scipy_law(alpha, beta):
    # scipy's numerical cdf is slow, so a modest sample is enough here
    x = stable_variates(alpha, beta, np.random.default_rng(1), 2000)
    res = stats.kstest(x, stats.levy_stable(alpha, beta).cdf)
    assert res.pvalue > 0.01


def test_near_gaussian_limit():
    step = 0.01
    b = sample_stable_paths(StableSpec(1.999), make_grid(0, 1, step), 1000, seed=2)
    inc = np.diff(b.values, axis=1).ravel()
    assert len(inc) == 100_000
    d = stats.kstest(inc, stats.norm(scale=math.sqrt(2 * step)).cdf).statistic
    assert d < 0.01


def test_symmetric_median():
    n = 100_000
    x = sample_stable_paths(StableSpec(1.5), make_grid(0, 1, 0.1), n, seed=3).values[:, -1]
    q1, med, q3 = np.percentile(x, [25, 50, 75])
    assert abs(med) <= 4 * (q3 - q1) / math.sqrt(n)


def test_tail_at_twenty():
    n = 400_000
    x = sample_stable_paths(StableSpec(1.5), make_grid(0, 1, 1.0), n, seed=4).values[:, -1]
    p = np.mean(x > 20)
    want = asy.levy_stable_asymptotic(1.5, 0.0, 1.0, 20.0).value
    assert want == pytest.approx(0.199471 * 20**-1.5, rel=1e-5)
    assert abs(p - want) <= 3 * math.sqrt(want * (1 - want) / n)


def test_increments_scale_with_step():
    # X(t) has scale t^{1/alpha}: the law of X(1) does not depend on the grid
    a = sample_stable_paths(StableSpec(1.4, 0.3), make_grid(0, 1, 1.0), 50_000, seed=5).values[:, -1]
    b = sample_stable_paths(StableSpec(1.4, 0.3), make_grid(0, 1, 0.01), 50_000, seed=6).values[:, -1]
    assert stats.ks_2samp(a, b).pvalue > 0.001


def test_deterministic_and_worker_free():
    g = make_grid(0, 1, 0.05)
    a = sample_stable_paths(StableSpec(1.5), g, 3000, seed=7, workers=1, block_size=512)
    b = sample_stable_paths(StableSpec(1.5), g, 3000, seed=7, workers=3, block_size=512)
    assert np.array_equal(a.values, b.values)
    assert np.all(a.values[:, 0] == 0)


def test_grid_must_start_at_zero():
    with pytest.raises(ValueError):
        sample_stable_paths(StableSpec(1.5), make_grid(1, 2, 0.5), 10, seed=1)


def test_plain_mc_only():
    spec = StableSpec(1.5)
    with pytest.raises(ValueError):
        estimate_parisian_stable(spec, 1, 1, 10, 0.1, MCConfig(200, 1, 0.01, importance_sampling=True))
    with pytest.raises(ValueError):
        estimate_parisian_stable(spec, 1, 1, 10, 0.1, MCConfig(200, 1, 0.01, bridge=True))
    with pytest.raises(ValueError, match="too coarse"):
        estimate_parisian_stable(spec, 1, 1, 10, 0.1, MCConfig(200, 1, 0.05))


def test_bounded_by_running_supremum():
    spec, S, T, u, n, h = StableSpec(1.5), 1.0, 0.1, 5.0, 50_000, 0.01
    e = estimate_parisian_stable(spec, 1.0, S, u, T, MCConfig(n, 8, h, halving=False))
    X = sample_stable_paths(spec, make_grid(0, S, h), n, seed=9).values
    v = (X.max(axis=1) > u).astype(float)
    assert e.p_hat <= v.mean() + 3 * math.hypot(e.stderr, v.std() / math.sqrt(n))
    assert "p_terminal" in e.diagnostics


def test_polynomial_decay_and_window_insensitivity():
    spec, h = StableSpec(1.5), 0.005
    cfg = MCConfig(100_000, 10, h, halving=False)
    us = [15.0, 30.0, 60.0]
    a = estimate_parisian_stable_ladder(spec, 1.0, 1.0, 0.05, us, cfg)
    slope = np.polyfit(np.log(us), np.log([e.p_hat for e in a]), 1)[0]
    assert abs(slope + 1.5) <= 0.2
    b = estimate_parisian_stable_ladder(spec, 1.0, 1.0, 0.2, us, MCConfig(100_000, 11, h, halving=False))
    assert abs(a[-1].p_hat - b[-1].p_hat) <= 3 * math.hypot(a[-1].stderr, b[-1].stderr)


def test_halving_diagnostic_present():
    e = estimate_parisian_stable(StableSpec(1.5), 1.0, 1.0, 3.0, 0.1, MCConfig(2000, 12, 0.01))
    assert e.diagnostics["halving_step"] == 0.005
    assert e.diagnostics["T_u"] == 0.1


def test_block_results_do_not_pin_paths(monkeypatch):
    # per-block outputs must own their memory, or every path matrix stays alive
    seen = []
    real = streams.map_blocks

    def spy(*args, **kw):
        parts = real(*args, **kw)
        seen.extend(parts)
        return parts

    monkeypatch.setattr(streams, "map_blocks", spy)
    estimate_parisian_stable(StableSpec(1.5), 1.0, 1.0, 3.0, 0.1, MCConfig(300, 13, 0.01, halving=False))
    assert seen and all(a.base is None for part in seen for a in part)
