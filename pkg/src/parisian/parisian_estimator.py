"""Monte Carlo estimation of finite-horizon Parisian ruin probabilities.

Parisian ruin of ``R_u(t) = u + c t - X(t)`` before ``S`` means that for some
``t <= S`` the surplus stays negative on all of ``[t, t + T_u]``.  On a path
this is the event ``F > u`` for the functional

    F = max_{t <= S} min_{s in [t, t + T_u]} (X(s) - c s),

which does not depend on ``u``, so one batch of paths serves a whole ladder
of capital levels.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy import stats
from scipy.ndimage import maximum_filter1d, minimum_filter1d

from . import streams
from .gaussian_paths import (
    GaussianModel,
    TimeGrid,
    block_sampler,
    make_grid,
    shift_profile,
    shift_weights,
    steps_in,
)

logger = logging.getLogger(__name__)

Z95 = 1.959963984540054
ESS_WARN_FRACTION = 0.01


@dataclass(frozen=True)
class Constant:
    T: float

    def __post_init__(self):
        if self.T < 0:
            raise ValueError(f"window length must be non-negative, got {self.T}")

    def at(self, u: float) -> float:
        return self.T


@dataclass(frozen=True)
class Scaled:
    """``T_u = T u^{-kappa}``."""

    T: float
    kappa: float

    def __post_init__(self):
        if self.T < 0 or not self.kappa > 0:
            raise ValueError("scaled window needs T >= 0 and kappa > 0")

    def at(self, u: float) -> float:
        if self.T == 0:
            return 0.0
        if not u > 0:
            raise ValueError("a u-scaled window needs u > 0")
        return self.T * u ** (-self.kappa)


Window = Union[Constant, Scaled]


@dataclass(frozen=True)
class RuinProblem:
    """Parisian ruin of ``u + c t - X(t)`` with windows starting in ``[t_from, S]``.

    ``t_from = 0`` is the usual problem; ``t_from = S`` leaves the single window
    ``[S, S + T_u]``, i.e. the event ``inf_{[S, S + T_u]} (X(s) - c s) > u``.
    """

    model: GaussianModel
    c: float
    S: float
    u: float
    window: Window = Constant(0.0)
    t_from: float = 0.0

    def __post_init__(self):
        if not self.c > 0 or not self.S > 0:
            raise ValueError(f"need c > 0 and S > 0, got c={self.c}, S={self.S}")
        if self.u < 0:
            raise ValueError(f"initial capital must be non-negative, got {self.u}")
        if not 0 <= self.t_from <= self.S:
            raise ValueError("t_from must lie in [0, S]")

    @property
    def T_u(self) -> float:
        return self.window.at(self.u)


@dataclass(frozen=True)
class MCConfig:
    n_paths: int
    seed: int
    grid_step: float
    importance_sampling: bool = False
    batch_size: int = streams.DEFAULT_BLOCK
    halving: bool = True
    bridge: bool = False
    workers: Optional[int] = None
    tilt: Optional[float] = None

    def __post_init__(self):
        if self.n_paths < 100:
            raise ValueError(f"n_paths must be at least 100, got {self.n_paths}")
        if not self.grid_step > 0:
            raise ValueError(f"grid_step must be positive, got {self.grid_step}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def check(self, S: float, T: float) -> None:
        if T > 0 and self.grid_step > min(S, T) / 4:
            raise ValueError(
                f"grid_step {self.grid_step} too coarse: need at most min(S, T_u)/4 = {min(S, T) / 4}"
            )


@dataclass
class MCEstimate:
    p_hat: float
    stderr: float
    n: int
    ci95: tuple
    ess: float
    grid_step: float
    diagnostics: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# path functionals


def window_min(Y: np.ndarray, w: int) -> np.ndarray:
    """``G[:, k] = min(Y[:, k : k + w])``, truncated at the right edge."""
    if w <= 1:
        return Y
    return minimum_filter1d(Y, w, axis=1, origin=-(w // 2), mode="nearest")


def window_min_backward(Y: np.ndarray, w: int) -> np.ndarray:
    """``G[:, k] = min(Y[:, k - w + 1 : k + 1])``, truncated at the left edge."""
    if w <= 1:
        return Y
    return minimum_filter1d(Y, w, axis=1, origin=(w - 1) // 2, mode="nearest")


def functional_batch(Y: np.ndarray, i_from: int, i_S: int, w: int) -> np.ndarray:
    """Row-wise ``max_{i_from <= k <= i_S} min(Y[k : k + w])``; ``Y`` is ``X - c t``."""
    if Y.shape[1] < i_S + w:
        raise ValueError("paths do not cover the last window")
    if i_from == i_S:
        return Y[:, i_S : i_S + w].min(axis=1)
    return window_min(Y[:, i_from : i_S + w], w)[:, : i_S - i_from + 1].max(axis=1)


def _layout(grid: TimeGrid, S: float, T: float, t_from: float = 0.0):
    if T < 0:
        raise ValueError("window length must be non-negative")
    if grid.start > t_from:
        raise ValueError(f"grid starts at {grid.start}, after the first window start {t_from}")
    i_S = grid.index_of(S)
    w = steps_in(T, grid.step) + 1
    if i_S + w > grid.size:
        raise ValueError(f"grid ends at {grid.end}, but windows reach S + T = {S + T}")
    return grid.index_of(t_from), i_S, w


def parisian_functional(path, grid: TimeGrid, c: float, S: float, T: float) -> float:
    """``max_{t <= S} min_{s in [t, t + T]} (X(s) - c s)`` over grid points."""
    _, i_S, w = _layout(grid, S, T)
    Y = (np.asarray(path, dtype=float) - c * grid.points)[None, :]
    return float(functional_batch(Y, 0, i_S, w)[0])


def ruined_inf_sup(path, grid: TimeGrid, c: float, S: float, T: float, u: float) -> bool:
    """Ruin read off the surplus directly: ``min_t max_{s in [t, t+T]} R_u(s) < 0``."""
    _, i_S, w = _layout(grid, S, T)
    R = u + c * grid.points - np.asarray(path, dtype=float)
    R = R[None, : i_S + w]
    top = R if w <= 1 else maximum_filter1d(R, w, axis=1, origin=-(w // 2), mode="nearest")
    return bool(top[0, : i_S + 1].min() < 0)


def ruined_sup_inf(path, grid: TimeGrid, c: float, S: float, T: float, u: float) -> bool:
    return parisian_functional(path, grid, c, S, T) > u


# --------------------------------------------------------------------------
# Brownian bridge correction


def _bridge_ruin(Y: np.ndarray, u: float, h: float, i_from: int, i_S: int, w: int) -> np.ndarray:
    """Conditional ruin probability of a Brownian driver given its grid values.

    Between grid points ``X - c t`` is a Brownian bridge whatever the drift, so
    crossing probabilities of a level are closed form.  Available for the
    classical case (``w == 1``) and for a single window (``i_from == i_S``).
    """
    if w == 1:
        seg = u - Y[:, i_from : i_S + 1]
        out = np.ones(len(Y))
        rows = np.flatnonzero(np.all(seg >= 0, axis=1))
    elif i_from == i_S:
        seg = Y[:, i_S : i_S + w] - u
        out = np.zeros(len(Y))
        rows = np.flatnonzero(np.all(seg > 0, axis=1))
    else:
        raise ValueError("the bridge correction covers T = 0 or a single window (t_from = S) only")
    seg = seg[rows]
    stay = np.prod(-np.expm1(-2.0 * seg[:, :-1] * seg[:, 1:] / h), axis=1)
    out[rows] = 1.0 - stay if w == 1 else stay
    return out


# --------------------------------------------------------------------------
# interval arithmetic


def wilson_interval(k: int, n: int):
    """Wilson 95% interval; rule of three ``(0, 3/n)`` on an empty count."""
    if k == 0:
        return 0.0, min(1.0, 3.0 / n)
    ci = stats.binomtest(int(k), int(n)).proportion_ci(0.95, method="wilson")
    return float(ci.low), float(ci.high)


def _summarise(v: np.ndarray, binary: bool, step: float, diagnostics=None) -> MCEstimate:
    n = len(v)
    p = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    if binary:
        lo, hi = wilson_interval(int(np.count_nonzero(v)), n)
        ess = float(n)
    else:
        if p == 0:
            lo, hi = 0.0, 0.0
        else:
            lo, hi = max(0.0, p - Z95 * se), min(1.0, p + Z95 * se)
        s2 = float(np.dot(v, v))
        ess = float(v.sum() ** 2 / s2) if s2 > 0 else 0.0
    lo, hi = min(lo, p), max(hi, p)
    return MCEstimate(p, se, n, (lo, hi), ess, step, dict(diagnostics or {}))


# --------------------------------------------------------------------------
# simulation core


@dataclass
class _Plan:
    grid: TimeGrid
    draw: Callable
    c: float
    i_from: int
    i_S: int
    w: int
    shift: Optional[np.ndarray] = None
    anchor: int = 0
    a: float = 0.0
    var_anchor: float = 0.0


def _gaussian_plan(problem: RuinProblem, T: float, step: float, a: float) -> _Plan:
    # a Markov driver needs no path before the first window
    start = problem.t_from if problem.model.is_brownian and problem.t_from < problem.S + T else 0.0
    grid = make_grid(start, problem.S + T, step)
    i_from, i_S, w = _layout(grid, problem.S, T, problem.t_from)
    plan = _Plan(grid, block_sampler(problem.model, grid), problem.c, i_from, i_S, w)
    if a != 0:
        plan.anchor, plan.shift = shift_profile(problem.model, grid, problem.S, a)
        plan.a = a
        plan.var_anchor = float(problem.model.variance(problem.S))
    return plan


def run_blocks(
    plan: _Plan,
    us: Sequence[float],
    n: int,
    seed: int,
    *,
    stream: int = streams.MAIN,
    block_size: int = streams.DEFAULT_BLOCK,
    workers: Optional[int] = None,
    bridge: bool = False,
):
    """Simulate ``n`` paths and return ``(F, weights, cond)``.

    ``cond`` holds, per capital level, the bridge-corrected conditional ruin
    probabilities (or ``None`` without the correction).  ``weights`` is
    ``None`` for unshifted sampling.
    """
    t = plan.grid.points
    us = list(us)

    def block(rng, b, nb):
        X = plan.draw(rng, nb)
        if plan.shift is not None:
            X += plan.shift[None, :]
            wt = shift_weights(X[:, plan.anchor], plan.a, plan.var_anchor)
        else:
            wt = None
        Y = X - plan.c * t[None, :]
        F = functional_batch(Y, plan.i_from, plan.i_S, plan.w)
        cond = None
        if bridge:
            cond = np.stack([_bridge_ruin(Y, u, plan.grid.step, plan.i_from, plan.i_S, plan.w) for u in us])
        return F, wt, cond

    parts = streams.map_blocks(block, n, seed, stream=stream, block_size=block_size, workers=workers)
    F = np.concatenate([p[0] for p in parts])
    wt = None if plan.shift is None else np.concatenate([p[1] for p in parts])
    cond = np.concatenate([p[2] for p in parts], axis=1) if bridge else None
    return F, wt, cond


def _integrands(F, wt, cond, us):
    out = []
    for j, u in enumerate(us):
        v = (F > u).astype(float) if cond is None else cond[j]
        if wt is not None:
            v = v * wt
        out.append(v)
    return out


def _estimates(plan_fn, us, config: MCConfig, binary_ok: bool, stream=streams.MAIN, step=None):
    step = config.grid_step if step is None else step
    plan = plan_fn(step)
    F, wt, cond = run_blocks(
        plan, us, config.n_paths, config.seed, stream=stream,
        block_size=config.batch_size, workers=config.workers, bridge=config.bridge,
    )
    binary = binary_ok and wt is None and cond is None
    res = []
    for j, v in enumerate(_integrands(F, wt, cond, us)):
        d = {}
        if cond is not None:
            raw = (F > us[j]).astype(float)
            if wt is not None:
                raw = raw * wt
            d["uncorrected_p"] = float(raw.mean())
            d["uncorrected_stderr"] = float(raw.std(ddof=1) / math.sqrt(len(raw)))
        if wt is not None:
            d["tilt"] = plan.a
            d["hits"] = int(np.count_nonzero(F > us[j]))
        res.append(_summarise(v, binary, step, d))
    return res


def _attach_halving(main: List[MCEstimate], half: List[MCEstimate]) -> None:
    for e, h in zip(main, half):
        joint = math.hypot(e.stderr, h.stderr)
        drift = h.p_hat - e.p_hat
        e.diagnostics.update(
            halving_p=h.p_hat,
            halving_stderr=h.stderr,
            halving_step=h.grid_step,
            drift=drift,
            joint_stderr=joint,
            drift_flag=bool(abs(drift) > 2 * joint),
        )
        if abs(drift) > 2 * joint:
            logger.warning(
                "grid bias: halving the step moved the estimate by %.3g (%.1f joint stderr)",
                drift, abs(drift) / joint if joint > 0 else math.inf,
            )


def _check_ess(e: MCEstimate) -> None:
    if e.p_hat > 0 and e.ess < ESS_WARN_FRACTION * e.n:
        warnings.warn(f"effective sample size {e.ess:.1f} below 1% of n={e.n}: tilt mismatch")


def _prepare(problem: RuinProblem, config: MCConfig) -> float:
    T = problem.T_u
    config.check(problem.S, T)
    if T > problem.S:
        warnings.warn(f"window T_u={T} exceeds the horizon S={problem.S}")
    if config.bridge and not problem.model.is_brownian:
        raise ValueError("the bridge correction needs a Brownian driver")
    return T


def _run(problem: RuinProblem, config: MCConfig, a: float) -> MCEstimate:
    T = _prepare(problem, config)
    plan_fn = lambda step: _gaussian_plan(problem, T, step, a)
    est = _estimates(plan_fn, [problem.u], config, binary_ok=True)
    if config.halving:
        half = _estimates(plan_fn, [problem.u], config, True, stream=streams.HALVING, step=config.grid_step / 2)
        _attach_halving(est, half)
    est[0].diagnostics.setdefault("T_u", T)
    return est[0]


def estimate_parisian_mc(problem: RuinProblem, config: MCConfig) -> MCEstimate:
    """Plain Monte Carlo estimate with a Wilson interval.

    With ``config.bridge`` (Brownian drivers only) each path contributes its
    exact conditional ruin probability given the grid values, which removes
    the discretisation bias for ``T = 0`` and single-window problems.
    """
    return _run(problem, config, 0.0)


def tilt_for(problem: RuinProblem) -> float:
    """Mean-shift size ``(u + c S) / sigma^2(S)`` pointing paths at ruin near ``S``."""
    return (problem.u + problem.c * problem.S) / float(problem.model.variance(problem.S))


def estimate_parisian_is(problem: RuinProblem, config: MCConfig) -> MCEstimate:
    """Importance-sampled estimate, paths shifted by ``a r(t, S)``.

    The tilt defaults to ``tilt_for(problem)``; ``config.tilt`` overrides it
    (``0`` reproduces plain Monte Carlo on the same stream).
    """
    a = tilt_for(problem) if config.tilt is None else float(config.tilt)
    est = _run(problem, config, a)
    _check_ess(est)
    return est


def estimate_parisian(problem: RuinProblem, config: MCConfig) -> MCEstimate:
    fn = estimate_parisian_is if config.importance_sampling else estimate_parisian_mc
    return fn(problem, config)


def estimate_parisian_ladder(
    model: GaussianModel, c: float, S: float, T: float, us: Sequence[float], config: MCConfig
) -> List[MCEstimate]:
    """Plain Monte Carlo at several capital levels from one batch of paths."""
    problem = RuinProblem(model, c, S, min(us), Constant(T))
    _prepare(problem, config)
    plan_fn = lambda step: _gaussian_plan(problem, T, step, 0.0)
    est = _estimates(plan_fn, list(us), config, binary_ok=True)
    if config.halving:
        half = _estimates(plan_fn, list(us), config, True, stream=streams.HALVING, step=config.grid_step / 2)
        _attach_halving(est, half)
    return est


# --------------------------------------------------------------------------
# ruin time


@dataclass
class RuinTimeLaw:
    """Conditional CDF of ``u^2 (S - tau_u)`` given ``tau_u < S``."""

    x: np.ndarray
    cdf: np.ndarray
    stderr: np.ndarray
    ci95: np.ndarray
    n_events: int
    p_ruin: float


def estimate_ruin_time_law(problem: RuinProblem, config: MCConfig, x_grid) -> RuinTimeLaw:
    """Empirical law of the scaled Parisian ruin time.

    ``tau_u`` is the first grid time at which the surplus has been negative
    throughout the preceding window of length ``T_u``.  The conditional CDF is
    a ratio of (weighted) means; its standard error comes from the delta
    method, which reduces to the binomial one without weights.
    """
    T = problem.T_u
    config.check(problem.S, T)
    a = (tilt_for(problem) if config.tilt is None else float(config.tilt)) if config.importance_sampling else 0.0
    grid = make_grid(0.0, problem.S, config.grid_step)
    _, i_S, w = _layout(make_grid(0.0, problem.S + T, config.grid_step), problem.S, T)
    t = grid.points
    draw = block_sampler(problem.model, grid)
    if a != 0:
        anchor, shift = shift_profile(problem.model, grid, problem.S, a)
        var_anchor = float(problem.model.variance(problem.S))
    u, c = problem.u, problem.c

    def block(rng, b, nb):
        X = draw(rng, nb)
        wt = np.ones(nb)
        if a != 0:
            X += shift[None, :]
            wt = shift_weights(X[:, anchor], a, var_anchor)
        hit = window_min_backward(X - c * t[None, :], w) > u
        hit[:, : w - 1] = False
        # completion strictly before S
        hit = hit[:, :i_S]
        done = hit.any(axis=1)
        tau = np.where(done, t[np.argmax(hit, axis=1)], np.inf)
        return tau, wt

    parts = streams.map_blocks(
        block, config.n_paths, config.seed, block_size=config.batch_size, workers=config.workers
    )
    tau = np.concatenate([p[0] for p in parts])
    wt = np.concatenate([p[1] for p in parts])
    ev = np.isfinite(tau)
    k = int(ev.sum())
    if k == 0:
        raise ValueError("no ruin events observed; increase n_paths or enable importance sampling")
    den = wt * ev
    x = np.asarray(x_grid, dtype=float)
    scaled = np.where(ev, u * u * (problem.S - np.where(ev, tau, 0.0)), np.inf)
    cdf, se = np.empty(len(x)), np.empty(len(x))
    for j, xx in enumerate(x):
        num = den * (scaled <= xx)
        r = num.sum() / den.sum()
        cdf[j] = r
        se[j] = math.sqrt(np.sum((num - r * den) ** 2)) / den.sum()
    ci = np.stack([np.clip(cdf - Z95 * se, 0, 1), np.clip(cdf + Z95 * se, 0, 1)], axis=1)
    return RuinTimeLaw(x, cdf, se, ci, k, float(den.mean()))
