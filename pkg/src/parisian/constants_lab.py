"""Monte Carlo estimation of Pickands and Piterbarg type constants.

With ``Y(x) = sqrt(2) B_alpha(x) - |x|^alpha`` the raw constants are

    F(lam, T) = E exp( sup_{t in [0, lam]} inf_{s in [0, T]} (Y(t - s) - q(t - s)) )

where ``q = 0`` for the Pickands form and ``q(x) = b1 |x|^alpha`` for
``x > 0``, ``b2 |x|^alpha`` for ``x <= 0`` (the latter only when
``alpha == beta``) for the Piterbarg form.

The plain average of ``exp(sup ...)`` is dominated by rare paths and is badly
biased at moderate sample sizes once ``lam`` is large.  The default
``"tilted"`` estimator instead uses the shift identity of ``Y``: under the
measure ``exp(Y(r)) dP`` the increments ``Y(.) - Y(r)`` are distributed as
``Y(. - r)``.  Averaging over a random shift ``r`` with weights ``mu`` gives

    F = M E[ exp(Phi(Y(. - r))) / sum_{r'} mu_{r'} exp(Y(r' - r)) ],

whose integrand is bounded by ``M / delta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from . import streams
from .gaussian_paths import fgn_increments, steps_in
from .parisian_estimator import window_min_backward

MODES = ("pickands", "piterbarg", "inf_const", "sup_const")


@dataclass(frozen=True)
class FunctionalSpec:
    mode: str
    alpha: float
    T: float = 0.0
    lam: float = 1.0
    grid_step: float = 0.01
    beta: Optional[float] = None
    b1: float = 0.0
    b2: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if not 0 < self.alpha <= 2:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        if self.T < 0 or not self.grid_step > 0:
            raise ValueError("need T >= 0 and grid_step > 0")
        if self.mode in ("pickands", "piterbarg") and not self.lam >= self.grid_step:
            raise ValueError(f"lam must be at least grid_step, got lam={self.lam}")
        if self.mode == "piterbarg":
            if not self.b1 > 0:
                raise ValueError(f"piterbarg mode needs b1 > 0, got {self.b1}")
            if self.beta is None or self.beta < self.alpha:
                raise ValueError("piterbarg mode needs beta >= alpha")
        steps_in(self.T, self.grid_step)
        if self.mode in ("pickands", "piterbarg"):
            steps_in(self.lam, self.grid_step)

    @property
    def n_t(self) -> int:
        span = self.lam if self.mode in ("pickands", "piterbarg") else self.T
        return steps_in(span, self.grid_step) + 1

    @property
    def n_s(self) -> int:
        return steps_in(self.T, self.grid_step) + 1

    def penalty(self, x: np.ndarray) -> np.ndarray:
        """Extra drift ``q(x)`` on top of ``|x|^alpha``."""
        x = np.asarray(x, dtype=float)
        if self.mode != "piterbarg":
            return np.zeros_like(x)
        ax = np.abs(x) ** self.alpha
        neg = self.b2 * ax if self.alpha == self.beta else np.zeros_like(x)
        return np.where(x > 0, self.b1 * ax, neg)


@dataclass
class ConstantEstimate:
    value: float
    stderr: float
    n: int
    lam: float
    T: float
    grid_step: float
    extrapolated: bool = False
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.value > 0 or not math.isfinite(self.value):
            raise ValueError(f"constant estimates must be positive and finite, got {self.value}")
        if not math.isfinite(self.stderr):
            raise ValueError("stderr must be finite")


# --------------------------------------------------------------------------
# functionals


def _sup_inf(H: np.ndarray, n_t: int, n_s: int) -> np.ndarray:
    """``max_i min_{j < n_s} H[:, i - j + n_s - 1]`` for ``i < n_t``.

    ``H[:, k]`` holds the integrand at lag ``x = (k - n_s + 1) delta``.
    """
    G = window_min_backward(H, n_s)
    return G[:, n_s - 1 : n_s - 1 + n_t].max(axis=1)


def evaluate_functional(path, spec: FunctionalSpec) -> float:
    """Functional of one path of ``B_alpha`` given on the grid.

    For the Pickands and Piterbarg modes the path covers ``[-T, lam]`` at
    spacing ``grid_step``; for ``inf_const`` and ``sup_const`` it covers
    ``[0, T]`` and the result is ``inf`` or ``sup`` of ``Y`` there.
    """
    d = spec.grid_step
    path = np.asarray(path, dtype=float)
    if spec.mode in ("inf_const", "sup_const"):
        if len(path) != spec.n_s:
            raise ValueError(f"path must have {spec.n_s} points on [0, T]")
        x = d * np.arange(spec.n_s)
        y = math.sqrt(2) * path - x**spec.alpha
        return float(y.min() if spec.mode == "inf_const" else y.max())
    n_t, n_s = spec.n_t, spec.n_s
    if len(path) != n_t + n_s - 1:
        raise ValueError(f"path must have {n_t + n_s - 1} points on [-T, lam]")
    x = d * (np.arange(n_t + n_s - 1) - (n_s - 1))
    H = math.sqrt(2) * path - np.abs(x) ** spec.alpha - spec.penalty(x)
    return float(_sup_inf(H[None, :], n_t, n_s)[0])


# --------------------------------------------------------------------------
# sampling


def two_sided_fbm(alpha: float, n_neg: int, n_pos: int, step: float, rng, n: int) -> np.ndarray:
    """``n`` paths of ``B_alpha`` on ``step * [-n_neg, ..., n_pos]`` with ``B(0) = 0``."""
    m = n_neg + n_pos
    if alpha == 2.0:
        x = step * (np.arange(m + 1) - n_neg)
        return rng.standard_normal((n, 1)) * x[None, :]
    out = np.zeros((n, m + 1))
    if m:
        np.cumsum(fgn_increments(m, step, alpha, rng, n), axis=1, out=out[:, 1:])
    out -= out[:, n_neg : n_neg + 1]
    return out


def _shift_weights(spec: FunctionalSpec):
    d = spec.grid_step
    r = d * np.arange(spec.n_t)
    log_mu = math.log(d) - (spec.b1 * r**spec.alpha if spec.mode == "piterbarg" else 0.0)
    log_mu = np.broadcast_to(log_mu, r.shape).astype(float)
    return log_mu, float(np.exp(logsumexp(log_mu)))


def _direct_block(spec: FunctionalSpec):
    d, a = spec.grid_step, spec.alpha
    n_t, n_s = spec.n_t, spec.n_s

    if spec.mode in ("inf_const", "sup_const"):
        x = d * np.arange(n_s)

        def block(rng, b, nb):
            Y = math.sqrt(2) * two_sided_fbm(a, 0, n_s - 1, d, rng, nb) - x**a
            return Y.min(axis=1) if spec.mode == "inf_const" else Y.max(axis=1)

        return block

    x = d * (np.arange(n_t + n_s - 1) - (n_s - 1))
    drift = np.abs(x) ** a + spec.penalty(x)

    def block(rng, b, nb):
        H = math.sqrt(2) * two_sided_fbm(a, n_s - 1, n_t - 1, d, rng, nb) - drift
        return _sup_inf(H, n_t, n_s)

    return block


def _tilted_block(spec: FunctionalSpec, span: Optional[float], seed: int):
    """Per-path log of ``exp(Phi(Y(. - r))) / sum mu exp(Y(r' - r))``."""
    d, a = spec.grid_step, spec.alpha
    n_t, n_s = spec.n_t, spec.n_s
    lam_steps = n_t - 1
    neg = lam_steps + n_s - 1 if span is None else steps_in(span, d)
    if neg < lam_steps + n_s - 1:
        raise ValueError(f"span must be at least lam + T = {spec.lam + spec.T}")
    log_mu, M = _shift_weights(spec)
    p = np.exp(log_mu - log_mu.max())
    p /= p.sum()
    lags = np.arange(-(n_s - 1), n_t)
    q = spec.penalty(d * lags)

    def block(rng, b, nb):
        B = two_sided_fbm(a, neg, lam_steps, d, rng, nb)
        x = d * (np.arange(B.shape[1]) - neg)
        Y = math.sqrt(2) * B - np.abs(x) ** a
        r = streams.block_rng(seed, b, streams.SHIFTS).choice(n_t, size=nb, p=p)
        # Y(x - r) at lags x = k delta lives at column neg + k - r
        idx = (neg - r)[:, None] + lags[None, :]
        H = np.take_along_axis(Y, idx, axis=1)
        phi = _sup_inf(H - q[None, :], n_t, n_s)
        den = logsumexp(H[:, n_s - 1 :] + log_mu[None, :], axis=1)
        return phi - den

    return block, M


def _exp_mean(logs: np.ndarray):
    """Mean of ``exp(logs)`` and its standard error, overflow safe."""
    n = len(logs)
    top = logs.max()
    e = np.exp(logs - top)
    mean = e.mean()
    se = e.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
    return math.exp(top) * mean, math.exp(top) * se


def estimate_constant(
    spec: FunctionalSpec,
    n: int,
    seed: int,
    *,
    method: str = "tilted",
    span: Optional[float] = None,
    workers: Optional[int] = None,
    batch_size: int = streams.DEFAULT_BLOCK,
) -> ConstantEstimate:
    """Raw constant ``F(lam, T)`` (or ``H^inf(T)``, ``H^sup(T)``).

    ``method="tilted"`` (Pickands and Piterbarg modes, and ``sup_const``,
    which equals the Pickands form with ``lam = T`` and no window) uses the
    shift identity; ``method="direct"`` averages ``exp(functional)``.
    ``span`` fixes the negative extent of the sampled paths so that runs with
    different ``T`` share common random numbers.
    """
    if method not in ("tilted", "direct"):
        raise ValueError(f"unknown method {method!r}")
    work = spec
    if spec.mode == "sup_const" and method == "tilted":
        work = FunctionalSpec("pickands", spec.alpha, 0.0, max(spec.T, spec.grid_step), spec.grid_step)
        if spec.T == 0:
            return ConstantEstimate(1.0, 0.0, n, 0.0, 0.0, spec.grid_step, diagnostics=dict(method=method))
    if spec.mode == "inf_const" and method == "tilted":
        method = "direct"  # bounded by 1, no tilting needed
    if method == "direct":
        parts = streams.map_blocks(_direct_block(work), n, seed, block_size=batch_size, workers=workers)
        val, se = _exp_mean(np.concatenate(parts))
        scale = 1.0
    else:
        block, scale = _tilted_block(work, span, seed)
        parts = streams.map_blocks(block, n, seed, block_size=batch_size, workers=workers)
        val, se = _exp_mean(np.concatenate(parts))
    lam = spec.lam if spec.mode in ("pickands", "piterbarg") else spec.T
    return ConstantEstimate(
        float(scale * val), float(scale * se), n, float(lam), spec.T, spec.grid_step,
        diagnostics=dict(method=method, mode=spec.mode, alpha=spec.alpha),
    )


def estimate_ladder(
    spec: FunctionalSpec, lams: Sequence[float], n: int, seed: int, **kw
) -> List[ConstantEstimate]:
    """Raw estimates over a ladder of ``lam`` values, sharing the seed."""
    from dataclasses import replace

    return [estimate_constant(replace(spec, lam=float(lam)), n, seed, **kw) for lam in lams]


def extrapolate_pickands(estimates, mode: str = "pickands") -> ConstantEstimate:
    """Limit constant from a ``lam`` ladder of raw estimates.

    ``estimates`` holds :class:`ConstantEstimate` objects or ``(lam, raw,
    stderr)`` triples.  In Pickands mode the slope of a weighted least-squares
    line ``raw = a + H lam`` is returned; the intercept absorbs boundary
    effects.  In Piterbarg mode the raw value converges itself and the
    largest-``lam`` estimate is returned.
    """
    rows = [
        (e.lam, e.value, e.stderr) if isinstance(e, ConstantEstimate) else tuple(map(float, e))
        for e in estimates
    ]
    rows.sort()
    lam = np.array([r[0] for r in rows])
    raw = np.array([r[1] for r in rows])
    se = np.array([r[2] for r in rows])
    diag = dict(lams=lam.tolist(), raw=raw.tolist(), stderr=se.tolist(), ratios=(raw / lam).tolist())
    first = estimates[0] if isinstance(estimates[0], ConstantEstimate) else None
    meta = dict(
        n=first.n if first else 0,
        T=first.T if first else 0.0,
        grid_step=first.grid_step if first else 0.0,
    )
    if mode == "piterbarg":
        return ConstantEstimate(raw[-1], se[-1], lam=lam[-1], extrapolated=True, diagnostics=diag, **meta)
    if len(np.unique(lam)) < 3:
        raise ValueError("slope extrapolation needs at least three distinct lam values")
    if np.all(se > 0):
        wts = 1.0 / se**2
    else:
        wts = np.ones_like(se)
    X = np.column_stack([np.ones_like(lam), lam])
    XtW = X.T * wts
    cov = np.linalg.inv(XtW @ X)
    intercept, slope = cov @ (XtW @ raw)
    slope_se = math.sqrt(cov[1, 1]) if np.all(se > 0) else 0.0
    diag.update(intercept=float(intercept), slope_stderr=slope_se)
    if not slope > 0:
        raise ValueError(f"fitted slope {slope:.4g} is not positive; constants are positive")
    return ConstantEstimate(float(slope), slope_se, lam=float(lam[-1]), extrapolated=True, diagnostics=diag, **meta)
