"""Alpha-stable risk processes.

``X(t)`` has independent stationary increments with ``X(t) ~ S_alpha(t^{1/alpha},
beta, 0)`` in the Samorodnitsky-Taqqu parameterisation (scipy's ``S1``), so
that ``P(X(t) > u) ~ C_alpha (1 + beta) / 2 t u^{-alpha}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from . import streams
from .gaussian_paths import PathBatch, TimeGrid, make_grid
from .parisian_estimator import (
    MCConfig,
    MCEstimate,
    _attach_halving,
    _layout,
    _summarise,
    functional_batch,
)


@dataclass(frozen=True)
class StableSpec:
    alpha: float
    beta: float = 0.0

    def __post_init__(self):
        if not 1 < self.alpha < 2:
            raise ValueError(f"alpha must lie strictly inside (1, 2), got {self.alpha}")
        if not -1 <= self.beta <= 1:
            raise ValueError(f"beta must lie in [-1, 1], got {self.beta}")

    @property
    def tag(self) -> str:
        return f"stable(alpha={self.alpha:g}, beta={self.beta:g})"


def stable_variates(alpha: float, beta: float, rng: np.random.Generator, size) -> np.ndarray:
    """Standard ``S_alpha(1, beta, 0)`` variates by Chambers-Mallows-Stuck (``alpha != 1``)."""
    V = rng.uniform(-0.5 * math.pi, 0.5 * math.pi, size)
    W = rng.standard_exponential(size)
    tan = math.tan(0.5 * math.pi * alpha)
    B = math.atan(beta * tan) / alpha
    scale = (1 + beta * beta * tan * tan) ** (0.5 / alpha)
    aVB = alpha * (V + B)
    return (
        scale
        * np.sin(aVB)
        / np.cos(V) ** (1 / alpha)
        * (np.cos(V - aVB) / W) ** ((1 - alpha) / alpha)
    )


def _stable_block(spec: StableSpec, grid: TimeGrid):
    m = grid.size - 1
    h = grid.step ** (1 / spec.alpha)

    def draw(rng, n):
        out = np.zeros((n, m + 1))
        np.cumsum(h * stable_variates(spec.alpha, spec.beta, rng, (n, m)), axis=1, out=out[:, 1:])
        return out

    return draw


def sample_stable_paths(
    spec: StableSpec, grid: TimeGrid, n: int, seed: int, *, workers=None, block_size=streams.DEFAULT_BLOCK
) -> PathBatch:
    if grid.start != 0:
        raise ValueError("stable paths start at 0; the grid must start at 0")
    draw = _stable_block(spec, grid)
    parts = streams.map_blocks(lambda rng, b, k: draw(rng, k), n, seed, block_size=block_size, workers=workers)
    return PathBatch(grid, np.concatenate(parts), seed=seed, model_tag=spec.tag)


def _ladder(spec, c, S, T, us, config: MCConfig, step: float, stream: int) -> List[MCEstimate]:
    grid = make_grid(0.0, S + T, step)
    _, i_S, w = _layout(grid, S, T)
    draw = _stable_block(spec, grid)
    t = grid.points

    def block(rng, b, nb):
        X = draw(rng, nb)
        return functional_batch(X - c * t[None, :], 0, i_S, w), X[:, i_S].copy()

    parts = streams.map_blocks(
        block, config.n_paths, config.seed, stream=stream, block_size=config.batch_size, workers=config.workers
    )
    F = np.concatenate([p[0] for p in parts])
    XS = np.concatenate([p[1] for p in parts])
    out = []
    for u in us:
        e = _summarise((F > u).astype(float), True, step)
        e.diagnostics["p_terminal"] = float(np.mean(XS > u))
        out.append(e)
    return out


def estimate_parisian_stable_ladder(
    spec: StableSpec, c: float, S: float, T: float, us: Sequence[float], config: MCConfig
) -> List[MCEstimate]:
    """Plain Monte Carlo of Parisian ruin at several capital levels, one batch of paths."""
    if not c > 0 or not S > 0 or T < 0:
        raise ValueError("need c > 0, S > 0 and T >= 0")
    config.check(S, T)
    if config.importance_sampling or config.bridge:
        raise ValueError("stable drivers support plain Monte Carlo only")
    us = [float(u) for u in us]
    est = _ladder(spec, c, S, T, us, config, config.grid_step, streams.MAIN)
    if config.halving:
        half = _ladder(spec, c, S, T, us, config, config.grid_step / 2, streams.HALVING)
        _attach_halving(est, half)
    for e in est:
        e.diagnostics["T_u"] = T
    return est


def estimate_parisian_stable(spec: StableSpec, c: float, S: float, u: float, T: float, config: MCConfig) -> MCEstimate:
    return estimate_parisian_stable_ladder(spec, c, S, T, [u], config)[0]
