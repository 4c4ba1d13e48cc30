"""Seedable Gaussian trajectories on uniform time grids.

Three drivers are supported: standard Brownian motion, fractional Brownian
motion with covariance ``(|t|^a + |s|^a - |t-s|^a) / 2`` and processes with
stationary increments given by their variance function ``V``.  All samplers
draw block by block from :mod:`parisian.streams`, so a batch is a pure
function of its arguments and seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from . import streams

logger = logging.getLogger(__name__)

GRID_TOL = 1e-9
CIRCULANT_CLIP = 1e-8
PSD_CLIP = -1e-10
MAX_CHOLESKY_POINTS = 4096


@dataclass(frozen=True)
class TimeGrid:
    start: float
    end: float
    step: float
    points: np.ndarray = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.points)

    def index_of(self, t: float) -> int:
        """Index of grid time ``t``; raises if ``t`` is not a grid point."""
        k = (t - self.start) / self.step
        i = int(round(k))
        if abs(k - i) > 1e-6 or not 0 <= i < self.size:
            raise ValueError(f"time {t} is not on the grid [{self.start}, {self.end}] step {self.step}")
        return i


def make_grid(start: float, end: float, step: float) -> TimeGrid:
    if not step > 0:
        raise ValueError(f"grid step must be positive, got {step}")
    if not 0 <= start < end:
        raise ValueError(f"need 0 <= start < end, got start={start}, end={end}")
    k = (end - start) / step
    m = int(round(k))
    if abs(k - m) > GRID_TOL:
        raise ValueError(
            f"span {end - start} is not an integral multiple of step {step} "
            f"(ratio {k!r}, off by {abs(k - m):.3g})"
        )
    pts = start + step * np.arange(m + 1, dtype=float)
    pts[-1] = end
    return TimeGrid(float(start), float(end), float(step), pts)


def steps_in(span: float, step: float) -> int:
    """Number of grid steps covering ``span``; raises if not integral."""
    k = span / step
    m = int(round(k))
    if abs(k - m) > GRID_TOL * max(1.0, k):
        raise ValueError(f"{span} is not an integer multiple of grid step {step}")
    return m


@dataclass(frozen=True)
class LocalExpansion:
    """Local structure of a non-stationary Gaussian process at the variance
    maximiser ``S``.

    ``sigma(t) = sigma_S - A (S - t)^beta1`` to the left of ``S``,
    ``sigma(t) = sigma_S - A_pm (t - S)^beta2`` to the right, and the
    standardised correlation behaves like ``1 - D |t - s|^alpha``.  ``Q`` and
    ``gamma`` (the Hoelder bound on increments) are stored for reference only.
    """

    sigma_S: float
    A: float
    A_pm: float
    beta1: float
    beta2: float
    D: float
    alpha: float
    Q: Optional[float] = None
    gamma: Optional[float] = None

    def __post_init__(self):
        if not self.sigma_S > 0 or not self.A > 0 or not self.D > 0:
            raise ValueError("sigma_S, A and D must be positive")
        if not 0 < self.beta1 <= self.beta2 <= 1:
            raise ValueError(f"need 0 < beta1 <= beta2 <= 1, got {self.beta1}, {self.beta2}")
        if not 0 < self.alpha <= 2:
            raise ValueError(f"alpha must lie in (0, 2], got {self.alpha}")
        for name in ("Q", "gamma"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive when given")


def fbm_local_expansion(alpha: float, S: float) -> LocalExpansion:
    """Local expansion of standard fBm with index ``alpha`` at horizon ``S``."""
    half = alpha / 2.0
    return LocalExpansion(
        sigma_S=S**half,
        A=half * S ** (half - 1.0),
        A_pm=-half * S ** (half - 1.0),
        beta1=1.0,
        beta2=1.0,
        D=1.0 / (2.0 * S**alpha),
        alpha=alpha,
        Q=1.0,
        gamma=alpha,
    )


BM = "BrownianMotion"
FBM = "FractionalBM"
STATIONARY = "StationaryIncrements"


@dataclass(frozen=True)
class GaussianModel:
    kind: str
    alpha: float = 1.0
    V: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    dV: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    local: Optional[LocalExpansion] = None
    tag: str = ""

    @classmethod
    def brownian(cls) -> "GaussianModel":
        return cls(BM, 1.0, tag="bm")

    @classmethod
    def fbm(cls, alpha: float) -> "GaussianModel":
        if not 0 < alpha <= 2:
            raise ValueError(f"fBm index alpha must lie in (0, 2], got {alpha}")
        return cls(FBM, float(alpha), tag=f"fbm(alpha={alpha:g})")

    @classmethod
    def stationary(cls, V, dV=None, tag: str = "stationary") -> "GaussianModel":
        """Stationary-increment model with ``Var(X(t) - X(s)) = V(|t - s|)``.

        ``V`` is expected to be differentiable, strictly increasing and convex
        with ``V(0) = 0``; only ``V(0) = 0`` is checked here.
        """
        if abs(float(V(0.0))) > 0:
            raise ValueError("stationary-increment models need V(0) = 0")
        return cls(STATIONARY, 1.0, V=V, dV=dV, tag=tag)

    @classmethod
    def power(cls, exponent: float, scale: float = 1.0) -> "GaussianModel":
        """``V(t) = scale * t**exponent``; convex for ``exponent >= 1``."""
        if not exponent >= 1 or not scale > 0:
            raise ValueError("power variance needs exponent >= 1 and scale > 0")
        p, k = float(exponent), float(scale)
        return cls.stationary(
            lambda t: k * np.abs(t) ** p,
            lambda t: k * p * np.abs(t) ** (p - 1.0),
            tag=f"power(exponent={p:g}, scale={k:g})",
        )

    @property
    def is_brownian(self) -> bool:
        return self.kind == BM or (self.kind == FBM and self.alpha == 1.0)

    def variance(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        if self.kind == BM:
            return t
        if self.kind == FBM:
            return t**self.alpha
        return np.asarray(self.V(t), dtype=float)

    def variance_derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == BM:
            return np.ones_like(t)
        if self.kind == FBM:
            return self.alpha * t ** (self.alpha - 1.0)
        if self.dV is None:
            h = 1e-6 * np.maximum(1.0, np.abs(t))
            return (self.variance(t + h) - self.variance(t - h)) / (2 * h)
        return np.asarray(self.dV(t), dtype=float)

    def covariance(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        if self.kind == BM:
            return np.minimum(s, t)
        return 0.5 * (self.variance(s) + self.variance(t) - self.variance(t - s))


@dataclass
class PathBatch:
    grid: TimeGrid
    values: np.ndarray
    weights: Optional[np.ndarray] = None
    seed: int = 0
    model_tag: str = ""

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.size:
            raise ValueError("values must be an (n_paths, n_points) matrix on the grid")
        if self.weights is not None:
            w = self.weights
            if w.shape != (self.values.shape[0],) or not np.all(np.isfinite(w)) or np.any(w <= 0):
                raise ValueError("weights must be one positive finite number per path")

    @property
    def n(self) -> int:
        return self.values.shape[0]


# --------------------------------------------------------------------------
# block samplers: (rng, n) -> (n, grid.size) array


def _bm_block(grid: TimeGrid, rng: np.random.Generator, n: int) -> np.ndarray:
    m = grid.size
    z = rng.standard_normal((n, m))
    z[:, 1:] *= math.sqrt(grid.step)
    z[:, 0] *= math.sqrt(grid.start)
    return np.cumsum(z, axis=1)


@lru_cache(maxsize=32)
def _circulant_sqrt_eigs(n_steps: int, step: float, alpha: float) -> Optional[np.ndarray]:
    """sqrt(eigenvalues / M) of the minimal circulant embedding of fGn, or
    ``None`` when the embedding is not non-negative definite."""
    k = np.arange(n_steps + 1, dtype=float)
    gamma = 0.5 * step**alpha * (np.abs(k + 1) ** alpha - 2 * k**alpha + np.abs(k - 1) ** alpha)
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    eig = np.fft.fft(row).real
    tol = CIRCULANT_CLIP * eig.max()
    if eig.min() < -tol:
        logger.info(
            "circulant embedding of fGn (n=%d, alpha=%g) has eigenvalue %.3g; using Cholesky",
            n_steps, alpha, eig.min(),
        )
        return None
    eig = np.where(eig < 0, 0.0, eig)
    eig.setflags(write=False)
    return np.sqrt(eig / len(row))


@lru_cache(maxsize=8)
def _fgn_cholesky(n_steps: int, step: float, alpha: float) -> np.ndarray:
    if n_steps > MAX_CHOLESKY_POINTS:
        raise ValueError(f"Cholesky fallback limited to {MAX_CHOLESKY_POINTS} points, need {n_steps}")
    k = np.arange(n_steps, dtype=float)
    gamma = 0.5 * step**alpha * (np.abs(k + 1) ** alpha - 2 * k**alpha + np.abs(k - 1) ** alpha)
    L = np.linalg.cholesky(linalg.toeplitz(gamma))
    L.setflags(write=False)
    return L


def fgn_increments(n_steps: int, step: float, alpha: float, rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` rows of fractional Gaussian noise: increments of ``B_alpha`` over
    consecutive steps of length ``step``."""
    if alpha == 1.0:
        return rng.standard_normal((n, n_steps)) * math.sqrt(step)
    root = _circulant_sqrt_eigs(n_steps, float(step), float(alpha))
    if root is None:
        L = _fgn_cholesky(n_steps, float(step), float(alpha))
        return rng.standard_normal((n, n_steps)) @ L.T
    # real and imaginary parts of one FFT give two independent rows
    half = (n + 1) // 2
    M = len(root)
    z = rng.standard_normal((half, M)) + 1j * rng.standard_normal((half, M))
    y = np.fft.fft(root * z, axis=1)[:, :n_steps]
    out = np.empty((2 * half, n_steps))
    out[0::2] = y.real
    out[1::2] = y.imag
    return out[:n]


def _fbm_block(grid: TimeGrid, alpha: float, rng: np.random.Generator, n: int) -> np.ndarray:
    if alpha == 2.0:
        return rng.standard_normal((n, 1)) * grid.points[None, :]
    out = np.zeros((n, grid.size))
    np.cumsum(fgn_increments(grid.size - 1, grid.step, alpha, rng, n), axis=1, out=out[:, 1:])
    return out


def _covariance_root(model: GaussianModel, grid: TimeGrid) -> np.ndarray:
    if grid.size > MAX_CHOLESKY_POINTS:
        raise ValueError(f"exact sampling limited to {MAX_CHOLESKY_POINTS} grid points, got {grid.size}")
    t = grid.points
    K = model.covariance(t[:, None], t[None, :])
    K = 0.5 * (K + K.T)
    live = np.diag(K) > 0
    root = np.zeros_like(K)
    try:
        root[np.ix_(live, live)] = np.linalg.cholesky(K[np.ix_(live, live)])
        return root
    except np.linalg.LinAlgError:
        pass
    w, U = np.linalg.eigh(K)
    if w.min() < PSD_CLIP:
        raise ValueError(
            f"covariance of model {model.tag!r} on the grid is indefinite: "
            f"most negative eigenvalue {w.min():.6g}"
        )
    if w.min() < 0:
        logger.warning("clipping covariance eigenvalues down to %.3g to zero (model %s)", w.min(), model.tag)
    return U * np.sqrt(np.clip(w, 0.0, None))


def block_sampler(model: GaussianModel, grid: TimeGrid) -> Callable[[np.random.Generator, int], np.ndarray]:
    """Return ``draw(rng, n)`` producing ``n`` paths of ``model`` on ``grid``."""
    if model.is_brownian:
        return lambda rng, n: _bm_block(grid, rng, n)
    if model.kind == FBM:
        if grid.start != 0:
            raise ValueError("fBm paths are anchored at 0; the grid must start at 0")
        return lambda rng, n: _fbm_block(grid, model.alpha, rng, n)
    root = _covariance_root(model, grid)
    return lambda rng, n: rng.standard_normal((n, grid.size)) @ root.T


def _collect(draw, n: int, seed: int, workers: Optional[int], block_size: int) -> np.ndarray:
    parts = streams.map_blocks(
        lambda rng, b, nb: draw(rng, nb), n, seed, block_size=block_size, workers=workers
    )
    return np.concatenate(parts, axis=0)


def sample_bm(grid: TimeGrid, n: int, seed: int, *, workers=None, block_size=streams.DEFAULT_BLOCK) -> PathBatch:
    vals = _collect(lambda rng, k: _bm_block(grid, rng, k), n, seed, workers, block_size)
    return PathBatch(grid, vals, seed=seed, model_tag="bm")


def sample_fbm(
    grid: TimeGrid, alpha: float, n: int, seed: int, *, workers=None, block_size=streams.DEFAULT_BLOCK
) -> PathBatch:
    model = GaussianModel.fbm(alpha)
    if grid.start != 0:
        raise ValueError("fBm paths are anchored at 0; the grid must start at 0")
    vals = _collect(lambda rng, k: _fbm_block(grid, alpha, rng, k), n, seed, workers, block_size)
    return PathBatch(grid, vals, seed=seed, model_tag=model.tag)


def sample_cholesky(
    model: GaussianModel, grid: TimeGrid, n: int, seed: int, *, workers=None, block_size=streams.DEFAULT_BLOCK
) -> PathBatch:
    """Exact finite-dimensional sample from ``model``'s covariance on ``grid``."""
    root = _covariance_root(model, grid)
    vals = _collect(lambda rng, k: rng.standard_normal((k, grid.size)) @ root.T, n, seed, workers, block_size)
    return PathBatch(grid, vals, seed=seed, model_tag=model.tag)


def shift_profile(model: GaussianModel, grid: TimeGrid, anchor: float, a: float):
    """Mean shift ``a * r(t, anchor)`` on the grid, plus the anchor index."""
    idx = grid.index_of(anchor)
    return idx, a * model.covariance(grid.points, grid.points[idx])


def shift_weights(x_anchor: np.ndarray, a: float, var_anchor: float) -> np.ndarray:
    """Likelihood ratio of the unshifted law against the shifted one."""
    return np.exp(-a * x_anchor + 0.5 * a * a * var_anchor)


def sample_shifted(
    model: GaussianModel,
    grid: TimeGrid,
    anchor: float,
    a: float,
    n: int,
    seed: int,
    *,
    workers=None,
    block_size=streams.DEFAULT_BLOCK,
) -> PathBatch:
    """Sample ``model`` with its mean moved to ``a * r(t, anchor)``.

    Every path carries the weight ``exp(-a X(anchor) + a^2 sigma^2(anchor) / 2)``
    so that weighted averages estimate expectations under the original law.
    """
    if not math.isfinite(a):
        raise ValueError(f"shift must be finite, got {a}")
    idx, mean = shift_profile(model, grid, anchor, a)
    draw = block_sampler(model, grid)
    vals = _collect(draw, n, seed, workers, block_size) + mean[None, :]
    w = shift_weights(vals[:, idx], a, float(model.variance(grid.points[idx])))
    return PathBatch(grid, vals, weights=w, seed=seed, model_tag=f"{model.tag} shifted a={a:g}")
