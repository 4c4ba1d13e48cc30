"""Closed-form asymptotics, bounds and quadrature oracles for finite-horizon
Parisian ruin.

Everything here is deterministic.  Simulated constants (Pickands and
Piterbarg type) are passed in by the caller rather than defaulted, so Monte
Carlo error never leaks silently into these evaluators.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate, special

from .gaussian_paths import GaussianModel, LocalExpansion

REGIMES = (
    "thm21",
    "thm31_lower",
    "thm32_log",
    "thm33_i",
    "thm33_ii",
    "thm33_iii",
    "cor34_i",
    "cor34_ii",
    "cor34_iii",
    "prop11_stable",
    "lemma41",
)

EQUAL_TOL = 1e-12
QUAD_ABS_TOL = 1e-12
QUAD_REL_TOL = 1e-10

DISPLAYED_LOG_RATE_NOTE = (
    "implemented rate is -1/(2 sigma^2(S)), the rate forced by the lower bound "
    "C sigma^2(S)/u Psi((u+cS)/sigma(S)) and the upper bound 2 Psi(u/sigma(S)); "
    "the published display reads -1/sigma^2(S)"
)


@dataclass(frozen=True)
class AsymptoticValue:
    value: float
    regime: str
    inputs_echo: dict = field(default_factory=dict)
    validity_notes: str = ""

    def __post_init__(self):
        if self.regime not in REGIMES:
            raise ValueError(f"unknown regime {self.regime!r}; expected one of {REGIMES}")
        if not math.isfinite(self.value) or self.value < 0:
            raise ValueError(f"asymptotic value must be finite and non-negative, got {self.value}")


@dataclass(frozen=True)
class DiffTailSpec:
    """Ingredients of the tail of ``X - Y`` for independent ``X`` (Gumbel
    domain, auxiliary function ``w``) and non-negative ``Y``.

    ``y_low_tail(u)`` is ``P(Y < 1 / w(u))`` and ``x_tail(u)`` is ``P(X > u)``.
    """

    w: Callable[[float], float]
    alpha_y: float
    y_low_tail: Callable[[float], float]
    x_tail: Callable[[float], float]

    def __post_init__(self):
        if self.alpha_y < 0:
            raise ValueError("alpha_y must be non-negative")
        w10, w100, w1000 = (float(self.w(x)) for x in (10.0, 100.0, 1000.0))
        if not 0 < w10 < w100 < w1000:
            raise ValueError("w(u) must be positive and increase to infinity (checked at 10, 100, 1000)")


# --------------------------------------------------------------------------
# Gaussian tails


def gauss_tail(x):
    """Return ``(Psi(x), phi(x))``, the standard normal tail and density."""
    x = np.asarray(x, dtype=float)
    psi = special.ndtr(-x)
    phi = np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    if psi.ndim == 0:
        return float(psi), float(phi)
    return psi, phi


def log_gauss_tail(x):
    """``log Psi(x)``, accurate far into the tail."""
    return special.log_ndtr(-np.asarray(x, dtype=float))


def _psi(x: float) -> float:
    return float(special.ndtr(-x))


def _phi(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)


def _exp_times_tail(a: float, x: float) -> float:
    """``exp(a) * Psi(x)`` evaluated in log space."""
    return math.exp(a + float(log_gauss_tail(x)))


def k_constant(c: float, y: float) -> float:
    """``K_{c,y} = 2 phi(c sqrt(y)) / sqrt(y) - 2 c Psi(c sqrt(y))``."""
    if not c > 0 or not y > 0:
        raise ValueError(f"k_constant needs c > 0 and y > 0, got c={c}, y={y}")
    r = math.sqrt(y)
    x = c * r
    # phi(x) - x Psi(x) written through the Mills ratio to avoid cancellation
    # for large x; erfcx(x / sqrt 2) = Psi(x) / phi(x) * sqrt(pi / 2)
    mills = special.erfcx(x / math.sqrt(2)) * math.sqrt(math.pi / 2)
    return 2.0 * _phi(x) * (1.0 - x * mills) / r


def bm_sup_drift_law(c: float, delta: float, u: float):
    """Tail and density of ``sup_{t in [0, delta]} (B(t) + c t)`` at ``u > 0``.

    Valid for any real drift ``c``; the classical ruin probability of
    ``u + c t - B(t)`` is the tail with drift ``-c``.
    """
    if not u > 0:
        raise ValueError(f"sup-with-drift law is stated for u > 0, got {u}")
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    r = math.sqrt(delta)
    lo = (u - c * delta) / r
    hi = (u + c * delta) / r
    tail = _psi(lo) + _exp_times_tail(2 * c * u, hi)
    dens = 2 * _phi(lo) / r - 2 * c * _exp_times_tail(2 * c * u, hi)
    return tail, dens


def _sup_drift_cdf(c: float, delta: float, v: float) -> float:
    """``P(sup_{[0, delta]} (B + c t) < v)``; zero for ``v <= 0``."""
    if v <= 0:
        return 0.0
    r = math.sqrt(delta)
    return float(special.ndtr((v - c * delta) / r)) - _exp_times_tail(2 * c * v, (v + c * delta) / r)


def bm_classical_ruin(c: float, S: float, u: float) -> float:
    """``P(sup_{[0, S]} (B(t) - c t) > u)``; equals 1 at ``u = 0``."""
    if u == 0:
        return 1.0
    return bm_sup_drift_law(-c, S, u)[0]


def _quad(fn, a, b, what: str, epsabs=QUAD_ABS_TOL, epsrel=QUAD_REL_TOL, **kw) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err = integrate.quad(fn, a, b, epsabs=epsabs, epsrel=epsrel, limit=200, **kw)
    if not err <= max(epsabs, epsrel * abs(val)) * 10:
        raise ArithmeticError(f"quadrature for {what} did not converge: estimate {val:.6g}, error {err:.3g}")
    return val


def bm_inf_tail_exact(c: float, T1: float, T2: float, u: float) -> float:
    """Exact ``P(inf_{t in [T1, T2]} (B(t) - c t) > u)``.

    Conditioning on ``B(T1)`` leaves a drifted supremum over ``[0, T2 - T1]``
    whose law is closed form; the remaining Gaussian integral is done by
    adaptive quadrature after factoring out ``phi`` at the lower limit, so the
    result keeps full relative accuracy deep in the tail.
    """
    if not 0 < T1 <= T2:
        raise ValueError(f"need 0 < T1 <= T2, got T1={T1}, T2={T2}")
    if not u > 0 or not c > 0:
        raise ValueError("need c > 0 and u > 0")
    s1 = math.sqrt(T1)
    y0 = (u + c * T1) / s1
    if T2 == T1:
        return _psi(y0)
    dlt = T2 - T1

    def g(z):
        return math.exp(-y0 * z - 0.5 * z * z) * _sup_drift_cdf(c, dlt, s1 * z)

    # the integrand decays like exp(-y0 z - z^2 / 2); truncation at z = 40
    # costs less than exp(-800) relative
    brk = [b for b in (1.0 / y0, 5.0 / y0) if 0 < b < 40.0] if y0 > 0 else None
    scaled = _quad(g, 0.0, 40.0, "bm_inf_tail_exact", points=brk or None)
    return _phi(y0) * scaled


def bm_inf_tail_asymptotic(c: float, T1: float, T2: float, u: float) -> AsymptoticValue:
    """``K_{c, T2-T1} (T1 / u) Psi((u + c T1) / sqrt(T1))``."""
    if not T2 > T1:
        raise ValueError("bm_inf_tail_asymptotic needs T2 > T1; use bm_inf_tail_exact for T2 == T1")
    if not T1 > 0 or not u > 0:
        raise ValueError("need T1 > 0 and u > 0")
    val = k_constant(c, T2 - T1) * (T1 / u) * _psi((u + c * T1) / math.sqrt(T1))
    return AsymptoticValue(val, "thm21", dict(c=c, T1=T1, T2=T2, u=u), "u -> infinity, fixed interval")


# --------------------------------------------------------------------------
# Gaussian risk processes


def _derivative(V, S):
    h = 1e-6 * max(1.0, abs(S))
    return (float(V(S + h)) - float(V(S - h))) / (2 * h)


def lower_bound_thm31(V, dV, c: float, S: float, T: float, u: float) -> AsymptoticValue:
    """Asymptotic lower bound ``C_{c,Delta} V(S) / u Psi((u + c S) / sqrt(V(S)))``
    with ``Delta = V(S + T) - V(S)`` for a stationary-increment driver.

    ``dV`` may be ``None``, in which case ``V'(S)`` is a central difference.
    """
    if not c > 0 or not S > 0 or not T > 0 or not u > 0:
        raise ValueError("need c, S, T, u all positive")
    d = float(dV(S)) if dV is not None else _derivative(V, S)
    if not d > 0:
        raise ValueError(f"V'(S) must be positive, got {d}")
    var = float(V(S))
    delta = float(V(S + T)) - var
    cst = k_constant(c / d, delta)
    val = cst * var / u * _psi((u + c * S) / math.sqrt(var))
    return AsymptoticValue(
        val,
        "thm31_lower",
        dict(c=c, S=S, T=T, u=u, delta=delta, dV_S=d, C=cst),
        "liminf of the ratio is at least 1; V differentiable, strictly increasing, convex",
    )


def log_rate(model: GaussianModel, S: float) -> float:
    """Limit of ``log P / u^2``: ``-1 / (2 sigma^2(S))``."""
    var = float(model.variance(S))
    if not var > 0:
        raise ValueError(f"sigma(S) must be positive, got variance {var}")
    return -0.5 / var


def log_asymptotic(model: GaussianModel, S: float, u: float) -> AsymptoticValue:
    """``exp(rate u^2)``; only its logarithm is asymptotically meaningful."""
    rate = log_rate(model, S)
    return AsymptoticValue(
        math.exp(rate * u * u),
        "thm32_log",
        dict(S=S, u=u, rate=rate, displayed_rate=2 * rate, model=model.tag),
        "logarithmic equivalence only; " + DISPLAYED_LOG_RATE_NOTE,
    )


def constant_argument(local: LocalExpansion, T: float) -> float:
    """Argument ``D^{1/alpha} sigma_S^{-2/alpha} T`` at which the constant is needed."""
    return local.D ** (1 / local.alpha) * local.sigma_S ** (-2 / local.alpha) * T


def piterbarg_parameters(local: LocalExpansion):
    """Penalty slopes ``(b1, b2) = (A, A_pm) / (D sigma_S)`` and index ``beta2``."""
    s = local.D * local.sigma_S
    return local.A / s, local.A_pm / s, local.beta2


def _regime_of(alpha: float, beta1: float) -> str:
    if abs(alpha - beta1) <= EQUAL_TOL:
        return "ii"
    return "i" if alpha < beta1 else "iii"


def gauss_exact_asymptotic(
    local: LocalExpansion, c: float, S: float, u: float, T: float, constant: Optional[float] = None
) -> AsymptoticValue:
    """Exact asymptotics of the Parisian ruin probability for ``T_u u^{2/alpha} -> T``.

    ``constant`` is the Pickands-type value ``F_alpha(x)`` (case ``alpha <
    beta1``) or the Piterbarg-type value ``P(x)`` (case ``alpha == beta1``),
    evaluated at ``x = constant_argument(local, T)``.  It is ignored when
    ``alpha > beta1``.
    """
    if not c > 0 or not S > 0 or not u > 0 or T < 0:
        raise ValueError("need c, S, u positive and T >= 0")
    a, b1 = local.alpha, local.beta1
    sig = local.sigma_S
    tail = _psi((u + c * S) / sig)
    case = _regime_of(a, b1)
    echo = dict(c=c, S=S, u=u, T=T, constant=constant, alpha=a, beta1=b1, beta2=local.beta2)
    if case == "iii":
        notes = "requires T_u u^(2/alpha) -> 0 and T_u u^(2/beta2) -> 0"
        if T != 0:
            notes += f"; WARNING: supplied T={T} violates the vanishing-window hypothesis"
        return AsymptoticValue(tail, "thm33_iii", echo, notes)
    if constant is None or not constant > 0:
        raise ValueError(f"case ({case}) needs a positive simulated constant, got {constant}")
    notes = "requires T_u u^(2/alpha) -> T"
    if case == "ii":
        return AsymptoticValue(constant * tail, "thm33_ii", echo, notes)
    pref = (
        math.gamma(1 / b1 + 1)
        * local.D ** (1 / a)
        * local.A ** (-1 / b1)
        * sig ** (3 / b1 - 2 / a)
        * u ** (2 / a - 2 / b1)
    )
    return AsymptoticValue(constant * pref * tail, "thm33_i", echo, notes)


def fbm_corollary_asymptotic(
    alpha: float, c: float, S: float, u: float, T: float, constant: Optional[float] = None
) -> AsymptoticValue:
    """Parisian ruin asymptotics for an fBm driver with index ``alpha``.

    ``constant`` is ``F_alpha(2^{-1/alpha} S^{-2} T)`` for ``alpha < 1`` and
    ``P^{1,-1}_{1,1}(S^{-2} T / 2)`` for ``alpha == 1``; unused for ``alpha > 1``.
    """
    if not 0 < alpha <= 2:
        raise ValueError(f"alpha must lie in (0, 2], got {alpha}")
    if not c > 0 or not S > 0 or not u > 0 or T < 0:
        raise ValueError("need c, S, u positive and T >= 0")
    tail = _psi((u + c * S) / S ** (alpha / 2))
    echo = dict(alpha=alpha, c=c, S=S, u=u, T=T, constant=constant)
    if alpha > 1:
        notes = "requires T_u u^2 -> 0"
        if T != 0:
            notes += f"; WARNING: supplied T={T} violates the vanishing-window hypothesis"
        return AsymptoticValue(tail, "cor34_iii", echo, notes)
    if constant is None or not constant > 0:
        raise ValueError(f"alpha={alpha} needs a positive simulated constant, got {constant}")
    if alpha == 1:
        return AsymptoticValue(constant * tail, "cor34_ii", echo, "requires T_u u^2 -> T")
    pref = 2 ** (1 - 1 / alpha) / alpha * S ** (alpha - 1) * u ** (2 / alpha - 2)
    return AsymptoticValue(constant * pref * tail, "cor34_i", echo, "requires T_u u^(2/alpha) -> T")


def ruin_time_limit_cdf(x, alpha: float, S: float):
    """Limit law of ``u^2 (S - tau_u)`` given ruin before ``S``."""
    x = np.asarray(x, dtype=float)
    out = -np.expm1(-0.5 * alpha * S ** (-alpha - 1) * np.maximum(x, 0.0))
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# heavy tails


def stable_tail_constant(alpha: float) -> float:
    """``C_alpha = (1 - alpha) / (Gamma(2 - alpha) cos(pi alpha / 2))``."""
    return (1 - alpha) / (math.gamma(2 - alpha) * math.cos(math.pi * alpha / 2))


def levy_stable_asymptotic(alpha: float, beta: float, S: float, u: float) -> AsymptoticValue:
    """``C_alpha (1 + beta) / 2 S u^{-alpha}``, the tail of ``X(S)``."""
    if not 1 < alpha < 2:
        raise ValueError(f"alpha must lie strictly inside (1, 2), got {alpha}")
    if not -1 <= beta <= 1:
        raise ValueError(f"beta must lie in [-1, 1], got {beta}")
    if not S > 0 or not u > 0:
        raise ValueError("need S > 0 and u > 0")
    notes = "u -> infinity, any bounded window"
    if beta == -1:
        warnings.warn("beta = -1 is totally skewed to the left: the right tail is lighter than any power")
        notes += "; beta=-1 gives a zero leading term"
    val = stable_tail_constant(alpha) * 0.5 * (1 + beta) * S * u ** (-alpha)
    return AsymptoticValue(val, "prop11_stable", dict(alpha=alpha, beta=beta, S=S, u=u), notes)


def diff_tail_asymptotic(spec: DiffTailSpec, u: float) -> AsymptoticValue:
    """``Gamma(alpha_y + 1) P(Y < 1 / w(u)) P(X > u)``."""
    val = math.gamma(spec.alpha_y + 1) * float(spec.y_low_tail(u)) * float(spec.x_tail(u))
    return AsymptoticValue(val, "lemma41", dict(u=u, alpha_y=spec.alpha_y), "u -> infinity")


def diff_tail_exact(x_tail, y_density, u: float, y_max: float = np.inf) -> float:
    """``P(X - Y > u) = int P(X > u + y) f_Y(y) dy`` for independent ``X, Y``."""
    ref = float(x_tail(u))
    if ref == 0:
        return 0.0
    val = _quad(lambda y: float(x_tail(u + y)) * float(y_density(y)) / ref, 0.0, y_max, "diff_tail_exact")
    return val * ref


def half_normal_diff_spec(density_form: bool = True) -> DiffTailSpec:
    """``X ~ N(0, 1)`` minus an independent ``|Z|``, with ``w(u) = u``.

    With ``density_form`` the low tail ``P(Y < 1/u)`` is replaced by its
    first-order form ``f_Y(0) / u``.
    """
    if density_form:
        low = lambda u: math.sqrt(2 / math.pi) / u
    else:
        low = lambda u: 2 * float(special.ndtr(1 / u)) - 1
    return DiffTailSpec(w=lambda u: u, alpha_y=1.0, y_low_tail=low, x_tail=_psi)
