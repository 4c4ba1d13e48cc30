"""Command-line front end.

Each subcommand reads a JSON configuration (``--config``), applies flag
overrides, runs, and writes ``run.json`` (the resolved configuration plus all
results) and ``table.csv`` into the output directory.  Exit codes: 0 success,
2 unknown regime, 3 malformed configuration, 4 unwritable output.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.stats import halfnorm

from . import __version__
from . import asymptotics as asy
from .constants_lab import FunctionalSpec, estimate_constant, estimate_ladder, extrapolate_pickands
from .gaussian_paths import GaussianModel, LocalExpansion, steps_in
from .parisian_estimator import (
    Constant,
    MCConfig,
    RuinProblem,
    Scaled,
    estimate_parisian,
)
from .stable_sim import StableSpec, estimate_parisian_stable_ladder

logger = logging.getLogger("parisian")

FORMAT_VERSION = 1
OUT_ENV = "PARISIAN_OUT"
DEFAULT_OUT = "parisian_out"
TABLE_HEADER = ["u", "p_mc", "stderr", "p_asympt", "ratio", "p_exact_if_available"]
CONSTANTS_HEADER = ["lam", "value", "stderr"]

EXIT_REGIME = 2
EXIT_CONFIG = 3
EXIT_OUTPUT = 4


class RegimeError(Exception):
    pass


class ConfigError(Exception):
    pass


class OutputError(Exception):
    pass


@dataclasses.dataclass
class RunRecord:
    format_version: int
    command: str
    config: dict
    results: list
    duration: float
    version: str
    timestamp: str

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**json.loads(text))

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls.from_json(Path(path).read_text())


def to_plain(obj):
    """JSON-ready copy of results: dataclasses, numpy scalars and arrays."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# --------------------------------------------------------------------------
# configuration helpers


def _get(cfg: dict, key: str, kind=float, default=Ellipsis):
    if key not in cfg or cfg[key] is None:
        if default is Ellipsis:
            raise ConfigError(f"missing required key {key!r}")
        return default
    try:
        return kind(cfg[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key!r}: {cfg[key]!r}") from exc


def _model(cfg: dict) -> GaussianModel:
    m = cfg.get("model", {"kind": "bm"})
    if isinstance(m, str):
        m = {"kind": m}
    kind = m.get("kind", "bm")
    if kind == "bm":
        return GaussianModel.brownian()
    if kind == "fbm":
        return GaussianModel.fbm(_get(m, "alpha"))
    if kind == "power":
        return GaussianModel.power(_get(m, "exponent"), _get(m, "scale", float, 1.0))
    raise ConfigError(f"unknown Gaussian model kind {kind!r} (bm, fbm, power)")


def _window(cfg: dict):
    w = cfg.get("window", {"type": "constant", "T": cfg.get("T", 0.0)})
    kind = w.get("type", "constant")
    if kind == "constant":
        return Constant(_get(w, "T", float, 0.0))
    if kind == "scaled":
        return Scaled(_get(w, "T"), _get(w, "kappa"))
    raise ConfigError(f"unknown window type {kind!r} (constant, scaled)")


def _mc_config(cfg: dict) -> MCConfig:
    return MCConfig(
        n_paths=_get(cfg, "n_paths", int, 10_000),
        seed=_get(cfg, "seed", int, 0),
        grid_step=_get(cfg, "grid_step", float, 1 / 512),
        importance_sampling=bool(cfg.get("importance_sampling", False)),
        halving=bool(cfg.get("halving", True)),
        bridge=bool(cfg.get("bridge", False)),
        workers=cfg.get("workers"),
        tilt=cfg.get("tilt"),
    )


def _aligned_window(T: float, step: float) -> float:
    """Round ``T`` to a multiple of ``step`` (at least one step), logging changes."""
    if T == 0:
        return 0.0
    try:
        steps_in(T, step)
        return T
    except ValueError:
        k = max(1, round(T / step))
        logger.warning("window %.6g is not a multiple of grid step %.6g; using %.6g", T, step, k * step)
        return k * step


def _us(cfg: dict) -> List[float]:
    if "us" in cfg:
        us = cfg["us"]
        if not isinstance(us, list) or not us:
            raise ConfigError("'us' must be a non-empty list")
        return [float(u) for u in us]
    return [_get(cfg, "u")]


# --------------------------------------------------------------------------
# commands


def _simulate_one(cfg: dict, u: float):
    mc = _mc_config(cfg)
    model = _model(cfg)
    window = _window(cfg)
    T = window.at(u)
    Ta = _aligned_window(T, mc.grid_step)
    if Ta != T:
        window = Constant(Ta)
    problem = RuinProblem(model, _get(cfg, "c", float, 1.0), _get(cfg, "S", float, 1.0), u, window,
                          _get(cfg, "t_from", float, 0.0))
    return estimate_parisian(problem, mc)


def _stable_ladder(cfg: dict, us: List[float]):
    m = cfg.get("model", {})
    spec = StableSpec(_get(m, "alpha"), _get(m, "beta", float, 0.0))
    mc = _mc_config(cfg)
    T = _aligned_window(_window(cfg).at(max(us)), mc.grid_step)
    return estimate_parisian_stable_ladder(
        spec, _get(cfg, "c", float, 1.0), _get(cfg, "S", float, 1.0), T, us, mc
    )


def _is_stable(cfg: dict) -> bool:
    m = cfg.get("model", {})
    return isinstance(m, dict) and m.get("kind") == "stable"


def cmd_simulate(cfg: dict):
    us = _us(cfg)
    if _is_stable(cfg):
        ests = _stable_ladder(cfg, us)
    else:
        ests = [_simulate_one(cfg, u) for u in us]
    rows = [_row(u, e, None, None) for u, e in zip(us, ests)]
    return [dict(u=u, estimate=to_plain(e)) for u, e in zip(us, ests)], rows


def _local(cfg: dict) -> LocalExpansion:
    loc = cfg.get("local")
    if not isinstance(loc, dict):
        raise ConfigError("regime needs a 'local' expansion record")
    try:
        return LocalExpansion(**{k: float(v) for k, v in loc.items()})
    except TypeError as exc:
        raise ConfigError(f"bad local expansion: {exc}") from exc


def asymptotic_value(regime: str, cfg: dict, u: float):
    """Evaluate ``regime`` at capital ``u``; returns ``(AsymptoticValue, exact or None)``."""
    c = _get(cfg, "c", float, 1.0)
    S = _get(cfg, "S", float, 1.0)
    T = _get(cfg, "T", float, 0.0)
    if regime == "thm21":
        T1, T2 = _get(cfg, "T1"), _get(cfg, "T2")
        return asy.bm_inf_tail_asymptotic(c, T1, T2, u), asy.bm_inf_tail_exact(c, T1, T2, u)
    if regime == "thm31_lower":
        model = _model(cfg)
        return asy.lower_bound_thm31(model.variance, model.variance_derivative, c, S, T, u), None
    if regime == "thm32_log":
        return asy.log_asymptotic(_model(cfg), S, u), None
    if regime.startswith("thm33_"):
        local = _local(cfg)
        v = asy.gauss_exact_asymptotic(local, c, S, u, T, cfg.get("constant"))
        if v.regime != regime:
            raise ConfigError(f"parameters select {v.regime}, not {regime}")
        return v, None
    if regime.startswith("cor34_"):
        v = asy.fbm_corollary_asymptotic(_get(cfg, "alpha"), c, S, u, T, cfg.get("constant"))
        if v.regime != regime:
            raise ConfigError(f"alpha={cfg.get('alpha')} selects {v.regime}, not {regime}")
        return v, None
    if regime == "prop11_stable":
        return asy.levy_stable_asymptotic(_get(cfg, "alpha"), _get(cfg, "beta", float, 0.0), S, u), None
    if regime == "lemma41":
        spec = asy.half_normal_diff_spec(bool(cfg.get("density_form", True)))
        exact = asy.diff_tail_exact(spec.x_tail, halfnorm.pdf, u)
        return asy.diff_tail_asymptotic(spec, u), exact
    raise RegimeError(f"unknown regime {regime!r}; expected one of {', '.join(asy.REGIMES)}")


def _regime(cfg: dict) -> str:
    regime = cfg.get("regime")
    if regime not in asy.REGIMES:
        raise RegimeError(f"unknown regime {regime!r}; expected one of {', '.join(asy.REGIMES)}")
    return regime


def cmd_asympt(cfg: dict):
    regime = _regime(cfg)
    results, rows = [], []
    for u in _us(cfg):
        v, exact = asymptotic_value(regime, cfg, u)
        results.append(dict(u=u, asymptotic=to_plain(v), exact=exact))
        rows.append(_row(u, None, v.value, exact))
    return results, rows


def cmd_constants(cfg: dict):
    mode = cfg.get("mode", "pickands")
    lams = [float(x) for x in cfg.get("lams", [5.0, 10.0, 20.0])]
    spec = FunctionalSpec(
        mode,
        _get(cfg, "alpha"),
        _get(cfg, "T", float, 0.0),
        lams[0],
        _get(cfg, "grid_step", float, 0.01),
        beta=cfg.get("beta"),
        b1=_get(cfg, "b1", float, 0.0),
        b2=_get(cfg, "b2", float, 0.0),
    )
    kw = dict(method=cfg.get("method", "tilted"), workers=cfg.get("workers"))
    n, seed = _get(cfg, "n_paths", int, 10_000), _get(cfg, "seed", int, 0)
    if mode in ("inf_const", "sup_const"):
        e = estimate_constant(spec, n, seed, **kw)
        return [dict(estimate=to_plain(e))], [[e.lam, e.value, e.stderr]]
    raw = estimate_ladder(spec, lams, n, seed, **kw)
    results = [dict(lam=e.lam, estimate=to_plain(e)) for e in raw]
    rows = [[e.lam, e.value, e.stderr] for e in raw]
    if len(lams) >= 3 or mode == "piterbarg":
        results.append(dict(extrapolated=to_plain(extrapolate_pickands(raw, mode))))
    return results, rows


def _mc_for(regime: str, cfg: dict, us: List[float]):
    """Monte Carlo counterpart of an asymptotic regime, or ``None``."""
    mc = cfg.get("mc")
    if not mc:
        return [None] * len(us)
    run = {**cfg, **mc}
    if regime == "thm21":
        T1, T2 = _get(cfg, "T1"), _get(cfg, "T2")
        run.update(model={"kind": "bm"}, S=T1, t_from=T1, window={"type": "constant", "T": T2 - T1})
    elif regime.startswith("cor34_"):
        a = _get(cfg, "alpha")
        run["model"] = {"kind": "fbm", "alpha": a}
        run.setdefault("window", {"type": "scaled", "T": _get(cfg, "T", float, 0.0), "kappa": 2 / a})
    elif regime == "prop11_stable":
        run["model"] = {"kind": "stable", "alpha": _get(cfg, "alpha"), "beta": _get(cfg, "beta", float, 0.0)}
        return _stable_ladder(run, us)
    elif regime == "lemma41" or regime.startswith("thm33_"):
        return [None] * len(us)
    return [_simulate_one(run, u) for u in us]


def cmd_compare(cfg: dict):
    regime = _regime(cfg)
    us = _us(cfg)
    mcs = _mc_for(regime, cfg, us)
    results, rows = [], []
    for u, e in zip(us, mcs):
        v, exact = asymptotic_value(regime, cfg, u)
        results.append(dict(u=u, asymptotic=to_plain(v), exact=exact, estimate=to_plain(e) if e else None))
        rows.append(_row(u, e, v.value, exact))
    return results, rows


def cmd_stable(cfg: dict):
    cfg = {**cfg, "model": {"kind": "stable", "alpha": _get(cfg, "alpha"), "beta": _get(cfg, "beta", float, 0.0)}}
    us = _us(cfg)
    ests = _stable_ladder(cfg, us)
    S = _get(cfg, "S", float, 1.0)
    results, rows = [], []
    for u, e in zip(us, ests):
        v = asy.levy_stable_asymptotic(cfg["model"]["alpha"], cfg["model"]["beta"], S, u)
        results.append(dict(u=u, asymptotic=to_plain(v), estimate=to_plain(e)))
        rows.append(_row(u, e, v.value, None))
    return results, rows


COMMANDS = dict(simulate=cmd_simulate, asympt=cmd_asympt, constants=cmd_constants, compare=cmd_compare, stable=cmd_stable)


# --------------------------------------------------------------------------
# output


def _row(u, est, asym, exact):
    p = est.p_hat if est is not None else math.nan
    se = est.stderr if est is not None else math.nan
    a = asym if asym is not None else math.nan
    ref = exact if exact is not None else p
    ratio = ref / a if a and not math.isnan(a) and not math.isnan(ref) else math.nan
    ex = exact if exact is not None else math.nan
    return [u, p, se, a, ratio, ex]


def format_table(rows, header=TABLE_HEADER) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["%.17g" % x for x in r])
    return buf.getvalue()


def _table_name(command: str):
    if command == "constants":
        return "constants.csv", CONSTANTS_HEADER
    return "table.csv", TABLE_HEADER


def _write(out: Path, record: RunRecord, rows) -> None:
    name, header = _table_name(record.command)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "run.json").write_text(record.to_json())
        (out / name).write_text(format_table(rows, header))
    except OSError as exc:
        raise OutputError(f"cannot write to {out}: {exc}") from exc


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parisian", description="Parisian ruin simulation and asymptotics")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="JSON configuration file")
        s.add_argument("--seed", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--out", type=Path, help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")
        s.add_argument("--grid-step", type=float)
        s.add_argument("--n-paths", type=int)
    return p


def resolve_config(args) -> dict:
    cfg: Dict[str, Any] = {}
    if args.config is not None:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("configuration must be a JSON object")
    for flag, key in (("seed", "seed"), ("workers", "workers"), ("grid_step", "grid_step"), ("n_paths", "n_paths")):
        v = getattr(args, flag)
        if v is not None:
            cfg[key] = v
    return cfg


def run(command: str, cfg: dict) -> tuple:
    t0 = time.perf_counter()
    try:
        results, rows = COMMANDS[command](cfg)
    except (RegimeError, ConfigError, OutputError):
        raise
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise ConfigError(str(exc)) from exc
    record = RunRecord(
        FORMAT_VERSION,
        command,
        to_plain(cfg),
        to_plain(results),
        time.perf_counter() - t0,
        __version__,
        datetime.now(timezone.utc).isoformat(),
    )
    return record, rows


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    out = args.out or Path(os.environ.get(OUT_ENV, DEFAULT_OUT))
    try:
        cfg = resolve_config(args)
        record, rows = run(args.command, cfg)
        _write(out, record, rows)
    except RegimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except ConfigError as exc:
        print(f"error: malformed configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OutputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OUTPUT
    print(format_table(rows, _table_name(args.command)[1]), end="")
    return 0


if __name__ == "__main__":
    sys.exit(main())
