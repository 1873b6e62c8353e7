"""Monte Carlo settling-time estimation against a predefined bound.

Runs are grouped in fixed-size blocks; a block is the unit of work for the
process pool, so statistics are bit-identical for any number of workers.
"""

from __future__ import annotations

import csv
import json
import math
import os
import pickle
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import controllers as ctl
from .errors import ConfigError, EstimationError
from .sde import DIVERGED, SETTLED, UNSETTLED, SimConfig, run_seed, settle_batch
from .system import ItoSystem, example42_system, make_system

__all__ = [
    "RunConfig",
    "SettlingStats",
    "MCResult",
    "build_controller",
    "controller_bound",
    "estimate_settling",
    "sweep_bound",
    "write_samples_csv",
    "summary_dict",
    "BLOCK",
]

BLOCK = 50
Z95 = 1.959963984540054

# parameter that carries the settling-time bound, per controller kind
BOUND_PARAM = {"predefined": "alpha", "example41": "k4", "backstep": "k4"}


def build_controller(spec, system="example21", system_params=None):
    """Construct a controller from a plain-data spec such as ``{"kind": "predefined", "alpha": 1}``."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    try:
        if kind == "predefined":
            return ctl.predefined_controller_scalar(
                float(spec["alpha"]), u_max=float(spec.get("u_max", 1e12)), x_guard=float(spec.get("x_guard", 6.0))
            )
        if kind == "fixed_time":
            return ctl.fixed_time_controller(float(spec["a"]), float(spec["b"]))
        if kind == "example41":
            k1, k3 = float(spec.get("k1", 4.1)), float(spec.get("k3", 3.0))
            k2 = float(spec["k2"]) if "k2" in spec else ctl.example41_k2(k1, k3)
            return ctl.example41_controller(k1, k2, k3, float(spec["k4"]))
        if kind == "example42":
            return ctl.example42_controller()
        if kind == "backstep":
            return _backstep_from_spec(spec, system, system_params or {})
        if kind == "zero":
            return ctl.zero_controller(int(spec.get("dim", 1)))
    except KeyError as exc:
        raise ConfigError(f"controller kind {kind!r} needs parameter {exc.args[0]!r}") from None
    raise ConfigError(f"unknown controller kind {kind!r}")


def _backstep_from_spec(spec, system, system_params):
    if system != "example42":
        raise ConfigError("the backstep controller kind is available for the example42 system only")
    sfs = example42_system(**system_params)
    r_bar = float(spec.get("r_bar", ctl.default_r_bar(sfs.r)))
    gains = ctl.corollary23_gains(
        sfs.r, sfs.kappa, r_bar, float(spec.get("k1", 65.6)), float(spec.get("k3", 3.1)), sfs.n,
        float(spec["k4"]), k2=spec.get("k2"),
    )
    const = lambda v: (lambda xb: float(v))
    env = [(const(spec.get("phi_hat1", 1.0)), const(spec.get("psi_bar1", 1.0)))]
    alphas = [tuple(const(spec.get(f"alpha{i}", 0.0)) for i in (2, 3, 4))]
    return ctl.backstep_synthesize(sfs, gains, env, alphas)


def controller_bound(spec):
    """Predefined bound implied by a controller spec, or ``None``."""
    if "bound" in spec:
        return float(spec["bound"])
    kind = spec.get("kind")
    if kind in BOUND_PARAM and BOUND_PARAM[kind] in spec:
        return float(spec[BOUND_PARAM[kind]])
    if kind == "fixed_time":
        return ctl.tmax_fixed_time(float(spec["a"]), float(spec["b"]))
    if kind == "example42":
        return 3.0
    return None


@dataclass(frozen=True)
class RunConfig:
    """A Monte Carlo experiment: preset system, controller spec, initial state, settings."""

    system: str = "example21"
    controller: dict = field(default_factory=lambda: {"kind": "predefined", "alpha": 1.0})
    x0: tuple = (1.0,)
    sim: SimConfig = field(default_factory=SimConfig)
    n_runs: int = 200
    base_seed: int = 0
    workers: int = 1
    system_params: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.n_runs) < 1:
            raise ConfigError(f"n_runs must be at least 1, got {self.n_runs!r}")
        object.__setattr__(self, "x0", tuple(float(v) for v in np.atleast_1d(self.x0)))

    @property
    def bound(self):
        b = controller_bound(self.controller)
        if b is None:
            raise ConfigError("controller spec carries no bound; add a 'bound' entry")
        return b

    def build(self):
        sys = make_system(self.system, **self.system_params)
        u = build_controller(self.controller, self.system, self.system_params)
        if sys.dim != len(self.x0):
            raise ConfigError(f"x0 has {len(self.x0)} entries, system {self.system!r} has dim {sys.dim}")
        if u.dim != sys.dim:
            raise ConfigError(f"controller dim {u.dim} does not match system dim {sys.dim}")
        return sys, u


@dataclass(frozen=True)
class SettlingStats:
    n_runs: int
    n_settled: int
    n_unsettled: int
    n_diverged: int
    mean: float
    std_err: float
    ci95: tuple
    max: float
    bound: float
    bound_satisfied: bool
    censored: bool

    @property
    def ci_lo(self):
        return self.ci95[0]

    @property
    def ci_hi(self):
        return self.ci95[1]


@dataclass(frozen=True)
class MCResult:
    """Per-run outcomes plus the aggregate statistics."""

    config: RunConfig
    stats: SettlingStats
    seeds: np.ndarray
    status: np.ndarray
    settling_time: np.ndarray
    n_saturated: int = 0


def _run_block(cfg: RunConfig, start: int, stop: int):
    sys, u = cfg.build()
    sim = cfg.sim.resolved(cfg.bound)
    seeds = [run_seed(cfg.base_seed, i) for i in range(start, stop)]
    x0s = np.tile(np.asarray(cfg.x0, dtype=float), (stop - start, 1))
    status, ts, sat = settle_batch(sys, u, x0s, sim, seeds)
    return seeds, status, ts, sat


def _aggregate(status, ts, t_max, bound):
    n = len(status)
    n_set = int(np.sum(status == SETTLED))
    n_uns = int(np.sum(status == UNSETTLED))
    n_div = int(np.sum(status == DIVERGED))
    usable = status != DIVERGED
    if not usable.any():
        raise EstimationError(f"all {n} runs diverged; check dt, x0 and the controller")
    times = np.where(status == UNSETTLED, t_max, ts)[usable]
    k = times.size
    mean = float(np.mean(times))
    se = float(np.std(times, ddof=1) / math.sqrt(k)) if k > 1 else 0.0
    if k < 30:
        warnings.warn(f"only {k} usable runs; the normal-approximation CI is rough", RuntimeWarning, stacklevel=3)
    censored = n_uns > 0
    return SettlingStats(
        n_runs=n,
        n_settled=n_set,
        n_unsettled=n_uns,
        n_diverged=n_div,
        mean=mean,
        std_err=se,
        ci95=(mean - Z95 * se, mean + Z95 * se),
        max=float(np.max(times)),
        bound=float(bound),
        bound_satisfied=bool(mean <= bound and n_div == 0 and not censored),
        censored=censored,
    )


def _can_pickle(obj):
    try:
        pickle.dumps(obj)
        return True
    except Exception:
        return False


def estimate_settling(cfg: RunConfig) -> MCResult:
    """Run ``cfg.n_runs`` independent trajectories and aggregate settling times.

    Unsettled runs count as ``t_max`` in the mean and force
    ``bound_satisfied`` to false; diverged runs are excluded from the mean
    and also force it to false.
    """
    cfg.build()  # validate before fanning out
    sim = cfg.sim.resolved(cfg.bound)
    blocks = [(s, min(s + BLOCK, cfg.n_runs)) for s in range(0, cfg.n_runs, BLOCK)]
    workers = cfg.workers if cfg.workers and cfg.workers > 0 else (os.cpu_count() or 1)
    workers = min(workers, len(blocks))
    if workers > 1 and _can_pickle(cfg):
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_run_block, [cfg] * len(blocks), *zip(*blocks)))
    else:
        parts = [_run_block(cfg, s, e) for s, e in blocks]
    seeds = np.array([s for p in parts for s in p[0]], dtype=np.uint64)
    status = np.concatenate([p[1] for p in parts])
    ts = np.concatenate([p[2] for p in parts])
    n_sat = int(sum(int(np.sum(p[3])) for p in parts))
    stats = _aggregate(status, ts, sim.t_max, cfg.bound)
    return MCResult(cfg, stats, seeds, status, ts, n_sat)


def _with_bound(spec, bound):
    spec = dict(spec)
    kind = spec.get("kind")
    if kind not in BOUND_PARAM:
        raise ConfigError(f"controller kind {kind!r} has no adjustable bound")
    spec[BOUND_PARAM[kind]] = float(bound)
    return spec


def sweep_bound(cfg: RunConfig, bounds: Sequence[float]):
    """One :class:`MCResult` per bound, controller re-derived for each.

    Row ``i`` uses base seed ``cfg.base_seed + i``.  A row whose estimation
    fails is returned as the exception instance instead of a result.
    """
    if any(not b > 0 for b in bounds):
        raise ConfigError("all bounds must be positive")
    rows = []
    for i, b in enumerate(bounds):
        row_cfg = replace(cfg, controller=_with_bound(cfg.controller, b), base_seed=cfg.base_seed + i)
        try:
            rows.append(estimate_settling(row_cfg))
        except EstimationError as exc:
            rows.append(exc)
    return rows


def summary_dict(res: MCResult):
    st, cfg = res.stats, res.config
    sim = cfg.sim.resolved(cfg.bound)
    return {
        "n_runs": st.n_runs,
        "n_settled": st.n_settled,
        "n_unsettled": st.n_unsettled,
        "n_diverged": st.n_diverged,
        "mean": st.mean,
        "std_err": st.std_err,
        "ci_lo": st.ci_lo,
        "ci_hi": st.ci_hi,
        "max": st.max,
        "bound": st.bound,
        "bound_satisfied": st.bound_satisfied,
        "censored": st.censored,
        "dt": sim.dt,
        "eps_absorb": sim.eps_absorb,
        "t_max": sim.t_max,
        "x0": list(cfg.x0),
        "system": cfg.system,
        "controller": cfg.controller,
        "base_seed": cfg.base_seed,
        "n_saturated": res.n_saturated,
    }


def write_samples_csv(res: MCResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", "seed", "status", "settling_time"])
        for i, (seed, st, t) in enumerate(zip(res.seeds, res.status, res.settling_time)):
            w.writerow([i, int(seed), st, "" if np.isnan(t) else repr(float(t))])


def write_summary_json(res: MCResult, path):
    with open(path, "w") as fh:
        json.dump(summary_dict(res), fh, indent=2)
        fh.write("\n")
