"""Euler-Maruyama integration with absorbing settling detection.

A trajectory is *settled* the first time its state norm drops to
``eps_absorb`` or below; the state is then clamped to the origin and the
dynamics are no longer evaluated.  Reaching ``t_max`` first leaves it
*unsettled*; a non-finite state or one beyond ``x_guard`` marks it
*diverged* and truncates it.

Every trajectory draws its Wiener increments from its own generator, seeded
from a single integer, so results do not depend on how trajectories are
batched or distributed over workers.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, DomainError

__all__ = [
    "SimConfig",
    "Trajectory",
    "SETTLED",
    "UNSETTLED",
    "DIVERGED",
    "make_rng",
    "run_seed",
    "wiener_increments",
    "simulate",
    "settle_batch",
]

SETTLED, UNSETTLED, DIVERGED = "settled", "unsettled", "diverged"

# increments are drawn per trajectory in blocks of this many steps
CHUNK = 4096


@dataclass(frozen=True)
class SimConfig:
    """Integration settings.  ``t_max=None`` means three times the target bound."""

    dt: float = 1e-4
    t_max: Optional[float] = None
    eps_absorb: float = 1e-3
    seed: int = 0
    x_guard: float = 1e6

    def __post_init__(self):
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt!r}")
        if not self.eps_absorb >= 0:
            raise ConfigError(f"eps_absorb must be nonnegative, got {self.eps_absorb!r}")
        if self.t_max is not None and not self.t_max > self.dt:
            raise ConfigError(f"t_max must exceed dt, got t_max={self.t_max!r}")
        if not self.x_guard > 0:
            raise ConfigError("x_guard must be positive")

    def resolved(self, bound=None):
        """Copy with ``t_max`` filled in from ``3 * bound`` when unset."""
        if self.t_max is not None:
            return self
        if bound is None or not bound > 0:
            raise ConfigError("t_max is unset and no positive bound is available to default it")
        return replace(self, t_max=3.0 * float(bound))

    @property
    def n_steps(self):
        if self.t_max is None:
            raise ConfigError("t_max is unresolved")
        return int(math.ceil(self.t_max / self.dt - 1e-9))


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    settling_time: Optional[float]
    status: str
    seed: int
    saturated: bool = False

    def write_csv(self, path):
        n = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + ["u"])
            for t, x, u in zip(self.times, self.states, self.controls):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(u))])


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(int(seed)))


def run_seed(base_seed, index):
    """64-bit seed of run ``index`` under ``base_seed`` (hashed, order independent)."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def wiener_increments(seed, n, dt):
    """``n`` independent Normal(0, dt) draws, reproducible from ``seed``."""
    if n < 0 or not dt > 0:
        raise DomainError("need n >= 0 and dt > 0")
    return make_rng(seed).standard_normal(int(n)) * math.sqrt(dt)


def settle_batch(sys, u, x0s, cfg: SimConfig, seeds: Sequence[int], record=False):
    """Integrate a batch of closed-loop trajectories until each settles.

    ``x0s`` has one initial state per row and ``seeds`` one seed per row.
    Returns ``(status, settling_time, saturated)`` arrays and, when
    ``record`` is true, the full state and control paths (``(m, steps+1, n)``
    and ``(m, steps+1)``) plus the last recorded index per trajectory.
    """
    x = np.array(x0s, dtype=float, ndmin=2)
    m, n = x.shape
    if len(seeds) != m:
        raise ConfigError("one seed per trajectory is required")
    if not np.all(np.isfinite(x)):
        raise DomainError("initial states must be finite")
    steps = cfg.n_steps
    dt, sq = cfg.dt, math.sqrt(cfg.dt)
    eps, guard = cfg.eps_absorb, cfg.x_guard

    status = np.full(m, UNSETTLED, dtype=object)
    t_settle = np.full(m, np.nan)
    saturated = np.zeros(m, dtype=bool)
    last = np.full(m, steps)
    if record:
        xs = np.zeros((m, steps + 1, n))
        us = np.zeros((m, steps + 1))
        xs[:, 0] = x

    norm0 = np.sqrt(np.sum(x * x, axis=1))
    done0 = norm0 <= eps
    status[done0] = SETTLED
    t_settle[done0] = 0.0
    x[done0] = 0.0
    active = np.flatnonzero(~done0)
    gens = {int(i): make_rng(seeds[i]) for i in active}
    dw = np.zeros((m, CHUNK))

    with np.errstate(all="ignore"):
        for k in range(steps):
            if active.size == 0:
                break
            col = k % CHUNK
            if col == 0:
                for i in active:
                    dw[i] = gens[int(i)].standard_normal(CHUNK) * sq
            xa = x[active]
            ua = np.asarray(u(xa), dtype=float).reshape(active.size)
            if u_has_cap(u):
                saturated[active] |= u.saturated(ua)
            xn = xa + sys.drift(xa, ua) * dt + sys.diffusion(xa, ua) * dw[active, col][:, None]
            if record:
                us[active, k] = ua
            nrm = np.sqrt(np.sum(xn * xn, axis=1))
            bad = ~np.isfinite(nrm) | (nrm > guard)
            hit = (nrm <= eps) & ~bad
            if bad.any():
                ids = active[bad]
                status[ids] = DIVERGED
                last[ids] = k
            if hit.any():
                ids = active[hit]
                status[ids] = SETTLED
                t_settle[ids] = (k + 1) * dt
                xn[hit] = 0.0
            x[active] = np.where(bad[:, None], xa, xn)
            if record:
                xs[active[~bad], k + 1] = xn[~bad]
            active = active[~(bad | hit)]

    if record:
        # unsettled trajectories get a control value on their final state
        if active.size:
            us[active, steps] = np.asarray(u(x[active]), dtype=float).reshape(active.size)
        return status, t_settle, saturated, xs, us, last
    return status, t_settle, saturated


def u_has_cap(u):
    return getattr(u, "u_max", None) is not None


def simulate(sys, u, x0, cfg: SimConfig, bound=None):
    """Simulate one closed-loop trajectory with seed ``cfg.seed``.

    ``bound`` is only used to default ``t_max`` when the config leaves it unset.
    """
    cfg = cfg.resolved(bound)
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape != (sys.dim,):
        raise DomainError(f"x0 must have {sys.dim} entries")
    status, ts, sat, xs, us, last = settle_batch(sys, u, x0[None, :], cfg, [cfg.seed], record=True)
    stop = int(last[0])
    times = np.arange(stop + 1) * cfg.dt
    traj = Trajectory(
        times=times,
        states=xs[0, : stop + 1],
        controls=us[0, : stop + 1],
        settling_time=None if np.isnan(ts[0]) else float(ts[0]),
        status=str(status[0]),
        seed=int(cfg.seed),
        saturated=bool(sat[0]),
    )
    if traj.saturated:
        warnings.warn("control saturated at u_max along the trajectory", RuntimeWarning, stacklevel=2)
    return traj
