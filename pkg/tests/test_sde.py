import math

import numpy as np
import pytest

from ptstab.controllers import example41_controller, example41_k2, predefined_controller_scalar, zero_controller
from ptstab.errors import ConfigError
from ptstab.sde import (
    CHUNK,
    DIVERGED,
    SETTLED,
    UNSETTLED,
    SimConfig,
    make_rng,
    run_seed,
    settle_batch,
    simulate,
    wiener_increments,
)
from ptstab.system import ItoSystem, example21_system, example41_system


def linear_decay():
    return ItoSystem(1, lambda x, u: -np.asarray(x, dtype=float), lambda x, u: 0.0 * np.asarray(x, dtype=float))


def counting_system(base):
    calls = {"drift": 0, "diffusion": 0}

    def drift(x, u):
        calls["drift"] += 1
        return base.drift(x, u)

    def diffusion(x, u):
        calls["diffusion"] += 1
        return base.diffusion(x, u)

    sys = ItoSystem(base.dim, drift, diffusion)
    calls.update(drift=0, diffusion=0)  # ignore the construction-time origin check
    return sys, calls


def test_config_validation():
    for bad in (dict(dt=0.0), dict(eps_absorb=-1.0), dict(t_max=1e-5, dt=1e-4), dict(x_guard=0.0)):
        with pytest.raises(ConfigError):
            SimConfig(**bad)
    assert SimConfig().resolved(2.0).t_max == 6.0
    with pytest.raises(ConfigError):
        SimConfig().resolved(None)
    assert SimConfig(dt=1e-3, t_max=1.0).n_steps == 1000


def test_wiener_increments_moments():
    assert wiener_increments(1, 0, 1e-2).size == 0
    dt = 1e-2
    w = wiener_increments(123, 10**6, dt)
    assert abs(w.mean()) <= 4 * math.sqrt(dt / 1e6)
    assert w.var() == pytest.approx(dt, rel=0.01)
    assert np.array_equal(w, wiener_increments(123, 10**6, dt))


def test_run_seed_distinct_and_stable():
    seeds = [run_seed(0, i) for i in range(1000)]
    assert len(set(seeds)) == 1000
    assert run_seed(0, 5) == run_seed(0, 5)
    assert run_seed(1, 5) != run_seed(0, 5)


def test_origin_start():
    tr = simulate(example21_system(), predefined_controller_scalar(1.0), [0.0], SimConfig(t_max=0.01))
    assert tr.status == SETTLED and tr.settling_time == 0.0
    assert np.all(tr.states == 0.0)


def test_deterministic_linear_decay():
    sys, u = linear_decay(), zero_controller()
    tr = simulate(sys, u, [1.0], SimConfig(dt=1e-3, t_max=8.0, eps_absorb=0.0))
    assert tr.status == UNSETTLED
    dt = 1e-4
    tr = simulate(sys, u, [1.0], SimConfig(dt=dt, t_max=8.0, eps_absorb=1e-3))
    k = math.ceil(math.log(1e-3) / math.log1p(-dt))  # exact discrete oracle
    assert tr.settling_time == pytest.approx(k * dt, abs=1e-12)
    # Euler bias is about ln(1000) dt / 2 below the continuous value
    assert abs(tr.settling_time - math.log(1000)) <= 4 * dt
    tr2 = simulate(sys, u, [1.0], SimConfig(dt=dt / 2, t_max=8.0, eps_absorb=1e-3))
    assert abs(tr2.settling_time - tr.settling_time) < 2 * dt


def test_trajectory_invariants():
    tr = simulate(example21_system(), predefined_controller_scalar(1.0), [1.0], SimConfig(seed=7, t_max=3.0))
    assert tr.status == SETTLED
    d = np.diff(tr.times)
    assert np.allclose(d, 1e-4, rtol=0, atol=1e-12)
    k = int(round(tr.settling_time / 1e-4))
    assert np.all(tr.states[k:] == 0.0) and np.all(tr.controls[k:] == 0.0)
    assert np.all(np.abs(tr.states[:k]) > 1e-3)


def test_determinism():
    cfg = SimConfig(seed=11, t_max=3.0)
    a = simulate(example41_system(), example41_controller(4.1, example41_k2(4.1, 3), 3, 1.0), [1.0], cfg)
    b = simulate(example41_system(), example41_controller(4.1, example41_k2(4.1, 3), 3, 1.0), [1.0], cfg)
    assert np.array_equal(a.states, b.states) and a.settling_time == b.settling_time


def test_chunked_stream_matches_single_draw():
    # a trajectory longer than one chunk uses the same increments as a flat draw
    dt, n = 1e-3, CHUNK + 500
    sys = ItoSystem(1, lambda x, u: 0.0 * np.asarray(x), lambda x, u: 0.0 * np.asarray(x) + 1.0 * (np.asarray(x) != 0))
    seed = 99
    _, _, _, xs, _, _ = settle_batch(sys, zero_controller(), [[5.0]], SimConfig(dt=dt, t_max=n * dt, eps_absorb=0.0), [seed], record=True)
    g = make_rng(seed)
    draws = np.concatenate([g.standard_normal(CHUNK) * math.sqrt(dt) for _ in range(2)])[:n]
    assert np.allclose(xs[0, 1:, 0], 5.0 + np.cumsum(draws), rtol=0, atol=1e-9)


def test_batch_equals_individual_runs():
    sys, u = example21_system(), predefined_controller_scalar(0.5)
    cfg = SimConfig(t_max=1.5)
    seeds = [run_seed(3, i) for i in range(6)]
    st, ts, _ = settle_batch(sys, u, np.ones((6, 1)), cfg, seeds)
    for i, s in enumerate(seeds):
        one = settle_batch(sys, u, np.ones((1, 1)), cfg, [s])
        assert one[0][0] == st[i] and one[1][0] == ts[i]


def test_no_dynamics_calls_after_absorption():
    sys, calls = counting_system(linear_decay())
    cfg = SimConfig(dt=1e-3, t_max=50.0, eps_absorb=1e-3)
    st, ts, _ = settle_batch(sys, zero_controller(), [[1.0]], cfg, [0])
    assert st[0] == SETTLED
    steps_to_settle = int(round(ts[0] / cfg.dt))
    assert calls["drift"] == steps_to_settle and calls["diffusion"] == steps_to_settle
    sys, calls = counting_system(linear_decay())
    settle_batch(sys, zero_controller(), [[0.0]], cfg, [0])
    assert calls["drift"] == 0


def test_divergence_status():
    sys = ItoSystem(1, lambda x, u: np.asarray(x, dtype=float) ** 3, lambda x, u: 0.0 * np.asarray(x))
    tr = simulate(sys, zero_controller(), [2.0], SimConfig(dt=1e-2, t_max=10.0, x_guard=1e3))
    assert tr.status == DIVERGED and tr.settling_time is None
    assert np.all(np.abs(tr.states) <= 1e3)
    assert tr.times[-1] < 10.0


def test_example41_fast_settling():
    u = example41_controller(4.1, example41_k2(4.1, 3), 3, 0.5)
    seeds = [run_seed(0, i) for i in range(40)]
    st, ts, _ = settle_batch(example41_system(), u, np.ones((40, 1)), SimConfig(t_max=1.5), seeds)
    assert np.all(st == SETTLED)
    assert np.mean(ts < 0.5) > 0.95


def test_saturation_warning():
    sys = example21_system()
    u = predefined_controller_scalar(1.0, u_max=1e3)
    with pytest.warns(RuntimeWarning, match="saturated"):
        simulate(sys, u, [3.0], SimConfig(dt=1e-5, t_max=0.01))


def test_trajectory_csv(tmp_path):
    tr = simulate(example21_system(), predefined_controller_scalar(1.0), [1.0], SimConfig(seed=7, t_max=3.0))
    p = tmp_path / "t.csv"
    tr.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "t,x1,u"
    assert len(lines) == len(tr.times) + 1
    assert float(lines[-1].split(",")[1]) == 0.0
