"""Command-line front end: ``ptstab {simulate,mc,sweep,certify,gains}``.

Settings come from an optional TOML file with sections ``[system]``,
``[controller]``, ``[sim]``, ``[mc]``, ``[gains]`` and ``[certify]``;
command-line flags override file values.  Exit codes: 0 success, 1 failed
verdict, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import certify as cert
from . import controllers as ctl
from .errors import ConfigError, EstimationError, PtstabError
from .montecarlo import (
    BOUND_PARAM,
    RunConfig,
    controller_bound,
    estimate_settling,
    summary_dict,
    sweep_bound,
    write_samples_csv,
    write_summary_json,
)
from .sde import SimConfig, simulate
from .system import PRESETS, example21_system, r_recursion

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

DEFAULT_CONTROLLER = {
    "example21": {"kind": "predefined", "alpha": 1.0},
    "example41": {"kind": "example41", "k1": 4.1, "k3": 3.0, "k4": 4.0},
    "example42": {"kind": "example42"},
}
DEFAULT_X0 = {"example21": [1.0], "example41": [1.0], "example42": [0.0, 1.5]}
DEFAULT_GAINS = {"q": [5 / 3, 4 / 3], "kappa": -0.25, "r_bar": 2.0, "k1": 65.6, "k3": 3.1, "k4": 3.0}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _parser():
    p = _Parser(prog="ptstab", description="Predefined-time stabilization of Ito SDEs: simulation and checks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out_help):
        sp.add_argument("--config", type=Path, help="TOML configuration file")
        sp.add_argument("--out", type=Path, help=out_help)
        sp.add_argument("--preset", help=f"system preset ({', '.join(sorted(PRESETS))})")
        sp.add_argument("--seed", type=int, help="base seed")
        sp.add_argument("--bound", type=float, help="target bound (alpha or k4)")
        return sp

    def sim_flags(sp):
        sp.add_argument("--dt", type=float, help="time step")
        sp.add_argument("--eps", type=float, help="absorption radius")
        sp.add_argument("--t-max", type=float, dest="t_max", help="horizon (default 3 x bound)")
        sp.add_argument("--x0", type=float, nargs="+", help="initial state")
        sp.add_argument("--no-plot", action="store_true", help="skip figures")

    s = common(sub.add_parser("simulate", help="one trajectory to CSV"), "output directory")
    sim_flags(s)
    m = common(sub.add_parser("mc", help="Monte Carlo settling-time estimate"), "output directory")
    sim_flags(m)
    m.add_argument("--runs", type=int, help="number of runs")
    m.add_argument("--workers", type=int, help="worker processes (0 = all cores)")
    w = common(sub.add_parser("sweep", help="Monte Carlo over several bounds"), "output directory")
    sim_flags(w)
    w.add_argument("--runs", type=int, help="runs per bound")
    w.add_argument("--workers", type=int, help="worker processes (0 = all cores)")
    w.add_argument("--bounds", type=float, nargs="+", help="bounds to sweep")
    c = common(sub.add_parser("certify", help="grid certificate checks"), "JSON report path (default stdout)")
    c.add_argument("--check", choices=("drift", "beta", "wj"), help="which check to run")
    g = common(sub.add_parser("gains", help="derive the strict-feedback gain set"), "JSON path (default stdout)")
    g.add_argument("--k1", type=float)
    g.add_argument("--k3", type=float)
    g.add_argument("--r-bar", type=float, dest="r_bar")
    return p


def load_config(path):
    if path is None:
        return {}
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    known = {"system", "controller", "sim", "mc", "gains", "certify"}
    extra = set(data) - known
    if extra:
        raise ConfigError(f"unknown config sections {sorted(extra)}")
    for name, sec in data.items():
        if not isinstance(sec, dict):
            raise ConfigError(f"[{name}] must be a table")
    return data


def _pick(flag, section, key, default=None):
    if flag is not None:
        return flag
    return section.get(key, default)


def _system_part(args, cfg):
    sec = cfg.get("system", {})
    preset = _pick(args.preset, sec, "preset", "example21")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    params = {k: v for k, v in sec.items() if k != "preset"}
    return preset, params


def _controller_part(args, cfg, preset):
    spec = dict(cfg.get("controller") or DEFAULT_CONTROLLER[preset])
    if args.bound is not None:
        kind = spec.get("kind")
        if kind in BOUND_PARAM:
            spec[BOUND_PARAM[kind]] = args.bound
        else:
            spec["bound"] = args.bound
    return spec


def _sim_part(args, cfg):
    sec = cfg.get("sim", {})
    unknown = set(sec) - {"dt", "t_max", "eps_absorb", "x_guard"}
    if unknown:
        raise ConfigError(f"unknown [sim] keys {sorted(unknown)}")
    return SimConfig(
        dt=float(_pick(args.dt, sec, "dt", 1e-4)),
        t_max=_pick(getattr(args, "t_max", None), sec, "t_max"),
        eps_absorb=float(_pick(args.eps, sec, "eps_absorb", 1e-3)),
        seed=int(_pick(args.seed, cfg.get("mc", {}), "seed", 0)),
        x_guard=float(sec.get("x_guard", 1e6)),
    )


def _run_config(args, cfg):
    preset, params = _system_part(args, cfg)
    spec = _controller_part(args, cfg, preset)
    mc = cfg.get("mc", {})
    x0 = _pick(args.x0, mc, "x0", DEFAULT_X0[preset])
    runs = int(_pick(getattr(args, "runs", None), mc, "runs", 200))
    if runs < 1:
        raise ConfigError(f"runs must be at least 1, got {runs}")
    return RunConfig(
        system=preset,
        controller=spec,
        x0=tuple(x0),
        sim=_sim_part(args, cfg),
        n_runs=runs,
        base_seed=int(_pick(args.seed, mc, "seed", 0)),
        workers=int(_pick(getattr(args, "workers", None), mc, "workers", 1)),
        system_params=params,
    )


def _out_dir(path, default="ptstab_out"):
    out = Path(path if path is not None else default)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc.strerror}") from None
    return out


def _emit_json(obj, path):
    text = json.dumps(obj, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
        return
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc.strerror}") from None


def cmd_simulate(args, cfg):
    rc = _run_config(args, cfg)
    sys_, u = rc.build()
    bound = controller_bound(rc.controller)
    traj = simulate(sys_, u, rc.x0, rc.sim, bound=bound)
    out = _out_dir(args.out)
    traj.write_csv(out / "trajectory.csv")
    if not args.no_plot:
        from .plotting import plot_trajectory

        plot_trajectory(traj, out / "trajectory.png", bound=bound)
    print(f"{traj.status}: settling_time={traj.settling_time} seed={traj.seed} -> {out / 'trajectory.csv'}")
    return EXIT_OK if traj.status == "settled" else EXIT_FAIL


def cmd_mc(args, cfg):
    rc = _run_config(args, cfg)
    try:
        res = estimate_settling(rc)
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    out = _out_dir(args.out)
    write_samples_csv(res, out / "samples.csv")
    write_summary_json(res, out / "summary.json")
    if not args.no_plot:
        from .plotting import plot_settling_histogram

        plot_settling_histogram(res, out / "settling_hist.png")
    st = res.stats
    print(
        f"mean={st.mean:.6g} ci95=({st.ci_lo:.6g}, {st.ci_hi:.6g}) bound={st.bound:g} "
        f"settled={st.n_settled}/{st.n_runs} bound_satisfied={st.bound_satisfied}"
    )
    return EXIT_OK if st.bound_satisfied else EXIT_FAIL


SWEEP_FIELDS = ["bound", "n_runs", "n_settled", "n_unsettled", "n_diverged", "mean", "std_err",
                "ci_lo", "ci_hi", "max", "bound_satisfied", "censored", "error"]


def cmd_sweep(args, cfg):
    rc = _run_config(args, cfg)
    bounds = _pick(args.bounds, cfg.get("mc", {}), "bounds")
    if not bounds:
        raise ConfigError("sweep needs --bounds or [mc] bounds")
    rows = sweep_bound(rc, [float(b) for b in bounds])
    out = _out_dir(args.out)
    table = []
    for b, row in zip(bounds, rows):
        if isinstance(row, Exception):
            table.append({"bound": float(b), "error": str(row)})
        else:
            d = summary_dict(row)
            table.append({k: d.get(k) for k in SWEEP_FIELDS if k != "error"} | {"error": ""})
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_FIELDS, lineterminator="\n")
        w.writeheader()
        for rowd in table:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rowd.items()})
    _emit_json({"x0": list(rc.x0), "system": rc.system, "rows": table}, out / "sweep.json")
    if not args.no_plot:
        from .plotting import plot_sweep

        plot_sweep([float(b) for b in bounds], rows, out / "sweep.png")
    for rowd in table:
        print(f"bound={rowd['bound']:g} mean={rowd.get('mean')} ok={rowd.get('bound_satisfied')} {rowd['error']}")
    ok = all(not r["error"] and r["bound_satisfied"] for r in table)
    return EXIT_OK if ok else EXIT_FAIL


def _gain_set(args, cfg):
    sec = dict(DEFAULT_GAINS)
    sec.update(cfg.get("gains", {}))
    for key in ("k1", "k3", "r_bar"):
        if getattr(args, key, None) is not None:
            sec[key] = getattr(args, key)
    if args.bound is not None:
        sec["k4"] = args.bound
    try:
        q = [float(v) for v in sec["q"]]
        r = r_recursion(q, float(sec["kappa"]))
        r_bar = float(sec.get("r_bar") or ctl.default_r_bar(r[:-1]))
        return ctl.corollary23_gains(r, float(sec["kappa"]), r_bar, float(sec["k1"]), float(sec["k3"]),
                                     len(q), float(sec["k4"]), k2=sec.get("k2"))
    except KeyError as exc:
        raise ConfigError(f"[gains] needs {exc.args[0]!r}") from None


def cmd_gains(args, cfg):
    gains = _gain_set(args, cfg)
    _emit_json(gains.to_dict(), args.out)
    return EXIT_OK if gains.valid else EXIT_FAIL


def cmd_certify(args, cfg):
    sec = cfg.get("certify", {})
    preset, _ = _system_part(args, cfg)
    check = _pick(args.check, sec, "check", {"example42": "wj"}.get(preset, "drift"))
    if check == "drift":
        if preset != "example21":
            raise ConfigError("the drift check ships a certificate for the example21 preset only")
        alpha = float(_pick(args.bound, sec, "alpha", 1.0))
        grid = cert.drift_grid(sec.get("lo", -3.0), sec.get("hi", 3.0), int(sec.get("num", 601)))
        rep = cert.check_drift_condition(
            example21_system(), ctl.predefined_controller_scalar(alpha), cert.example21_certificate(alpha),
            grid, method=sec.get("method", "analytic"),
        )
        report, ok = rep.to_dict(), rep.verdict
        report.update(check="drift", alpha=alpha)
    elif check == "beta":
        gains = _gain_set(args, cfg)
        beta = ctl.beta_from_corollary23(gains)
        res = cert.beta_integral(beta)
        ok = res.bounded and res.value <= 1.0 + max(1e-9, res.error)
        report = {"check": "beta", "integral": res.value, "integral_err": res.error,
                  "split_bound": beta.split_bound(), "verdict": bool(ok), "gains": gains.to_dict()}
    else:
        if preset != "example42":
            raise ConfigError("the wj check runs on the example42 cascade")
        n_states = int(sec.get("states", 50))
        box = float(sec.get("box", 1.0))
        tol = float(sec.get("tol", 1e-5))
        rng = np.random.default_rng(int(_pick(args.seed, sec, "seed", 0)))
        cascade = ctl.example42_cascade()
        worst, where = 0.0, None
        for x in rng.uniform(-box, box, (n_states, 2)):
            r = cert.wj_partials_check(2, -0.25, cascade, x)
            if not r.max_residual <= worst:
                worst, where = r.max_residual, x.tolist()
        ratio = cert.wj_richardson_ratio(2, -0.25, cascade, rng.uniform(-box, box, 2))
        ok = worst <= tol and abs(ratio - 4.0) < 0.5
        report = {"check": "wj", "states": n_states, "max_residual": worst, "argmax_state": where,
                  "richardson_ratio": ratio, "tol": tol, "verdict": bool(ok)}
    _emit_json(report, args.out)
    return EXIT_OK if ok else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "mc": cmd_mc, "sweep": cmd_sweep, "certify": cmd_certify, "gains": cmd_gains}


def main(argv=None):
    try:
        args = _parser().parse_args(argv)
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"ptstab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PtstabError, ValueError, TypeError) as exc:
        print(f"ptstab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"ptstab: error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
