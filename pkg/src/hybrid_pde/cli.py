"""Experiment runners and the ``hybrid-pde`` command line.

Every experiment has a table of defaults. A JSON file (``--config``) and
per-key flags override them; an unknown key is a configuration error.
Each run writes CSV curves and a ``summary.json`` into ``--out-dir`` and
finishes with ``manifest.json`` (resolved configuration and versions).

Exit codes: 0 success, 2 configuration error, 3 threshold failure,
4 unexpected blowup or divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from . import checkpoint as ckpt
from .burgers import (
    BurgersParams,
    BurgersSolver,
    ForcingParams,
    SineIC,
    adaptive_dt,
    oracle_hopf_lax,
    oracle_quadratic_source,
    step_euler,
)
from .core import Blowup, Grid1D, RngStream
from .correction import CorrectorSpec, GaussianNoise, InjectionMode, Neural, Zero, rollout
from .dataset import burgers_references, random_burgers_ic
from .ks import KSSolver, build_etd_coefficients, ks_reference_run, random_ks_ic
from .metrics import metric_mse, metric_r2
from .network import init_params, layer_specs
from .perturbation import DiffusionSolver, lipschitz_estimate, lyapunov_max, rk_bound, rk_empirical
from .training import Diverged, TrainConfig, train

log = logging.getLogger("hybrid_pde")

EXIT_OK, EXIT_CONFIG, EXIT_THRESHOLD, EXIT_BLOWUP = 0, 2, 3, 4
KS1_LENGTH = 2 * np.pi * 6.4
KS2_LENGTH = 21.6 * np.pi


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------- output


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return "" if v is None else str(v)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


class Output:
    """Writes UTF-8, LF-terminated CSV and JSON files into one directory."""

    def __init__(self, out_dir):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def csv(self, name: str, header: list[str], rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
        path = self.dir / name
        path.write_bytes(buf.getvalue().encode("utf-8"))
        self.files.append(name)
        return path

    def json(self, name: str, obj) -> Path:
        text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"
        path = self.dir / name
        path.write_bytes(text.encode("utf-8"))
        if name not in self.files:
            self.files.append(name)
        return path


# ---------------------------------------------------------------- config


def _check_type(key, value, default):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return value
    if isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected an object, got {value!r}")
        return value
    return value


def resolve_config(name: str, *layers: dict) -> dict:
    """Defaults of experiment ``name`` overlaid by each mapping in ``layers``."""
    if name not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {name!r}")
    merged: dict = {}
    for layer in layers:
        for k, v in (layer or {}).items():
            if k == "experiment":
                if v != name:
                    raise ConfigError(f"config is for experiment {v!r}, not {name!r}")
                continue
            merged[k] = v
    defaults = EXPERIMENTS[name].defaults(merged)
    unknown = sorted(set(merged) - set(defaults))
    if unknown:
        raise ConfigError(f"unknown configuration keys for {name}: {', '.join(unknown)}")
    cfg = dict(defaults)
    for k, v in merged.items():
        cfg[k] = _check_type(k, v, defaults[k])
    return cfg


def _seeded(seed: int, *key: int) -> np.random.Generator:
    return RngStream(int(seed), 0, tuple(int(k) for k in key)).generator()


# ---------------------------------------------------------------- validate-burgers


def _tv(u):
    return float(np.sum(np.abs(np.roll(u, -1) - u)))


def _rel(a, b):
    nb = float(np.linalg.norm(b))
    return float(np.linalg.norm(a - b)) / nb if nb > 0 else float(np.linalg.norm(a - b))


def defaults_validate_burgers(_):
    return dict(
        n=512, cfl=0.1, length=2.0, t_end=2.0, dt_out=0.05, preshock_t=0.25,
        beta=-2.0, quadratic_length=1.0, quadratic_t_end=0.15, quadratic_dt_out=0.01,
        threshold_preshock=2e-2, threshold_quadratic=1e-2, threshold_tv_growth=1e-2, seed=0,
    )


def _march(solver, u, t0, targets, record_tv=False):
    """CFL-limited stepping through the target times; yields (t, u, max TV growth)."""
    p, dx = solver.params, solver.grid.dx
    t = t0
    for target in targets:
        growth = -np.inf
        while t < target - 1e-12 * max(1.0, target):
            h = min(adaptive_dt(u, p, dx), target - t)
            un = step_euler(u, h, p, dx, solver.source(u, t))
            if record_tv:
                tv0 = _tv(u)
                if tv0 > 0:
                    growth = max(growth, _tv(un) / tv0 - 1.0)
            u, t = un, t + h
        yield target, u, growth


def run_validate_burgers(cfg, out: Output) -> dict:
    n = cfg["n"]
    p = BurgersParams(nu=0.0, cfl=cfg["cfl"], dt_max=1.0)
    rows, checks = [], {}

    g = Grid1D(n, cfg["length"])
    h0 = SineIC(cfg["length"])
    solver = BurgersSolver(g, p)
    u = h0(g.x)
    times = _grid_times(cfg["dt_out"], cfg["t_end"])
    rows.append(["homogeneous", 0.0, _rel(u, h0(g.x)), 0.0])
    pre_max, tv_max = 0.0, -np.inf
    for t, u, growth in _march(solver, u, 0.0, times, record_tv=True):
        err = _rel(u, oracle_hopf_lax(h0, g.x, t))
        rows.append(["homogeneous", t, err, growth])
        tv_max = max(tv_max, growth)
        if t <= cfg["preshock_t"] + 1e-12:
            pre_max = max(pre_max, err)

    gq = Grid1D(n, cfg["quadratic_length"])
    beta = cfg["beta"]

    def h0q(y):
        return np.sin(2 * np.pi * y / cfg["quadratic_length"])

    qs = BurgersSolver(gq, p, source_fn=lambda v, t: beta * (v * v))
    uq = h0q(gq.x)
    rows.append(["quadratic", 0.0, 0.0, 0.0])
    quad_max = 0.0
    for t, uq, growth in _march(qs, uq, 0.0, _grid_times(cfg["quadratic_dt_out"], cfg["quadratic_t_end"]), True):
        err = _rel(uq, oracle_quadratic_source(gq.x, t, beta, h0q))
        rows.append(["quadratic", t, err, growth])
        quad_max = max(quad_max, err)

    out.csv("validate_burgers.csv", ["case[-]", "time[s]", "rel_l2_error[-]", "tv_growth_max[-]"], rows)
    checks["preshock_error"] = pre_max < cfg["threshold_preshock"]
    checks["tv_growth"] = tv_max < cfg["threshold_tv_growth"]
    checks["quadratic_error"] = quad_max < cfg["threshold_quadratic"]
    return dict(preshock_max_error=pre_max, tv_growth_max=tv_max, quadratic_max_error=quad_max, checks=checks)


def _grid_times(step, end):
    k = int(round(end / step))
    return [step * i for i in range(1, k + 1)]


# ---------------------------------------------------------------- validate-ks


def defaults_validate_ks(_):
    return dict(
        n=64, length=KS1_LENGTH, t_end=1.0, dts=[0.05, 0.025, 0.0125], ref_factor=64,
        warmup_steps=2000, warmup_dt=0.05, seed=0,
        threshold_order_etdrk2=1.9, threshold_order_etd1=0.9, threshold_linear=1e-13,
    )


def observed_orders(errors) -> list[float]:
    e = np.asarray(errors, dtype=float)
    return list(np.log2(e[:-1] / e[1:]))


def run_validate_ks(cfg, out: Output) -> dict:
    g = Grid1D(cfg["n"], cfg["length"])
    u0 = random_ks_ic(g, RngStream(cfg["seed"]), warmup_steps=cfg["warmup_steps"], warmup_dt=cfg["warmup_dt"])
    dts = [float(d) for d in cfg["dts"]]
    t_end = cfg["t_end"]
    rows, summary, checks = [], {}, {}
    for scheme in ("etdrk2", "etd1"):
        dref = min(dts) / cfg["ref_factor"]
        ref = ks_reference_run(g, u0, dref, int(round(t_end / dref)), scheme).final
        errs = []
        for dt in dts:
            e = ks_reference_run(g, u0, dt, int(round(t_end / dt)), scheme).final - ref
            errs.append(float(np.linalg.norm(e) / np.linalg.norm(ref)))
            rows.append([scheme, dt, errs[-1]])
        orders = observed_orders(errs)
        summary[f"orders_{scheme}"] = orders
        checks[f"order_{scheme}"] = min(orders) >= cfg[f"threshold_order_{scheme}"]
    lin = KSSolver(g, dt=dts[0], nonlinear=False)
    c = build_etd_coefficients(g, dts[0])
    u_hat = np.fft.fft(u0)
    stepped = np.fft.fft(lin.step(u0))
    lin_err = float(np.max(np.abs(stepped - c.exp_lin * u_hat)) / np.max(np.abs(u_hat)))
    summary["linear_exactness_error"] = lin_err
    checks["linear_exactness"] = lin_err < cfg["threshold_linear"]
    out.csv("validate_ks.csv", ["scheme[-]", "dt[s]", "rel_l2_error[-]"], rows)
    summary["checks"] = checks
    return summary


# ---------------------------------------------------------------- noise-study


def defaults_noise_study(_):
    return dict(
        burgers_n=512, burgers_length=16.0, burgers_nu=0.2, burgers_dt=1e-3, burgers_steps=4000,
        burgers_eps=[1e-4, 1e-2, 1.0], burgers_seed=0, burgers_divergence_horizon=500,
        burgers_divergence_mse=1e3, burgers_terminal_factor=10.0,
        ks_n=64, ks_length=KS1_LENGTH, ks_dt=0.01, ks_steps=1000, ks_eps=[1e-4, 1e-2, 1e-1],
        ks_seeds=[0, 1, 2, 3, 4], ks_warmup_steps=2000, ks_warmup_dt=0.05, seed=0,
    )


def _mse_curve(traj, base):
    k = len(traj)
    return np.mean((traj.states - base.states[:k]) ** 2, axis=-1)


def run_noise_study(cfg, out: Output) -> dict:
    rows, events, summary, checks = [], [], {}, {}
    seed = cfg["seed"]

    gb = Grid1D(cfg["burgers_n"], cfg["burgers_length"])
    gen = _seeded(cfg["burgers_seed"], 0)
    fp = ForcingParams.random(gen, length=cfg["burgers_length"])
    bs = BurgersSolver(gb, BurgersParams(nu=cfg["burgers_nu"], dt=cfg["burgers_dt"]), forcing=fp)
    u0 = random_burgers_ic(gb, gen)
    steps = cfg["burgers_steps"]
    base = rollout(u0, steps, bs, CorrectorSpec())
    if base.blew_up:
        raise Blowup(base.blowup_step, "unperturbed Burgers baseline blew up")
    burgers = {}
    for i, eps in enumerate(cfg["burgers_eps"]):
        noise = GaussianNoise(float(eps), RngStream(seed, 1 + i))
        for mode in (InjectionMode.DIRECT, InjectionMode.INDIRECT):
            tr = rollout(u0, steps, bs, CorrectorSpec(noise, mode))
            curve = _mse_curve(tr, base)
            for s, m in enumerate(curve):
                rows.append(["burgers", eps, mode.value, cfg["burgers_seed"], s, s * bs.dt, m])
            if tr.blew_up:
                events.append(["burgers", eps, mode.value, cfg["burgers_seed"], tr.blowup_step])
            burgers[(float(eps), mode)] = (tr, curve)
    eps_max = float(max(cfg["burgers_eps"]))
    d_tr, d_curve = burgers[(eps_max, InjectionMode.DIRECT)]
    i_tr, i_curve = burgers[(eps_max, InjectionMode.INDIRECT)]
    horizon = cfg["burgers_divergence_horizon"]
    d_blow = d_tr.blowup_step is not None and d_tr.blowup_step <= horizon
    d_big = bool(np.any(d_curve[: horizon + 1] > cfg["burgers_divergence_mse"]))
    checks["burgers_direct_diverges"] = bool(d_blow or d_big)
    checks["burgers_indirect_finite"] = not i_tr.blew_up and len(i_tr) == steps + 1
    d_last = float(d_curve[-1])
    i_last = float(i_curve[-1])
    checks["burgers_indirect_terminal_below_direct"] = bool(
        checks["burgers_indirect_finite"] and i_last * cfg["burgers_terminal_factor"] <= d_last)
    summary["burgers"] = dict(
        direct_blowup_step=d_tr.blowup_step, direct_max_mse_within_horizon=float(np.max(d_curve[: horizon + 1])),
        direct_last_finite_mse=d_last, indirect_terminal_mse=i_last, eps=eps_max)

    gk = Grid1D(cfg["ks_n"], cfg["ks_length"])
    ks = KSSolver(gk, dt=cfg["ks_dt"])
    ks_steps = cfg["ks_steps"]
    table = {}
    for sd in cfg["ks_seeds"]:
        u0k = random_ks_ic(gk, RngStream(sd), warmup_steps=cfg["ks_warmup_steps"], warmup_dt=cfg["ks_warmup_dt"])
        kb = rollout(u0k, ks_steps, ks, CorrectorSpec())
        for i, eps in enumerate(cfg["ks_eps"]):
            noise = GaussianNoise(float(eps), RngStream(seed, 100 + i, (sd,)))
            for mode in (InjectionMode.DIRECT, InjectionMode.INDIRECT):
                tr = rollout(u0k, ks_steps, ks, CorrectorSpec(noise, mode))
                curve = _mse_curve(tr, kb)
                for s, m in enumerate(curve):
                    rows.append(["ks", eps, mode.value, sd, s, s * ks.dt, m])
                if tr.blew_up:
                    events.append(["ks", eps, mode.value, sd, tr.blowup_step])
                final = float(curve[ks_steps]) if len(curve) > ks_steps else float("inf")
                table.setdefault((float(eps), mode), []).append(final)
    ks_summary = {}
    for eps in cfg["ks_eps"]:
        d = float(np.median(table[(float(eps), InjectionMode.DIRECT)]))
        i = float(np.median(table[(float(eps), InjectionMode.INDIRECT)]))
        ks_summary[repr(float(eps))] = dict(direct_median_mse=d, indirect_median_mse=i)
        checks[f"ks_indirect_le_direct_eps_{float(eps)!r}"] = i <= d
    summary["ks"] = ks_summary
    out.csv("noise_study.csv",
            ["solver[-]", "eps[u]", "mode[-]", "seed[-]", "step[-]", "time[s]", "mse_vs_baseline[u^2]"], rows)
    out.csv("noise_events.csv", ["solver[-]", "eps[u]", "mode[-]", "seed[-]", "blowup_step[-]"], events)
    summary["checks"] = checks
    return summary


# ---------------------------------------------------------------- rk-sweep


def defaults_rk_sweep(_):
    return dict(
        diffusion_n=32, diffusion_length=2 * np.pi, diffusion_nu=1.0,
        dts=[1e-3, 5e-4, 2.5e-4, 1.25e-4], ks=[1, 2, 5, 10, 20], eps=1e-5, seed=0,
        direct_mode="direct", slope_min=-1.3, slope_max=-0.7, bound_factor=3.0, bound_k=10,
        burgers=True, burgers_n=64, burgers_length=16.0, burgers_nu=0.2, burgers_dts=[1e-3, 1e-2],
        burgers_k=10, burgers_scaling_factor=2.0,
    )


def loglog_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def run_rk_sweep(cfg, out: Output) -> dict:
    mode = InjectionMode.parse(cfg["direct_mode"])
    g = Grid1D(cfg["diffusion_n"], cfg["diffusion_length"])
    u0 = np.sin(2 * np.pi * g.x / g.length)
    rows, checks, summary = [], {}, {}
    rk = {}
    for dt in cfg["dts"]:
        solver = DiffusionSolver(g, nu=cfg["diffusion_nu"], dt=float(dt))
        lip = lipschitz_estimate(solver, [u0])
        for k in cfg["ks"]:
            r = rk_empirical(solver, u0, cfg["eps"], int(k), RngStream(cfg["seed"], 7), direct_mode=mode)
            b = rk_bound(float(dt), lip)
            rk[(float(dt), int(k))] = (r, b)
            rows.append(["diffusion", dt, k, r, b, lip])
    kb = int(cfg["bound_k"])
    dts = [float(d) for d in cfg["dts"]]
    slope = loglog_slope(dts, [rk[(d, kb)][0] for d in dts])
    factors = [max(r / b, b / r) for (d, k), (r, b) in rk.items() if k == kb]
    summary["diffusion"] = dict(slope=slope, max_bound_factor=max(factors),
                                lipschitz=float(DiffusionSolver(g, cfg["diffusion_nu"]).lipschitz()))
    checks["diffusion_slope"] = cfg["slope_min"] <= slope <= cfg["slope_max"]
    checks["diffusion_bound_factor"] = max(factors) <= cfg["bound_factor"]
    all_r = [r for r, _ in rk.values()]
    if cfg["burgers"]:
        gb = Grid1D(cfg["burgers_n"], cfg["burgers_length"])
        gen = _seeded(cfg["seed"], 3)
        fp = ForcingParams.random(gen, length=gb.length)
        ub = random_burgers_ic(gb, gen)
        br = []
        for dt in cfg["burgers_dts"]:
            bs = BurgersSolver(gb, BurgersParams(nu=cfg["burgers_nu"], dt=float(dt)), forcing=fp)
            lip = lipschitz_estimate(bs, [ub])
            r = rk_empirical(bs, ub, cfg["eps"], cfg["burgers_k"], RngStream(cfg["seed"], 8), direct_mode=mode)
            br.append(r)
            all_r.append(r)
            rows.append(["burgers", dt, cfg["burgers_k"], r, rk_bound(float(dt), lip), lip])
        ratio = (br[0] / br[-1]) / (cfg["burgers_dts"][-1] / cfg["burgers_dts"][0])
        summary["burgers"] = dict(rk=br, scaling_vs_inverse_dt=ratio)
        checks["burgers_inverse_dt_scaling"] = 1.0 / cfg["burgers_scaling_factor"] <= ratio <= cfg["burgers_scaling_factor"]
    checks["rk_above_one"] = all(r > 1 for r in all_r)
    out.csv("rk_sweep.csv", ["system[-]", "dt[s]", "k[steps]", "rk_empirical[-]", "rk_bound[-]", "lipschitz[1/s]"], rows)
    summary["checks"] = checks
    return summary


# ---------------------------------------------------------------- lyapunov


def defaults_lyapunov(_):
    return dict(
        n=64, length=KS1_LENGTH, dt=0.01, warmup_steps=5000, warmup_dt=0.05, total_t=200.0,
        renorm_every=10, samples=5, sample_every=1000, seed=1, convergence_tol=0.1,
        diffusion_n=32, diffusion_length=2 * np.pi, diffusion_nu=1.0, diffusion_dt=1e-3, diffusion_total_t=5.0,
    )


def run_lyapunov(cfg, out: Output) -> dict:
    g = Grid1D(cfg["n"], cfg["length"])
    solver = KSSolver(g, dt=cfg["dt"])
    u0 = random_ks_ic(g, RngStream(cfg["seed"]), warmup_steps=cfg["warmup_steps"], warmup_dt=cfg["warmup_dt"])
    samples = ks_reference_run(g, u0, cfg["dt"], cfg["samples"] * cfg["sample_every"], stride=cfg["sample_every"]).states
    lip = lipschitz_estimate(solver, samples)
    lam = lyapunov_max(solver, u0, cfg["total_t"], cfg["renorm_every"], RngStream(cfg["seed"], 11))
    lam2 = lyapunov_max(solver, u0, 2 * cfg["total_t"], cfg["renorm_every"], RngStream(cfg["seed"], 11))
    gd = Grid1D(cfg["diffusion_n"], cfg["diffusion_length"])
    ds = DiffusionSolver(gd, cfg["diffusion_nu"], cfg["diffusion_dt"])
    lam_d = lyapunov_max(ds, np.sin(2 * np.pi * gd.x / gd.length), cfg["diffusion_total_t"], cfg["renorm_every"],
                         RngStream(cfg["seed"], 12))
    rows = [["ks", cfg["total_t"], lam, lip], ["ks", 2 * cfg["total_t"], lam2, lip],
            ["diffusion", cfg["diffusion_total_t"], lam_d, ds.lipschitz()]]
    out.csv("lyapunov.csv", ["system[-]", "total_t[s]", "lambda_max[1/s]", "lipschitz[1/s]"], rows)
    change = abs(lam2 - lam) / abs(lam2) if lam2 != 0 else float("inf")
    checks = dict(
        ks_lambda_positive=lam > 0,
        lipschitz_ge_lambda=lip >= lam,
        diffusion_lambda_negative=lam_d < 0,
        ks_lambda_converged=change < cfg["convergence_tol"],
    )
    return dict(ks_lambda_max=lam, ks_lambda_max_doubled=lam2, ks_lipschitz=lip, diffusion_lambda_max=lam_d,
                relative_change=change, checks=checks)


# ---------------------------------------------------------------- train / evaluate


def _system_defaults(system: str) -> dict:
    common = dict(mode="indirect", seed=0, data_seed=1, channels=[8, 8], width=5, features=["u"],
                  last_scale=1e-2, beta1=0.9, beta2=0.999, holdout=0.1, batch=4, steps_per_epoch=50)
    if system == "burgers":
        return common | dict(
            n_traj=8, traj_steps=300, eval_seed=99, eval_traj=3, eval_steps=500,
            n_fine=512, n_coarse=64, length=16.0, nu=0.2, dt=1e-3,
            unroll_m=4, lr=1e-3, weight_decay=1e-15, epochs=20, eps_opt=1e-16, staged=False)
    if system == "ks2":
        return common | dict(
            n_traj=8, traj_steps=100, eval_seed=0, eval_traj=5, eval_steps=100,
            n=64, length=KS2_LENGTH, dt=0.5, scheme="etd1", dt_fine=0.01, warmup_steps=2000,
            eval_warmup_steps=500, unroll_m=10, lr=1e-3, weight_decay=1e-7, epochs=20, eps_opt=1e-8, staged=True)
    raise ConfigError(f"unknown system {system!r}; expected 'burgers' or 'ks2'")


def defaults_train(merged):
    return dict(system="burgers") | _system_defaults(merged.get("system", "burgers"))


def defaults_evaluate(merged):
    d = defaults_train(merged)
    d["seed"] = d.pop("eval_seed")
    for k in ("n_traj", "traj_steps", "unroll_m", "lr", "weight_decay", "epochs", "eps_opt", "staged",
              "channels", "width", "features", "last_scale", "beta1", "beta2", "holdout", "batch",
              "steps_per_epoch", "mode", "data_seed", "warmup_steps", "dt_fine"):
        d.pop(k, None)
    return d | dict(checkpoints={}, zero_modes=["direct", "pre_correct", "scaled", "indirect"])


def _references(cfg):
    from .dataset import ks_references

    if cfg["system"] == "burgers":
        return burgers_references(cfg["n_traj"], cfg["traj_steps"], seed=cfg["data_seed"], n_fine=cfg["n_fine"],
                                  n_coarse=cfg["n_coarse"], length=cfg["length"], nu=cfg["nu"], dt=cfg["dt"])
    return ks_references(cfg["n_traj"], cfg["traj_steps"], seed=cfg["data_seed"], length=cfg["length"],
                         n_fine=cfg["n"], n_coarse=cfg["n"], dt_fine=cfg["dt_fine"], dt_coarse=cfg["dt"],
                         coarse_scheme=cfg["scheme"], warmup_steps=cfg["warmup_steps"])


def _eval_burgers_refs(cfg):
    return burgers_references(cfg["eval_traj"], cfg["eval_steps"], seed=cfg["eval_seed"], n_fine=cfg["n_fine"],
                              n_coarse=cfg["n_coarse"], length=cfg["length"], nu=cfg["nu"], dt=cfg["dt"])


def _ks2_cases(cfg):
    g = Grid1D(cfg["n"], cfg["length"])
    solver = KSSolver(g, dt=cfg["dt"], scheme=cfg["scheme"])
    seeds = range(cfg["eval_seed"], cfg["eval_seed"] + cfg["eval_traj"])
    return solver, [(sd, random_ks_ic(g, RngStream(sd), warmup_steps=cfg["eval_warmup_steps"])) for sd in seeds]


def survival(traj, steps: int) -> int:
    """Completed steps before blowup (``steps`` when the run never blew up)."""
    return steps if traj.blowup_step is None else traj.blowup_step - 1


def run_train(cfg, out: Output) -> dict:
    mode = InjectionMode.parse(cfg["mode"])
    refs = _references(cfg)
    feats = tuple(cfg["features"])
    params = init_params(layer_specs([len(feats), *cfg["channels"], 1], cfg["width"]),
                         _seeded(cfg["seed"], 5), features=feats, last_scale=cfg["last_scale"])
    tc = TrainConfig(unroll_m=cfg["unroll_m"], lr=cfg["lr"], weight_decay=cfg["weight_decay"], batch=cfg["batch"],
                     epochs=cfg["epochs"], steps_per_epoch=cfg["steps_per_epoch"], beta1=cfg["beta1"],
                     beta2=cfg["beta2"], eps_opt=cfg["eps_opt"], holdout=cfg["holdout"], staged=cfg["staged"],
                     seed=cfg["seed"])
    started = time.perf_counter()
    result = train(tc, refs, params, mode)
    log.info("training took %.1f s", time.perf_counter() - started)
    ckpt.save(result.params, out.dir / "checkpoint.json")
    out.files.append("checkpoint.json")
    out.csv("loss_history.csv", ["iteration[-]", "loss[u^2]"], [[i + 1, v] for i, v in enumerate(result.history)])
    out.csv("val_history.csv", ["epoch[-]", "val_loss[u^2]"], [[i, v] for i, v in enumerate(result.val_history)])
    summary = dict(parameters=result.params.size, iterations=len(result.history), best_epoch=result.best_epoch,
                   sentinel_windows=result.sentinel_count, references=len(refs))
    spec = CorrectorSpec(Neural(result.params), mode)
    checks = {}
    if cfg["system"] == "burgers":
        rows, base_all, corr_all = [], [], []
        for j, ref in enumerate(_eval_burgers_refs(cfg)):
            u0 = ref.trajectory.states[0]
            b = metric_mse(rollout(u0, cfg["eval_steps"], ref.solver, CorrectorSpec()), ref.trajectory)[1]
            tr = rollout(u0, cfg["eval_steps"], ref.solver, spec)
            c = metric_mse(tr, ref.trajectory)[1] if not tr.blew_up else float("inf")
            rows.append([j, b, c])
            base_all.append(b)
            corr_all.append(c)
        out.csv("heldout_mse.csv", ["trajectory[-]", "nomodel_mse[u^2]", f"{mode.value}_mse[u^2]"], rows)
        summary |= dict(nomodel_mse=float(np.mean(base_all)), corrected_mse=float(np.mean(corr_all)))
        checks["corrected_below_nomodel"] = summary["corrected_mse"] < summary["nomodel_mse"]
    else:
        solver, cases = _ks2_cases(cfg)
        rows = []
        for sd, u0 in cases:
            a = survival(rollout(u0, cfg["eval_steps"], solver, CorrectorSpec()), cfg["eval_steps"])
            b = survival(rollout(u0, cfg["eval_steps"], solver, spec), cfg["eval_steps"])
            rows.append([sd, a, b])
        out.csv("survival.csv", ["seed[-]", "nomodel_steps[-]", f"{mode.value}_steps[-]"], rows)
        summary["survival"] = [dict(seed=r[0], nomodel=r[1], corrected=r[2]) for r in rows]
        checks["survival_extended_every_seed"] = all(r[2] > r[1] for r in rows)
    summary["checks"] = checks
    return summary


def _load_specs(cfg, base_dir: Path):
    specs = {"no_model": CorrectorSpec()}
    for m in cfg["zero_modes"]:
        mode = InjectionMode.parse(m)
        specs[f"zero_{mode.value}"] = CorrectorSpec(Zero(), mode)
    for m, path in sorted(cfg["checkpoints"].items()):
        mode = InjectionMode.parse(m)
        p = Path(path)
        if not p.is_absolute():
            p = base_dir / p
        try:
            params = ckpt.load(p)
        except (OSError, ValueError, KeyError) as err:
            raise ConfigError(f"cannot load checkpoint {path!r}: {err}") from err
        specs[mode.value] = CorrectorSpec(Neural(params), mode)
    return specs


def run_evaluate(cfg, out: Output, base_dir: Path = Path(".")) -> dict:
    specs = _load_specs(cfg, base_dir)
    cfg = dict(cfg, eval_seed=cfg["seed"])
    rows, summary, checks = [], {}, {}
    if cfg["system"] == "burgers":
        refs = _eval_burgers_refs(cfg)
        for name, spec in specs.items():
            means = []
            for j, ref in enumerate(refs):
                tr = rollout(ref.trajectory.states[0], cfg["eval_steps"], ref.solver, spec)
                k = len(tr)
                per, _ = metric_mse(tr.states, ref.trajectory.states[:k])
                r2 = metric_r2(tr.states, ref.trajectory.states[:k])
                for s in range(k):
                    rows.append([name, j, s, tr.times[s], per[s], r2[s]])
                means.append(float(np.mean(per)) if not tr.blew_up else float("inf"))
            summary[name] = dict(mean_mse=float(np.mean(means)))
        out.csv("evaluate.csv", ["series[-]", "trajectory[-]", "step[-]", "time[s]", "mse[u^2]", "r2[-]"], rows)
        base = summary["no_model"]["mean_mse"]
        for name in specs:
            if name.startswith("zero_"):
                checks[f"{name}_matches_nomodel"] = summary[name]["mean_mse"] == base
    else:
        solver, cases = _ks2_cases(cfg)
        for name, spec in specs.items():
            surv = [survival(rollout(u0, cfg["eval_steps"], solver, spec), cfg["eval_steps"]) for _, u0 in cases]
            for (sd, _), s in zip(cases, surv):
                rows.append([name, sd, s])
            summary[name] = dict(survival=surv)
        out.csv("evaluate.csv", ["series[-]", "seed[-]", "survival_steps[-]"], rows)
        base = summary["no_model"]["survival"]
        for name in specs:
            if name.startswith("zero_"):
                checks[f"{name}_matches_nomodel"] = summary[name]["survival"] == base
    summary["checks"] = checks
    return summary


# ---------------------------------------------------------------- blowup-ks2


def defaults_blowup_ks2(_):
    return dict(n=64, length=KS2_LENGTH, dt=0.5, scheme="etd1", steps=100, seed=0, n_seeds=5,
                warmup_steps=500, checkpoint="", mode="indirect", max_nomodel_survival=50)


def run_blowup_ks2(cfg, out: Output, base_dir: Path = Path(".")) -> dict:
    g = Grid1D(cfg["n"], cfg["length"])
    solver = KSSolver(g, dt=cfg["dt"], scheme=cfg["scheme"])
    mode = InjectionMode.parse(cfg["mode"])
    specs = {"no_model": CorrectorSpec(), f"zero_{mode.value}": CorrectorSpec(Zero(), mode)}
    if cfg["checkpoint"]:
        p = Path(cfg["checkpoint"])
        p = p if p.is_absolute() else base_dir / p
        try:
            specs[mode.value] = CorrectorSpec(Neural(ckpt.load(p)), mode)
        except (OSError, ValueError, KeyError) as err:
            raise ConfigError(f"cannot load checkpoint {cfg['checkpoint']!r}: {err}") from err
    rows, table = [], {k: [] for k in specs}
    for sd in range(cfg["seed"], cfg["seed"] + cfg["n_seeds"]):
        u0 = random_ks_ic(g, RngStream(sd), warmup_steps=cfg["warmup_steps"])
        for name, spec in specs.items():
            s = survival(rollout(u0, cfg["steps"], solver, spec), cfg["steps"])
            table[name].append(s)
            rows.append([sd, name, s, s * cfg["dt"]])
    out.csv("blowup_ks2.csv", ["seed[-]", "series[-]", "survival_steps[-]", "survival_time[s]"], rows)
    base = table["no_model"]
    checks = dict(
        nomodel_blows_up_early=all(s < cfg["max_nomodel_survival"] for s in base),
        zero_matches_nomodel=table[f"zero_{mode.value}"] == base,
    )
    if mode.value in table:
        checks["corrected_extends_survival"] = all(c > b for c, b in zip(table[mode.value], base))
    return dict(survival=table, checks=checks)


# ---------------------------------------------------------------- dispatch


class Experiment:
    def __init__(self, defaults: Callable, runner: Callable, needs_base: bool = False):
        self.defaults = defaults
        self.runner = runner
        self.needs_base = needs_base


EXPERIMENTS = {
    "validate-burgers": Experiment(defaults_validate_burgers, run_validate_burgers),
    "validate-ks": Experiment(defaults_validate_ks, run_validate_ks),
    "noise-study": Experiment(defaults_noise_study, run_noise_study),
    "rk-sweep": Experiment(defaults_rk_sweep, run_rk_sweep),
    "lyapunov": Experiment(defaults_lyapunov, run_lyapunov),
    "train": Experiment(defaults_train, run_train),
    "evaluate": Experiment(defaults_evaluate, run_evaluate, needs_base=True),
    "blowup-ks2": Experiment(defaults_blowup_ks2, run_blowup_ks2, needs_base=True),
}


def manifest(name: str, cfg: dict, files: list[str]) -> dict:
    return dict(experiment=name, config=cfg, package_version=__version__, numpy_version=np.__version__,
                outputs=sorted(set(files)), rerun=f"hybrid-pde {name} --config manifest.json")


def run_experiment(name: str, cfg: dict, out_dir, base_dir=None) -> tuple[int, dict]:
    """Run a resolved configuration; returns ``(exit_code, summary)``."""
    exp = EXPERIMENTS[name]
    out = Output(out_dir)
    base = Path(base_dir) if base_dir is not None else Path(".")
    try:
        summary = exp.runner(cfg, out, base) if exp.needs_base else exp.runner(cfg, out)
    except (Blowup, Diverged) as err:
        summary = dict(error=f"{type(err).__name__}: {err}", checks={})
        out.json("summary.json", summary)
        out.json("manifest.json", manifest(name, cfg, out.files + ["manifest.json"]))
        return EXIT_BLOWUP, summary
    out.json("summary.json", summary)
    out.json("manifest.json", manifest(name, cfg, out.files + ["manifest.json"]))
    failed = [k for k, ok in summary.get("checks", {}).items() if not ok]
    return (EXIT_THRESHOLD if failed else EXIT_OK), summary


def _parse_flag_value(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"cannot read {raw!r} as a boolean")
    if isinstance(default, (list, dict)):
        try:
            return json.loads(raw)
        except json.JSONDecodeError as err:
            raise ConfigError(f"cannot parse {raw!r} as JSON: {err}") from None
    if isinstance(default, int):
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"cannot read {raw!r} as an integer") from None
    if isinstance(default, float):
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"cannot read {raw!r} as a number") from None
    return raw


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybrid-pde", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="experiment", required=True)
    for name, exp in EXPERIMENTS.items():
        sp = sub.add_parser(name, help=f"run the {name} experiment",
                            formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--out-dir", default=f"results/{name}", help="output directory")
        sp.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
        sp.add_argument("-v", "--verbose", action="store_true")
        keys = set(exp.defaults({}))
        if name in ("train", "evaluate"):
            keys |= set(exp.defaults({"system": "ks2"}))
        for key in sorted(keys):
            sp.add_argument(f"--{key.replace('_', '-')}", dest=f"opt_{key}", metavar="VALUE", default=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    name = args.experiment
    try:
        file_cfg, base_dir = {}, Path(".")
        if args.config:
            path = Path(args.config)
            try:
                loaded = json.loads(path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as err:
                raise ConfigError(f"cannot read config {args.config!r}: {err}") from None
            if isinstance(loaded, dict) and "config" in loaded and "experiment" in loaded:
                loaded = dict(loaded["config"], experiment=loaded["experiment"])
            if not isinstance(loaded, dict):
                raise ConfigError("configuration file must hold a JSON object")
            file_cfg, base_dir = loaded, path.parent
        raw_flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("opt_") and v is not None}
        system = raw_flags.get("system", file_cfg.get("system", "burgers"))
        probe = EXPERIMENTS[name].defaults({"system": system} if name in ("train", "evaluate") else {})
        flags = {}
        for k, v in raw_flags.items():
            if k not in probe:
                raise ConfigError(f"option --{k.replace('_', '-')} does not apply to this configuration")
            flags[k] = _parse_flag_value(v, probe[k])
        cfg = resolve_config(name, file_cfg, flags)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if args.print_config:
        print(json.dumps(_jsonable(cfg), indent=2, sort_keys=True))
        return EXIT_OK
    try:
        code, summary = run_experiment(name, cfg, args.out_dir, base_dir)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    for k, ok in summary.get("checks", {}).items():
        print(f"{'PASS' if ok else 'FAIL'} {k}")
    if "error" in summary:
        print(summary["error"], file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
