"""Named experiments: resolved configs, independent cells, CSV/SVG/JSON outputs.

Every experiment is a grid of independent cells (family x seed x sweep point).
Cells may run on a process pool; results are merged in grid order so the
written files do not depend on scheduling.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import dynamics, gradflow, spectral
from .architectures import FAMILIES, class_interaction_matrices, make_spec
from .plotting import PlotError, plot_csv
from .tasks import (gen_cyclic, gen_entangled, gen_mod_arith, gen_quaternion_batch, gen_sl2_batch,
                    is_prime, traceless)
from .training import OptimizerConfig, TrainConfig, train, train_stream
from .unlearning import (EntangledConfig, SuperpositionConfig, classify_neurons, gradient_unlearn,
                         pretrain_entangled, prune_sweep, run_superposition, selectivity)

log = logging.getLogger(__name__)

__all__ = ["ConfigError", "DEFAULTS", "EXPERIMENTS", "resolve_config", "cells", "run",
           "write_csv", "run_dir"]


class ConfigError(ValueError):
    """Invalid experiment configuration (CLI exit code 2)."""


_MOD = {
    "p": 97, "d": 32, "hidden": 64, "train_fraction": 0.9, "batch_size": 256,
    "lr": 1e-3, "weight_decay": 0.1, "max_epochs": 2000, "early_stop": 0.999,
    "energy": 0.9,
    "families": ["bilinear", "relu"], "seeds": [0, 1, 2],
}

DEFAULTS = {
    "mod-add": dict(_MOD),
    "mod-mul": dict(_MOD),
    "replicate-113": dict(_MOD, p=113),
    "cycle": {
        "p": 400, "d": 32, "hidden": 64, "batch_size": 256, "lr": 1e-3, "weight_decay": 0.1,
        "max_epochs": 2000, "early_stop": 0.999, "max_power": 200, "threshold": 0.9,
        "families": ["bilinear", "relu"], "seeds": [0, 1, 2],
    },
    "quat": {
        "hidden": 128, "lr": 1e-3, "batch_size": 128, "iterations": 5000, "dt": 0.1,
        "omega_scale": 1.0, "rollout_steps": 200, "rollout_omega_norm": 0.5, "rollout_seed": 1000,
        "families": ["bilinear", "relu"], "seeds": [0, 1, 2, 3, 4],
    },
    "sl2": {
        "hidden": 64, "lr": 1e-3, "batch_size": 128, "iterations": 5000, "dt": 0.1,
        "rollout_steps": 200, "rollout_generator_norm": 0.3, "rollout_seed": 1000,
        "families": ["bilinear", "relu"], "seeds": [0, 1, 2, 3, 4],
    },
    "ortho-unlearn": {
        "alphas": [0.0, 0.25, 0.5, 0.75, 0.9, 1.0], "d": 32, "hidden": 128, "n_tokens": 500,
        "n_samples": 8000, "batch_size": 256, "lam": 60.0, "phase1_lr": 5e-3, "phase2_lr": 1e-2,
        "phase1_epochs": 300, "phase2_epochs": 200, "phase1_epochs_other": 600,
        "phase2_epochs_other": 300,
        "families": ["bilinear", "relu"], "seeds": [0],
    },
    "entangled": {
        "ranks": [1, 2, 4], "d": 16, "hidden": 64, "n_train": 8000, "n_val": 1000,
        "batch_size": 256, "lr": 2e-3, "l1": 2e-4, "epochs": 30, "unlearn_lr": 2e-3,
        "unlearn_steps": 500, "attack_lr": 2e-2, "attack_steps": 50, "forget_weight": 0.5,
        "eps": 1e-3, "dead_factor": 0.05, "dominance": 5.0,
        "families": ["bilinear", "relu"], "seeds": [0, 1, 2],
    },
    "flow": {
        "n": 8, "r": 4, "spectrum": [4.0, 3.0, 2.0, 1.0], "eps": 1e-3, "eps_sweep": [1e-1, 1e-2, 1e-3],
        "h": 1e-2, "t_end": None, "unlearn": 0, "symmetric": False, "record_every": 10,
        "seeds": [0],
    },
}
EXPERIMENTS = tuple(DEFAULTS)

# keys whose default is None still need a type for CLI parsing and validation
NULLABLE = {"t_end": float}


def _coerce(key, value, default):
    kind = NULLABLE.get(key) if default is None else type(default)
    if value is None and default is None:
        return None
    try:
        if kind is bool:
            if isinstance(value, str):
                if value.lower() in ("1", "true", "yes"):
                    return True
                if value.lower() in ("0", "false", "no"):
                    return False
                raise ValueError(value)
            if not isinstance(value, bool):
                raise ValueError(value)
            return value
        if kind is list:
            items = value.split(",") if isinstance(value, str) else list(value)
            elem = type(default[0]) if default else str
            if elem is int:
                return [_int(v) for v in items]
            return [elem(v) for v in items]
        if kind is int:
            return _int(value)
        if kind is float:
            return float(value)
        return kind(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot interpret {value!r} as {kind.__name__}") from exc


def _int(v):
    if isinstance(v, bool):
        raise ValueError(v)
    if isinstance(v, float) and not v.is_integer():
        raise ValueError(v)
    return int(v)


def resolve_config(experiment: str, file_config: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON config, then CLI overrides (flags win). Unknown keys are rejected."""
    if experiment not in DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    base = DEFAULTS[experiment]
    cfg = {k: (list(v) if isinstance(v, list) else v) for k, v in base.items()}
    for source in (file_config or {}, {k: v for k, v in (overrides or {}).items() if v is not None}):
        if not isinstance(source, dict):
            raise ConfigError("config must be a JSON object")
        for key, value in source.items():
            if key not in base:
                raise ConfigError(f"unknown config key {key!r} for {experiment}")
            cfg[key] = _coerce(key, value, base[key])
    _validate(experiment, cfg)
    return cfg


def _validate(experiment, cfg):
    for fam in cfg.get("families", []):
        if fam not in FAMILIES:
            raise ConfigError(f"unknown family {fam!r}; choose from {', '.join(FAMILIES)}")
    if not cfg.get("seeds"):
        raise ConfigError("at least one seed is required")
    if "families" in cfg and not cfg["families"]:
        raise ConfigError("at least one family is required")
    for key in ("hidden", "batch_size", "d", "n", "r", "iterations", "max_epochs", "epochs"):
        if key in cfg and cfg[key] < 1:
            raise ConfigError(f"{key} must be >= 1")
    if "p" in cfg and experiment != "cycle" and not is_prime(cfg["p"]):
        raise ConfigError(f"modulus {cfg['p']} is not prime")
    if experiment == "cycle" and cfg["p"] < 2:
        raise ConfigError("cycle length must be >= 2")
    if experiment == "flow":
        if len(cfg["spectrum"]) != cfg["r"]:
            raise ConfigError(f"spectrum has {len(cfg['spectrum'])} values but r = {cfg['r']}")
        if cfg["r"] > cfg["n"]:
            raise ConfigError("r must not exceed n")
        if not 0 <= cfg["unlearn"] < cfg["r"]:
            raise ConfigError("unlearn must index a mode")
    if experiment == "ortho-unlearn" and any(not 0.0 <= a <= 1.0 for a in cfg["alphas"]):
        raise ConfigError("alphas must lie in [0, 1]")
    if experiment == "entangled" and any(r < 1 for r in cfg["ranks"]):
        raise ConfigError("ranks must be >= 1")


def cells(experiment: str, cfg: dict) -> list[tuple]:
    """The ordered grid of independent work items."""
    seeds = cfg["seeds"]
    if experiment in ("mod-add", "mod-mul"):
        op = experiment.split("-")[1]
        return [(op, f, s) for f in cfg["families"] for s in seeds]
    if experiment == "replicate-113":
        return [(op, f, s) for op in ("add", "mul") for f in cfg["families"] for s in seeds]
    if experiment in ("cycle", "quat", "sl2"):
        return [(f, s) for f in cfg["families"] for s in seeds]
    if experiment == "ortho-unlearn":
        return [(f, a, s) for a in cfg["alphas"] for f in cfg["families"] for s in seeds]
    if experiment == "entangled":
        return [(f, r, s) for r in cfg["ranks"] for f in cfg["families"] for s in seeds]
    if experiment == "flow":
        return [(s,) for s in seeds]
    raise ConfigError(f"unknown experiment {experiment!r}")


def _num(x):
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_num(v) for v in row])


def _curve_rows(report):
    acc = report.val_acc + [""] * (len(report.loss) - len(report.val_acc))
    return [(i + 1, l, a) for i, (l, a) in enumerate(zip(report.loss, acc))]


def _tag(*parts):
    return "_".join(str(p) for p in parts)


# cells


def _cell_mod(cfg, op, family, seed):
    p = cfg["p"]
    ds = gen_mod_arith(p, op, cfg["train_fraction"], seed)
    spec = make_spec(family, "tokens", hidden=cfg["hidden"], out_dim=p, vocab=p, embed_dim=cfg["d"])
    params, report = train(spec, ds, TrainConfig(cfg["batch_size"], cfg["max_epochs"], cfg["early_stop"],
                                                 "xent", seed=seed),
                           OptimizerConfig("adamw", cfg["lr"], cfg["weight_decay"]), seed=seed)
    tag = _tag(op, family, f"s{seed}")
    tables = {f"train_{tag}.csv": (("epoch", "loss", "val_acc"), _curve_rows(report))}
    val = report.val_acc[-1] if report.val_acc else float("nan")
    result = {"op": op, "family": family, "seed": seed, "epochs_run": report.epochs_run,
              "val_acc": val, "reached": bool(val >= cfg["early_stop"]), "failed": report.failed}
    Ms = class_interaction_matrices(spec, params)
    if op == "add":
        H = [spectral.fourier_entropy(M) for M in Ms]
        tables[f"entropy_{tag}.csv"] = (("class", "entropy"), list(enumerate(H)))
        result["mean_entropy"] = float(np.mean(H))
    else:
        ranks, rows = [], []
        for k, M in enumerate(Ms):
            res = spectral.svd(spectral.center(M))
            ranks.append(spectral.rank_for_energy(res, cfg["energy"]))
            rows.extend((k, i + 1, r) for i, r in enumerate(spectral.sv_decay(res)))
        tables[f"svd_{tag}.csv"] = (("class", "i", "sigma_ratio"), rows)
        result["mean_rank"] = float(np.mean(ranks))
    return result, tables


def _cell_cycle(cfg, family, seed):
    p = cfg["p"]
    ds = gen_cyclic(p)
    spec = make_spec(family, "tokens", hidden=cfg["hidden"], out_dim=p, vocab=p + 1, embed_dim=cfg["d"])
    params, report = train(spec, ds, TrainConfig(cfg["batch_size"], cfg["max_epochs"], cfg["early_stop"],
                                                 "xent", seed=seed),
                           OptimizerConfig("adamw", cfg["lr"], cfg["weight_decay"]), seed=seed)
    T = dynamics.extract_transition(spec, params, p, ds.phi_token)
    curve = dynamics.accuracy_curve(T, cfg["max_power"])
    H = dynamics.column_entropy(T)
    tag = _tag(family, f"s{seed}")
    tables = {
        f"train_{tag}.csv": (("epoch", "loss", "val_acc"), _curve_rows(report)),
        f"accuracy_{tag}.csv": (("i", "accuracy"), list(enumerate(curve))),
        f"column_entropy_{tag}.csv": (("a", "column_entropy"), list(enumerate(H))),
    }
    return {"family": family, "seed": seed, "epochs_run": report.epochs_run,
            "val_acc": report.val_acc[-1] if report.val_acc else float("nan"),
            "horizon": dynamics.horizon(curve, cfg["threshold"]),
            "mean_column_entropy": float(H.mean()), "failed": report.failed}, tables


def _cell_quat(cfg, family, seed):
    spec = make_spec(family, "pair", hidden=cfg["hidden"], out_dim=4, head="regression",
                     input_dim=7, split=4)

    def sampler(rng, n):
        b = gen_quaternion_batch(n, cfg["dt"], rng, cfg["omega_scale"])
        return b.X, b.increment

    params, report = train_stream(spec, sampler, cfg["iterations"], cfg["batch_size"],
                                  OptimizerConfig("adam", cfg["lr"]), seed=seed)
    rng = np.random.default_rng(cfg["rollout_seed"] + seed)
    q0 = rng.standard_normal(4)
    q0 /= np.linalg.norm(q0)
    omega = rng.standard_normal(3)
    omega *= cfg["rollout_omega_norm"] / np.linalg.norm(omega)
    trace = dynamics.rollout_quaternion(spec, params, q0, omega, cfg["rollout_steps"])
    norms = trace.series["norm"]
    drift = abs(norms[-1] - 1.0) if not trace.diverged and len(norms) == cfg["rollout_steps"] + 1 else math.inf
    exact = math.sqrt(1 + (cfg["dt"] * cfg["rollout_omega_norm"]) ** 2 / 4) ** cfg["rollout_steps"] - 1
    tag = _tag(family, f"s{seed}")
    return {"family": family, "seed": seed, "final_loss": report.loss[-1] if report.loss else float("nan"),
            "drift": drift, "diverged": trace.diverged, "euler_rule_drift": exact,
            "failed": report.failed}, {f"norm_{tag}.csv": (("step", "norm"), list(zip(trace.step, norms)))}


def _cell_sl2(cfg, family, seed):
    spec = make_spec(family, "pair", hidden=cfg["hidden"], out_dim=2, head="regression",
                     input_dim=6, split=2)

    def sampler(rng, n):
        b = gen_sl2_batch(n, cfg["dt"], rng)
        return b.X, b.increment

    params, report = train_stream(spec, sampler, cfg["iterations"], cfg["batch_size"],
                                  OptimizerConfig("adam", cfg["lr"]), seed=seed)
    rng = np.random.default_rng(cfg["rollout_seed"] + seed)
    G = traceless(rng.standard_normal((2, 2)))
    G *= cfg["rollout_generator_norm"] / np.linalg.norm(G)
    trace = dynamics.rollout_sl2(spec, params, G, cfg["rollout_steps"])
    areas = trace.series["area"]
    drift = abs(areas[-1] - 1.0) if not trace.diverged and len(areas) == cfg["rollout_steps"] + 1 else math.inf
    exact = (1 + cfg["dt"] ** 2 * np.linalg.det(G)) ** cfg["rollout_steps"] - 1
    tag = _tag(family, f"s{seed}")
    return {"family": family, "seed": seed, "final_loss": report.loss[-1] if report.loss else float("nan"),
            "drift": drift, "diverged": trace.diverged, "euler_rule_drift": float(abs(exact)),
            "failed": report.failed}, {f"area_{tag}.csv": (("step", "area"), list(zip(trace.step, areas)))}


def _superposition_config(cfg):
    return SuperpositionConfig(
        d=cfg["d"], hidden=cfg["hidden"], n_tokens=cfg["n_tokens"], n_samples=cfg["n_samples"],
        batch_size=cfg["batch_size"], lam=cfg["lam"], phase1_lr=cfg["phase1_lr"], phase2_lr=cfg["phase2_lr"],
        phase1_epochs={"bilinear": cfg["phase1_epochs"], "default": cfg["phase1_epochs_other"]},
        phase2_epochs={"bilinear": cfg["phase2_epochs"], "default": cfg["phase2_epochs_other"]})


def _cell_ortho(cfg, family, alpha, seed):
    r = run_superposition(family, alpha, seed, _superposition_config(cfg))
    rows = [("1" if i < r.phase_boundary else "2", i + 1, a, b)
            for i, (a, b) in enumerate(zip(r.score_A, r.score_B))]
    tag = _tag(family, f"a{alpha}", f"s{seed}")
    p1 = r.phase1_end if r.phase_boundary else None
    return {"family": family, "alpha": alpha, "seed": seed,
            "phase1_score_A": p1.score_A if p1 else None, "phase1_score_B": p1.score_B if p1 else None,
            "score_A": r.final.score_A if len(r.score_A) else None,
            "score_B": r.final.score_B if len(r.score_B) else None,
            "target_B": r.target_B, "distortion": r.distortion if len(r.score_B) else None,
            "failed": r.failed}, {f"scores_{tag}.csv": (("phase", "epoch", "score_A", "score_B"), rows)}


def _entangled_config(cfg):
    keys = EntangledConfig.__dataclass_fields__
    return EntangledConfig(**{k: cfg[k] for k in keys if k in cfg})


def _cell_entangled(cfg, family, rank, seed):
    ecfg = _entangled_config(cfg)
    data = gen_entangled(d=cfg["d"], rank=rank, n_train=cfg["n_train"], n_val=cfg["n_val"], seed=seed)
    spec, params, report = pretrain_entangled(family, data, seed, ecfg)
    roles = classify_neurons(spec, params, cfg["dead_factor"], cfg["dominance"])
    curve = prune_sweep(spec, params, data.X_val, data.f12_val, data.f23_val)
    _, corr = gradient_unlearn(spec, params, data, cfg["unlearn_steps"],
                               OptimizerConfig("adam", cfg["unlearn_lr"]), cfg["batch_size"], seed)
    att = selectivity(spec, params, data, cfg["attack_steps"], cfg["attack_lr"], cfg["forget_weight"],
                      cfg["eps"], cfg["batch_size"], seed)
    below = np.flatnonzero(corr[:, 0] < 0.1)
    tag = _tag(family, f"r{rank}", f"s{seed}")
    tables = {
        f"roles_{tag}.csv": (("neuron", "role", "S12", "S23"),
                             [(h, roles.labels[h], roles.S12[h], roles.S23[h]) for h in range(len(roles.labels))]),
        f"pareto_{tag}.csv": (("pruned", "ret_f12", "ret_f23", "seed"),
                              [(k, a, b, seed) for k, a, b in zip(curve.pruned, curve.ret_f12, curve.ret_f23)]),
        f"unlearn_{tag}.csv": (("step", "corr_f12", "corr_f23"),
                               [(i, a, b) for i, (a, b) in enumerate(corr)]),
    }
    return {"family": family, "rank": rank, "seed": seed,
            "final_loss": report.loss[-1] if report.loss else float("nan"),
            "roles": roles.counts(), "mixed_fraction": roles.fraction("mixed"),
            "ret_f12": curve.ret_f12.tolist(), "ret_f23": curve.ret_f23.tolist(),
            "pareto_point": curve.has_point(0.05, 0.90),
            "unlearn_first_step_below_0.1": int(below[0]) if below.size else None,
            "corr_start": corr[0].tolist(), "corr_end": corr[-1].tolist(),
            "delta_f12": att.delta_f12, "delta_f23": att.delta_f23, "selectivity": att.ratio,
            "selectivity_flagged": att.flagged, "attack_diverged": att.diverged,
            "attack_steps_run": att.steps_run, "failed": report.failed}, tables


def _cell_flow(cfg, seed):
    target = gradflow.make_target(cfg["n"], cfg["spectrum"], seed, cfg["symmetric"])
    state = gradflow.aligned_init(target, cfg["eps"], cfg["h"])
    final, traj = gradflow.integrate(state, cfg["t_end"], cfg["record_every"])
    k = cfg["unlearn"]
    after, utraj = gradflow.unlearn_mode(final, k)
    r = cfg["r"]
    header = ("t",) + tuple(f"c_{i + 1}" for i in range(r)) + ("max_cross", "loss")

    def rows(tr):
        return [(t, *c, x, l) for t, c, x, l in zip(tr.t, tr.c, tr.cross, tr.loss)]

    c_end = np.asarray(utraj.c[-1])
    s_new = np.array(cfg["spectrum"], dtype=np.float64)
    s_new[k] = 0.0
    sweep = []
    for eps in cfg["eps_sweep"]:
        st = gradflow.random_init(target, eps, seed, cfg["h"])
        _, tr = gradflow.integrate(st, cfg["t_end"], cfg["record_every"])
        sweep.append({"eps": eps, "final_max_cross": float(tr.cross[-1]),
                      "max_cross_ratio": tr.cross_ratio(),
                      "scalar_ode_error": float(np.abs(np.array(tr.c) - np.array(tr.c_scalar)).max())})
    result = {
        "seed": seed, "t_end": final.t,
        "final_error": float(np.linalg.norm(final.U @ final.V.T - target.Q)),
        "cross_ratio": traj.cross_ratio(),
        "scalar_ode_error": float(np.abs(np.array(traj.c) - np.array(traj.c_scalar)).max()),
        "balance_drift": float(max(traj.balance_drift)),
        "unlearned_mode": k, "unlearn_time": after.t - final.t,
        "c_after_unlearn": c_end.tolist(),
        "unlearn_error": float(np.abs(c_end - s_new).max()),
        "unlearn_cross_ratio": utraj.cross_ratio(), "retries": traj.retries + utraj.retries,
        "eps_sweep": sweep, "failed": False,
    }
    return result, {f"flow_s{seed}.csv": (header, rows(traj)),
                    f"flow_unlearn_s{seed}.csv": (header, rows(utraj))}


_CELLS = {
    "mod-add": _cell_mod, "mod-mul": _cell_mod, "replicate-113": _cell_mod, "cycle": _cell_cycle,
    "quat": _cell_quat, "sl2": _cell_sl2, "ortho-unlearn": _cell_ortho, "entangled": _cell_entangled,
    "flow": _cell_flow,
}


def _run_cell(job):
    experiment, cfg, key = job
    try:
        return _CELLS[experiment](cfg, *key)
    except Exception as exc:  # a failing cell is reported, not fatal to the grid
        log.exception("cell %s failed", key)
        return {"cell": list(key), "failed": True, "error": f"{type(exc).__name__}: {exc}"}, {}


# aggregation


def _stats(values):
    v = np.asarray([x for x in values if x is not None], dtype=np.float64)
    if v.size == 0:
        return {"mean": None, "std": None, "median": None, "n": 0}
    return {"mean": float(v.mean()), "std": float(v.std()), "median": float(np.median(v)), "n": int(v.size)}


def _by(results, *keys):
    groups = {}
    for r in results:
        if r.get("failed") and "error" in r:
            continue
        groups.setdefault(tuple(r[k] for k in keys), []).append(r)
    return groups


def _aggregate(experiment, cfg, results):
    tables = {}
    agg = {}
    if experiment in ("mod-add", "mod-mul", "replicate-113"):
        for (op, fam), rs in _by(results, "op", "family").items():
            metric = "mean_entropy" if op == "add" else "mean_rank"
            agg[f"{op}/{fam}"] = {metric: _stats(r[metric] for r in rs),
                                  "reached": sum(r["reached"] for r in rs),
                                  "epochs_run": [r["epochs_run"] for r in rs]}
    elif experiment == "cycle":
        for (fam,), rs in _by(results, "family").items():
            agg[fam] = {"horizon": _stats(r["horizon"] for r in rs),
                        "mean_column_entropy": _stats(r["mean_column_entropy"] for r in rs)}
    elif experiment in ("quat", "sl2"):
        for (fam,), rs in _by(results, "family").items():
            agg[fam] = {"drift": _stats(r["drift"] for r in rs),
                        "euler_rule_drift": _stats(r["euler_rule_drift"] for r in rs)}
    elif experiment == "ortho-unlearn":
        rows = []
        for (alpha, fam), rs in _by(results, "alpha", "family").items():
            d = _stats(r["distortion"] for r in rs)
            agg[f"{fam}/alpha={alpha}"] = {"distortion": d,
                                           "score_A": _stats(r["score_A"] for r in rs),
                                           "score_B": _stats(r["score_B"] for r in rs),
                                           "phase1_score_B": _stats(r["phase1_score_B"] for r in rs)}
            rows.append((alpha, fam, d["mean"] if d["mean"] is not None else float("nan")))
        tables["distortion.csv"] = (("alpha", "family", "distortion"), rows)
    elif experiment == "entangled":
        rows = []
        for (rank, fam), rs in _by(results, "rank", "family").items():
            r12 = np.mean([r["ret_f12"] for r in rs], axis=0)
            r23 = np.mean([r["ret_f23"] for r in rs], axis=0)
            agg[f"{fam}/rank={rank}"] = {
                "selectivity": _stats(r["selectivity"] for r in rs),
                "flagged": sum(r["selectivity_flagged"] for r in rs),
                "attack_diverged": sum(r["attack_diverged"] for r in rs),
                "mixed_fraction": _stats(r["mixed_fraction"] for r in rs),
                "mean_curve_pareto_point": bool(np.any((r12 <= 0.05) & (r23 >= 0.90))),
                "unlearn_first_step_below_0.1": [r["unlearn_first_step_below_0.1"] for r in rs],
            }
            rows.extend((rank, fam, r["seed"], r["selectivity"]) for r in rs)
        tables["selectivity.csv"] = (("rank", "family", "seed", "selectivity"), rows)
    elif experiment == "flow":
        agg = {"cross_ratio": _stats(r["cross_ratio"] for r in results if "cross_ratio" in r),
               "unlearn_error": _stats(r["unlearn_error"] for r in results if "unlearn_error" in r)}
    return agg, tables


def run_dir(root, experiment, name=None) -> Path:
    name = name or time.strftime("%Y%m%d-%H%M%S")
    return Path(root) / "runs" / experiment / name


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def run(experiment: str, cfg: dict, out_dir, jobs: int = 1, plots: bool = True) -> dict:
    """Run every cell, write CSVs, SVGs and ``report.json`` into ``out_dir``; return the report."""
    start = time.perf_counter()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = cells(experiment, cfg)
    jobs_list = [(experiment, cfg, key) for key in grid]
    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_cell, jobs_list))
    else:
        outputs = [_run_cell(j) for j in jobs_list]
    results = [r for r, _ in outputs]
    tables = {}
    for _, t in outputs:
        tables.update(t)
    aggregate, extra = _aggregate(experiment, cfg, results)
    tables.update(extra)
    files = []
    for fname in sorted(tables):
        header, rows = tables[fname]
        write_csv(out / fname, header, rows)
        files.append(fname)
        if plots and rows:
            try:
                files.append(plot_csv(out / fname).name)
            except PlotError as exc:
                log.warning("no plot for %s: %s", fname, exc)
    report = {
        "experiment": experiment, "config": cfg, "cells": [list(k) for k in grid],
        "results": results, "aggregate": aggregate,
        "failed": any(r.get("failed") for r in results),
        "wall_clock_s": time.perf_counter() - start, "files": sorted(files) + ["report.json"],
    }
    report = _clean(report)
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return report
