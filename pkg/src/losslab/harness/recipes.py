"""Named experiment recipes: each expands to a set of training runs plus analysis steps.

Every recipe writes its runs under ``<out>/runs/<label>/`` and its analysis
artifacts (CSV, JSON, P5) at the top of ``<out>`` under fixed ``figN*`` stems.
Analysis steps read checkpoints back from disk, so a
missing upstream checkpoint surfaces as a descriptive error.
"""

from __future__ import annotations

import copy
import itertools
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import schedules
from ..checkpoint import load_checkpoint, save_checkpoint
from ..curves import evaluate_curve, init_curve, train_curve
from ..distill import DistillConfig, distill_train
from ..evaluation import MinibatchLoss, NetworkEvaluator
from ..landscape import barrier_check, grid_eval, plane_basis, segment_eval
from ..nn import evaluate, representation_layers
from ..repsim import SimilarityHeatmap, difference_heatmap, layer_heatmap
from .config import RunConfig, changed_knobs, dump_json
from .data import Dataset, make_dataset
from .export import write_grid, write_heatmap
from .train import train_run, write_log_csv

IMAGE_DATA = {"kind": "tiny-images", "n": 2400, "noise": 1.0, "seed": 0}
# Lower pixel noise: large-batch runs get past chance within the warmup window.
EASY_IMAGE_DATA = {"kind": "tiny-images", "n": 2400, "noise": 0.5, "seed": 0}
MOONS_DATA = {"kind": "two-moons", "n": 1000, "noise": 0.15, "seed": 0}

SGD = {"kind": "sgd-momentum", "momentum": 0.9, "weight_decay": 5e-4}

DEFAULTS: dict[str, dict] = {
    "mode-zoo": {
        "dataset": IMAGE_DATA,
        "network": "tiny-cnn",
        "epochs": 20,
        "batch_size": 50,
        "lr": 0.01,
        "milestones": [6, 12, 16],
        "large_batch": 600,
        "adam_lr_scale": 0.1,
        "small_weight_decay": 5e-5,
        "bad_init_scale": 3.0,
        "curve_iterations": 500,
        "curve_lr": 0.01,
        "points": 25,
    },
    "sgdr-vs-step": {
        "dataset": IMAGE_DATA,
        "network": "tiny-cnn",
        "epochs": 60,  # restarts at 4, 12, 28, 60
        "batch_size": 25,
        "lr": 0.03,
        "t0": 4,
        "t_mult": 2,
        "step_milestones": [30, 45],
        "pairs": None,  # default: every pair of the last three restart epochs
        "step_pairs": None,  # default: the same epochs as the SGDR pairs
        "curve_iterations": 300,
        "curve_lr": 0.01,
        "points": 25,
    },
    "sgdr-plane": {
        "dataset": IMAGE_DATA,
        "network": "tiny-cnn",
        "epochs": 60,
        "batch_size": 25,
        "lr": 0.03,
        "t0": 4,
        "t_mult": 2,
        "upstream": None,  # directory of an existing SGDR run to reuse
        "generators": None,  # [epoch_a, epoch_b]; default: the last two restart epochs
        "curve_iterations": 300,
        "curve_lr": 0.01,
        "resolution": 15,
        "margin": 0.25,
    },
    "warmup-compare": {
        "dataset": EASY_IMAGE_DATA,
        "network": "tiny-cnn",
        "epochs": 50,
        "sb_batch": 50,
        "sb_lr": 0.01,
        "lb_batch": 600,
        "warmup_iters": 120,  # 40 large-batch epochs
        "milestones": [44, 47, 49],
        "factor": 10,
    },
    "distill-cca": {
        "dataset": IMAGE_DATA,
        "teacher": "tiny-teacher",
        "student": "tiny-cnn",
        "teacher_epochs": 20,
        "teacher_lr": 0.01,
        "epochs": 10,
        "batch_size": 50,
        "lr": 0.05,  # soft targets at T=5 give ~1/T-sized gradients; 0.01 leaves the student undertrained
        "temperature": 5.0,
    },
}
DEFAULTS["warmup-freeze"] = copy.deepcopy(DEFAULTS["warmup-compare"])

RECIPES = tuple(DEFAULTS)


class MissingUpstreamError(FileNotFoundError):
    pass


@dataclass
class RecipePlan:
    name: str
    params: dict
    runs: dict[str, RunConfig] = field(default_factory=dict)
    jobs: list[str] = field(default_factory=list)  # analysis steps, in order


def recipe_params(name: str, overrides: dict | None = None) -> dict:
    if name not in DEFAULTS:
        raise KeyError(f"unknown recipe {name!r}; known: {list(RECIPES)}")
    params = copy.deepcopy(DEFAULTS[name])
    unknown = set(overrides or {}) - set(params)
    if unknown:
        raise KeyError(f"unknown override(s) for {name}: {sorted(unknown)}; known: {sorted(params)}")
    params.update(copy.deepcopy(overrides or {}))
    return params


# -- expansion ---------------------------------------------------------------


def _mode_zoo_runs(p: dict, seed: int) -> dict[str, RunConfig]:
    ref = RunConfig(
        dataset=p["dataset"],
        network=p["network"],
        schedule=schedules.to_dict(schedules.StepDecay(p["lr"], 5, tuple(p["milestones"]))),
        optimizer=dict(SGD),
        batch_size=p["batch_size"],
        epochs=p["epochs"],
        seed=seed,
        augment=True,
        name="G",
    )
    variants = {
        "A": {"batch_size": p["large_batch"]},
        "B": {"optimizer": {**SGD, "kind": "adam", "lr_scale": p["adam_lr_scale"]}},
        "C": {"schedule": schedules.to_dict(schedules.LinearDecay(p["lr"], 0.0, p["epochs"]))},
        "D": {"optimizer": {**SGD, "weight_decay": p["small_weight_decay"]}},
        "E": {"init_scale": p["bad_init_scale"]},
        "F": {"augment": False},
    }
    runs = {"G": ref}
    for label, change in variants.items():
        cfg = ref.replace(name=label, **change)
        knobs = changed_knobs(ref, cfg)
        if len(knobs) != 1:
            raise AssertionError(f"mode {label} changes {knobs}, expected exactly one knob")
        if cfg.optimizer["kind"] == "adam":
            cfg.optimizer.pop("momentum")
        runs[label] = cfg
    return runs


def _sgdr_spec(p: dict) -> schedules.CosineRestarts:
    return schedules.CosineRestarts(1e-6, p["lr"], p["t0"], p["t_mult"])


def _sgdr_run(p: dict, seed: int) -> RunConfig:
    return RunConfig(
        dataset=p["dataset"],
        network=p["network"],
        schedule=schedules.to_dict(_sgdr_spec(p)),
        optimizer=dict(SGD),
        batch_size=p["batch_size"],
        epochs=p["epochs"],
        seed=seed,
        checkpoint_epochs=list(range(p["epochs"] + 1)),
        name="sgdr",
    )


def sgdr_pairs(p: dict) -> list[tuple[int, int]]:
    if p["pairs"] is not None:
        return [tuple(int(e) for e in pair) for pair in p["pairs"]]
    restarts = [int(r) for r in schedules.restart_epochs(_sgdr_spec(p), p["epochs"] + 1)]
    return list(itertools.combinations(restarts[-3:], 2))


def _warmup_runs(p: dict, seed: int, freeze: bool) -> dict[str, RunConfig]:
    lb_lr = schedules.scale_lr_for_batch(p["sb_lr"], p["sb_batch"], p["lb_batch"])
    w = p["warmup_iters"]

    def tail(lr):
        return schedules.StepDecay(lr, p["factor"], tuple(p["milestones"]))

    base = dict(
        dataset=p["dataset"],
        network=p["network"],
        optimizer=dict(SGD),
        epochs=p["epochs"],
        seed=seed,
        checkpoint_iters=[0, w],
    )
    runs = {
        "sb": RunConfig(schedule=schedules.to_dict(tail(p["sb_lr"])), batch_size=p["sb_batch"], name="sb", **base),
        "lb-warmup": RunConfig(
            schedule=schedules.to_dict(schedules.Warmup(lb_lr, w, tail(lb_lr))),
            batch_size=p["lb_batch"],
            name="lb-warmup",
            **base,
        ),
        "lb-no-warmup": RunConfig(schedule=schedules.to_dict(tail(lb_lr)), batch_size=p["lb_batch"], name="lb-no-warmup", **base),
    }
    if freeze:
        runs["lb-fc-freeze"] = runs["lb-no-warmup"].replace(
            name="lb-fc-freeze", freeze=[{"layers": "dense-stack", "start_iter": 0, "end_iter": w}]
        )
    return runs


def _distill_teacher_run(p: dict, seed: int) -> RunConfig:
    return RunConfig(
        dataset=p["dataset"],
        network=p["teacher"],
        schedule=schedules.to_dict(schedules.Constant(p["teacher_lr"])),
        optimizer=dict(SGD),
        batch_size=p["batch_size"],
        epochs=p["teacher_epochs"],
        seed=seed + 1000,
        name="teacher",
    )


def expand_recipe(name: str, seed: int = 0, overrides: dict | None = None) -> RecipePlan:
    p = recipe_params(name, overrides)
    plan = RecipePlan(name, p)
    if name == "mode-zoo":
        plan.runs = _mode_zoo_runs(p, seed)
        plan.jobs = [f"connect G-{m}" for m in "ABCDEF"]
    elif name == "sgdr-vs-step":
        sgdr = _sgdr_run(p, seed)
        step = sgdr.replace(
            schedule=schedules.to_dict(schedules.StepDecay(p["lr"], 5, tuple(p["step_milestones"]))), name="step"
        )
        plan.runs = {"sgdr": sgdr, "step": step}
        step_pairs = p["step_pairs"] or sgdr_pairs(p)
        plan.jobs = [f"connect sgdr {a}-{b}" for a, b in sgdr_pairs(p)] + [f"connect step {a}-{b}" for a, b in step_pairs]
        plan.jobs += ["heatmaps sgdr", "compare"]
    elif name == "sgdr-plane":
        if p["upstream"] is None:
            plan.runs = {"sgdr": _sgdr_run(p, seed)}
        plan.jobs = ["connect generators", "grid train_loss", "grid val_loss", "project iterates"]
    elif name in ("warmup-compare", "warmup-freeze"):
        plan.runs = _warmup_runs(p, seed, freeze=name == "warmup-freeze")
        plan.jobs = [f"heatmap {r} iter-0 vs end-of-warmup" for r in ("sb", "lb-no-warmup", "lb-warmup")]
        plan.jobs += ["heatmap lb-warmup end-of-warmup vs final", "compare"]
    elif name == "distill-cca":
        plan.runs = {"teacher": _distill_teacher_run(p, seed)}
        plan.jobs = ["distill", "heatmap distilled-teacher", "heatmap indep-teacher", "heatmap difference"]
    return plan


# -- execution ---------------------------------------------------------------


def _train_one(args) -> str:
    cfg_dict, out = args
    run = train_run(RunConfig.from_dict(cfg_dict), out)
    return "diverged" if run.diverged else "ok"


def train_all(runs: dict[str, RunConfig], out_dir: Path, workers: int = 1) -> dict[str, str]:
    """Train each run into ``out_dir/runs/<label>``; independent runs may use worker processes."""
    jobs = [(cfg.to_dict(), str(out_dir / "runs" / label)) for label, cfg in runs.items()]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            status = list(pool.map(_train_one, jobs))
    else:
        cache: dict[str, Dataset] = {}
        status = []
        for (cfg_dict, out), cfg in zip(jobs, runs.values()):
            key = json.dumps(cfg.dataset, sort_keys=True)
            data = cache.setdefault(key, make_dataset(cfg.dataset))
            status.append("diverged" if train_run(cfg, out, data=data).diverged else "ok")
    return dict(zip(runs, status))


def load_params(path: Path):
    path = Path(path)
    if not path.exists():
        raise MissingUpstreamError(f"missing upstream checkpoint {path}; run the producing step first")
    return load_checkpoint(path)


def connect(
    net, w_a, w_b, data: Dataset, stem: Path, iterations: int, lr: float, batch_size: int, seed: int, points: int = 25
) -> dict:
    """Segment and trained-curve profiles between two parameter vectors, written next to ``stem``."""
    ev = NetworkEvaluator.for_dataset(net, data)
    seg = segment_eval(w_b, w_a, ev, points)  # lambda = 0 is w_a, matching t = 0
    loss_fn = MinibatchLoss(net, data.x_train, data.y_train, batch_size, seed)
    trained = train_curve(init_curve(w_a, w_b), loss_fn, iterations, seed=seed, lr=lr)
    report = evaluate_curve(trained.curve, ev, points)
    seg.to_csv(stem.parent / f"{stem.name}_segment.csv")
    report.to_csv(stem.parent / f"{stem.name}_curve.csv")
    save_checkpoint(stem.parent / f"{stem.name}_bend.llab", net, trained.curve.theta, {"kind": "curve-bend", "iterations": iterations})
    bar = barrier_check(seg)
    endpoint_max = float(max(seg["train_loss"][0], seg["train_loss"][-1]))
    return {
        "barrier": bar.has_barrier,
        "barrier_height": bar.height,
        "barrier_location": bar.location,
        "endpoint_max_train_loss": endpoint_max,
        "segment_max_train_loss": float(seg["train_loss"].max()),
        "curve_max_train_loss": float(report["train_loss"].max()),
        "curve_diverged": trained.diverged,
        "theta": trained.curve.theta,
    }


def _public(d: dict) -> dict:
    return {k: v for k, v in d.items() if k != "theta"}


def _run_dir(out: Path, label: str) -> Path:
    return out / "runs" / label


def _lr_rows(spec, epochs: int, ipe: int, label: str) -> list[dict]:
    return [{"run": label, "epoch": e, "iteration": i, "lr": lr} for e, i, lr in schedules.lr_table(spec, epochs, ipe)]


def _mode_zoo(plan: RecipePlan, out: Path, status: dict) -> dict:
    p = plan.params
    g = load_params(_run_dir(out, "G") / f"epoch-{p['epochs']}.llab")
    data = make_dataset(p["dataset"])
    results = {}
    for m in "ABCDEF":
        if status.get(m) == "diverged":
            results[f"G{m}"] = {"skipped": f"mode {m} diverged"}
            continue
        other = load_params(_run_dir(out, m) / f"epoch-{p['epochs']}.llab")
        res = connect(g.net, g.params, other.params, data, out / f"fig1_G{m}", p["curve_iterations"], p["curve_lr"], 50, plan.runs["G"].seed, p["points"])
        results[f"G{m}"] = _public(res)
    knobs = {m: changed_knobs(plan.runs["G"], plan.runs[m]) for m in "ABCDEF"}
    return {"curves": results, "knobs": knobs}


def _sgdr_vs_step(plan: RecipePlan, out: Path) -> dict:
    p = plan.params
    seed = plan.runs["sgdr"].seed
    data = make_dataset(p["dataset"])
    s_pairs = sgdr_pairs(p)
    t_pairs = [tuple(pair) for pair in (p["step_pairs"] or s_pairs)]
    report = {"sgdr": {}, "step": {}}
    for run, fig, pairs in (("sgdr", "fig2c", s_pairs), ("step", "fig2d", t_pairs)):
        for a, b in pairs:
            ca = load_params(_run_dir(out, run) / f"epoch-{a}.llab")
            cb = load_params(_run_dir(out, run) / f"epoch-{b}.llab")
            res = connect(ca.net, ca.params, cb.params, data, out / f"{fig}_{run}_{a}-{b}", p["curve_iterations"], p["curve_lr"], p["batch_size"], seed, p["points"])
            report[run][f"{a}-{b}"] = _public(res)

    ipe = -(-len(data.x_train) // p["batch_size"])
    rows = _lr_rows(plan.runs["sgdr"].schedule_spec(), p["epochs"], ipe, "sgdr")
    rows += _lr_rows(plan.runs["step"].schedule_spec(), p["epochs"], ipe, "step")
    write_log_csv(rows, out / "fig2b_lr.csv", ("run", "epoch", "iteration", "lr"))
    sg_log = [dict(r, run="sgdr") for r in _read_metrics(out, "sgdr")] + [dict(r, run="step") for r in _read_metrics(out, "step")]
    write_log_csv(sg_log, out / "fig2a_val_acc.csv", ("run", "epoch", "val_acc", "val_loss", "train_loss"))

    # representation heatmaps: just before vs just after the last restart, first restart vs final
    restarts = [int(r) for r in schedules.restart_epochs(plan.runs["sgdr"].schedule_spec(), p["epochs"])]
    if restarts:
        last, first = restarts[-1], restarts[0]
        after = min(last + max(1, int(p["t0"]) // 2), p["epochs"])
        for tag, (a, b) in (("fig11a", (last, after)), ("fig11b", (first, p["epochs"]))):
            ca = load_params(_run_dir(out, "sgdr") / f"epoch-{a}.llab")
            cb = load_params(_run_dir(out, "sgdr") / f"epoch-{b}.llab")
            h = layer_heatmap(ca.net, ca.params, cb.net, cb.params, data.x_val)
            write_heatmap(h, out / f"{tag}_cca_epoch{a}_vs_epoch{b}")

    s_heights = [r["barrier_height"] for r in report["sgdr"].values()]
    t_heights = [r["barrier_height"] for r in report["step"].values()]
    median = statistics.median(s_heights) if s_heights else 0.0
    report["summary"] = {
        "sgdr_pairs_with_barrier": sum(h > 0 for h in s_heights),
        "sgdr_pairs": len(s_heights),
        "sgdr_median_height": median,
        "step_max_height": max(t_heights, default=0.0),
        "step_below_10pct_of_sgdr_median": bool(median > 0 and max(t_heights, default=0.0) < 0.1 * median),
    }
    dump_json(report, out / "fig2_comparison.json")
    return report


def _read_metrics(out: Path, label: str) -> list[dict]:
    import csv

    path = _run_dir(out, label) / "metrics.csv"
    if not path.exists():
        raise MissingUpstreamError(f"missing metrics log {path}")
    with path.open() as f:
        return [{k: (float(v) if k != "run" else v) for k, v in row.items()} for row in csv.DictReader(f)]


def _sgdr_plane(plan: RecipePlan, out: Path) -> dict:
    p = plan.params
    run_dir = Path(p["upstream"]) if p["upstream"] else _run_dir(out, "sgdr")
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists():
        raise MissingUpstreamError(f"missing upstream run config {cfg_path}")
    cfg = json.loads(cfg_path.read_text())
    data = make_dataset(cfg["dataset"])
    spec = schedules.from_dict(cfg["schedule"])
    if p["generators"] is not None:
        ea, eb = (int(e) for e in p["generators"])
    else:
        restarts = [int(r) for r in schedules.restart_epochs(spec, cfg["epochs"] + 1)] if isinstance(spec, schedules.CosineRestarts) else []
        if len(restarts) < 2:
            raise ValueError("need two restart epochs (or explicit generators) to define the plane")
        ea, eb = restarts[-2], restarts[-1]
    ca = load_params(run_dir / f"epoch-{ea}.llab")
    cb = load_params(run_dir / f"epoch-{eb}.llab")
    net = ca.net
    curve = connect(net, ca.params, cb.params, data, out / f"fig3_curve_{ea}-{eb}", p["curve_iterations"], p["curve_lr"], cfg["batch_size"], cfg["seed"])
    basis = plane_basis(ca.params, cb.params, curve["theta"])
    iterates = {}
    for e in range(cfg["epochs"] + 1):
        path = run_dir / f"epoch-{e}.llab"
        if path.exists():
            iterates[str(e)] = load_checkpoint(path).params
    from ..landscape import default_bounds

    bounds = default_bounds(basis, p["margin"])
    artifacts = {}
    for tag, split in (("fig3a", "train"), ("fig3b", "val")):
        x, y = (data.x_train, data.y_train) if split == "train" else (data.x_val, data.y_val)
        grid = grid_eval(basis, lambda w: evaluate(net, w, x, y)[0], bounds, p["resolution"], iterates, f"{split}_loss")
        artifacts[split] = {k: str(v) for k, v in write_grid(grid, out / f"{tag}_{split}_loss_plane").items()}
    summary = {
        "generators": {"w_a": ea, "w_b": eb, "theta": f"bend {ea}-{eb}"},
        "coords": {k: list(v) for k, v in basis.generator_coords.items()},
        "curve": _public(curve),
        "artifacts": artifacts,
    }
    dump_json(summary, out / "fig3_plane.json")
    return summary


def _dense_layers(net) -> list[int]:
    first = next(i for i, layer in enumerate(net.layers) if layer.kind == "dense")
    return [i for i in representation_layers(net) if i >= first]


def _warmup(plan: RecipePlan, out: Path) -> dict:
    p = plan.params
    w = p["warmup_iters"]
    data = make_dataset(p["dataset"])
    heat = {}
    for tag, label in (("fig5a", "sb"), ("fig5b", "lb-no-warmup"), ("fig5c", "lb-warmup")):
        c0 = load_params(_run_dir(out, label) / "iter-0.llab")
        cw = load_params(_run_dir(out, label) / f"iter-{w}.llab")
        h = layer_heatmap(c0.net, c0.params, cw.net, cw.params, data.x_val)
        write_heatmap(h, out / f"{tag}_cca_{label}_iter0_vs_iter{w}")
        heat[label] = h
    cw = load_params(_run_dir(out, "lb-warmup") / f"iter-{w}.llab")
    cf = load_params(_run_dir(out, "lb-warmup") / f"epoch-{p['epochs']}.llab")
    write_heatmap(layer_heatmap(cw.net, cw.params, cf.net, cf.params, data.x_val), out / f"fig5d_cca_lb-warmup_iter{w}_vs_final")

    net = cw.net
    dense = _dense_layers(net)
    diag_rows = []
    for label, h in heat.items():
        for i, layer in enumerate(h.layers_a):
            diag_rows.append({"run": label, "layer": h.labels_a[i], "similarity": float(h.matrix[i, i])})
    write_log_csv(diag_rows, out / "fig4c_cca_diagonal.csv", ("run", "layer", "similarity"))

    def dense_mean(h: SimilarityHeatmap) -> float:
        idx = [h.layers_a.index(l) for l in dense]
        return float(np.mean([h.matrix[i, i] for i in idx]))

    at_warmup = {}
    curves = []
    for label in plan.runs:
        ck = load_params(_run_dir(out, label) / f"iter-{w}.llab")
        at_warmup[label] = evaluate(ck.net, ck.params, data.x_val, data.y_val)[1]
        curves += [dict(r, run=label) for r in _read_metrics(out, label)]
    fig = "fig4d" if "lb-fc-freeze" in plan.runs else "fig4a"
    write_log_csv(curves, out / f"{fig}_val_acc.csv", ("run", "epoch", "iteration", "val_acc", "train_loss"))
    ipe = {label: -(-len(data.x_train) // cfg.batch_size) for label, cfg in plan.runs.items()}
    lr_rows = []
    for label, cfg in plan.runs.items():
        lr_rows += _lr_rows(cfg.schedule_spec(), p["epochs"], ipe[label], label)
    write_log_csv(lr_rows, out / "fig4b_lr.csv", ("run", "epoch", "iteration", "lr"))

    report = {
        "warmup_iters": w,
        "val_acc_end_of_warmup": at_warmup,
        "dense_stack_cca_iter0_vs_end_of_warmup": {label: dense_mean(h) for label, h in heat.items()},
        "dense_stack_layers": [net.layers[i].kind + f"@{i}" for i in dense],
    }
    if "lb-fc-freeze" in at_warmup:
        a, b = at_warmup["lb-warmup"], at_warmup["lb-fc-freeze"]
        report["freeze_vs_warmup_gap_points"] = 100 * abs(a - b)
        report["both_beat_no_warmup"] = bool(min(a, b) > at_warmup["lb-no-warmup"])
    dump_json(report, out / "warmup_report.json")
    return report


def _distill(plan: RecipePlan, out: Path) -> dict:
    p = plan.params
    seed = plan.runs["teacher"].seed - 1000
    teacher = load_params(_run_dir(out, "teacher") / f"epoch-{p['teacher_epochs']}.llab")
    data = make_dataset(p["dataset"])
    from .networks import resolve_network

    cfg = DistillConfig(
        teacher.net,
        teacher.params,
        resolve_network(p["student"]),
        temperature=p["temperature"],
        schedule=schedules.Constant(p["lr"]),
        optimizer=dict(SGD),
        epochs=p["epochs"],
        batch_size=p["batch_size"],
        seed=seed,
    )
    res = distill_train(cfg, data)
    student_net = cfg.student_net
    save_checkpoint(out / "student_distilled.llab", student_net, res.student, {"kind": "distilled", "temperature": p["temperature"], "seed": seed})
    save_checkpoint(out / "student_indep.llab", student_net, res.baseline, {"kind": "hard-label", "seed": seed})
    rows = [
        {"epoch": e, "student_train_loss": a, "student_val_acc": b, "baseline_train_loss": c, "baseline_val_acc": d}
        for e, a, b, c, d in zip(
            res.report.epochs,
            res.report.student_train_loss,
            res.report.student_val_acc,
            res.report.baseline_train_loss,
            res.report.baseline_val_acc,
        )
    ]
    write_log_csv(rows, out / "distill_metrics.csv", tuple(rows[0]))
    panels = distill_heatmaps(teacher.net, teacher.params, student_net, res.student, res.baseline, data.x_val, out)
    report = res.report.to_dict()
    report["difference_range"] = [float(panels["difference"].matrix.min()), float(panels["difference"].matrix.max())]
    dump_json(report, out / "distill_report.json")
    return report


def distill_heatmaps(teacher_net, teacher_params, student_net, distilled, indep, probe, out: Path) -> dict[str, SimilarityHeatmap]:
    """Teacher-vs-student similarity panels and their absolute difference (rows = teacher layers)."""
    h1 = layer_heatmap(teacher_net, teacher_params, student_net, distilled, probe)
    h2 = layer_heatmap(teacher_net, teacher_params, student_net, indep, probe)
    diff = difference_heatmap(h1, h2)
    write_heatmap(h1, Path(out) / "fig6a_cca_teacher_vs_distilled")
    write_heatmap(h2, Path(out) / "fig6b_cca_teacher_vs_indep")
    write_heatmap(diff, Path(out) / "fig6c_cca_difference")
    return {"distilled": h1, "indep": h2, "difference": diff}


def run_recipe(name: str, out_dir, seed: int = 0, overrides: dict | None = None, workers: int = 1) -> dict:
    """Expand ``name``, train its runs, run its analyses; returns (and writes) ``summary.json``."""
    plan = expand_recipe(name, seed, overrides)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_json({"recipe": name, "seed": seed, "params": plan.params, "jobs": plan.jobs}, out / "recipe.json")
    status = train_all(plan.runs, out, workers)
    if name == "mode-zoo":
        result = _mode_zoo(plan, out, status)
    elif name == "sgdr-vs-step":
        result = _sgdr_vs_step(plan, out)
    elif name == "sgdr-plane":
        result = _sgdr_plane(plan, out)
    elif name in ("warmup-compare", "warmup-freeze"):
        result = _warmup(plan, out)
    else:
        result = _distill(plan, out)
    summary = {"recipe": name, "seed": seed, "runs": status, "result": result}
    dump_json(summary, out / "summary.json")
    return summary
