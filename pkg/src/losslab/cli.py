"""Command-line entry point: ``losslab <subcommand> ...``.

Every subcommand exits 0 on success. Failures print one JSON object
``{"error": <type>, "message": <text>}`` on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import schedules
from .checkpoint import load_checkpoint, save_checkpoint
from .evaluation import NetworkEvaluator
from .landscape import barrier_check, default_bounds, grid_eval, plane_basis, segment_eval
from .nn import evaluate
from .repsim import layer_heatmap


class CLIError(Exception):
    pass


class JSONArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        _fail("UsageError", f"{self.prog}: {message}", 2)


def _fail(kind: str, message: str, code: int = 1):
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")
    sys.exit(code)


def _json_arg(text: str | None):
    """Inline JSON, or a path to a JSON file."""
    if text is None:
        return None
    path = Path(text)
    if path.exists():
        return json.loads(path.read_text())
    return json.loads(text)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_for(args, *checkpoints):
    from .harness.data import make_dataset

    spec = _json_arg(args.dataset)
    if spec is None and args.config:
        spec = _json_arg(args.config).get("dataset")
    if spec is None:
        for ck in checkpoints:
            if "dataset" in ck.meta:
                spec = ck.meta["dataset"]
                break
    if spec is None:
        raise CLIError("no dataset: pass --dataset, --config, or use checkpoints written by `train`")
    return make_dataset(spec)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_train(args) -> None:
    from .harness.config import RunConfig
    from .harness.train import train_run

    if not args.config:
        raise CLIError("train needs --config <run config JSON>")
    cfg = RunConfig.from_dict(_json_arg(args.config))
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    run = train_run(cfg, _out_dir(args))
    _print({"out_dir": args.out_dir, "diverged": run.diverged, "final": run.log[-1], "checkpoints": sorted(run.checkpoints)})
    if run.diverged:
        raise CLIError("training diverged; partial artifacts kept")


def cmd_connect(args) -> None:
    from .harness.recipes import connect

    a, b = load_checkpoint(args.ckpt_a), load_checkpoint(args.ckpt_b)
    if a.net != b.net:
        raise CLIError("checkpoints have different architectures")
    data = _dataset_for(args, a, b)
    out = _out_dir(args)
    res = connect(a.net, a.params, b.params, data, out / args.name, args.iterations, args.lr, args.batch_size, args.seed or 0, args.points)
    res.pop("theta")
    _print(res)


def cmd_segment(args) -> None:
    a, b = load_checkpoint(args.ckpt_a), load_checkpoint(args.ckpt_b)
    data = _dataset_for(args, a, b)
    rep = segment_eval(b.params, a.params, NetworkEvaluator.for_dataset(a.net, data), args.points)
    out = _out_dir(args)
    rep.to_csv(out / f"{args.name}.csv")
    bar = barrier_check(rep, args.metric)
    _print({"has_barrier": bar.has_barrier, "height": bar.height, "location": bar.location, "metric": args.metric})


def cmd_plane(args) -> None:
    from .harness.export import write_grid

    a, b, t = (load_checkpoint(p) for p in (args.ckpt_a, args.ckpt_b, args.bend))
    data = _dataset_for(args, a, b)
    basis = plane_basis(a.params, b.params, t.params)
    iterates = {Path(p).stem: load_checkpoint(p).params for p in args.iterates}
    out = _out_dir(args)
    bounds = default_bounds(basis, args.margin)
    files = {}
    for split in args.splits:
        x, y = (data.x_train, data.y_train) if split == "train" else (data.x_val, data.y_val)
        grid = grid_eval(basis, lambda w: evaluate(a.net, w, x, y)[0], bounds, args.resolution, iterates, f"{split}_loss")
        files[split] = {k: str(v) for k, v in write_grid(grid, out / f"{args.name}_{split}_loss").items()}
    _print({"coords": {k: list(v) for k, v in basis.generator_coords.items()}, "files": files})


def cmd_cca(args) -> None:
    from .harness.export import write_heatmap

    a, b = load_checkpoint(args.ckpt_a), load_checkpoint(args.ckpt_b)
    data = _dataset_for(args, a, b)
    h = layer_heatmap(a.net, a.params, b.net, b.params, data.x_val, args.layers_a, args.layers_b, conv_mode=args.conv_mode)
    files = write_heatmap(h, _out_dir(args) / args.name)
    _print({"diagonal": h.diagonal().tolist() if h.matrix.shape[0] == h.matrix.shape[1] else None, "files": {k: str(v) for k, v in files.items()}})


def cmd_distill(args) -> None:
    from .distill import DistillConfig, distill_train
    from .harness.config import dump_json
    from .harness.networks import resolve_network

    teacher = load_checkpoint(args.teacher)
    data = _dataset_for(args, teacher)
    cfg = DistillConfig(
        teacher.net,
        teacher.params,
        resolve_network(args.student),
        temperature=args.temperature,
        schedule=schedules.Constant(args.lr),
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed or 0,
    )
    res = distill_train(cfg, data)
    out = _out_dir(args)
    meta = {"dataset": teacher.meta.get("dataset"), "seed": cfg.seed, "temperature": cfg.temperature}
    save_checkpoint(out / "student_distilled.llab", cfg.student_net, res.student, {**meta, "kind": "distilled"})
    save_checkpoint(out / "student_indep.llab", cfg.student_net, res.baseline, {**meta, "kind": "hard-label"})
    dump_json(res.report.to_dict(), out / "distill_report.json")
    _print({"student_kl_to_teacher": res.report.student_kl_to_teacher, "baseline_kl_to_teacher": res.report.baseline_kl_to_teacher})


def cmd_distill_heatmap(args) -> None:
    from .harness.recipes import distill_heatmaps

    t, s, b = (load_checkpoint(p) for p in (args.teacher, args.distilled, args.indep))
    if s.net != b.net:
        raise CLIError("distilled and independent students have different architectures")
    data = _dataset_for(args, t, s)
    panels = distill_heatmaps(t.net, t.params, s.net, s.params, b.params, data.x_val, _out_dir(args))
    d = panels["difference"].matrix
    _print({"difference_min": float(d.min()), "difference_max": float(d.max())})


def cmd_lr_dump(args) -> None:
    spec_arg = args.schedule
    if spec_arg in schedules.PRESETS:
        spec = schedules.PRESETS[spec_arg]
    elif spec_arg is None and args.config:
        spec = schedules.from_dict(_json_arg(args.config)["schedule"])
    elif spec_arg is not None:
        spec = schedules.from_dict(_json_arg(spec_arg))
    else:
        raise CLIError("lr-dump needs --schedule (preset name or JSON) or --config")
    stream = sys.stdout if args.out is None else open(args.out, "w", newline="")
    try:
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(["epoch", "iteration", "lr"])
        for e, i, lr in schedules.lr_table(spec, args.epochs, args.iters_per_epoch):
            w.writerow([e, i, repr(lr)])
    finally:
        if stream is not sys.stdout:
            stream.close()


def _parse_set(items: list[str]) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise CLIError(f"--set expects key=value, got {item!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def cmd_recipe(args) -> None:
    from .harness.recipes import run_recipe

    overrides = _json_arg(args.config) or {}
    overrides.update(_parse_set(args.set))
    summary = run_recipe(args.name, args.out_dir, args.seed or 0, overrides, workers=args.threads)
    _print({"recipe": args.name, "out_dir": args.out_dir, "runs": summary["runs"]})


def build_parser() -> argparse.ArgumentParser:
    from .harness.recipes import RECIPES

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file or inline JSON (run config, or recipe overrides)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out-dir", default="out")
    common.add_argument("--threads", type=int, default=1, help="worker processes for independent runs")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--dataset", help="dataset spec (JSON file or inline); default: from checkpoint metadata")
    data.add_argument("--name", default=None, help="artifact file stem")

    p = JSONArgumentParser(prog="losslab", description=__doc__.splitlines()[0], parents=[common])
    sub = p.add_subparsers(dest="command", required=True, parser_class=JSONArgumentParser)

    s = sub.add_parser("train", parents=[common], help="train one run from a config")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("connect", parents=[common, data], help="train a bend point between two checkpoints")
    s.add_argument("ckpt_a")
    s.add_argument("ckpt_b")
    s.add_argument("--iterations", type=int, default=1000)
    s.add_argument("--lr", type=float, default=0.05)
    s.add_argument("--batch-size", type=int, default=50)
    s.add_argument("--points", type=int, default=25)
    s.set_defaults(func=cmd_connect, default_name="connect")

    s = sub.add_parser("segment", parents=[common, data], help="metrics along the straight segment")
    s.add_argument("ckpt_a")
    s.add_argument("ckpt_b")
    s.add_argument("--points", type=int, default=25)
    s.add_argument("--metric", default="train_loss")
    s.set_defaults(func=cmd_segment, default_name="segment")

    s = sub.add_parser("plane", parents=[common, data], help="loss grid on the plane through three checkpoints")
    s.add_argument("ckpt_a")
    s.add_argument("ckpt_b")
    s.add_argument("bend")
    s.add_argument("--iterates", nargs="*", default=[])
    s.add_argument("--resolution", type=int, default=21)
    s.add_argument("--margin", type=float, default=0.25)
    s.add_argument("--splits", nargs="+", choices=["train", "val"], default=["train", "val"])
    s.set_defaults(func=cmd_plane, default_name="plane")

    s = sub.add_parser("cca", parents=[common, data], help="layer-by-layer SVCCA heatmap of two checkpoints")
    s.add_argument("ckpt_a")
    s.add_argument("ckpt_b")
    s.add_argument("--layers-a", type=int, nargs="*", default=None)
    s.add_argument("--layers-b", type=int, nargs="*", default=None)
    s.add_argument("--conv-mode", choices=["dft", "flat"], default="dft")
    s.set_defaults(func=cmd_cca, default_name="cca")

    s = sub.add_parser("distill", parents=[common, data], help="distil a student from a teacher checkpoint")
    s.add_argument("--teacher", required=True)
    s.add_argument("--student", default="tiny-cnn")
    s.add_argument("-T", "--temperature", type=float, default=5.0)
    s.add_argument("--epochs", type=int, default=10)
    s.add_argument("--lr", type=float, default=0.01)
    s.add_argument("--batch-size", type=int, default=50)
    s.set_defaults(func=cmd_distill, default_name="distill")

    s = sub.add_parser("distill-heatmap", parents=[common, data], help="teacher/student similarity panels and difference")
    s.add_argument("teacher")
    s.add_argument("distilled")
    s.add_argument("indep")
    s.set_defaults(func=cmd_distill_heatmap, default_name="distill")

    s = sub.add_parser("lr-dump", parents=[common], help="learning rate per (epoch, iteration) as CSV")
    s.add_argument("--schedule", help=f"preset ({', '.join(schedules.PRESETS)}) or schedule JSON")
    s.add_argument("--epochs", type=int, default=200)
    s.add_argument("--iters-per-epoch", type=int, default=1)
    s.add_argument("--out", default=None, help="CSV path (default stdout)")
    s.set_defaults(func=cmd_lr_dump)

    s = sub.add_parser("recipe", parents=[common], help="run a named experiment recipe")
    s.add_argument("name", choices=RECIPES)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a recipe parameter (JSON value)")
    s.set_defaults(func=cmd_recipe)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "name", None) is None and hasattr(args, "default_name"):
        args.name = args.default_name
    try:
        args.func(args)
    except SystemExit:
        raise
    except Exception as exc:  # reported as JSON, never as a traceback
        _fail(type(exc).__name__, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
