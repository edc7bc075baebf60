"""Command-line entry point: ``ftfoot <command> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("ftfoot")

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ------------------------------------------------------------------ config


@dataclasses.dataclass
class CostmapSettings:
    resolution: float = 0.2
    max_range: float = 20.0
    fusion: str = "mean"


@dataclasses.dataclass
class SynthSettings:
    seed: int = 0
    width: int = 64
    height: int = 64
    val_fraction: float = 0.2
    test_fraction: float = 0.0


@dataclasses.dataclass
class RunConfig:
    gfn: object = None
    fsm: object = None
    train: object = None
    planner: object = None
    rollout: object = None
    costmap: CostmapSettings = None
    synth: SynthSettings = None
    data_root: str | None = None
    out_dir: str | None = None


def _section_types():
    from .fsm import FsmConfig
    from .gfn import GfnConfig
    from .planner import PlannerParams, RolloutParams
    from .trainer import TrainConfig

    return {
        "gfn": GfnConfig,
        "fsm": FsmConfig,
        "train": TrainConfig,
        "planner": PlannerParams,
        "rollout": RolloutParams,
        "costmap": CostmapSettings,
        "synth": SynthSettings,
    }


def parse_run_config(doc: dict, env=None) -> RunConfig:
    """Build a RunConfig from a JSON object, rejecting unknown keys anywhere."""
    if not isinstance(doc, dict):
        raise UsageError("config must be a JSON object")
    types = _section_types()
    allowed = set(types) | {"data_root", "out_dir"}
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise UsageError(f"unknown config key(s): {', '.join(unknown)}; allowed: {', '.join(sorted(allowed))}")
    sections = {}
    for name, cls in types.items():
        body = doc.get(name, {})
        if not isinstance(body, dict):
            raise UsageError(f"config section {name!r} must be an object")
        fields = {f.name for f in dataclasses.fields(cls)}
        bad = sorted(set(body) - fields)
        if bad:
            raise UsageError(f"unknown key(s) in config section {name!r}: {', '.join(bad)}")
        try:
            sections[name] = cls(**body)
        except (TypeError, ValueError) as exc:
            raise UsageError(f"invalid config section {name!r}: {exc}") from exc
    cfg = RunConfig(**sections, data_root=doc.get("data_root"), out_dir=doc.get("out_dir"))
    env = os.environ if env is None else env
    if env.get("FTFOOT_SEED"):
        try:
            seed = int(env["FTFOOT_SEED"])
        except ValueError as exc:
            raise UsageError(f"FTFOOT_SEED must be an integer, got {env['FTFOOT_SEED']!r}") from exc
        cfg.train.seed = seed
        cfg.planner.seed = seed
        cfg.rollout.seed = seed
        cfg.synth.seed = seed
    return cfg


def load_run_config(path) -> RunConfig:
    if path is None:
        return parse_run_config({})
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_run_config(doc)


def _xy(text: str):
    try:
        x, y = (float(v) for v in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected x,y in meters, got {text!r}") from exc
    return x, y


def _write_json(path: Path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ------------------------------------------------------------------ commands


def cmd_synth_gen(args, cfg: RunConfig):
    from .synthdata import DatasetWriter, generate_scene, random_camera, random_scene_spec, scene_to_sample

    s = cfg.synth
    n = args.count
    n_test = int(round(n * s.test_fraction))
    n_val = int(round(n * s.val_fraction))
    n_train = n - n_val - n_test
    writer = DatasetWriter(args.out)
    for i in range(n):
        seed = s.seed * 100003 + i
        scene = generate_scene(random_scene_spec(seed), random_camera(seed, s.width, s.height), frame_id=i)
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        writer.write(scene_to_sample(scene, f"{i:06d}"), split)
    print(f"wrote {n} samples to {args.out} (train {n_train}, val {n_val}, test {n_test})")


def _load_split(root, split):
    from .synthdata import SampleDataset

    samples = SampleDataset(root, [split]).load()
    if not samples:
        raise RuntimeError(f"no readable samples in split {split!r} of {root}")
    return samples


def cmd_train(args, cfg: RunConfig):
    from .synthdata import SampleDataset
    from .trainer import fit

    data = args.data or cfg.data_root
    out = args.out or cfg.out_dir
    if not data or not out:
        raise UsageError("train needs --data and --out (or data_root/out_dir in the config)")
    train = _load_split(data, "train")
    val = SampleDataset(data, ["val"]).load()
    result = fit(train, cfg.train, cfg.gfn, cfg.fsm, val_samples=val or None, out_dir=out, resume_from=args.resume)
    last = result.history[-1] if result.history else {}
    print(f"trained {len(result.history)} steps; final loss {last.get('total', float('nan')):.5f}; checkpoint {result.checkpoint}")
    if result.evals:
        print(json.dumps(result.evals[-1], sort_keys=True))


def _format_table(metrics: dict) -> str:
    rows = [f"{k:<28} {v:.4f}" if isinstance(v, float) else f"{k:<28} {v}" for k, v in metrics.items()]
    return "\n".join(rows)


def cmd_eval(args, cfg: RunConfig):
    from .costmap import FREESPACE_THRESHOLD
    from .planner import freespace_metrics
    from .synthdata import _read_png

    samples = _load_split(args.data, args.split)
    if any(s.gt_traversable is None for s in samples):
        raise RuntimeError("evaluation needs gt_traversable.png for every sample")
    gt = np.stack([np.asarray(s.gt_traversable).reshape(s.frame.shape) for s in samples])
    normal_err = None
    if args.checkpoint:
        import torch

        from .trainer import collate, model_from_checkpoint, predict

        model, _ = model_from_checkpoint(args.checkpoint)
        batch = collate(samples)
        with torch.no_grad():
            out = predict(model, batch.x)
        p = out["p_trav"][:, 0].double().numpy()
        # cost = 1 - p; freespace is cost < 0.5
        pred = (1.0 - p) < FREESPACE_THRESHOLD
        valid = batch.normals_valid
        if valid.any():
            cos = (out["normals"].double() * batch.normals.double()).sum(1, keepdim=True).clamp(-1, 1)
            normal_err = float(torch.rad2deg(torch.arccos(cos))[valid].mean())
    else:
        pred = []
        for s in samples:
            path = Path(args.pred_dir) / f"{s.name}.png"
            if not path.exists():
                raise RuntimeError(f"missing prediction {path}")
            pred.append(_read_png(path) > 127)
        pred = np.stack(pred)
    m = freespace_metrics(pred, gt)
    report = {**m.as_dict(), "undefined": list(m.undefined), "normal_angular_error_deg": normal_err, "samples": len(samples)}
    print(_format_table({k: v for k, v in report.items() if k != "undefined"}))
    out = Path(args.out) if args.out else Path(args.checkpoint or args.pred_dir) / f"eval_{args.split}.json"
    _write_json(out, report)
    print(f"wrote {out}")


def cmd_map(args, cfg: RunConfig):
    import torch

    from .costmap import GlobalCostMap, integrate_frame
    from .trainer import collate, model_from_checkpoint, predict

    samples = _load_split(args.data, args.split)
    model, _ = model_from_checkpoint(args.checkpoint)
    c = cfg.costmap
    first = samples[0].frame.pose.translation
    cmap = GlobalCostMap.empty(c.resolution, c.resolution, origin=(first[0], first[1]), resolution=c.resolution, fusion=c.fusion)
    batch = collate(samples)
    with torch.no_grad():
        p = predict(model, batch.x)["p_trav"][:, 0].double().numpy()
    for s, prob in zip(samples, p):
        integrate_frame(cmap, prob, s.frame, c.max_range)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    cmap.save(out)
    print(f"wrote {out}: {cmap.shape[1]}x{cmap.shape[0]} cells at {cmap.resolution} m, bounds {cmap.bounds}")


def cmd_plan(args, cfg: RunConfig):
    from .costmap import GlobalCostMap
    from .planner import Path as PlanPath
    from .planner import cross_track_error, hausdorff, render_svg, rollout, rrt_star_plan, success_rate

    cmap = GlobalCostMap.load(args.map)
    params = cfg.planner
    if args.seed is not None:
        params = dataclasses.replace(params, seed=args.seed)
    for name, p in (("start", args.start), ("goal", args.goal)):
        if not cmap.contains(*p):
            raise UsageError(f"--{name} {p} lies outside the map bounds {cmap.bounds}")
    path = rrt_star_plan(cmap, args.start, args.goal, params)
    rp = cfg.rollout
    if args.noise is not None:
        rp = dataclasses.replace(rp, heading_noise=args.noise)
    ro = rollout(path, cmap, rp)
    metrics = {
        "path_length": path.length,
        "waypoints": len(path.waypoints),
        "cte": cross_track_error(ro.trace, path),
        "rollout_success": ro.success,
        "sr": success_rate(path, cmap, args.trials, rp),
        "trials": args.trials,
        "hd": None,
    }
    paths = [path]
    if args.gt_path:
        gt = PlanPath.from_json(Path(args.gt_path).read_text())
        metrics["hd"] = hausdorff(path, gt, cmap.resolution)
        paths.append(gt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "path.json").write_text(path.to_json() + "\n")
    (out / "plan.svg").write_text(render_svg(cmap, paths, [ro.trace], args.start, args.goal))
    _write_json(out / "plan_metrics.json", metrics)
    print(_format_table(metrics))
    print(f"wrote {out / 'path.json'}, {out / 'plan.svg'}, {out / 'plan_metrics.json'}")


def cmd_gradcheck(args, cfg: RunConfig):
    from .gradsuite import run_suite

    reports, elapsed = run_suite(seed=args.seed, tolerance=args.tolerance)
    failed = 0
    for r in reports:
        if args.verbose or not r.passed:
            print(r)
        failed += not r.passed
    print(f"{len(reports) - failed}/{len(reports)} gradient checks passed in {elapsed:.1f} s")
    return EXIT_FAILURE if failed else EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ftfoot", description="Self-supervised traversability estimation pipeline.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    s = sub.add_parser("synth-gen", help="generate a synthetic RGB-D dataset")
    s.add_argument("--config", help="RunConfig JSON (synth section sets seed, size and split fractions)")
    s.add_argument("--out", required=True, help="dataset root to write")
    s.add_argument("--count", type=int, required=True, help="number of scenes")
    s.set_defaults(func=cmd_synth_gen)

    s = sub.add_parser("train", help="train the network on a dataset")
    s.add_argument("--config", help="RunConfig JSON")
    s.add_argument("--data", help="dataset root (train split; val split evaluated when present)")
    s.add_argument("--out", help="output directory for checkpoints and log.jsonl")
    s.add_argument("--resume", help="checkpoint directory to resume from")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="freespace metrics and normal error on a split")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint", help="checkpoint directory")
    src.add_argument("--pred-dir", help="directory of <sample>.png binary traversability masks")
    s.add_argument("--data", required=True, help="dataset root")
    s.add_argument("--split", default="val", help="split to evaluate (default: val)")
    s.add_argument("--out", help="JSON report path (default: eval_<split>.json next to the predictions)")
    s.add_argument("--config", help="RunConfig JSON")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("map", help="accumulate a global cost map from predictions")
    s.add_argument("--checkpoint", required=True, help="checkpoint directory")
    s.add_argument("--data", required=True, help="dataset root")
    s.add_argument("--split", default="test", help="split whose frames are integrated (default: test)")
    s.add_argument("--out", required=True, help="output .costmap file")
    s.add_argument("--config", help="RunConfig JSON (costmap section)")
    s.set_defaults(func=cmd_map)

    s = sub.add_parser("plan", help="plan a path with RRT* and score it by rollouts")
    s.add_argument("--map", required=True, help=".costmap file")
    s.add_argument("--start", type=_xy, required=True, help="start x,y in meters (write --start=-1,2 when x is negative)")
    s.add_argument("--goal", type=_xy, required=True, help="goal x,y in meters")
    s.add_argument("--gt-path", help="reference path JSON for the Hausdorff distance")
    s.add_argument("--out", default=".", help="output directory (default: current)")
    s.add_argument("--trials", type=int, default=30, help="rollout trials for the success rate (default: 30)")
    s.add_argument("--noise", type=float, help="heading noise std in rad per step (overrides config)")
    s.add_argument("--seed", type=int, help="planner seed (overrides config)")
    s.add_argument("--config", help="RunConfig JSON (planner and rollout sections)")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("gradcheck", help="run the finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=0, help="instance seed (default: 0)")
    s.add_argument("--tolerance", type=float, default=1e-4, help="max relative error (default: 1e-4)")
    s.add_argument("--verbose", action="store_true", help="print every check, not only failures")
    s.add_argument("--config", help="ignored; accepted for uniformity")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_run_config(getattr(args, "config", None))
        if args.command == "plan" and args.trials < 1:
            raise UsageError("--trials must be >= 1")
        code = args.func(args, cfg)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        print(f"ftfoot {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failures map to exit 2
        print(f"ftfoot {args.command}: error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
