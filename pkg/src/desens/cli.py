"""Command-line entry point: evaluate, desensitize, simulate, ablate, losses-check.

Exit codes: 0 success, 1 usage, 2 data error, 3 check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

from .core import ValidationError, dumps, parse_predictions, parse_sequence, serialize_sequence
from .harness import AblationPlan, NoiseSpec, SceneSpec, corrupt, generate, run_ablation
from .losses import LossConfig, check_gradients
from .metrics import RegionWeights, coverage_ratio, evaluate_sequence
from .pipeline import ABLATION, PipelineConfig, run_pipeline
from .postproc import DSJMethod, JointConfig
from .renderer import apply_with_mask, parse_style, read_image, write_image
from .tracker import TrackerConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_CHECK = 0, 1, 2, 3
FD_TOLERANCE = 1e-4


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    joint: JointConfig = field(default_factory=JointConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    weights: RegionWeights = field(default_factory=RegionWeights)
    style: str = "mosaic:8"
    dj: bool = True
    dsj: bool = True
    kfj: bool = True
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        parse_style(self.style)
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")

    @property
    def pipeline(self) -> PipelineConfig:
        return PipelineConfig(self.dj, self.dsj, self.kfj, self.joint, self.tracker)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["joint"]["dsj_method"] = self.joint.dsj_method.value
        return d

    @classmethod
    def from_dict(cls, doc: Any) -> RunConfig:
        if not isinstance(doc, dict):
            raise ValidationError("config must be an object")
        sections = {"joint": JointConfig, "tracker": TrackerConfig, "loss": LossConfig, "weights": RegionWeights}
        known = {f.name for f in fields(cls)}
        kw = {}
        for key, value in doc.items():
            if key not in known:
                raise ValidationError(f"unknown config key {key!r}")
            if key in sections:
                kw[key] = _section(sections[key], value, key)
            else:
                kw[key] = value
        return cls(**kw)


def _section(typ, value: Any, where: str):
    if not isinstance(value, dict):
        raise ValidationError(f"config section {where!r} must be an object")
    names = {f.name for f in fields(typ)}
    bad = sorted(set(value) - names)
    if bad:
        raise ValidationError(f"unknown keys in {where!r}: {', '.join(bad)}")
    return typ(**value)


def _parse_weights(text: str) -> RegionWeights:
    try:
        parts = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"--weights expects three numbers, got {text!r}") from None
    if len(parts) != 3:
        raise UsageError(f"--weights expects three numbers, got {text!r}")
    return RegionWeights(*parts)


def effective_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = RunConfig.from_dict(json.loads(Path(args.config).read_text()))
    if getattr(args, "weights", None) is not None:
        cfg = replace(cfg, weights=_parse_weights(args.weights))
    if getattr(args, "window", None) is not None:
        cfg = replace(cfg, tracker=replace(cfg.tracker, window=args.window))
    if getattr(args, "dsj_method", None) is not None:
        cfg = replace(cfg, joint=replace(cfg.joint, dsj_method=DSJMethod(args.dsj_method)))
    if getattr(args, "style", None) is not None:
        cfg = replace(cfg, style=args.style)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "jobs", None) is not None:
        cfg = replace(cfg, jobs=args.jobs)
    if getattr(args, "pipeline", None) is not None:
        dj, dsj, kfj = (True, True, True) if args.pipeline == "full" else ABLATION[args.pipeline]
        cfg = replace(cfg, dj=dj, dsj=dsj, kfj=kfj)
    return cfg


def _write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def _load_spec(path: str | None, seed: int | None) -> tuple[SceneSpec, NoiseSpec, dict]:
    doc = json.loads(Path(path).read_text()) if path else {}
    if not isinstance(doc, dict):
        raise ValidationError("spec must be an object")
    bad = sorted(set(doc) - {"scene", "noise", "seeds"})
    if bad:
        raise ValidationError(f"unknown spec keys: {', '.join(bad)}")
    scene = _section(SceneSpec, doc.get("scene", {}), "scene")
    noise_doc = dict(doc.get("noise", {}))
    for k in ("tp_confidence", "fp_confidence"):
        if k in noise_doc:
            noise_doc[k] = tuple(noise_doc[k])
    noise = _section(NoiseSpec, noise_doc, "noise")
    if seed is not None:
        scene, noise = replace(scene, seed=seed), replace(noise, seed=seed)
    return scene, noise, doc


# ---------------------------------------------------------------------------
# commands

def cmd_evaluate(args, cfg: RunConfig) -> int:
    gt = parse_sequence(Path(args.gt).read_bytes())
    # confidence is optional here: unscored objects rank as confidence 1
    pred = parse_sequence(Path(args.pred).read_bytes())
    if (gt.width, gt.height) != (pred.width, pred.height):
        raise ValidationError("ground truth and predictions disagree on frame size")
    report = evaluate_sequence(gt, pred, cfg.weights).to_dict()
    report["weights"] = asdict(cfg.weights)
    _write(Path(args.out), dumps(report))
    for k in ("mioff", "ioff50", "ioff75"):
        if k in report:
            print(f"{k:>7s} {report[k]:.4f}")
    for cat in sorted(report["ap"]):
        print(f"{cat:>10s} AP {report['ap'][cat]:.4f} AP50 {report['ap50'][cat]:.4f} AP75 {report['ap75'][cat]:.4f}")
    return EXIT_OK


def _frame_files(frames_dir: Path) -> dict[str, Path]:
    if not frames_dir.is_dir():
        raise ValidationError(f"frames directory {frames_dir} not found")
    return {p.name: p for p in sorted(frames_dir.glob("*.ppm"))}


def cmd_desensitize(args, cfg: RunConfig) -> int:
    frames_dir, out_dir = Path(args.frames), Path(args.out)
    pred = parse_predictions(Path(args.pred).read_bytes())
    files = _frame_files(frames_dir)
    names = {f.frame_index: f.image_path or f"{f.frame_index:06d}.ppm" for f in pred.frames}
    missing = sorted(n for n in names.values() if n not in files)
    if missing:
        raise ValidationError(f"missing frame file {frames_dir / missing[0]}")
    style = parse_style(cfg.style)
    out = run_pipeline(pred, cfg.pipeline)
    by_name = {names[f.frame_index]: f for f in out.frames}

    audit_frames = []
    for name, path in files.items():
        raw = path.read_bytes()
        img = read_image(raw)
        if (img.width, img.height) != (pred.width, pred.height):
            raise ValidationError(f"{path}: {img.width}x{img.height} does not match {pred.width}x{pred.height}")
        res = by_name.get(name)
        if res is None or not res.accepted:
            _write(out_dir / name, raw)
        else:
            regions = []
            for r in res.accepted:
                img, applied = apply_with_mask(img, r, style)
                regions.append({"category": r.category.value, "bbox": [float(v) for v in r.source_box.as_list()],
                                "confidence": float(r.confidence), "track_id": r.track_id,
                                "coasted": r.coasted, "from_box": r.from_box, "area": r.mask.area,
                                "coverage": coverage_ratio(applied, r.mask)})
            _write(out_dir / name, write_image(img))
        if res is not None:
            audit_frames.append({
                "frame_index": res.frame_index, "image": name,
                "accepted": regions if res.accepted else [],
                "rejected": [x.to_dict() for x in res.rejected],
            })
    audit = {"config": cfg.to_dict(), "pipeline": cfg.pipeline.name, "frames": audit_frames}
    _write(out_dir / "audit.json", dumps(audit))
    _write(out_dir / "regions.json", serialize_sequence(out.as_predictions(pred.sequence_id)))
    n_acc = sum(len(f["accepted"]) for f in audit_frames)
    n_rej = sum(len(f["rejected"]) for f in audit_frames)
    print(f"{len(files)} frames, {n_acc} regions redacted, {n_rej} rejections ({cfg.pipeline.name})")
    return EXIT_OK


def cmd_simulate(args, cfg: RunConfig) -> int:
    scene, noise, _ = _load_spec(args.spec, getattr(args, "seed", None))
    out_dir = Path(args.out)
    gt, images = generate(scene, render=True)
    pred = corrupt(gt, noise)
    _write(out_dir / "gt.json", serialize_sequence(gt))
    _write(out_dir / "pred.json", serialize_sequence(pred))
    for f, img in zip(gt.frames, images):
        _write(out_dir / "frames" / f.image_path, write_image(img))
    print(f"wrote {len(images)} frames to {out_dir}")
    return EXIT_OK


def cmd_ablate(args, cfg: RunConfig) -> int:
    scene, noise, doc = _load_spec(args.spec, getattr(args, "seed", None))
    seeds = args.seeds if args.seeds is not None else int(doc.get("seeds", 20))
    plan = AblationPlan(seeds=seeds, base=cfg.pipeline, weights=cfg.weights)
    report = run_ablation(scene, noise, plan, jobs=cfg.jobs)
    _write(Path(args.out), dumps(report))
    for s in report["summary"]:
        w = "-" if s["window"] is None else s["window"]
        print(f"{s['config']:>8s} w={w:<2} mIOFF {s['mioff_mean']:.4f} ± {s['mioff_sem']:.4f}")
    return EXIT_OK


def cmd_losses_check(args, cfg: RunConfig) -> int:
    reports = [check_gradients(cfg.seed + k, cfg.loss) for k in range(args.seeds)]
    worst = max(r["max_fd_error"] for r in reports)
    print(json.dumps({"seeds": args.seeds, "first": reports[0], "max_fd_error": worst}, indent=2, sort_keys=True))
    if worst >= FD_TOLERANCE:
        print(f"gradient check failed: {worst:.3g} >= {FD_TOLERANCE:g}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--weights", help="face region weights above,mid,below")
    p.add_argument("--window", type=int, help="KFJ coasting window in frames")
    p.add_argument("--dsj-method", choices=[m.value for m in DSJMethod])
    p.add_argument("--style", help="solid[:r,g,b] | mosaic[:block] | icon")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--print-config", action="store_true", help="print the effective config and exit")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="desens", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against ground truth")
    p.add_argument("gt")
    p.add_argument("pred")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("desensitize", parents=[common], help="redact frames from predictions")
    p.add_argument("frames")
    p.add_argument("pred")
    p.add_argument("--out", required=True)
    p.add_argument("--pipeline", choices=["full", *ABLATION], help="stage set (default from config)")
    p.set_defaults(func=cmd_desensitize)

    p = sub.add_parser("simulate", parents=[common], help="generate a synthetic sequence")
    p.add_argument("spec", nargs="?")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ablate", parents=[common], help="run the ablation and window sweep")
    p.add_argument("spec", nargs="?")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("losses-check", parents=[common], help="finite-difference check of the losses")
    p.add_argument("--seeds", type=int, default=1)
    p.set_defaults(func=cmd_losses_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # --help and usage errors
        return int(e.code or 0)
    try:
        cfg = effective_config(args)
        if getattr(args, "print_config", False):
            print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
            return EXIT_OK
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return args.func(args, cfg)
    except UsageError as e:
        print(f"desens: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, TypeError) as e:
        print(f"desens: error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
