"""mIOFF of the DSJ+KFJ pipeline as a function of the coasting window."""

from __future__ import annotations

import argparse
from pathlib import Path

from desens.core import dumps
from desens.harness import SWEEP_CONFIG, AblationPlan, NoiseSpec, SceneSpec, run_ablation, summary_lookup


def parse_args() -> argparse.Namespace:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--windows", type=int, nargs="+", default=[1, 2, 3, 4, 5, 6, 7, 8, 10])
    p.add_argument("--drop-prob", type=float, default=0.1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", type=Path, default=Path("results/window_sweep.json"))
    return p.parse_args()


def main() -> None:
    args = parse_args()
    plan = AblationPlan(configs=(), windows=tuple(args.windows), seeds=args.seeds)
    report = run_ablation(SceneSpec(), NoiseSpec(drop_prob=args.drop_prob), plan, jobs=args.jobs)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_bytes(dumps(report))

    s = summary_lookup(report)
    means = {w: s[(SWEEP_CONFIG, w)]["mioff_mean"] for w in args.windows}
    best = max(means, key=means.get)
    lo, hi = min(means.values()), max(means.values())
    for w, m in means.items():
        bar = "#" * int(1 + 40 * (m - lo) / (hi - lo or 1))
        print(f"window {w:2d}  {m:.4f} ± {s[(SWEEP_CONFIG, w)]['mioff_sem']:.4f}  {bar}{'  <- best' if w == best else ''}")


if __name__ == "__main__":
    main()
