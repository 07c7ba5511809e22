#!/usr/bin/env python3
"""End-to-end desk experiment: synthesize suites, train every variant,
evaluate on the held-out benchmark, and print a comparison table.

Roughly an hour of CPU time for all three variants; pass --variants to run
fewer. Re-running skips finished stages (delete the run directory or pass
--force to redo them).
"""

import argparse
import json
import sys
import textwrap
from pathlib import Path

from rtlab.cli import main as rtlab


def run(args: list[str]) -> None:
    code = rtlab(args)
    if code != 0:
        sys.exit(f"step failed with exit code {code}: rtlab {' '.join(args)}")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", default="runs/desk", help="experiment directory")
    ap.add_argument("--variants", nargs="+",
                    default=["plain", "residual", "dense"])
    ap.add_argument("--seed", type=int, default=1, help="training seed")
    ap.add_argument("--synth-seed", type=int, default=7,
                    help="benchmark suite seed (held out from training)")
    ap.add_argument("--force", action="store_true", help="redo finished stages")
    args = ap.parse_args()

    root = Path(args.root)
    bench = root / "benchmark"
    if args.force or not bench.exists():
        run(["synth", "--out", str(bench), "--seed", str(args.synth_seed)])

    rows = []
    for variant in args.variants:
        out = root / variant
        ckpt = out / "checkpoint.rtlb"
        if args.force or not ckpt.exists():
            out.mkdir(parents=True, exist_ok=True)
            cfg = out / "run.ini"
            cfg.write_text(textwrap.dedent(f"""\
                [run]
                variant = {variant}
                scale = desk
                seed = {args.seed}
                data = synthetic
                out = {out}
                """))
            run(["--threads", "1", "train", "--config", str(cfg)])
        report_dir = out / "report"
        if args.force or not (report_dir / "report.json").exists():
            run(["--threads", "1", "eval", "--checkpoint", str(ckpt),
                 "--suite", str(bench), "--out", str(report_dir),
                 "--seed", "0", "--id", variant])
        doc = json.loads((report_dir / "report.json").read_text())
        rows.append((variant, doc))

    print()
    subsets = ["all", "occlusion", "low_resolution", "out_of_view"]
    header = f"{'variant':10s} {'mean IoU':>9s} {'lost':>5s} " + " ".join(
        f"{('AUC ' + s):>18s}" for s in subsets)
    print(header)
    print("-" * len(header))
    for variant, doc in rows:
        aucs = " ".join(
            f"{doc['curves'][s]['auc']:>18.4f}" if s in doc["curves"]
            else f"{'-':>18s}" for s in subsets)
        print(f"{variant:10s} {doc['mean_iou']:>9.4f} "
              f"{doc['lost_targets']:>5d} {aucs}")
    print(f"\nreports under {root}/<variant>/report — render success plots "
          f"with the separate rtlab-plots package if installed.")


if __name__ == "__main__":
    main()
