"""Generate a synthetic dataset, train LDA/SVM/LSTM per AU, evaluate, print the comparison.

    python3 scripts/run_synthetic_experiment.py --out /tmp/au_run
"""
import argparse
import sys
import time
from pathlib import Path

from aupipe import cli


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="working directory (created)")
    ap.add_argument("--subjects", type=int, default=27)
    ap.add_argument("--frames", type=int, default=500)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--separation", type=float, default=4.0)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)

    out = Path(args.out)
    rc = cli.main(["synth", "--out", str(out), "--subjects", str(args.subjects), "--frames", str(args.frames),
                   "--dim", str(args.dim), "--separation", str(args.separation), "--seed", str(args.seed)])
    if rc:
        return rc
    cfg = str(out / "experiment.json")
    for step in ("train", "eval"):
        t0 = time.perf_counter()
        rc = cli.main([step, "--config", cfg])
        print(f"{step}: exit {rc} in {time.perf_counter() - t0:.1f}s")
        if rc not in (0, 2):
            return rc
    return cli.main(["report", str(out / "run")])


if __name__ == "__main__":
    sys.exit(main())
