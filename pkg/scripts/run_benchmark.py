"""Reproduce the benchmark studies from the command line.

Each study is a thin wrapper over the `rareprob` CLI so the exact same code
paths run whether you use this script or the console entry point. Studies:

  oracle    brute-force reference alpha for every problem (M = 1e8)
  herbie    10 two-stage repetitions on HERBIE at the downscaled pool
  ishigami  10 paired-method repetitions on ISHIGAMI
  batch     stage-2 batch-size comparison (1, 10, whole leftover budget)
  plateau   one full PLATEAU4 pipeline run
  all       everything above

Results land under --out (default ./results), one subdirectory per study.
Runtimes on a single core range from minutes (herbie) to about an hour
(batch, which includes the one-point-at-a-time arm).
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from rareprob.cli import main as cli_main

PROBLEMS = ("HERBIE", "ISHIGAMI", "HARTMANN6", "PLATEAU4")


def run(argv):
    print(f"$ rareprob {' '.join(argv)}", flush=True)
    rc = cli_main(argv)
    if rc != 0:
        raise SystemExit(rc)


def study_oracle(out: Path, workers: int):
    for name in PROBLEMS:
        run([
            "oracle", "--problem", name, "--oracle-m", "1e8", "--seed", "0",
            "--workers", str(workers), "--out", str(out / "oracle" / name),
        ])


def study_herbie(out: Path):
    run([
        "run", "--problem", "HERBIE", "--methods", "HYBRID_MC", "--reps", "10",
        "--m", "3.5e6", "--seed", "0", "--out", str(out / "herbie"),
    ])


def study_ishigami(out: Path):
    run([
        "run", "--problem", "ISHIGAMI",
        "--methods", "HYBRID_MC,EXHAUSTIVE_CL,SIIS", "--reps", "10",
        "--m", "1.5e6", "--seed", "0", "--out", str(out / "ishigami"),
    ])


def study_batch(out: Path):
    for batch, tag in ((None, "whole"), (10, "10"), (1, "1")):
        argv = [
            "run", "--problem", "HERBIE", "--methods", "HYBRID_MC",
            "--reps", "10", "--m", "3.5e6", "--seed", "0",
            "--out", str(out / "batch" / tag),
        ]
        if batch is not None:
            argv += ["--stage2-batch", str(batch)]
        run(argv)


def study_plateau(out: Path):
    run([
        "run", "--problem", "PLATEAU4", "--methods", "HYBRID_MC", "--reps", "1",
        "--seed", "0", "--out", str(out / "plateau"),
    ])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument(
        "study",
        choices=("oracle", "herbie", "ishigami", "batch", "plateau", "all"),
    )
    ap.add_argument("--out", default="results", help="output root directory")
    ap.add_argument("--workers", type=int, default=1,
                    help="worker processes for the oracle study")
    args = ap.parse_args()
    out = Path(args.out)

    studies = {
        "oracle": lambda: study_oracle(out, args.workers),
        "herbie": lambda: study_herbie(out),
        "ishigami": lambda: study_ishigami(out),
        "batch": lambda: study_batch(out),
        "plateau": lambda: study_plateau(out),
    }
    names = list(studies) if args.study == "all" else [args.study]
    for name in names:
        studies[name]()


if __name__ == "__main__":
    main()
