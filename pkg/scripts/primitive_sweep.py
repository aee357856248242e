"""Primitive-count sweep for the full model on the toy benchmark.

    python3 scripts/primitive_sweep.py [--counts 100,200,300,400,500,600,700] [--seeds 0,1,2,3,4]
"""
import argparse
import logging
import time
from pathlib import Path

from pading.cli import cmd_ablate
from pading.config import load_config

ROOT = Path(__file__).resolve().parents[1]


def main():
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--config", default=str(ROOT / "configs" / "toy.cfg"))
    parser.add_argument("--counts", default="100,200,300,400,500,600,700")
    parser.add_argument("--seeds", default="0,1,2,3,4")
    parser.add_argument("--out", default="runs/primitives")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    cfg = load_config(args.config, {"run.seeds": args.seeds, "run.out": args.out,
                                    "run.sweep_primitives": args.counts, "train.ablation": "full"})
    start = time.perf_counter()
    cmd_ablate(cfg, Path(cfg.run.out))
    print(f"\n{time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
