"""Five-row ablation ladder on the toy benchmark.

    python3 scripts/run_ablation.py [--config configs/toy.cfg] [--seeds 0,1,2,3,4] [--out runs/ablation]

Prints the table, writes ablation.json, and checks the unseen-accuracy ordering
full >= p_a >= p_only >= gmmn >= projection.
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
    parser.add_argument("--seeds", default="0,1,2,3,4")
    parser.add_argument("--out", default="runs/ablation")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    cfg = load_config(args.config, {"run.seeds": args.seeds, "run.out": args.out})
    start = time.perf_counter()
    table = cmd_ablate(cfg, Path(cfg.run.out))
    unseen = {row.name: 100 * row.mean("unseen_mean") for row in table}
    chain = ["full", "p_a", "p_only", "gmmn", "projection"]
    holds = all(unseen[a] >= unseen[b] for a, b in zip(chain, chain[1:]))
    print(f"\nordering {' >= '.join(chain)}: {'holds' if holds else 'violated'}")
    print(f"full - gmmn = {unseen['full'] - unseen['gmmn']:.2f} points; {time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
