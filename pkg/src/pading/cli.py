"""Command-line entry point.

    pading synth-data  write toy embeddings and feature CSVs
    pading run         one ablation row end to end; writes report.json and checkpoints
    pading ablate      every ablation row (or a primitive-count sweep) over several seeds
    pading verify      gradient checks, MMD identities, alignment fixed point, HM values
    pading export      synthesize unseen features from a finished run's checkpoint

Exit codes: 0 success, 1 verification failure, 2 input error, 3 divergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, module_arrays, save_checkpoint
from .config import ExperimentConfig, as_dict, load_config
from .data import (export_features, load_feature_dataset, load_semantic_space, make_synthetic_dataset,
                   toy_semantic_space, write_embeddings)
from .errors import DivergenceError, PadingError, ParameterError, ParseError, VerificationError
from .pipeline import ABLATIONS, GzslReport, format_table, new_bundle, run_ablation, run_pipeline, synthesize_unseen

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("pading")


# ----------------------------------------------------------------- report

@dataclass
class RunReport:
    config: dict
    report: GzslReport
    pretrain_report: GzslReport | None
    curves: dict
    artifacts: dict
    wall_time: dict = field(default_factory=dict)  # seconds per stage; kept out of report.json
    schema_version: int = SCHEMA_VERSION

    def to_dict(self, include_timing=False):
        d = {"schema_version": self.schema_version, "config": self.config, "report": self.report.to_dict(),
             "pretrain_report": self.pretrain_report.to_dict() if self.pretrain_report else None,
             "curves": self.curves, "artifacts": self.artifacts}
        if include_timing:
            d["wall_time"] = self.wall_time
        return d

    def dumps(self, include_timing=False):
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ParseError(f"unsupported report schema {d.get('schema_version')!r}")
        pre = d.get("pretrain_report")
        return cls(d["config"], GzslReport.from_dict(d["report"]), GzslReport.from_dict(pre) if pre else None,
                   {k: list(v) for k, v in d["curves"].items()}, dict(d["artifacts"]),
                   dict(d.get("wall_time", {})), d["schema_version"])

    @classmethod
    def loads(cls, text):
        return cls.from_dict(json.loads(text))


class StageTimer:
    """Times named stages and remembers which one is running, for error messages."""

    def __init__(self):
        self.seconds = {}
        self.current = None

    @contextmanager
    def __call__(self, name):
        self.current = name
        start = time.perf_counter()
        yield self
        self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - start
        self.current = None


# ------------------------------------------------------------------- data

def make_data(cfg: ExperimentConfig, seed: int):
    """``(space, train, test)`` for one seed: files if configured, else the toy benchmark."""
    d = cfg.data
    if d.embeddings:
        if not d.seen or not d.unseen:
            raise ParameterError("data.seen and data.unseen are required with data.embeddings")
        space = load_semantic_space(d.embeddings, d.seen, d.unseen)
    else:
        space = toy_semantic_space(n_seen=cfg.toy.n_seen, n_unseen=cfg.toy.n_unseen, dim=cfg.synth.d_a,
                                   n_groups=cfg.toy.n_groups, spread=cfg.toy.spread, seed=seed,
                                   latent_dim=cfg.toy.latent_dim)
    if bool(d.train_csv) != bool(d.test_csv):
        raise ParameterError("set both data.train_csv and data.test_csv, or neither")
    if d.train_csv:
        train = load_feature_dataset(d.train_csv, space, generator_input=True)
        test = load_feature_dataset(d.test_csv, space)
    else:
        train, test = make_synthetic_dataset(space, replace(cfg.synth, seed=seed))
    return space, train, test


# --------------------------------------------------------------- commands

def cmd_synth_data(cfg: ExperimentConfig, out: Path):
    out.mkdir(parents=True, exist_ok=True)
    space, train, test = make_data(cfg, cfg.run.seed)
    write_embeddings(out / "embeddings.txt", space.class_names, space.embeddings)
    export_features(train, out / "train.csv", space)
    export_features(test, out / "test.csv", space)
    (out / "config.txt").write_text(cfg.dumps(), encoding="utf-8")
    print(f"embeddings: {space.n_classes} classes ({space.n_seen} seen, {space.n_unseen} unseen)")
    print(f"train.csv: {len(train)} rows")
    print(f"test.csv: {len(test)} rows")
    return EXIT_OK


def cmd_run(cfg: ExperimentConfig, out: Path) -> RunReport:
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.run.seed
    timer = StageTimer()
    try:
        with timer("data"):
            space, train, test = make_data(cfg, seed)
        result = run_pipeline(train, test, space, cfg.train, cfg.mmd, cfg.disentangle, seed=seed,
                              timer=timer, align_cfg=cfg.align)
    except PadingError as exc:
        if timer.current:
            exc.args = (f"stage {timer.current}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
        raise
    artifacts = {"report": "report.json", "timings": "timings.json", "config": "config.txt"}
    if cfg.run.checkpoint:
        save_checkpoint(out / "classifier.ckpt", module_arrays(classifier=result.classifier))
        artifacts["classifier"] = "classifier.ckpt"
        if result.bundle is not None:
            save_checkpoint(out / "generator.ckpt", module_arrays(**result.bundle.modules()))
            artifacts["generator"] = "generator.ckpt"
    curves = {k: [float(v) for v in c] for k, c in result.curves.items()}
    run = RunReport(as_dict(cfg), result.report, result.pretrain_report, curves, artifacts,
                    {k: round(v, 3) for k, v in timer.seconds.items()})
    (out / "report.json").write_text(run.dumps(), encoding="utf-8")
    (out / "timings.json").write_text(json.dumps(run.wall_time, indent=2, sort_keys=True), encoding="utf-8")
    (out / "config.txt").write_text(cfg.dumps(), encoding="utf-8")
    r = result.report
    print(f"ablation={cfg.train.ablation} seed={seed} seen={100 * r.seen_mean:.1f} "
          f"unseen={100 * r.unseen_mean:.1f} HM={100 * r.hm:.1f}")
    print(f"wrote {out / 'report.json'}")
    return run


def cmd_ablate(cfg: ExperimentConfig, out: Path, rows=ABLATIONS):
    out.mkdir(parents=True, exist_ok=True)
    seeds = cfg.run.seeds
    if len(seeds) < 5:
        warnings.warn(f"only {len(seeds)} seed(s): ordering comparisons need at least 5 seeds")
    table = run_ablation(lambda s: make_data(cfg, s), cfg.train, seeds=seeds, rows=rows,
                         primitive_counts=cfg.run.sweep_primitives or None, mmd_cfg=cfg.mmd,
                         disentangle_cfg=cfg.disentangle, align_cfg=cfg.align)
    text = format_table(table)
    print(text)
    payload = {"schema_version": SCHEMA_VERSION, "config": as_dict(cfg), "seeds": list(seeds),
               "rows": [row.to_dict() for row in table]}
    (out / "ablation.json").write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    (out / "ablation.txt").write_text(text + "\n", encoding="utf-8")
    return table


def cmd_verify(seed=0):
    from .verify import run_battery

    checks = run_battery(seed)
    for c in checks:
        print(c.line())
    failed = [c for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    if failed:
        raise VerificationError(", ".join(c.name for c in failed))
    return checks


def cmd_export(cfg: ExperimentConfig, out: Path):
    """Re-synthesize unseen features from ``out/generator.ckpt`` into ``out/synthetic_unseen.csv``."""
    ckpt = out / "generator.ckpt"
    if not ckpt.exists():
        raise FileNotFoundError(f"no generator checkpoint at {ckpt} (run a generative ablation first)")
    space, train, _ = make_data(cfg, cfg.run.seed)
    bundle = new_bundle(space, train.dim, cfg.train, cfg.disentangle, seed=cfg.run.seed)
    bundle.generator.load_arrays(load_checkpoint(ckpt), "generator.")
    data = synthesize_unseen(bundle.generator, space, cfg.train.synth_per_class, cfg.run.seed)
    export_features(data, out / "synthetic_unseen.csv", space)
    print(f"synthetic_unseen.csv: {len(data)} rows")
    return data


# ------------------------------------------------------------------ parser

def build_parser():
    parser = argparse.ArgumentParser(prog="pading", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("synth-data", "run", "ablate", "verify", "export"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int, help="overrides run.seed")
        p.add_argument("--out", help="output directory (run.out)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override any config key; repeatable")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("run", "export"):
            p.add_argument("--ablation", choices=ABLATIONS)
        if name == "ablate":
            p.add_argument("--seeds", help="comma separated seeds (run.seeds)")
            p.add_argument("--rows", default=",".join(ABLATIONS), help="comma separated ablation rows")
            p.add_argument("--sweep-primitives", help="comma separated primitive counts")
        if name == "verify":
            p.set_defaults(config=None)
    return parser


def _overrides(args) -> dict:
    pairs = {}
    for item in args.set:
        if "=" not in item:
            raise ParseError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        pairs[key.strip()] = value.strip()
    if args.seed is not None:
        pairs["run.seed"] = str(args.seed)
    if args.out:
        pairs["run.out"] = args.out
    if getattr(args, "ablation", None):
        pairs["train.ablation"] = args.ablation
    if getattr(args, "seeds", None):
        pairs["run.seeds"] = args.seeds
    if getattr(args, "sweep_primitives", None):
        pairs["run.sweep_primitives"] = args.sweep_primitives
    return pairs


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        out = Path(cfg.run.out)
        if args.command != "verify":
            print("# resolved config")
            print(cfg.dumps(), end="")
        if args.command == "synth-data":
            cmd_synth_data(cfg, out)
        elif args.command == "run":
            cmd_run(cfg, out)
        elif args.command == "ablate":
            rows = tuple(r.strip() for r in args.rows.split(",") if r.strip())
            unknown = set(rows) - set(ABLATIONS)
            if unknown:
                raise ParameterError(f"unknown ablation rows {sorted(unknown)}")
            cmd_ablate(cfg, out, rows)
        elif args.command == "verify":
            cmd_verify(cfg.run.seed)
        elif args.command == "export":
            cmd_export(cfg, out)
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (PadingError, OSError, KeyError, ValueError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
