"""Experiment configuration as flat dotted keys.

File format: one ``section.key = value`` per line, ``#`` starts a comment,
blank lines are ignored. Tuples are comma separated, ``none`` clears an
optional field, booleans are ``true``/``false``. Command-line flags are applied
after the file, so a flag wins over the file. Every key has a default, and an
unknown key is an error before anything runs.

Sections and their dataclasses:

    train.*        pipeline.TrainConfig   (ablation, lam, epochs, ...)
    synth.*        data.SyntheticSpec     (toy benchmark feature generator)
    toy.*          ToySpaceConfig         (toy semantic space)
    data.*         DataConfig             (optional embedding / feature files)
    mmd.*          generator.MmdConfig
    align.*        align.AlignConfig
    disentangle.*  disentangle.DisentangleConfig
    run.*          RunConfig              (seeds, output, sweep grid)

The ``seed`` fields of TrainConfig and SyntheticSpec are not keys of their
own: ``run.seed`` drives both.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields, replace

from .align import AlignConfig
from .data import SyntheticSpec
from .disentangle import DisentangleConfig
from .errors import ParameterError, ParseError
from .generator import MmdConfig
from .pipeline import TrainConfig


@dataclass(frozen=True)
class ToySpaceConfig:
    n_seen: int = 12
    n_unseen: int = 4
    n_groups: int = 4
    spread: float = 0.6
    latent_dim: int | None = None


@dataclass(frozen=True)
class DataConfig:
    embeddings: str | None = None  # "N D" text file; unset means the toy space
    seen: tuple[str, ...] = ()  # class names, required with embeddings
    unseen: tuple[str, ...] = ()
    train_csv: str | None = None  # feature CSVs; unset means synthesize from synth.*
    test_csv: str | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)  # used by ablate
    out: str = "runs/latest"
    sweep_primitives: tuple[int, ...] = ()
    checkpoint: bool = True


SECTIONS = {
    "train": TrainConfig,
    "synth": SyntheticSpec,
    "toy": ToySpaceConfig,
    "data": DataConfig,
    "mmd": MmdConfig,
    "align": AlignConfig,
    "disentangle": DisentangleConfig,
    "run": RunConfig,
}
_DRIVEN_BY_RUN_SEED = {("train", "seed"), ("synth", "seed")}


@dataclass(frozen=True)
class ExperimentConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    toy: ToySpaceConfig = field(default_factory=ToySpaceConfig)
    data: DataConfig = field(default_factory=DataConfig)
    mmd: MmdConfig = field(default_factory=MmdConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    disentangle: DisentangleConfig = field(default_factory=DisentangleConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        """Copy whose run, training and data seeds all equal ``seed``."""
        return replace(self, run=replace(self.run, seed=int(seed)),
                       train=replace(self.train, seed=int(seed)), synth=replace(self.synth, seed=int(seed)))

    def flat(self) -> dict:
        out = {}
        for section in SECTIONS:
            obj = getattr(self, section)
            for f in fields(obj):
                if (section, f.name) not in _DRIVEN_BY_RUN_SEED:
                    out[f"{section}.{f.name}"] = getattr(obj, f.name)
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {format_value(v)}\n" for k, v in self.flat().items())


def known_keys():
    return list(ExperimentConfig().flat())


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def format_value(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(format_value(v) for v in value)
    return str(value)


def _parse_scalar(text: str, kind, default):
    if kind is bool:
        low = text.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ValueError(f"expected true/false, got {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def parse_value(key: str, text: str, kind, default):
    """Convert ``text`` to the type of a config field."""
    text = text.strip()
    args = typing.get_args(kind)
    optional = type(None) in args
    if optional and text.lower() == "none":
        return None
    if optional:
        kind = next(a for a in args if a is not type(None))
    try:
        if kind is tuple or typing.get_origin(kind) is tuple:
            if not text:
                return ()
            inner = typing.get_args(kind)
            proto = inner[0] if inner else (type(default[0]) if default else str)
            return tuple(_parse_scalar(part.strip(), proto, None) for part in text.split(","))
        return _parse_scalar(text, kind, default)
    except ValueError as exc:
        raise ParseError(f"{key}: {exc}") from None


def parse_pairs(lines, source="<config>"):
    """``key = value`` lines to a dict, with ``source:line`` in parse errors."""
    pairs = {}
    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        pairs[key] = value
    return pairs


def read_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_pairs(fh, str(path))
    except OSError as exc:
        raise FileNotFoundError(f"cannot read config {path}: {exc.strerror}") from None


def build_config(pairs: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Apply dotted ``pairs`` (strings) on top of ``base``. Unknown keys raise ParameterError."""
    base = base or ExperimentConfig()
    unknown = sorted(k for k in pairs if k not in set(known_keys()))
    if unknown:
        raise ParameterError(f"unknown config keys: {', '.join(unknown)}")
    updates = {name: {} for name in SECTIONS}
    for key, text in pairs.items():
        section, name = key.split(".", 1)
        current = getattr(getattr(base, section), name)
        kind = _field_types(SECTIONS[section])[name]
        updates[section][name] = parse_value(key, text, kind, current)
    sections = {}
    for name in SECTIONS:
        try:
            sections[name] = replace(getattr(base, name), **updates[name])
        except (TypeError, ParameterError) as exc:
            raise ParameterError(f"{name}: {exc}") from None
    cfg = ExperimentConfig(**sections)
    return cfg.with_seed(cfg.run.seed)


def load_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    pairs = read_config_file(path) if path else {}
    pairs.update(overrides or {})
    return build_config(pairs)


def as_dict(cfg: ExperimentConfig) -> dict:
    """JSON-friendly nested dict of every resolved field."""
    return {name: {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in dataclasses.asdict(getattr(cfg, name)).items()} for name in SECTIONS}
