"""Semantic embeddings, seen/unseen splits and class-embedding feature sets.

Two on-disk formats are supported:

* embedding file: word2vec text format. A header ``N D`` followed by ``N`` lines
  of ``name v1 ... vD`` separated by whitespace.
* feature CSV: header ``label,provenance,group,f0,...,f{d-1}``; ``label`` is a
  class name, ``provenance`` is ``real`` or ``synthetic``, ``group`` is
  ``seen`` or ``unseen``. Floats are printed with 17 significant digits so a
  round trip is exact.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ClassLookupError, FormatError, ParameterError, ParseError, ValidationError
from .numerics import l2_normalize_rows

REAL, SYNTHETIC = "real", "synthetic"
SEEN, UNSEEN = "seen", "unseen"


@dataclass(frozen=True)
class SemanticSpace:
    class_names: tuple
    embeddings: np.ndarray  # (n_classes, d_a), rows unit norm
    seen_ids: np.ndarray
    unseen_ids: np.ndarray

    def __post_init__(self):
        n = len(self.class_names)
        if self.embeddings.shape[0] != n:
            raise FormatError(f"{n} names but {self.embeddings.shape[0]} embedding rows")
        seen, unseen = set(self.seen_ids.tolist()), set(self.unseen_ids.tolist())
        if seen & unseen:
            raise ValidationError(f"seen and unseen overlap: {sorted(seen & unseen)}")
        if seen | unseen != set(range(n)):
            raise ValidationError("seen/unseen ids must cover every class exactly once")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if not np.allclose(norms, 1.0, rtol=0, atol=1e-9):
            raise ValidationError("semantic embeddings must be l2-normalized")
        self.embeddings.setflags(write=False)

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_seen(self) -> int:
        return len(self.seen_ids)

    @property
    def n_unseen(self) -> int:
        return len(self.unseen_ids)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def index(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise ClassLookupError(f"unknown class {name!r}") from None

    def is_seen(self, label: int) -> bool:
        return label in self._seen_set

    @property
    def _seen_set(self):
        return frozenset(self.seen_ids.tolist())


def make_space(names, vectors, seen_names, unseen_names) -> SemanticSpace:
    """Build a space from raw vectors; rows are reordered seen-then-unseen and normalized."""
    lookup = {}
    for i, name in enumerate(names):
        if name in lookup:
            raise FormatError(f"duplicate class name {name!r}")
        lookup[name] = i
    wanted = list(seen_names) + list(unseen_names)
    missing = [n for n in wanted if n not in lookup]
    if missing:
        raise ClassLookupError(f"classes not found in embeddings: {', '.join(missing)}")
    if len(set(wanted)) != len(wanted):
        raise ValidationError("a class is listed twice across the seen/unseen split")
    vectors = np.asarray(vectors, dtype=np.float64)
    rows, zero = l2_normalize_rows(vectors[[lookup[n] for n in wanted]])
    if zero.any():
        bad = [wanted[i] for i in np.flatnonzero(zero)]
        raise ValidationError(f"zero semantic embedding for {', '.join(bad)}")
    ns = len(seen_names)
    return SemanticSpace(tuple(wanted), rows, np.arange(ns), np.arange(ns, len(wanted)))


def read_embeddings(path):
    names, vectors = [], []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ParseError(f"{path}:1: expected header 'N D'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise ParseError(f"{path}:1: header must be two integers") from None
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != dim + 1:
                raise ParseError(f"{path}:{lineno}: expected name and {dim} values, got {len(parts)} fields")
            try:
                vec = [float(v) for v in parts[1:]]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: non-numeric value") from None
            if not np.all(np.isfinite(vec)):
                raise ParseError(f"{path}:{lineno}: non-finite value")
            names.append(parts[0])
            vectors.append(vec)
    if len(names) != count:
        raise ParseError(f"{path}: header announces {count} rows, found {len(names)}")
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise FormatError(f"{path}: duplicate class names {dup}")
    return names, np.array(vectors, dtype=np.float64).reshape(len(names), dim)


def load_semantic_space(path, seen_names, unseen_names) -> SemanticSpace:
    names, vectors = read_embeddings(path)
    return make_space(names, vectors, seen_names, unseen_names)


def write_embeddings(path, names, vectors):
    vectors = np.asarray(vectors, dtype=np.float64)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(names)} {vectors.shape[1]}\n")
        for name, row in zip(names, vectors):
            fh.write(name + " " + " ".join(repr(float(v)) for v in row) + "\n")


def toy_semantic_space(n_seen=12, n_unseen=4, dim=16, n_groups=4, spread=0.6, seed=0,
                       latent_dim=None) -> SemanticSpace:
    """Clustered random embeddings: classes in the same group share a prototype.

    Unseen classes are dealt round-robin over the groups so each one has seen
    relatives, the way ``dog`` has ``cat`` and ``horse``. With ``latent_dim``
    the vectors are drawn in a smaller space and lifted by a fixed random map,
    so unseen rows lie in the span of the seen ones.
    """
    rng = np.random.default_rng(seed)
    inner = dim if latent_dim is None else int(latent_dim)
    if not 1 <= inner <= dim:
        raise ParameterError(f"latent_dim must lie in [1, {dim}], got {latent_dim}")
    protos = rng.standard_normal((n_groups, inner))
    total = n_seen + n_unseen
    groups = np.arange(total) % n_groups
    vecs = protos[groups] + spread * rng.standard_normal((total, inner))
    if latent_dim is not None:
        vecs = vecs @ rng.standard_normal((inner, dim))
    # last n_unseen rows spread across groups because groups cycle
    names = [f"c{i:02d}" for i in range(total)]
    return make_space(names, vecs, names[:n_seen], names[n_seen:])


# ------------------------------------------------------------------ features

@dataclass(frozen=True)
class FeatureDataset:
    features: np.ndarray  # (n, d_x)
    labels: np.ndarray  # int class index into the SemanticSpace
    provenance: np.ndarray  # str: real | synthetic
    group: np.ndarray  # str: seen | unseen

    def __post_init__(self):
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise FormatError("features must be 2-D")
        for name in ("labels", "provenance", "group"):
            if len(getattr(self, name)) != n:
                raise FormatError(f"{name} has {len(getattr(self, name))} entries for {n} rows")
        if n and not np.all(np.isfinite(self.features)):
            raise ValidationError("features contain NaN or Inf")

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, index) -> "FeatureDataset":
        index = np.asarray(index, dtype=np.intp)
        return FeatureDataset(self.features[index], self.labels[index],
                              self.provenance[index], self.group[index])

    def equals(self, other: "FeatureDataset") -> bool:
        return (self.features.shape == other.features.shape
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.provenance, other.provenance)
                and np.array_equal(self.group, other.group))


def feature_dataset(features, labels, provenance, space: SemanticSpace) -> FeatureDataset:
    labels = np.asarray(labels, dtype=np.intp)
    seen = space._seen_set
    group = np.array([SEEN if int(c) in seen else UNSEEN for c in labels], dtype=object)
    if np.isscalar(provenance) or isinstance(provenance, str):
        provenance = [provenance] * len(labels)
    return FeatureDataset(np.asarray(features, dtype=np.float64).reshape(len(labels), -1),
                          labels, np.array(provenance, dtype=object), group)


def concat_datasets(parts) -> FeatureDataset:
    parts = [p for p in parts if len(p)] or parts[:1]
    return FeatureDataset(np.concatenate([p.features for p in parts]),
                          np.concatenate([p.labels for p in parts]),
                          np.concatenate([p.provenance for p in parts]),
                          np.concatenate([p.group for p in parts]))


def validate_generator_input(dataset: FeatureDataset, space: SemanticSpace):
    """Generator/classifier pretraining data: real rows of seen classes only."""
    seen = space._seen_set
    for i, (label, prov) in enumerate(zip(dataset.labels, dataset.provenance)):
        if prov == REAL and int(label) not in seen:
            raise ValidationError(
                f"row {i}: real sample of unseen class {space.class_names[label]!r} in training data")


@dataclass(frozen=True)
class SyntheticSpec:
    d_a: int = 16
    d_x: int = 32
    samples_per_class: int = 200
    related_noise: float = 0.1
    nuisance_dim: int = 16
    nuisance_scale: float = 0.5
    seed: int = 0
    related_scale: float = 1.0
    nuisance_noise: float = 0.0  # per-sample std on the nuisance block, shared by all classes
    test_samples_per_class: int | None = None

    def validate(self, space: SemanticSpace | None = None):
        if self.samples_per_class < 1:
            raise ParameterError("samples_per_class must be >= 1")
        if min(self.d_a, self.d_x) < 1 or self.nuisance_dim < 0:
            raise ParameterError("dimensions must be positive")
        if self.d_x < self.d_a + self.nuisance_dim:
            raise ParameterError(f"d_x={self.d_x} cannot hold d_a + nuisance_dim = "
                                 f"{self.d_a + self.nuisance_dim}")
        if min(self.related_noise, self.nuisance_scale, self.related_scale, self.nuisance_noise) < 0:
            raise ParameterError("noise scales must be >= 0")
        if space is not None and space.dim != self.d_a:
            raise ParameterError(f"space has dim {space.dim}, spec expects d_a={self.d_a}")


def class_means(space: SemanticSpace, spec: SyntheticSpec) -> np.ndarray:
    """True per-class feature means ``[W a_c ; b_c]`` for the synthetic benchmark."""
    spec.validate(space)
    rng = np.random.default_rng([spec.seed, 0])
    related_dim = spec.d_x - spec.nuisance_dim
    q, r = np.linalg.qr(rng.standard_normal((related_dim, spec.d_a)))
    w = spec.related_scale * q * np.sign(np.diag(r))  # scaled orthonormal columns
    nuisance = spec.nuisance_scale * rng.standard_normal((space.n_classes, spec.nuisance_dim))
    return np.hstack([space.embeddings @ w.T, nuisance])


def make_synthetic_dataset(space: SemanticSpace, spec: SyntheticSpec):
    """Seeded (train, test) pair. Train holds seen classes only; test holds every class."""
    means = class_means(space, spec)
    n_test = spec.test_samples_per_class or spec.samples_per_class

    def draw(classes, count, stream):
        rng = np.random.default_rng([spec.seed, stream])
        labels = np.repeat(np.asarray(classes, dtype=np.intp), count)
        feats = means[labels] + spec.related_noise * rng.standard_normal((len(labels), spec.d_x))
        if spec.nuisance_noise and spec.nuisance_dim:
            feats[:, spec.d_x - spec.nuisance_dim:] += spec.nuisance_noise * rng.standard_normal(
                (len(labels), spec.nuisance_dim))
        return feature_dataset(feats, labels, REAL, space)

    train = draw(space.seen_ids, spec.samples_per_class, 1)
    test = draw(np.arange(space.n_classes), n_test, 2)
    return train, test


def load_feature_dataset(path, space: SemanticSpace, generator_input: bool = False) -> FeatureDataset:
    labels, prov, feats = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: missing header") from None
        if header[:3] != ["label", "provenance", "group"]:
            raise ParseError(f"{path}: header must start with label,provenance,group")
        d = len(header) - 3
        if header[3:] != [f"f{i}" for i in range(d)]:
            raise ParseError(f"{path}: feature columns must be f0..f{d - 1}")
        seen = space._seen_set
        for row_index, row in enumerate(reader):
            if len(row) != d + 3:
                raise ParseError(f"{path}: row {row_index}: expected {d + 3} fields, got {len(row)}")
            name, p, g = row[:3]
            try:
                label = space.index(name)
            except ClassLookupError:
                raise ParseError(f"{path}: row {row_index}: unknown label {name!r}") from None
            if p not in (REAL, SYNTHETIC):
                raise ParseError(f"{path}: row {row_index}: bad provenance {p!r}")
            expected = SEEN if label in seen else UNSEEN
            if g != expected:
                raise ParseError(f"{path}: row {row_index}: class {name!r} is {expected}, file says {g!r}")
            try:
                values = [float(v) for v in row[3:]]
            except ValueError:
                raise ParseError(f"{path}: row {row_index}: non-numeric feature") from None
            labels.append(label)
            prov.append(p)
            feats.append(values)
    ds = FeatureDataset(np.array(feats, dtype=np.float64).reshape(len(labels), d),
                        np.array(labels, dtype=np.intp), np.array(prov, dtype=object),
                        np.array([SEEN if l in seen else UNSEEN for l in labels], dtype=object))
    if generator_input:
        validate_generator_input(ds, space)
    return ds


def export_features(dataset: FeatureDataset, path, space: SemanticSpace):
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["label", "provenance", "group"] + [f"f{i}" for i in range(dataset.dim)])
        for x, label, p, g in zip(dataset.features, dataset.labels, dataset.provenance, dataset.group):
            writer.writerow([space.class_names[label], p, g] + [f"{v:.17g}" for v in x])


def batch_iter(dataset_or_size, batch_size: int, seed):
    """Seeded shuffled index batches covering every row once; the last may be short."""
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    n = dataset_or_size if isinstance(dataset_or_size, (int, np.integer)) else len(dataset_or_size)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def warn_empty_classes(counts: dict, names):
    empty = [names[c] for c, k in counts.items() if k == 0]
    if empty:
        warnings.warn(f"no test samples for {', '.join(empty)}; excluded from group means")
    return empty
