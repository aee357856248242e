"""Four-stage training pipeline and generalized zero-shot evaluation.

1. pretrain a linear classifier on real seen features,
2. train a feature generator (MMD, plus disentanglement and alignment for the
   full model),
3. synthesize unseen-class features,
4. fine-tune the classifier on real seen + synthetic unseen features,

then score per-class accuracy over all classes and report the harmonic mean of
the seen and unseen group means.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import numerics as nx
from .align import REAL_SEEN, SYN_SEEN, SYN_UNSEEN, AlignBatch, AlignConfig, alignment_loss
from .data import (REAL, SEEN, SYNTHETIC, UNSEEN, FeatureDataset, SemanticSpace, batch_iter,
                   concat_datasets, feature_dataset, validate_generator_input)
from .disentangle import DisentangleConfig, Disentangler, disentangle_pass, encode_related
from .errors import DivergenceError, ParameterError, ValidationError
from .generator import GeneratorModel, GmmnBaselineModel, MmdConfig, mmd_loss
from .layers import Module
from .numerics import AdamState, Param, SgdState, adam_step, sgd_step, zero_grad

log = logging.getLogger(__name__)

ABLATIONS = ("projection", "gmmn", "p_only", "p_a", "full")


@dataclass(frozen=True)
class TrainConfig:
    ablation: str = "full"
    lam: float = 0.002
    tau: float = 0.1
    # generator
    d_k: int = 64
    n_primitives: int = 400
    layer_count: int = 3
    gmmn_hidden: int = 64
    generator_steps: int = 600
    generator_lr: float = 2e-4
    classes_per_batch: int = 0  # 0 means every seen class
    real_per_class: int = 16
    unseen_per_class: int = 16
    pooled_mmd: bool = False
    log_every: int = 50
    # classifier
    classifier_lr: float = 1e-3
    weight_decay: float = 5e-4
    momentum: float = 0.9
    pretrain_epochs: int = 30
    finetune_epochs: int = 50
    batch_size: int = 64
    synth_per_class: int = 100
    include_synthetic_seen: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ParameterError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.lam < 0:
            raise ParameterError("lam must be >= 0")
        if self.tau <= 0:
            raise ParameterError("tau must be > 0")

    @property
    def generator_kind(self):
        return "gmmn" if self.ablation == "gmmn" else "primitive"

    @property
    def uses_alignment(self):
        return self.ablation in ("p_a", "full")

    @property
    def uses_disentangle(self):
        return self.ablation == "full"


# ---------------------------------------------------------------- classifier

class Classifier(Module):
    """Linear head over class embeddings.

    ``learned``: free weights (d_x x C) and bias. ``projection``: a trainable
    visual-to-semantic map (d_x x d_a) scored against fixed semantic rows, so
    adding a class only means adding its semantic row.
    """

    def __init__(self, mode, d_x, classes, semantic):
        self.mode = mode
        self.classes = np.asarray(classes, dtype=np.intp)  # column k scores SemanticSpace row classes[k]
        self.semantic = semantic
        if mode == "learned":
            self.weights = Param(np.zeros((d_x, len(self.classes))))
            self.bias = Param(np.zeros((1, len(self.classes))))
            self._children = ("weights", "bias")
        elif mode == "projection":
            self.projection = Param(np.zeros((d_x, semantic.shape[1])))
            self._children = ("projection",)
        else:
            raise ParameterError(f"unknown classifier mode {mode!r}")

    @property
    def n_outputs(self):
        return len(self.classes)

    def logits(self, x):
        if self.mode == "learned":
            return nx.matmul(x, self.weights) + self.bias
        anchors = nx.Tensor(self.semantic[self.classes].T)
        return nx.matmul(nx.matmul(x, self.projection), anchors)

    def predict(self, x):
        scores = self.logits(np.asarray(x, dtype=np.float64)).data
        return self.classes[np.argmax(scores, axis=1)]  # argmax picks the lowest index on ties

    def expand(self, classes):
        """Return a copy scoring ``classes`` (a superset); new columns start at zero."""
        new = Classifier(self.mode, self._d_x, classes, self.semantic)
        if self.mode == "learned":
            pos = {int(c): k for k, c in enumerate(classes)}
            for k, c in enumerate(self.classes):
                new.weights.data[:, pos[int(c)]] = self.weights.data[:, k]
                new.bias.data[0, pos[int(c)]] = self.bias.data[0, k]
        else:
            new.projection.data[...] = self.projection.data
        return new

    @property
    def _d_x(self):
        return (self.weights if self.mode == "learned" else self.projection).shape[0]


def _fit_classifier(clf: Classifier, dataset: FeatureDataset, cfg: TrainConfig, epochs, seed):
    column = {int(c): k for k, c in enumerate(clf.classes)}
    targets = np.array([column[int(c)] for c in dataset.labels], dtype=np.intp)
    params = clf.params()
    state = SgdState(cfg.classifier_lr, cfg.weight_decay, cfg.momentum)
    curve = []
    for epoch in range(epochs):
        total = 0.0
        for idx in batch_iter(len(dataset), cfg.batch_size, nx.make_rng(seed, epoch)):
            zero_grad(params)
            loss = nx.cross_entropy(clf.logits(dataset.features[idx]), targets[idx])
            loss.backward()
            sgd_step(params, state)
            total += loss.item() * len(idx)
        curve.append(total / len(dataset))
        if not math.isfinite(curve[-1]):
            raise DivergenceError(f"classifier loss diverged at epoch {epoch}", step=epoch)
    return curve


def pretrain_classifier(train: FeatureDataset, space: SemanticSpace, cfg: TrainConfig, seed=0):
    """Stage 1: fit the head on real seen features. Returns ``(classifier, loss curve)``."""
    if len(train) == 0:
        raise ValidationError("pretraining set is empty")
    validate_generator_input(train, space)
    if np.any(train.group != SEEN):
        raise ValidationError("pretraining set may only contain seen classes")
    if cfg.ablation == "projection":
        # semantic rows exist for every class, so the head scores all of them;
        # seen-only training then pushes unseen scores down (the bias issue)
        clf = Classifier("projection", train.dim, np.concatenate([space.seen_ids, space.unseen_ids]),
                         space.embeddings)
    else:
        clf = Classifier("learned", train.dim, space.seen_ids, space.embeddings)
    curve = _fit_classifier(clf, train, cfg, cfg.pretrain_epochs, [seed, 11])
    return clf, curve


def retrain_classifier(clf: Classifier, real_seen: FeatureDataset, synthetic: FeatureDataset,
                       space: SemanticSpace, cfg: TrainConfig, seed=0):
    """Stage 4: expand to every class and fine-tune on the union dataset."""
    if len(synthetic) == 0:
        raise ValidationError("no synthetic features to fine-tune with")
    all_classes = np.concatenate([space.seen_ids, space.unseen_ids])
    expanded = clf.expand(all_classes)
    union = concat_datasets([real_seen, synthetic])
    curve = _fit_classifier(expanded, union, cfg, cfg.finetune_epochs, [seed, 13])
    return expanded, curve


# ---------------------------------------------------------------- evaluation

def harmonic_mean(p_seen, p_unseen):
    if p_seen < 0 or p_unseen < 0:
        raise ParameterError(f"accuracies must be non-negative, got {p_seen}, {p_unseen}")
    if p_seen == 0 or p_unseen == 0:
        return 0.0
    return 2.0 * p_seen * p_unseen / (p_seen + p_unseen)


@dataclass
class GzslReport:
    per_class_accuracy: dict  # class name -> accuracy
    counts: dict  # class name -> number of test samples
    seen_mean: float
    unseen_mean: float
    hm: float

    def to_dict(self):
        return {"per_class_accuracy": dict(self.per_class_accuracy), "counts": dict(self.counts),
                "seen_mean": self.seen_mean, "unseen_mean": self.unseen_mean, "hm": self.hm}

    @classmethod
    def from_dict(cls, d):
        return cls(dict(d["per_class_accuracy"]), dict(d["counts"]), d["seen_mean"],
                   d["unseen_mean"], d["hm"])


def gzsl_report(predicted, labels, space: SemanticSpace) -> GzslReport:
    predicted, labels = np.asarray(predicted), np.asarray(labels)
    acc, counts = {}, {}
    group_means = []
    for ids in (space.seen_ids, space.unseen_ids):
        values = []
        for c in ids:
            name = space.class_names[c]
            rows = labels == c
            counts[name] = int(rows.sum())
            if not rows.any():
                warnings.warn(f"class {name!r} has no test samples; excluded from its group mean")
                continue
            acc[name] = float(np.mean(predicted[rows] == c))
            values.append(acc[name])
        group_means.append(float(np.mean(values)) if values else 0.0)
    seen, unseen = group_means
    return GzslReport(acc, counts, seen, unseen, harmonic_mean(seen, unseen))


def evaluate_gzsl(clf: Classifier, test: FeatureDataset, space: SemanticSpace) -> GzslReport:
    if clf.n_outputs != space.n_classes:
        raise ValidationError(f"classifier scores {clf.n_outputs} classes, space has {space.n_classes}")
    return gzsl_report(clf.predict(test.features), test.labels, space)


# ----------------------------------------------------------------- generator

@dataclass
class GeneratorBundle:
    generator: Module
    disentangler: Disentangler | None
    curve: list

    def modules(self):
        return {"generator": self.generator, "disentangler": self.disentangler}


def build_generator(space: SemanticSpace, d_x, cfg: TrainConfig, seed):
    if cfg.generator_kind == "gmmn":
        return GmmnBaselineModel(space.dim, cfg.d_k, d_x, cfg.gmmn_hidden, seed=nx.make_rng(seed, 21))
    return GeneratorModel(space.dim, cfg.d_k, d_x, cfg.n_primitives, cfg.layer_count, seed=nx.make_rng(seed, 21))


def class_conditional_mmd(real, real_labels, syn, syn_labels, mmd_cfg: MmdConfig):
    """Average over classes of the per-class MMD, computed on whole-batch kernels."""
    real, syn = nx.lift(real), nx.lift(syn)
    real_labels, syn_labels = np.asarray(real_labels), np.asarray(syn_labels)
    classes = np.unique(real_labels)
    if set(np.unique(syn_labels)) != set(classes):
        raise ValidationError("real and synthetic batches must cover the same classes")
    nr = {c: np.sum(real_labels == c) for c in classes}
    ns = {c: np.sum(syn_labels == c) for c in classes}
    scale = 1.0 / len(classes)

    def weights(la, lb, na, nb):
        same = la[:, None] == lb[None, :]
        denom = np.array([na[c] for c in la], dtype=float)[:, None] * np.array([nb[c] for c in lb])[None, :]
        return same * scale / denom

    w_rr = weights(real_labels, real_labels, nr, nr)
    w_ss = weights(syn_labels, syn_labels, ns, ns)
    w_rs = weights(real_labels, syn_labels, nr, ns)
    d_rr, d_ss, d_rs = nx.sqdist(real, real), nx.sqdist(syn, syn), nx.sqdist(real, syn)
    total = None
    for sigma in mmd_cfg.bandwidths:
        c = -1.0 / (2.0 * sigma ** 2)
        term = (nx.sum_(nx.exp(d_rr * c) * w_rr) + nx.sum_(nx.exp(d_ss * c) * w_ss)
                - 2.0 * nx.sum_(nx.exp(d_rs * c) * w_rs))
        total = term if total is None else total + term
    return total


@dataclass
class StepLosses:
    total: nx.Tensor
    generator: nx.Tensor
    disentangle: nx.Tensor | None = None
    align: nx.Tensor | None = None


def generator_step_loss(bundle: GeneratorBundle, train: FeatureDataset, space: SemanticSpace,
                        cfg: TrainConfig, mmd_cfg: MmdConfig, rng: np.random.Generator,
                        pools=None, align_cfg: AlignConfig | None = None) -> StepLosses:
    """Build L_G (+ lambda * (L_D + L_A) where enabled) for one sampled batch."""
    gen = bundle.generator
    pools = pools or class_pools(train, space)
    seen = space.seen_ids
    if cfg.classes_per_batch and cfg.classes_per_batch < len(seen):
        seen = np.sort(rng.choice(seen, size=cfg.classes_per_batch, replace=False))
    real_idx = np.concatenate([rng.choice(pools[c], size=cfg.real_per_class,
                                          replace=len(pools[c]) < cfg.real_per_class) for c in seen])
    real_labels = train.labels[real_idx]
    real = train.features[real_idx]
    syn_labels = np.repeat(seen, cfg.real_per_class)
    syn = gen(space.embeddings[syn_labels], gen.sample_noise(len(syn_labels), rng))
    if cfg.pooled_mmd:
        l_g = mmd_loss(real, syn, mmd_cfg)
    else:
        l_g = class_conditional_mmd(real, real_labels, syn, syn_labels, mmd_cfg)
    if not cfg.uses_alignment:
        return StepLosses(l_g, l_g)

    un_labels = np.repeat(space.unseen_ids, cfg.unseen_per_class)
    syn_un = gen(space.embeddings[un_labels], gen.sample_noise(len(un_labels), rng))
    rows = nx.concat_rows([nx.Tensor(real), syn, syn_un])
    labels = np.concatenate([real_labels, syn_labels, un_labels])
    origins = np.array([REAL_SEEN] * len(real_labels) + [SYN_SEEN] * len(syn_labels)
                       + [SYN_UNSEEN] * len(un_labels), dtype=object)
    align_cfg = align_cfg or AlignConfig(tau=cfg.tau)
    if cfg.uses_disentangle:
        # L_D is fitted on the real rows, so it trains the encoders and decoder
        # but not the generator; the generator sees the disentangled features
        # through L_A. Synthetic rows in L_U and L_recon let the generator
        # shrink its output toward whatever is easy to encode.
        dis = bundle.disentangler
        l_d = disentangle_pass(dis, real, real_labels, space, train_mode=True, rng=rng).total
        feats = encode_related(dis.related, rows, train_mode=True, rng=rng)
    else:
        l_d, feats = None, rows
    l_a = alignment_loss(AlignBatch(feats, labels, origins), space, align_cfg)
    aux = l_a if l_d is None else l_d + l_a
    return StepLosses(l_g + aux * cfg.lam, l_g, l_d, l_a)


def class_pools(train: FeatureDataset, space: SemanticSpace):
    pools = {int(c): np.flatnonzero(train.labels == c) for c in space.seen_ids}
    empty = [space.class_names[c] for c, p in pools.items() if len(p) == 0]
    if empty:
        raise ValidationError(f"no training features for seen classes {empty}")
    return pools


def new_bundle(space, d_x, cfg: TrainConfig, disentangle_cfg=None, seed=0):
    gen = build_generator(space, d_x, cfg, seed)
    dis = None
    if cfg.uses_disentangle:
        dis = Disentangler(d_x, space.dim, disentangle_cfg or DisentangleConfig(tau=cfg.tau), seed=nx.make_rng(seed, 23))
    return GeneratorBundle(gen, dis, [])


def train_generator(train: FeatureDataset, space: SemanticSpace, cfg: TrainConfig,
                    mmd_cfg: MmdConfig = MmdConfig(), disentangle_cfg=None, seed=0,
                    align_cfg=None) -> GeneratorBundle:
    """Stage 3: optimize the generator (and encoders) with Adam."""
    validate_generator_input(train, space)
    bundle = new_bundle(space, train.dim, cfg, disentangle_cfg, seed)
    params = bundle.generator.params() + (bundle.disentangler.params() if bundle.disentangler else [])
    state = AdamState(learning_rate=cfg.generator_lr)
    rng = nx.make_rng(seed, 31)
    pools = class_pools(train, space)
    window = []
    for step in range(cfg.generator_steps):
        zero_grad(params)
        losses = generator_step_loss(bundle, train, space, cfg, mmd_cfg, rng, pools, align_cfg)
        value = losses.total.item()
        if not math.isfinite(value):
            raise DivergenceError(f"generator loss is {value} at step {step}", step=step)
        losses.total.backward()
        adam_step(params, state)
        window.append(value)
        if len(window) == cfg.log_every or step == cfg.generator_steps - 1:
            bundle.curve.append(float(np.mean(window)))
            window = []
    return bundle


def synthesize(generator, space: SemanticSpace, classes, per_class, seed) -> FeatureDataset:
    if per_class < 1:
        raise ParameterError("per_class must be >= 1")
    rng = nx.make_rng(seed, 41)
    labels = np.repeat(np.asarray(classes, dtype=np.intp), per_class)
    feats = generator(space.embeddings[labels], generator.sample_noise(len(labels), rng)).data
    return feature_dataset(feats, labels, SYNTHETIC, space)


def synthesize_unseen(generator, space: SemanticSpace, per_class=100, seed=0) -> FeatureDataset:
    return synthesize(generator, space, space.unseen_ids, per_class, seed)


# ------------------------------------------------------------------ drivers

@dataclass
class PipelineResult:
    report: GzslReport
    pretrain_report: GzslReport | None
    curves: dict = field(default_factory=dict)
    classifier: Classifier | None = None
    bundle: GeneratorBundle | None = None


def run_pipeline(train: FeatureDataset, test: FeatureDataset, space: SemanticSpace, cfg: TrainConfig,
                 mmd_cfg: MmdConfig = MmdConfig(), disentangle_cfg=None, seed=None,
                 timer=None, align_cfg=None) -> PipelineResult:
    """Run every stage for one ablation row and seed."""
    seed = cfg.seed if seed is None else seed
    timer = timer or _NullTimer()
    curves = {}
    with timer("pretrain"):
        clf, curves["pretrain"] = pretrain_classifier(train, space, cfg, seed)
    pre = evaluate_gzsl(clf.expand(np.concatenate([space.seen_ids, space.unseen_ids])), test, space)
    if cfg.ablation == "projection":
        full = clf.expand(np.concatenate([space.seen_ids, space.unseen_ids]))
        with timer("evaluate"):
            report = evaluate_gzsl(full, test, space)
        return PipelineResult(report, pre, curves, full, None)

    with timer("generator"):
        bundle = train_generator(train, space, cfg, mmd_cfg, disentangle_cfg, seed, align_cfg)
    curves["generator"] = bundle.curve
    with timer("synthesize"):
        synthetic = synthesize_unseen(bundle.generator, space, cfg.synth_per_class, seed)
        if cfg.include_synthetic_seen:
            synthetic = concat_datasets([synthetic, synthesize(bundle.generator, space, space.seen_ids,
                                                               cfg.synth_per_class, [seed, 1])])
    with timer("finetune"):
        final, curves["finetune"] = retrain_classifier(clf, train, synthetic, space, cfg, seed)
    with timer("evaluate"):
        report = evaluate_gzsl(final, test, space)
    return PipelineResult(report, pre, curves, final, bundle)


class _NullTimer:
    def __call__(self, name):
        return self

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


@dataclass
class AblationRow:
    name: str
    reports: list  # one GzslReport per seed

    def mean(self, attr):
        return float(np.mean([getattr(r, attr) for r in self.reports]))

    def to_dict(self):
        return {"name": self.name, "seen_mean": self.mean("seen_mean"),
                "unseen_mean": self.mean("unseen_mean"), "hm": self.mean("hm"),
                "reports": [r.to_dict() for r in self.reports]}


def run_ablation(datasets, cfg: TrainConfig, seeds=(0,), rows=ABLATIONS, primitive_counts=None,
                 mmd_cfg: MmdConfig = MmdConfig(), disentangle_cfg=None, align_cfg=None):
    """Run the pipeline for each ablation row (or primitive count) and seed.

    ``datasets`` is either one ``(space, train, test)`` triple or a callable
    mapping a seed to one, so every row sees the same data for a given seed.
    """
    get = datasets if callable(datasets) else (lambda s: datasets)
    if primitive_counts:
        variants = [(f"P={n}", replace(cfg, n_primitives=int(n))) for n in primitive_counts]
    else:
        variants = [(name, replace(cfg, ablation=name)) for name in rows]
    table = []
    for name, row_cfg in variants:
        reports = []
        for s in seeds:
            space, train, test = get(s)
            result = run_pipeline(train, test, space, row_cfg, mmd_cfg, disentangle_cfg, seed=s,
                                  align_cfg=align_cfg)
            reports.append(result.report)
            log.info("%s seed=%s unseen=%.3f seen=%.3f", name, s, reports[-1].unseen_mean, reports[-1].seen_mean)
        table.append(AblationRow(name, reports))
    return table


def format_table(rows) -> str:
    head = f"{'row':<12}{'seen':>8}{'unseen':>8}{'HM':>8}{'seeds':>7}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.name:<12}{100 * r.mean('seen_mean'):8.1f}{100 * r.mean('unseen_mean'):8.1f}"
                     f"{100 * r.mean('hm'):8.1f}{len(r.reports):7d}")
    return "\n".join(lines)
