import numpy as np
import pytest
from dataclasses import replace

from pading import numerics as nx
from pading.data import (REAL, SEEN, SYNTHETIC, UNSEEN, SyntheticSpec, feature_dataset, make_synthetic_dataset,
                         toy_semantic_space)
from pading.errors import ParameterError, ValidationError
from pading.generator import MmdConfig
from pading.numerics import grad_check
from pading.pipeline import (Classifier, GzslReport, TrainConfig, class_pools, evaluate_gzsl,
                             generator_step_loss, gzsl_report, harmonic_mean, new_bundle, pretrain_classifier,
                             retrain_classifier, run_pipeline, synthesize_unseen, train_generator)

FAST = TrainConfig(d_k=8, n_primitives=12, generator_steps=30, real_per_class=4, unseen_per_class=4,
                   pretrain_epochs=5, finetune_epochs=5, synth_per_class=20)


# ------------------------------------------------------------ harmonic mean

@pytest.mark.parametrize("seen, unseen, expected", [
    (53.0, 8.0, 13.9),
    (0.5, 0.5, 0.5),
    (70.0, 0.0, 0.0),
    (0.0, 0.0, 0.0),
])
def test_harmonic_mean_examples(seen, unseen, expected):
    assert harmonic_mean(seen, unseen) == pytest.approx(expected, abs=0.05)


def test_harmonic_mean_full_precision():
    assert harmonic_mean(41.5, 15.3) == pytest.approx(22.3574, abs=1e-4)
    assert harmonic_mean(0.415, 0.153) == pytest.approx(0.2236, abs=1e-4)
    assert harmonic_mean(43.0, 3.6) == pytest.approx(6.6438, abs=1e-4)


def test_harmonic_mean_rejects_negative():
    with pytest.raises(ParameterError):
        harmonic_mean(-0.1, 0.5)


# --------------------------------------------------------------- reporting

def test_perfect_and_blind_classifiers(small_space):
    labels = np.array([0, 0, 1, 2, 3, 3])
    perfect = gzsl_report(labels, labels, small_space)
    assert perfect.seen_mean == perfect.unseen_mean == perfect.hm == 1.0
    seen_only = gzsl_report(np.where(labels == 3, 0, labels), labels, small_space)
    assert seen_only.unseen_mean == 0.0 and seen_only.hm == 0.0 and seen_only.seen_mean == 1.0


def test_report_group_means_are_unweighted(small_space):
    labels = np.array([0, 0, 0, 0, 1, 2, 3])
    pred = np.array([0, 1, 1, 1, 1, 2, 3])  # class 0 at 25%, others perfect
    report = gzsl_report(pred, labels, small_space)
    assert report.seen_mean == pytest.approx((0.25 + 1 + 1) / 3)
    assert report.hm == pytest.approx(harmonic_mean(report.seen_mean, report.unseen_mean), abs=1e-9)
    assert report.counts[small_space.class_names[0]] == 4


def test_missing_test_class_is_excluded_with_warning(small_space):
    labels = np.array([0, 1, 3])
    with pytest.warns(UserWarning, match="no test samples"):
        report = gzsl_report(labels, labels, small_space)
    assert report.seen_mean == 1.0 and small_space.class_names[2] not in report.per_class_accuracy


def test_report_dict_round_trip(small_space):
    report = gzsl_report([0, 1, 1, 3], [0, 1, 2, 3], small_space)
    assert GzslReport.from_dict(report.to_dict()) == report


def test_ties_go_to_lowest_index(small_space):
    clf = Classifier("learned", 2, [0, 1, 2, 3], small_space.embeddings)
    assert clf.predict(np.ones((3, 2))).tolist() == [0, 0, 0]


def test_evaluate_requires_all_classes(small_space):
    clf = Classifier("learned", 2, small_space.seen_ids, small_space.embeddings)
    test = feature_dataset(np.zeros((1, 2)), [0], REAL, small_space)
    with pytest.raises(ValidationError):
        evaluate_gzsl(clf, test, small_space)


# -------------------------------------------------------------- classifier

def _clean(space, seed=0, per_class=30):
    spec = SyntheticSpec(related_noise=0.0, nuisance_scale=0.0, samples_per_class=per_class, seed=seed,
                         related_scale=3.0)
    return make_synthetic_dataset(space, spec)


def test_pretrain_separates_zero_noise_data(toy_space):
    train, _ = _clean(toy_space)
    clf, curve = pretrain_classifier(train, toy_space, replace(TrainConfig(), pretrain_epochs=60))
    assert np.mean(clf.predict(train.features) == train.labels) >= 0.99
    assert curve[-1] < curve[0]


def test_pretrain_rejects_unseen_and_empty(toy_space, toy_data):
    train, test = toy_data
    with pytest.raises(ValidationError):
        pretrain_classifier(test, toy_space, FAST)
    with pytest.raises(ValidationError):
        pretrain_classifier(train.subset([]), toy_space, FAST)


def test_projection_head_scores_semantic_rows(small_space):
    clf = Classifier("projection", small_space.dim, [0, 1, 2, 3], small_space.embeddings)
    clf.projection.data[...] = np.eye(small_space.dim)
    x = small_space.embeddings[[2, 0]]
    np.testing.assert_allclose(clf.logits(x).data, x @ small_space.embeddings.T, atol=1e-15)
    assert clf.predict(x).tolist() == [2, 0]


def test_expand_keeps_seen_columns_and_zero_inits_new(toy_space, toy_data):
    train, _ = toy_data
    clf, _ = pretrain_classifier(train, toy_space, FAST)
    all_ids = np.concatenate([toy_space.seen_ids, toy_space.unseen_ids])
    wide = clf.expand(all_ids)
    assert wide.n_outputs == toy_space.n_classes == wide.weights.shape[1]
    np.testing.assert_array_equal(wide.weights.data[:, :toy_space.n_seen], clf.weights.data)
    assert np.all(wide.weights.data[:, toy_space.n_seen:] == 0)


def test_zero_epoch_finetune_only_expands(toy_space, toy_data):
    train, _ = toy_data
    clf, _ = pretrain_classifier(train, toy_space, FAST)
    synthetic = feature_dataset(np.ones((2, train.dim)), toy_space.unseen_ids[:2], SYNTHETIC, toy_space)
    out, _ = retrain_classifier(clf, train, synthetic, toy_space, replace(FAST, finetune_epochs=0))
    np.testing.assert_array_equal(out.weights.data, clf.expand(out.classes).weights.data)
    with pytest.raises(ValidationError):
        retrain_classifier(clf, train, synthetic.subset([]), toy_space, FAST)


def test_retrain_fits_union_of_real_and_clean_unseen(toy_space):
    train, test = _clean(toy_space)
    unseen_rows = np.flatnonzero(np.isin(test.labels, toy_space.unseen_ids))
    unseen = test.subset(unseen_rows)
    synthetic = feature_dataset(unseen.features, unseen.labels, SYNTHETIC, toy_space)
    cfg = replace(TrainConfig(), pretrain_epochs=30, finetune_epochs=60)
    clf, _ = pretrain_classifier(train, toy_space, cfg)
    out, _ = retrain_classifier(clf, train, synthetic, toy_space, cfg)
    union_x = np.vstack([train.features, synthetic.features])
    union_y = np.concatenate([train.labels, synthetic.labels])
    assert np.mean(out.predict(union_x) == union_y) >= 0.90


# --------------------------------------------------------------- generator

def test_synthesize_unseen_counts_and_variance(toy_space):
    bundle = new_bundle(toy_space, 32, FAST, seed=0)
    data = synthesize_unseen(bundle.generator, toy_space, per_class=100, seed=3)
    assert len(data) == 400 and set(data.labels) <= set(toy_space.unseen_ids)
    assert set(data.provenance) == {SYNTHETIC} and set(data.group) == {UNSEEN}
    for c in toy_space.unseen_ids:
        assert np.all(data.features[data.labels == c].var(axis=0) > 0)
    again = synthesize_unseen(bundle.generator, toy_space, per_class=100, seed=3)
    other = synthesize_unseen(bundle.generator, toy_space, per_class=100, seed=4)
    assert again.equals(data) and not np.array_equal(other.features, data.features)
    with pytest.raises(ParameterError):
        synthesize_unseen(bundle.generator, toy_space, per_class=0)


def _micro(seed=0):
    space = toy_semantic_space(n_seen=3, n_unseen=1, dim=5, n_groups=2, seed=seed)
    train, _ = make_synthetic_dataset(space, SyntheticSpec(d_a=5, d_x=8, nuisance_dim=3, samples_per_class=6,
                                                           seed=seed))
    return space, train


def test_lambda_zero_full_equals_p_only():
    space, train = _micro()
    full = replace(FAST, ablation="full", lam=0.0)
    plain = replace(FAST, ablation="p_only")
    bundle = new_bundle(space, train.dim, full, seed=1)
    a = generator_step_loss(bundle, train, space, full, MmdConfig(), np.random.default_rng(5))
    b = generator_step_loss(bundle, train, space, plain, MmdConfig(), np.random.default_rng(5))
    assert a.total.item() == b.total.item()
    assert a.disentangle.item() > 0 and a.align is not None


@pytest.mark.parametrize("ablation", ["gmmn", "p_only", "p_a", "full"])
def test_total_loss_gradients_on_micro_batch(ablation):
    space, train = _micro(2)
    cfg = replace(FAST, ablation=ablation, lam=0.5)
    bundle = new_bundle(space, train.dim, cfg, seed=0)
    params = bundle.generator.params() + (bundle.disentangler.params() if bundle.disentangler else [])
    pools = class_pools(train, space)

    def loss():
        return generator_step_loss(bundle, train, space, cfg, MmdConfig(), np.random.default_rng(9), pools).total

    assert grad_check(loss, params, probe_count=30, eps=1e-5).max_rel_error < 1e-3


def test_generator_loss_decreases(toy_space, toy_data):
    train, _ = toy_data
    early, late = [], []
    for seed in range(3):
        cfg = replace(FAST, ablation="p_only", generator_steps=200, log_every=10, generator_lr=2e-3)
        curve = train_generator(train, toy_space, cfg, seed=seed).curve
        early.append(curve[0])
        late.append(curve[-1])
    assert np.mean(late) < np.mean(early)


def test_pipeline_is_deterministic(toy_space, toy_data):
    train, test = toy_data
    cfg = replace(FAST, ablation="full")
    a = run_pipeline(train, test, toy_space, cfg, seed=4)
    b = run_pipeline(train, test, toy_space, cfg, seed=4)
    assert a.report == b.report
    for (ka, pa), (kb, pb) in zip(a.bundle.generator.named_params().items(),
                                  b.bundle.generator.named_params().items()):
        assert ka == kb and np.array_equal(pa.data, pb.data)


def test_projection_row_skips_generator(toy_space, toy_data):
    train, test = toy_data
    result = run_pipeline(train, test, toy_space, replace(FAST, ablation="projection"), seed=0)
    assert result.bundle is None and result.classifier.n_outputs == toy_space.n_classes


def test_config_validation():
    with pytest.raises(ParameterError):
        TrainConfig(ablation="nope")
    with pytest.raises(ParameterError):
        TrainConfig(lam=-1.0)
