import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pading.data import (REAL, SEEN, SYNTHETIC, SyntheticSpec, batch_iter, class_means, export_features,
                         feature_dataset, load_feature_dataset, load_semantic_space, make_synthetic_dataset,
                         toy_semantic_space, write_embeddings)
from pading.errors import ClassLookupError, FormatError, ParameterError, ParseError, ValidationError


@pytest.fixture
def emb_file(tmp_path):
    path = tmp_path / "emb.txt"
    path.write_text("3 4\na 1 0 0 0\nb 0 2 0 0\nc 1 1 1 1\n")
    return path


def test_load_semantic_space(emb_file):
    space = load_semantic_space(emb_file, ["a", "b"], ["c"])
    assert space.n_seen == 2 and space.n_unseen == 1
    assert space.class_names == ("a", "b", "c")
    np.testing.assert_allclose(np.linalg.norm(space.embeddings, axis=1), 1.0, atol=1e-9)
    np.testing.assert_allclose(space.embeddings[2], [0.5] * 4)
    assert set(space.seen_ids) & set(space.unseen_ids) == set()


def test_row_order_follows_request(emb_file):
    space = load_semantic_space(emb_file, ["c"], ["b", "a"])
    assert space.class_names == ("c", "b", "a")
    np.testing.assert_allclose(space.embeddings[1], [0, 1, 0, 0])


def test_missing_name_is_lookup_error(emb_file):
    with pytest.raises(ClassLookupError, match="zebra"):
        load_semantic_space(emb_file, ["a", "zebra"], ["c"])


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("2 2\na 1 0\nb 1 x\n")
    with pytest.raises(ParseError, match=":3:"):
        load_semantic_space(path, ["a"], ["b"])


def test_duplicate_name_is_format_error(tmp_path):
    path = tmp_path / "dup.txt"
    path.write_text("2 2\na 1 0\na 0 1\n")
    with pytest.raises(FormatError):
        load_semantic_space(path, ["a"], [])


def test_embedding_round_trip(tmp_path, toy_space):
    path = tmp_path / "toy.txt"
    write_embeddings(path, toy_space.class_names, toy_space.embeddings)
    again = load_semantic_space(path, [toy_space.class_names[i] for i in toy_space.seen_ids],
                                [toy_space.class_names[i] for i in toy_space.unseen_ids])
    np.testing.assert_allclose(again.embeddings, toy_space.embeddings, atol=1e-15)


def test_toy_space_is_disjoint_and_normalized(toy_space):
    assert toy_space.n_seen == 12 and toy_space.n_unseen == 4
    assert not set(toy_space.seen_ids) & set(toy_space.unseen_ids)
    np.testing.assert_allclose(np.linalg.norm(toy_space.embeddings, axis=1), 1.0, atol=1e-9)


# -------------------------------------------------------- synthetic dataset

def test_zero_noise_samples_equal_class_mean(toy_space):
    spec = SyntheticSpec(related_noise=0.0, nuisance_scale=0.0, samples_per_class=3, seed=4)
    train, test = make_synthetic_dataset(toy_space, spec)
    means = class_means(toy_space, spec)
    for ds in (train, test):
        np.testing.assert_array_equal(ds.features, means[ds.labels])
    assert np.all(means[:, spec.d_x - spec.nuisance_dim:] == 0.0)


def test_train_is_real_seen_only(toy_data, toy_space):
    train, test = toy_data
    assert set(train.provenance) == {REAL} and set(train.group) == {SEEN}
    assert set(train.labels) == set(toy_space.seen_ids)
    assert set(test.labels) == set(range(toy_space.n_classes))
    counts = np.bincount(test.labels)
    assert np.all(counts == counts[0])


def test_related_block_preserves_semantic_cosine(toy_space):
    spec = SyntheticSpec(nuisance_scale=0.0, related_noise=0.0, samples_per_class=1)
    related = class_means(toy_space, spec)[:, :spec.d_x - spec.nuisance_dim]
    unit = related / np.linalg.norm(related, axis=1, keepdims=True)
    a = toy_space.embeddings
    assert np.abs(unit @ unit.T - a @ a.T).max() < 0.05


def test_synthetic_dataset_is_pure(toy_space):
    spec = SyntheticSpec(samples_per_class=5, seed=9)
    first = make_synthetic_dataset(toy_space, spec)
    second = make_synthetic_dataset(toy_space, spec)
    assert all(a.equals(b) for a, b in zip(first, second))


def test_spec_validation(toy_space):
    with pytest.raises(ParameterError):
        make_synthetic_dataset(toy_space, SyntheticSpec(samples_per_class=0))
    with pytest.raises(ParameterError):
        make_synthetic_dataset(toy_space, SyntheticSpec(d_x=20))
    with pytest.raises(ParameterError):
        make_synthetic_dataset(toy_space, SyntheticSpec(related_noise=-1.0))


# ------------------------------------------------------------- feature CSV

def test_export_load_round_trip(tmp_path, toy_data, toy_space):
    train, test = toy_data
    path = tmp_path / "feat.csv"
    export_features(test, path, toy_space)
    again = load_feature_dataset(path, toy_space)
    assert again.equals(test)


def test_export_empty_and_single(tmp_path, toy_data, toy_space):
    train, _ = toy_data
    empty = train.subset([])
    path = tmp_path / "empty.csv"
    export_features(empty, path, toy_space)
    assert len(path.read_text().splitlines()) == 1
    loaded = load_feature_dataset(path, toy_space)
    assert len(loaded) == 0 and loaded.dim == train.dim
    export_features(train.subset([0]), path, toy_space)
    assert len(path.read_text().splitlines()) == 2


def test_load_two_rows(tmp_path, small_space):
    path = tmp_path / "two.csv"
    names = small_space.class_names
    path.write_text("label,provenance,group,f0,f1\n"
                    f"{names[0]},real,seen,1.5,2\n{names[3]},synthetic,unseen,0,-1e-3\n")
    ds = load_feature_dataset(path, small_space)
    assert len(ds) == 2 and ds.dim == 2
    assert ds.labels.tolist() == [0, 3]
    assert ds.provenance.tolist() == [REAL, SYNTHETIC]


@pytest.mark.parametrize("row, match", [
    ("nope,real,seen,1,2", "unknown label"),
    ("{seen},real,seen,1", "expected 5 fields"),
    ("{seen},real,seen,1,abc", "non-numeric"),
    ("{seen},fake,seen,1,2", "provenance"),
])
def test_load_rejects_bad_rows(tmp_path, small_space, row, match):
    path = tmp_path / "bad.csv"
    path.write_text("label,provenance,group,f0,f1\n" + row.format(seen=small_space.class_names[0]) + "\n")
    with pytest.raises(ParseError, match=f"row 0.*{match}"):
        load_feature_dataset(path, small_space)


def test_generator_input_rejects_real_unseen(tmp_path, small_space):
    path = tmp_path / "leak.csv"
    path.write_text(f"label,provenance,group,f0\n{small_space.class_names[3]},real,unseen,1\n")
    assert len(load_feature_dataset(path, small_space)) == 1
    with pytest.raises(ValidationError):
        load_feature_dataset(path, small_space, generator_input=True)


def test_round_trip_preserves_awkward_floats(tmp_path, small_space):
    values = np.array([[0.1, 1 / 3], [-1e-300, 12345678.901234567], [np.pi, np.nextafter(1.0, 2.0)]])
    ds = feature_dataset(values, [0, 1, 3], SYNTHETIC, small_space)
    path = tmp_path / "f.csv"
    export_features(ds, path, small_space)
    assert np.array_equal(load_feature_dataset(path, small_space).features, values)


# ----------------------------------------------------------------- batches

def test_batch_sizes():
    assert [len(b) for b in batch_iter(10, 4, seed=0)] == [4, 4, 2]


@settings(max_examples=50)
@given(st.integers(0, 200), st.integers(1, 50), st.integers(0, 2**32 - 1))
def test_batches_partition_indices(n, size, seed):
    batches = batch_iter(n, size, seed)
    flat = np.concatenate(batches) if batches else np.array([], dtype=int)
    assert sorted(flat.tolist()) == list(range(n))
    assert [b.tolist() for b in batches] == [b.tolist() for b in batch_iter(n, size, seed)]


def test_batch_size_must_be_positive():
    with pytest.raises(ParameterError):
        batch_iter(5, 0, seed=0)


@given(st.integers(0, 2**16), st.integers(1, 10), st.integers(1, 5))
@settings(max_examples=20, deadline=None)
def test_toy_space_split_always_disjoint(seed, n_seen, n_unseen):
    space = toy_semantic_space(n_seen=n_seen, n_unseen=n_unseen, dim=6, n_groups=3, seed=seed)
    assert not set(space.seen_ids) & set(space.unseen_ids)
    assert len(space.seen_ids) + len(space.unseen_ids) == space.n_classes
