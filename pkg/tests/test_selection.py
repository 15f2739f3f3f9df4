import logging
import math

import numpy as np
import pytest
import torch

from modules.embedding_workers import RandomProjectionBackbone
from modules.errors import ConfigError, EmptyDatasetError, InvalidBudgetError, InvalidInputError
from modules.manifest import DatasetManifest
from modules.selection import (
    _assign,
    ClusterAssignment,
    extract_features,
    kmeans_cluster,
    load_selection,
    random_selection,
    save_selection,
    select_medoids,
    select_paired_samples,
)


def _blobs(seed=0, per_blob=6, centers=((0, 0), (50, 0), (0, 50))):
    rng = np.random.default_rng(seed)
    rows = [np.asarray(c, dtype=float) + rng.normal(0, 1, size=(per_blob, 2)) for c in centers]
    return np.concatenate(rows), np.repeat(np.arange(len(centers)), per_blob)


def _brute_force_medoids(features, labels, k):
    picks = []
    for cluster in range(k):
        members = [i for i in range(len(labels)) if labels[i] == cluster]
        if len(members) == 1:
            picks.append(members[0])
            continue
        means = []
        for i in members:
            total = sum(math.dist(features[i], features[j]) for j in members if j != i)
            means.append(total / (len(members) - 1))
        best = min(means)
        limit = best + 1e-12 * max(1.0, abs(best))
        picks.append(members[next(n for n, m in enumerate(means) if m <= limit)])
    return picks


def _assignment(features, labels, k):
    centroids = np.array([features[labels == c].mean(axis=0) for c in range(k)])
    return ClusterAssignment(labels=labels, centroids=centroids, inertia_trace=(0.0,), n_iter=0)


# --- k-means ---
def test_kmeans_recovers_separated_blobs():
    features, truth = _blobs()
    result = kmeans_cluster(features, 3, seed=0)
    assert result.k == 3
    for blob in range(3):
        assert len(set(result.labels[truth == blob])) == 1
    assert len(set(result.labels)) == 3


def test_kmeans_inertia_never_increases():
    rng = np.random.default_rng(5)
    features = rng.normal(size=(60, 4))
    trace = kmeans_cluster(features, 7, seed=2).inertia_trace
    assert all(b <= a * (1 + 1e-9) + 1e-12 for a, b in zip(trace, trace[1:]))


def test_kmeans_is_deterministic_for_a_seed():
    features = np.random.default_rng(1).normal(size=(30, 3))
    a = kmeans_cluster(features, 4, seed=9)
    b = kmeans_cluster(features, 4, seed=9)
    assert np.array_equal(a.labels, b.labels)
    assert np.array_equal(a.centroids, b.centroids)


def test_kmeans_every_cluster_non_empty_with_duplicate_points():
    features = np.array([[0.0, 0.0]] * 5 + [[1.0, 1.0]] * 2)
    result = kmeans_cluster(features, 4, seed=0)
    assert np.bincount(result.labels, minlength=4).min() >= 1


def test_kmeans_assignment_near_ties_go_to_lowest_index():
    centroids = np.array([[0.0], [2.0]])
    # distances to both centroids agree to within rounding
    features = np.array([[1.0 + 1e-13], [1.0 - 1e-13], [0.2], [1.9]])
    assert _assign(features, centroids).tolist() == [0, 0, 0, 1]


@pytest.mark.parametrize("k", [0, -1, 7])
def test_kmeans_rejects_out_of_range_k(k):
    with pytest.raises(InvalidBudgetError):
        kmeans_cluster(np.zeros((6, 2)) + np.arange(6)[:, None], k, seed=0)


def test_kmeans_rejects_non_finite_features():
    features = np.ones((4, 2))
    features[1, 1] = np.nan
    with pytest.raises(InvalidInputError):
        kmeans_cluster(features, 2, seed=0)


# --- medoids ---
def test_select_medoids_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        k = int(rng.integers(1, 5))
        sizes = rng.integers(1, 13, size=k)
        labels = np.repeat(np.arange(k), sizes)
        rng.shuffle(labels)
        dim = int(rng.integers(1, 4))
        # small integer coordinates produce frequent exact ties
        features = rng.integers(-3, 4, size=(labels.size, dim)).astype(float)
        result = select_medoids(features, _assignment(features, labels, k))
        expected = _brute_force_medoids(features, labels, k)
        assert result.selected_ids == [str(i) for i in expected]


def test_select_medoids_tie_goes_to_lowest_index():
    features = np.array([[0.0], [2.0], [5.0], [7.0]])
    labels = np.array([0, 0, 1, 1])
    result = select_medoids(features, _assignment(features, labels, 2), ids=["a", "b", "c", "d"])
    assert result.selected_ids == ["a", "c"]
    assert result.mean_distances == [2.0, 2.0]


def test_select_medoids_singleton_cluster_has_zero_distance():
    features = np.array([[0.0], [1.0], [9.0]])
    labels = np.array([0, 0, 1])
    result = select_medoids(features, _assignment(features, labels, 2))
    assert result.selected_ids[1] == "2"
    assert result.mean_distances[1] == 0.0
    assert result.cluster_indices == [0, 1]


def test_select_medoids_with_k_equal_rows_returns_everything():
    features = np.random.default_rng(0).normal(size=(5, 3))
    assignment = kmeans_cluster(features, 5, seed=0)
    result = select_medoids(features, assignment)
    assert sorted(result.selected_ids) == ["0", "1", "2", "3", "4"]
    assert result.mean_distances == [0.0] * 5


def test_select_medoids_validates_assignment():
    features = np.zeros((3, 2))
    bad = ClusterAssignment(labels=np.array([0, 1]), centroids=np.zeros((2, 2)), inertia_trace=(0.0,), n_iter=0)
    with pytest.raises(InvalidInputError):
        select_medoids(features, bad)
    empty = ClusterAssignment(labels=np.array([0, 0, 0]), centroids=np.zeros((2, 2)), inertia_trace=(0.0,), n_iter=0)
    with pytest.raises(InvalidInputError):
        select_medoids(features, empty)


# --- features and strategies ---
def test_extract_features_keeps_input_order():
    backbone = RandomProjectionBackbone(input_size=8, dim=5, seed=1)
    images = [torch.zeros(3, 8, 8), torch.ones(3, 8, 8)]
    features = extract_features(images, backbone, batch_size=1)
    assert features.shape == (2, 5)
    assert features.dtype == np.float64
    assert np.allclose(features[0], backbone.bias.numpy())
    assert not np.allclose(features[1], features[0])


def test_backbone_rejects_wrong_input_size():
    backbone = RandomProjectionBackbone(input_size=8, dim=5)
    with pytest.raises(ConfigError):
        backbone.embed(torch.zeros(1, 3, 16, 16))


def test_random_selection_is_sorted_and_reproducible():
    ids = [f"s{i}" for i in range(20)]
    a = random_selection(ids, 5, seed=3)
    assert a == random_selection(ids, 5, seed=3)
    assert a.selected_ids == sorted(a.selected_ids, key=ids.index)
    assert len(set(a.selected_ids)) == 5
    assert a.cluster_indices == [-1] * 5
    assert random_selection(ids, 50, seed=0).selected_ids == ids


def test_select_paired_samples_on_toy_dataset(toy_dataset, caplog):
    _, manifest = toy_dataset
    backbone = RandomProjectionBackbone(input_size=16, dim=32, seed=0)
    first = select_paired_samples(manifest, 1, backbone, seed=0)
    again = select_paired_samples(manifest, 1, backbone, seed=0)
    assert len(first.selected_ids) == 1
    assert first.selected_ids == again.selected_ids
    assert first.selected_ids[0] in manifest.paired_ids()

    with caplog.at_level(logging.WARNING):
        everything = select_paired_samples(manifest, 5, backbone, seed=0)
    assert sorted(everything.selected_ids) == sorted(manifest.paired_ids())
    assert "exceeds" in caplog.text


def test_select_paired_samples_errors(toy_dataset):
    _, manifest = toy_dataset
    with pytest.raises(InvalidBudgetError):
        select_paired_samples(manifest, 0, None, seed=0, strategy="random")
    with pytest.raises(ConfigError):
        select_paired_samples(manifest, 1, None, seed=0, strategy="kmedoids")
    with pytest.raises(EmptyDatasetError):
        select_paired_samples(DatasetManifest(), 1, None, seed=0, strategy="random")


def test_selection_file_is_byte_identical(tmp_path):
    result = random_selection([f"s{i}" for i in range(10)], 3, seed=1)
    save_selection(result, tmp_path / "a.json")
    save_selection(load_selection(tmp_path / "a.json"), tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert load_selection(tmp_path / "a.json") == result


def test_load_selection_rejects_garbage(tmp_path):
    path = tmp_path / "s.json"
    path.write_text("[]", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_selection(path)


class _CountingBackbone(RandomProjectionBackbone):
    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.batch_sizes = []

    def embed(self, batch):
        self.batch_sizes.append(batch.shape[0])
        return super().embed(batch)


def test_select_passes_feature_batch_size(toy_dataset):
    _, manifest = toy_dataset
    backbone = _CountingBackbone(input_size=16, dim=8, seed=0)
    select_paired_samples(manifest, 2, backbone, seed=0, pool="unpaired", batch_size=2)
    assert backbone.batch_sizes == [2, 1]


@pytest.mark.parametrize("strategy", ["kmedoids", "random"])
def test_select_from_unpaired_pool(toy_dataset, strategy):
    _, manifest = toy_dataset
    backbone = RandomProjectionBackbone(input_size=16, dim=32, seed=0)
    result = select_paired_samples(manifest, 2, backbone, seed=1, strategy=strategy, pool="unpaired")
    assert result.pool == "unpaired"
    assert len(result.selected_ids) == 2
    assert set(result.selected_ids) <= set(manifest.unpaired_x_ids())
    assert result == select_paired_samples(manifest, 2, backbone, seed=1, strategy=strategy, pool="unpaired")


def test_unknown_candidate_pool_is_rejected(toy_dataset):
    _, manifest = toy_dataset
    with pytest.raises(ConfigError):
        select_paired_samples(manifest, 1, None, seed=0, strategy="random", pool="test")
