import os
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, Field, ValidationError
from sklearn.cluster import kmeans_plusplus

from .data_pipeline import load_image, resize_image
from .embedding_workers import BaseEmbeddingBackbone
from .errors import ConfigError, EmptyDatasetError, InvalidBudgetError, InvalidInputError
from .manifest import DatasetManifest

Strategy = Literal["kmedoids", "random"]
CandidatePool = Literal["paired", "unpaired"]

KMEANS_TOL: float = 1e-6
KMEANS_MAX_ITER: int = 300
TIE_RTOL: float = 1e-12


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray  # (rows,) cluster index per sample
    centroids: np.ndarray  # (k, cols)
    inertia_trace: Tuple[float, ...]  # within-cluster sum of squares after each assignment
    n_iter: int

    @property
    def k(self) -> int:
        return int(self.centroids.shape[0])


class SelectionResult(BaseModel):
    budget: int = Field(ge=1)
    strategy: Strategy = "kmedoids"
    seed: int = 0
    pool: CandidatePool = "paired"
    selected_ids: List[str]
    cluster_indices: List[int]
    mean_distances: List[float]


def _check_features(features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] == 0 or features.shape[1] == 0:
        raise InvalidInputError(f"Feature matrix must be non-empty 2-D, got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise InvalidInputError("Feature matrix holds non-finite values")
    return features


def extract_features(
    images: Sequence[torch.Tensor], backbone: BaseEmbeddingBackbone, batch_size: int = 16
) -> np.ndarray:
    """One feature row per image, in input order."""
    if len(images) == 0:
        raise InvalidInputError("extract_features needs at least one image")
    rows: List[np.ndarray] = []
    for start in range(0, len(images), batch_size):
        batch = torch.stack([img if img.ndim == 3 else img[0] for img in images[start : start + batch_size]])
        rows.append(backbone.embed(batch).cpu().numpy().astype(np.float64))
    features = np.concatenate(rows, axis=0)
    logging.debug(f"Extracted features: {features.shape[0]}x{features.shape[1]}")
    return _check_features(features)


def _squared_distances(features: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    diff = features[:, None, :] - centroids[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _inertia(features: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    diff = features - centroids[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def _assign(features: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Nearest centroid per row; near-equal distances (relative 1e-12) go to the lowest index."""
    dist = _squared_distances(features, centroids)
    best = dist.min(axis=1, keepdims=True)
    near = dist <= best + TIE_RTOL * np.maximum(1.0, np.abs(best))
    return np.argmax(near, axis=1)


def _repair_empty_clusters(
    features: np.ndarray, labels: np.ndarray, centroids: np.ndarray
) -> None:
    """Moves, for each empty cluster, the point farthest from its centroid into it (in place)."""
    k = centroids.shape[0]
    counts = np.bincount(labels, minlength=k)
    for cluster in np.flatnonzero(counts == 0):
        dist = np.linalg.norm(features - centroids[labels], axis=1)
        dist[counts[labels] <= 1] = -1.0  # never empty a singleton
        donor = int(np.argmax(dist))
        counts[labels[donor]] -= 1
        labels[donor] = cluster
        counts[cluster] = 1
        centroids[cluster] = features[donor]
        logging.debug(f"k-means: empty cluster {cluster} re-seeded with sample {donor}")


def kmeans_cluster(
    features: np.ndarray,
    k: int,
    seed: int,
    tol: float = KMEANS_TOL,
    max_iter: int = KMEANS_MAX_ITER,
) -> ClusterAssignment:
    """Lloyd's algorithm from k-means++ seeding; every cluster ends with at least one member."""
    features = _check_features(features)
    rows = features.shape[0]
    if k <= 0 or k > rows:
        raise InvalidBudgetError(f"k must lie in [1, {rows}], got {k}")

    centroids, _ = kmeans_plusplus(features, n_clusters=k, random_state=seed % 2**32)
    centroids = np.array(centroids, dtype=np.float64)
    labels = _assign(features, centroids)
    trace = [_inertia(features, labels, centroids)]

    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        _repair_empty_clusters(features, labels, centroids)
        new_centroids = np.array(
            [features[labels == c].mean(axis=0) for c in range(k)], dtype=np.float64
        )
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        labels = _assign(features, centroids)
        trace.append(_inertia(features, labels, centroids))
        if shift < tol:
            break

    # the final assignment can leave a cluster empty again
    if np.bincount(labels, minlength=k).min() == 0:
        _repair_empty_clusters(features, labels, centroids)
        centroids = np.array([features[labels == c].mean(axis=0) for c in range(k)])
        trace.append(_inertia(features, labels, centroids))

    logging.debug(f"k-means converged after {n_iter} iterations, inertia {trace[-1]:.6g}")
    return ClusterAssignment(
        labels=labels.astype(np.int64),
        centroids=centroids,
        inertia_trace=tuple(trace),
        n_iter=n_iter,
    )


def _argmin_lowest(values: np.ndarray) -> int:
    """Index of the minimum; near-equal values (relative 1e-12) resolve to the lowest index."""
    best = float(np.min(values))
    limit = best + TIE_RTOL * max(1.0, abs(best))
    return int(np.flatnonzero(values <= limit)[0])


def select_medoids(
    features: np.ndarray,
    assignment: ClusterAssignment,
    ids: Optional[Sequence[str]] = None,
    budget: Optional[int] = None,
    seed: int = 0,
) -> SelectionResult:
    """Per cluster, the member with least mean Euclidean distance to the other members."""
    features = _check_features(features)
    labels = np.asarray(assignment.labels)
    k = assignment.k
    if labels.shape != (features.shape[0],):
        raise InvalidInputError("assignment labels do not match the feature rows")
    if assignment.centroids.ndim != 2 or assignment.centroids.shape[1] != features.shape[1]:
        raise InvalidInputError("assignment centroids do not match the feature dimension")
    if labels.min() < 0 or labels.max() >= k:
        raise InvalidInputError("assignment holds cluster indices outside [0, k)")
    ids = [str(i) for i in range(features.shape[0])] if ids is None else list(ids)
    if len(ids) != features.shape[0]:
        raise InvalidInputError("ids do not match the feature rows")

    selected: List[str] = []
    clusters: List[int] = []
    mean_distances: List[float] = []
    for cluster in range(k):
        members = np.flatnonzero(labels == cluster)
        if members.size == 0:
            raise InvalidInputError(f"cluster {cluster} has no members")
        if members.size == 1:
            best, mean_dist = int(members[0]), 0.0
        else:
            pts = features[members]
            diff = pts[:, None, :] - pts[None, :, :]
            dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
            means = dist.sum(axis=1) / (members.size - 1)
            local = _argmin_lowest(means)
            best, mean_dist = int(members[local]), float(means[local])
        selected.append(ids[best])
        clusters.append(cluster)
        mean_distances.append(mean_dist)

    return SelectionResult(
        budget=budget if budget is not None else k,
        strategy="kmedoids",
        seed=seed,
        selected_ids=selected,
        cluster_indices=clusters,
        mean_distances=mean_distances,
    )


def random_selection(ids: Sequence[str], budget: int, seed: int) -> SelectionResult:
    """Uniform sample without replacement; the baseline strategy."""
    if budget < 1:
        raise InvalidBudgetError(f"budget must be >= 1, got {budget}")
    if not ids:
        raise EmptyDatasetError("No candidate samples to select from.")
    count = min(budget, len(ids))
    rng = np.random.default_rng(seed % 2**32)
    picks = sorted(int(i) for i in rng.choice(len(ids), size=count, replace=False))
    return SelectionResult(
        budget=budget,
        strategy="random",
        seed=seed,
        selected_ids=[ids[i] for i in picks],
        cluster_indices=[-1] * count,
        mean_distances=[0.0] * count,
    )


def _candidates(manifest: DatasetManifest, pool: CandidatePool) -> Tuple[List[str], List[Path]]:
    """Candidate ids and their domain-X image paths."""
    if pool == "paired":
        return manifest.paired_ids(), [manifest.resolve(e.path_x) for e in manifest.paired]
    if pool == "unpaired":
        return manifest.unpaired_x_ids(), [manifest.resolve(e.path) for e in manifest.unpaired_x]
    raise ConfigError(f"Unknown candidate pool '{pool}', expected 'paired' or 'unpaired'")


def _load_candidates(paths: Sequence[Path], size: int, max_workers: int = 4) -> List[torch.Tensor]:
    def load_one(path: Path) -> torch.Tensor:
        return resize_image(load_image(path), (size, size), "X")

    # image decoding is independent per sample
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(load_one, paths))


def select_paired_samples(
    manifest: DatasetManifest,
    budget: int,
    backbone: Optional[BaseEmbeddingBackbone],
    seed: int,
    strategy: Strategy = "kmedoids",
    pool: CandidatePool = "paired",
    batch_size: int = 16,
) -> SelectionResult:
    """
    Chooses which of the manifest's paired samples keep their pairing:
    k-medoids (features -> k-means with k = budget -> medoids) or uniform random.
    With pool="unpaired" the same strategies pick a subset of the unpaired X images instead.
    """
    if budget < 1:
        raise InvalidBudgetError(f"budget must be >= 1, got {budget}")
    ids, paths = _candidates(manifest, pool)
    if not ids:
        raise EmptyDatasetError(f"Manifest has no {pool} candidates to select from.")
    if budget > len(ids):
        logging.warning(
            f"Budget {budget} exceeds the {len(ids)} candidates; selecting all of them."
        )

    if strategy == "random":
        result = random_selection(ids, budget, seed)
    elif strategy == "kmedoids":
        if backbone is None:
            raise ConfigError("k-medoids selection needs an embedding backbone")
        images = _load_candidates(paths, backbone.input_size)
        features = extract_features(images, backbone, batch_size=batch_size)
        k = min(budget, len(ids))
        assignment = kmeans_cluster(features, k, seed)
        result = select_medoids(features, assignment, ids=ids, budget=budget, seed=seed)
    else:
        raise ConfigError(f"Unknown selection strategy '{strategy}'")
    result.pool = pool

    logging.info(
        f"Selected {len(result.selected_ids)} of {len(ids)} {pool} samples ({strategy}, seed {seed})."
    )
    return result


def save_selection(result: SelectionResult, path: Union[str, Path]) -> None:
    out_path = Path(path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = out_path.with_suffix(out_path.suffix + ".tmp")
    with open(tmp_path, "w", encoding="utf-8") as f:
        json.dump(result.model_dump(mode="json"), f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp_path, out_path)
    logging.debug(f"Selection saved to {out_path}")


def load_selection(path: Union[str, Path]) -> SelectionResult:
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw_data = json.load(f)
        return SelectionResult.model_validate(raw_data)
    except (json.JSONDecodeError, ValidationError, OSError) as e:
        logging.error(f"Error loading selection '{path}': {e}")
        raise ConfigError(f"Cannot load selection '{path}': {e}") from e
