"""Distribution-shift feature scores for selector inputs.

Two scores, both fit on training-split features only:

* kNN: mean cosine distance from a query to its k nearest reference vectors,
  found by exact brute-force search under the same distance. Desk-scale
  reference sets make exactness cheap and keep the score oracle-testable.
  The raw distance is emitted as-is; a trained consumer learns the sign.
* SSD: features are clustered with seeded k-means, one Gaussian is fit per
  cluster with shrinkage (sigma + lambda I), and the score is the minimum
  Mahalanobis distance over clusters. The shrinkage guarantees an invertible
  covariance even on rank-deficient clusters.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .records import RecordSet

__all__ = [
    "KnnIndex",
    "SsdModel",
    "build_knn_index",
    "knn_feature",
    "fit_ssd",
    "ssd_feature",
    "augment_features",
    "save_ssd",
    "load_ssd",
]

KMEANS_MAX_ITER = 100


@dataclass(frozen=True)
class KnnIndex:
    reference: np.ndarray   # (n, d) originals
    unit: np.ndarray        # (n, d) unit-normalized copies
    k: int


def _unit_rows(x: np.ndarray, what: str) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise ValueError(f"zero-norm {what} vector at position {int(zero[0])}")
    return x / norms[:, None]


def build_knn_index(reference: np.ndarray, k: int) -> KnnIndex:
    """Exact brute-force index; vectors are unit-normalized once at build
    time. ``k`` below 1 is an error; ``k`` beyond the reference size is
    clamped to it."""
    ref = np.asarray(reference, dtype=np.float64)
    if ref.ndim != 2 or ref.shape[0] == 0:
        raise ValueError("reference must be a nonempty (n, d) matrix")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    k = min(k, ref.shape[0])
    return KnnIndex(reference=ref.copy(), unit=_unit_rows(ref, "reference"), k=k)


def knn_feature(index: KnnIndex, query: np.ndarray) -> float:
    """Mean cosine distance (1 - cosine similarity) to the k nearest
    reference vectors, nearest under that same distance."""
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (index.unit.shape[1],):
        raise ValueError(
            f"query has shape {q.shape}, index dimension is {index.unit.shape[1]}"
        )
    norm = np.linalg.norm(q)
    if norm == 0.0:
        raise ValueError("zero-norm query vector")
    dists = 1.0 - index.unit @ (q / norm)
    nearest = np.partition(dists, index.k - 1)[: index.k]
    return float(nearest.mean())


@dataclass(frozen=True)
class SsdModel:
    means: np.ndarray        # (k, d)
    covariances: np.ndarray  # (k, d, d) regularized: sigma_c + lambda I
    inverses: np.ndarray     # (k, d, d)
    shrinkage: float
    seed: int

    @property
    def k_clusters(self) -> int:
        return self.means.shape[0]


def _farthest_point_init(
    x: np.ndarray, k: int, rng: np.random.Generator
) -> np.ndarray:
    """Seeded farthest-point initialization: a random first center, then the
    point farthest from its nearest chosen center, k times."""
    n = x.shape[0]
    centers = [int(rng.integers(0, n))]
    min_d2 = np.sum((x - x[centers[0]]) ** 2, axis=1)
    while len(centers) < k:
        nxt = int(np.argmax(min_d2))
        centers.append(nxt)
        min_d2 = np.minimum(min_d2, np.sum((x - x[nxt]) ** 2, axis=1))
    return x[centers].copy()


def _lloyd(x: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    k = centers.shape[0]
    assign = np.zeros(x.shape[0], dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        for c in range(k):
            members = new_assign == c
            if members.any():
                centers[c] = x[members].mean(axis=0)
            else:
                # re-seed an empty cluster from the farthest point
                farthest = int(np.argmax(d2.min(axis=1)))
                centers[c] = x[farthest]
                new_assign[farthest] = c
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return centers, assign


def fit_ssd(
    reference: np.ndarray, k_clusters: int, shrinkage: float = 1e-3, seed: int = 0
) -> SsdModel:
    """Cluster the reference features and fit one shrunk Gaussian per cluster.

    Covariances are regularized as sigma_c + shrinkage * I and verified
    positive definite by Cholesky; inverses are precomputed.
    """
    x = np.asarray(reference, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("reference must be a nonempty (n, d) matrix")
    if k_clusters < 1:
        raise ValueError("k_clusters must be >= 1")
    if x.shape[0] < k_clusters:
        raise ValueError(
            f"{x.shape[0]} reference vectors cannot form {k_clusters} clusters"
        )
    if shrinkage <= 0:
        raise ValueError("shrinkage must be > 0")
    if k_clusters > 1 and np.all(x == x[0]):
        raise ValueError("all reference vectors identical; cannot cluster")

    rng = np.random.default_rng(seed)
    d = x.shape[1]
    if k_clusters == 1:
        assign = np.zeros(x.shape[0], dtype=np.int64)
        centers = x.mean(axis=0, keepdims=True)
    else:
        centers, assign = _lloyd(x, _farthest_point_init(x, k_clusters, rng))

    means = np.empty((k_clusters, d))
    covs = np.empty((k_clusters, d, d))
    invs = np.empty((k_clusters, d, d))
    eye = np.eye(d)
    for c in range(k_clusters):
        members = x[assign == c]
        means[c] = members.mean(axis=0)
        centered = members - means[c]
        cov = (centered.T @ centered) / max(len(members), 1)
        covs[c] = cov + shrinkage * eye
        np.linalg.cholesky(covs[c])  # positive definiteness check
        invs[c] = np.linalg.inv(covs[c])
    return SsdModel(means=means, covariances=covs, inverses=invs,
                    shrinkage=float(shrinkage), seed=seed)


def ssd_feature(model: SsdModel, query: np.ndarray) -> float:
    """Minimum Mahalanobis distance from the query to the cluster Gaussians."""
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (model.means.shape[1],):
        raise ValueError(
            f"query has shape {q.shape}, model dimension is {model.means.shape[1]}"
        )
    diff = q - model.means
    d2 = np.einsum("ci,cij,cj->c", diff, model.inverses, diff)
    return float(math.sqrt(max(d2.min(), 0.0)))


def augment_features(
    records: RecordSet, computers: Sequence[Callable[[np.ndarray], float]]
) -> RecordSet:
    """Extend every record's feature vector with the computed scalar scores.

    The computers must have been fitted on training-split features only;
    passing none is the identity.
    """
    if not computers:
        return records
    out = []
    for rec in records:
        extra = [float(fn(rec.features)) for fn in computers]
        out.append(rec.replace(features=np.concatenate([rec.features, extra])))
    return RecordSet(out)


# -- serialization ------------------------------------------------------------

def save_ssd(model: SsdModel, path) -> None:
    k, d = model.means.shape
    doc = {
        "k_clusters": k,
        "dim": d,
        "shrinkage": model.shrinkage,
        "seed": model.seed,
        "means": model.means.reshape(-1).tolist(),
        "covariances": model.covariances.reshape(-1).tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_ssd(path) -> SsdModel:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    k, d = int(doc["k_clusters"]), int(doc["dim"])
    means = np.asarray(doc["means"], dtype=np.float64).reshape(k, d)
    covs = np.asarray(doc["covariances"], dtype=np.float64).reshape(k, d, d)
    invs = np.stack([np.linalg.inv(c) for c in covs])
    return SsdModel(means=means, covariances=covs, inverses=invs,
                    shrinkage=float(doc["shrinkage"]), seed=int(doc["seed"]))
