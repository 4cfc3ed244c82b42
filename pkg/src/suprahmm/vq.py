"""Vector-quantization baseline: one k-means codebook per condition,
utterances labelled by the lowest mean quantization distance."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DimensionMismatchError, DocumentError, EmptyInputError
from .features import FeatureSequence
from .hmm2 import MODEL_SCHEMA


@dataclass(frozen=True)
class Codebook:
    label: str
    centroids: np.ndarray
    distortions: Tuple[float, ...] = ()

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = np.sum(x * x, axis=1)[:, None] - 2.0 * x @ c.T + np.sum(c * c, axis=1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(frames: np.ndarray, k: int, seed: int, max_iters: int = 100
           ) -> Tuple[np.ndarray, np.ndarray, List[float]]:
    """Lloyd iterations from k distinct random frames.

    Returns centroids, final assignments and the mean squared distortion
    recorded at every assignment step.  Stops when assignments repeat.
    An empty cluster is moved onto the frame farthest from its centroid.
    """
    x = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if k < 1:
        raise ConfigError("k must be at least 1")
    if x.shape[0] < k:
        raise EmptyInputError(f"need at least k={k} frames, got {x.shape[0]}")
    rng = np.random.default_rng(seed)
    centroids = x[rng.choice(x.shape[0], size=k, replace=False)].copy()
    labels = None
    history: List[float] = []
    for _ in range(max(max_iters, 1)):
        d = _sq_dists(x, centroids)
        new_labels = np.argmin(d, axis=1)
        history.append(float(d[np.arange(x.shape[0]), new_labels].mean()))
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(k):
            members = labels == j
            if members.any():
                centroids[j] = x[members].mean(axis=0)
        for j in range(k):
            if not np.any(labels == j):
                own = _sq_dists(x, centroids)[np.arange(x.shape[0]), labels]
                far = int(np.argmax(own))
                centroids[j] = x[far]
                labels[far] = j
    return centroids, labels, history


def train_codebook(frames, k: int = 16, seed: int = 0, max_iters: int = 100, label: str = "") -> Codebook:
    if isinstance(frames, FeatureSequence):
        frames = frames.frames
    centroids, _, history = kmeans(frames, k, seed, max_iters)
    if not np.all(np.isfinite(centroids)):
        raise ConfigError("non-finite centroid")
    return Codebook(label, centroids, tuple(history))


def mean_distortion(codebook: Codebook, obs) -> float:
    """Average over frames of the Euclidean distance to the nearest centroid."""
    x = obs.frames if isinstance(obs, FeatureSequence) else np.atleast_2d(obs)
    if x.shape[1] != codebook.centroids.shape[1]:
        raise DimensionMismatchError(
            f"frames have dimension {x.shape[1]}, codebook {codebook.label!r} has {codebook.centroids.shape[1]}")
    return float(np.sqrt(_sq_dists(x, codebook.centroids).min(axis=1)).mean())


def vq_classify(codebooks: Sequence[Codebook], obs) -> str:
    """Label of the codebook with the lowest mean distortion (first wins ties)."""
    if not codebooks:
        raise EmptyInputError("no codebooks to classify against")
    scores = [mean_distortion(cb, obs) for cb in codebooks]
    return codebooks[int(np.argmin(scores))].label


def to_document(codebook: Codebook) -> dict:
    return {"schema": MODEL_SCHEMA, "kind": "codebook", "label": codebook.label,
            "centroids": codebook.centroids.tolist(), "distortions": list(codebook.distortions)}


def from_document(doc: dict) -> Codebook:
    if doc.get("kind") != "codebook" or doc.get("schema", MODEL_SCHEMA) != MODEL_SCHEMA:
        raise DocumentError("document does not describe a codebook")
    return Codebook(doc["label"], np.array(doc["centroids"], dtype=np.float64), tuple(doc.get("distortions", ())))
