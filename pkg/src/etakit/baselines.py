"""Non-neural comparison transforms: per-utterance standardization and
k-means quantization.

Both operate purely on stored frame matrices, so they slot into the same
corpus pipeline as the eta transform and give the probe something classical
to compare against.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import FrameMatrix
from .datastore import read_array, write_array
from .errors import (
    BadJson,
    DimensionMismatch,
    IoError,
    SchemaVersionMismatch,
    ShapeMismatch,
    TooFewPoints,
)

KMEANS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class KMeansModel:
    centroids: np.ndarray
    inertia: float
    rng_seed: int

    def __post_init__(self):
        c = np.asarray(self.centroids, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] < 1:
            raise DimensionMismatch(f"centroids must be CxQ, got shape {c.shape}")
        if not np.isfinite(c).all():
            raise ValueError("centroids contain NaN or Inf")
        if self.inertia < 0:
            raise ValueError("inertia must be non-negative")
        object.__setattr__(self, "centroids", c)

    @property
    def c_count(self) -> int:
        return self.centroids.shape[0]

    @property
    def q_dim(self) -> int:
        return self.centroids.shape[1]


def utterance_standardize(frames: FrameMatrix, epsilon: float = 1e-8) -> FrameMatrix:
    """Normalize each dimension to zero mean, unit variance over the utterance.

    Population (not sample) standard deviation; dimensions with spread below
    ``epsilon`` are divided by ``epsilon`` instead, so constant utterances
    come out (numerically) zero rather than NaN.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    x = frames.data.astype(np.float64)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    out = (x - mean) / np.maximum(std, epsilon)
    return FrameMatrix(out, frames.utt_id)


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # Direct per-centroid summation: same op order as a per-frame scan, so
    # ties resolve identically to a brute-force nearest-neighbor search.
    out = np.empty((x.shape[0], centroids.shape[0]))
    for c in range(centroids.shape[0]):
        out[:, c] = ((x - centroids[c]) ** 2).sum(axis=1)
    return out


def _kmeanspp_init(x: np.ndarray, c_count: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((c_count, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, c_count):
        total = d2.sum()
        if total <= 0.0:
            # all remaining mass on already-chosen points; any point will do
            centroids[c] = x[rng.integers(n)]
        else:
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(d2), r, side="right"))
            idx = min(idx, n - 1)
            centroids[c] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[c]) ** 2).sum(axis=1))
    return centroids


def fit_kmeans(
    frames: Iterable[FrameMatrix],
    c_count: int,
    rng_seed: int = 0,
    max_iters: int = 100,
    tol: float = 1e-6,
) -> KMeansModel:
    """Lloyd's algorithm with k-means++ initialization.

    Stops after ``max_iters`` or when the relative inertia change drops
    below ``tol``. Clusters that empty out are re-seeded from the point
    farthest from its assigned centroid.
    """
    if c_count < 1:
        raise ValueError(f"c_count must be >= 1, got {c_count}")
    mats = [f.data.astype(np.float64) for f in frames]
    if not mats:
        raise TooFewPoints("no frames supplied")
    x = np.concatenate(mats, axis=0)
    if x.shape[0] < c_count:
        raise TooFewPoints(f"{x.shape[0]} frames < {c_count} clusters")
    rng = np.random.default_rng(rng_seed)
    centroids = _kmeanspp_init(x, c_count, rng)

    prev_inertia = np.inf
    inertia = np.inf
    for _ in range(max_iters):
        d2 = _sq_dists(x, centroids)
        labels = np.argmin(d2, axis=1)
        inertia = float(d2[np.arange(x.shape[0]), labels].sum())

        counts = np.bincount(labels, minlength=c_count)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # steal the farthest points for empty clusters, one each
            far_order = np.argsort(-d2[np.arange(x.shape[0]), labels])
            for c, idx in zip(empty, far_order):
                centroids[c] = x[idx]
            continue

        new_centroids = np.empty_like(centroids)
        for c in range(c_count):
            new_centroids[c] = x[labels == c].mean(axis=0)
        centroids = new_centroids

        if prev_inertia < np.inf and prev_inertia > 0:
            if abs(prev_inertia - inertia) / prev_inertia < tol:
                break
        elif prev_inertia == inertia:
            break
        prev_inertia = inertia

    d2 = _sq_dists(x, centroids)
    inertia = float(d2[np.arange(x.shape[0]), np.argmin(d2, axis=1)].sum())
    return KMeansModel(centroids=centroids, inertia=inertia, rng_seed=rng_seed)


def quantize(model: KMeansModel, frames: FrameMatrix) -> FrameMatrix:
    """Replace each frame by its nearest centroid (ties: lowest index)."""
    if frames.q_dim != model.q_dim:
        raise DimensionMismatch(
            f"frames[{frames.utt_id}] has {frames.q_dim} columns, "
            f"centroids have {model.q_dim}"
        )
    d2 = _sq_dists(frames.data.astype(np.float64), model.centroids)
    labels = np.argmin(d2, axis=1)
    return FrameMatrix(model.centroids[labels], frames.utt_id)


def save_kmeans(model: KMeansModel, directory) -> None:
    """Persist centroids.npy + meta.json following bundle conventions."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {directory}: {exc}") from exc
    write_array(directory / "centroids.npy", model.centroids, "f64")
    meta = {
        "schema_version": KMEANS_SCHEMA_VERSION,
        "c_count": model.c_count,
        "q_dim": model.q_dim,
        "inertia": model.inertia,
        "rng_seed": model.rng_seed,
    }
    try:
        (directory / "meta.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n", "utf-8"
        )
    except OSError as exc:
        raise IoError(f"cannot write kmeans meta: {exc}") from exc


def load_kmeans(directory) -> KMeansModel:
    directory = Path(directory)
    try:
        raw = json.loads((directory / "meta.json").read_text("utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read kmeans meta: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BadJson(f"{directory}/meta.json: {exc}") from exc
    if raw.get("schema_version") != KMEANS_SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"kmeans schema_version {raw.get('schema_version')!r}, "
            f"expected {KMEANS_SCHEMA_VERSION}"
        )
    centroids, _ = read_array(directory / "centroids.npy")
    if centroids.shape != (raw["c_count"], raw["q_dim"]):
        raise ShapeMismatch(
            f"centroids stored {centroids.shape}, "
            f"meta says ({raw['c_count']}, {raw['q_dim']})"
        )
    return KMeansModel(
        centroids=centroids, inertia=float(raw["inertia"]), rng_seed=int(raw["rng_seed"])
    )
