"""Speaker-probe evaluation: pooling, stratified folds, a deterministic
linear classifier, fold statistics, paired significance testing, and 2-D
projection export.

The probe's job is to measure how linearly decodable speaker identity is
from a representation; a *lower* accuracy therefore means the representation
carries less speaker information. The classifier is intentionally a plain
one-vs-rest hinge-loss model trained by a fixed-schedule full-batch
subgradient descent: results are bit-reproducible, and linear decodability
is the quantity under test, not classifier sophistication.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import exp, lgamma, log, log1p, sqrt
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import FrameMatrix, pca_fit_array
from .datastore import write_array
from .errors import (
    ClassTooSmall,
    DimensionMismatch,
    IoError,
    SingleClass,
    TooFewSamples,
    ZeroVariance,
)

PROBE_LAMBDA = 1e-4
PROBE_EPOCHS = 200


# ---------------------------------------------------------------------------
# datasets and pooling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeDataset:
    """Utterance-level vectors with speaker labels."""

    rows: tuple  # of (utt_id, speaker_id, vector)

    def __post_init__(self):
        rows = tuple(
            (str(u), str(s), np.asarray(v, dtype=np.float64)) for u, s, v in self.rows
        )
        if not rows:
            raise TooFewSamples("empty probe dataset")
        q = rows[0][2].shape
        for u, _, v in rows:
            if v.ndim != 1 or v.shape != q:
                raise DimensionMismatch(f"vector for {u} has shape {v.shape}, expected {q}")
        if len({s for _, s, _ in rows}) < 2:
            raise SingleClass("probe dataset needs at least 2 speakers")
        object.__setattr__(self, "rows", rows)

    @property
    def class_count(self) -> int:
        return len({s for _, s, _ in self.rows})

    @property
    def speakers(self) -> list[str]:
        return [s for _, s, _ in self.rows]

    def matrix(self) -> np.ndarray:
        return np.stack([v for _, _, v in self.rows])


def pool_utterance(frames: FrameMatrix) -> np.ndarray:
    """Mean over frames: one vector per utterance."""
    return frames.data.astype(np.float64).mean(axis=0)


def stratified_folds(dataset: ProbeDataset, k: int, seed: int) -> list[np.ndarray]:
    """Partition row indices into k folds, balanced per speaker.

    Each speaker's rows are shuffled (seeded) and dealt into folds so that
    per-speaker counts differ by at most one; leftover rows rotate across
    folds from one speaker to the next, keeping total fold sizes balanced.
    """
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    speakers = np.asarray(dataset.speakers)
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    extra_start = 0
    for cls in sorted(set(dataset.speakers)):
        idx = np.flatnonzero(speakers == cls)
        if idx.size < k:
            raise ClassTooSmall(
                f"speaker {cls!r} has {idx.size} utterances, fewer than k={k}"
            )
        shuffled = idx[rng.permutation(idx.size)]
        base, extra = divmod(idx.size, k)
        pos = 0
        for f in range(k):
            take = base + (1 if (f - extra_start) % k < extra else 0)
            folds[f].extend(shuffled[pos:pos + take].tolist())
            pos += take
        extra_start = (extra_start + extra) % k
    return [np.sort(np.asarray(f, dtype=np.intp)) for f in folds]


# ---------------------------------------------------------------------------
# linear probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearProbe:
    classes: tuple
    weights: np.ndarray  # C x (F+1); last column acts on the constant feature
    feat_mean: np.ndarray
    feat_std: np.ndarray


def train_linear_probe(rows: Sequence[tuple]) -> LinearProbe:
    """Fit one-vs-rest regularized hinge-loss scorers.

    Deterministic by construction: zero init, fixed data order, full-batch
    subgradient steps with learning rate 1/(lambda*t). Features are
    standardized by the training split's mean/std, then a constant feature
    carries the bias.
    """
    labels = [s for _, s, _ in rows]
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise SingleClass("training rows contain a single speaker")
    x = np.stack([np.asarray(v, dtype=np.float64) for _, _, v in rows])
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    z = np.hstack([(x - mean) / std, np.ones((x.shape[0], 1))])

    index = {c: i for i, c in enumerate(classes)}
    y = -np.ones((len(classes), x.shape[0]))
    y[[index[s] for s in labels], np.arange(x.shape[0])] = 1.0

    n = z.shape[0]
    w = np.zeros((len(classes), z.shape[1]))
    for t in range(1, PROBE_EPOCHS + 1):
        lr = 1.0 / (PROBE_LAMBDA * t)
        margins = y * (w @ z.T)
        viol = margins < 1.0
        grad = PROBE_LAMBDA * w - ((viol * y) @ z) / n
        w -= lr * grad
    return LinearProbe(classes=classes, weights=w, feat_mean=mean, feat_std=std)


def _scores(probe: LinearProbe, x: np.ndarray) -> np.ndarray:
    z = np.hstack([
        (x - probe.feat_mean) / probe.feat_std,
        np.ones((x.shape[0], 1)),
    ])
    return z @ probe.weights.T


def predict(probe: LinearProbe, vector: np.ndarray) -> str:
    """Class with the highest score; ties go to the lowest class index."""
    s = _scores(probe, np.asarray(vector, dtype=np.float64)[None, :])[0]
    return probe.classes[int(np.argmax(s))]


def predict_batch(probe: LinearProbe, x: np.ndarray) -> list[str]:
    s = _scores(probe, np.asarray(x, dtype=np.float64))
    return [probe.classes[i] for i in np.argmax(s, axis=1)]


# ---------------------------------------------------------------------------
# cross-validated probing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProbeReport:
    fold_accuracies: tuple[float, ...]
    mean: float
    std: float
    k: int
    seed: int

    def __post_init__(self):
        accs = tuple(float(a) for a in self.fold_accuracies)
        if len(accs) != self.k or self.k < 2:
            raise ValueError("fold count disagrees with k")
        if any(a < 0.0 or a > 1.0 for a in accs):
            raise ValueError("fold accuracies must lie in [0, 1]")
        mean = float(np.mean(accs))
        std = float(np.std(accs, ddof=1))
        if abs(mean - self.mean) > 1e-12 or abs(std - self.std) > 1e-12:
            raise ValueError("mean/std inconsistent with folds")
        object.__setattr__(self, "fold_accuracies", accs)

    def to_dict(self) -> dict:
        return {
            "fold_accuracies": list(self.fold_accuracies),
            "fold_accuracies_pct": [100.0 * a for a in self.fold_accuracies],
            "mean": self.mean,
            "std": self.std,
            "mean_pct": 100.0 * self.mean,
            "std_pct": 100.0 * self.std,
            "units": "fraction (``_pct`` fields are percentage points)",
            "k": self.k,
            "seed": self.seed,
        }


def aggregate_folds(fold_accuracies: Sequence[float], seed: int = 0) -> ProbeReport:
    """Mean and sample std (k-1 denominator) over per-fold accuracies."""
    accs = [float(a) for a in fold_accuracies]
    return ProbeReport(
        fold_accuracies=tuple(accs),
        mean=float(np.mean(accs)),
        std=float(np.std(accs, ddof=1)),
        k=len(accs),
        seed=seed,
    )


def run_probe(dataset: ProbeDataset, k: int, seed: int) -> ProbeReport:
    """k-fold cross-validated speaker classification accuracy."""
    folds = stratified_folds(dataset, k, seed)
    x = dataset.matrix()
    labels = np.asarray(dataset.speakers)
    accs = []
    for f in range(k):
        test_idx = folds[f]
        train_idx = np.sort(np.concatenate([folds[g] for g in range(k) if g != f]))
        probe = train_linear_probe(
            [dataset.rows[i] for i in train_idx.tolist()]
        )
        pred = predict_batch(probe, x[test_idx])
        accs.append(float(np.mean(np.asarray(pred) == labels[test_idx])))
    return aggregate_folds(accs, seed=seed)


# ---------------------------------------------------------------------------
# paired t-test
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairedTestResult:
    t_statistic: float
    p_value: float
    dof: int

    def to_dict(self) -> dict:
        return {
            "t_statistic": self.t_statistic,
            "p_value": self.p_value,
            "dof": self.dof,
        }


def _beta_cont_frac(a: float, b: float, x: float) -> float:
    # Lentz's method for the incomplete-beta continued fraction.
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        num = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        num = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + num * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + num / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) to ~1e-14 absolute accuracy for a, b > 0, 0 <= x <= 1."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = exp(lgamma(a + b) - lgamma(a) - lgamma(b) + a * log(x) + b * log1p(-x))
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_cont_frac(a, b, x) / a
    return 1.0 - front * _beta_cont_frac(b, a, 1.0 - x) / b


def student_t_two_tailed(t: float, dof: int) -> float:
    """Two-tailed tail probability of Student's t with ``dof`` degrees."""
    if dof < 1:
        raise ValueError(f"dof must be >= 1, got {dof}")
    x = dof / (dof + t * t)
    return regularized_incomplete_beta(dof / 2.0, 0.5, x)


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> PairedTestResult:
    """Paired t-test over matched per-fold accuracies."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionMismatch(f"paired samples differ: {a.shape} vs {b.shape}")
    k = a.shape[0]
    if k < 2:
        raise TooFewSamples(f"need at least 2 folds, got {k}")
    diff = a - b
    if np.all(diff == diff[0]):
        raise ZeroVariance("all paired differences are equal; t is undefined")
    sd = float(np.std(diff, ddof=1))
    t = float(np.mean(diff)) / (sd / sqrt(k))
    return PairedTestResult(
        t_statistic=t, p_value=student_t_two_tailed(t, k - 1), dof=k - 1
    )


# ---------------------------------------------------------------------------
# projection export
# ---------------------------------------------------------------------------

def export_projection(dataset: ProbeDataset, method: str, path) -> None:
    """Write a 2-D view of the dataset for plotting.

    ``pca2d`` writes one CSV (utt_id, speaker_id, x, y) using the top two
    principal components. ``raw_dump`` treats ``path`` as a directory and
    writes the full vectors (vectors.npy) plus labels.csv for external
    projection tools.
    """
    if method == "pca2d":
        x = dataset.matrix()
        pca = pca_fit_array(x, 2)
        xy = (x - pca.mean) @ pca.components.T
        try:
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(["utt_id", "speaker_id", "x", "y"])
                for (u, s, _), row in zip(dataset.rows, xy):
                    writer.writerow([u, s, repr(float(row[0])), repr(float(row[1]))])
        except OSError as exc:
            raise IoError(f"cannot write {path}: {exc}") from exc
    elif method == "raw_dump":
        out = Path(path)
        try:
            out.mkdir(parents=True, exist_ok=True)
            write_array(out / "vectors.npy", dataset.matrix(), "f64")
            with open(out / "labels.csv", "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(["utt_id", "speaker_id"])
                for u, s, _ in dataset.rows:
                    writer.writerow([u, s])
        except OSError as exc:
            raise IoError(f"cannot write {out}: {exc}") from exc
    else:
        raise ValueError(f"unknown projection method {method!r}")
