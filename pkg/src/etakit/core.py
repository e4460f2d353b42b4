"""Decomposition mathematics.

Fits a linear map from reduced speaker embeddings to frame-level speech
features and subtracts the predicted speaker component from each frame,
leaving a speaker-independent residual ("eta"). The fit never materializes
the full frame matrix: per-utterance rank-1 contributions are folded into
(P+1)x(P+1) and (P+1)xQ sufficient statistics, so memory stays O(P*Q)
regardless of corpus size.

All accumulation happens in float64 even when inputs are stored float32;
Gram sums over tens of millions of frames lose digits in single precision.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatch,
    InsufficientData,
    NonFinite,
    TooFewSamples,
)

SOLVERS = ("svd", "qr", "normal_eq")

#: Relative singular-value cutoff for the pseudo-inverse of the Gram matrix.
#: The normal-equation matrix can be near-singular when embeddings are
#: correlated, so the naive inverse is not used outside tests.
DEFAULT_RCOND = 1e-10


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

def _as_float(a, name: str) -> np.ndarray:
    a = np.asarray(a)
    if a.dtype.kind != "f":
        a = a.astype(np.float64)
    if not np.isfinite(a).all():
        raise NonFinite(f"{name} contains NaN or Inf")
    return a


@dataclass(frozen=True)
class FrameMatrix:
    """One utterance's frame-level representation, rows = frames."""

    data: np.ndarray
    utt_id: str

    def __post_init__(self):
        data = _as_float(self.data, f"frames[{self.utt_id}]")
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise DimensionMismatch(
                f"frames[{self.utt_id}]: expected a non-empty 2-D matrix, "
                f"got shape {np.asarray(self.data).shape}"
            )
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def q_dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SpeakerEmbedding:
    """One utterance's fixed-length speaker embedding."""

    raw: np.ndarray
    utt_id: str

    def __post_init__(self):
        raw = _as_float(self.raw, f"embedding[{self.utt_id}]")
        if raw.ndim != 1 or raw.shape[0] < 1:
            raise DimensionMismatch(
                f"embedding[{self.utt_id}]: expected a 1-D vector, "
                f"got shape {np.asarray(self.raw).shape}"
            )
        object.__setattr__(self, "raw", raw)

    @property
    def v_dim(self) -> int:
        return self.raw.shape[0]


@dataclass(frozen=True)
class ReducedEmbedding:
    """A speaker embedding after projection onto the retained components."""

    d: np.ndarray

    def __post_init__(self):
        d = _as_float(self.d, "reduced embedding")
        if d.ndim != 1 or d.shape[0] < 1:
            raise DimensionMismatch(
                f"reduced embedding: expected a 1-D vector, got shape {d.shape}"
            )
        object.__setattr__(self, "d", d)

    @property
    def p_dim(self) -> int:
        return self.d.shape[0]


@dataclass(frozen=True)
class PcaModel:
    """Centering mean plus orthonormal principal components (rows)."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    def __post_init__(self):
        mean = _as_float(self.mean, "pca mean")
        comps = _as_float(self.components, "pca components")
        ev = _as_float(self.explained_variance, "explained variance")
        if comps.ndim != 2 or mean.ndim != 1 or comps.shape[1] != mean.shape[0]:
            raise DimensionMismatch(
                f"pca shapes disagree: components {comps.shape}, mean {mean.shape}"
            )
        if comps.shape[0] > comps.shape[1]:
            raise DimensionMismatch(
                f"more components ({comps.shape[0]}) than dimensions ({comps.shape[1]})"
            )
        if ev.shape != (comps.shape[0],):
            raise DimensionMismatch("explained_variance length != component count")
        if np.any(np.diff(ev) > 0):
            raise ValueError("explained_variance must be non-increasing")
        gram = comps @ comps.T
        if not np.allclose(gram, np.eye(comps.shape[0]), atol=1e-8):
            raise ValueError("pca components are not orthonormal")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "explained_variance", ev)

    @property
    def v_dim(self) -> int:
        return self.mean.shape[0]

    @property
    def p_dim(self) -> int:
        return self.components.shape[0]


@dataclass(frozen=True)
class FitMeta:
    """Provenance recorded with a fitted latent model."""

    n_frames_used: int
    l_subsample: int
    rng_seed: int
    solver: str
    dataset_fingerprint: str


@dataclass(frozen=True)
class LatentModel:
    """Latent basis (P x Q) and bias (Q) mapping reduced embeddings to frames."""

    basis: np.ndarray
    bias: np.ndarray
    fit_meta: FitMeta

    def __post_init__(self):
        basis = _as_float(self.basis, "latent basis")
        bias = _as_float(self.bias, "latent bias")
        if basis.ndim != 2 or bias.ndim != 1 or basis.shape[1] != bias.shape[0]:
            raise DimensionMismatch(
                f"latent shapes disagree: basis {basis.shape}, bias {bias.shape}"
            )
        if self.fit_meta.n_frames_used < basis.shape[0] + 1:
            raise InsufficientData(
                f"{self.fit_meta.n_frames_used} frames cannot determine "
                f"{basis.shape[0]} + 1 parameters"
            )
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "bias", bias)

    @property
    def p_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def q_dim(self) -> int:
        return self.basis.shape[1]


class GramAccumulator:
    """Running sufficient statistics for the joint basis+bias solve.

    Holds the (P+1)x(P+1) Gram of augmented reduced embeddings and the
    (P+1)xQ cross term against frames, plus the frame count and the total
    sum of squared frame entries (used only for residual diagnostics).
    Merging accumulators is commutative and associative up to
    floating-point reassociation.
    """

    def __init__(self, p_dim: int, q_dim: int):
        if p_dim < 1 or q_dim < 1:
            raise DimensionMismatch("p_dim and q_dim must be >= 1")
        self.dtd = np.zeros((p_dim + 1, p_dim + 1))
        self.dts = np.zeros((p_dim + 1, q_dim))
        self.n_frames = 0
        self.frame_sq_sum = 0.0

    @property
    def p_dim(self) -> int:
        return self.dtd.shape[0] - 1

    @property
    def q_dim(self) -> int:
        return self.dts.shape[1]

    def _add(self, dtd_u, dts_u, k, sq):
        self.dtd += dtd_u
        self.dts += dts_u
        self.n_frames += k
        self.frame_sq_sum += sq

    def copy(self) -> "GramAccumulator":
        out = GramAccumulator(self.p_dim, self.q_dim)
        out.dtd = self.dtd.copy()
        out.dts = self.dts.copy()
        out.n_frames = self.n_frames
        out.frame_sq_sum = self.frame_sq_sum
        return out


def utterance_stats(d: ReducedEmbedding, frames: FrameMatrix):
    """One utterance's rank-1 contribution to the sufficient statistics.

    The augmented embedding [d; 1] is constant across an utterance's frames,
    so summing its outer product with every frame collapses to an outer
    product with the column sums.
    """
    da = np.append(d.d.astype(np.float64), 1.0)
    x = frames.data.astype(np.float64)
    k = x.shape[0]
    dtd_u = k * np.outer(da, da)
    dts_u = np.outer(da, x.sum(axis=0))
    sq = float(np.einsum("ij,ij->", x, x))
    return dtd_u, dts_u, k, sq


def accumulate(acc: GramAccumulator, d: ReducedEmbedding,
               frames: FrameMatrix) -> GramAccumulator:
    """Fold one utterance into the accumulator (in place) and return it."""
    if frames.q_dim != acc.q_dim:
        raise DimensionMismatch(
            f"frames[{frames.utt_id}] has {frames.q_dim} columns, "
            f"accumulator expects {acc.q_dim}"
        )
    if d.p_dim != acc.p_dim:
        raise DimensionMismatch(
            f"reduced embedding has length {d.p_dim}, accumulator expects {acc.p_dim}"
        )
    acc._add(*utterance_stats(d, frames))
    return acc


def merge(a: GramAccumulator, b: GramAccumulator) -> GramAccumulator:
    """Combine two accumulators into a new one."""
    if a.p_dim != b.p_dim or a.q_dim != b.q_dim:
        raise DimensionMismatch("accumulator dimensions disagree")
    out = a.copy()
    out._add(b.dtd, b.dts, b.n_frames, b.frame_sq_sum)
    return out


def parallel_accumulate(
    jobs: Sequence[Callable[[], tuple[ReducedEmbedding, FrameMatrix]]],
    p_dim: int,
    q_dim: int,
    workers: int = 1,
    deterministic: bool = True,
) -> GramAccumulator:
    """Run per-utterance jobs on a thread pool and reduce their statistics.

    In deterministic mode contributions are folded strictly in job order, so
    the result is bitwise identical for any worker count. Otherwise each
    worker owns a private accumulator and partials are merged as workers
    finish; results then agree only up to floating-point reassociation.
    """
    acc = GramAccumulator(p_dim, q_dim)
    if workers <= 1:
        for job in jobs:
            d, frames = job()
            accumulate(acc, d, frames)
        return acc

    def stats_job(job):
        d, frames = job()
        if frames.q_dim != q_dim or d.p_dim != p_dim:
            raise DimensionMismatch(
                f"utterance {frames.utt_id}: got ({d.p_dim}, {frames.q_dim}), "
                f"expected ({p_dim}, {q_dim})"
            )
        return utterance_stats(d, frames)

    window = workers * 4
    with ThreadPoolExecutor(max_workers=workers) as pool:
        if deterministic:
            # Sliding submission window; fold strictly in index order.
            pending = {}
            next_fold = 0
            for i, job in enumerate(jobs):
                pending[i] = pool.submit(stats_job, job)
                while len(pending) >= window and next_fold in pending:
                    acc._add(*pending.pop(next_fold).result())
                    next_fold += 1
            while next_fold in pending:
                acc._add(*pending.pop(next_fold).result())
                next_fold += 1
        else:
            partials = [GramAccumulator(p_dim, q_dim) for _ in range(workers)]

            def worker_job(slot, job):
                partials[slot]._add(*stats_job(job))

            futures = [
                pool.submit(worker_job, i % workers, job)
                for i, job in enumerate(jobs)
            ]
            for f in futures:
                f.result()
            for part in partials:
                acc._add(part.dtd, part.dts, part.n_frames, part.frame_sq_sum)
    return acc


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

def _pca_from_cov(mean: np.ndarray, cov: np.ndarray, p_dim: int,
                  n_samples: int) -> PcaModel:
    v = mean.shape[0]
    if p_dim < 1 or p_dim > v:
        raise DimensionMismatch(f"p_dim={p_dim} out of range for dimension {v}")
    if n_samples < 2 or p_dim > n_samples - 1:
        raise TooFewSamples(
            f"pca with p_dim={p_dim} needs at least {max(2, p_dim + 1)} "
            f"samples, got {n_samples}"
        )
    evals, evecs = np.linalg.eigh(cov)
    evals = evals[::-1][:p_dim]
    comps = evecs[:, ::-1][:, :p_dim].T.copy()
    # eigh of a PSD matrix can return tiny negative eigenvalues
    evals = np.clip(evals, 0.0, None)
    flip = comps[np.arange(p_dim), np.argmax(np.abs(comps), axis=1)] < 0
    comps[flip] *= -1.0
    return PcaModel(mean=mean, components=comps, explained_variance=evals)


def pca_fit_array(x: np.ndarray, p_dim: int) -> PcaModel:
    """PCA of the rows of ``x`` via eigendecomposition of the covariance.

    The covariance is V x V (small for embedding spaces), so an eigensolve
    is cheaper and more stable here than an N x V SVD. Zero eigenvalues are
    allowed; components stay orthonormal either way. Sign convention: the
    entry of largest magnitude in each component is made positive, so the
    output is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    n, v = x.shape
    if n < 2:
        raise TooFewSamples(f"pca needs at least 2 samples, got {n}")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = (centered.T @ centered) / (n - 1)
    return _pca_from_cov(mean, cov, p_dim, n)


def fit_pca_streaming(embeddings: Iterable[SpeakerEmbedding], p_dim: int) -> PcaModel:
    """Single-pass PCA from running first/second moments.

    Equivalent to :func:`fit_pca` up to floating-point reassociation, but
    memory stays O(V^2) however many embeddings stream through. Used by the
    batch fit so resident memory is independent of corpus size.
    """
    total = None
    scatter = None
    n = 0
    v = 0
    for e in embeddings:
        x = e.raw.astype(np.float64)
        if total is None:
            v = x.shape[0]
            total = np.zeros(v)
            scatter = np.zeros((v, v))
        elif x.shape[0] != v:
            raise DimensionMismatch(
                f"embedding[{e.utt_id}] has length {x.shape[0]}, expected {v}"
            )
        total += x
        scatter += np.outer(x, x)
        n += 1
    if n < 2:
        raise TooFewSamples(f"pca needs at least 2 embeddings, got {n}")
    mean = total / n
    cov = (scatter - n * np.outer(mean, mean)) / (n - 1)
    return _pca_from_cov(mean, cov, p_dim, n)


def fit_pca(embeddings: Iterable[SpeakerEmbedding], p_dim: int) -> PcaModel:
    """Fit a PCA reduction on per-utterance speaker embeddings."""
    embs = list(embeddings)
    if len(embs) < 2:
        raise TooFewSamples(f"pca needs at least 2 embeddings, got {len(embs)}")
    v = embs[0].v_dim
    for e in embs:
        if e.v_dim != v:
            raise DimensionMismatch(
                f"embedding[{e.utt_id}] has length {e.v_dim}, expected {v}"
            )
    return pca_fit_array(np.stack([e.raw for e in embs]), p_dim)


def project(pca: PcaModel, e: SpeakerEmbedding) -> ReducedEmbedding:
    """Center an embedding and project it onto the retained components."""
    if e.v_dim != pca.v_dim:
        raise DimensionMismatch(
            f"embedding[{e.utt_id}] has length {e.v_dim}, pca expects {pca.v_dim}"
        )
    return ReducedEmbedding(pca.components @ (e.raw.astype(np.float64) - pca.mean))


# ---------------------------------------------------------------------------
# subsampling
# ---------------------------------------------------------------------------

def _utt_rng(seed: int, utt_id: str) -> np.random.Generator:
    # Seeded per (run seed, utterance id): reproducible and independent of
    # the order utterances are visited in.
    digest = hashlib.blake2b(utt_id.encode("utf-8"), digest_size=16).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(
        np.random.SeedSequence([seed & 0xFFFFFFFFFFFFFFFF, *words])
    )


def subsample_frames(s: FrameMatrix, l: int, seed: int) -> FrameMatrix:
    """Pick ``l`` distinct frames uniformly, preserving frame order.

    Utterances shorter than ``l`` pass through whole: resampling with
    replacement would bias the Gram toward short utterances' content.
    """
    if l < 1:
        raise ValueError(f"subsample length must be >= 1, got {l}")
    if s.n_frames <= l:
        return s
    rng = _utt_rng(seed, s.utt_id)
    idx = np.sort(rng.choice(s.n_frames, size=l, replace=False))
    return FrameMatrix(s.data[idx], s.utt_id)


# ---------------------------------------------------------------------------
# solve and transform
# ---------------------------------------------------------------------------

def solve(
    acc: GramAccumulator,
    solver: str = "svd",
    rcond: float = DEFAULT_RCOND,
    l_subsample: int = 0,
    rng_seed: int = 0,
    dataset_fingerprint: str = "",
) -> LatentModel:
    """Solve the accumulated normal equations for the latent basis and bias.

    ``svd`` (default) applies an SVD pseudo-inverse truncating singular
    values below ``rcond`` times the largest; ``qr`` uses column-pivoted QR;
    ``normal_eq`` is the naive direct solve kept as a reference path.
    """
    p = acc.p_dim
    if acc.n_frames < p + 1:
        raise InsufficientData(
            f"{acc.n_frames} accumulated frames < {p + 1} unknowns"
        )
    if not (np.isfinite(acc.dtd).all() and np.isfinite(acc.dts).all()):
        raise NonFinite("accumulator contains NaN or Inf")
    if solver == "svd":
        a_tilde = np.linalg.pinv(acc.dtd, rcond=rcond) @ acc.dts
    elif solver == "qr":
        a_tilde, *_ = scipy.linalg.lstsq(acc.dtd, acc.dts, lapack_driver="gelsy")
    elif solver == "normal_eq":
        a_tilde = np.linalg.solve(acc.dtd, acc.dts)
    else:
        raise ValueError(f"unknown solver {solver!r}, expected one of {SOLVERS}")
    meta = FitMeta(
        n_frames_used=acc.n_frames,
        l_subsample=l_subsample,
        rng_seed=rng_seed,
        solver=solver,
        dataset_fingerprint=dataset_fingerprint,
    )
    return LatentModel(basis=a_tilde[:p], bias=a_tilde[p].copy(), fit_meta=meta)


def residual_frobenius(acc: GramAccumulator, model: LatentModel) -> float:
    """Frobenius norm of the training residual, from sufficient statistics only."""
    a_tilde = np.vstack([model.basis, model.bias])
    sq = (
        acc.frame_sq_sum
        - 2.0 * float(np.einsum("ij,ij->", a_tilde, acc.dts))
        + float(np.einsum("ij,ij->", a_tilde, acc.dtd @ a_tilde))
    )
    return float(np.sqrt(max(sq, 0.0)))


def gram_condition(acc: GramAccumulator) -> float:
    """2-norm condition number of the accumulated Gram matrix."""
    return float(np.linalg.cond(acc.dtd))


def speaker_component(model: LatentModel, d: ReducedEmbedding) -> np.ndarray:
    """Predicted speaker-dependent frame component for one utterance."""
    if d.p_dim != model.p_dim:
        raise DimensionMismatch(
            f"reduced embedding has length {d.p_dim}, model expects {model.p_dim}"
        )
    return d.d.astype(np.float64) @ model.basis + model.bias


def eta_transform(model: LatentModel, d: ReducedEmbedding,
                  frames: FrameMatrix) -> FrameMatrix:
    """Subtract the predicted speaker component from every frame."""
    if frames.q_dim != model.q_dim:
        raise DimensionMismatch(
            f"frames[{frames.utt_id}] has {frames.q_dim} columns, "
            f"model expects {model.q_dim}"
        )
    comp = speaker_component(model, d)
    return FrameMatrix(frames.data.astype(np.float64) - comp, frames.utt_id)
