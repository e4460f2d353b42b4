"""Shared fixtures builders for the test suite."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from etakit.core import FitMeta, FrameMatrix, LatentModel, PcaModel
from etakit.datastore import ManifestEntry, save_manifest, write_array


def random_orthonormal_rows(rng: np.random.Generator, p: int, v: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(v, v)))
    return q[:p].copy()


def make_pca(rng: np.random.Generator, v: int, p: int) -> PcaModel:
    ev = np.sort(np.abs(rng.normal(size=p)))[::-1]
    return PcaModel(
        mean=rng.normal(size=v),
        components=random_orthonormal_rows(rng, p, v),
        explained_variance=ev,
    )


def make_latent(rng: np.random.Generator, p: int, q: int,
                n_frames: int = 1000) -> LatentModel:
    return LatentModel(
        basis=rng.normal(size=(p, q)),
        bias=rng.normal(size=q),
        fit_meta=FitMeta(
            n_frames_used=n_frames, l_subsample=100, rng_seed=0,
            solver="svd", dataset_fingerprint="test",
        ),
    )


def write_corpus(
    out_dir,
    utterances: list[tuple[str, str, np.ndarray, np.ndarray]],
    precision: str = "f64",
) -> Path:
    """Write (utt_id, speaker_id, frames KxQ, embedding V) tuples as a corpus."""
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    (out_dir / "embeddings").mkdir(parents=True, exist_ok=True)
    entries = []
    for utt_id, speaker_id, frames, emb in utterances:
        fp = f"features/{utt_id}.npy"
        ep = f"embeddings/{utt_id}.npy"
        write_array(out_dir / fp, frames, precision)
        write_array(out_dir / ep, emb, precision)
        entries.append(ManifestEntry(
            utt_id=utt_id,
            speaker_id=speaker_id,
            feature_path=fp,
            embedding_path=ep,
            n_frames=frames.shape[0],
            q_dim=frames.shape[1],
            v_dim=emb.shape[0],
        ))
    manifest = out_dir / "manifest.jsonl"
    save_manifest(entries, manifest)
    return manifest


def frames_of(utt_id: str, data: np.ndarray) -> FrameMatrix:
    return FrameMatrix(data, utt_id)
