"""Synthetic corpus generator with known speaker structure.

Frames are built as speaker-latent times a fixed basis, plus a bias, plus
per-frame content noise, so the speaker-dependent part is linear in the
embedding by construction. That makes ideal-case behavior provable: with no
noise and no jitter the fitted decomposition must reproduce every frame
exactly. An optional nonlinear leakage term (tanh of the speaker latent)
deliberately violates the linear assumption to exercise the documented
failure mode where some speaker information survives the transform.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .datastore import ManifestEntry, save_manifest, write_array
from .errors import IoError

GROUND_TRUTH_DIR = "ground_truth"


@dataclass(frozen=True)
class SynthSpec:
    n_speakers: int
    utts_per_speaker: int
    frames_per_utt: int
    q_dim: int
    v_dim: int
    p_true: int
    noise_sigma: float = 0.0
    content_sigma: float = 1.0
    seed: int = 0
    embed_jitter: float = 0.0
    nonlinear_leak: float = 0.0
    precision: str = "f32"

    def __post_init__(self):
        counts = (
            self.n_speakers, self.utts_per_speaker, self.frames_per_utt,
            self.q_dim, self.v_dim, self.p_true,
        )
        if any(c < 1 for c in counts):
            raise ValueError("all synth counts must be >= 1")
        if self.p_true > self.v_dim:
            raise ValueError(
                f"p_true={self.p_true} exceeds v_dim={self.v_dim}"
            )
        if self.noise_sigma < 0 or self.content_sigma < 0 or self.embed_jitter < 0:
            raise ValueError("sigmas must be non-negative")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")


@dataclass(frozen=True)
class GroundTruth:
    basis: np.ndarray            # p_true x Q, true speaker-to-frame map
    bias: np.ndarray             # Q
    speaker_latents: np.ndarray  # n_speakers x p_true
    mixing: np.ndarray           # V x p_true, latent-to-embedding map
    leak_basis: np.ndarray       # p_true x Q, used by the nonlinear term


def _speaker_id(s: int) -> str:
    return f"spk{s:03d}"


def _utt_id(s: int, u: int) -> str:
    return f"spk{s:03d}-utt{u:04d}"


def generate(spec: SynthSpec, out_dir) -> tuple[Path, GroundTruth]:
    """Write a corpus under ``out_dir``; returns (manifest path, ground truth).

    Deterministic: the same spec produces a byte-identical corpus. Every
    utterance draws from its own (seed, speaker, utterance) substream, so
    corpora with the same seed share globals and speaker latents.
    """
    out_dir = Path(out_dir)
    feat_dir = out_dir / "features"
    emb_dir = out_dir / "embeddings"
    try:
        feat_dir.mkdir(parents=True, exist_ok=True)
        emb_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create corpus directories: {exc}") from exc

    global_rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    basis = global_rng.normal(size=(spec.p_true, spec.q_dim))
    bias = global_rng.normal(size=spec.q_dim)
    mixing = global_rng.normal(size=(spec.v_dim, spec.p_true))
    leak_basis = global_rng.normal(size=(spec.p_true, spec.q_dim))
    latents = np.stack([
        np.random.default_rng(np.random.SeedSequence([spec.seed, 2, s]))
        .normal(size=spec.p_true)
        for s in range(spec.n_speakers)
    ])

    entries = []
    for s in range(spec.n_speakers):
        z = latents[s]
        speaker_comp = z @ basis + bias
        if spec.nonlinear_leak > 0.0:
            speaker_comp = speaker_comp + spec.nonlinear_leak * (np.tanh(z) @ leak_basis)
        for u in range(spec.utts_per_speaker):
            rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 1, s, u]))
            emb = mixing @ z
            if spec.embed_jitter > 0.0:
                emb = emb + spec.embed_jitter * rng.normal(size=spec.v_dim)
            frames = np.broadcast_to(
                speaker_comp, (spec.frames_per_utt, spec.q_dim)
            ).copy()
            if spec.content_sigma > 0.0:
                frames += spec.content_sigma * rng.normal(
                    size=(spec.frames_per_utt, spec.q_dim)
                )
            if spec.noise_sigma > 0.0:
                frames += spec.noise_sigma * rng.normal(
                    size=(spec.frames_per_utt, spec.q_dim)
                )
            utt = _utt_id(s, u)
            feature_path = f"features/{utt}.npy"
            embedding_path = f"embeddings/{utt}.npy"
            write_array(out_dir / feature_path, frames, spec.precision)
            write_array(out_dir / embedding_path, emb, spec.precision)
            entries.append(ManifestEntry(
                utt_id=utt,
                speaker_id=_speaker_id(s),
                feature_path=feature_path,
                embedding_path=embedding_path,
                n_frames=spec.frames_per_utt,
                q_dim=spec.q_dim,
                v_dim=spec.v_dim,
            ))

    manifest_path = out_dir / "manifest.jsonl"
    save_manifest(entries, manifest_path)

    truth = GroundTruth(
        basis=basis, bias=bias, speaker_latents=latents,
        mixing=mixing, leak_basis=leak_basis,
    )
    gt_dir = out_dir / GROUND_TRUTH_DIR
    try:
        gt_dir.mkdir(exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {gt_dir}: {exc}") from exc
    write_array(gt_dir / "basis.npy", basis, "f64")
    write_array(gt_dir / "bias.npy", bias, "f64")
    write_array(gt_dir / "speaker_latents.npy", latents, "f64")
    write_array(gt_dir / "mixing.npy", mixing, "f64")
    write_array(gt_dir / "leak_basis.npy", leak_basis, "f64")
    try:
        (gt_dir / "spec.json").write_text(
            json.dumps(asdict(spec), indent=2, sort_keys=True) + "\n", "utf-8"
        )
    except OSError as exc:
        raise IoError(f"cannot write synth spec: {exc}") from exc
    return manifest_path, truth
