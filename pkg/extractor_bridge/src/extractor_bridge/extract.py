"""Batch extraction: audio manifest in, feature/embedding corpus out.

The output layout is exactly what the decomposition toolkit consumes:
one K x Q float32 NPY per utterance under ``features/``, one V float32 NPY
under ``embeddings/``, and a JSONL manifest with the fields
utt_id/speaker_id/feature_path/embedding_path/n_frames/q_dim/v_dim.
Job-level provenance (model ids, layer, skip counts) goes to a sidecar
``extraction.json`` so the manifest schema stays closed.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .audio import TARGET_SR, load_audio_16k
from .models import make_speaker_encoder, make_ssl
from .npyio import write_npy

log = logging.getLogger("extractor_bridge")

MAX_SKIP_FRACTION = 0.01


class ExtractionFailed(Exception):
    """Raised when more than the tolerated fraction of utterances fails."""


@dataclass(frozen=True)
class AudioEntry:
    utt_id: str
    speaker_id: str
    audio_path: str


@dataclass(frozen=True)
class ExtractionJob:
    audio_manifest: str
    out_dir: str
    ssl_model: str = "wavlm-large"
    layer: int = 15
    speaker_encoder: str = "ecapa"
    target_sr: int = TARGET_SR
    batch_size: int = 1
    q_dim: int = 1024  # used by the dummy ssl; real models report their own
    v_dim: int = 192   # used by the dummy encoder; real models report their own


def load_audio_manifest(path) -> list[AudioEntry]:
    entries = []
    seen = set()
    for line_no, line in enumerate(Path(path).read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        obj = json.loads(line)
        for key in ("utt_id", "speaker_id", "audio_path"):
            if key not in obj:
                raise ValueError(f"{path} line {line_no}: missing {key!r}")
        if obj["utt_id"] in seen:
            raise ValueError(f"{path} line {line_no}: duplicate utt_id {obj['utt_id']!r}")
        seen.add(obj["utt_id"])
        entries.append(AudioEntry(
            utt_id=str(obj["utt_id"]),
            speaker_id=str(obj["speaker_id"]),
            audio_path=str(obj["audio_path"]),
        ))
    return entries


def _write_atomic(path: Path, array: np.ndarray) -> None:
    tmp = path.with_suffix(".tmp")
    write_npy(tmp, array, "f32")
    os.replace(tmp, path)


def extract(job: ExtractionJob) -> Path:
    """Run the extractors over every utterance; returns the manifest path.

    Per-utterance failures are logged and skipped; the job fails if more
    than 1% of utterances are skipped.
    """
    entries = load_audio_manifest(job.audio_manifest)
    if not entries:
        raise ExtractionFailed(f"{job.audio_manifest}: empty audio manifest")
    audio_root = Path(job.audio_manifest).parent

    ssl = make_ssl(job.ssl_model, layer=job.layer, q_dim=job.q_dim)
    spk = make_speaker_encoder(job.speaker_encoder, v_dim=job.v_dim)

    out = Path(job.out_dir)
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "embeddings").mkdir(parents=True, exist_ok=True)

    manifest_lines = []
    skipped = []
    for entry in entries:
        wav_path = audio_root / entry.audio_path
        try:
            wav = load_audio_16k(wav_path)
            frames = ssl.extract(wav)
            emb = spk.embed(wav)
            if frames.ndim != 2 or frames.shape[0] < 1:
                raise ValueError(f"bad frame shape {frames.shape}")
            if not (np.isfinite(frames).all() and np.isfinite(emb).all()):
                raise ValueError("non-finite model output")
            _write_atomic(out / "features" / f"{entry.utt_id}.npy", frames)
            _write_atomic(out / "embeddings" / f"{entry.utt_id}.npy", emb)
            manifest_lines.append({
                "utt_id": entry.utt_id,
                "speaker_id": entry.speaker_id,
                "feature_path": f"features/{entry.utt_id}.npy",
                "embedding_path": f"embeddings/{entry.utt_id}.npy",
                "n_frames": int(frames.shape[0]),
                "q_dim": int(frames.shape[1]),
                "v_dim": int(emb.shape[0]),
            })
        except Exception as exc:
            log.warning("skipping %s (%s): %s", entry.utt_id, wav_path, exc)
            skipped.append(entry.utt_id)

    if len(skipped) > MAX_SKIP_FRACTION * len(entries):
        raise ExtractionFailed(
            f"{len(skipped)}/{len(entries)} utterances failed "
            f"(> {MAX_SKIP_FRACTION:.0%} tolerated): {skipped[:10]}"
        )

    manifest_path = out / "manifest.jsonl"
    with open(manifest_path, "w", encoding="utf-8") as f:
        for obj in manifest_lines:
            f.write(json.dumps(obj, sort_keys=True) + "\n")
    meta = {
        "ssl_model": job.ssl_model,
        "layer": job.layer,
        "speaker_encoder": job.speaker_encoder,
        "target_sr": job.target_sr,
        "n_utterances": len(manifest_lines),
        "n_skipped": len(skipped),
        "skipped": skipped,
    }
    (out / "extraction.json").write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", "utf-8"
    )
    return manifest_path
