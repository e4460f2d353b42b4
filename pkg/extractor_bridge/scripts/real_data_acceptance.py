"""Real-data acceptance runs (require downloaded checkpoints; not desk-scale).

Two directional checks over a LibriSpeech-style corpus:

  9.  probe accuracy on eta features is >= 20 percentage points below raw
      features for a 10-speaker test-clean subset;
  10. with ECAPA embeddings, probing eta built with PCA-128 scores no higher
      than eta built with the full embedding dimension (PCA to V is a pure
      rotation, i.e. the "no reduction" setting).

Usage:
  python3 scripts/real_data_acceptance.py --audio-root /data/test-clean \
      --work /tmp/eta-real [--n-speakers 10] [--ssl wavlm-large] [--spk ecapa]

--audio-root is scanned recursively for <speaker>/.../<utt>.wav|.flac
(LibriSpeech layout); FLAC needs the soundfile package. Fitting uses the
probe corpus itself unless --fit-manifest points at a previously extracted
corpus (the reference protocol fits on the full training set, which is far
beyond this script's scope).
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from pathlib import Path

from extractor_bridge.cli import main as extract_main

AUDIO_SUFFIXES = (".wav", ".flac")


def build_audio_manifest(audio_root: Path, out_path: Path, n_speakers: int) -> int:
    by_speaker: dict[str, list[Path]] = {}
    for path in sorted(audio_root.rglob("*")):
        if path.suffix.lower() in AUDIO_SUFFIXES:
            speaker = path.relative_to(audio_root).parts[0]
            by_speaker.setdefault(speaker, []).append(path)
    speakers = sorted(by_speaker)[:n_speakers]
    if len(speakers) < n_speakers:
        raise SystemExit(f"found only {len(speakers)} speakers under {audio_root}")
    n = 0
    with open(out_path, "w", encoding="utf-8") as f:
        for speaker in speakers:
            for path in by_speaker[speaker]:
                f.write(json.dumps({
                    "utt_id": f"{speaker}-{path.stem}",
                    "speaker_id": speaker,
                    "audio_path": str(path.resolve()),
                }) + "\n")
                n += 1
    return n


def run_eta(*argv: str) -> dict:
    proc = subprocess.run(["eta", *argv], capture_output=True, text=True)
    if proc.returncode != 0:
        raise SystemExit(f"eta {' '.join(argv)} failed:\n{proc.stdout}{proc.stderr}")
    return json.loads(proc.stdout.strip().splitlines()[-1])


def fit_transform_probe(manifest: str, work: Path, tag: str, p_dim: int,
                        raw_manifest: str) -> dict:
    bundle = work / f"bundle_{tag}"
    eta_dir = work / f"eta_{tag}"
    run_eta("fit", "--manifest", manifest, "--out", str(bundle),
            "--p-dim", str(p_dim))
    run_eta("transform", "--bundle", str(bundle), "--manifest", raw_manifest,
            "--out", str(eta_dir))
    return run_eta("probe", "--manifest-a", raw_manifest,
                   "--manifest-b", str(eta_dir / "manifest.jsonl"),
                   "--folds", "5")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--audio-root", required=True, type=Path)
    parser.add_argument("--work", required=True, type=Path)
    parser.add_argument("--n-speakers", type=int, default=10)
    parser.add_argument("--ssl", default="wavlm-large")
    parser.add_argument("--layer", type=int, default=15)
    parser.add_argument("--spk", default="ecapa")
    parser.add_argument("--fit-manifest", default=None,
                        help="extracted corpus to fit on (default: the probe corpus)")
    args = parser.parse_args()

    work = args.work
    work.mkdir(parents=True, exist_ok=True)
    audio_manifest = work / "audio.jsonl"
    n = build_audio_manifest(args.audio_root, audio_manifest, args.n_speakers)
    print(f"{n} utterances over {args.n_speakers} speakers")

    rc = extract_main([
        "--audio-manifest", str(audio_manifest),
        "--out", str(work / "corpus"),
        "--ssl", args.ssl, "--layer", str(args.layer), "--spk", args.spk,
    ])
    if rc != 0:
        raise SystemExit("extraction failed")
    probe_manifest = str(work / "corpus" / "manifest.jsonl")
    fit_manifest = args.fit_manifest or probe_manifest
    entry = json.loads(Path(probe_manifest).read_text().splitlines()[0])
    v_dim = entry["v_dim"]

    ok = True

    # criterion 9: eta at least 20 points below raw
    payload = fit_transform_probe(fit_manifest, work, "p128", 128, probe_manifest)
    raw_pct = payload["a"]["mean_pct"]
    eta128_pct = payload["b"]["mean_pct"]
    drop = raw_pct - eta128_pct
    line = (f"criterion 9: raw {raw_pct:.2f}% -> eta {eta128_pct:.2f}% "
            f"(drop {drop:.2f} points, need >= 20)")
    print(("[PASS] " if drop >= 20.0 else "[FAIL] ") + line)
    ok &= drop >= 20.0

    # criterion 10: PCA-128 no worse than the unreduced embedding
    payload = fit_transform_probe(fit_manifest, work, "full", v_dim, probe_manifest)
    eta_full_pct = payload["b"]["mean_pct"]
    line = (f"criterion 10: eta accuracy PCA-128 {eta128_pct:.2f}% vs "
            f"no-reduction {eta_full_pct:.2f}% (need <=)")
    print(("[PASS] " if eta128_pct <= eta_full_pct else "[FAIL] ") + line)
    ok &= eta128_pct <= eta_full_pct

    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
