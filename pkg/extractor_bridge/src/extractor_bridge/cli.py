"""Command line for batch feature/embedding extraction."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .extract import ExtractionFailed, ExtractionJob, extract
from .models import SPEAKER_ENCODERS, SSL_MODELS


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eta-extract",
        description="Extract frame-level SSL features and speaker embeddings "
                    "from audio into a decomposition-toolkit corpus",
    )
    parser.add_argument("--audio-manifest", required=True,
                        help="JSONL with utt_id, speaker_id, audio_path per line")
    parser.add_argument("--out", required=True)
    parser.add_argument("--ssl", choices=sorted(SSL_MODELS), default="wavlm-large")
    parser.add_argument("--layer", type=int, default=15)
    parser.add_argument("--spk", choices=sorted(SPEAKER_ENCODERS), default="ecapa")
    parser.add_argument("--batch-size", type=int, default=1)
    parser.add_argument("--q-dim", type=int, default=1024,
                        help="feature dimension for the dummy ssl model")
    parser.add_argument("--v-dim", type=int, default=192,
                        help="embedding dimension for the dummy encoder")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, os.environ.get("ETA_LOG", "warning").upper(),
                      logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )
    job = ExtractionJob(
        audio_manifest=args.audio_manifest,
        out_dir=args.out,
        ssl_model=args.ssl,
        layer=args.layer,
        speaker_encoder=args.spk,
        batch_size=args.batch_size,
        q_dim=args.q_dim,
        v_dim=args.v_dim,
    )
    try:
        manifest = extract(job)
    except (ExtractionFailed, RuntimeError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}))
        return 1
    print(json.dumps({"manifest": str(manifest)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
