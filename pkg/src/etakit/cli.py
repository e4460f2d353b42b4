"""Batch command line: fit, transform, probe, synth, inspect.

Structured results go to stdout as JSON (one object per invocation) so runs
diff cleanly in CI; logs go to stderr, with verbosity taken from the
``ETA_LOG`` environment variable. Exit codes: 0 success, 1 runtime error,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import core, datastore, probe, synth
from .errors import DimensionMismatch, EtaKitError, InsufficientData, IoError, ZeroVariance

log = logging.getLogger("etakit")

DEFAULT_P_DIM = 128
DEFAULT_SUBSAMPLE = 100

_SOLVER_NAMES = {"svd": "svd", "qr": "qr", "normal-eq": "normal_eq"}


def _configure_logging() -> None:
    level = os.environ.get("ETA_LOG", "warning").upper()
    logging.basicConfig(
        stream=sys.stderr,
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _emit(obj: dict) -> None:
    print(json.dumps(obj, sort_keys=True))


def _check_corpus_dims(entries) -> tuple[int, int]:
    q_dim, v_dim = entries[0].q_dim, entries[0].v_dim
    for e in entries:
        if e.q_dim != q_dim or e.v_dim != v_dim:
            raise DimensionMismatch(
                f"{e.utt_id}: dims ({e.q_dim}, {e.v_dim}) disagree with "
                f"corpus dims ({q_dim}, {v_dim})"
            )
    return q_dim, v_dim


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def cmd_fit(args) -> int:
    entries = datastore.load_manifest(args.manifest)
    if not entries:
        raise InsufficientData(f"{args.manifest}: empty manifest")
    if args.deterministic:
        entries = sorted(entries, key=lambda e: e.utt_id)
    q_dim, v_dim = _check_corpus_dims(entries)
    root = Path(args.manifest).parent

    log.info("fitting pca (p=%d) over %d embeddings", args.p_dim, len(entries))
    pca = core.fit_pca_streaming(
        (datastore.load_embedding(root, e) for e in entries), args.p_dim
    )

    def make_job(entry):
        def job():
            d = core.project(pca, datastore.load_embedding(root, entry))
            frames = core.subsample_frames(
                datastore.load_frames(root, entry), args.subsample, args.seed
            )
            return d, frames
        return job

    log.info("accumulating %d utterances on %d workers", len(entries), args.workers)
    acc = core.parallel_accumulate(
        [make_job(e) for e in entries],
        args.p_dim,
        q_dim,
        workers=args.workers,
        deterministic=args.deterministic,
    )
    fingerprint = datastore.dataset_fingerprint(entries)
    solver = _SOLVER_NAMES[args.solver]
    model = core.solve(
        acc,
        solver=solver,
        l_subsample=args.subsample,
        rng_seed=args.seed,
        dataset_fingerprint=fingerprint,
    )
    meta = datastore.BundleMeta(
        q_dim=q_dim,
        v_dim=v_dim,
        p_dim=args.p_dim,
        l_subsample=args.subsample,
        rng_seed=args.seed,
        solver=solver,
        dataset_fingerprint=fingerprint,
        n_frames_used=acc.n_frames,
        created_at=None if args.deterministic else datastore.now_iso(),
    )
    datastore.save_bundle(datastore.ModelBundle(pca, model, meta), args.out)
    _emit({
        "n_utts": len(entries),
        "n_frames_used": acc.n_frames,
        "residual_frobenius": core.residual_frobenius(acc, model),
        "gram_condition": core.gram_condition(acc),
        "dataset_fingerprint": fingerprint,
        "bundle": str(args.out),
    })
    return 0


# ---------------------------------------------------------------------------
# transform
# ---------------------------------------------------------------------------

def cmd_transform(args) -> int:
    bundle = datastore.load_bundle(args.bundle)
    entries = datastore.load_manifest(args.manifest)
    if not entries:
        raise InsufficientData(f"{args.manifest}: empty manifest")
    root = Path(args.manifest).parent
    out = Path(args.out)
    out_existed = out.exists()
    (out / "features").mkdir(parents=True, exist_ok=True)
    (out / "embeddings").mkdir(parents=True, exist_ok=True)
    created: list[Path] = []  # only our own files are removed on failure

    def one(entry):
        emb = datastore.load_embedding(root, entry)
        frames = datastore.load_frames(root, entry)
        d = core.project(bundle.pca, emb)
        eta = core.eta_transform(bundle.latent, d, frames)
        _, precision = datastore.read_array_header(root / entry.feature_path)
        feat_out = out / "features" / f"{entry.utt_id}.npy"
        emb_out = out / "embeddings" / f"{entry.utt_id}.npy"
        created.append(feat_out)
        created.append(emb_out)
        datastore.write_array(feat_out, eta.data, precision)
        shutil.copyfile(root / entry.embedding_path, emb_out)
        return replace(
            entry,
            feature_path=f"features/{entry.utt_id}.npy",
            embedding_path=f"embeddings/{entry.utt_id}.npy",
        )

    try:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            out_entries = list(pool.map(one, entries))
        created.append(out / "manifest.jsonl")
        datastore.save_manifest(out_entries, out / "manifest.jsonl")
    except BaseException:
        for path in created:  # partial outputs removed on failure
            path.unlink(missing_ok=True)
        if not out_existed:
            shutil.rmtree(out, ignore_errors=True)
        raise
    _emit({
        "n_utts": len(out_entries),
        "out": str(out),
        "manifest": str(out / "manifest.jsonl"),
    })
    return 0


# ---------------------------------------------------------------------------
# probe
# ---------------------------------------------------------------------------

def _load_probe_dataset(manifest_path) -> probe.ProbeDataset:
    entries = sorted(datastore.load_manifest(manifest_path), key=lambda e: e.utt_id)
    root = Path(manifest_path).parent
    rows = [
        (e.utt_id, e.speaker_id, probe.pool_utterance(datastore.load_frames(root, e)))
        for e in entries
    ]
    return probe.ProbeDataset(rows=tuple(rows))


def _parse_fold_values(text: str) -> list[float]:
    vals = [float(v) for v in text.split(",") if v.strip()]
    if len(vals) < 2:
        raise ValueError(f"need at least 2 fold values, got {text!r}")
    if max(vals) > 1.0:  # values given in percent
        vals = [v / 100.0 for v in vals]
    return vals


def cmd_probe(args) -> int:
    if args.folds_override:
        a_vals = _parse_fold_values(args.folds_override[0])
        b_vals = _parse_fold_values(args.folds_override[1])
        rep_a = probe.aggregate_folds(a_vals, seed=args.seed)
        rep_b = probe.aggregate_folds(b_vals, seed=args.seed)
        source_a, source_b = "folds-override", "folds-override"
    else:
        if not (args.manifest_a and args.manifest_b):
            raise IoError("probe needs --manifest-a and --manifest-b "
                          "(or --folds-override)")
        ds_a = _load_probe_dataset(args.manifest_a)
        ds_b = _load_probe_dataset(args.manifest_b)
        ids_a = [(u, s) for u, s, _ in ds_a.rows]
        ids_b = [(u, s) for u, s, _ in ds_b.rows]
        if ids_a != ids_b:
            raise DimensionMismatch(
                "manifests are not matched: utterance/speaker sets differ, "
                "so folds cannot be paired"
            )
        rep_a = probe.run_probe(ds_a, args.folds, args.seed)
        rep_b = probe.run_probe(ds_b, args.folds, args.seed)
        source_a, source_b = str(args.manifest_a), str(args.manifest_b)
        if args.projection:
            method = args.projection.replace("-", "_")
            proj_dir = Path(args.projection_out or "projections")
            proj_dir.mkdir(parents=True, exist_ok=True)
            if method == "pca2d":
                probe.export_projection(ds_a, method, proj_dir / "a_pca2d.csv")
                probe.export_projection(ds_b, method, proj_dir / "b_pca2d.csv")
            else:
                probe.export_projection(ds_a, method, proj_dir / "a_raw")
                probe.export_projection(ds_b, method, proj_dir / "b_raw")

    try:
        test = probe.paired_t_test(rep_a.fold_accuracies, rep_b.fold_accuracies)
        test_dict = test.to_dict()
        test_dict["significant_at_0.05"] = test.p_value < 0.05
        test_dict["degenerate"] = False
    except ZeroVariance as exc:
        test_dict = {
            "degenerate": True,
            "significant_at_0.05": False,
            "note": f"not significant / degenerate: {exc}",
        }
    _emit({
        "k": rep_a.k,
        "seed": args.seed,
        "a": {"source": source_a, **rep_a.to_dict()},
        "b": {"source": source_b, **rep_b.to_dict()},
        "accuracy_drop": rep_a.mean - rep_b.mean,
        "accuracy_drop_pct": 100.0 * (rep_a.mean - rep_b.mean),
        "paired_test": test_dict,
    })
    return 0


# ---------------------------------------------------------------------------
# synth / inspect
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    spec = synth.SynthSpec(
        n_speakers=args.speakers,
        utts_per_speaker=args.utts_per_speaker,
        frames_per_utt=args.frames_per_utt,
        q_dim=args.q_dim,
        v_dim=args.v_dim,
        p_true=args.p_true,
        noise_sigma=args.noise_sigma,
        content_sigma=args.content_sigma,
        seed=args.seed,
        embed_jitter=args.embed_jitter,
        nonlinear_leak=args.nonlinear_leak,
        precision=args.precision,
    )
    try:
        manifest_path, _ = synth.generate(spec, args.out)
    except ValueError as exc:
        raise EtaKitError(str(exc)) from exc
    _emit({
        "manifest": str(manifest_path),
        "n_utts": spec.n_speakers * spec.utts_per_speaker,
        "n_speakers": spec.n_speakers,
        "q_dim": spec.q_dim,
        "v_dim": spec.v_dim,
        "seed": spec.seed,
    })
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if path.is_dir():
        if (path / "meta.json").exists() and (path / "pca_mean.npy").exists():
            b = datastore.load_bundle(path)
            m = b.meta
            print(f"model bundle: {path}")
            print(f"  P={m.p_dim} Q={m.q_dim} V={m.v_dim} L={m.l_subsample} "
                  f"seed={m.rng_seed} solver={m.solver}")
            print(f"  n_frames_used={m.n_frames_used}")
            print(f"  dataset_fingerprint={m.dataset_fingerprint}")
            print(f"  created_at={m.created_at}")
            return 0
        if (path / "manifest.jsonl").exists():
            path = path / "manifest.jsonl"
        else:
            raise IoError(f"{path}: no bundle or manifest found")
    if path.suffix == ".npy":
        a, precision = datastore.read_array(path)
        print(f"array: {path}")
        print(f"  shape={a.shape} precision={precision}")
        print(f"  min={a.min() if a.size else float('nan')} "
              f"max={a.max() if a.size else float('nan')}")
        return 0
    entries = datastore.load_manifest(path, strict=args.strict)
    speakers = sorted({e.speaker_id for e in entries})
    total_frames = sum(e.n_frames for e in entries)
    print(f"manifest: {path}")
    print(f"  utterances={len(entries)} speakers={len(speakers)} "
          f"frames={total_frames}")
    if entries:
        print(f"  Q={entries[0].q_dim} V={entries[0].v_dim}")
    print(f"  dataset_fingerprint={datastore.dataset_fingerprint(entries)}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eta",
        description="Linear speaker decomposition of frame-level speech features",
    )
    sub = parser.add_subparsers(dest="command")

    p_fit = sub.add_parser("fit", help="fit PCA + latent basis/bias over a corpus")
    p_fit.add_argument("--manifest", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--p-dim", type=int, default=DEFAULT_P_DIM)
    p_fit.add_argument("--subsample", type=int, default=DEFAULT_SUBSAMPLE,
                       help="frames drawn per utterance (L)")
    p_fit.add_argument("--solver", choices=sorted(_SOLVER_NAMES), default="svd")
    p_fit.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p_fit.add_argument("--deterministic", action=argparse.BooleanOptionalAction,
                       default=True)
    _add_common(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_tr = sub.add_parser("transform", help="write the eta corpus for a manifest")
    p_tr.add_argument("--bundle", required=True)
    p_tr.add_argument("--manifest", required=True)
    p_tr.add_argument("--out", required=True)
    p_tr.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p_tr.set_defaults(func=cmd_transform)

    p_pr = sub.add_parser("probe", help="speaker probe on two matched corpora")
    p_pr.add_argument("--manifest-a")
    p_pr.add_argument("--manifest-b")
    p_pr.add_argument("--folds", type=int, default=5)
    p_pr.add_argument("--folds-override", nargs=2, metavar=("A_CSV", "B_CSV"),
                      help="skip training; aggregate these fold accuracies")
    p_pr.add_argument("--projection", choices=["pca2d", "raw-dump"])
    p_pr.add_argument("--projection-out")
    _add_common(p_pr)
    p_pr.set_defaults(func=cmd_probe)

    p_sy = sub.add_parser("synth", help="generate a synthetic corpus")
    p_sy.add_argument("--out", required=True)
    p_sy.add_argument("--speakers", type=int, default=10)
    p_sy.add_argument("--utts-per-speaker", type=int, default=20)
    p_sy.add_argument("--frames-per-utt", type=int, default=200)
    p_sy.add_argument("--q-dim", type=int, default=64)
    p_sy.add_argument("--v-dim", type=int, default=32)
    p_sy.add_argument("--p-true", type=int, default=8)
    p_sy.add_argument("--noise-sigma", type=float, default=0.0)
    p_sy.add_argument("--content-sigma", type=float, default=1.0)
    p_sy.add_argument("--embed-jitter", type=float, default=0.01)
    p_sy.add_argument("--nonlinear-leak", type=float, default=0.0)
    p_sy.add_argument("--precision", choices=["f32", "f64"], default="f32")
    _add_common(p_sy)
    p_sy.set_defaults(func=cmd_synth)

    p_in = sub.add_parser("inspect", help="summarize an array, manifest, or bundle")
    p_in.add_argument("path")
    p_in.add_argument("--strict", action=argparse.BooleanOptionalAction, default=True,
                      help="verify stored shapes against manifest declarations")
    p_in.set_defaults(func=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse handles usage errors (exit 2) and --help
        return int(exc.code or 0)
    _configure_logging()
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except EtaKitError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        _emit({"error": type(exc).__name__, "message": str(exc)})
        return 1


if __name__ == "__main__":
    sys.exit(main())
