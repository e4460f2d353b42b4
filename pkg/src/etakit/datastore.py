"""Bit-exact persistence: NPY arrays, JSONL manifests, model bundles.

The on-disk contract is deliberately narrow so that any producer (including
non-Python extractors) can emit it byte-exactly: NPY format version 1.0,
little-endian float32/float64, C order, rank 1 or 2. Manifests are one JSON
object per line so corpora with hundreds of thousands of utterances stream
without parsing the whole file.
"""

from __future__ import annotations

import ast
import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import FitMeta, FrameMatrix, LatentModel, PcaModel, SpeakerEmbedding
from .errors import (
    BadJson,
    DuplicateUttId,
    IoError,
    MalformedHeader,
    MissingField,
    NonFinite,
    SchemaVersionMismatch,
    ShapeMismatch,
    ShapeRankError,
    UnsupportedDtype,
    UnsupportedShape,
)

_MAGIC = b"\x93NUMPY"
_VERSION = (1, 0)
_DESCRS = {"f32": "<f4", "f64": "<f8"}
_PRECISIONS = {v: k for k, v in _DESCRS.items()}

BUNDLE_SCHEMA_VERSION = 1
BUNDLE_FILES = (
    "pca_mean.npy",
    "pca_components.npy",
    "pca_explained_variance.npy",
    "latent_basis.npy",
    "latent_bias.npy",
)


# ---------------------------------------------------------------------------
# NPY v1.0
# ---------------------------------------------------------------------------

def _header_bytes(descr: str, shape: tuple[int, ...]) -> bytes:
    dict_str = f"{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape!r}, }}"
    # magic(6) + version(2) + hlen(2) + dict + padding + '\n', 64-aligned
    base = len(_MAGIC) + 2 + 2
    total = base + len(dict_str) + 1
    pad = (64 - total % 64) % 64
    header = dict_str + " " * pad + "\n"
    return _MAGIC + bytes(_VERSION) + struct.pack("<H", len(header)) + header.encode("latin1")


def write_array(path, matrix, precision: str = "f64") -> None:
    """Write a rank-1/2 array as NPY v1.0 with the given storage precision."""
    if precision not in _DESCRS:
        raise ValueError(f"precision must be one of {sorted(_DESCRS)}, got {precision!r}")
    a = np.asarray(matrix)
    if a.ndim not in (1, 2):
        raise UnsupportedShape(f"only rank-1/2 arrays supported, got rank {a.ndim}")
    if not np.isfinite(a).all():
        raise NonFinite(f"refusing to write non-finite values to {path}")
    a = np.ascontiguousarray(a, dtype=_DESCRS[precision])
    try:
        with open(path, "wb") as f:
            f.write(_header_bytes(_DESCRS[precision], a.shape))
            f.write(a.tobytes(order="C"))
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _parse_header(raw: dict, path) -> tuple[str, tuple[int, ...]]:
    if set(raw) != {"descr", "fortran_order", "shape"}:
        raise MalformedHeader(f"{path}: unexpected header keys {sorted(raw)}")
    descr = raw["descr"]
    if descr not in _PRECISIONS:
        raise UnsupportedDtype(f"{path}: dtype {descr!r} not supported (need '<f4' or '<f8')")
    if raw["fortran_order"] is not False:
        raise MalformedHeader(f"{path}: fortran_order must be False")
    shape = raw["shape"]
    if not (isinstance(shape, tuple) and all(isinstance(n, int) and n >= 0 for n in shape)):
        raise MalformedHeader(f"{path}: bad shape {shape!r}")
    if len(shape) not in (1, 2):
        raise ShapeRankError(f"{path}: rank {len(shape)} not supported")
    return descr, shape


def _read_header(f, path) -> tuple[str, tuple[int, ...]]:
    prefix = f.read(10)
    if len(prefix) < 10 or prefix[:6] != _MAGIC:
        raise MalformedHeader(f"{path}: not an NPY file")
    if (prefix[6], prefix[7]) != _VERSION:
        raise MalformedHeader(
            f"{path}: unsupported NPY version {prefix[6]}.{prefix[7]}"
        )
    (hlen,) = struct.unpack("<H", prefix[8:10])
    header = f.read(hlen)
    if len(header) < hlen:
        raise MalformedHeader(f"{path}: truncated header")
    try:
        raw = ast.literal_eval(header.decode("latin1"))
    except (ValueError, SyntaxError) as exc:
        raise MalformedHeader(f"{path}: unparseable header: {exc}") from exc
    if not isinstance(raw, dict):
        raise MalformedHeader(f"{path}: header is not a dict")
    return _parse_header(raw, path)


def read_array_header(path) -> tuple[tuple[int, ...], str]:
    """Shape and precision of a stored array, without reading the data."""
    try:
        with open(path, "rb") as f:
            descr, shape = _read_header(f, path)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return shape, _PRECISIONS[descr]


def read_array(path) -> tuple[np.ndarray, str]:
    """Read an NPY v1.0 file; returns the array and its storage precision."""
    try:
        with open(path, "rb") as f:
            descr, shape = _read_header(f, path)
            count = int(np.prod(shape, dtype=np.int64))
            itemsize = int(descr[-1])
            data = f.read(count * itemsize)
            if len(data) < count * itemsize:
                raise MalformedHeader(f"{path}: truncated data section")
            if f.read(1):
                raise MalformedHeader(f"{path}: trailing bytes after data section")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    a = np.frombuffer(data, dtype=descr).reshape(shape)
    return a.copy(), _PRECISIONS[descr]


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

_MANIFEST_FIELDS = {
    "utt_id": str,
    "speaker_id": str,
    "feature_path": str,
    "embedding_path": str,
    "n_frames": int,
    "q_dim": int,
    "v_dim": int,
}


@dataclass(frozen=True)
class ManifestEntry:
    utt_id: str
    speaker_id: str
    feature_path: str
    embedding_path: str
    n_frames: int
    q_dim: int
    v_dim: int


def _entry_from_json(obj, line_no: int) -> ManifestEntry:
    if not isinstance(obj, dict):
        raise BadJson(f"line {line_no}: expected a JSON object")
    for name, typ in _MANIFEST_FIELDS.items():
        if name not in obj:
            raise MissingField(f"line {line_no}: missing field {name!r}")
        if not isinstance(obj[name], typ) or isinstance(obj[name], bool):
            raise BadJson(f"line {line_no}: field {name!r} must be {typ.__name__}")
    extra = set(obj) - set(_MANIFEST_FIELDS)
    if extra:
        raise BadJson(f"line {line_no}: unexpected fields {sorted(extra)}")
    return ManifestEntry(**obj)


def load_manifest(path, strict: bool = False) -> list[ManifestEntry]:
    """Parse a JSONL manifest, preserving file order.

    With ``strict`` the referenced arrays are opened (headers only) and
    their stored shapes checked against the declared ones.
    """
    path = Path(path)
    entries: list[ManifestEntry] = []
    seen: dict[str, int] = {}
    try:
        lines = path.read_text("utf-8").splitlines()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BadJson(f"line {line_no}: {exc}") from exc
        entry = _entry_from_json(obj, line_no)
        if entry.utt_id in seen:
            raise DuplicateUttId(
                f"utt_id {entry.utt_id!r} on line {line_no} already seen "
                f"on line {seen[entry.utt_id]}"
            )
        seen[entry.utt_id] = line_no
        entries.append(entry)
    if strict:
        root = path.parent
        for entry in entries:
            shape, _ = read_array_header(root / entry.feature_path)
            if shape != (entry.n_frames, entry.q_dim):
                raise ShapeMismatch(
                    f"{entry.utt_id}: features stored {shape}, "
                    f"declared ({entry.n_frames}, {entry.q_dim})"
                )
            eshape, _ = read_array_header(root / entry.embedding_path)
            if eshape != (entry.v_dim,):
                raise ShapeMismatch(
                    f"{entry.utt_id}: embedding stored {eshape}, "
                    f"declared ({entry.v_dim},)"
                )
    return entries


def save_manifest(entries: Iterable[ManifestEntry], path) -> None:
    """Write entries as JSONL; paths are kept relative to the manifest dir."""
    try:
        with open(path, "w", encoding="utf-8") as f:
            for entry in entries:
                f.write(json.dumps(asdict(entry), sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def load_frames(manifest_dir, entry: ManifestEntry) -> FrameMatrix:
    """Load one utterance's frame matrix, validating the declared shape."""
    a, _ = read_array(Path(manifest_dir) / entry.feature_path)
    if a.shape != (entry.n_frames, entry.q_dim):
        raise ShapeMismatch(
            f"{entry.utt_id}: features stored {a.shape}, "
            f"declared ({entry.n_frames}, {entry.q_dim})"
        )
    return FrameMatrix(a, entry.utt_id)


def load_embedding(manifest_dir, entry: ManifestEntry) -> SpeakerEmbedding:
    """Load one utterance's speaker embedding, validating the declared shape."""
    a, _ = read_array(Path(manifest_dir) / entry.embedding_path)
    if a.shape != (entry.v_dim,):
        raise ShapeMismatch(
            f"{entry.utt_id}: embedding stored {a.shape}, declared ({entry.v_dim},)"
        )
    return SpeakerEmbedding(a, entry.utt_id)


def dataset_fingerprint(entries: Sequence[ManifestEntry]) -> str:
    """Deterministic digest of the corpus identity (ids, frame counts, dims)."""
    items = sorted(
        (e.utt_id, e.n_frames, e.q_dim, e.v_dim) for e in entries
    )
    blob = json.dumps(items, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# model bundles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BundleMeta:
    q_dim: int
    v_dim: int
    p_dim: int
    l_subsample: int
    rng_seed: int
    solver: str
    dataset_fingerprint: str
    n_frames_used: int
    created_at: str | None = None
    schema_version: int = BUNDLE_SCHEMA_VERSION


@dataclass(frozen=True)
class ModelBundle:
    pca: PcaModel
    latent: LatentModel
    meta: BundleMeta

    def __post_init__(self):
        m = self.meta
        if (self.pca.p_dim, self.pca.v_dim) != (m.p_dim, m.v_dim):
            raise ShapeMismatch(
                f"pca is {self.pca.p_dim}x{self.pca.v_dim}, "
                f"meta says {m.p_dim}x{m.v_dim}"
            )
        if (self.latent.p_dim, self.latent.q_dim) != (m.p_dim, m.q_dim):
            raise ShapeMismatch(
                f"latent model is {self.latent.p_dim}x{self.latent.q_dim}, "
                f"meta says {m.p_dim}x{m.q_dim}"
            )


def now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def save_bundle(bundle: ModelBundle, directory) -> None:
    """Persist a fitted model; every array round-trips bit-exactly (f64)."""
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {directory}: {exc}") from exc
    write_array(directory / "pca_mean.npy", bundle.pca.mean, "f64")
    write_array(directory / "pca_components.npy", bundle.pca.components, "f64")
    write_array(directory / "pca_explained_variance.npy",
                bundle.pca.explained_variance, "f64")
    write_array(directory / "latent_basis.npy", bundle.latent.basis, "f64")
    write_array(directory / "latent_bias.npy", bundle.latent.bias, "f64")
    meta = dict(sorted(asdict(bundle.meta).items()))
    try:
        (directory / "meta.json").write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n", "utf-8"
        )
    except OSError as exc:
        raise IoError(f"cannot write bundle meta: {exc}") from exc


def load_bundle(directory) -> ModelBundle:
    """Load a bundle, rejecting schema or shape disagreements."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    try:
        raw = json.loads(meta_path.read_text("utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read {meta_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise BadJson(f"{meta_path}: {exc}") from exc
    if raw.get("schema_version") != BUNDLE_SCHEMA_VERSION:
        raise SchemaVersionMismatch(
            f"{meta_path}: schema_version {raw.get('schema_version')!r}, "
            f"expected {BUNDLE_SCHEMA_VERSION}"
        )
    try:
        meta = BundleMeta(**raw)
    except TypeError as exc:
        raise BadJson(f"{meta_path}: {exc}") from exc
    mean, _ = read_array(directory / "pca_mean.npy")
    comps, _ = read_array(directory / "pca_components.npy")
    ev, _ = read_array(directory / "pca_explained_variance.npy")
    basis, _ = read_array(directory / "latent_basis.npy")
    bias, _ = read_array(directory / "latent_bias.npy")
    if comps.shape != (meta.p_dim, meta.v_dim):
        raise ShapeMismatch(
            f"pca_components stored {comps.shape}, "
            f"meta says ({meta.p_dim}, {meta.v_dim})"
        )
    if basis.shape != (meta.p_dim, meta.q_dim):
        raise ShapeMismatch(
            f"latent_basis stored {basis.shape}, "
            f"meta says ({meta.p_dim}, {meta.q_dim})"
        )
    pca = PcaModel(mean=mean, components=comps, explained_variance=ev)
    latent = LatentModel(
        basis=basis,
        bias=bias,
        fit_meta=FitMeta(
            n_frames_used=meta.n_frames_used,
            l_subsample=meta.l_subsample,
            rng_seed=meta.rng_seed,
            solver=meta.solver,
            dataset_fingerprint=meta.dataset_fingerprint,
        ),
    )
    return ModelBundle(pca=pca, latent=latent, meta=meta)
