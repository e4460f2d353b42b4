import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays, array_shapes

from etakit import datastore
from etakit.core import FitMeta, LatentModel, PcaModel
from etakit.datastore import (
    BundleMeta,
    ManifestEntry,
    ModelBundle,
    dataset_fingerprint,
    load_bundle,
    load_manifest,
    read_array,
    read_array_header,
    save_bundle,
    save_manifest,
    write_array,
)
from etakit.errors import (
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

from util import make_latent, make_pca


# ---------------------------------------------------------------------------
# NPY round trips
# ---------------------------------------------------------------------------

def test_roundtrip_small_matrix(tmp_path):
    a = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    p = tmp_path / "a.npy"
    write_array(p, a, "f64")
    # any standard NPY reader must see the same values
    assert np.array_equal(np.load(p), a)
    b, prec = read_array(p)
    assert prec == "f64"
    assert b.tobytes() == a.tobytes()


def test_roundtrip_empty_rows(tmp_path):
    a = np.zeros((0, 7), dtype=np.float32)
    p = tmp_path / "a.npy"
    write_array(p, a, "f32")
    b, prec = read_array(p)
    assert b.shape == (0, 7) and prec == "f32"
    assert np.load(p).shape == (0, 7)


def test_paper_scale_f32_file(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.normal(size=(100, 1024)).astype(np.float32)
    p = tmp_path / "frames.npy"
    write_array(p, a, "f32")
    b, prec = read_array(p)
    assert b.shape == (100, 1024) and prec == "f32"
    assert b.tobytes() == a.tobytes()


def test_write_matches_numpy_save_bytes(tmp_path):
    # same header conventions as the reference writer -> identical files
    rng = np.random.default_rng(1)
    for shape in [(5,), (3, 4), (1, 1)]:
        a = rng.normal(size=shape)
        ours = tmp_path / "ours.npy"
        theirs = tmp_path / "theirs.npy"
        write_array(ours, a, "f64")
        np.save(theirs, a)
        assert ours.read_bytes() == theirs.read_bytes()


@settings(max_examples=60, deadline=None)
@given(
    data=st.data(),
    shape=array_shapes(min_dims=1, max_dims=2, min_side=0, max_side=8),
    precision=st.sampled_from(["f32", "f64"]),
)
def test_roundtrip_is_bit_exact(tmp_path_factory, data, shape, precision):
    dtype = np.float32 if precision == "f32" else np.float64
    a = data.draw(arrays(
        dtype=dtype,
        shape=shape,
        elements=st.floats(
            allow_nan=False, allow_infinity=False,
            width=32 if precision == "f32" else 64,
        ),
    ))
    p = tmp_path_factory.mktemp("npy") / "x.npy"
    write_array(p, a, precision)
    b, prec = read_array(p)
    assert prec == precision
    assert b.dtype == dtype and b.shape == a.shape
    assert b.tobytes() == a.tobytes()
    # cross-check against the reference reader and writer
    c = np.load(p)
    assert c.tobytes() == a.tobytes()
    q = p.with_name("y.npy")
    np.save(q, a)
    d, _ = read_array(q)
    assert d.tobytes() == a.tobytes()


# ---------------------------------------------------------------------------
# malformed arrays
# ---------------------------------------------------------------------------

def test_rejects_truncated_header(tmp_path):
    p = tmp_path / "t.npy"
    write_array(p, np.zeros((2, 2)), "f64")
    p.write_bytes(p.read_bytes()[:8])
    with pytest.raises(MalformedHeader):
        read_array(p)


def test_rejects_truncated_data(tmp_path):
    p = tmp_path / "t.npy"
    write_array(p, np.ones((4, 4)), "f64")
    raw = p.read_bytes()
    p.write_bytes(raw[:len(raw) - 16])
    with pytest.raises(MalformedHeader):
        read_array(p)


def test_rejects_trailing_bytes(tmp_path):
    p = tmp_path / "t.npy"
    write_array(p, np.ones(3), "f32")
    p.write_bytes(p.read_bytes() + b"\x00")
    with pytest.raises(MalformedHeader):
        read_array(p)


def test_rejects_bad_magic(tmp_path):
    p = tmp_path / "t.npy"
    p.write_bytes(b"NOTNPY\x01\x00" + b"\x00" * 64)
    with pytest.raises(MalformedHeader):
        read_array(p)


def test_rejects_integer_dtype(tmp_path):
    p = tmp_path / "t.npy"
    np.save(p, np.arange(6, dtype="<i8").reshape(2, 3))
    with pytest.raises(UnsupportedDtype):
        read_array(p)


def test_rejects_fortran_order(tmp_path):
    p = tmp_path / "t.npy"
    np.save(p, np.asfortranarray(np.ones((3, 2))))
    with pytest.raises(MalformedHeader):
        read_array(p)


def test_rejects_rank3(tmp_path):
    p = tmp_path / "t.npy"
    np.save(p, np.zeros((2, 2, 2)))
    with pytest.raises(ShapeRankError):
        read_array(p)


def test_rejects_npy_version_2(tmp_path):
    p = tmp_path / "t.npy"
    with open(p, "wb") as f:
        np.lib.format.write_array(f, np.ones((2, 2)), version=(2, 0))
    with pytest.raises(MalformedHeader):
        read_array(p)


def test_write_rejects_rank3_and_nonfinite(tmp_path):
    with pytest.raises(UnsupportedShape):
        write_array(tmp_path / "x.npy", np.zeros((2, 2, 2)), "f64")
    with pytest.raises(NonFinite):
        write_array(tmp_path / "x.npy", np.array([1.0, np.nan]), "f64")


def test_read_missing_file_is_io_error(tmp_path):
    with pytest.raises(IoError):
        read_array(tmp_path / "nope.npy")


def test_header_only_read(tmp_path):
    p = tmp_path / "x.npy"
    write_array(p, np.zeros((7, 3), dtype=np.float32), "f32")
    shape, prec = read_array_header(p)
    assert shape == (7, 3) and prec == "f32"


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def _entry(i, **kw):
    base = dict(
        utt_id=f"u{i}", speaker_id=f"s{i % 3}",
        feature_path=f"features/u{i}.npy",
        embedding_path=f"embeddings/u{i}.npy",
        n_frames=10, q_dim=4, v_dim=3,
    )
    base.update(kw)
    return ManifestEntry(**base)


def test_manifest_roundtrip_preserves_order(tmp_path):
    entries = [_entry(2), _entry(0), _entry(1)]
    p = tmp_path / "manifest.jsonl"
    save_manifest(entries, p)
    loaded = load_manifest(p)
    assert loaded == entries


def test_manifest_duplicate_utt_id(tmp_path):
    p = tmp_path / "m.jsonl"
    save_manifest([_entry(0), _entry(0)], p)
    with pytest.raises(DuplicateUttId) as exc:
        load_manifest(p)
    assert "u0" in str(exc.value) and "line 2" in str(exc.value)


def test_manifest_missing_field(tmp_path):
    p = tmp_path / "m.jsonl"
    obj = {"utt_id": "u0", "speaker_id": "s0"}
    p.write_text(json.dumps(obj) + "\n")
    with pytest.raises(MissingField) as exc:
        load_manifest(p)
    assert "line 1" in str(exc.value)


def test_manifest_bad_json_reports_line(tmp_path):
    p = tmp_path / "m.jsonl"
    save_manifest([_entry(0)], p)
    with open(p, "a") as f:
        f.write("{not json\n")
    with pytest.raises(BadJson) as exc:
        load_manifest(p)
    assert "line 2" in str(exc.value)


def test_manifest_unexpected_field(tmp_path):
    p = tmp_path / "m.jsonl"
    obj = dict(
        utt_id="u0", speaker_id="s0", feature_path="f.npy",
        embedding_path="e.npy", n_frames=1, q_dim=1, v_dim=1, extra=2,
    )
    p.write_text(json.dumps(obj) + "\n")
    with pytest.raises(BadJson):
        load_manifest(p)


def test_manifest_strict_detects_shape_lies(tmp_path):
    write_array(tmp_path / "f.npy", np.zeros((5, 4)), "f32")
    write_array(tmp_path / "e.npy", np.zeros(3), "f32")
    entry = ManifestEntry(
        utt_id="u0", speaker_id="s0", feature_path="f.npy",
        embedding_path="e.npy", n_frames=6, q_dim=4, v_dim=3,
    )
    p = tmp_path / "m.jsonl"
    save_manifest([entry], p)
    with pytest.raises(ShapeMismatch):
        load_manifest(p, strict=True)
    good = ManifestEntry(
        utt_id="u0", speaker_id="s0", feature_path="f.npy",
        embedding_path="e.npy", n_frames=5, q_dim=4, v_dim=3,
    )
    save_manifest([good], p)
    assert load_manifest(p, strict=True) == [good]


@settings(max_examples=40, deadline=None)
@given(
    ids=st.lists(
        st.text(st.characters(codec="utf-8", exclude_characters="\x00"),
                min_size=1, max_size=20),
        min_size=1, max_size=6, unique=True,
    ),
    n_frames=st.integers(min_value=1, max_value=10**6),
)
def test_manifest_roundtrip_arbitrary_ids(tmp_path_factory, ids, n_frames):
    entries = [
        ManifestEntry(
            utt_id=u, speaker_id=f"s{i}", feature_path=f"f{i}.npy",
            embedding_path=f"e{i}.npy", n_frames=n_frames, q_dim=4, v_dim=2,
        )
        for i, u in enumerate(ids)
    ]
    p = tmp_path_factory.mktemp("m") / "m.jsonl"
    save_manifest(entries, p)
    assert load_manifest(p) == entries


def test_fingerprint_is_order_independent_and_content_sensitive():
    a = [_entry(0), _entry(1)]
    b = [_entry(1), _entry(0)]
    assert dataset_fingerprint(a) == dataset_fingerprint(b)
    c = [_entry(0), _entry(1, n_frames=11)]
    assert dataset_fingerprint(a) != dataset_fingerprint(c)


# ---------------------------------------------------------------------------
# bundles
# ---------------------------------------------------------------------------

def _bundle(rng, p=4, q=6, v=5):
    pca = make_pca(rng, v=v, p=p)
    latent = make_latent(rng, p=p, q=q)
    meta = BundleMeta(
        q_dim=q, v_dim=v, p_dim=p, l_subsample=100, rng_seed=0,
        solver="svd", dataset_fingerprint="abc", n_frames_used=1000,
        created_at=None,
    )
    return ModelBundle(pca=pca, latent=latent, meta=meta)


def test_bundle_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(40)
    bundle = _bundle(rng)
    save_bundle(bundle, tmp_path / "b")
    loaded = load_bundle(tmp_path / "b")
    assert loaded.pca.mean.tobytes() == bundle.pca.mean.tobytes()
    assert loaded.pca.components.tobytes() == bundle.pca.components.tobytes()
    assert (loaded.pca.explained_variance.tobytes()
            == bundle.pca.explained_variance.tobytes())
    assert loaded.latent.basis.tobytes() == bundle.latent.basis.tobytes()
    assert loaded.latent.bias.tobytes() == bundle.latent.bias.tobytes()
    assert loaded.meta == bundle.meta


def test_bundle_paper_dims(tmp_path):
    rng = np.random.default_rng(41)
    bundle = _bundle(rng, p=128, q=1024, v=192)
    save_bundle(bundle, tmp_path / "b")
    loaded = load_bundle(tmp_path / "b")
    assert loaded.meta.p_dim == 128
    assert loaded.latent.basis.shape == (128, 1024)
    assert loaded.pca.components.shape == (128, 192)


def test_bundle_shape_mismatch_rejected(tmp_path):
    rng = np.random.default_rng(42)
    bundle = _bundle(rng)
    save_bundle(bundle, tmp_path / "b")
    meta = json.loads((tmp_path / "b" / "meta.json").read_text())
    meta["p_dim"] = 128
    (tmp_path / "b" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ShapeMismatch):
        load_bundle(tmp_path / "b")


def test_bundle_schema_version_rejected(tmp_path):
    rng = np.random.default_rng(43)
    save_bundle(_bundle(rng), tmp_path / "b")
    meta = json.loads((tmp_path / "b" / "meta.json").read_text())
    meta["schema_version"] = 99
    (tmp_path / "b" / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(SchemaVersionMismatch):
        load_bundle(tmp_path / "b")


def test_bundle_meta_consistency_enforced_at_build():
    rng = np.random.default_rng(44)
    pca = make_pca(rng, v=5, p=4)
    latent = make_latent(rng, p=3, q=6)  # p disagrees with pca
    meta = BundleMeta(
        q_dim=6, v_dim=5, p_dim=4, l_subsample=100, rng_seed=0,
        solver="svd", dataset_fingerprint="abc", n_frames_used=1000,
    )
    with pytest.raises(ShapeMismatch):
        ModelBundle(pca=pca, latent=latent, meta=meta)
