import csv

import numpy as np
import pytest
import scipy.special
import scipy.stats

from etakit.core import FrameMatrix
from etakit.datastore import read_array
from etakit.errors import ClassTooSmall, SingleClass, TooFewSamples, ZeroVariance
from etakit.probe import (
    PairedTestResult,
    ProbeDataset,
    aggregate_folds,
    export_projection,
    paired_t_test,
    pool_utterance,
    predict,
    predict_batch,
    regularized_incomplete_beta,
    run_probe,
    stratified_folds,
    student_t_two_tailed,
    train_linear_probe,
)

WAVLM_FOLDS_PCT = [83.46, 82.33, 80.85, 83.30, 81.55]
ETA_FOLDS_PCT = [53.82, 55.14, 58.77, 53.94, 56.96]


# ---------------------------------------------------------------------------
# pooling
# ---------------------------------------------------------------------------

def test_pool_single_frame_is_identity():
    fm = FrameMatrix(np.array([[1.0, 2.0, 3.0]]), "u")
    assert np.array_equal(pool_utterance(fm), [1.0, 2.0, 3.0])


def test_pool_two_frames():
    fm = FrameMatrix(np.array([[0.0, 0.0], [2.0, 2.0]]), "u")
    assert np.array_equal(pool_utterance(fm), [1.0, 1.0])


def test_pool_matches_column_mean_oracle():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(13, 7))
    got = pool_utterance(FrameMatrix(data, "u"))
    ref = np.array([float(np.mean(data[:, j])) for j in range(7)])
    assert np.allclose(got, ref, atol=1e-12)


# ---------------------------------------------------------------------------
# folds
# ---------------------------------------------------------------------------

def _dataset(rng, spec: dict, q=6):
    rows = []
    for spk, n in spec.items():
        for i in range(n):
            rows.append((f"{spk}-{i:04d}", spk, rng.normal(size=q)))
    return ProbeDataset(rows=tuple(rows))


def test_folds_balanced_ten_by_ten():
    rng = np.random.default_rng(1)
    ds = _dataset(rng, {f"s{i}": 10 for i in range(10)})
    folds = stratified_folds(ds, 5, seed=0)
    speakers = np.asarray(ds.speakers)
    all_idx = np.concatenate(folds)
    assert sorted(all_idx.tolist()) == list(range(100))
    for fold in folds:
        assert fold.size == 20
        counts = {s: int((speakers[fold] == s).sum()) for s in set(ds.speakers)}
        assert all(c == 2 for c in counts.values())


def test_folds_deterministic():
    rng = np.random.default_rng(2)
    ds = _dataset(rng, {f"s{i}": 8 for i in range(4)})
    a = stratified_folds(ds, 4, seed=5)
    b = stratified_folds(ds, 4, seed=5)
    c = stratified_folds(ds, 4, seed=6)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))


def test_folds_paper_population_sizes():
    # 10 speakers, 1285 utterances total, 5 folds -> 257 rows per fold
    rng = np.random.default_rng(3)
    spec = {f"s{i}": (129 if i < 5 else 128) for i in range(10)}
    assert sum(spec.values()) == 1285
    ds = _dataset(rng, spec, q=3)
    folds = stratified_folds(ds, 5, seed=0)
    assert [f.size for f in folds] == [257] * 5
    speakers = np.asarray(ds.speakers)
    for fold in folds:
        for s, n in spec.items():
            got = int((speakers[fold] == s).sum())
            assert abs(got - n / 5) <= 1


def test_folds_class_too_small():
    rng = np.random.default_rng(4)
    ds = _dataset(rng, {"a": 3, "b": 8})
    with pytest.raises(ClassTooSmall):
        stratified_folds(ds, 5, seed=0)


def test_dataset_needs_two_classes():
    rng = np.random.default_rng(5)
    with pytest.raises(SingleClass):
        ProbeDataset(rows=(("u0", "a", rng.normal(size=3)),
                           ("u1", "a", rng.normal(size=3))))


# ---------------------------------------------------------------------------
# linear probe
# ---------------------------------------------------------------------------

def _toy_two_class(rng, n_per=40, sigma=0.1):
    rows = []
    for i in range(n_per):
        rows.append((f"a{i}", "a", rng.normal(size=2) * sigma + np.array([5.0, 0.0])))
        rows.append((f"b{i}", "b", rng.normal(size=2) * sigma + np.array([-5.0, 0.0])))
    return rows


def test_probe_separable_toy_is_perfect():
    rng = np.random.default_rng(6)
    rows = _toy_two_class(rng)
    train, test = rows[:60], rows[60:]
    probe = train_linear_probe(train)
    correct = sum(predict(probe, v) == s for _, s, v in test)
    assert correct == len(test)


def test_probe_shuffled_labels_near_chance():
    # binomial oracle: pooled over shuffles, accuracy within 3 sigma of 1/2
    rng = np.random.default_rng(7)
    correct = 0
    total = 0
    for _ in range(5):
        rows = _toy_two_class(rng, n_per=100)
        labels = [s for _, s, _ in rows]
        shuffled = list(labels)
        rng.shuffle(shuffled)
        rows = [(u, sl, v) for (u, _, v), sl in zip(rows, shuffled)]
        train, test = rows[:150], rows[150:]
        probe = train_linear_probe(train)
        correct += sum(predict(probe, v) == s for _, s, v in test)
        total += len(test)
    acc = correct / total
    assert abs(acc - 0.5) <= 3.0 * np.sqrt(0.25 / total) + 0.02


def test_probe_ten_class_linear_signal():
    # class signal enters features linearly -> high accuracy expected
    rng = np.random.default_rng(8)
    centers = rng.normal(size=(10, 12)) * 3.0
    rows = []
    for c in range(10):
        for i in range(30):
            rows.append((f"c{c}-{i}", f"s{c}", centers[c] + rng.normal(size=12)))
    ds = ProbeDataset(rows=tuple(rows))
    report = run_probe(ds, k=5, seed=0)
    assert report.mean >= 0.95


def test_probe_single_class_error():
    rng = np.random.default_rng(9)
    with pytest.raises(SingleClass):
        train_linear_probe([("u0", "a", rng.normal(size=2)),
                            ("u1", "a", rng.normal(size=2))])


def test_probe_deterministic():
    rng = np.random.default_rng(10)
    rows = _toy_two_class(rng)
    p1 = train_linear_probe(rows)
    p2 = train_linear_probe(rows)
    assert np.array_equal(p1.weights, p2.weights)


def test_run_probe_deterministic():
    rng = np.random.default_rng(11)
    ds = _dataset(rng, {f"s{i}": 12 for i in range(4)}, q=5)
    r1 = run_probe(ds, k=4, seed=3)
    r2 = run_probe(ds, k=4, seed=3)
    assert r1 == r2


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

def test_aggregate_reproduces_published_fold_means():
    rep_a = aggregate_folds([v / 100.0 for v in WAVLM_FOLDS_PCT])
    rep_b = aggregate_folds([v / 100.0 for v in ETA_FOLDS_PCT])
    assert rep_a.mean * 100 == pytest.approx(82.30, abs=0.005)
    assert rep_b.mean * 100 == pytest.approx(55.73, abs=0.005)


def test_aggregate_identical_folds_zero_std():
    rep = aggregate_folds([0.5, 0.5, 0.5, 0.5])
    assert rep.std == 0.0


def test_report_validates_consistency():
    from etakit.probe import ProbeReport
    with pytest.raises(ValueError):
        ProbeReport(fold_accuracies=(0.5, 0.6), mean=0.9, std=0.0, k=2, seed=0)
    with pytest.raises(ValueError):
        ProbeReport(fold_accuracies=(0.5, 1.5), mean=1.0, std=0.7, k=2, seed=0)


# ---------------------------------------------------------------------------
# t statistics
# ---------------------------------------------------------------------------

def test_incomplete_beta_matches_scipy_to_1e10():
    for a in [0.5, 1.0, 2.0, 5.0, 17.5]:
        for b in [0.5, 1.5, 3.0, 8.0]:
            for x in [0.0, 1e-6, 0.1, 0.4, 0.5, 0.9, 1.0 - 1e-6, 1.0]:
                ours = regularized_incomplete_beta(a, b, x)
                ref = float(scipy.special.betainc(a, b, x))
                assert abs(ours - ref) <= 1e-10, (a, b, x)


def test_t_tail_matches_scipy():
    for dof in [1, 2, 4, 10, 30]:
        for t in [0.0, 0.5, 2.0, 5.0, 18.41]:
            ours = student_t_two_tailed(t, dof)
            ref = float(2.0 * scipy.stats.t.sf(abs(t), dof))
            assert ours == pytest.approx(ref, rel=1e-9, abs=1e-14)


def test_paired_t_test_reproduces_published_statistics():
    res = paired_t_test(WAVLM_FOLDS_PCT, ETA_FOLDS_PCT)
    assert res.t_statistic == pytest.approx(18.41, abs=0.01)
    assert res.p_value == pytest.approx(5.12e-5, rel=0.05)
    assert res.dof == 4
    # scale invariance: same result in fractions
    res_frac = paired_t_test(
        [v / 100 for v in WAVLM_FOLDS_PCT], [v / 100 for v in ETA_FOLDS_PCT]
    )
    assert res_frac.t_statistic == pytest.approx(res.t_statistic, rel=1e-12)


def test_paired_t_test_matches_scipy_cross_check():
    rng = np.random.default_rng(12)
    for _ in range(20):
        k = int(rng.integers(3, 12))
        a = rng.normal(size=k)
        b = a + rng.normal(size=k) * 0.5 + 0.2
        ours = paired_t_test(a, b)
        ref = scipy.stats.ttest_rel(a, b)
        assert ours.t_statistic == pytest.approx(float(ref.statistic), rel=1e-10)
        assert ours.p_value == pytest.approx(float(ref.pvalue), rel=1e-8)


def test_paired_t_test_constant_difference_degenerate():
    # dyadic values so a + 1.0 is exact and the differences are identical
    a = np.array([0.5, 0.25, 0.75, 0.125, 0.375])
    with pytest.raises(ZeroVariance):
        paired_t_test(a + 1.0, a)


def test_paired_t_test_antisymmetric():
    res_ab = paired_t_test(WAVLM_FOLDS_PCT, ETA_FOLDS_PCT)
    res_ba = paired_t_test(ETA_FOLDS_PCT, WAVLM_FOLDS_PCT)
    assert res_ba.t_statistic == pytest.approx(-res_ab.t_statistic, rel=1e-12)
    assert res_ba.p_value == pytest.approx(res_ab.p_value, rel=1e-12)


def test_paired_t_test_sign_matches_mean_difference():
    rng = np.random.default_rng(13)
    a = rng.normal(size=8)
    res = paired_t_test(a + 1.0 + 0.1 * rng.normal(size=8), a)
    assert res.t_statistic > 0


def test_paired_t_test_shape_errors():
    with pytest.raises(TooFewSamples):
        paired_t_test([1.0], [2.0])


# ---------------------------------------------------------------------------
# projection export
# ---------------------------------------------------------------------------

def test_pca2d_collinear_points_have_zero_y(tmp_path):
    direction = np.ones(8)
    rows = tuple(
        (f"u{i}", f"s{i % 2}", float(i) * direction) for i in range(6)
    )
    ds = ProbeDataset(rows=rows)
    out = tmp_path / "proj.csv"
    export_projection(ds, "pca2d", out)
    with open(out) as f:
        reader = csv.DictReader(f)
        rows_read = list(reader)
    assert len(rows_read) == 6
    assert set(reader.fieldnames) == {"utt_id", "speaker_id", "x", "y"}
    assert all(abs(float(r["y"])) <= 1e-8 for r in rows_read)


def test_raw_dump_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(14)
    rows = tuple((f"u{i}", f"s{i % 3}", rng.normal(size=5)) for i in range(9))
    ds = ProbeDataset(rows=rows)
    export_projection(ds, "raw_dump", tmp_path / "dump")
    vec, _ = read_array(tmp_path / "dump" / "vectors.npy")
    assert vec.tobytes() == ds.matrix().tobytes()
    with open(tmp_path / "dump" / "labels.csv") as f:
        labels = list(csv.DictReader(f))
    assert [(r["utt_id"], r["speaker_id"]) for r in labels] == \
        [(u, s) for u, s, _ in rows]


def test_projection_figure_scale_export(tmp_path):
    # 5 speakers x 10 utterances, the figure-sized export
    rng = np.random.default_rng(15)
    rows = tuple(
        (f"s{c}-u{i}", f"s{c}", rng.normal(size=16))
        for c in range(5) for i in range(10)
    )
    ds = ProbeDataset(rows=rows)
    out = tmp_path / "fig.csv"
    export_projection(ds, "pca2d", out)
    assert sum(1 for _ in open(out)) == 51  # header + 50 rows
