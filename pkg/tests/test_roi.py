import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtbi_dmri.core import ALL_METRICS, CONTROL, MTBI, EmptyRegion, Metric, Region
from mtbi_dmri.ingest import Dataset, MetricVolume, RoiMask
from mtbi_dmri.roi import RoiConfig, build_mean_feature_table, mean_in_roi


def _mask(shape, boxes):
    m = np.zeros(shape, dtype=int)
    for label, sl in boxes.items():
        m[sl] = label
    return RoiMask(m)


def test_constant_volume_mean():
    mask = _mask((6, 6, 3), {3: np.s_[1:4, 1:4, :]})
    vol = MetricVolume(np.full((6, 6, 3), 0.5), Metric.AWF)
    assert mean_in_roi(vol, mask, Region.CCBody) == 0.5


def test_two_voxel_region():
    data = np.zeros((3, 3, 1))
    data[0, 0, 0], data[2, 1, 0] = 0.2, 0.4
    m = np.zeros((3, 3, 1), int)
    m[0, 0, 0] = m[2, 1, 0] = 1
    assert mean_in_roi(MetricVolume(data, Metric.FA), RoiMask(m), Region.Thalamus) == pytest.approx(0.3, rel=1e-15)


def test_ten_voxel_region_against_summation(rng):
    data = rng.uniform(0, 2, (5, 5, 5))
    m = np.zeros((5, 5, 5), int)
    coords = [(0, 0, 0), (1, 2, 3), (4, 4, 4), (2, 2, 2), (3, 1, 0), (0, 4, 1), (1, 1, 1), (2, 0, 4), (4, 0, 2), (3, 3, 3)]
    for c in coords:
        m[c] = 2
    expected = sum(float(data[c]) for c in coords) / len(coords)
    got = mean_in_roi(MetricVolume(data, Metric.MD), RoiMask(m), Region.PrefrontalWM)
    assert got == pytest.approx(expected, rel=1e-12)


def test_excluded_voxels_are_skipped():
    data = np.array([0.2, np.nan, 0.4]).reshape(3, 1, 1)
    m = np.ones((3, 1, 1), int)
    assert mean_in_roi(MetricVolume(data, Metric.FA), RoiMask(m), Region.Thalamus) == pytest.approx(0.3)


def test_empty_region_raises():
    m = np.zeros((2, 2, 2), int)
    m[0, 0, 0] = 1
    with pytest.raises(EmptyRegion):
        mean_in_roi(MetricVolume(np.zeros((2, 2, 2)), Metric.FA), RoiMask(m), Region.CCBody)
    data = np.zeros((2, 2, 2))
    data[0, 0, 0] = np.nan
    with pytest.raises(EmptyRegion):
        mean_in_roi(MetricVolume(data, Metric.FA), RoiMask(m), Region.Thalamus)


@settings(max_examples=50, deadline=None)
@given(st.floats(-10, 10).filter(lambda a: abs(a) > 1e-3), st.floats(-10, 10), st.integers(0, 2**32))
def test_affine_equivariance(alpha, beta, seed):
    rng = np.random.default_rng(seed)
    data = rng.uniform(0, 1, (4, 4, 4))
    mask = _mask((4, 4, 4), {1: np.s_[0:3, 1:4, 0:2]})
    base = mean_in_roi(MetricVolume(data, Metric.FA), mask, Region.Thalamus)
    moved = mean_in_roi(MetricVolume(alpha * data + beta, Metric.FA), mask, Region.Thalamus)
    assert moved == pytest.approx(alpha * base + beta, rel=1e-12, abs=1e-12)


def test_corpus_callosum_is_weighted_mean_of_parts(rng):
    data = rng.uniform(0, 1, (8, 8, 2))
    mask = _mask((8, 8, 2), {3: np.s_[0:2, :, :], 4: np.s_[2:5, 0:3, :], 5: np.s_[5:8, 5:8, 1]})
    vol = MetricVolume(data, Metric.DA)
    parts = [Region.CCBody, Region.CCGenu, Region.CCSplenium]
    counts = [mask.region_mask(p).sum() for p in parts]
    weighted = sum(c * mean_in_roi(vol, mask, p) for c, p in zip(counts, parts)) / sum(counts)
    assert mean_in_roi(vol, mask, Region.CorpusCallosum) == pytest.approx(weighted, rel=1e-12)


def _two_subject(make_dataset):
    shape = (4, 4, 5)
    m = np.zeros(shape, int)
    for i in range(5):
        m[:, :, i] = i + 1  # one slice per atomic region
    entries = []
    for s, (sid, lab) in enumerate([("a", MTBI), ("b", CONTROL)]):
        vols = {}
        for k, metric in enumerate(ALL_METRICS):
            # value depends on (subject, metric, slice); one half-slice raised by 0.25
            v = np.zeros(shape)
            for z in range(5):
                v[:, :, z] = 0.1 * k + 0.01 * z + 0.5 * s
            v[:2, :, (k + s) % 5] += 0.25
            vols[metric] = v
        clin = {"age": 30.0 + s, "sex": "MF"[s], "stroop": 1.0, "sdmt": np.nan, "cvlt": 3.0, "fss": 4.0}
        entries.append((sid, lab, vols, m, clin))
    return make_dataset(entries), entries


def test_full_table_has_41_columns_and_exact_values(make_dataset):
    ds, entries = _two_subject(make_dataset)
    fm = build_mean_feature_table(ds)
    assert fm.shape == (2, 41)
    for row, (sid, lab, vols, m, clin) in zip(fm.values, entries):
        expected = []
        for metric in ALL_METRICS:
            v = vols[metric].astype(np.float32).astype(float)
            for z in range(5):
                expected.append(sum(v[x, y, z] for x in range(4) for y in range(4)) / 16)
        expected += [clin["age"], {"M": 0.0, "F": 1.0}[clin["sex"]], 1.0, np.nan, 3.0, 4.0]
        np.testing.assert_allclose(row, expected, rtol=1e-12)
    assert np.isnan(fm.values[:, 38]).all()


def test_restricted_config_single_column(make_dataset):
    ds, _ = _two_subject(make_dataset)
    fm = build_mean_feature_table(ds, RoiConfig(metrics=[Metric.AWF], regions=[Region.CCBody], clinical=()))
    assert fm.shape == (2, 1)
    assert str(fm.feature_names[0]) == "roi-mean:AWF:CCBody"


def test_permutation_equivariance(make_dataset):
    ds, _ = _two_subject(make_dataset)
    fm = build_mean_feature_table(ds)
    rev = Dataset(type(ds.manifest)(tuple(reversed(ds.manifest.subjects)), 1, ds.manifest.root))
    fr = build_mean_feature_table(rev)
    assert fr.subject_ids == fm.subject_ids[::-1]
    assert np.array_equal(fr.values, fm.values[::-1], equal_nan=True)
