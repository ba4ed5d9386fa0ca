import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from mtbi_dmri.core import CONTROL, MTBI, Metric, Region
from mtbi_dmri.ingest import (
    BadLabel,
    DimMismatchWithDeclared,
    DuplicateSubject,
    IoFailure,
    MalformedHeader,
    MetricVolume,
    RoiMask,
    UnknownMetricKey,
    read_manifest,
    read_mask,
    read_volume,
    validate_dataset,
    write_mask,
    write_volume,
)


def test_constant_volume(tmp_path):
    write_volume(tmp_path / "v.vol", MetricVolume(np.full((4, 4, 4), 0.5), Metric.FA, "s1"))
    v = read_volume(tmp_path / "v.vol", Metric.FA)
    assert v.dims == (4, 4, 4)
    assert v.data.size == 64 and np.all(v.data == 0.5)
    assert not v.excluded.any()
    assert v.subject_id == "s1"


def test_short_payload_is_rejected(tmp_path):
    header = {"dims": [4, 4, 4], "format": "mtbi-vol/1", "kind": "metric", "metric": "FA",
              "subject_id": "s", "voxel_size_mm": [1, 1, 1]}
    with open(tmp_path / "bad.vol", "wb") as fh:
        fh.write(json.dumps(header).encode() + b"\n")
        fh.write(np.zeros(63, dtype="<f4").tobytes())
    with pytest.raises(DimMismatchWithDeclared):
        read_volume(tmp_path / "bad.vol")


def test_nan_voxel_goes_to_exclusion_mask(tmp_path):
    data = np.full((4, 4, 4), 0.25)
    data[1, 2, 3] = np.nan
    write_volume(tmp_path / "v.vol", MetricVolume(data, Metric.MD))
    v = read_volume(tmp_path / "v.vol")
    assert int(v.excluded.sum()) == 1
    assert v.excluded[1, 2, 3]
    assert np.all(np.isfinite(v.data))


def test_payload_is_x_fastest(tmp_path):
    data = np.arange(24, dtype=float).reshape((2, 3, 4), order="F")
    write_volume(tmp_path / "v.vol", MetricVolume(data, Metric.MD))
    raw = (tmp_path / "v.vol").read_bytes().split(b"\n", 1)[1]
    assert np.array_equal(np.frombuffer(raw, "<f4"), np.arange(24, dtype=np.float32))
    assert data[1, 0, 0] == 1.0  # x advances first


@pytest.mark.parametrize(
    "content",
    [b"not json\n", b'{"format": "other"}\n', b'{"format":"mtbi-vol/1","kind":"metric","dims":[4,4]}\n', b"{}"],
)
def test_malformed_headers(tmp_path, content):
    (tmp_path / "m.vol").write_bytes(content)
    with pytest.raises(MalformedHeader):
        read_volume(tmp_path / "m.vol")


def test_missing_file(tmp_path):
    with pytest.raises(IoFailure):
        read_volume(tmp_path / "nope.vol")


def test_wrong_metric_rejected(tmp_path):
    write_volume(tmp_path / "v.vol", MetricVolume(np.zeros((2, 2, 2)), Metric.FA))
    with pytest.raises(MalformedHeader):
        read_volume(tmp_path / "v.vol", Metric.MD)


@settings(max_examples=40, deadline=None)
@given(
    hnp.arrays(np.float32, hnp.array_shapes(min_dims=3, max_dims=3, max_side=5),
               elements=st.floats(-1e6, 1e6, width=32)),
    st.tuples(*[st.floats(0.1, 5.0)] * 3),
)
def test_volume_round_trip_is_bit_exact(tmp_path_factory, data, vs):
    p = tmp_path_factory.mktemp("rt") / "v.vol"
    write_volume(p, MetricVolume(data.astype(float), Metric.AWF, "x", vs))
    v = read_volume(p)
    assert v.dims == data.shape
    assert v.voxel_size_mm == tuple(float(x) for x in vs)
    assert v.data.astype(np.float32).tobytes() == data.tobytes()


def test_mask_round_trip(tmp_path):
    m = np.zeros((3, 3, 2), dtype=int)
    m[0, 0, 0] = 3
    m[2, 1, 1] = 1
    write_mask(tmp_path / "m.vol", RoiMask(m, subject_id="s"))
    back = read_mask(tmp_path / "m.vol")
    assert np.array_equal(back.data, m)
    assert back.label_map[Region.Thalamus] == 1
    assert back.region_mask(Region.CorpusCallosum).sum() == 1


def test_mask_rejects_unmapped_labels():
    with pytest.raises(Exception):
        RoiMask(np.full((2, 2, 2), 9))


def _manifest(tmp_path, rows, header="subject_id,label,age,sex,stroop,sdmt,cvlt,fss,mask,FA"):
    p = tmp_path / "m.csv"
    p.write_text("# schema_version: 1\n" + header + "\n" + "\n".join(rows) + "\n")
    return p


def test_read_manifest_two_subjects(tmp_path):
    p = _manifest(tmp_path, ["s1,mtbi,30,M,1,2,3,4,s1_mask.vol,s1_FA.vol",
                             "s2,control,41,F,,2,3,,s2_mask.vol,s2_FA.vol"])
    m = read_manifest(p)
    assert len(m) == 2
    assert [s.label for s in m] == [MTBI, CONTROL]
    assert np.isnan(m.subjects[1].stroop) and np.isnan(m.subjects[1].fss)
    assert m.subjects[1].clinical_value("sex") == 1.0
    assert m.subjects[0].volume_paths[Metric.FA] == str(tmp_path / "s1_FA.vol")


def test_duplicate_subject(tmp_path):
    p = _manifest(tmp_path, ["s1,mtbi,,,,,,,a,b", "s1,control,,,,,,,c,d"])
    with pytest.raises(DuplicateSubject):
        read_manifest(p)


def test_bad_label(tmp_path):
    p = _manifest(tmp_path, ["s1,patient,,,,,,,a,b"])
    with pytest.raises(BadLabel):
        read_manifest(p)


def test_unknown_metric_column(tmp_path):
    p = _manifest(tmp_path, ["s1,mtbi,,,,,,,a,b"], header="subject_id,label,age,sex,stroop,sdmt,cvlt,fss,mask,XYZ")
    with pytest.raises(UnknownMetricKey):
        read_manifest(p)


def test_validate_consistent_dataset(make_dataset):
    vol = {Metric.FA: np.zeros((4, 4, 4))}
    ds = make_dataset([("s1", MTBI, vol, np.ones((4, 4, 4), int)),
                       ("s2", CONTROL, vol, np.ones((4, 4, 4), int))])
    assert validate_dataset(ds.manifest) == []
    assert validate_dataset(ds.manifest) == validate_dataset(ds.manifest)


def test_validate_reports_dim_mismatch(make_dataset):
    ds = make_dataset([("s1", MTBI, {Metric.FA: np.zeros((4, 4, 4))}, np.ones((4, 4, 5), int)),
                       ("s2", CONTROL, {Metric.FA: np.zeros((4, 4, 4))}, np.ones((4, 4, 4), int))])
    report = validate_dataset(ds.manifest)
    assert len(report) == 1
    assert report[0].subject_id == "s1" and report[0].item == "FA"


def test_validate_reports_missing_metric(make_dataset):
    vol = {Metric.FA: np.zeros((4, 4, 4))}
    ds = make_dataset([("s1", MTBI, vol, np.ones((4, 4, 4), int)),
                       ("s2", CONTROL, vol, np.ones((4, 4, 4), int))])
    report = validate_dataset(ds.manifest, metrics=[Metric.FA, Metric.MK])
    assert {(i.subject_id, i.item, i.message) for i in report} == {
        ("s1", "MK", "missing metric"),
        ("s2", "MK", "missing metric"),
    }


def test_validate_flags_single_class(make_dataset):
    vol = {Metric.FA: np.zeros((2, 2, 2))}
    ds = make_dataset([("s1", MTBI, vol, np.ones((2, 2, 2), int)),
                       ("s2", MTBI, vol, np.ones((2, 2, 2), int))])
    assert any(i.item == "dataset" for i in validate_dataset(ds.manifest))
