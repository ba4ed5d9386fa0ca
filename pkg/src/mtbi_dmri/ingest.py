"""Volume, mask and manifest files.

Volume file (``.vol``)
    One line of JSON (UTF-8, sorted keys, no spaces) terminated by ``\\n``,
    followed by ``nx*ny*nz`` little-endian float32 values in x-fastest
    order. Header keys: ``format`` (``"mtbi-vol/1"``), ``kind``
    (``"metric"`` or ``"mask"``), ``dims``, ``voxel_size_mm``,
    ``subject_id``, plus ``metric`` for metric maps or ``labels`` (region
    name -> integer label) for masks. Mask labels are stored as exact
    float32 integers.

Manifest (``.csv``)
    Optional first line ``# schema_version: 1``, then a header row and one
    subject per row. Columns: ``subject_id``, ``label`` (``mtbi`` or
    ``control``), ``age``, ``sex`` (``M``/``F``), ``stroop``, ``sdmt``,
    ``cvlt``, ``fss``, ``mask`` and one column per metric name holding a
    volume path relative to the manifest. Empty cells are missing values.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    ALL_METRICS,
    CONTROL,
    DEFAULT_LABELS,
    MTBI,
    DimMismatch,
    Metric,
    MtbiError,
    Region,
    SubjectRecord,
    parse_metric,
    parse_region,
)

FORMAT_TAG = "mtbi-vol/1"
SCHEMA_VERSION = 1
CLINICAL_COLUMNS = ("age", "sex", "stroop", "sdmt", "cvlt", "fss")
BASE_COLUMNS = ("subject_id", "label") + CLINICAL_COLUMNS + ("mask",)


class MalformedHeader(MtbiError):
    pass


class DimMismatchWithDeclared(MtbiError):
    pass


class IoFailure(MtbiError):
    pass


class DuplicateSubject(MtbiError):
    pass


class UnknownMetricKey(MtbiError):
    pass


class BadLabel(MtbiError):
    pass


@dataclass(frozen=True)
class MetricVolume:
    """A 3-D parametric map indexed ``data[x, y, z]``.

    Voxels that were non-finite on disk are flagged in ``excluded`` and hold
    0.0 in ``data``.
    """

    data: np.ndarray
    metric: Metric
    subject_id: str = ""
    voxel_size_mm: tuple = (1.0, 1.0, 1.0)
    excluded: Optional[np.ndarray] = None

    def __post_init__(self):
        data = np.array(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise DimMismatch("volume data must be 3-D")
        if self.excluded is None:
            excluded = ~np.isfinite(data)
        else:
            excluded = np.asarray(self.excluded, dtype=bool) | ~np.isfinite(data)
        if excluded.shape != data.shape:
            raise DimMismatch("exclusion mask shape differs from data")
        data[excluded] = 0.0
        data.setflags(write=False)
        excluded.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "excluded", excluded)
        object.__setattr__(self, "metric", parse_metric(self.metric))
        object.__setattr__(self, "voxel_size_mm", tuple(float(v) for v in self.voxel_size_mm))

    @property
    def dims(self):
        return self.data.shape


@dataclass(frozen=True)
class RoiMask:
    data: np.ndarray
    label_map: dict = field(default_factory=lambda: dict(DEFAULT_LABELS))
    subject_id: str = ""
    voxel_size_mm: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.array(self.data, dtype=np.int64)
        if data.ndim != 3:
            raise DimMismatch("mask data must be 3-D")
        if data.min(initial=0) < 0:
            raise MtbiError("mask labels must be non-negative")
        label_map = {parse_region(k): int(v) for k, v in self.label_map.items()}
        for r in label_map:
            if r.is_composite:
                raise MtbiError(f"{r} is composite and cannot be a mask label")
        unknown = set(np.unique(data)) - {0} - set(label_map.values())
        if unknown:
            raise MtbiError(f"mask contains labels {sorted(unknown)} not in label map")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "label_map", label_map)
        object.__setattr__(self, "voxel_size_mm", tuple(float(v) for v in self.voxel_size_mm))

    @property
    def dims(self):
        return self.data.shape

    def region_mask(self, region) -> np.ndarray:
        """Boolean voxel mask; the composite corpus callosum is the union of its parts."""
        region = parse_region(region)
        labels = [self.label_map[p] for p in region.parts if p in self.label_map]
        if not labels:
            raise MtbiError(f"region {region} has no label in this mask")
        return np.isin(self.data, labels)


# ---------------------------------------------------------------------------
# volume files
# ---------------------------------------------------------------------------


def _write(path, header: dict, data: np.ndarray) -> None:
    header = {"format": FORMAT_TAG, "dims": list(data.shape), **header}
    line = json.dumps(header, sort_keys=True, separators=(",", ":"))
    payload = np.asarray(data, dtype="<f4").ravel(order="F").tobytes()
    with open(path, "wb") as fh:
        fh.write(line.encode("utf-8") + b"\n")
        fh.write(payload)


def write_volume(path, volume: MetricVolume) -> None:
    data = np.array(volume.data, dtype=np.float64)
    data[volume.excluded] = np.nan
    _write(
        path,
        {
            "kind": "metric",
            "metric": str(volume.metric),
            "subject_id": volume.subject_id,
            "voxel_size_mm": list(volume.voxel_size_mm),
        },
        data,
    )


def write_mask(path, mask: RoiMask) -> None:
    _write(
        path,
        {
            "kind": "mask",
            "labels": {str(r): v for r, v in mask.label_map.items()},
            "subject_id": mask.subject_id,
            "voxel_size_mm": list(mask.voxel_size_mm),
        },
        mask.data,
    )


def read_header(path) -> tuple[dict, int]:
    """Parse the JSON header line; returns the header and the payload offset."""
    try:
        with open(path, "rb") as fh:
            line = fh.readline(1 << 16)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    if not line.endswith(b"\n"):
        raise MalformedHeader(f"{path}: header line not terminated")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"{path}: {exc}") from exc
    if not isinstance(header, dict) or header.get("format") != FORMAT_TAG:
        raise MalformedHeader(f"{path}: not a {FORMAT_TAG} file")
    dims = header.get("dims")
    if (
        not isinstance(dims, list)
        or len(dims) != 3
        or not all(isinstance(d, int) and d > 0 for d in dims)
    ):
        raise MalformedHeader(f"{path}: bad dims {dims!r}")
    vs = header.get("voxel_size_mm", [1.0, 1.0, 1.0])
    if not isinstance(vs, list) or len(vs) != 3 or not all(
        isinstance(v, (int, float)) and v > 0 for v in vs
    ):
        raise MalformedHeader(f"{path}: bad voxel_size_mm {vs!r}")
    if header.get("kind") not in ("metric", "mask"):
        raise MalformedHeader(f"{path}: bad kind {header.get('kind')!r}")
    return header, len(line)


def _read_payload(path, header, offset) -> np.ndarray:
    nx, ny, nz = header["dims"]
    try:
        with open(path, "rb") as fh:
            fh.seek(offset)
            raw = fh.read()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    if len(raw) != 4 * nx * ny * nz:
        raise DimMismatchWithDeclared(
            f"{path}: header declares {nx * ny * nz} voxels, payload holds {len(raw) / 4:g}"
        )
    flat = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    return flat.reshape((nx, ny, nz), order="F")


def read_volume(path, expected=None) -> MetricVolume:
    header, offset = read_header(path)
    if header["kind"] != "metric":
        raise MalformedHeader(f"{path}: expected a metric volume, found {header['kind']}")
    try:
        metric = parse_metric(header.get("metric"))
    except MtbiError as exc:
        raise MalformedHeader(f"{path}: {exc}") from exc
    if expected is not None and metric != parse_metric(expected):
        raise MalformedHeader(f"{path}: holds {metric}, expected {expected}")
    data = _read_payload(path, header, offset)
    return MetricVolume(
        data,
        metric,
        subject_id=str(header.get("subject_id", "")),
        voxel_size_mm=tuple(header.get("voxel_size_mm", (1.0, 1.0, 1.0))),
    )


def read_mask(path) -> RoiMask:
    header, offset = read_header(path)
    if header["kind"] != "mask":
        raise MalformedHeader(f"{path}: expected a mask, found {header['kind']}")
    data = _read_payload(path, header, offset)
    if not np.all(np.isfinite(data)) or np.any(data != np.round(data)):
        raise MalformedHeader(f"{path}: mask labels must be integers")
    labels = header.get("labels")
    if not isinstance(labels, dict):
        raise MalformedHeader(f"{path}: mask header lacks a labels map")
    try:
        return RoiMask(
            data.astype(np.int64),
            labels,
            subject_id=str(header.get("subject_id", "")),
            voxel_size_mm=tuple(header.get("voxel_size_mm", (1.0, 1.0, 1.0))),
        )
    except MtbiError as exc:
        raise MalformedHeader(f"{path}: {exc}") from exc


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetManifest:
    subjects: tuple
    schema_version: int = SCHEMA_VERSION
    root: Optional[Path] = None

    def __len__(self):
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    @property
    def subject_ids(self):
        return [s.subject_id for s in self.subjects]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.subjects], dtype=np.int64)

    def subject(self, subject_id: str) -> SubjectRecord:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(subject_id)


def _parse_label(text: str, sid: str) -> int:
    t = text.strip().lower()
    if t == "mtbi":
        return MTBI
    if t == "control":
        return CONTROL
    raise BadLabel(f"subject {sid}: label {text!r} is not 'mtbi' or 'control'")


def _parse_float(text: str, sid: str, col: str) -> float:
    if text.strip() == "":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise MtbiError(f"subject {sid}: column {col} value {text!r} is not a number") from None


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    root = path.parent
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    version = SCHEMA_VERSION
    if lines and lines[0].startswith("#"):
        key, _, val = lines[0].lstrip("#").partition(":")
        if key.strip() != "schema_version":
            raise MtbiError(f"{path}: unrecognized directive {lines[0]!r}")
        version = int(val)
        lines = lines[1:]
    if version != SCHEMA_VERSION:
        raise MtbiError(f"{path}: unsupported schema_version {version}")
    reader = csv.DictReader(lines)
    cols = reader.fieldnames or []
    for required in ("subject_id", "label", "mask"):
        if required not in cols:
            raise MtbiError(f"{path}: missing column {required!r}")
    metric_cols = []
    for c in cols:
        if c in BASE_COLUMNS:
            continue
        try:
            metric_cols.append((c, Metric(c)))
        except ValueError:
            raise UnknownMetricKey(f"{path}: unknown column {c!r}") from None

    subjects, seen = [], set()
    for row in reader:
        sid = row["subject_id"].strip()
        if not sid:
            raise MtbiError(f"{path}: empty subject_id")
        if sid in seen:
            raise DuplicateSubject(f"{path}: subject {sid!r} appears more than once")
        seen.add(sid)
        sex = (row.get("sex") or "").strip().upper() or None
        if sex not in (None, "M", "F"):
            raise MtbiError(f"subject {sid}: sex {sex!r} is not M or F")
        vols = {
            m: str(root / row[c].strip()) for c, m in metric_cols if (row[c] or "").strip()
        }
        subjects.append(
            SubjectRecord(
                subject_id=sid,
                label=_parse_label(row["label"], sid),
                age=_parse_float(row.get("age") or "", sid, "age"),
                sex=sex,
                stroop=_parse_float(row.get("stroop") or "", sid, "stroop"),
                sdmt=_parse_float(row.get("sdmt") or "", sid, "sdmt"),
                cvlt=_parse_float(row.get("cvlt") or "", sid, "cvlt"),
                fss=_parse_float(row.get("fss") or "", sid, "fss"),
                volume_paths=vols,
                mask_path=str(root / row["mask"].strip()) if row["mask"].strip() else None,
            )
        )
    return DatasetManifest(tuple(subjects), version, root)


def _fmt(v: float) -> str:
    return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def write_manifest(path, subjects, metrics=ALL_METRICS) -> None:
    """Write subjects to ``path``; volume paths are made relative to its directory."""
    path = Path(path)
    root = path.parent
    metrics = [parse_metric(m) for m in metrics]

    def rel(p):
        return "" if p is None else os.path.relpath(p, root).replace(os.sep, "/")

    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# schema_version: {SCHEMA_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(BASE_COLUMNS) + [str(m) for m in metrics])
        for s in subjects:
            w.writerow(
                [
                    s.subject_id,
                    "mtbi" if s.label == MTBI else "control",
                    _fmt(s.age),
                    s.sex or "",
                    _fmt(s.stroop),
                    _fmt(s.sdmt),
                    _fmt(s.cvlt),
                    _fmt(s.fss),
                    rel(s.mask_path),
                ]
                + [rel(s.volume_paths.get(m)) for m in metrics]
            )


# ---------------------------------------------------------------------------
# validation and loading
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Issue:
    subject_id: str
    item: str
    message: str

    def __str__(self):
        return f"{self.subject_id} [{self.item}]: {self.message}"


class ValidationReport(list):
    """List of :class:`Issue`; empty means the dataset is usable."""

    @property
    def ok(self) -> bool:
        return not self


def validate_dataset(manifest: DatasetManifest, metrics=None, regions=None) -> ValidationReport:
    """Check files, headers and geometry without loading payloads.

    ``metrics`` / ``regions`` name what the run needs; every subject must
    provide them. By default each subject's declared volumes are checked.
    """
    report = ValidationReport()
    wanted = None if metrics is None else [parse_metric(m) for m in metrics]
    regions = [] if regions is None else [parse_region(r) for r in regions]
    labels = {s.label for s in manifest.subjects}
    if len(manifest) < 2:
        report.append(Issue("*", "dataset", "fewer than 2 subjects"))
    if labels != {MTBI, CONTROL}:
        report.append(Issue("*", "dataset", "both classes must be present"))

    for s in manifest.subjects:
        mask_dims = None
        if s.mask_path is None:
            report.append(Issue(s.subject_id, "mask", "missing mask"))
        else:
            try:
                header, offset = read_header(s.mask_path)
                nx, ny, nz = header["dims"]
                if header["kind"] != "mask":
                    report.append(Issue(s.subject_id, "mask", "file is not a mask"))
                elif os.path.getsize(s.mask_path) - offset != 4 * nx * ny * nz:
                    report.append(Issue(s.subject_id, "mask", "payload size differs from dims"))
                else:
                    mask_dims = tuple(header["dims"])
                    present = {parse_region(k) for k in header.get("labels", {})}
                    for r in regions:
                        for p in r.parts:
                            if p not in present:
                                report.append(Issue(s.subject_id, "mask", f"no label for region {p}"))
            except (MtbiError, OSError) as exc:
                report.append(Issue(s.subject_id, "mask", str(exc)))

        check = list(s.volume_paths) if wanted is None else wanted
        for m in check:
            p = s.volume_paths.get(m)
            if p is None:
                report.append(Issue(s.subject_id, str(m), "missing metric"))
                continue
            try:
                header, offset = read_header(p)
                nx, ny, nz = header["dims"]
                if header["kind"] != "metric" or header.get("metric") != str(m):
                    report.append(Issue(s.subject_id, str(m), f"file holds {header.get('metric')!r}"))
                elif os.path.getsize(p) - offset != 4 * nx * ny * nz:
                    report.append(Issue(s.subject_id, str(m), "payload size differs from dims"))
                elif mask_dims is not None and tuple(header["dims"]) != mask_dims:
                    report.append(
                        Issue(
                            s.subject_id,
                            str(m),
                            f"dims {tuple(header['dims'])} differ from mask dims {mask_dims}",
                        )
                    )
            except (MtbiError, OSError) as exc:
                report.append(Issue(s.subject_id, str(m), str(exc)))
    return report


class Dataset:
    """A manifest plus cached access to its volumes and masks."""

    def __init__(self, manifest: DatasetManifest):
        self.manifest = manifest
        self._volumes = {}
        self._masks = {}

    @classmethod
    def open(cls, path) -> "Dataset":
        return cls(read_manifest(path))

    @property
    def subjects(self):
        return self.manifest.subjects

    @property
    def subject_ids(self):
        return self.manifest.subject_ids

    @property
    def labels(self):
        return self.manifest.labels

    def volume(self, subject_id: str, metric) -> MetricVolume:
        metric = parse_metric(metric)
        key = (subject_id, metric)
        if key not in self._volumes:
            rec = self.manifest.subject(subject_id)
            if metric not in rec.volume_paths:
                raise MtbiError(f"subject {subject_id}: missing metric {metric}")
            self._volumes[key] = read_volume(rec.volume_paths[metric], metric)
        return self._volumes[key]

    def mask(self, subject_id: str) -> RoiMask:
        if subject_id not in self._masks:
            rec = self.manifest.subject(subject_id)
            if rec.mask_path is None:
                raise MtbiError(f"subject {subject_id}: missing mask")
            self._masks[subject_id] = read_mask(rec.mask_path)
        return self._masks[subject_id]
