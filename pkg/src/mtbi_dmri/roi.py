"""Region-of-interest mean features (approach 1)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    ALL_METRICS,
    ATOMIC_REGIONS,
    CLINICAL_FEATURES,
    DimMismatch,
    EmptyRegion,
    FeatureMatrix,
    FeatureName,
    concat_features,
    parse_metric,
    parse_region,
)


@dataclass(frozen=True)
class RoiConfig:
    metrics: tuple = ALL_METRICS
    regions: tuple = ATOMIC_REGIONS
    clinical: tuple = CLINICAL_FEATURES

    def __post_init__(self):
        object.__setattr__(self, "metrics", tuple(parse_metric(m) for m in self.metrics))
        object.__setattr__(self, "regions", tuple(parse_region(r) for r in self.regions))
        object.__setattr__(self, "clinical", tuple(self.clinical))
        bad = set(self.clinical) - set(CLINICAL_FEATURES)
        if bad:
            raise ValueError(f"unknown clinical features {sorted(bad)}")


def mean_in_roi(volume, mask, region) -> float:
    """Arithmetic mean of ``volume`` over the region's voxels, skipping excluded voxels."""
    if volume.dims != mask.dims:
        raise DimMismatch(f"volume dims {volume.dims} differ from mask dims {mask.dims}")
    sel = mask.region_mask(region) & ~volume.excluded
    n = int(sel.sum())
    if n == 0:
        raise EmptyRegion(f"region {parse_region(region)} has no eligible voxels")
    return float(volume.data[sel].sum() / n)


def clinical_table(dataset, names=CLINICAL_FEATURES) -> FeatureMatrix:
    """Clinical columns as stored; missing scores stay NaN for fold-local imputation."""
    subjects = dataset.subjects
    vals = np.array(
        [[s.clinical_value(n) for n in names] for s in subjects], dtype=np.float64
    ).reshape(len(subjects), len(names))
    return FeatureMatrix(
        [s.subject_id for s in subjects],
        [FeatureName("clinical", clinical=n) for n in names],
        vals,
        [s.label for s in subjects],
    )


def build_mean_feature_table(dataset, config: RoiConfig = RoiConfig()) -> FeatureMatrix:
    """Per-subject ROI means (metric-major, then region) followed by clinical columns."""
    names = [FeatureName("roi-mean", m, r) for m in config.metrics for r in config.regions]
    rows = []
    for s in dataset.subjects:
        mask = dataset.mask(s.subject_id)
        row = []
        for m in config.metrics:
            vol = dataset.volume(s.subject_id, m)
            for r in config.regions:
                try:
                    row.append(mean_in_roi(vol, mask, r))
                except (EmptyRegion, DimMismatch) as exc:
                    raise type(exc)(f"subject {s.subject_id}, {m}: {exc}") from exc
        rows.append(row)
    imaging = FeatureMatrix(
        dataset.subject_ids,
        names,
        np.array(rows, dtype=np.float64).reshape(len(rows), len(names)),
        dataset.labels,
    )
    if not config.clinical:
        return imaging
    return concat_features([imaging, clinical_table(dataset, config.clinical)])
