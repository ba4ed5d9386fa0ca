"""Phantom datasets with known class effects.

Each voxel of metric ``m`` is ``base[m]``, plus the configured class shift
inside a region, plus a per-subject offset (``subject_sd``), plus voxel
noise (``noise_sd``), plus an optional class-specific sinusoidal grating
``amp * sin(2*pi*(x + y) / period + phase)`` inside textured regions. The
phase is drawn per subject and slice. When the region's x-extent is a
multiple of both class periods, each grating row sums to zero, so region
means carry no class information.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .core import (
    ALL_METRICS,
    ATOMIC_REGIONS,
    CONTROL,
    DEFAULT_LABELS,
    MTBI,
    MtbiError,
    SplitMix64,
    SubjectRecord,
    derive_seed,
    parse_metric,
    parse_region,
)
from .ingest import MetricVolume, RoiMask, write_manifest, write_mask, write_volume


class SpecRegionOutOfBounds(MtbiError):
    pass


BASE_VALUES = {
    "MD": 0.8,
    "FA": 0.45,
    "MK": 1.0,
    "AWF": 0.4,
    "DA": 1.6,
    "DePar": 2.0,
    "DePer": 0.9,
}

# boxes as [[x0, x1], [y0, y1], [z0, z1]], half-open; every region holds
# at least one centre of the default 16x16 / stride-8 patch grid per slice
DEFAULT_BOXES = {
    "Thalamus": [[4, 20], [4, 20], [0, 4]],
    "PrefrontalWM": [[4, 20], [4, 20], [4, 8]],
    "CCGenu": [[20, 28], [4, 12], [0, 8]],
    "CCBody": [[20, 28], [12, 20], [0, 8]],
    "CCSplenium": [[4, 28], [20, 28], [0, 8]],
}

DEFAULT_CLINICAL = {
    # name: [mtbi mean, mtbi sd, control mean, control sd]
    "age": [35.0, 10.0, 35.0, 10.0],
    "stroop": [45.0, 8.0, 45.0, 8.0],
    "sdmt": [55.0, 9.0, 55.0, 9.0],
    "cvlt": [50.0, 10.0, 50.0, 10.0],
    "fss": [3.5, 1.2, 3.5, 1.2],
}


@dataclass
class PhantomSpec:
    """Phantom description; round-trips through :meth:`to_dict` / :meth:`from_dict`.

    ``effects`` entries are ``{"metric", "region", "shift"}``: the MTBI class
    mean in that region is ``base + shift``. ``textures`` entries are
    ``{"metric", "region", "amplitude", "period_mtbi", "period_control"}``.
    """

    n_per_class: int = 10
    dims: tuple = (32, 32, 8)
    voxel_size_mm: tuple = (2.5, 2.5, 2.5)
    regions: dict = field(default_factory=lambda: {k: [list(a) for a in v] for k, v in DEFAULT_BOXES.items()})
    base: dict = field(default_factory=lambda: dict(BASE_VALUES))
    effects: list = field(default_factory=list)
    textures: list = field(default_factory=list)
    noise_sd: float = 0.02
    subject_sd: float = 0.0
    clinical: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_CLINICAL.items()})
    p_female: tuple = (0.5, 0.5)
    missing_rate: float = 0.0
    nan_voxels: int = 0
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.voxel_size_mm = tuple(float(v) for v in self.voxel_size_mm)
        self.p_female = tuple(self.p_female)
        if self.n_per_class < 1:
            raise ValueError("n_per_class must be positive")
        if self.noise_sd < 0 or self.subject_sd < 0:
            raise ValueError("noise sd must be non-negative")
        for name, box in self.regions.items():
            parse_region(name)
            for (lo, hi), n in zip(box, self.dims):
                if not (0 <= lo < hi <= n):
                    raise SpecRegionOutOfBounds(f"region {name} box {box} outside dims {self.dims}")
        for e in self.effects + self.textures:
            parse_metric(e["metric"])
            if e["region"] not in self.regions:
                raise MtbiError(f"effect region {e['region']} is not configured")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"], d["voxel_size_mm"], d["p_female"] = list(self.dims), list(self.voxel_size_mm), list(self.p_female)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomSpec":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise MtbiError(f"unknown phantom spec keys {sorted(unknown)}")
        return cls(**d)

    def class_mean(self, metric, region, label) -> float:
        m = str(parse_metric(metric))
        value = self.base[m]
        if label == MTBI:
            for e in self.effects:
                if e["metric"] == m and e["region"] == str(region):
                    value += e["shift"]
        return value


def _subject_ids(spec):
    ids = [(f"mtbi{i + 1:03d}", MTBI) for i in range(spec.n_per_class)]
    ids += [(f"ctrl{i + 1:03d}", CONTROL) for i in range(spec.n_per_class)]
    return ids


def _mask_array(spec):
    mask = np.zeros(spec.dims, dtype=np.int64)
    for name, ((x0, x1), (y0, y1), (z0, z1)) in spec.regions.items():
        mask[x0:x1, y0:y1, z0:z1] = DEFAULT_LABELS[parse_region(name)]
    return mask


def phantom_volume(spec: PhantomSpec, subject_id: str, label: int, metric) -> np.ndarray:
    metric = parse_metric(metric)
    nx, ny, nz = spec.dims
    rng = SplitMix64(derive_seed(spec.seed, f"phantom/{subject_id}/{metric}"))
    data = np.full(spec.dims, spec.base[str(metric)], dtype=np.float64)
    gx, gy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    for name, ((x0, x1), (y0, y1), (z0, z1)) in spec.regions.items():
        level = spec.class_mean(metric, name, label)
        if spec.subject_sd > 0:
            level += spec.subject_sd * rng.normal(1)[0]
        data[x0:x1, y0:y1, z0:z1] = level
        for t in spec.textures:
            if t["metric"] != str(metric) or t["region"] != name:
                continue
            period = t["period_mtbi"] if label == MTBI else t["period_control"]
            phases = 2.0 * math.pi * rng.uniform(z1 - z0)
            for dz, z in enumerate(range(z0, z1)):
                wave = t["amplitude"] * np.sin(2.0 * math.pi * (gx + gy) / period + phases[dz])
                data[x0:x1, y0:y1, z] += wave[x0:x1, y0:y1]
    if spec.noise_sd > 0:
        data += spec.noise_sd * rng.normal(data.size).reshape(spec.dims, order="F")
    if spec.nan_voxels:
        flat = data.reshape(-1, order="F")
        picks = rng.permutation(flat.size)[: spec.nan_voxels]
        flat[picks] = np.nan
        data = flat.reshape(spec.dims, order="F")
    # stored as float32 on disk; quantize here so in-memory and on-disk agree
    return data.astype(np.float32).astype(np.float64)


def generate_phantom(spec: PhantomSpec, out_dir) -> Path:
    """Write volumes, masks, ``manifest.csv`` and ``ground_truth.json``; returns the manifest path."""
    out = Path(out_dir)
    (out / "volumes").mkdir(parents=True, exist_ok=True)
    mask = _mask_array(spec)
    labels = {r: DEFAULT_LABELS[r] for r in ATOMIC_REGIONS if str(r) in spec.regions}
    subjects = []
    for sid, label in _subject_ids(spec):
        mpath = out / "volumes" / f"{sid}_mask.vol"
        write_mask(mpath, RoiMask(mask, labels, sid, spec.voxel_size_mm))
        paths = {}
        for m in ALL_METRICS:
            p = out / "volumes" / f"{sid}_{m}.vol"
            write_volume(p, MetricVolume(phantom_volume(spec, sid, label, m), m, sid, spec.voxel_size_mm))
            paths[m] = str(p)
        rng = SplitMix64(derive_seed(spec.seed, f"phantom/{sid}/clinical"))
        col = 0 if label == MTBI else 2
        clin = {}
        for name in ("age", "stroop", "sdmt", "cvlt", "fss"):
            mean, sd = spec.clinical[name][col], spec.clinical[name][col + 1]
            value = mean + sd * rng.normal(1)[0]
            missing = spec.missing_rate > 0 and rng.uniform(1)[0] < spec.missing_rate
            clin[name] = math.nan if missing else round(value, 6)
        p_f = spec.p_female[0 if label == MTBI else 1]
        sex = "F" if rng.uniform(1)[0] < p_f else "M"
        subjects.append(
            SubjectRecord(sid, label, sex=sex, volume_paths=paths, mask_path=str(mpath), **clin)
        )
    manifest = out / "manifest.csv"
    write_manifest(manifest, subjects)
    truth = {
        "spec": spec.to_dict(),
        "class_means": {
            f"{m}/{r}": {
                "mtbi": spec.class_mean(m, r, MTBI),
                "control": spec.class_mean(m, r, CONTROL),
            }
            for m in ALL_METRICS
            for r in spec.regions
        },
        "textures": spec.textures,
    }
    with open(out / "ground_truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def mean_difference_spec(seed=0, n_per_class=20, effect_sd=1.5) -> PhantomSpec:
    """Class shift of ``effect_sd`` noise standard deviations in (AWF, CCBody) and (DePar, Thalamus)."""
    sd = 0.02
    return PhantomSpec(
        n_per_class=n_per_class,
        noise_sd=sd,
        effects=[
            {"metric": "AWF", "region": "CCBody", "shift": effect_sd * sd},
            {"metric": "DePar", "region": "Thalamus", "shift": effect_sd * sd},
        ],
        seed=seed,
    )


def texture_spec(seed=0, n_per_class=20) -> PhantomSpec:
    """Equal region means; FA in the thalamus and AWF in the CC carry class gratings."""
    tex = {"amplitude": 0.1, "period_mtbi": 4, "period_control": 8}
    return PhantomSpec(
        n_per_class=n_per_class,
        noise_sd=0.02,
        textures=[
            {"metric": "FA", "region": "Thalamus", **tex},
            {"metric": "AWF", "region": "CCBody", **tex},
            {"metric": "AWF", "region": "CCGenu", **tex},
            {"metric": "AWF", "region": "CCSplenium", **tex},
        ],
        seed=seed,
    )
