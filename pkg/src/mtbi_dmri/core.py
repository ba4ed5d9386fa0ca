"""Shared data types and the deterministic-randomness contract.

Seeds
-----
Every stochastic step draws from a seed derived from the run seed and a
fixed role tag::

    h    = FNV-1a-64(tag as ASCII bytes)       offset 0xcbf29ce484222325,
                                               prime  0x100000001b3
    seed = splitmix64(h XOR run_seed)

with the usual splitmix64 finalizer::

    z = x + 0x9E3779B97F4A7C15
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * 0x94D049BB133111EB
    z =  z ^ (z >> 31)

all arithmetic modulo 2**64. ``derive_seed(0, "kmeans")`` is
``0xB64445E6F8E02589``.

Random streams (:class:`SplitMix64`) are the reference splitmix64
generator: draw ``i`` (from 0) is the finalizer applied to
``seed + (i + 1) * 0x9E3779B97F4A7C15``. Uniforms use the top 53 bits;
normals use Box-Muller, with the first half of a uniform block as radii
and the second half as angles.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

MASK64 = (1 << 64) - 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
GOLDEN_GAMMA = 0x9E3779B97F4A7C15


class MtbiError(Exception):
    """Base class for data and configuration errors raised by this package."""


class DimMismatch(MtbiError):
    pass


class EmptyRegion(MtbiError):
    pass


class Metric(str, enum.Enum):
    """Diffusion / WMTI parametric map. ``DA`` is the intra-axonal diffusivity."""

    MD = "MD"
    FA = "FA"
    MK = "MK"
    AWF = "AWF"
    DA = "DA"
    DePar = "DePar"
    DePer = "DePer"

    def __str__(self):
        return self.value


ALL_METRICS = tuple(Metric)
BOW_METRICS = (Metric.AWF, Metric.DA, Metric.DePar, Metric.FA, Metric.MD)


class Region(str, enum.Enum):
    Thalamus = "Thalamus"
    PrefrontalWM = "PrefrontalWM"
    CCBody = "CCBody"
    CCGenu = "CCGenu"
    CCSplenium = "CCSplenium"
    # composite, never an atomic mask label
    CorpusCallosum = "CorpusCallosum"

    def __str__(self):
        return self.value

    @property
    def is_composite(self) -> bool:
        return self is Region.CorpusCallosum

    @property
    def parts(self) -> tuple["Region", ...]:
        if self is Region.CorpusCallosum:
            return (Region.CCBody, Region.CCGenu, Region.CCSplenium)
        return (self,)


ATOMIC_REGIONS = (
    Region.Thalamus,
    Region.PrefrontalWM,
    Region.CCBody,
    Region.CCGenu,
    Region.CCSplenium,
)
BOW_REGIONS = (Region.Thalamus, Region.CorpusCallosum)

DEFAULT_LABELS = {r: i + 1 for i, r in enumerate(ATOMIC_REGIONS)}

CLINICAL_FEATURES = ("age", "sex", "stroop", "sdmt", "cvlt", "fss")

MTBI = 1
CONTROL = -1


def parse_metric(name) -> Metric:
    if isinstance(name, Metric):
        return name
    try:
        return Metric(str(name))
    except ValueError:
        raise MtbiError(f"unknown metric {name!r}") from None


def parse_region(name) -> Region:
    if isinstance(name, Region):
        return name
    try:
        return Region(str(name))
    except ValueError:
        raise MtbiError(f"unknown region {name!r}") from None


# ---------------------------------------------------------------------------
# seeds and random streams
# ---------------------------------------------------------------------------


def splitmix64(x: int) -> int:
    z = (x + GOLDEN_GAMMA) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & MASK64
    return h


def derive_seed(run_seed: int, role_tag: str) -> int:
    """Mix a role tag into a run seed (FNV-1a of the tag, XOR, one splitmix64 round)."""
    if not role_tag or not role_tag.isascii():
        raise ValueError("role_tag must be a non-empty ASCII string")
    return splitmix64(fnv1a64(role_tag.encode("ascii")) ^ (int(run_seed) & MASK64))


def _mix_array(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= np.uint64(0xBF58476D1CE4E5B9)
    z ^= z >> np.uint64(27)
    z *= np.uint64(0x94D049BB133111EB)
    z ^= z >> np.uint64(31)
    return z


class SplitMix64:
    """Reference splitmix64 stream, vectorized with wrapping uint64 arithmetic."""

    def __init__(self, seed: int):
        self.state = int(seed) & MASK64

    def next_uint64(self, n: int) -> np.ndarray:
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(GOLDEN_GAMMA)
            out = _mix_array(z)
        self.state = (self.state + n * GOLDEN_GAMMA) & MASK64
        return out

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1)."""
        return (self.next_uint64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, n: int) -> np.ndarray:
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        u1 = 1.0 - u[:m]  # (0, 1]
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u[m:]
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]

    def integer(self, high: int) -> int:
        """Uniform integer in [0, high)."""
        return min(int(self.uniform(1)[0] * high), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        perm = np.arange(n)
        u = self.uniform(max(n - 1, 0))
        for idx, i in enumerate(range(n - 1, 0, -1)):
            j = min(int(u[idx] * (i + 1)), i)
            perm[i], perm[j] = perm[j], perm[i]
        return perm


# ---------------------------------------------------------------------------
# feature tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureName:
    """Structured column name.

    ``source`` is one of ``roi-mean``, ``bow-word`` or ``clinical``.
    """

    source: str
    metric: Optional[Metric] = None
    region: Optional[Region] = None
    word: Optional[int] = None
    clinical: Optional[str] = None

    def __str__(self):
        if self.source == "clinical":
            return f"clinical:{self.clinical}"
        if self.source == "roi-mean":
            return f"roi-mean:{self.metric}:{self.region}"
        return f"bow-word:{self.metric}:{self.region}:{self.word:02d}"

    @classmethod
    def parse(cls, text: str) -> "FeatureName":
        parts = text.split(":")
        if parts[0] == "clinical" and len(parts) == 2:
            return cls("clinical", clinical=parts[1])
        if parts[0] == "roi-mean" and len(parts) == 3:
            return cls("roi-mean", parse_metric(parts[1]), parse_region(parts[2]))
        if parts[0] == "bow-word" and len(parts) == 4:
            return cls("bow-word", parse_metric(parts[1]), parse_region(parts[2]), int(parts[3]))
        raise MtbiError(f"cannot parse feature name {text!r}")


@dataclass(frozen=True)
class FeatureMatrix:
    """Subjects x named features. ``NaN`` marks a missing clinical score."""

    subject_ids: tuple
    feature_names: tuple
    values: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "subject_ids", tuple(self.subject_ids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            values = values.reshape(len(self.subject_ids), len(self.feature_names))
        labels = np.asarray(self.labels, dtype=np.int64)
        if values.shape != (len(self.subject_ids), len(self.feature_names)):
            raise DimMismatch(
                f"values shape {values.shape} does not match "
                f"{len(self.subject_ids)} subjects x {len(self.feature_names)} features"
            )
        if labels.shape != (len(self.subject_ids),):
            raise DimMismatch("one label per subject required")
        if len(set(self.feature_names)) != len(self.feature_names):
            seen, dup = set(), None
            for n in self.feature_names:
                if n in seen:
                    dup = n
                    break
                seen.add(n)
            raise MtbiError(f"duplicate feature name {dup}")
        if len(set(self.subject_ids)) != len(self.subject_ids):
            raise MtbiError("duplicate subject id in feature matrix")
        if not np.all(np.isin(labels, (MTBI, CONTROL))):
            raise MtbiError("labels must be +1 (MTBI) or -1 (control)")
        values.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "labels", labels)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    @property
    def shape(self):
        return self.values.shape

    def index_of(self, name) -> int:
        if isinstance(name, str):
            name = FeatureName.parse(name)
        return self.feature_names.index(name)

    def select(self, indices: Sequence[int]) -> "FeatureMatrix":
        idx = list(indices)
        return FeatureMatrix(
            self.subject_ids,
            [self.feature_names[i] for i in idx],
            self.values[:, idx],
            self.labels,
        )

    def rows(self, indices: Sequence[int]) -> "FeatureMatrix":
        idx = list(indices)
        return FeatureMatrix(
            [self.subject_ids[i] for i in idx],
            self.feature_names,
            self.values[idx],
            self.labels[idx],
        )

    def to_csv(self, path) -> None:
        """Delimited text; header ``subject_id,label,<feature names>``, missing as empty."""
        with open(path, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(",".join(["subject_id", "label"] + [str(n) for n in self.feature_names]))
            fh.write("\n")
            for sid, lab, row in zip(self.subject_ids, self.labels, self.values):
                cells = [sid, "mtbi" if lab == MTBI else "control"]
                cells += ["" if np.isnan(v) else repr(float(v)) for v in row]
                fh.write(",".join(cells) + "\n")

    @classmethod
    def from_csv(cls, path) -> "FeatureMatrix":
        import csv

        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        names = [FeatureName.parse(h) for h in header[2:]]
        ids = [r[0] for r in body]
        labels = [MTBI if r[1] == "mtbi" else CONTROL for r in body]
        vals = np.array(
            [[float(c) if c != "" else np.nan for c in r[2:]] for r in body],
            dtype=np.float64,
        ).reshape(len(body), len(names))
        return cls(ids, names, vals, labels)


def concat_features(parts: Iterable[FeatureMatrix]) -> FeatureMatrix:
    parts = list(parts)
    first = parts[0]
    for p in parts[1:]:
        if p.subject_ids != first.subject_ids:
            raise MtbiError("cannot concatenate feature matrices with different subjects")
    return FeatureMatrix(
        first.subject_ids,
        [n for p in parts for n in p.feature_names],
        np.hstack([p.values for p in parts]),
        first.labels,
    )


@dataclass(frozen=True)
class SubjectRecord:
    subject_id: str
    label: int
    age: float = math.nan
    sex: Optional[str] = None
    stroop: float = math.nan
    sdmt: float = math.nan
    cvlt: float = math.nan
    fss: float = math.nan
    volume_paths: dict = field(default_factory=dict)
    mask_path: Optional[str] = None

    def clinical_value(self, name: str) -> float:
        """Numeric clinical feature; sex is encoded M -> 0, F -> 1, missing -> NaN."""
        if name == "sex":
            return {"M": 0.0, "F": 1.0}.get(self.sex, math.nan)
        return float(getattr(self, name))
