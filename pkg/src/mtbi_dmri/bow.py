"""Bag-of-visual-words features (approach 2).

Axial 16x16 patches are cut from each metric map around the region of
interest, each class's training patches are clustered separately with
k-means, and every subject is encoded as the concatenation of its
L1-normalized word histograms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .core import (
    BOW_METRICS,
    BOW_REGIONS,
    CLINICAL_FEATURES,
    CONTROL,
    MTBI,
    DimMismatch,
    FeatureMatrix,
    FeatureName,
    Metric,
    MtbiError,
    Region,
    SplitMix64,
    concat_features,
    derive_seed,
    parse_metric,
    parse_region,
)

DICT_FORMAT = "mtbi-dict/1"


class TooFewPoints(MtbiError):
    pass


class MissingDictionary(MtbiError):
    pass


@dataclass(frozen=True)
class BowConfig:
    metrics: tuple = BOW_METRICS
    regions: tuple = BOW_REGIONS
    words_per_class: int = 10
    patch_size: int = 16
    stride: int = 8
    normalize_patches: bool = False
    max_iter: int = 300
    tol: float = 1e-6
    clinical: tuple = CLINICAL_FEATURES

    def __post_init__(self):
        object.__setattr__(self, "metrics", tuple(parse_metric(m) for m in self.metrics))
        object.__setattr__(self, "regions", tuple(parse_region(r) for r in self.regions))
        object.__setattr__(self, "clinical", tuple(self.clinical))
        if self.words_per_class < 1 or self.patch_size < 1 or self.stride < 1:
            raise ValueError("words_per_class, patch_size and stride must be positive")

    @property
    def n_words(self) -> int:
        return 2 * self.words_per_class

    @property
    def pairs(self):
        return [(m, r) for m in self.metrics for r in self.regions]


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Patch:
    values: np.ndarray
    origin: tuple
    metric: Metric
    region: Region
    subject_id: str


@dataclass(frozen=True)
class PatchSet:
    """Patches stacked as rows of ``values`` (``n x patch_size**2``, row-major in y, x)."""

    values: np.ndarray
    origins: np.ndarray
    metric: Metric
    region: Region
    subject_id: str = ""

    def __len__(self):
        return len(self.values)

    def __getitem__(self, i) -> Patch:
        return Patch(
            self.values[i], tuple(int(v) for v in self.origins[i]), self.metric, self.region, self.subject_id
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def extract_patches(volume, mask, region, patch_size=16, stride=8, normalize=False) -> PatchSet:
    """Cut axial patches whose centre voxel lies in ``region``.

    Top-left corners lie on a ``stride`` grid from (0, 0). A patch is kept
    when it fits inside the slice, its centre voxel (offset
    ``patch_size // 2`` in x and y) is in the region and none of its voxels
    is excluded. Order is z, then y, then x ascending.
    """
    region = parse_region(region)
    if volume.dims != mask.dims:
        raise DimMismatch(f"volume dims {volume.dims} differ from mask dims {mask.dims}")
    nx, ny, nz = volume.dims
    if patch_size > nx or patch_size > ny:
        raise ValueError(f"patch size {patch_size} exceeds slice size {nx}x{ny}")
    inside = mask.region_mask(region)
    half = patch_size // 2
    xs = np.arange(0, nx - patch_size + 1, stride)
    ys = np.arange(0, ny - patch_size + 1, stride)
    vals, origins = [], []
    for z in range(nz):
        if not inside[:, :, z].any():
            continue
        for y0 in ys:
            for x0 in xs:
                if not inside[x0 + half, y0 + half, z]:
                    continue
                if volume.excluded[x0 : x0 + patch_size, y0 : y0 + patch_size, z].any():
                    continue
                vals.append(volume.data[x0 : x0 + patch_size, y0 : y0 + patch_size, z].T.ravel())
                origins.append((x0, y0, z))
    dim = patch_size * patch_size
    values = np.array(vals, dtype=np.float64).reshape(len(vals), dim)
    if normalize and len(values):
        values = values - values.mean(axis=1, keepdims=True)
        sd = values.std(axis=1, keepdims=True)
        values = values / np.where(sd > 0, sd, 1.0)
    return PatchSet(
        values,
        np.array(origins, dtype=np.int64).reshape(len(origins), 3),
        volume.metric,
        region,
        volume.subject_id,
    )


# ---------------------------------------------------------------------------
# k-means
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    objective_trace: tuple
    n_iter: int

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]


def _sq_dists(X, C):
    # exact differences so identical rows give exactly zero distance
    out = np.empty((len(X), len(C)))
    for j, c in enumerate(C):
        d = X - c
        out[:, j] = np.einsum("ij,ij->i", d, d)
    return out


def _kmeans_pp(X, k, rng: SplitMix64):
    n = len(X)
    chosen = [rng.integer(n)]
    d2 = _sq_dists(X, X[chosen[-1]][None, :])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            cum = np.cumsum(d2)
            idx = int(np.searchsorted(cum, rng.uniform(1)[0] * total, side="right"))
            idx = min(idx, n - 1)
            while d2[idx] == 0:  # guard against landing on a zero-weight point at a boundary
                idx -= 1
        else:
            free = np.setdiff1d(np.arange(n), chosen)
            idx = int(free[rng.integer(len(free))])
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dists(X, X[idx][None, :])[:, 0])
    return X[chosen].copy()


def _update(X, labels, centroids, dists):
    k = len(centroids)
    new = np.empty_like(centroids)
    empty = []
    for j in range(k):
        members = labels == j
        if members.any():
            new[j] = X[members].mean(axis=0)
        else:
            empty.append(j)
    if empty:
        # re-seed each empty cluster with the point farthest from its centroid
        own = dists[np.arange(len(X)), labels].copy()
        for j in empty:
            i = int(np.argmax(own))
            new[j] = X[i]
            own[i] = -1.0
    return new


def kmeans(points, k, seed=0, max_iter=300, tol=1e-6) -> KMeansResult:
    """Lloyd's algorithm from a k-means++ start.

    The objective is the total squared Euclidean distance to the assigned
    centroid. Iteration stops when assignments stop changing, when the
    relative objective improvement drops below ``tol`` or after
    ``max_iter`` assignment steps. Returned labels are the nearest-centroid
    assignment of the returned centroids (ties go to the lower index).
    """
    X = np.asarray(points, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if k < 1 or len(X) < k:
        raise TooFewPoints(f"need at least k={k} points, got {len(X)}")
    rng = SplitMix64(seed)
    centroids = _kmeans_pp(X, k, rng)
    dists = _sq_dists(X, centroids)
    labels = np.argmin(dists, axis=1)
    trace = [float(dists[np.arange(len(X)), labels].sum())]
    n_iter = 1
    while n_iter < max_iter and trace[-1] > 0:
        cand = _update(X, labels, centroids, dists)
        cdists = _sq_dists(X, cand)
        clabels = np.argmin(cdists, axis=1)
        obj = float(cdists[np.arange(len(X)), clabels].sum())
        if obj > trace[-1]:
            break  # rounding noise at convergence
        n_iter += 1
        unchanged = np.array_equal(clabels, labels)
        improvement = trace[-1] - obj
        centroids, dists, labels = cand, cdists, clabels
        trace.append(obj)
        if unchanged or improvement <= tol * trace[-2]:
            break
    return KMeansResult(centroids, labels, tuple(trace), n_iter)


# ---------------------------------------------------------------------------
# dictionaries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dictionary:
    """Visual words for one (metric, region); MTBI-derived words come first."""

    metric: Metric
    region: Region
    words: np.ndarray
    provenance: tuple
    seed: int = 0
    kmeans_meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return len(self.words)

    def save(self, path) -> None:
        """JSON header line then ``k x dim`` little-endian float32 centroids."""
        header = {
            "format": DICT_FORMAT,
            "metric": str(self.metric),
            "region": str(self.region),
            "k": self.k,
            "dim": int(self.words.shape[1]),
            "seed": int(self.seed),
            "provenance": ["mtbi" if p == MTBI else "control" for p in self.provenance],
            "kmeans": self.kmeans_meta,
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
            fh.write(np.asarray(self.words, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path) -> "Dictionary":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode())
            raw = fh.read()
        if header.get("format") != DICT_FORMAT:
            raise MtbiError(f"{path}: not a {DICT_FORMAT} file")
        k, dim = header["k"], header["dim"]
        if len(raw) != 4 * k * dim:
            raise MtbiError(f"{path}: payload size does not match k x dim")
        words = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(k, dim)
        prov = tuple(MTBI if p == "mtbi" else CONTROL for p in header["provenance"])
        return cls(
            parse_metric(header["metric"]),
            parse_region(header["region"]),
            words,
            prov,
            header["seed"],
            header.get("kmeans", {}),
        )


def build_dictionary(train_patches_by_class, metric, region, words_per_class=10, seed=0,
                     max_iter=300, tol=1e-6) -> Dictionary:
    """Cluster each class's training patches separately and stack the centroids.

    ``train_patches_by_class`` maps ``+1`` (MTBI) and ``-1`` (control) to
    ``n x d`` arrays.
    """
    metric, region = parse_metric(metric), parse_region(region)
    words, prov, meta = [], [], {}
    for cls, name in ((MTBI, "mtbi"), (CONTROL, "control")):
        X = np.asarray(train_patches_by_class.get(cls, np.empty((0, 0))), dtype=np.float64)
        if len(X) < words_per_class:
            raise TooFewPoints(
                f"{metric}/{region}: class {name} has {len(X)} training patches, "
                f"needs {words_per_class}"
            )
        cseed = derive_seed(seed, f"kmeans/{metric}/{region}/{name}")
        res = kmeans(X, words_per_class, cseed, max_iter, tol)
        words.append(res.centroids)
        prov += [cls] * words_per_class
        meta[name] = {"iterations": res.n_iter, "objective": res.objective}
    return Dictionary(metric, region, np.vstack(words), tuple(prov), seed, meta)


# ---------------------------------------------------------------------------
# histograms and feature tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WordHistogram:
    counts: np.ndarray
    normalized: np.ndarray


def encode_histogram(patches, dictionary: Dictionary) -> WordHistogram:
    """Nearest-word counts (lowest index wins ties) and their L1-normalized form."""
    if dictionary.k == 0:
        raise MissingDictionary("dictionary has no words")
    X = patches.values if isinstance(patches, PatchSet) else np.asarray(patches, dtype=np.float64)
    counts = np.zeros(dictionary.k, dtype=np.int64)
    if len(X):
        nearest = np.argmin(_sq_dists(X.reshape(len(X), -1), dictionary.words), axis=1)
        counts = np.bincount(nearest, minlength=dictionary.k).astype(np.int64)
    total = counts.sum()
    normalized = counts / total if total else np.zeros(dictionary.k)
    return WordHistogram(counts, normalized)


def extract_all_patches(dataset, config: BowConfig = BowConfig()) -> dict:
    """``{(subject_id, metric, region): PatchSet}`` for every configured pair."""
    out = {}
    for s in dataset.subjects:
        mask = dataset.mask(s.subject_id)
        for m in config.metrics:
            vol = dataset.volume(s.subject_id, m)
            for r in config.regions:
                out[(s.subject_id, m, r)] = extract_patches(
                    vol, mask, r, config.patch_size, config.stride, config.normalize_patches
                )
    return out


def fit_dictionaries(patches: dict, subject_labels: dict, train_ids, config: BowConfig, seed: int) -> dict:
    """One dictionary per (metric, region), trained on ``train_ids`` only."""
    dicts = {}
    for m, r in config.pairs:
        by_class = {}
        for cls in (MTBI, CONTROL):
            chunks = [patches[(sid, m, r)].values for sid in train_ids if subject_labels[sid] == cls]
            dim = config.patch_size**2
            by_class[cls] = np.vstack(chunks) if chunks else np.empty((0, dim))
        dicts[(m, r)] = build_dictionary(
            by_class, m, r, config.words_per_class, seed, config.max_iter, config.tol
        )
    return dicts


def bow_feature_names(config: BowConfig):
    return [
        FeatureName("bow-word", m, r, w) for m, r in config.pairs for w in range(config.n_words)
    ]


def build_bow_feature_table(dataset, dictionaries: dict, config: BowConfig = BowConfig(),
                            patches: dict | None = None) -> FeatureMatrix:
    """Concatenated normalized histograms in (metric, region) order, then clinical columns.

    ``patches`` may be passed to reuse an :func:`extract_all_patches` result.
    """
    from .roi import clinical_table

    if patches is None:
        patches = extract_all_patches(dataset, config)
    for pair in config.pairs:
        if pair not in dictionaries:
            raise MissingDictionary(f"no dictionary for {pair[0]}/{pair[1]}")
    rows = []
    for s in dataset.subjects:
        row = [
            encode_histogram(patches[(s.subject_id, m, r)], dictionaries[(m, r)]).normalized
            for m, r in config.pairs
        ]
        rows.append(np.concatenate(row) if row else np.empty(0))
    names = [
        FeatureName("bow-word", m, r, w) for m, r in config.pairs for w in range(dictionaries[(m, r)].k)
    ]
    words = FeatureMatrix(
        dataset.subject_ids,
        names,
        np.array(rows, dtype=np.float64).reshape(len(rows), len(names)),
        dataset.labels,
    )
    if not config.clinical:
        return words
    return concat_features([words, clinical_table(dataset, config.clinical)])


def write_histograms(path, subject, patches: dict, dictionaries: dict, config: BowConfig) -> None:
    """Per-word counts and frequencies for one subject, for external plotting."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("subject_id,label,metric,region,word,provenance,count,frequency\n")
        label = "mtbi" if subject.label == MTBI else "control"
        for m, r in config.pairs:
            d = dictionaries[(m, r)]
            h = encode_histogram(patches[(subject.subject_id, m, r)], d)
            for w in range(d.k):
                prov = "mtbi" if d.provenance[w] == MTBI else "control"
                fh.write(
                    f"{subject.subject_id},{label},{m},{r},{w},{prov},"
                    f"{int(h.counts[w])},{float(h.normalized[w])!r}\n"
                )
