"""Stratified cross-validation and greedy forward feature selection."""

from __future__ import annotations

import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import CONTROL, MTBI, FeatureMatrix, MtbiError, SplitMix64, derive_seed
from .svm import Standardizer, SvmConfig, predict, standardize_fit, train_svm


class TooFewSubjects(MtbiError):
    pass


class EmptySubset(MtbiError):
    pass


@dataclass(frozen=True)
class FoldPlan:
    k: int
    assignments: np.ndarray
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def stratified_kfold(labels, k=10, seed=0) -> FoldPlan:
    """Shuffle each class with a seed-derived stream and deal it round-robin.

    MTBI subjects are dealt first starting at fold 0; control subjects
    continue from the fold after the last MTBI subject, which keeps fold
    sizes within one of each other.
    """
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    counts = {c: int(np.sum(labels == c)) for c in (MTBI, CONTROL)}
    smallest = min(counts.values())
    if smallest < 2:
        raise TooFewSubjects(f"each class needs at least 2 subjects, got {counts}")
    if smallest < k:
        warnings.warn(f"smallest class has {smallest} subjects; using {smallest} folds instead of {k}")
        k = smallest
    assignments = np.full(len(labels), -1, dtype=np.int64)
    offset = 0
    for cls, tag in ((MTBI, "folds/mtbi"), (CONTROL, "folds/control")):
        members = np.flatnonzero(labels == cls)
        order = members[SplitMix64(derive_seed(seed, tag)).permutation(len(members))]
        assignments[order] = (offset + np.arange(len(order))) % k
        offset = (offset + len(order)) % k
    return FoldPlan(k, assignments, seed)


# ---------------------------------------------------------------------------
# per-fold feature tables
# ---------------------------------------------------------------------------


class BowFeatureSource:
    """Bag-of-words features whose dictionaries are re-fit inside every training fold."""

    def __init__(self, patches: dict, subjects, clinical: FeatureMatrix | None, config, seed=0):
        self.patches = patches
        self.subjects = list(subjects)
        self.clinical = clinical
        self.config = config
        self.seed = seed
        self.subject_ids = tuple(s.subject_id for s in self.subjects)
        self.labels = np.array([s.label for s in self.subjects], dtype=np.int64)
        self.dictionaries = {}

    @classmethod
    def from_dataset(cls, dataset, config, seed=0):
        from .bow import extract_all_patches
        from .roi import clinical_table

        clinical = clinical_table(dataset, config.clinical) if config.clinical else None
        return cls(extract_all_patches(dataset, config), dataset.subjects, clinical, config, seed)

    @property
    def feature_names(self):
        from .bow import bow_feature_names

        names = bow_feature_names(self.config)
        return tuple(names + (list(self.clinical.feature_names) if self.clinical else []))

    @property
    def n_features(self):
        return len(self.feature_names)

    def fit_matrix(self, train_idx, tag="all") -> FeatureMatrix:
        """Fit dictionaries on ``train_idx`` subjects and encode every subject."""
        from .bow import encode_histogram, fit_dictionaries

        train_ids = [self.subject_ids[i] for i in train_idx]
        label_of = dict(zip(self.subject_ids, self.labels))
        dicts = fit_dictionaries(
            self.patches, label_of, train_ids, self.config, derive_seed(self.seed, f"dict/{tag}")
        )
        self.dictionaries[tag] = dicts
        rows = []
        for sid in self.subject_ids:
            parts = [
                encode_histogram(self.patches[(sid, m, r)], dicts[(m, r)]).normalized
                for m, r in self.config.pairs
            ]
            rows.append(np.concatenate(parts))
        values = np.array(rows)
        if self.clinical is not None:
            values = np.hstack([values, self.clinical.values])
        return FeatureMatrix(self.subject_ids, self.feature_names, values, self.labels)


@dataclass
class FoldData:
    train: np.ndarray
    test: np.ndarray
    X_train: np.ndarray
    X_test: np.ndarray
    y_train: np.ndarray
    y_test: np.ndarray
    scaler: Standardizer
    dictionaries: dict = field(default_factory=dict)


def prepare_folds(features, fold_plan: FoldPlan) -> list:
    """Fold-local feature tables with imputation and standardization fit on training rows.

    Column-wise z-scoring does not depend on which other columns are kept,
    so preprocessing is fit once per fold and reused for every subset.
    """
    folds = []
    for f in range(fold_plan.k):
        train, test = fold_plan.train_indices(f), fold_plan.test_indices(f)
        if isinstance(features, BowFeatureSource):
            fm = features.fit_matrix(train, tag=f"fold{f}")
            dicts = features.dictionaries[f"fold{f}"]
        else:
            fm, dicts = features, {}
        scaler = standardize_fit(fm.values[train])
        folds.append(
            FoldData(
                train,
                test,
                scaler.apply(fm.values[train]),
                scaler.apply(fm.values[test]),
                fm.labels[train],
                fm.labels[test],
                scaler,
                dicts,
            )
        )
    return folds


def _raw_config(svm_config: SvmConfig) -> SvmConfig:
    return SvmConfig(
        svm_config.C, svm_config.kernel, svm_config.gamma, svm_config.tol, svm_config.max_iter, False
    )


def _score(folds, subset, svm_config, pooled=True):
    cfg = _raw_config(svm_config)
    correct, total, per_fold = 0, 0, []
    for fd in folds:
        if len(fd.test) == 0:
            continue
        model = train_svm(fd.X_train[:, subset], fd.y_train, cfg)
        hits = int(np.sum(predict(model, fd.X_test[:, subset]) == fd.y_test))
        correct += hits
        total += len(fd.test)
        per_fold.append(hits / len(fd.test))
    return correct / total if pooled else float(np.mean(per_fold))


def cv_accuracy(features, subset, fold_plan, svm_config=SvmConfig(), pooled=True, folds=None) -> float:
    """Cross-validated accuracy of an SVM on the columns in ``subset``.

    ``features`` is a :class:`FeatureMatrix` or a :class:`BowFeatureSource`
    (dictionaries re-fit per fold). Pooled accuracy is total correct over
    total subjects; ``pooled=False`` averages per-fold accuracies.
    """
    subset = list(subset)
    if not subset:
        raise EmptySubset("feature subset is empty")
    if folds is None:
        folds = prepare_folds(features, fold_plan)
    return _score(folds, subset, svm_config, pooled)


@dataclass(frozen=True)
class SelectionTrace:
    steps: tuple  # (feature index, CV accuracy after adding it)
    subset: tuple
    accuracy: float
    feature_names: tuple = ()

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("step,feature_index,feature_name,cv_accuracy\n")
            for n, (idx, acc) in enumerate(self.steps, 1):
                name = str(self.feature_names[idx]) if self.feature_names else ""
                fh.write(f"{n},{idx},{name},{acc!r}\n")

    def to_json(self) -> str:
        return json.dumps(
            {
                "steps": [
                    {
                        "feature_index": int(i),
                        "feature_name": str(self.feature_names[i]) if self.feature_names else None,
                        "cv_accuracy": a,
                    }
                    for i, a in self.steps
                ],
                "subset": [int(i) for i in self.subset],
                "accuracy": self.accuracy,
            },
            indent=2,
        )


def greedy_forward_select(features, candidates, fold_plan, svm_config=SvmConfig(), max_size=None,
                          n_jobs=1, pooled=True, folds=None) -> SelectionTrace:
    """Add, one per round, the candidate giving the highest CV accuracy.

    Ties go to the lowest feature index. Selection stops when no candidate
    strictly improves on the current accuracy or ``max_size`` is reached.
    """
    candidates = sorted(set(int(c) for c in candidates))
    if not candidates:
        raise ValueError("at least one candidate feature is required")
    if folds is None:
        folds = prepare_folds(features, fold_plan)
    max_size = len(candidates) if max_size is None else max_size
    chosen, steps, best = [], [], -np.inf
    pool = ThreadPoolExecutor(max_workers=n_jobs) if n_jobs > 1 else None
    try:
        while len(chosen) < max_size:
            remaining = [c for c in candidates if c not in chosen]
            if not remaining:
                break

            def evaluate(c):
                return _score(folds, chosen + [c], svm_config, pooled)

            scores = list(pool.map(evaluate, remaining)) if pool else [evaluate(c) for c in remaining]
            top = int(np.argmax(scores))  # first maximum = lowest index
            if not scores[top] > best:
                break
            best = scores[top]
            chosen.append(remaining[top])
            steps.append((remaining[top], best))
    finally:
        if pool:
            pool.shutdown()
    names = tuple(getattr(features, "feature_names", ()))
    return SelectionTrace(tuple(steps), tuple(chosen), float(best) if steps else 0.0, names)
