"""Run configuration and end-to-end runners shared by the CLI and the notebooks."""

from __future__ import annotations

import copy
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .bow import BowConfig, build_bow_feature_table, extract_all_patches, fit_dictionaries, write_histograms
from .core import (
    ALL_METRICS,
    ATOMIC_REGIONS,
    BOW_METRICS,
    BOW_REGIONS,
    CLINICAL_FEATURES,
    MtbiError,
    derive_seed,
)
from .ingest import Dataset, validate_dataset
from .roi import RoiConfig, build_mean_feature_table
from .selection import BowFeatureSource, greedy_forward_select, prepare_folds, stratified_kfold
from .svm import SvmConfig, train_svm

APPROACHES = ("roi-means", "bow")

DEFAULTS = {
    "dataset": None,
    "output": "out",
    "approach": "both",
    "seed": 0,
    "threads": None,
    "roi": {
        "metrics": [str(m) for m in ALL_METRICS],
        "regions": [str(r) for r in ATOMIC_REGIONS],
        "clinical": list(CLINICAL_FEATURES),
    },
    "bow": {
        "metrics": [str(m) for m in BOW_METRICS],
        "regions": [str(r) for r in BOW_REGIONS],
        "clinical": list(CLINICAL_FEATURES),
        "words_per_class": 10,
        "patch_size": 16,
        "stride": 8,
        "normalize_patches": False,
        "max_iter": 300,
        "tol": 1e-6,
        "leakage": "safe",
    },
    "svm": {"C": 1.0, "kernel": "rbf", "gamma": None, "tol": 1e-4, "max_iter": 100000},
    "cv": {"folds": 10, "pooled": True, "max_size": None},
}


class ConfigError(MtbiError):
    pass


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be a mapping")
            out[key] = _merge(base[key], value, path + key + ".")
        else:
            out[key] = value
    return out


def set_dotted(cfg: dict, assignment: str) -> None:
    """Apply ``a.b=value`` (value parsed as YAML) to a nested config dict."""
    key, sep, raw = assignment.partition("=")
    if not sep:
        raise ConfigError(f"override {assignment!r} is not key=value")
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"unknown config key {key!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = yaml.safe_load(raw)


@dataclass
class RunConfig:
    """Resolved run configuration; ``raw`` is the nested dict form."""

    raw: dict

    @classmethod
    def load(cls, path=None, overrides=(), base_dir=None) -> "RunConfig":
        data = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fh:
                    data = yaml.safe_load(fh) or {}
            except (OSError, yaml.YAMLError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
            if not isinstance(data, dict):
                raise ConfigError(f"config {path} must be a mapping")
            base_dir = Path(path).parent if base_dir is None else base_dir
        raw = _merge(DEFAULTS, data)
        for o in overrides:
            set_dotted(raw, o)
        base_dir = Path(base_dir or ".")
        for key in ("dataset", "output"):
            if raw[key] is not None and not os.path.isabs(raw[key]):
                raw[key] = str(base_dir / raw[key])
        cfg = cls(raw)
        cfg.check()
        return cfg

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        cfg = cls(_merge(DEFAULTS, data))
        cfg.check()
        return cfg

    def check(self):
        if self.raw["approach"] not in APPROACHES + ("both",):
            raise ConfigError(f"approach must be roi-means, bow or both, not {self.raw['approach']!r}")
        if self.raw["bow"]["leakage"] not in ("safe", "fast"):
            raise ConfigError("bow.leakage must be 'safe' or 'fast'")
        try:
            self.roi, self.bow, self.svm
        except (ValueError, TypeError, MtbiError) as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def approaches(self):
        a = self.raw["approach"]
        return APPROACHES if a == "both" else (a,)

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def roi(self) -> RoiConfig:
        return RoiConfig(**self.raw["roi"])

    @property
    def bow(self) -> BowConfig:
        b = dict(self.raw["bow"])
        b.pop("leakage")
        return BowConfig(**b)

    @property
    def svm(self) -> SvmConfig:
        return SvmConfig(**self.raw["svm"])

    def digest(self) -> str:
        """SHA-256 of the canonical JSON config, excluding the thread count."""
        raw = dict(self.raw)
        raw.pop("threads", None)
        return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()


def feature_source(dataset: Dataset, cfg: RunConfig, approach: str):
    """Static table for approach 1 or fast BoW; a per-fold BoW source otherwise."""
    if approach == "roi-means":
        return build_mean_feature_table(dataset, cfg.roi)
    source = BowFeatureSource.from_dataset(dataset, cfg.bow, cfg.seed)
    if cfg.raw["bow"]["leakage"] == "fast":
        return source.fit_matrix(np.arange(len(dataset.subjects)), tag="all")
    return source


def full_table(dataset: Dataset, cfg: RunConfig, approach: str):
    """Feature table over all subjects; BoW dictionaries fit on every subject."""
    if approach == "roi-means":
        return build_mean_feature_table(dataset, cfg.roi), {}
    patches = extract_all_patches(dataset, cfg.bow)
    labels = dict(zip(dataset.subject_ids, dataset.labels))
    dicts = fit_dictionaries(patches, labels, dataset.subject_ids, cfg.bow, derive_seed(cfg.seed, "dict/all"))
    return build_bow_feature_table(dataset, dicts, cfg.bow, patches), dicts


def open_dataset(cfg: RunConfig, approaches=None) -> Dataset:
    if not cfg.raw["dataset"]:
        raise ConfigError("no dataset configured")
    dataset = Dataset.open(cfg.raw["dataset"])
    metrics, regions = set(), set()
    for a in approaches or cfg.approaches:
        c = cfg.roi if a == "roi-means" else cfg.bow
        metrics |= set(c.metrics)
        regions |= set(c.regions)
    report = validate_dataset(dataset.manifest, sorted(metrics, key=str), sorted(regions, key=str))
    if report:
        raise MtbiError("dataset failed validation: " + "; ".join(str(i) for i in report))
    return dataset


def run_features(cfg: RunConfig, out_dir) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = open_dataset(cfg)
    written = {}
    for a in cfg.approaches:
        table, dicts = full_table(dataset, cfg, a)
        path = out / f"features_{a}.csv"
        table.to_csv(path)
        written[a] = path
        if dicts:
            (out / "dictionaries").mkdir(exist_ok=True)
            for (m, r), d in dicts.items():
                d.save(out / "dictionaries" / f"{m}_{r}.dict")
    return written


def run_select(cfg: RunConfig, out_dir, threads=1) -> dict:
    """Greedy selection per approach; writes traces, run logs, tables and final models."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = open_dataset(cfg)
    plan = stratified_kfold(dataset.labels, cfg.raw["cv"]["folds"], cfg.seed)
    traces = {}
    for a in cfg.approaches:
        source = feature_source(dataset, cfg, a)
        folds = prepare_folds(source, plan)
        n = source.n_features
        trace = greedy_forward_select(
            source,
            range(n),
            plan,
            cfg.svm,
            max_size=cfg.raw["cv"]["max_size"],
            n_jobs=threads,
            pooled=cfg.raw["cv"]["pooled"],
            folds=folds,
        )
        trace.to_csv(out / f"selection_{a}.csv")
        log = {
            "approach": a,
            "seed": cfg.seed,
            "config": {k: v for k, v in cfg.raw.items() if k not in ("threads", "output")},
            "folds": {"k": plan.k, "assignments": plan.assignments.tolist()},
            "trace": json.loads(trace.to_json()),
        }
        with open(out / f"selection_{a}.json", "w", encoding="utf-8") as fh:
            json.dump(log, fh, indent=2, sort_keys=True)
            fh.write("\n")
        table, dicts = full_table(dataset, cfg, a)
        table.to_csv(out / f"features_{a}.csv")
        if trace.subset:
            model = train_svm(table.values[:, list(trace.subset)], table.labels, cfg.svm)
            model.save(out / f"model_{a}.svm")
        if dicts:
            (out / "dictionaries").mkdir(exist_ok=True)
            for (m, r), d in dicts.items():
                d.save(out / "dictionaries" / f"{m}_{r}.dict")
        traces[a] = trace
    return traces


def run_histograms(cfg: RunConfig, out_dir, subject_ids) -> list:
    out = Path(out_dir) / "histograms"
    out.mkdir(parents=True, exist_ok=True)
    dataset = open_dataset(cfg, approaches=("bow",))
    for sid in subject_ids:
        if sid not in dataset.subject_ids:
            raise MtbiError(f"unknown subject {sid!r}")
    patches = extract_all_patches(dataset, cfg.bow)
    labels = dict(zip(dataset.subject_ids, dataset.labels))
    dicts = fit_dictionaries(patches, labels, dataset.subject_ids, cfg.bow, derive_seed(cfg.seed, "dict/all"))
    paths = []
    for sid in subject_ids:
        p = out / f"{sid}.csv"
        write_histograms(p, dataset.manifest.subject(sid), patches, dicts, cfg.bow)
        paths.append(p)
    return paths
