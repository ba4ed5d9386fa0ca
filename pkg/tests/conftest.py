import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mtbi_dmri.core import MTBI, CONTROL, SubjectRecord
from mtbi_dmri.ingest import Dataset, MetricVolume, RoiMask, write_manifest, write_mask, write_volume
from mtbi_dmri.synthetic import PhantomSpec, generate_phantom, texture_spec


@pytest.fixture(scope="session")
def texture_dataset(tmp_path_factory):
    d = tmp_path_factory.mktemp("texture")
    return Dataset.open(generate_phantom(texture_spec(seed=3, n_per_class=10), d))


@pytest.fixture(scope="session")
def small_phantom(tmp_path_factory):
    d = tmp_path_factory.mktemp("small")
    return generate_phantom(PhantomSpec(n_per_class=2, seed=1), d)


def write_subject(root, sid, label, volumes, mask, **clinical):
    """Write one subject's volumes and mask; returns its SubjectRecord."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = {}
    for metric, data in volumes.items():
        p = root / f"{sid}_{metric}.vol"
        write_volume(p, MetricVolume(data, metric, sid))
        paths[metric] = str(p)
    mp = root / f"{sid}_mask.vol"
    write_mask(mp, mask if isinstance(mask, RoiMask) else RoiMask(mask, subject_id=sid))
    return SubjectRecord(sid, label, volume_paths=paths, mask_path=str(mp), **clinical)


@pytest.fixture
def make_dataset(tmp_path):
    """Build a manifest from ``[(sid, label, {metric: array}, mask, clinical)]``."""

    def build(entries, metrics=None):
        recs = [write_subject(tmp_path / "vols", *e[:4], **(e[4] if len(e) > 4 else {})) for e in entries]
        ms = metrics or sorted({m for e in entries for m in e[2]}, key=str)
        write_manifest(tmp_path / "manifest.csv", recs, ms)
        return Dataset.open(tmp_path / "manifest.csv")

    return build


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


__all__ = ["MTBI", "CONTROL"]


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
