import os
import sys

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from firzen.data import build_normal_cold_splits, build_strict_cold_splits  # noqa: E402
from firzen.graphs import build_frozen_graphs  # noqa: E402
from firzen.synthetic import SyntheticSpec, generate_synthetic  # noqa: E402

settings.register_profile("repo", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


@pytest.fixture(autouse=True)
def _quiet_torch():
    torch.set_num_threads(1)
    yield


@pytest.fixture(scope="session")
def tiny_world():
    """Small synthetic dataset with split, normal-cold partition and frozen graphs."""
    ds, kg, feats, clusters = generate_synthetic(SyntheticSpec(n_users=60, n_items=40, n_clusters=4, seed=3))
    split = build_normal_cold_splits(build_strict_cold_splits(ds, 0.25, seed=1), seed=1)
    bundle = build_frozen_graphs(split, kg, feats, k_item=5, k_user=5)
    return {"ds": ds, "kg": kg, "features": feats, "clusters": clusters, "split": split, "bundle": bundle}


def dense(m):
    return np.asarray(m.todense()) if hasattr(m, "todense") else np.asarray(m)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """``record(label, title, ok, detail)`` logs one PASS/FAIL line and returns ``ok``."""
    def record(label, title, ok, detail=""):
        line = f"acceptance {label} {'PASS' if ok else 'FAIL'}: {title}" + (f" [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
