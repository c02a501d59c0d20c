# tests/conftest.py

import numpy as np
import pytest

from cia_ids.domain_knowledge import load_domain_knowledge
from cia_ids.flow_store import FlowDataset, FlowSchema

DOMAIN_FEATURES = load_domain_knowledge().feature_map.original_names
EXTRA_FEATURES = ("Destination Port", "Total Fwd Packets", "Flow Bytes/s")


def make_flows(counts, seed=0, extra=EXTRA_FEATURES, separation=3.0):
    """Gaussian flows: benign centred at 0, each attack shifted by its own offset."""
    rng = np.random.default_rng(seed)
    names = tuple(DOMAIN_FEATURES) + tuple(extra)
    blocks, labels = [], []
    for position, (label, n_rows) in enumerate(counts.items()):
        shift = 0.0 if label == "BENIGN" else separation + position
        blocks.append(rng.normal(shift, 1.0, size=(n_rows, len(names))))
        labels += [label] * n_rows
    return FlowDataset(FlowSchema(names), np.vstack(blocks), labels)


@pytest.fixture
def flow_factory():
    return make_flows


@pytest.fixture
def flows():
    """160 benign rows and three attacks (80 malicious rows), 24 features."""
    return make_flows({"BENIGN": 160, "DDoS": 40, "PortScan": 30, "Bot": 10})


@pytest.fixture
def small_flows():
    """Two-feature toy dataset with readable values."""
    schema = FlowSchema(("f0", "f1"))
    features = [[0.0, 5.0], [1.0, 4.0], [2.0, 3.0], [3.0, 2.0],
                [10.0, 1.0], [11.0, 0.0], [12.0, 1.0], [13.0, 0.0]]
    labels = ["BENIGN"] * 4 + ["DDoS"] * 4
    return FlowDataset(schema, features, labels)


@pytest.fixture(autouse=True)
def output_dir(tmp_path, monkeypatch):
    """Keep logs and reports inside the test's temporary directory."""
    out = tmp_path / "out"
    monkeypatch.setenv("CIA_IDS_OUTPUT_DIR", str(out))
    return out
