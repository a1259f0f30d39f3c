from __future__ import annotations

import os
from pathlib import Path

import hypothesis
import numpy as np
import pytest

from fedft import data, nn
from fedft.synthetic import generate_nslkdd_like

hypothesis.settings.register_profile("default", max_examples=50, deadline=None)
hypothesis.settings.register_profile("thorough", max_examples=300, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

REPO_ROOT = Path(__file__).resolve().parent.parent


def nslkdd_dir() -> Path:
    return Path(os.environ.get("FEDFT_DATA_DIR", REPO_ROOT / "data"))


def require_nslkdd() -> tuple[Path, Path]:
    """Real dataset paths, or skip with a pointer to the fetch script."""
    d = nslkdd_dir()
    train, test = d / "KDDTrain+.txt", d / "KDDTest+.txt"
    if not train.exists() or not test.exists():
        pytest.skip(
            f"real NSL-KDD files not found under {d} "
            "(run scripts/fetch_nslkdd.py or set FEDFT_DATA_DIR)"
        )
    return train, test


@pytest.fixture(scope="session")
def vocab() -> data.CategoryVocab:
    return data.CategoryVocab()


@pytest.fixture(scope="session")
def small_arch() -> nn.Architecture:
    return nn.Architecture.build(input_dim=8, conv_channels=(3, 5, 7), fc_hidden=(9, 6))


@pytest.fixture(scope="session")
def default_arch() -> nn.Architecture:
    return nn.Architecture.default(20)


@pytest.fixture(scope="session")
def demo_records(vocab) -> data.RecordSet:
    return data.parse_csv(generate_nslkdd_like(6000, seed=11), source_name="demo")


@pytest.fixture(scope="session")
def demo_bundle(vocab) -> data.DatasetBundle:
    """Small but realistic bundle: 3 clients x 3000 rows, proxy 2700, eval 300."""
    train = data.parse_csv(generate_nslkdd_like(9000, seed=5), source_name="demo-train")
    test = data.parse_csv(generate_nslkdd_like(3000, seed=6), source_name="demo-test")
    parts = data.prepare_client_partitions(train, vocab, 3, 20, partition_seed=2)
    proxy, eval_set = data.prepare_server_split(test, vocab, 20, 0.1, partition_seed=2)
    return data.DatasetBundle(partitions=parts, proxy=proxy, eval_set=eval_set)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
