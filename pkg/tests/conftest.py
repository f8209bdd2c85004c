import numpy as np
import pytest

from fedchat.ingest import build_corpus, read_text_dir
from fedchat.tinylm import ModelConfig, init_params

SEED_CORPUS_DIR = "tests/fixtures/seed_corpus"
FIXED_TIME = "2026-01-01T00:00:00Z"


@pytest.fixture(scope="session")
def config():
    return ModelConfig(n_layers=2, d_model=64, n_heads=4, d_ff=256, context_len=128, seed=0)


@pytest.fixture(scope="session")
def params(config):
    return init_params(config)


@pytest.fixture(scope="session")
def tiny_config():
    # Small enough for brute-force oracles, same structure as the default.
    return ModelConfig(n_layers=1, d_model=16, n_heads=2, d_ff=32, context_len=16, seed=3)


@pytest.fixture(scope="session")
def tiny_params(tiny_config):
    return init_params(tiny_config)


@pytest.fixture(scope="session")
def seed_documents():
    return read_text_dir(SEED_CORPUS_DIR, fetched_at=FIXED_TIME)


@pytest.fixture(scope="session")
def seed_corpus(seed_documents):
    return build_corpus(seed_documents, created_at=FIXED_TIME)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
