import numpy as np
import pytest

from curriswap import data


@pytest.fixture(scope="session")
def small_splits():
    """A tiny synthetic corpus shared by model and training tests."""
    spec = data.SynthSpec(src_vocab=14, tgt_vocab=14, min_len=3, max_len=5, seed=3)
    return data.generate_corpus(spec, train=24, dev=8, test=6)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
