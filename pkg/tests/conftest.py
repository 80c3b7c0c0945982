import numpy as np
import pytest

from transblstm.autodiff import precision, set_debug
from transblstm.data import SyntheticSpec, TokenizedCorpus, gen_synthetic_corpus


@pytest.fixture(autouse=True)
def _debug_mode():
    """Any non-finite forward value raises during tests."""
    set_debug(True)
    yield
    set_debug(False)


@pytest.fixture
def f64():
    with precision("float64"):
        yield


@pytest.fixture(scope="session")
def synthetic():
    return gen_synthetic_corpus(SyntheticSpec(), np.random.default_rng(0))


@pytest.fixture(scope="session")
def tokenized(synthetic):
    return TokenizedCorpus.build(synthetic.corpus, synthetic.vocab)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
