import numpy as np
import pytest
import torch

from nextvisit.core.config import load as load_config
from nextvisit.model.transformer import ModelConfig, init_params
from nextvisit.tokenize.vocab import TokenizedTrajectory, TokenizedVisit


def pytest_collection_modifyitems(config, items):
    if config.getoption('markexpr'):
        return
    skip = pytest.mark.skip(reason="slow, select with -m slow")
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def config():
    return load_config(isolated=True)


@pytest.fixture
def traj():
    """``traj(*visits)`` with visits given as ``(day, token_ids)``."""
    def make(*visits, patient_id='p0'):
        return TokenizedTrajectory(patient_id, [
            TokenizedVisit(tuple(sorted(set(ids))), day)
            for day, ids in visits
        ])
    return make


@pytest.fixture
def random_trajs():
    """``random_trajs(rng, n, vocab_size)`` with 2-5 visits of 1-4 event
    tokens each."""
    def make(rng, n, vocab_size, max_visits=5, max_events=4):
        result = []
        for i in range(n):
            n_visits = int(rng.integers(2, max_visits + 1))
            days = np.concatenate(
                [[0], np.cumsum(rng.integers(1, 200, n_visits - 1))])
            visits = [
                TokenizedVisit(tuple(sorted(set(
                    int(x) for x in rng.integers(
                        2, vocab_size, int(rng.integers(1, max_events + 1)))
                ))), int(day))
                for day in days
            ]
            result.append(TokenizedTrajectory('p{}'.format(i), visits))
        return result
    return make


@pytest.fixture
def tiny_model():
    """``tiny_model(vocab_size, **kwargs)`` in double precision."""
    def make(vocab_size=64, seed=0, **kwargs):
        options = dict(n_layer=2, n_head=2, n_embd=32, vocab_size=vocab_size,
                       block_size=64, rotary_base=10000.0, bias=False,
                       dropout=0.0)
        options.update(kwargs)
        return init_params(ModelConfig(**options).validate(), seed,
                           dtype=torch.float64)
    return make
