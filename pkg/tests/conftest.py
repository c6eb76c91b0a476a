# SPDX-License-Identifier: MIT

import numpy as np
import pytest

from bidan.config import ExperimentConfig
from bidan.corpus import EncodedCorpus, generate_synthetic_task
from bidan.model import BiDAN, ModelConfig


def pytest_addoption(parser):
    parser.addoption(
        '--run-slow',
        action='store_true',
        default=False,
        help='run the desk-scale learning experiments',
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption('--run-slow'):
        return
    skip = pytest.mark.skip(reason='needs --run-slow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skip)


TINY = ModelConfig(
    src_vocab_size=9,
    tgt_vocab_size=8,
    layers=1,
    units=5,
    embed=3,
    dropout=0.0,
    init_scale=0.5,
)


@pytest.fixture()
def tiny_config():
    return TINY


@pytest.fixture()
def tiny_model():
    return BiDAN.initialize(TINY, seed=7)


@pytest.fixture()
def tiny_model64():
    model = BiDAN.initialize(TINY, seed=7)
    return BiDAN(model.params.astype(np.float64))


@pytest.fixture()
def sources():
    return [[1, 4, 5, 6, 2], [1, 7, 8, 2], [1, 4, 2]]


@pytest.fixture()
def targets():
    return [[1, 4, 5, 2], [1, 6, 7, 4, 5, 2], [1, 5, 2]]


@pytest.fixture()
def train_config():
    return ExperimentConfig().with_overrides(
        model={'layers': 1, 'units': 8, 'embed': 4, 'dropout': 0.1},
        schedule={
            'lambda_a': 1,
            'lambda_d': 1,
            'lambda_r': 1,
            'eval_every': 3,
            'dev_bleu_sentences': 4,
            'joint_max_steps': 0,
            'frozen_max_steps': 0,
        },
        optim={
            'total_steps': 6,
            'batch_size': 4,
            'baseline_batch_size': 4,
            'halve_start': 4,
            'halve_every': 2,
        },
        data={
            'kind': 'reverse',
            'vocab_size': 6,
            'min_len': 2,
            'max_len': 4,
            'train_pairs': 16,
            'dev_pairs': 4,
            'test_pairs': 4,
        },
        seed=3,
    )


@pytest.fixture()
def tiny_corpus():
    corpus = generate_synthetic_task('reverse', 6, (2, 4), 16, seed=3, n_dev=4, n_test=4)
    return EncodedCorpus.build(corpus, ExperimentConfig().data)
