# SPDX-License-Identifier: MIT

"""Desk-scale learning experiments; run with ``pytest --run-slow``."""

import math

import pytest

from bidan.config import ExperimentConfig
from bidan.corpus import EncodedCorpus
from bidan.experiments import (
    build_model,
    evaluate_bleu,
    lambda_sweep,
    swap_protocol,
    synthetic_corpus,
)
from bidan.scheduler import train


pytestmark = pytest.mark.slow


@pytest.fixture(scope='module')
def desk():
    return ExperimentConfig()


@pytest.fixture(scope='module')
def desk_corpus(desk):
    return EncodedCorpus.build(synthetic_corpus(desk), desk.data)


def _finite(log):
    return all(
        loss is None or math.isfinite(loss)
        for record in log
        for loss in (record.j1_loss, record.aux_loss, record.dev_loss)
    )


def test_baseline_and_bidan_learn_the_mapped_reverse_task(desk, desk_corpus):
    baseline_config = desk.with_overrides(schedule={'phase_gate': 'immediate'})
    baseline = train(build_model(baseline_config, desk_corpus), desk_corpus, baseline_config)
    baseline_bleu = evaluate_bleu(baseline.model, desk_corpus).bleu
    assert baseline_bleu >= 0.90

    bidan = train(build_model(desk, desk_corpus), desk_corpus, desk)
    assert _finite(bidan.log)
    assert bidan.state.skipped_steps == 0
    assert evaluate_bleu(bidan.model, desk_corpus).bleu >= baseline_bleu - 0.01


def test_encoder_swap_ordering(desk):
    rows = {row.encoder: row.report.bleu for row in swap_protocol(desk, workers=3)}
    assert rows['original'] >= rows['random'] + 0.3
    assert rows['BiDAN donor'] >= rows['plain donor']


def test_dropping_autoencoding_hurts(desk, desk_corpus):
    rows = lambda_sweep(desk, range(7), desk_corpus, workers=4)
    by_value = {row.lambda_a: row.test_bleu for row in rows}
    assert by_value[0] < max(by_value[value] for value in range(1, 7))
