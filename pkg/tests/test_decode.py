# SPDX-License-Identifier: MIT

import itertools
import re

import numpy as np
import pytest

from bidan.decode import (
    Hypothesis,
    beam_search,
    default_max_len,
    generation_mask,
    greedy_decode,
    greedy_decode_batch,
    log_distribution,
)
from bidan.errors import InputError
from bidan.model import BiDAN, Decoder, ModelConfig
from bidan.objectives import Batch, loss_j2, sample_rollout
from bidan.scheduler import sgd_step
from bidan.tensor import ComputeGraph
from bidan.vocab import BOS, EOS


SOURCE = [1, 4, 5, 6, 2]


def _oracle_model(seed):
    config = ModelConfig(
        src_vocab_size=7,
        tgt_vocab_size=5,
        layers=1,
        units=4,
        embed=3,
        dropout=0.0,
        init_scale=1.0,
    )
    return BiDAN.initialize(config, seed)


def _score(model, source, tokens):
    graph = ComputeGraph()
    enc = model.encode(graph, [source])
    state = model.initial_state(graph, Decoder.D1, enc)
    total, prev = 0.0, BOS
    for token in tokens:
        out = model.decoder_step(graph, Decoder.D1, state, [prev], enc)
        total += float(log_distribution(out.logits.value)[0, token])
        state, prev = out.state, token
    return total


def _all_outputs(max_len):
    # emit ids of a five-word vocabulary: EOS, UNK and one content word
    content = (3, 4)
    for length in range(1, max_len + 1):
        for body in itertools.product(content, repeat=length - 1):
            yield (*body, EOS)
    yield from itertools.product(content, repeat=max_len)


def test_beam_search_finds_the_best_sequence():
    for seed in range(20):
        model = _oracle_model(seed)
        scored = {tokens: _score(model, SOURCE, tokens) for tokens in _all_outputs(4)}
        assert len(scored) == 1 + 2 + 4 + 8 + 16
        best = max(scored, key=scored.__getitem__)
        result = beam_search(model, Decoder.D1, SOURCE, beam_size=25, max_len=4)
        assert result[0].tokens == best
        assert result[0].log_prob == pytest.approx(scored[best], rel=1e-5, abs=1e-5)
        for narrow in (1, 2, 3):
            top = beam_search(model, Decoder.D1, SOURCE, beam_size=narrow, max_len=4)[0]
            assert top.log_prob <= result[0].log_prob + 1e-5


def test_beam_of_one_is_greedy(tiny_model, sources):
    for seed in range(10):
        model = BiDAN.initialize(tiny_model.config, seed)
        for source in sources:
            best = beam_search(model, Decoder.D1, source, beam_size=1)
            assert len(best) == 1
            assert best[0].sequence == greedy_decode(model, Decoder.D1, source)


def test_beam_results(tiny_model):
    result = beam_search(tiny_model, Decoder.D1, SOURCE, beam_size=6, max_len=5)
    assert len(result) == 6
    assert len({h.tokens for h in result}) == 6
    scores = [h.score() for h in result]
    assert scores == sorted(scores, reverse=True)
    for hyp in result:
        assert 1 <= len(hyp.tokens) <= 5
        assert all(token >= EOS for token in hyp.tokens)
        assert EOS not in hyp.tokens[:-1]
        assert hyp.finished == (hyp.tokens[-1] == EOS)
        assert hyp.log_prob <= 0
        assert hyp.sequence[0] == BOS


def test_length_normalised_ranking(tiny_model):
    result = beam_search(tiny_model, Decoder.D1, SOURCE, beam_size=4, length_norm=True)
    scores = [h.score(length_norm=True) for h in result]
    assert scores == sorted(scores, reverse=True)


def test_reconstruction_decoder(tiny_model):
    result = beam_search(tiny_model, Decoder.D2, SOURCE, beam_size=3)
    assert all(max(h.tokens) < 9 for h in result)


@pytest.mark.parametrize(
    ('source', 'kwargs', 'message'),
    [
        ([1, 2], {}, 'Cannot decode an empty source sentence'),
        ([4, 5, 2], {}, 'Source must be framed by BOS and EOS'),
        (SOURCE, {'beam_size': 0}, 'Beam size must be at least 1 (got 0)'),
        (SOURCE, {'max_len': 0}, 'Maximum length must be at least 1 (got 0)'),
    ],
)
def test_beam_search_errors(tiny_model, source, kwargs, message):
    with pytest.raises(InputError, match=re.escape(message)):
        beam_search(tiny_model, Decoder.D1, source, **kwargs)


def test_batched_greedy_matches_single(tiny_model, sources):
    batched = greedy_decode_batch(tiny_model, Decoder.D1, sources, max_len=6)
    for source, output in zip(sources, batched):
        assert output == greedy_decode(tiny_model, Decoder.D1, source, max_len=6)
        assert output[0] == BOS
        assert 2 <= len(output) <= 7


def test_greedy_respects_the_length_cap(tiny_model):
    output = greedy_decode(tiny_model, Decoder.D2, SOURCE, max_len=1)
    assert len(output) == 2


def test_generation_mask():
    np.testing.assert_array_equal(generation_mask(5), [False, False, True, True, True])


def test_log_distribution():
    logits = np.random.default_rng(0).normal(size=(3, 6)).astype(np.float32)
    log_probs = log_distribution(logits)
    assert log_probs.dtype == np.float64
    assert np.all(np.isneginf(log_probs[:, :2]))
    np.testing.assert_allclose(np.exp(log_probs).sum(axis=-1), 1.0)


@pytest.mark.parametrize(
    ('source', 'expected'),
    [([1, 2], 5), ([1, 4, 2], 7), ([1, 4, 5, 6, 2], 11)],
)
def test_default_max_len(source, expected):
    assert default_max_len(source) == expected


def test_hypothesis_score():
    hyp = Hypothesis((4, 5, 2), -3.0, finished=True)
    assert hyp.score() == -3.0
    assert hyp.score(length_norm=True) == -1.0
    assert hyp.sequence == [BOS, 4, 5, 2]
    assert Hypothesis((), 0.0).score(length_norm=True) == 0.0


COPY_SENTENCES = [
    [1, 4, 5, 2],
    [1, 5, 4, 2],
    [1, 6, 7, 4, 2],
    [1, 7, 6, 2],
    [1, 4, 6, 5, 2],
    [1, 7, 5, 2],
]


def _copies_everything(model):
    return all(greedy_decode(model, Decoder.D2, x) == x for x in COPY_SENTENCES)


@pytest.mark.slow
def test_trained_copy_model_returns_its_input():
    config = ModelConfig(
        src_vocab_size=8, tgt_vocab_size=8, layers=1, units=32, embed=16, dropout=0.0
    )
    model = BiDAN.initialize(config, seed=1)
    batch = Batch.of(COPY_SENTENCES)
    for step in range(1, 4001):
        result = loss_j2(model, batch)
        sgd_step(model.params, result.grads, lr=1.0, clip_norm=5.0)
        if step % 200 == 0 and _copies_everything(model):
            break
    assert _copies_everything(model)
    for x in COPY_SENTENCES:
        rollout = sample_rollout(model, x, np.random.default_rng(0), greedy=True)
        assert rollout.tokens == tuple(x[1:])
