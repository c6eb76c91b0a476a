# SPDX-License-Identifier: MIT

import dataclasses
import math
import re

import numpy as np
import pytest

from bidan.config import PROFILES
from bidan.decode import greedy_decode
from bidan.errors import ConfigurationError, InputError
from bidan.model import (
    BiDAN,
    Decoder,
    EncoderStates,
    ModelConfig,
    ModelParameters,
    Partition,
    init_parameters,
    pad_batch,
    parameter_shapes,
)
from bidan.tensor import ComputeGraph, grad_check


@pytest.mark.parametrize(
    ('score', 'present', 'absent'),
    [
        (
            'additive',
            {'dec1.attn.w1': (10, 5), 'dec1.attn.w2': (5, 5), 'dec1.attn.v': (5, 1)},
            'dec1.attn.w',
        ),
        ('bilinear', {'dec1.attn.w': (10, 5)}, 'dec1.attn.w1'),
        ('concat', {'dec1.attn.w': (15, 1)}, 'dec1.attn.v'),
    ],
)
def test_attention_parameter_shapes(tiny_config, score, present, absent):
    shapes = parameter_shapes(dataclasses.replace(tiny_config, score=score))
    for name, shape in present.items():
        assert shapes[name] == shape
    assert absent not in shapes
    assert shapes['dec2.attn.wa'] == (15, 5)


def test_parameter_shapes(tiny_config):
    shapes = parameter_shapes(tiny_config)
    assert shapes['enc.embed'] == (9, 3)
    assert shapes['dec1.embed'] == (8, 3)
    assert shapes['dec2.embed'] == (9, 3)
    assert shapes['dec1.out.wp'] == (5, 8)
    assert shapes['dec2.out.bp'] == (9,)
    assert shapes['enc.bwd.0.wx'] == (3, 20)
    assert shapes['dec1.lstm.0.wx'] == (8, 20)
    no_feeding = parameter_shapes(dataclasses.replace(tiny_config, input_feeding=False))
    assert no_feeding['dec1.lstm.0.wx'] == (3, 20)
    deep = parameter_shapes(dataclasses.replace(tiny_config, layers=2))
    assert deep['enc.fwd.1.wx'] == (5, 20)
    assert deep['dec2.lstm.1.wx'] == (5, 20)
    assert deep['dec2.bridge.1.wc'] == (5, 5)


def test_partitions_cover_every_parameter(tiny_model):
    params = tiny_model.params
    parts = {partition: params.names(partition) for partition in Partition}
    assert all(name.startswith('enc.') for name in parts[Partition.ENCODER])
    assert all(name.startswith('dec1.') for name in parts[Partition.DECODER1])
    assert all(name.startswith('dec2.') for name in parts[Partition.DECODER2])
    assert sorted(sum(parts.values(), [])) == params.names()
    assert sum(params.count(p) for p in Partition) == params.count()
    assert Decoder.D2.partition is Partition.DECODER2
    assert Partition.DECODER1.prefix == 'dec1.'


def test_partition_of_unknown_name():
    with pytest.raises(ConfigurationError, match='belongs to no partition'):
        ModelParameters.partition_of('attn.w')


def test_init_parameters(tiny_config):
    first = init_parameters(tiny_config, seed=1)
    second = init_parameters(tiny_config, seed=1)
    other = init_parameters(tiny_config, seed=2)
    assert first.names() == sorted(parameter_shapes(tiny_config))
    for name in first.names():
        np.testing.assert_array_equal(first.tensors[name], second.tensors[name])
        assert first.tensors[name].dtype == np.float32
    assert not np.array_equal(first.tensors['enc.embed'], other.tensors['enc.embed'])
    h = tiny_config.units
    for name in ('enc.fwd.0.b', 'enc.bwd.0.b', 'dec1.lstm.0.b', 'dec2.lstm.0.b'):
        np.testing.assert_array_equal(first.tensors[name][h : 2 * h], np.ones(h))
        assert np.all(np.abs(first.tensors[name][:h]) <= tiny_config.init_scale)
    assert np.all(np.abs(first.tensors['dec1.out.wp']) <= tiny_config.init_scale)


@pytest.mark.parametrize(
    ('changes', 'key'),
    [
        ({'src_vocab_size': 0}, 'model.src_vocab_size'),
        ({'units': 0}, 'model.units'),
        ({'layers': 0}, 'model.layers'),
        ({'score': 'dot'}, 'model.score'),
        ({'dropout': 1.0}, 'model.dropout'),
    ],
)
def test_model_config_validation(tiny_config, changes, key):
    with pytest.raises(ConfigurationError) as info:
        dataclasses.replace(tiny_config, **changes).validate()
    assert info.value.key == key


def test_validate_without_vocabulary():
    ModelConfig().validate(require_vocab=False)
    with pytest.raises(ConfigurationError):
        ModelConfig().validate()


def test_replace_partition(tiny_config):
    target = init_parameters(tiny_config, seed=1)
    donor = init_parameters(tiny_config, seed=2)
    merged = target.replace_partition(Partition.ENCODER, donor.tensors)
    for name in merged.names(Partition.ENCODER):
        np.testing.assert_array_equal(merged.tensors[name], donor.tensors[name])
    for name in merged.names(Partition.DECODER1):
        np.testing.assert_array_equal(merged.tensors[name], target.tensors[name])
    assert merged.tensors['enc.embed'] is not donor.tensors['enc.embed']

    wider = init_parameters(dataclasses.replace(tiny_config, units=6), seed=2)
    with pytest.raises(ConfigurationError, match=re.escape('enc.fwd.0.wh: (5, 20) vs (6, 24)')):
        target.replace_partition(Partition.ENCODER, wider.tensors)


def test_pad_batch():
    ids, mask = pad_batch([[1, 4, 2], [1, 2]])
    np.testing.assert_array_equal(ids, [[1, 4, 2], [1, 2, 0]])
    np.testing.assert_array_equal(mask, [[True, True, True], [True, True, False]])
    with pytest.raises(InputError, match='empty batch'):
        pad_batch([])


def test_encoding_ignores_padding(tiny_model, sources):
    enc = tiny_model.encode(ComputeGraph(), sources)
    assert enc.states.shape == (3, 5, 10)
    np.testing.assert_array_equal(enc.lengths, [5, 4, 3])
    for row, source in enumerate(sources):
        alone = tiny_model.encode(ComputeGraph(), [source])
        np.testing.assert_allclose(
            enc.states.value[row, : len(source)], alone.states.value[0], atol=1e-5
        )
        np.testing.assert_allclose(enc.final.value[row], alone.final.value[0], atol=1e-5)
    np.testing.assert_array_equal(enc.final.value, enc.backward.value[:, 0])


def test_encode_rejects_bad_sources(tiny_model):
    with pytest.raises(InputError, match='framed'):
        tiny_model.encode(ComputeGraph(), [[1]])
    with pytest.raises(InputError, match='Source token id out of range for a vocabulary of 9'):
        tiny_model.encode(ComputeGraph(), [[1, 9, 2]])


@pytest.mark.parametrize('score', ['additive', 'bilinear', 'concat'])
def test_attention_is_masked(tiny_config, sources, score):
    model = BiDAN.initialize(dataclasses.replace(tiny_config, score=score), seed=3)
    graph = ComputeGraph()
    enc = model.encode(graph, sources)
    state = model.initial_state(graph, Decoder.D1, enc)
    attn = model.attention(graph, enc, state.hidden[-1], Decoder.D1)
    weights = attn.weights.value
    np.testing.assert_allclose(weights.sum(axis=-1), 1.0, rtol=1e-6)
    assert np.all(weights[~enc.mask] == 0)
    assert attn.context.shape == (3, 10)
    assert attn.vector.shape == (3, 5)


def test_decoder_steps(tiny_model, sources):
    graph = ComputeGraph()
    enc = tiny_model.encode(graph, sources)
    for which, vocab in ((Decoder.D1, 8), (Decoder.D2, 9)):
        state = tiny_model.initial_state(graph, which, enc)
        out = tiny_model.decoder_step(graph, which, state, [1, 1, 1], enc)
        assert out.logits.shape == (3, vocab)
        assert out.state.feed is out.attention.vector
        probs = tiny_model.distribution(graph, out.logits).value
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, rtol=1e-6)
    with pytest.raises(InputError, match='Decoder input token id out of range'):
        tiny_model.decoder_step(graph, Decoder.D1, state, [8, 1, 1], enc)


def test_unknown_decoder(tiny_model, sources):
    graph = ComputeGraph()
    enc = tiny_model.encode(graph, sources)
    with pytest.raises(ConfigurationError, match='Unknown decoder'):
        tiny_model.initial_state(graph, 'dec3', enc)


def test_teacher_forced_nll(tiny_model, sources, targets):
    graph = ComputeGraph()
    enc = tiny_model.encode(graph, sources)
    nll, tokens = tiny_model.teacher_forced_nll(graph, Decoder.D1, enc, targets)
    assert tokens == 3 + 5 + 2
    assert float(nll.value) > 0
    with pytest.raises(InputError, match='Got 2 targets for 3 encoded sources'):
        tiny_model.teacher_forced_nll(graph, Decoder.D1, enc, targets[:2])


def test_lstm_cell_gradients(tiny_model64):
    for seed in range(10):
        rng = np.random.default_rng(seed)
        graph = ComputeGraph()
        x = graph.param('x', rng.normal(size=(2, 3)))
        h = graph.param('h', rng.normal(size=(2, 5)))
        c = graph.param('c', rng.normal(size=(2, 5)))
        h_next, c_next = tiny_model64.lstm_cell(graph, 'enc.fwd.0', x, h, c)
        loss = graph.sum(h_next * graph.constant(rng.normal(size=(2, 5))) + c_next)
        assert grad_check(graph, loss, max_coordinates=4, rng=rng) < 1e-4


@pytest.mark.parametrize('score', ['additive', 'bilinear', 'concat'])
def test_attention_gradients(tiny_config, sources, score):
    config = dataclasses.replace(tiny_config, score=score)
    model = BiDAN(init_parameters(config, seed=5).astype(np.float64))
    rng = np.random.default_rng(5)
    graph = ComputeGraph()
    enc = model.encode(graph, sources)
    query = graph.param('query', rng.normal(size=(3, 5)))
    attn = model.attention(graph, enc, query, Decoder.D2)
    loss = graph.sum(attn.vector * graph.constant(rng.normal(size=(3, 5))))
    assert grad_check(graph, loss, max_coordinates=3, rng=rng) < 1e-4


@pytest.mark.parametrize(
    ('score', 'input_feeding'),
    [('additive', True), ('bilinear', True), ('concat', True), ('additive', False)],
)
def test_pipeline_gradients(tiny_config, sources, targets, score, input_feeding):
    config = dataclasses.replace(tiny_config, score=score, input_feeding=input_feeding)
    model = BiDAN(init_parameters(config, seed=11).astype(np.float64))
    graph = ComputeGraph()
    enc = model.encode(graph, sources)
    nll, _ = model.teacher_forced_nll(graph, Decoder.D1, enc, targets)
    assert grad_check(graph, nll, max_coordinates=3, rng=np.random.default_rng(11)) < 1e-4


def test_astype_copies(tiny_model):
    wide = tiny_model.params.astype(np.float64)
    assert wide.dtype == np.float64
    assert tiny_model.params.dtype == np.float32
    copied = tiny_model.params.copy()
    copied.tensors['enc.embed'][0, 0] += 1
    assert copied.tensors['enc.embed'][0, 0] != tiny_model.params.tensors['enc.embed'][0, 0]


def _lstm_count(inputs, units):
    return inputs * 4 * units + units * 4 * units + 4 * units


def _closed_form_count(config):
    h, e, layers = config.units, config.embed, config.layers
    encoder = config.src_vocab_size * e + 2 * (
        _lstm_count(e, h) + (layers - 1) * _lstm_count(h, h)
    )

    def decoder(vocab):
        return (
            vocab * e
            + _lstm_count(e + h, h)
            + (layers - 1) * _lstm_count(h, h)
            + layers * 2 * (h * h + h)
            + (2 * h * h + h * h + h)
            + (3 * h * h + h)
            + (h * vocab + vocab)
        )

    return encoder, decoder(config.tgt_vocab_size), decoder(config.src_vocab_size)


def test_desk_parameter_count():
    config = dataclasses.replace(PROFILES['desk'].model, src_vocab_size=40, tgt_vocab_size=50)
    assert (config.layers, config.units, config.embed, config.score) == (2, 64, 32, 'additive')
    params = init_parameters(config, seed=0)
    encoder, decoder1, decoder2 = _closed_form_count(config)
    assert (encoder, decoder1, decoder2) == (116_992, 120_434, 119_464)
    assert params.count(Partition.ENCODER) == encoder
    assert params.count(Partition.DECODER1) == decoder1
    assert params.count(Partition.DECODER2) == decoder2
    assert params.count() == 356_890


def test_reversed_input_gives_the_backward_states(tiny_model):
    source = [1, 4, 7, 5, 6, 2]
    graph = ComputeGraph()
    enc = tiny_model.encode(graph, [source])
    embed = tiny_model.params.tensors['enc.embed']
    h = c = graph.constant(np.zeros((1, tiny_model.config.units), dtype=np.float32))
    explicit = []
    for token in reversed(source):
        x = graph.constant(embed[[token]])
        h, c = tiny_model.lstm_cell(graph, 'enc.bwd.0', x, h, c)
        explicit.append(h.value[0])
    np.testing.assert_allclose(enc.backward.value[0], explicit[::-1], atol=1e-6)

    flipped = tiny_model.run_direction(graph, 'bwd', np.array([source[::-1]]))
    np.testing.assert_allclose(
        enc.backward.value[0], [step.value[0] for step in reversed(flipped)], atol=1e-6
    )


@pytest.mark.parametrize('score', ['additive', 'bilinear', 'concat'])
def test_attention_matches_scalar_evaluation(score):
    config = ModelConfig(
        src_vocab_size=6, tgt_vocab_size=6, layers=1, units=1, embed=2, score=score, init_scale=0.9
    )
    model = BiDAN(init_parameters(config, seed=3).astype(np.float64))
    t = {name: value.tolist() for name, value in model.params.tensors.items()}
    rng = np.random.default_rng(1)
    states = rng.normal(size=(3, 2))
    query = rng.normal(size=(1, 1))

    graph = ComputeGraph()
    keys = graph.constant(states[None])
    enc = EncoderStates(keys, np.ones((1, 3), dtype=bool), keys, keys, keys)
    attn = model.attention(graph, enc, graph.constant(query), Decoder.D1)

    q = query[0].tolist()
    rows = states.tolist()
    if score == 'additive':
        w1, w2, v = t['dec1.attn.w1'], t['dec1.attn.w2'], t['dec1.attn.v']
        scores = [
            v[0][0]
            * math.tanh(row[0] * w1[0][0] + row[1] * w1[1][0] + q[0] * w2[0][0])
            for row in rows
        ]
    elif score == 'bilinear':
        w = t['dec1.attn.w']
        scores = [(row[0] * w[0][0] + row[1] * w[1][0]) * q[0] for row in rows]
    else:
        w = t['dec1.attn.w']
        scores = [row[0] * w[0][0] + row[1] * w[1][0] + q[0] * w[2][0] for row in rows]
    total = math.fsum(math.exp(s) for s in scores)
    alpha = [math.exp(s) / total for s in scores]
    context = [math.fsum(a * row[k] for a, row in zip(alpha, rows)) for k in range(2)]
    wa, ba = t['dec1.attn.wa'], t['dec1.attn.ba']
    joined = [*context, q[0]]
    vector = math.tanh(math.fsum(joined[k] * wa[k][0] for k in range(3)) + ba[0])

    np.testing.assert_allclose(attn.weights.value[0], alpha, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(attn.context.value[0], context, rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(attn.vector.value[0], [vector], rtol=1e-10, atol=1e-12)


def test_decoders_are_symmetric(tiny_config, sources):
    config = dataclasses.replace(tiny_config, tgt_vocab_size=tiny_config.src_vocab_size)
    params = init_parameters(config, seed=4)
    for name in params.names(Partition.DECODER1):
        params.tensors['dec2.' + name[len('dec1.') :]] = params.tensors[name].copy()
    model = BiDAN(params)

    graph = ComputeGraph()
    enc = model.encode(graph, sources)
    nll1, tokens1 = model.teacher_forced_nll(graph, Decoder.D1, enc, sources)
    nll2, tokens2 = model.teacher_forced_nll(graph, Decoder.D2, enc, sources)
    assert tokens1 == tokens2
    np.testing.assert_array_equal(nll1.value, nll2.value)

    steps = [
        model.decoder_step(graph, which, model.initial_state(graph, which, enc), [1, 1, 1], enc)
        for which in Decoder
    ]
    np.testing.assert_array_equal(steps[0].logits.value, steps[1].logits.value)
    for source in sources:
        assert greedy_decode(model, Decoder.D1, source) == greedy_decode(
            model, Decoder.D2, source
        )
