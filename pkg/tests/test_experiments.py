# SPDX-License-Identifier: MIT

import dataclasses
import io
import re

import numpy as np
import pytest

from bidan.bleu import corpus_bleu
from bidan.checkpoint import Checkpoint
from bidan.errors import ConfigurationError, InputError
from bidan.experiments import (
    ABLATION_VARIANTS,
    AblationRow,
    SwapRow,
    SweepRow,
    _map_cells,
    build_model,
    evaluate_bleu,
    lambda_sweep,
    length_rows,
    run_ablation,
    swap_checkpoint,
    swap_encoder,
    swap_protocol,
    translate,
    write_ablation_csv,
    write_swap_csv,
    write_sweep_csv,
)
from bidan.model import BiDAN, Decoder, Partition
from bidan.vocab import RESERVED_TOKENS, Vocab

from .conftest import TINY


def _partition_equal(a, b, partition):
    return all(
        np.array_equal(a.params.tensors[name], b.params.tensors[name])
        for name in a.params.names(partition)
    )


def test_swap_encoder(tiny_model):
    donor = BiDAN.initialize(TINY, seed=11)
    hybrid = swap_encoder(tiny_model, donor)
    assert _partition_equal(hybrid, donor, Partition.ENCODER)
    assert _partition_equal(hybrid, tiny_model, Partition.DECODER1)
    assert _partition_equal(hybrid, tiny_model, Partition.DECODER2)
    assert not _partition_equal(tiny_model, donor, Partition.ENCODER)

    same = swap_encoder(tiny_model, tiny_model)
    for name, value in tiny_model.params.tensors.items():
        np.testing.assert_array_equal(same.params.tensors[name], value)


def test_random_encoder_is_reproducible(tiny_model):
    first = swap_encoder(tiny_model, None, seed=5)
    second = swap_encoder(tiny_model, None, seed=5)
    other = swap_encoder(tiny_model, None, seed=6)
    assert _partition_equal(first, second, Partition.ENCODER)
    assert not _partition_equal(first, other, Partition.ENCODER)
    assert _partition_equal(first, tiny_model, Partition.DECODER1)


def test_swap_encoder_shape_mismatch(tiny_model):
    donor = BiDAN.initialize(dataclasses.replace(TINY, units=6), seed=1)
    with pytest.raises(ConfigurationError, match=re.escape('enc.fwd.0.wh: (5, 20) vs (6, 24)')):
        swap_encoder(tiny_model, donor)


def test_swap_checkpoint(tiny_model):
    src = Vocab((*RESERVED_TOKENS, 'a', 'b', 'c', 'd', 'e'), word_level=True)
    other_src = Vocab((*RESERVED_TOKENS, 'a', 'b', 'c', 'd', 'f'), word_level=True)
    tgt = Vocab((*RESERVED_TOKENS, 'w', 'x', 'y', 'z'), word_level=True)
    target = Checkpoint(tiny_model, src, tgt)
    donor = Checkpoint(BiDAN.initialize(TINY, seed=2), src, tgt)

    swapped = swap_checkpoint(target, donor)
    assert swapped.src_vocab is src
    assert _partition_equal(swapped.model, donor.model, Partition.ENCODER)
    assert _partition_equal(swapped.model, tiny_model, Partition.DECODER1)
    assert not _partition_equal(
        swap_checkpoint(target, None, seed=4).model, tiny_model, Partition.ENCODER
    )

    with pytest.raises(ConfigurationError, match='different source vocabularies'):
        swap_checkpoint(target, donor._replace(src_vocab=other_src))


def test_map_cells_keeps_order():
    assert _map_cells(abs, [-1, 2, -3], 1) == [1, 2, 3]
    assert _map_cells(abs, [-1, 2, -3], 2) == [1, 2, 3]
    assert _map_cells(abs, [], 4) == []
    with pytest.raises(InputError, match=re.escape('Worker count must be at least 1 (got 0)')):
        _map_cells(abs, [1], 0)


def test_build_model(tiny_corpus, train_config):
    model = build_model(train_config, tiny_corpus)
    assert model.config.src_vocab_size == len(tiny_corpus.src_vocab)
    assert model.config.tgt_vocab_size == len(tiny_corpus.tgt_vocab)
    assert model.config.units == train_config.model.units


def test_evaluate_bleu(tiny_corpus, train_config):
    model = build_model(train_config, tiny_corpus)
    report = evaluate_bleu(model, tiny_corpus, 'dev')
    assert report.n_sentences == 4
    assert 0.0 <= report.bleu <= 1.0
    with pytest.raises(InputError, match='Corpus has no valid split'):
        evaluate_bleu(model, tiny_corpus, 'valid')


def test_translate(tiny_corpus, train_config):
    model = build_model(train_config, tiny_corpus)
    sentences = [tiny_corpus.src_vocab.decode(tiny_corpus.sources('test')[0]), '']
    outputs = translate(model, sentences, tiny_corpus.src_vocab, tiny_corpus.tgt_vocab)
    assert len(outputs) == 2
    assert outputs[1] == ''
    assert all(word in tiny_corpus.tgt_vocab or word == '<unk>' for word in outputs[0].split())

    back = translate(
        model, sentences[:1], tiny_corpus.src_vocab, tiny_corpus.src_vocab, Decoder.D2
    )
    assert all(word in tiny_corpus.src_vocab or word == '<unk>' for word in back[0].split())


@pytest.mark.parametrize(
    ('values', 'message'),
    [
        ([], 'No lambda_a values to sweep'),
        ([2, -1], 'Mixing ratio values must be non-negative (got -1)'),
    ],
)
def test_lambda_sweep_errors(train_config, values, message):
    with pytest.raises(ConfigurationError, match=re.escape(message)) as info:
        lambda_sweep(train_config, values)
    assert info.value.key == 'schedule.lambda_a'


def test_lambda_sweep_does_not_depend_on_workers(train_config, tiny_corpus):
    serial = lambda_sweep(train_config, [1, 0, 1], tiny_corpus)
    assert [row.lambda_a for row in serial] == [0, 1]
    assert all(0.0 <= row.dev_bleu <= 1.0 for row in serial)
    parallel = lambda_sweep(train_config, [0, 1], tiny_corpus, workers=2)
    assert [(row.lambda_a, row.steps) for row in parallel] == [
        (row.lambda_a, row.steps) for row in serial
    ]
    assert [row.test_bleu for row in parallel] == pytest.approx([row.test_bleu for row in serial])


def test_run_ablation(train_config, tiny_corpus):
    rows = run_ablation(train_config, tiny_corpus)
    assert [row.variant for row in rows] == [variant for variant, _ in ABLATION_VARIANTS]
    assert all(1 <= row.steps <= train_config.optim.total_steps for row in rows)
    assert all(0.0 <= row.dev_bleu <= 1.0 and 0.0 <= row.test_bleu <= 1.0 for row in rows)
    assert rows[0].steps == train_config.optim.total_steps


def test_swap_protocol(train_config):
    config = train_config.with_overrides(
        data={'train_pairs': 12, 'dev_pairs': 3, 'test_pairs': 3},
        optim={'total_steps': 3},
    )
    rows = swap_protocol(config)
    assert [row.encoder for row in rows] == ['random', 'plain donor', 'BiDAN donor', 'original']
    assert all(row.report.n_sentences == 3 for row in rows)
    stream = io.StringIO()
    write_swap_csv(rows, stream)
    lines = stream.getvalue().splitlines()
    assert lines[0] == 'encoder,p1,p2,p3,p4,bp,bleu,n_sentences'
    assert [line.split(',')[0] for line in lines[1:]] == [row.encoder for row in rows]


def test_write_ablation_csv():
    stream = io.StringIO()
    write_ablation_csv(
        [AblationRow('Baseline', 0.5, 0.25, 10), AblationRow('BiDAN', 1.0, 0.0, 7)], stream
    )
    assert stream.getvalue() == (
        'variant,dev_bleu,test_bleu,steps\n'
        'Baseline,0.500000,0.250000,10\n'
        'BiDAN,1.000000,0.000000,7\n'
    )


def test_write_sweep_csv():
    stream = io.StringIO()
    write_sweep_csv([SweepRow(2, 1.0, 0.125, 3)], stream)
    assert stream.getvalue() == 'lambda_a,dev_bleu,test_bleu,steps\n2,1.000000,0.125000,3\n'


def test_write_swap_csv():
    stream = io.StringIO()
    write_swap_csv([SwapRow('random', corpus_bleu(['a b'], ['a c']))], stream)
    assert stream.getvalue() == (
        'encoder,p1,p2,p3,p4,bp,bleu,n_sentences\n'
        'random,1/2,0/1,0/0,0/0,1.000000,0.000000,1\n'
    )


def test_length_rows():
    refs = ['a b', 'c d']
    srcs = ['x y', 'z']
    systems = {'sys': ['a b', 'c'], 'ref': refs}
    rows = length_rows(systems, refs, srcs, [1, 2, 5])
    assert [label for label, _ in rows] == [
        'sys [1,2)',
        'sys [2,5)',
        'sys [5,inf)',
        'ref [1,2)',
        'ref [2,5)',
        'ref [5,inf)',
    ]
    assert rows[0][1].n_sentences == 1
    assert rows[0][1].hyp_length == 1
    assert rows[2][1] is None
    assert rows[4][1].n_sentences == 1
