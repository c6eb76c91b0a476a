# SPDX-License-Identifier: MIT

"""Experiment protocols: ablation grid, mixing-ratio sweep, encoder swap and length buckets.

Every protocol is a list of independent cells (one training run each). With
``workers > 1`` the cells run in a process pool; results are always merged
in the order the cells were listed, so the CSV output does not depend on the
number of workers.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import logging
import multiprocessing
import typing

from bidan.bleu import corpus_bleu, length_bucket_report, write_report_csv
from bidan.corpus import EncodedCorpus, ParallelCorpus, generate_synthetic_task
from bidan.decode import beam_search, greedy_decode_batch
from bidan.errors import ConfigurationError, InputError
from bidan.model import BiDAN, Decoder, Partition, init_parameters
from bidan.scheduler import train
from bidan.vocab import MergeTable, Vocab, learn_bpe


if typing.TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Mapping, Sequence
    from typing import Any, TextIO, TypeVar

    from bidan.bleu import BleuReport
    from bidan.checkpoint import Checkpoint
    from bidan.config import DataConfig, DecodeConfig, ExperimentConfig

    T = TypeVar('T')
    R = TypeVar('R')


__all__ = [
    'ABLATION_COLUMNS',
    'ABLATION_VARIANTS',
    'SWEEP_COLUMNS',
    'AblationRow',
    'SwapRow',
    'SweepRow',
    'build_model',
    'evaluate_bleu',
    'lambda_sweep',
    'length_rows',
    'run_ablation',
    'swap_checkpoint',
    'swap_encoder',
    'swap_protocol',
    'synthetic_corpus',
    'translate',
    'write_ablation_csv',
    'write_swap_csv',
    'write_sweep_csv',
]

logger = logging.getLogger(__name__)

ABLATION_COLUMNS = ('variant', 'dev_bleu', 'test_bleu', 'steps')
SWEEP_COLUMNS = ('lambda_a', 'dev_bleu', 'test_bleu', 'steps')

# schedule overrides per row; the mixing ratio of the full model comes from the config
ABLATION_VARIANTS: tuple[tuple[str, Mapping[str, Any]], ...] = (
    ('Baseline', {'phase_gate': 'immediate'}),
    ('Baseline+AD', {'phase_gate': 'converge', 'lambda_a': 1, 'lambda_d': 0, 'lambda_r': 0}),
    ('Baseline+AD(Denoising)', {'phase_gate': 'converge', 'lambda_r': 0}),
    ('Baseline+AD(RL)', {'phase_gate': 'converge', 'lambda_d': 0}),
    ('BiDAN(all-converge)', {'phase_gate': 'never'}),
    ('BiDAN', {'phase_gate': 'converge'}),
)


class AblationRow(typing.NamedTuple):
    variant: str
    dev_bleu: float
    test_bleu: float
    steps: int


class SweepRow(typing.NamedTuple):
    lambda_a: int
    dev_bleu: float
    test_bleu: float
    steps: int


class SwapRow(typing.NamedTuple):
    encoder: str
    report: BleuReport


def _map_cells(fn: Callable[[T], R], cells: Sequence[T], workers: int) -> list[R]:
    if workers < 1:
        msg = f'Worker count must be at least 1 (got {workers})'
        raise InputError(msg)
    if workers == 1 or len(cells) < 2:
        return [fn(cell) for cell in cells]
    with concurrent.futures.ProcessPoolExecutor(
        max_workers=min(workers, len(cells)), mp_context=multiprocessing.get_context('spawn')
    ) as pool:
        return list(pool.map(fn, cells))


def synthetic_corpus(config: ExperimentConfig) -> ParallelCorpus:
    """The synthetic task described by the ``data`` section, drawn from ``seed``."""
    data = config.data
    return generate_synthetic_task(
        data.kind,
        data.vocab_size,
        (data.min_len, data.max_len),
        data.train_pairs,
        config.seed,
        n_dev=data.dev_pairs,
        n_test=data.test_pairs,
    )


def build_model(config: ExperimentConfig, corpus: EncodedCorpus) -> BiDAN:
    """A freshly initialised model sized for the vocabularies of ``corpus``."""
    model_config = dataclasses.replace(
        config.model,
        src_vocab_size=len(corpus.src_vocab),
        tgt_vocab_size=len(corpus.tgt_vocab),
    )
    return BiDAN.initialize(model_config, config.seed)


def evaluate_bleu(model: BiDAN, corpus: EncodedCorpus, split: str = 'test') -> BleuReport:
    """Greedy D1 translations of ``split`` scored against its references."""
    pairs = corpus.pairs(split)
    if not pairs:
        msg = f'Corpus has no {split} split'
        raise InputError(msg)
    outputs = greedy_decode_batch(model, Decoder.D1, [src for src, _ in pairs])
    hyps = [corpus.tgt_vocab.decode(ids) for ids in outputs]
    refs = [corpus.tgt_vocab.decode(tgt) for _, tgt in pairs]
    return corpus_bleu(hyps, refs)


def translate(
    model: BiDAN,
    sentences: Iterable[str],
    src_vocab: Vocab,
    out_vocab: Vocab,
    which: Decoder = Decoder.D1,
    decode: DecodeConfig | None = None,
) -> list[str]:
    """Beam-search translation of raw sentences; an empty line stays empty."""
    outputs = []
    for sentence in sentences:
        ids = src_vocab.encode(sentence)
        if len(ids) == 2:
            outputs.append('')
            continue
        if decode is None:
            best = beam_search(model, which, ids)[0]
        else:
            best = beam_search(
                model,
                which,
                ids,
                decode.beam_size,
                decode.max_len(len(ids) - 2),
                length_norm=decode.length_norm,
            )[0]
        outputs.append(out_vocab.decode(best.sequence))
    return outputs


class _Cell(typing.NamedTuple):
    label: str
    config: ExperimentConfig
    corpus: EncodedCorpus


class _Trained(typing.NamedTuple):
    model: BiDAN
    dev_bleu: float
    test_bleu: float
    steps: int


def _train_cell(cell: _Cell) -> _Trained:
    logger.info('Training cell "%s"', cell.label)
    result = train(build_model(cell.config, cell.corpus), cell.corpus, cell.config)
    dev = evaluate_bleu(result.model, cell.corpus, 'dev').bleu
    test = evaluate_bleu(result.model, cell.corpus, 'test').bleu
    logger.info('Cell "%s": dev BLEU %.4f, test BLEU %.4f', cell.label, dev, test)
    return _Trained(result.model, dev, test, result.state.step)


def run_ablation(
    config: ExperimentConfig,
    corpus: EncodedCorpus | None = None,
    *,
    workers: int = 1,
) -> list[AblationRow]:
    """Train every :data:`ABLATION_VARIANTS` row on the same corpus and seed."""
    corpus = corpus or EncodedCorpus.build(synthetic_corpus(config), config.data)
    cells = [
        _Cell(variant, config.with_overrides(schedule=overrides), corpus)
        for variant, overrides in ABLATION_VARIANTS
    ]
    results = _map_cells(_train_cell, cells, workers)
    return [
        AblationRow(cell.label, r.dev_bleu, r.test_bleu, r.steps)
        for cell, r in zip(cells, results)
    ]


def lambda_sweep(
    config: ExperimentConfig,
    values: Iterable[int],
    corpus: EncodedCorpus | None = None,
    *,
    workers: int = 1,
) -> list[SweepRow]:
    """One training run per ``lambda_a`` value, the other ratios kept from ``config``.

    Rows come back sorted by value; repeated values are trained once.
    """
    points = sorted(set(values))
    if not points:
        msg = 'No lambda_a values to sweep'
        raise ConfigurationError(msg, key='schedule.lambda_a')
    if points[0] < 0:
        msg = f'Mixing ratio values must be non-negative (got {points[0]})'
        raise ConfigurationError(msg, key='schedule.lambda_a')
    gate = 'converge' if config.schedule.phase_gate == 'immediate' else config.schedule.phase_gate
    corpus = corpus or EncodedCorpus.build(synthetic_corpus(config), config.data)
    cells = [
        _Cell(
            f'lambda_a={value}',
            config.with_overrides(schedule={'lambda_a': value, 'phase_gate': gate}),
            corpus,
        )
        for value in points
    ]
    results = _map_cells(_train_cell, cells, workers)
    return [SweepRow(value, r.dev_bleu, r.test_bleu, r.steps) for value, r in zip(points, results)]


def _write_rows(columns: Sequence[str], rows: Iterable[tuple[Any, ...]], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(columns)
    for row in rows:
        writer.writerow([f'{cell:.6f}' if isinstance(cell, float) else cell for cell in row])


def write_ablation_csv(rows: Iterable[AblationRow], stream: TextIO) -> None:
    _write_rows(ABLATION_COLUMNS, rows, stream)


def write_sweep_csv(rows: Iterable[SweepRow], stream: TextIO) -> None:
    _write_rows(SWEEP_COLUMNS, rows, stream)


def swap_encoder(target: BiDAN, donor: BiDAN | None, *, seed: int = 0) -> BiDAN:
    """``target`` with its encoder replaced by ``donor``'s.

    Without a donor the encoder is freshly initialised from ``seed``. The
    decoders are always the target's; the encoder tensors must match in
    name and shape.
    """
    if donor is None:
        donor_params = init_parameters(target.config, seed)
        logger.info('Using a random encoder drawn from seed %d', seed)
    else:
        donor_params = donor.params
    return BiDAN(target.params.replace_partition(Partition.ENCODER, donor_params.tensors))


def swap_checkpoint(target: Checkpoint, donor: Checkpoint | None, *, seed: int = 0) -> Checkpoint:
    """Encoder swap between checkpoints; both must share the source vocabulary."""
    if donor is not None and donor.src_vocab.tokens != target.src_vocab.tokens:
        msg = 'Donor and target checkpoints have different source vocabularies'
        raise ConfigurationError(msg)
    model = swap_encoder(target.model, None if donor is None else donor.model, seed=seed)
    return target._replace(model=model)


def _shared_source_encoding(
    corpora: Sequence[ParallelCorpus], data: DataConfig
) -> list[EncodedCorpus]:
    sources = [src for corpus in corpora for src in corpus.sources('train')]
    merges = MergeTable()
    if not data.word_level and data.bpe_merges:
        merges = learn_bpe(sources, data.bpe_merges)
    src_vocab = Vocab.build(sources, merges, word_level=data.word_level, min_freq=data.min_freq)
    encoded = []
    for corpus in corpora:
        own = EncodedCorpus.build(corpus, data)
        encoded.append(EncodedCorpus.encode(corpus, src_vocab, own.tgt_vocab))
    return encoded


def swap_protocol(config: ExperimentConfig, *, workers: int = 1) -> list[SwapRow]:
    """Encoder-swap experiment on two synthetic tasks with one source language.

    Task A maps the source language onto target language ``z``, task B onto
    an unrelated language ``w``. The original model is a plain NMT model on
    task A; two donors are trained on task B, one plain and one with the
    bi-decoder schedule of ``config``. Each encoder (random, plain donor,
    bi-decoder donor, original) is placed under the original decoders and
    scored on task A's test split.
    """
    data = config.data
    tasks = [
        generate_synthetic_task(
            'mapped-reverse',
            data.vocab_size,
            (data.min_len, data.max_len),
            data.train_pairs,
            config.seed + offset,
            n_dev=data.dev_pairs,
            n_test=data.test_pairs,
            source_prefix='s',
            target_prefix=prefix,
        )
        for offset, prefix in ((0, 'z'), (1, 'w'))
    ]
    task_a, task_b = _shared_source_encoding(tasks, data)
    plain = config.with_overrides(schedule={'phase_gate': 'immediate'})
    bidan_config = config.with_overrides(
        schedule={
            'phase_gate': 'converge'
            if config.schedule.phase_gate == 'immediate'
            else config.schedule.phase_gate
        }
    )
    cells = [
        _Cell('original', plain, task_a),
        _Cell('plain donor', plain, task_b),
        _Cell('BiDAN donor', bidan_config, task_b),
    ]
    original, plain_donor, bidan_donor = (r.model for r in _map_cells(_train_cell, cells, workers))
    encoders: list[tuple[str, BiDAN | None]] = [
        ('random', None),
        ('plain donor', plain_donor),
        ('BiDAN donor', bidan_donor),
        ('original', original),
    ]
    rows = []
    for name, donor in encoders:
        hybrid = original if donor is original else swap_encoder(original, donor, seed=config.seed)
        report = evaluate_bleu(hybrid, task_a)
        logger.info('Encoder %s: %s', name, report.summary())
        rows.append(SwapRow(name, report))
    return rows


def write_swap_csv(rows: Iterable[SwapRow], stream: TextIO) -> None:
    write_report_csv(((row.encoder, row.report) for row in rows), stream, label='encoder')


def length_rows(
    systems: Mapping[str, Sequence[str]],
    refs: Sequence[str],
    srcs: Sequence[str],
    edges: Sequence[int],
    *,
    smoothing: bool = False,
) -> list[tuple[str, BleuReport | None]]:
    """Length-bucket rows for several systems, labelled ``<system> <bucket>``.

    Systems keep their mapping order; a system's buckets are listed
    shortest first.
    """
    rows: list[tuple[str, BleuReport | None]] = []
    for system, hyps in systems.items():
        for bucket in length_bucket_report(hyps, refs, srcs, edges, smoothing=smoothing):
            rows.append((f'{system} {bucket.label}', bucket.report))
    return rows
