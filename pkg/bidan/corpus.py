# SPDX-License-Identifier: MIT

"""Parallel corpora: reading, writing, synthetic tasks and id encoding."""

from __future__ import annotations

import dataclasses
import logging
import os
import pathlib
import typing

import numpy as np

from bidan.errors import ConfigurationError, InputError
from bidan.vocab import MergeTable, Vocab, learn_bpe


if typing.TYPE_CHECKING:
    from collections.abc import Iterable, Mapping, Sequence

    from bidan.config import DataConfig

    Pair = tuple[str, str]
    IdPair = tuple[tuple[int, ...], tuple[int, ...]]


__all__ = [
    'SPLITS',
    'TASK_KINDS',
    'EncodedCorpus',
    'ParallelCorpus',
    'generate_synthetic_task',
    'read_lines',
    'read_parallel',
    'task_target',
    'write_lines',
]

logger = logging.getLogger(__name__)

SPLITS = ('train', 'dev', 'test')
TASK_KINDS = ('copy', 'reverse', 'mapped-reverse', 'sorted')


def read_lines(path: str | os.PathLike[str]) -> list[str]:
    try:
        text = pathlib.Path(path).read_text(encoding='utf-8')
    except FileNotFoundError:
        msg = f'File "{path}" not found'
        raise InputError(msg) from None
    except UnicodeDecodeError as e:
        msg = f'File "{path}" is not valid UTF-8 (byte {e.start})'
        raise InputError(msg) from None
    return [' '.join(line.split()) for line in text.splitlines()]


def write_lines(path: str | os.PathLike[str], lines: Iterable[str]) -> None:
    pathlib.Path(path).write_text(''.join(f'{line}\n' for line in lines), encoding='utf-8')


def read_parallel(
    src_path: str | os.PathLike[str], tgt_path: str | os.PathLike[str]
) -> tuple[Pair, ...]:
    """Line-aligned sentence pairs; misalignment and empty lines are reported by line number."""
    sources = read_lines(src_path)
    targets = read_lines(tgt_path)
    for lineno, (src, tgt) in enumerate(zip(sources, targets), start=1):
        if not src or not tgt:
            side = src_path if not src else tgt_path
            msg = f'Empty sentence on line {lineno} of "{side}"'
            raise InputError(msg)
    if len(sources) != len(targets):
        lineno = min(len(sources), len(targets)) + 1
        msg = (
            f'"{src_path}" has {len(sources)} lines but "{tgt_path}" has {len(targets)}; '
            f'alignment breaks at line {lineno}'
        )
        raise InputError(msg)
    return tuple(zip(sources, targets))


@dataclasses.dataclass(frozen=True)
class ParallelCorpus:
    """Aligned sentence pairs per split (``train``, ``dev``, ``test``)."""

    splits: Mapping[str, tuple[Pair, ...]]

    def __post_init__(self) -> None:
        for split, pairs in self.splits.items():
            if split not in SPLITS:
                msg = f'Unknown split "{split}", expecting one of {SPLITS}'
                raise InputError(msg)
            for lineno, (src, tgt) in enumerate(pairs, start=1):
                if not src.strip() or not tgt.strip():
                    msg = f'Empty sentence in pair {lineno} of split "{split}"'
                    raise InputError(msg)

    def pairs(self, split: str) -> tuple[Pair, ...]:
        return self.splits.get(split, ())

    def sources(self, split: str) -> list[str]:
        return [src for src, _ in self.pairs(split)]

    def targets(self, split: str) -> list[str]:
        return [tgt for _, tgt in self.pairs(split)]

    def save(self, directory: str | os.PathLike[str]) -> None:
        """Write ``<split>.src`` and ``<split>.tgt`` for every split."""
        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for split, pairs in self.splits.items():
            write_lines(directory / f'{split}.src', (src for src, _ in pairs))
            write_lines(directory / f'{split}.tgt', (tgt for _, tgt in pairs))

    @classmethod
    def load(cls, directory: str | os.PathLike[str]) -> ParallelCorpus:
        directory = pathlib.Path(directory)
        splits = {
            split: read_parallel(directory / f'{split}.src', directory / f'{split}.tgt')
            for split in SPLITS
            if (directory / f'{split}.src').exists()
        }
        if 'train' not in splits:
            msg = f'No "train.src" in "{directory}"'
            raise InputError(msg)
        return cls(splits)


def task_target(
    kind: str, words: Sequence[str], mapping: Mapping[str, str] | None = None
) -> list[str]:
    """Target side of a synthetic task for the source ``words``."""
    if kind == 'copy':
        return list(words)
    if kind == 'reverse':
        return list(reversed(words))
    if kind == 'sorted':
        return sorted(words, key=lambda word: (len(word), word))
    if kind == 'mapped-reverse':
        if mapping is None:
            msg = 'The mapped-reverse task needs a word mapping'
            raise ConfigurationError(msg, key='data.kind')
        return [mapping[word] for word in reversed(words)]
    msg = f'Unknown task kind "{kind}", expecting one of {TASK_KINDS}'
    raise ConfigurationError(msg, key='data.kind')


def generate_synthetic_task(
    kind: str,
    vocab_size: int,
    length_range: tuple[int, int],
    n_pairs: int,
    seed: int,
    *,
    n_dev: int = 0,
    n_test: int = 0,
    source_prefix: str = 's',
    target_prefix: str = 't',
    mapping_seed: int | None = None,
) -> ParallelCorpus:
    """Deterministic toy translation corpus.

    Source words are ``<source_prefix><i>`` for ``i < vocab_size`` and
    sentence lengths are uniform over ``length_range``. ``mapped-reverse``
    maps every word through a fixed bijection onto ``<target_prefix><j>``
    (drawn from ``mapping_seed``, default ``seed``) and reverses the
    sentence, so the two sides share no surface word. The other kinds keep
    the source vocabulary.
    """
    low, high = length_range
    if vocab_size < 4:
        msg = f'Synthetic vocabulary must have at least 4 words (got {vocab_size})'
        raise ConfigurationError(msg, key='data.vocab_size')
    if not 1 <= low <= high:
        msg = f'Invalid sentence length range {length_range}'
        raise ConfigurationError(msg, key='data.min_len')
    if n_pairs < 1 or n_dev < 0 or n_test < 0:
        msg = f'Invalid corpus sizes: {n_pairs} train, {n_dev} dev, {n_test} test'
        raise ConfigurationError(msg, key='data.train_pairs')
    if kind not in TASK_KINDS:
        msg = f'Unknown task kind "{kind}", expecting one of {TASK_KINDS}'
        raise ConfigurationError(msg, key='data.kind')
    if kind == 'mapped-reverse' and source_prefix == target_prefix:
        msg = 'The mapped-reverse task needs distinct source and target prefixes'
        raise ConfigurationError(msg, key='data.kind')

    words = [f'{source_prefix}{i}' for i in range(vocab_size)]
    mapping = None
    if kind == 'mapped-reverse':
        mapping_rng = np.random.default_rng(seed if mapping_seed is None else mapping_seed)
        permutation = mapping_rng.permutation(vocab_size)
        mapping = {word: f'{target_prefix}{j}' for word, j in zip(words, permutation)}

    rng = np.random.default_rng(seed)
    splits: dict[str, tuple[Pair, ...]] = {}
    for split, count in zip(SPLITS, (n_pairs, n_dev, n_test)):
        if not count:
            continue
        pairs = []
        for _ in range(count):
            length = int(rng.integers(low, high + 1))
            sentence = [words[i] for i in rng.integers(0, vocab_size, size=length)]
            pairs.append((' '.join(sentence), ' '.join(task_target(kind, sentence, mapping))))
        splits[split] = tuple(pairs)
    logger.debug('Generated %s task: %s', kind, {k: len(v) for k, v in splits.items()})
    return ParallelCorpus(splits)


@dataclasses.dataclass(frozen=True)
class EncodedCorpus:
    """A corpus turned into framed id sequences with its two vocabularies."""

    src_vocab: Vocab
    tgt_vocab: Vocab
    splits: Mapping[str, tuple[IdPair, ...]]

    def pairs(self, split: str) -> tuple[IdPair, ...]:
        return self.splits.get(split, ())

    def sources(self, split: str) -> list[tuple[int, ...]]:
        return [src for src, _ in self.pairs(split)]

    def targets(self, split: str) -> list[tuple[int, ...]]:
        return [tgt for _, tgt in self.pairs(split)]

    @classmethod
    def encode(cls, corpus: ParallelCorpus, src_vocab: Vocab, tgt_vocab: Vocab) -> EncodedCorpus:
        splits = {
            split: tuple(
                (tuple(src_vocab.encode(src)), tuple(tgt_vocab.encode(tgt))) for src, tgt in pairs
            )
            for split, pairs in corpus.splits.items()
        }
        return cls(src_vocab, tgt_vocab, splits)

    @classmethod
    def build(
        cls,
        corpus: ParallelCorpus,
        data: DataConfig,
        merges: tuple[MergeTable, MergeTable] | None = None,
    ) -> EncodedCorpus:
        """Learn merges and vocabularies on the training split, then encode every split.

        Given source and target ``merges`` are used as they are and make both
        vocabularies subword-level, whatever ``data.word_level`` says.
        """
        word_level = data.word_level and merges is None
        vocabs = []
        for i, side in enumerate((corpus.sources('train'), corpus.targets('train'))):
            table = MergeTable()
            if merges is not None:
                table = merges[i]
            elif not word_level and data.bpe_merges:
                table = learn_bpe(side, data.bpe_merges)
            vocabs.append(
                Vocab.build(side, table, word_level=word_level, min_freq=data.min_freq)
            )
        logger.info('Vocabulary sizes: %d source, %d target', len(vocabs[0]), len(vocabs[1]))
        return cls.encode(corpus, vocabs[0], vocabs[1])
