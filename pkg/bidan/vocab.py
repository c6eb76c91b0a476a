# SPDX-License-Identifier: MIT

"""Tokenization, byte-pair-encoding subwords and vocabularies."""

from __future__ import annotations

import collections
import dataclasses
import logging
import os
import pathlib
import typing


if typing.TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

from bidan.errors import InputError


__all__ = [
    'BOS',
    'END_OF_WORD',
    'EOS',
    'PAD',
    'RESERVED_TOKENS',
    'UNK',
    'MergeTable',
    'Vocab',
    'learn_bpe',
]

logger = logging.getLogger(__name__)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED_TOKENS = ('<pad>', '<s>', '</s>', '<unk>')
END_OF_WORD = '</w>'


def _merge_pair(symbols: tuple[str, ...], pair: tuple[str, str]) -> tuple[str, ...]:
    merged: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
            merged.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            merged.append(symbols[i])
            i += 1
    return tuple(merged)


@dataclasses.dataclass(frozen=True)
class MergeTable:
    """Ordered BPE merges; the rank of a merge is its position."""

    merges: tuple[tuple[str, str], ...] = ()
    _ranks: dict[tuple[str, str], int] = dataclasses.field(
        init=False, repr=False, compare=False
    )
    _cache: dict[str, tuple[str, ...]] = dataclasses.field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self) -> None:
        ranks = {pair: rank for rank, pair in enumerate(self.merges)}
        if len(ranks) != len(self.merges):
            msg = 'Merge table contains a repeated pair'
            raise InputError(msg)
        object.__setattr__(self, '_ranks', ranks)
        object.__setattr__(self, '_cache', {})

    def __len__(self) -> int:
        return len(self.merges)

    def segment(self, word: str) -> tuple[str, ...]:
        """Split ``word`` into subwords, applying merges in rank order.

        The end-of-word marker is appended to the last subword.
        """
        if word in self._cache:
            return self._cache[word]
        symbols = tuple(word)
        while len(symbols) > 1:
            candidates = [
                (self._ranks[pair], pair)
                for pair in zip(symbols, symbols[1:])
                if pair in self._ranks
            ]
            if not candidates:
                break
            _, pair = min(candidates)
            symbols = _merge_pair(symbols, pair)
        if symbols:
            symbols = (*symbols[:-1], symbols[-1] + END_OF_WORD)
        self._cache[word] = symbols
        return symbols

    def save(self, path: str | os.PathLike[str]) -> None:
        text = ''.join(f'{left} {right}\n' for left, right in self.merges)
        pathlib.Path(path).write_text(text, encoding='utf-8')

    @classmethod
    def load(cls, path: str | os.PathLike[str]) -> MergeTable:
        merges = []
        try:
            lines = pathlib.Path(path).read_text(encoding='utf-8').splitlines()
        except FileNotFoundError:
            msg = f'Merge file "{path}" not found'
            raise InputError(msg) from None
        except UnicodeDecodeError as e:
            msg = f'Merge file "{path}" is not valid UTF-8 (byte {e.start})'
            raise InputError(msg) from None
        for lineno, line in enumerate(lines, start=1):
            parts = line.split(' ')
            if len(parts) != 2 or not all(parts):
                msg = f'Invalid merge on line {lineno} of "{path}": expecting "left right"'
                raise InputError(msg)
            merges.append((parts[0], parts[1]))
        return cls(tuple(merges))


def learn_bpe(corpus: Sequence[str], num_merges: int) -> MergeTable:
    """Learn ``num_merges`` merges greedily from whitespace-split ``corpus``.

    The most frequent adjacent pair is merged first, ties go to the
    lexicographically smallest pair, and learning stops early once no pair
    occurs at least twice.
    """
    if not corpus:
        msg = 'Cannot learn BPE merges from an empty corpus'
        raise InputError(msg)
    if num_merges < 0:
        msg = f'Number of merges must be non-negative (got {num_merges})'
        raise InputError(msg)

    words: collections.Counter[tuple[str, ...]] = collections.Counter(
        tuple(word) for sentence in corpus for word in sentence.split()
    )
    merges: list[tuple[str, str]] = []
    while len(merges) < num_merges:
        pairs: collections.Counter[tuple[str, str]] = collections.Counter()
        for symbols, freq in words.items():
            for pair in zip(symbols, symbols[1:]):
                pairs[pair] += freq
        if not pairs:
            break
        best, count = min(pairs.items(), key=lambda item: (-item[1], item[0]))
        if count < 2:
            break
        merges.append(best)
        updated: collections.Counter[tuple[str, ...]] = collections.Counter()
        for symbols, freq in words.items():
            updated[_merge_pair(symbols, best)] += freq
        words = updated
    logger.info('Learned %d of %d requested BPE merges', len(merges), num_merges)
    return MergeTable(tuple(merges))


@dataclasses.dataclass(frozen=True)
class Vocab:
    """Bijective token/id table with the reserved ids PAD, BOS, EOS and UNK.

    In word-level mode every whitespace-separated word is one token and the
    merge table is unused; otherwise words are segmented by :attr:`merges`.
    """

    tokens: tuple[str, ...]
    merges: MergeTable = dataclasses.field(default_factory=MergeTable)
    word_level: bool = False
    _index: dict[str, int] = dataclasses.field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            msg = f'Vocabulary must start with the reserved tokens {RESERVED_TOKENS}'
            raise InputError(msg)
        index = {token: i for i, token in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            msg = 'Vocabulary contains a repeated token'
            raise InputError(msg)
        object.__setattr__(self, '_index', index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return token in self._index

    @classmethod
    def build(
        cls,
        corpus: Iterable[str],
        merges: MergeTable | None = None,
        *,
        word_level: bool = False,
        min_freq: int = 1,
    ) -> Vocab:
        """Collect every symbol of the segmented corpus seen ``min_freq`` times."""
        merges = merges if merges is not None else MergeTable()
        template = cls(RESERVED_TOKENS, merges, word_level)
        counts: collections.Counter[str] = collections.Counter()
        for sentence in corpus:
            counts.update(template.segment(sentence))
        kept = sorted(
            (token for token, freq in counts.items() if freq >= min_freq and token not in template),
            key=lambda token: (-counts[token], token),
        )
        return cls((*RESERVED_TOKENS, *kept), merges, word_level)

    def segment(self, sentence: str) -> list[str]:
        if self.word_level:
            return sentence.split()
        return [sub for word in sentence.split() for sub in self.merges.segment(word)]

    def encode(self, sentence: str) -> list[int]:
        """Token ids of ``sentence`` framed by BOS and EOS."""
        ids = [self._index.get(token, UNK) for token in self.segment(sentence)]
        return [BOS, *ids, EOS]

    def decode(self, ids: Iterable[int]) -> str:
        """Text of ``ids`` with framing removed and subwords joined."""
        words: list[str] = []
        current = ''
        for i in ids:
            i = int(i)
            if not 0 <= i < len(self.tokens):
                msg = f'Token id {i} out of range for a vocabulary of {len(self.tokens)}'
                raise InputError(msg)
            if i in (PAD, BOS, EOS):
                continue
            token = self.tokens[i]
            if self.word_level:
                words.append(token)
            elif i == UNK:
                if current:
                    words.append(current)
                    current = ''
                words.append(token)
            elif token.endswith(END_OF_WORD):
                words.append(current + token[: -len(END_OF_WORD)])
                current = ''
            else:
                current += token
        if current:
            words.append(current)
        return ' '.join(words)

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK)

    def save(self, path: str | os.PathLike[str]) -> None:
        text = ''.join(f'{token}\n' for token in self.tokens)
        pathlib.Path(path).write_text(text, encoding='utf-8')

    @classmethod
    def load(
        cls,
        path: str | os.PathLike[str],
        merges: MergeTable | None = None,
        *,
        word_level: bool = False,
    ) -> Vocab:
        tokens = pathlib.Path(path).read_text(encoding='utf-8').splitlines()
        return cls(tuple(tokens), merges if merges is not None else MergeTable(), word_level)
