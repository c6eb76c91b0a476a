# SPDX-License-Identifier: MIT

"""Greedy and beam-search generation from either decoder."""

from __future__ import annotations

import dataclasses
import logging
import typing

import numpy as np

from bidan.errors import InputError
from bidan.model import BiDAN, Decoder
from bidan.tensor import ComputeGraph
from bidan.vocab import BOS, EOS, PAD


if typing.TYPE_CHECKING:
    from collections.abc import Sequence


__all__ = [
    'Hypothesis',
    'beam_search',
    'default_max_len',
    'generation_mask',
    'greedy_decode',
    'greedy_decode_batch',
    'log_distribution',
]

logger = logging.getLogger(__name__)


def generation_mask(vocab_size: int) -> np.ndarray:
    """Ids a decoder may emit: everything except PAD and BOS."""
    mask = np.ones(vocab_size, dtype=bool)
    mask[[PAD, BOS]] = False
    return mask


def log_distribution(logits: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax over the generation mask, in float64; banned ids get ``-inf``."""
    mask = generation_mask(logits.shape[-1])
    masked = np.where(mask, logits.astype(np.float64), -np.inf)
    shifted = masked - masked.max(axis=-1, keepdims=True)
    norm = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return shifted - norm  # type: ignore[no-any-return]


def default_max_len(source: Sequence[int]) -> int:
    return 2 * max(len(source) - 2, 0) + 5


@dataclasses.dataclass(frozen=True)
class Hypothesis:
    """A partial or finished output; ``tokens`` excludes the leading BOS."""

    tokens: tuple[int, ...]
    log_prob: float
    finished: bool = False
    state_row: int = 0

    def score(self, length_norm: bool = False) -> float:
        if length_norm and self.tokens:
            return self.log_prob / len(self.tokens)
        return self.log_prob

    @property
    def sequence(self) -> list[int]:
        return [BOS, *self.tokens]


def _check_source(source: Sequence[int]) -> None:
    if len(source) < 2 or source[0] != BOS or source[-1] != EOS:
        msg = 'Source must be framed by BOS and EOS'
        raise InputError(msg)


def beam_search(
    model: BiDAN,
    which: Decoder,
    source: Sequence[int],
    beam_size: int = 10,
    max_len: int | None = None,
    *,
    length_norm: bool = False,
) -> list[Hypothesis]:
    """Beam search over one framed source sentence.

    Every live hypothesis is expanded over the whole vocabulary and the best
    ``beam_size`` candidates survive, ordered by score, then token id, then
    parent index. Candidates ending in EOS move to the finished pool.
    ``max_len`` counts generated tokens, EOS included. The result holds the
    finished pool, topped up with the best live hypotheses when fewer than
    ``beam_size`` finished, sorted by score.
    """
    _check_source(source)
    if len(source) == 2:
        msg = 'Cannot decode an empty source sentence'
        raise InputError(msg)
    if beam_size < 1:
        msg = f'Beam size must be at least 1 (got {beam_size})'
        raise InputError(msg)
    max_len = default_max_len(source) if max_len is None else max_len
    if max_len < 1:
        msg = f'Maximum length must be at least 1 (got {max_len})'
        raise InputError(msg)

    graph = ComputeGraph()
    enc = model.encode(graph, [source])
    state = model.initial_state(graph, which, enc)
    live = [Hypothesis((), 0.0)]
    finished: list[Hypothesis] = []

    for _ in range(max_len):
        rows = np.array([h.state_row for h in live], dtype=np.int64)
        step_enc = enc.select(graph, np.zeros(len(live), dtype=np.int64))
        prev = [h.tokens[-1] if h.tokens else BOS for h in live]
        out = model.decoder_step(graph, which, state.select(graph, rows), prev, step_enc)
        log_probs = log_distribution(out.logits.value)

        candidates = []
        for parent, hyp in enumerate(live):
            for token in np.flatnonzero(np.isfinite(log_probs[parent])):
                total = hyp.log_prob + float(log_probs[parent, token])
                cand = Hypothesis((*hyp.tokens, int(token)), total, bool(token == EOS), parent)
                candidates.append((-cand.score(length_norm), int(token), parent, cand))
        candidates.sort(key=lambda item: item[:3])

        live = []
        for *_, cand in candidates[:beam_size]:
            (finished if cand.finished else live).append(cand)
        state = out.state
        if not live:
            break
        if not length_norm and len(finished) >= beam_size:
            # scores only fall from here on
            kth = sorted(h.score() for h in finished)[-beam_size]
            if max(h.score() for h in live) <= kth:
                break

    pool = sorted(finished, key=lambda h: (-h.score(length_norm), h.tokens))
    if len(pool) < beam_size:
        pool += sorted(live, key=lambda h: (-h.score(length_norm), h.tokens))[
            : beam_size - len(pool)
        ]
        pool.sort(key=lambda h: (-h.score(length_norm), h.tokens))
    logger.debug('Beam search kept %d hypotheses (%d finished)', len(pool), len(finished))
    return pool[:beam_size]


def greedy_decode_batch(
    model: BiDAN,
    which: Decoder,
    sources: Sequence[Sequence[int]],
    max_len: int | None = None,
) -> list[list[int]]:
    """Argmax decoding of a batch; each output is BOS-framed and ends at EOS or its length cap."""
    for source in sources:
        _check_source(source)
    limits = np.array(
        [default_max_len(src) if max_len is None else max_len for src in sources]
    )
    graph = ComputeGraph()
    enc = model.encode(graph, sources)
    state = model.initial_state(graph, which, enc)
    outputs = [[BOS] for _ in sources]
    active = np.ones(len(sources), dtype=bool)
    prev = np.full(len(sources), BOS, dtype=np.int64)
    for step in range(int(limits.max())):
        out = model.decoder_step(graph, which, state, prev, enc)
        state = out.state
        choice = np.argmax(log_distribution(out.logits.value), axis=-1)
        for row in np.flatnonzero(active):
            outputs[row].append(int(choice[row]))
            if choice[row] == EOS or step + 1 >= limits[row]:
                active[row] = False
        if not active.any():
            break
        prev = np.where(active, choice, EOS)
    return outputs


def greedy_decode(
    model: BiDAN, which: Decoder, source: Sequence[int], max_len: int | None = None
) -> list[int]:
    return greedy_decode_batch(model, which, [source], max_len)[0]
