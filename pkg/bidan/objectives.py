# SPDX-License-Identifier: MIT

"""Training objectives.

``loss_j1`` trains translation through D1. ``loss_j2`` (autoencoding),
``loss_jd`` (denoising) and ``loss_jrl`` (policy gradient with a cosine
reward) train D2 on the source side. All losses are normalised per target
token and return gradients only for the parameters they touch: the shared
encoder plus the decoder involved.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
import typing

import numpy as np

from bidan.decode import generation_mask, log_distribution
from bidan.errors import InputError
from bidan.model import BiDAN, Decoder
from bidan.tensor import ComputeGraph, Var
from bidan.vocab import BOS, EOS, RESERVED_TOKENS


if typing.TYPE_CHECKING:
    from collections.abc import Sequence


__all__ = [
    'Batch',
    'LossResult',
    'NoisedSentence',
    'Objective',
    'RolloutSample',
    'default_length_cap',
    'loss_j1',
    'loss_j2',
    'loss_jd',
    'loss_jrl',
    'make_noise',
    'reinforce_surrogate',
    'reward_cosine',
    'sample_rollout',
    'sequence_nll',
]

logger = logging.getLogger(__name__)


class Objective(enum.Enum):
    J1 = 'J1'
    J2 = 'J2'
    JD = 'JD'
    JRL = 'JRL'


def _check_framed(seq: Sequence[int], what: str) -> None:
    if len(seq) < 2 or seq[0] != BOS or seq[-1] != EOS:
        msg = f'{what} must be framed by BOS and EOS (got {list(seq)})'
        raise InputError(msg)


@dataclasses.dataclass(frozen=True)
class Batch:
    """Framed sources and their targets; for source-side objectives ``targets`` is ``sources``."""

    sources: tuple[tuple[int, ...], ...]
    targets: tuple[tuple[int, ...], ...]

    def __post_init__(self) -> None:
        if not self.sources:
            msg = 'Batch is empty'
            raise InputError(msg)
        if len(self.sources) != len(self.targets):
            msg = f'Batch has {len(self.sources)} sources but {len(self.targets)} targets'
            raise InputError(msg)
        for seq in self.sources:
            _check_framed(seq, 'Source')
        for seq in self.targets:
            _check_framed(seq, 'Target')

    @classmethod
    def of(
        cls,
        sources: Sequence[Sequence[int]],
        targets: Sequence[Sequence[int]] | None = None,
    ) -> Batch:
        src = tuple(tuple(s) for s in sources)
        return cls(src, src if targets is None else tuple(tuple(t) for t in targets))

    def __len__(self) -> int:
        return len(self.sources)


class LossResult(typing.NamedTuple):
    loss: float
    grads: dict[str, np.ndarray]
    tokens: int
    reward: float | None = None


def _teacher_forced(
    model: BiDAN,
    which: Decoder,
    sources: Sequence[Sequence[int]],
    targets: Sequence[Sequence[int]],
    train: bool,
    rng: np.random.Generator | None,
) -> LossResult:
    graph = ComputeGraph()
    enc = model.encode(graph, sources, train=train, rng=rng)
    nll, tokens = model.teacher_forced_nll(graph, which, enc, targets, train=train, rng=rng)
    loss = nll * (1.0 / tokens)
    return LossResult(float(loss.value), graph.backward(loss), tokens)


def sequence_nll(
    model: BiDAN,
    which: Decoder,
    sources: Sequence[Sequence[int]],
    targets: Sequence[Sequence[int]],
) -> tuple[float, int]:
    """Summed eval-mode negative log-likelihood and token count, without gradients."""
    graph = ComputeGraph()
    enc = model.encode(graph, sources)
    nll, tokens = model.teacher_forced_nll(graph, which, enc, targets)
    return float(nll.value), tokens


def loss_j1(
    model: BiDAN,
    batch: Batch,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> LossResult:
    """Per-token translation cross-entropy of D1; gradients cover theta_e and theta_1."""
    return _teacher_forced(model, Decoder.D1, batch.sources, batch.targets, train, rng)


def loss_j2(
    model: BiDAN,
    batch: Batch,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> LossResult:
    """Per-token reconstruction cross-entropy of D2 against the clean source."""
    return _teacher_forced(model, Decoder.D2, batch.sources, batch.sources, train, rng)


class NoisedSentence(typing.NamedTuple):
    original: tuple[int, ...]
    noised: tuple[int, ...]
    swaps: tuple[int, ...]


def make_noise(sentence: Sequence[int], rng: np.random.Generator) -> NoisedSentence:
    """Apply ``floor(m / 4)`` random swaps of adjacent interior tokens.

    ``m`` counts the tokens between BOS and EOS. Each swap exchanges the
    tokens at positions ``i`` and ``i + 1``, with ``i`` drawn uniformly
    over ``1..m-1``; the recorded swaps are those ``i`` in order.
    """
    _check_framed(sentence, 'Sentence')
    tokens = list(sentence)
    m = len(tokens) - 2
    swaps = []
    for _ in range(m // 4):
        i = int(rng.integers(1, m))
        tokens[i], tokens[i + 1] = tokens[i + 1], tokens[i]
        swaps.append(i)
    return NoisedSentence(tuple(sentence), tuple(tokens), tuple(swaps))


def loss_jd(
    model: BiDAN,
    batch: Batch,
    noised: Sequence[Sequence[int]],
    *,
    noise_side: str = 'target',
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> LossResult:
    """Denoising cross-entropy of D2.

    With ``noise_side='target'`` the clean source is encoded and D2 is scored
    against the noised sentence; ``'input'`` encodes the noised sentence and
    scores the clean one.
    """
    if len(noised) != len(batch):
        msg = f'Got {len(noised)} noised sentences for a batch of {len(batch)}'
        raise InputError(msg)
    for clean, noisy in zip(batch.sources, noised):
        if len(clean) != len(noisy):
            msg = f'Noised sentence has length {len(noisy)}, expected {len(clean)}'
            raise InputError(msg)
    if noise_side == 'target':
        return _teacher_forced(model, Decoder.D2, batch.sources, noised, train, rng)
    if noise_side == 'input':
        return _teacher_forced(model, Decoder.D2, noised, batch.sources, train, rng)
    msg = f'Unknown noise side "{noise_side}", expecting "target" or "input"'
    raise InputError(msg)


class RolloutSample(typing.NamedTuple):
    """One sequence sampled from D2; ``tokens`` excludes BOS and ends at EOS unless capped."""

    tokens: tuple[int, ...]
    step_log_probs: tuple[float, ...]
    reward: float

    @property
    def log_prob(self) -> float:
        return math.fsum(self.step_log_probs)


def default_length_cap(source: Sequence[int]) -> int:
    return max(1, math.ceil(1.5 * (len(source) - 2)))


def _content(tokens: Sequence[int]) -> list[int]:
    return [t for t in tokens if t >= len(RESERVED_TOKENS)]


def reward_cosine(sample: Sequence[int], source: Sequence[int], embeddings: np.ndarray) -> float:
    """Cosine between the mean embeddings of the non-reserved tokens of both sequences.

    An empty or zero-norm side scores 0.
    """
    a, b = _content(sample), _content(source)
    if not a or not b:
        return 0.0
    u = embeddings[a].astype(np.float64).mean(axis=0)
    v = embeddings[b].astype(np.float64).mean(axis=0)
    norm = float(np.linalg.norm(u) * np.linalg.norm(v))
    if norm == 0.0:
        return 0.0
    return float(np.clip(np.dot(u, v) / norm, -1.0, 1.0))


def _rollouts(
    model: BiDAN,
    graph: ComputeGraph,
    sources: Sequence[Sequence[int]],
    rng: np.random.Generator,
    caps: Sequence[int],
    *,
    greedy: bool,
    train: bool,
) -> tuple[list[RolloutSample], Var]:
    """Sample from D2 for every source; returns the samples and a ``(B,)`` node of ``-log pi``."""
    if min(caps) < 1:
        msg = f'Length cap must be at least 1 (got {min(caps)})'
        raise InputError(msg)
    enc = model.encode(graph, sources, train=train, rng=rng)
    state = model.initial_state(graph, Decoder.D2, enc)
    embeddings = model.params.tensors['enc.embed']
    batch = len(sources)
    vocab_mask = generation_mask(model.config.src_vocab_size)
    tokens: list[list[int]] = [[] for _ in range(batch)]
    step_log_probs: list[list[float]] = [[] for _ in range(batch)]
    active = np.ones(batch, dtype=bool)
    prev = np.full(batch, BOS, dtype=np.int64)
    neg_log_pi: Var | None = None
    for step in range(max(caps)):
        out = model.decoder_step(graph, Decoder.D2, state, prev, enc, train=train, rng=rng)
        state = out.state
        log_probs = log_distribution(out.logits.value)
        if greedy:
            choice = np.argmax(log_probs, axis=-1)
        else:
            cdf = np.cumsum(np.exp(log_probs), axis=-1)
            u = rng.random(batch) * cdf[:, -1]
            choice = np.minimum((cdf < u[:, None]).sum(axis=-1), len(vocab_mask) - 1)
            # guard against rounding onto a banned id
            choice = np.where(vocab_mask[choice], choice, EOS)
        weights = active.astype(model.params.dtype)
        term = graph.cross_entropy(
            out.logits, choice, weights, vocab_mask=vocab_mask, reduction='none'
        )
        neg_log_pi = term if neg_log_pi is None else neg_log_pi + term
        for row in np.flatnonzero(active):
            tokens[row].append(int(choice[row]))
            step_log_probs[row].append(float(log_probs[row, choice[row]]))
            if choice[row] == EOS or step + 1 >= caps[row]:
                active[row] = False
        if not active.any():
            break
        prev = np.where(active, choice, EOS)
    assert neg_log_pi is not None
    samples = [
        RolloutSample(
            tuple(tokens[row]),
            tuple(step_log_probs[row]),
            reward_cosine(tokens[row], sources[row], embeddings),
        )
        for row in range(batch)
    ]
    return samples, neg_log_pi


def sample_rollout(
    model: BiDAN,
    source: Sequence[int],
    rng: np.random.Generator,
    length_cap: int | None = None,
    *,
    greedy: bool = False,
) -> RolloutSample:
    """Ancestral sample from D2 given ``source``; ``greedy`` takes the argmax instead."""
    _check_framed(source, 'Source')
    cap = default_length_cap(source) if length_cap is None else length_cap
    samples, _ = _rollouts(model, ComputeGraph(), [source], rng, [cap], greedy=greedy, train=False)
    return samples[0]


def reinforce_surrogate(
    graph: ComputeGraph, log_probs: Var, rewards: np.ndarray, *, baseline: bool = True
) -> Var:
    """Scalar whose gradient is the REINFORCE estimate of ``-grad E[R]``.

    ``log_probs`` holds one sequence log-probability per sample. Rewards
    enter as constants; with ``baseline`` their batch mean is subtracted.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.shape != log_probs.shape:
        msg = f'Got {rewards.shape} rewards for log-probabilities of shape {log_probs.shape}'
        raise InputError(msg)
    advantage = rewards - rewards.mean() if baseline else rewards
    weights = (-advantage / len(rewards)).astype(log_probs.value.dtype)
    return graph.sum(log_probs * weights)


def loss_jrl(
    model: BiDAN,
    batch: Batch,
    rng: np.random.Generator,
    *,
    baseline: bool = True,
    train: bool = False,
    length_cap: int | None = None,
) -> LossResult:
    """Policy-gradient surrogate for the cosine reward of D2 samples.

    The reported ``loss`` is the surrogate value; ``reward`` is the batch mean.
    """
    caps = [
        default_length_cap(src) if length_cap is None else length_cap for src in batch.sources
    ]
    graph = ComputeGraph()
    samples, neg_log_pi = _rollouts(
        model, graph, batch.sources, rng, caps, greedy=False, train=train
    )
    rewards = np.array([s.reward for s in samples])
    surrogate = reinforce_surrogate(graph, -neg_log_pi, rewards, baseline=baseline)
    tokens = sum(len(s.tokens) for s in samples)
    logger.debug('Rollout batch: mean reward %.4f over %d tokens', rewards.mean(), tokens)
    grads = graph.backward(surrogate)
    return LossResult(float(surrogate.value), grads, tokens, float(rewards.mean()))
