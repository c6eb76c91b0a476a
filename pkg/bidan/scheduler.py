# SPDX-License-Identifier: MIT

"""Two-phase multi-objective training.

Phase one (``JOINT``) applies a J1 update on every mini-batch plus one
auxiliary update whose objective rotates with the batch counter ``c``
according to the mixing ratio. Once the dev loss of D1 stops improving by
``delta_joint`` the run enters phase two (``FROZEN``): the D2 parameters are
left alone and only J1 trains until the dev loss plateaus below
``delta_frozen``.
"""

from __future__ import annotations

import contextlib
import csv
import dataclasses
import enum
import logging
import math
import os
import typing

import numpy as np
from tqdm import tqdm

from bidan.bleu import corpus_bleu
from bidan.config import ExperimentConfig, OptimConfig, ScheduleConfig
from bidan.decode import greedy_decode_batch
from bidan.errors import ConfigurationError, InputError, NonFiniteGradientError, NumericError
from bidan.model import BiDAN, Decoder, ModelParameters
from bidan.objectives import (
    Batch,
    LossResult,
    Objective,
    loss_j1,
    loss_j2,
    loss_jd,
    loss_jrl,
    make_noise,
    sequence_nll,
)


if typing.TYPE_CHECKING:
    from collections.abc import Iterator, Mapping, Sequence
    from typing import TextIO

    from bidan.corpus import EncodedCorpus


__all__ = [
    'LOG_COLUMNS',
    'Decision',
    'LogRecord',
    'MixingSchedule',
    'Phase',
    'TrainResult',
    'TrainState',
    'convergence_monitor',
    'dev_bleu',
    'dev_loss',
    'lr_schedule',
    'relative_improvement',
    'select_objective',
    'sgd_step',
    'train',
]

logger = logging.getLogger(__name__)

LOG_COLUMNS = ('step', 'phase', 'objective', 'j1_loss', 'aux_loss', 'lr', 'dev_loss', 'dev_bleu')


class Phase(enum.Enum):
    JOINT = 'joint'
    FROZEN = 'frozen'


class Decision(enum.Enum):
    CONTINUE = 'continue'
    ENTER_PHASE2 = 'enter_phase2'
    STOP = 'stop'


@dataclasses.dataclass
class MixingSchedule:
    """Mixing ratio of the auxiliary objectives and the phase-one batch counter."""

    lambda_a: int
    lambda_d: int
    lambda_r: int
    c: int = 0

    def __post_init__(self) -> None:
        for key in ('lambda_a', 'lambda_d', 'lambda_r'):
            if getattr(self, key) < 0:
                msg = f'Mixing ratio "{key}" must be non-negative'
                raise ConfigurationError(msg, key=f'schedule.{key}')
        if self.period < 1:
            msg = 'Mixing ratios are all zero'
            raise ConfigurationError(msg, key='schedule.lambda_a')

    @property
    def period(self) -> int:
        return self.lambda_a + self.lambda_d + self.lambda_r

    def select(self) -> Objective:
        return select_objective(self.c, self)

    def advance(self) -> None:
        self.c += 1


def select_objective(c: int, schedule: MixingSchedule) -> Objective:
    position = c % schedule.period
    if position < schedule.lambda_a:
        return Objective.J2
    if position >= schedule.lambda_a + schedule.lambda_d:
        return Objective.JRL
    return Objective.JD


def sgd_step(
    params: ModelParameters,
    grads: Mapping[str, np.ndarray],
    lr: float,
    clip_norm: float | None = 5.0,
) -> float:
    """Apply ``p <- p - lr * g`` after global-norm clipping; returns the unclipped norm.

    Nothing is updated when any gradient is non-finite.
    """
    unknown = sorted(grads.keys() - params.tensors.keys())
    if unknown:
        msg = f'Gradients for unknown parameters: {", ".join(unknown)}'
        raise InputError(msg)
    names = sorted(grads)
    norm = math.sqrt(
        math.fsum(float(np.sum(np.square(grads[n], dtype=np.float64))) for n in names)
    )
    if not math.isfinite(norm):
        bad = [n for n in names if not np.all(np.isfinite(grads[n]))]
        msg = f'Non-finite gradient for {", ".join(bad)}'
        raise NonFiniteGradientError(msg)
    scale = 1.0
    if clip_norm and norm > clip_norm:
        scale = clip_norm / norm
    for name in names:
        value = params.tensors[name]
        params.tensors[name] = (value - (lr * scale) * grads[name]).astype(value.dtype)
    return norm


def lr_schedule(step: int, optim: OptimConfig) -> float:
    """Constant ``lr`` before ``halve_start``, then halved every ``halve_every`` steps."""
    if step < 0:
        msg = f'Step must be non-negative (got {step})'
        raise InputError(msg)
    if step < optim.halve_start:
        return optim.lr
    halvings = 1 + (step - optim.halve_start) // optim.halve_every
    return optim.lr * 0.5**halvings


def relative_improvement(history: Sequence[float], patience: int) -> float | None:
    """Relative drop of the best loss over the last ``patience`` evaluations.

    The reference is the best loss before that window opened; ``None`` until
    there are more than ``patience`` values.
    """
    if len(history) <= patience:
        return None
    reference = min(history[: len(history) - patience + 1])
    best = min(history)
    return (reference - best) / abs(reference) if reference else 0.0


def convergence_monitor(
    history: Sequence[float],
    phase: Phase,
    schedule: ScheduleConfig | None = None,
    *,
    phase_steps: int = 0,
) -> Decision:
    """Decide whether to keep training, freeze D2 or stop.

    ``history`` holds the dev losses seen in the current phase. ``phase_steps``
    counts the steps taken in it and is compared with the per-phase caps
    (0 disables a cap). With ``phase_gate = "never"`` the joint phase runs
    to the frozen-phase threshold and then stops.
    """
    schedule = schedule or ScheduleConfig()
    joint = phase is Phase.JOINT
    to_the_end = not joint or schedule.phase_gate == 'never'
    finish = Decision.STOP if to_the_end else Decision.ENTER_PHASE2
    cap = schedule.joint_max_steps if joint else schedule.frozen_max_steps
    if cap and phase_steps >= cap:
        return finish
    improvement = relative_improvement(history, schedule.patience)
    if improvement is None:
        return Decision.CONTINUE
    threshold = schedule.delta_frozen if to_the_end else schedule.delta_joint
    return finish if improvement < threshold else Decision.CONTINUE


@dataclasses.dataclass
class TrainState:
    phase: Phase
    mixing: MixingSchedule | None
    step: int = 0
    lr: float = 0.0
    phase_start: int = 0
    dev_history: list[float] = dataclasses.field(default_factory=list)
    phase_history: list[float] = dataclasses.field(default_factory=list)
    skipped_steps: int = 0


class LogRecord(typing.NamedTuple):
    step: int
    phase: Phase
    objective: str
    j1_loss: float | None
    aux_loss: float | None
    lr: float
    dev_loss: float | None = None
    dev_bleu: float | None = None

    def row(self) -> list[str]:
        def fmt(value: float | None) -> str:
            return '' if value is None else f'{value:.6f}'

        return [
            str(self.step),
            self.phase.value,
            self.objective,
            fmt(self.j1_loss),
            fmt(self.aux_loss),
            f'{self.lr:.6g}',
            fmt(self.dev_loss),
            fmt(self.dev_bleu),
        ]


class TrainResult(typing.NamedTuple):
    model: BiDAN
    log: list[LogRecord]
    state: TrainState


def _batch_indices(size: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    while True:
        order = rng.permutation(size)
        for start in range(0, size, batch_size):
            yield order[start : start + batch_size]


def dev_loss(model: BiDAN, corpus: EncodedCorpus, batch_size: int = 64) -> float:
    """Per-token eval-mode D1 loss on the dev split."""
    pairs = corpus.pairs('dev')
    if not pairs:
        msg = 'Corpus has no dev split'
        raise InputError(msg)
    total, tokens = 0.0, 0
    for start in range(0, len(pairs), batch_size):
        chunk = pairs[start : start + batch_size]
        nll, count = sequence_nll(
            model, Decoder.D1, [src for src, _ in chunk], [tgt for _, tgt in chunk]
        )
        total += nll
        tokens += count
    return total / tokens


def dev_bleu(
    model: BiDAN, corpus: EncodedCorpus, sentences: int, split: str = 'dev', batch_size: int = 64
) -> float:
    """Greedy-decoding BLEU of D1 on the first ``sentences`` pairs of ``split``."""
    pairs = corpus.pairs(split)[:sentences]
    if not pairs:
        return 0.0
    hyps: list[str] = []
    for start in range(0, len(pairs), batch_size):
        outputs = greedy_decode_batch(
            model, Decoder.D1, [src for src, _ in pairs[start : start + batch_size]]
        )
        hyps.extend(corpus.tgt_vocab.decode(ids) for ids in outputs)
    refs = [corpus.tgt_vocab.decode(tgt) for _, tgt in pairs]
    return corpus_bleu(hyps, refs).bleu


def _update(
    model: BiDAN,
    result: LossResult,
    lr: float,
    clip_norm: float,
    state: TrainState,
    label: str,
) -> float:
    if not math.isfinite(result.loss):
        msg = f'{label} loss became non-finite at step {state.step}'
        raise NumericError(msg)
    try:
        sgd_step(model.params, result.grads, lr, clip_norm)
    except NonFiniteGradientError as e:
        state.skipped_steps += 1
        logger.warning('Skipping %s update at step %d: %s', label, state.step, e)
    return result.loss


def _auxiliary(
    model: BiDAN,
    objective: Objective,
    batch: Batch,
    schedule: ScheduleConfig,
    rng: np.random.Generator,
) -> LossResult:
    if objective is Objective.J2:
        return loss_j2(model, batch, train=True, rng=rng)
    if objective is Objective.JD:
        noised = [make_noise(src, rng).noised for src in batch.sources]
        return loss_jd(model, batch, noised, noise_side=schedule.noise_side, train=True, rng=rng)
    return loss_jrl(model, batch, rng, baseline=schedule.reward_baseline, train=True)


@contextlib.contextmanager
def _log_writer(
    path: str | os.PathLike[str] | None, stream: TextIO | None
) -> Iterator[TextIO | None]:
    if path is None:
        yield stream
        return
    with open(path, 'w', encoding='utf-8', newline='') as f:
        yield f


def train(
    model: BiDAN,
    corpus: EncodedCorpus,
    config: ExperimentConfig,
    *,
    log_path: str | os.PathLike[str] | None = None,
    log_stream: TextIO | None = None,
    progress: bool = False,
) -> TrainResult:
    """Train ``model`` in place on the train split of ``corpus``.

    Every step appends one :class:`LogRecord`; dev loss and dev BLEU are
    filled in on evaluation steps. When ``log_path`` is given the records
    are also streamed to a CSV file with the :data:`LOG_COLUMNS` header;
    ``log_stream`` receives the same rows when no path is given.
    """
    schedule, optim = config.schedule, config.optim
    pairs = corpus.pairs('train')
    if not pairs:
        msg = 'Corpus has no training pairs'
        raise InputError(msg)
    if schedule.eval_every <= optim.total_steps and not corpus.pairs('dev'):
        msg = (
            'Corpus has no dev split; training evaluates on it '
            f'every {schedule.eval_every} steps'
        )
        raise InputError(msg)
    rng = np.random.default_rng(config.seed)
    if schedule.phase_gate == 'immediate':
        state = TrainState(Phase.FROZEN, None)
    else:
        state = TrainState(
            Phase.JOINT, MixingSchedule(schedule.lambda_a, schedule.lambda_d, schedule.lambda_r)
        )
    batch_size = optim.batch_size if schedule.has_auxiliary else optim.baseline_batch_size
    batches = _batch_indices(len(pairs), batch_size, rng)
    log: list[LogRecord] = []
    logger.info(
        'Training for up to %d steps (phase %s, batch size %d)',
        optim.total_steps,
        state.phase.value,
        batch_size,
    )

    with _log_writer(log_path, log_stream) as stream, tqdm(
        total=optim.total_steps, disable=not progress, desc='train', unit='step'
    ) as bar:
        writer = csv.writer(stream, lineterminator='\n') if stream is not None else None
        if writer is not None:
            writer.writerow(LOG_COLUMNS)
        decision = Decision.CONTINUE
        while state.step < optim.total_steps and decision is not Decision.STOP:
            indices = next(batches)
            batch = Batch.of([pairs[i][0] for i in indices], [pairs[i][1] for i in indices])
            state.lr = lr_schedule(state.step, optim)
            j1 = aux = None
            objective = Objective.J1.value
            if state.mixing is not None and state.phase is Phase.JOINT:
                exclusive = schedule.aux_mode == 'exclusive'
                c = state.mixing.c
                if not exclusive or c % 2 == 0:
                    result = loss_j1(model, batch, train=True, rng=rng)
                    j1 = _update(model, result, state.lr, optim.clip_norm, state, 'J1')
                if not exclusive or c % 2 == 1:
                    selected = select_objective(c // 2 if exclusive else c, state.mixing)
                    result = _auxiliary(model, selected, batch, schedule, rng)
                    aux = _update(model, result, state.lr, optim.clip_norm, state, selected.value)
                    objective = selected.value if exclusive else f'J1+{selected.value}'
                state.mixing.advance()
            else:
                result = loss_j1(model, batch, train=True, rng=rng)
                j1 = _update(model, result, state.lr, optim.clip_norm, state, 'J1')
            state.step += 1
            record = LogRecord(state.step, state.phase, objective, j1, aux, state.lr)

            if state.step % schedule.eval_every == 0:
                loss = dev_loss(model, corpus)
                bleu = dev_bleu(model, corpus, schedule.dev_bleu_sentences)
                record = record._replace(dev_loss=loss, dev_bleu=bleu)
                state.dev_history.append(loss)
                state.phase_history.append(loss)
                decision = convergence_monitor(
                    state.phase_history,
                    state.phase,
                    schedule,
                    phase_steps=state.step - state.phase_start,
                )
                logger.info(
                    'Step %d (%s): dev loss %.4f, dev BLEU %.4f',
                    state.step,
                    state.phase.value,
                    loss,
                    bleu,
                )
                if decision is Decision.ENTER_PHASE2:
                    logger.info('Freezing the auxiliary decoder at step %d', state.step)
                    state.phase = Phase.FROZEN
                    state.phase_start = state.step
                    state.phase_history = [loss]
                elif decision is Decision.STOP:
                    logger.info('Converged at step %d', state.step)

            log.append(record)
            if writer is not None:
                writer.writerow(record.row())
            bar.update()
            logger.debug('Step %d: %s', state.step, record)

    if state.skipped_steps:
        logger.warning('Skipped %d updates with non-finite gradients', state.skipped_steps)
    return TrainResult(model, log, state)
