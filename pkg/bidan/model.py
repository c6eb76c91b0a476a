# SPDX-License-Identifier: MIT

"""The bi-decoder network: one shared encoder, two attention decoders.

Parameter names carry their partition as a prefix: ``enc.`` for the shared
encoder and source embeddings (theta_e), ``dec1.`` for the target-language
decoder D1 and ``dec2.`` for the source-reconstruction decoder D2. The two
decoders are shape-identical up to their output vocabulary and share no
parameters, attention included.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import typing

import numpy as np

from bidan.errors import ConfigurationError, InputError
from bidan.tensor import DTYPE, ComputeGraph, Var
from bidan.vocab import PAD


if typing.TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

__all__ = [
    'SCORE_VARIANTS',
    'AttentionOutput',
    'BiDAN',
    'Decoder',
    'DecoderState',
    'EncoderStates',
    'ModelConfig',
    'ModelParameters',
    'Partition',
    'StepOutput',
    'init_parameters',
    'pad_batch',
    'parameter_shapes',
]

logger = logging.getLogger(__name__)

SCORE_VARIANTS = ('additive', 'bilinear', 'concat')


class Partition(enum.Enum):
    ENCODER = 'theta_e'
    DECODER1 = 'theta_1'
    DECODER2 = 'theta_2'

    @property
    def prefix(self) -> str:
        return {'theta_e': 'enc.', 'theta_1': 'dec1.', 'theta_2': 'dec2.'}[self.value]


class Decoder(enum.Enum):
    D1 = 'dec1'
    D2 = 'dec2'

    @property
    def partition(self) -> Partition:
        return Partition.DECODER1 if self is Decoder.D1 else Partition.DECODER2


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    """Network sizes. Vocabulary sizes are filled in once vocabularies exist."""

    src_vocab_size: int = 0
    tgt_vocab_size: int = 0
    layers: int = 2
    units: int = 64
    embed: int = 32
    score: str = 'additive'
    input_feeding: bool = True
    dropout: float = 0.2
    init_scale: float = 0.1

    def validate(self, *, require_vocab: bool = True) -> None:
        keys = ('layers', 'units', 'embed')
        if require_vocab:
            keys = ('src_vocab_size', 'tgt_vocab_size', *keys)
        for key in keys:
            value = getattr(self, key)
            if value < 1:
                msg = f'Model dimension "{key}" must be at least 1 (got {value})'
                raise ConfigurationError(msg, key=f'model.{key}')
        if self.score not in SCORE_VARIANTS:
            msg = f'Unknown attention score "{self.score}", expecting one of {SCORE_VARIANTS}'
            raise ConfigurationError(msg, key='model.score')
        if not 0 <= self.dropout < 1:
            msg = f'Dropout rate must lie in [0, 1) (got {self.dropout})'
            raise ConfigurationError(msg, key='model.dropout')

    def vocab_size(self, which: Decoder) -> int:
        return self.tgt_vocab_size if which is Decoder.D1 else self.src_vocab_size


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    h, e = config.units, config.embed
    shapes: dict[str, tuple[int, ...]] = {'enc.embed': (config.src_vocab_size, e)}
    for direction in ('fwd', 'bwd'):
        for layer in range(config.layers):
            prefix = f'enc.{direction}.{layer}'
            shapes[f'{prefix}.wx'] = (e if layer == 0 else h, 4 * h)
            shapes[f'{prefix}.wh'] = (h, 4 * h)
            shapes[f'{prefix}.b'] = (4 * h,)
    for which in Decoder:
        d = which.value
        vocab = config.vocab_size(which)
        shapes[f'{d}.embed'] = (vocab, e)
        for layer in range(config.layers):
            if layer == 0:
                width = e + h if config.input_feeding else e
            else:
                width = h
            shapes[f'{d}.lstm.{layer}.wx'] = (width, 4 * h)
            shapes[f'{d}.lstm.{layer}.wh'] = (h, 4 * h)
            shapes[f'{d}.lstm.{layer}.b'] = (4 * h,)
            shapes[f'{d}.bridge.{layer}.wh'] = (h, h)
            shapes[f'{d}.bridge.{layer}.bh'] = (h,)
            shapes[f'{d}.bridge.{layer}.wc'] = (h, h)
            shapes[f'{d}.bridge.{layer}.bc'] = (h,)
        if config.score == 'additive':
            shapes[f'{d}.attn.w1'] = (2 * h, h)
            shapes[f'{d}.attn.w2'] = (h, h)
            shapes[f'{d}.attn.v'] = (h, 1)
        elif config.score == 'bilinear':
            shapes[f'{d}.attn.w'] = (2 * h, h)
        else:
            shapes[f'{d}.attn.w'] = (3 * h, 1)
        shapes[f'{d}.attn.wa'] = (3 * h, h)
        shapes[f'{d}.attn.ba'] = (h,)
        shapes[f'{d}.out.wp'] = (h, vocab)
        shapes[f'{d}.out.bp'] = (vocab,)
    return shapes


@dataclasses.dataclass
class ModelParameters:
    """All trainable tensors, keyed by partition-prefixed name."""

    config: ModelConfig
    tensors: dict[str, np.ndarray]

    @staticmethod
    def partition_of(name: str) -> Partition:
        for partition in Partition:
            if name.startswith(partition.prefix):
                return partition
        msg = f'Parameter "{name}" belongs to no partition'
        raise ConfigurationError(msg)

    def names(self, partition: Partition | None = None) -> list[str]:
        return sorted(
            name
            for name in self.tensors
            if partition is None or self.partition_of(name) is partition
        )

    def count(self, partition: Partition | None = None) -> int:
        return sum(self.tensors[name].size for name in self.names(partition))

    @property
    def dtype(self) -> np.dtype[typing.Any]:
        return self.tensors['enc.embed'].dtype

    def copy(self) -> ModelParameters:
        return ModelParameters(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype: type[np.floating[typing.Any]]) -> ModelParameters:
        return ModelParameters(
            self.config, {k: v.astype(dtype) for k, v in self.tensors.items()}
        )

    def replace_partition(
        self, partition: Partition, tensors: dict[str, np.ndarray]
    ) -> ModelParameters:
        """Copy of these parameters with ``partition`` taken from ``tensors``.

        Names and shapes must match exactly; mismatches are listed in the error.
        """
        ours = {name: self.tensors[name].shape for name in self.names(partition)}
        theirs = {
            name: value.shape
            for name, value in tensors.items()
            if self.partition_of(name) is partition
        }
        problems = [
            f'{name}: {ours.get(name)} vs {theirs.get(name)}'
            for name in sorted(ours.keys() | theirs.keys())
            if ours.get(name) != theirs.get(name)
        ]
        if problems:
            msg = f'Incompatible {partition.value} tensors: ' + '; '.join(problems)
            raise ConfigurationError(msg)
        merged = self.copy()
        for name in ours:
            merged.tensors[name] = tensors[name].astype(self.dtype, copy=True)
        return merged


def init_parameters(config: ModelConfig, seed: int) -> ModelParameters:
    """Uniform initialisation in ``[-init_scale, init_scale]``.

    LSTM forget-gate biases start at 1.0. The draw order is the sorted
    parameter names, so a seed fixes every value.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    shapes = parameter_shapes(config)
    tensors: dict[str, np.ndarray] = {}
    for name in sorted(shapes):
        value = rng.uniform(-config.init_scale, config.init_scale, size=shapes[name])
        if name.endswith('.b') and ('.lstm.' in name or name.startswith('enc.')):
            h = config.units
            value[h : 2 * h] = 1.0
        tensors[name] = value.astype(DTYPE)
    params = ModelParameters(config, tensors)
    logger.debug('Initialised %d parameters from seed %d', params.count(), seed)
    return params


def pad_batch(sequences: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad ``sequences`` with PAD; returns ``(ids, mask)`` of shape ``(B, T)``."""
    if not sequences:
        msg = 'Cannot pad an empty batch'
        raise InputError(msg)
    width = max(len(seq) for seq in sequences)
    ids = np.full((len(sequences), width), PAD, dtype=np.int64)
    mask = np.zeros((len(sequences), width), dtype=bool)
    for row, seq in enumerate(sequences):
        ids[row, : len(seq)] = seq
        mask[row, : len(seq)] = True
    return ids, mask


@dataclasses.dataclass
class EncoderStates:
    """Per-position encoder outputs ``h_s`` and the source padding mask."""

    states: Var
    mask: np.ndarray
    forward: Var
    backward: Var
    final: Var
    _keys: dict[str, Var] = dataclasses.field(default_factory=dict, repr=False)

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)  # type: ignore[no-any-return]

    def select(self, graph: ComputeGraph, rows: np.ndarray) -> EncoderStates:
        """Encoder states for the batch rows ``rows`` (repeats allowed)."""
        return EncoderStates(
            graph.gather(self.states, rows),
            self.mask[rows],
            graph.gather(self.forward, rows),
            graph.gather(self.backward, rows),
            graph.gather(self.final, rows),
        )


@dataclasses.dataclass
class DecoderState:
    """Per-layer hidden and cell states plus the fed-back attention vector."""

    hidden: list[Var]
    cell: list[Var]
    feed: Var | None

    def select(self, graph: ComputeGraph, rows: np.ndarray) -> DecoderState:
        return DecoderState(
            [graph.gather(h, rows) for h in self.hidden],
            [graph.gather(c, rows) for c in self.cell],
            None if self.feed is None else graph.gather(self.feed, rows),
        )


class AttentionOutput(typing.NamedTuple):
    weights: Var
    context: Var
    vector: Var


class StepOutput(typing.NamedTuple):
    state: DecoderState
    attention: AttentionOutput
    logits: Var


class BiDAN:
    """Forward computations of the network over a :class:`ComputeGraph`.

    Every method takes the graph to record into; parameters enter the graph
    as named leaves, so :meth:`ComputeGraph.backward` reports gradients by
    parameter name.
    """

    def __init__(self, params: ModelParameters) -> None:
        params.config.validate()
        self.params = params
        self.config = params.config

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int) -> BiDAN:
        return cls(init_parameters(config, seed))

    def weight(self, graph: ComputeGraph, name: str) -> Var:
        return graph.param(name, self.params.tensors[name])

    def _zeros(self, graph: ComputeGraph, rows: int) -> Var:
        return graph.constant(np.zeros((rows, self.config.units), dtype=self.params.dtype))

    def _check_ids(self, ids: np.ndarray, vocab: int, side: str) -> None:
        if ids.size and (ids.min() < 0 or ids.max() >= vocab):
            msg = f'{side} token id out of range for a vocabulary of {vocab}'
            raise InputError(msg)

    def lstm_cell(
        self, graph: ComputeGraph, prefix: str, x: Var, h: Var, c: Var
    ) -> tuple[Var, Var]:
        """One LSTM step; gate order in the fused weights is input, forget, output, candidate."""
        units = self.config.units
        gates = (
            x @ self.weight(graph, f'{prefix}.wx')
            + h @ self.weight(graph, f'{prefix}.wh')
            + self.weight(graph, f'{prefix}.b')
        )
        i = graph.sigmoid(graph.slice(gates, 0, units))
        f = graph.sigmoid(graph.slice(gates, units, 2 * units))
        o = graph.sigmoid(graph.slice(gates, 2 * units, 3 * units))
        g = graph.tanh(graph.slice(gates, 3 * units, 4 * units))
        c_next = f * c + i * g
        return o * graph.tanh(c_next), c_next

    def run_direction(
        self,
        graph: ComputeGraph,
        direction: str,
        ids: np.ndarray,
        *,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> list[Var]:
        """Run one encoder LSTM stack left to right over ``ids`` of shape ``(B, T)``.

        Returns the top-layer hidden state at every time step.
        """
        embed = self.weight(graph, 'enc.embed')
        rate = self.config.dropout
        batch, steps = ids.shape
        inputs = [
            graph.dropout(graph.gather(embed, ids[:, t]), rate, rng, train=train)
            for t in range(steps)
        ]
        for layer in range(self.config.layers):
            if layer:
                inputs = [graph.dropout(x, rate, rng, train=train) for x in inputs]
            h = c = self._zeros(graph, batch)
            outputs = []
            for x in inputs:
                h, c = self.lstm_cell(graph, f'enc.{direction}.{layer}', x, h, c)
                outputs.append(h)
            inputs = outputs
        return inputs

    def encode(
        self,
        graph: ComputeGraph,
        sources: Sequence[Sequence[int]],
        *,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> EncoderStates:
        """Bidirectional encoding of a batch of BOS/EOS-framed sources."""
        if any(len(src) < 2 for src in sources):
            msg = 'Source sequences must be framed with BOS and EOS'
            raise InputError(msg)
        ids, mask = pad_batch(sources)
        self._check_ids(ids, self.config.src_vocab_size, 'Source')
        batch, steps = ids.shape
        lengths = mask.sum(axis=1)

        # backward stack reads each row's valid prefix reversed
        reorder = np.tile(np.arange(steps), (batch, 1))
        for row, length in enumerate(lengths):
            reorder[row, :length] = np.arange(length - 1, -1, -1)
        reversed_ids = np.take_along_axis(ids, reorder, axis=1)

        forward = graph.stack(self.run_direction(graph, 'fwd', ids, train=train, rng=rng), axis=1)
        backward_steps = self.run_direction(graph, 'bwd', reversed_ids, train=train, rng=rng)
        units = self.config.units
        flat = graph.reshape(graph.stack(backward_steps, axis=1), (batch * steps, units))
        backward = graph.gather(flat, reorder + steps * np.arange(batch)[:, None])
        states = graph.concat([forward, backward], axis=-1)
        final = graph.reshape(graph.slice(backward, 0, 1, axis=1), (batch, units))
        return EncoderStates(states, mask, forward, backward, final)

    def initial_state(
        self, graph: ComputeGraph, which: Decoder, enc: EncoderStates
    ) -> DecoderState:
        """Affine + tanh bridge from the final backward encoder state, per layer."""
        d = self._decoder(which).value
        hidden, cell = [], []
        for layer in range(self.config.layers):
            prefix = f'{d}.bridge.{layer}'
            hidden.append(
                graph.tanh(
                    enc.final @ self.weight(graph, f'{prefix}.wh')
                    + self.weight(graph, f'{prefix}.bh')
                )
            )
            cell.append(
                graph.tanh(
                    enc.final @ self.weight(graph, f'{prefix}.wc')
                    + self.weight(graph, f'{prefix}.bc')
                )
            )
        rows = enc.mask.shape[0]
        feed = self._zeros(graph, rows) if self.config.input_feeding else None
        return DecoderState(hidden, cell, feed)

    def _decoder(self, which: object) -> Decoder:
        if not isinstance(which, Decoder):
            msg = f'Unknown decoder {which!r}, expecting Decoder.D1 or Decoder.D2'
            raise ConfigurationError(msg)
        return which

    def _scores(self, graph: ComputeGraph, enc: EncoderStates, query: Var, d: str) -> Var:
        batch, steps = enc.mask.shape
        units = self.config.units
        score = self.config.score
        if score == 'additive':
            if d not in enc._keys:
                enc._keys[d] = enc.states @ self.weight(graph, f'{d}.attn.w1')
            projected = graph.reshape(query @ self.weight(graph, f'{d}.attn.w2'), (batch, 1, units))
            hidden = graph.tanh(enc._keys[d] + projected)
            return graph.reshape(hidden @ self.weight(graph, f'{d}.attn.v'), (batch, steps))
        if score == 'bilinear':
            if d not in enc._keys:
                enc._keys[d] = enc.states @ self.weight(graph, f'{d}.attn.w')
            return graph.sum(enc._keys[d] * graph.reshape(query, (batch, 1, units)), axis=-1)
        tiled = graph.broadcast_to(graph.reshape(query, (batch, 1, units)), (batch, steps, units))
        joined = graph.concat([enc.states, tiled], axis=-1)
        return graph.reshape(joined @ self.weight(graph, f'{d}.attn.w'), (batch, steps))

    def attention(
        self, graph: ComputeGraph, enc: EncoderStates, query: Var, which: Decoder
    ) -> AttentionOutput:
        """Masked attention of decoder state ``query`` over the encoder states."""
        d = self._decoder(which).value
        batch, steps = enc.mask.shape
        weights = graph.softmax(self._scores(graph, enc, query, d), axis=-1, mask=enc.mask)
        context = graph.reshape(
            graph.reshape(weights, (batch, 1, steps)) @ enc.states,
            (batch, 2 * self.config.units),
        )
        vector = graph.tanh(
            graph.concat([context, query], axis=-1) @ self.weight(graph, f'{d}.attn.wa')
            + self.weight(graph, f'{d}.attn.ba')
        )
        return AttentionOutput(weights, context, vector)

    def decoder_step(
        self,
        graph: ComputeGraph,
        which: Decoder,
        state: DecoderState,
        prev_tokens: Sequence[int] | np.ndarray,
        enc: EncoderStates,
        *,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> StepOutput:
        """Advance ``which`` by one token; returns the new state and output logits."""
        d = self._decoder(which).value
        prev = np.asarray(prev_tokens, dtype=np.int64)
        self._check_ids(prev, self.config.vocab_size(which), 'Decoder input')
        rate = self.config.dropout
        embedded = graph.gather(self.weight(graph, f'{d}.embed'), prev)
        x = graph.dropout(embedded, rate, rng, train=train)
        if state.feed is not None:
            x = graph.concat([x, state.feed], axis=-1)
        hidden, cell = [], []
        for layer in range(self.config.layers):
            if layer:
                x = graph.dropout(x, rate, rng, train=train)
            h, c = self.lstm_cell(
                graph, f'{d}.lstm.{layer}', x, state.hidden[layer], state.cell[layer]
            )
            hidden.append(h)
            cell.append(c)
            x = h
        attn = self.attention(graph, enc, x, which)
        out = graph.dropout(attn.vector, rate, rng, train=train)
        logits = out @ self.weight(graph, f'{d}.out.wp') + self.weight(graph, f'{d}.out.bp')
        feed = attn.vector if self.config.input_feeding else None
        return StepOutput(DecoderState(hidden, cell, feed), attn, logits)

    def distribution(self, graph: ComputeGraph, logits: Var) -> Var:
        return graph.softmax(logits, axis=-1)

    def teacher_forced_nll(
        self,
        graph: ComputeGraph,
        which: Decoder,
        enc: EncoderStates,
        targets: Sequence[Sequence[int]],
        *,
        train: bool = False,
        rng: np.random.Generator | None = None,
    ) -> tuple[Var, int]:
        """Summed negative log-likelihood of framed ``targets`` and its token count.

        Step ``t`` reads reference token ``t`` and predicts token ``t + 1``;
        padded positions carry zero weight.
        """
        ids, mask = pad_batch(targets)
        if ids.shape[0] != enc.mask.shape[0]:
            msg = f'Got {ids.shape[0]} targets for {enc.mask.shape[0]} encoded sources'
            raise InputError(msg)
        state = self.initial_state(graph, which, enc)
        logits = []
        for t in range(ids.shape[1] - 1):
            state, _, step_logits = self.decoder_step(
                graph, which, state, ids[:, t], enc, train=train, rng=rng
            )
            logits.append(step_logits)
        weights = mask[:, 1:].T.reshape(-1).astype(self.params.dtype)
        nll = graph.cross_entropy(
            graph.concat(logits, axis=0), ids[:, 1:].T.reshape(-1), weights
        )
        return nll, int(mask[:, 1:].sum())

    def tensors_of(self, names: Iterable[str]) -> dict[str, np.ndarray]:
        return {name: self.params.tensors[name] for name in names}
