# SPDX-License-Identifier: MIT

"""Dense tensors with reverse-mode automatic differentiation.

A :class:`ComputeGraph` is a tape. Every primitive evaluates eagerly when it
is called and appends a node holding its output, so building a graph is also
its first forward pass. Leaves can later be rebound by name and the whole
graph replayed with :meth:`ComputeGraph.forward`, which is what
:func:`grad_check` uses to take finite differences.

Arrays are plain :class:`numpy.ndarray` objects. Parameters default to
32-bit floats; every op keeps the dtype of its inputs, so a graph built
from float64 leaves is evaluated in float64.
"""

from __future__ import annotations

import dataclasses
import logging
import typing

import numpy as np

from bidan.errors import GraphStateError, InputError, NumericError, ShapeError


if typing.TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Mapping, Sequence
    from typing import Any, Optional, Union

    Operand = Union['Var', np.ndarray, float]
    Values = Sequence[np.ndarray]
    Attrs = Mapping[str, Any]
    Grads = tuple[Optional[np.ndarray], ...]

__all__ = [
    'DTYPE',
    'PRIMITIVES',
    'ComputeGraph',
    'Var',
    'grad_check',
]

logger = logging.getLogger(__name__)

DTYPE = np.float32

_LEAF_KINDS = frozenset({'param', 'const'})


@dataclasses.dataclass
class _Node:
    kind: str
    inputs: tuple[int, ...]
    attrs: dict[str, Any]
    value: np.ndarray
    requires_grad: bool
    name: str | None = None


class Var:
    """Handle to one node of a :class:`ComputeGraph`."""

    __slots__ = ('graph', 'index')

    def __init__(self, graph: ComputeGraph, index: int) -> None:
        self.graph = graph
        self.index = index

    def __repr__(self) -> str:
        node = self.graph.nodes[self.index]
        return f'<Var #{self.index} {node.kind} shape={node.value.shape}>'

    @property
    def value(self) -> np.ndarray:
        return self.graph.nodes[self.index].value

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.value.shape)

    def __add__(self, other: Operand) -> Var:
        return self.graph.add(self, other)

    def __radd__(self, other: Operand) -> Var:
        return self.graph.add(other, self)

    def __sub__(self, other: Operand) -> Var:
        return self.graph.sub(self, other)

    def __rsub__(self, other: Operand) -> Var:
        return self.graph.sub(other, self)

    def __mul__(self, other: Operand) -> Var:
        return self.graph.mul(self, other)

    def __rmul__(self, other: Operand) -> Var:
        return self.graph.mul(other, self)

    def __matmul__(self, other: Operand) -> Var:
        return self.graph.matmul(self, other)

    def __neg__(self) -> Var:
        return self.graph.mul(self, -1.0)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _expand_reduced(
    grad: np.ndarray, shape: tuple[int, ...], axis: int | None, keepdims: bool
) -> np.ndarray:
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape)


def _masked_logits(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is None:
        return x
    return np.where(mask, x, -np.inf)


def _softmax(x: np.ndarray, axis: int, mask: np.ndarray | None) -> np.ndarray:
    shifted = _masked_logits(x, mask)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def _log_softmax(x: np.ndarray, axis: int) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    with np.errstate(divide='ignore'):
        return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def _slice_index(ndim: int, attrs: Attrs) -> tuple[slice, ...]:
    index = [slice(None)] * ndim
    index[attrs['axis']] = slice(attrs['start'], attrs['stop'])
    return tuple(index)


# Each primitive is a (forward, backward) pair. forward(values, attrs) returns
# the output; backward(grad, out, values, attrs) returns one gradient per input.


def _matmul_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return np.matmul(v[0], v[1])


def _matmul_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    a, b = v
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _add_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return v[0] + v[1]


def _add_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    return _unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)


def _sub_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return v[0] - v[1]


def _sub_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    return _unbroadcast(g, v[0].shape), _unbroadcast(-g, v[1].shape)


def _mul_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return v[0] * v[1]


def _mul_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    return _unbroadcast(g * v[1], v[0].shape), _unbroadcast(g * v[0], v[1].shape)


def _concat_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return np.concatenate(v, axis=attrs['axis'])


def _concat_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    axis = attrs['axis']
    bounds = np.cumsum([x.shape[axis] for x in v])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


def _slice_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return v[0][_slice_index(v[0].ndim, attrs)]


def _slice_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    grad = np.zeros_like(v[0])
    grad[_slice_index(v[0].ndim, attrs)] = g
    return (grad,)


def _stack_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return np.stack(v, axis=attrs['axis'])


def _stack_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    return tuple(np.take(g, i, axis=attrs['axis']) for i in range(len(v)))


def _reshape_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return v[0].reshape(attrs['shape'])


def _reshape_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    return (g.reshape(v[0].shape),)


def _broadcast_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return np.broadcast_to(v[0], attrs['shape']).copy()


def _broadcast_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    x = v[0]
    grad = _unbroadcast(g, (1,) * (g.ndim - x.ndim) + x.shape)
    return (grad.reshape(x.shape),)


def _sum_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return np.asarray(v[0].sum(axis=attrs['axis'], keepdims=attrs['keepdims']))


def _sum_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    return (_expand_reduced(g, v[0].shape, attrs['axis'], attrs['keepdims']).copy(),)


def _mean_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return np.asarray(v[0].mean(axis=attrs['axis'], keepdims=attrs['keepdims']))


def _mean_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    x = v[0]
    count = x.size if attrs['axis'] is None else x.shape[attrs['axis']]
    grad = _expand_reduced(g, x.shape, attrs['axis'], attrs['keepdims']) / count
    return (grad.astype(x.dtype),)


def _tanh_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return np.tanh(v[0])


def _tanh_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    return (g * (1 - out * out),)


def _sigmoid_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    x = v[0]
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype)


def _sigmoid_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    return (g * out * (1 - out),)


def _log_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    with np.errstate(divide='ignore', invalid='ignore'):
        return np.log(v[0])


def _log_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    return (g / v[0],)


def _exp_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    with np.errstate(over='ignore'):
        return np.exp(v[0])


def _exp_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    return (g * out,)


def _softmax_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return _softmax(v[0], attrs['axis'], attrs['mask'])


def _softmax_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    return (out * (g - (g * out).sum(axis=attrs['axis'], keepdims=True)),)


def _log_softmax_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return _log_softmax(v[0], attrs['axis'])


def _log_softmax_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    return (g - np.exp(out) * g.sum(axis=attrs['axis'], keepdims=True),)


def _gather_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return v[0][attrs['indices']]


def _gather_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    grad = np.zeros_like(v[0])
    np.add.at(grad, attrs['indices'], g)
    return (grad,)


def _target_log_probs(logits: np.ndarray, attrs: Attrs) -> tuple[np.ndarray, np.ndarray]:
    targets = attrs['targets']
    log_p = _log_softmax(_masked_logits(logits, attrs['vocab_mask']), axis=-1)
    return log_p, log_p[np.arange(len(targets)), targets]


def _cross_entropy_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    _, picked = _target_log_probs(v[0], attrs)
    weighted = -picked * attrs['weights']
    if attrs['reduction'] == 'sum':
        weighted = weighted.sum()
    return np.asarray(weighted, dtype=v[0].dtype)


def _cross_entropy_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    log_p, _ = _target_log_probs(v[0], attrs)
    targets = attrs['targets']
    grad = np.exp(log_p)
    grad[np.arange(len(targets)), targets] -= 1
    # g is a scalar for 'sum' and one value per row for 'none'
    scale = attrs['weights'] * g
    return ((grad * scale[:, None]).astype(v[0].dtype),)


def _dropout_fwd(v: Values, attrs: Attrs) -> np.ndarray:
    return v[0] * attrs['mask']


def _dropout_bwd(g: np.ndarray, out: np.ndarray, v: Values, attrs: Attrs) -> Grads:
    return (g * attrs['mask'],)


_OPS: dict[str, tuple[Callable[..., np.ndarray], Callable[..., tuple[Any, ...]]]] = {
    'matmul': (_matmul_fwd, _matmul_bwd),
    'add': (_add_fwd, _add_bwd),
    'sub': (_sub_fwd, _sub_bwd),
    'mul': (_mul_fwd, _mul_bwd),
    'concat': (_concat_fwd, _concat_bwd),
    'slice': (_slice_fwd, _slice_bwd),
    'stack': (_stack_fwd, _stack_bwd),
    'reshape': (_reshape_fwd, _reshape_bwd),
    'broadcast_to': (_broadcast_fwd, _broadcast_bwd),
    'sum': (_sum_fwd, _sum_bwd),
    'mean': (_mean_fwd, _mean_bwd),
    'tanh': (_tanh_fwd, _tanh_bwd),
    'sigmoid': (_sigmoid_fwd, _sigmoid_bwd),
    'log': (_log_fwd, _log_bwd),
    'exp': (_exp_fwd, _exp_bwd),
    'softmax': (_softmax_fwd, _softmax_bwd),
    'log_softmax': (_log_softmax_fwd, _log_softmax_bwd),
    'gather': (_gather_fwd, _gather_bwd),
    'cross_entropy': (_cross_entropy_fwd, _cross_entropy_bwd),
    'dropout': (_dropout_fwd, _dropout_bwd),
}

PRIMITIVES = frozenset(_OPS)


class ComputeGraph:
    """Tape of primitive operations with reverse-mode gradients.

    Leaves are either named parameters (:meth:`param`), which receive
    gradients, or constants (:meth:`constant`), which do not. A graph is
    single-writer: build, replay and differentiate it from one thread.
    """

    def __init__(self) -> None:
        self.nodes: list[_Node] = []
        self._params: dict[str, int] = {}
        self._named: dict[str, int] = {}
        self._outputs: dict[str, int] = {}
        self._stale = False

    def __len__(self) -> int:
        return len(self.nodes)

    # leaves

    def param(self, name: str, value: np.ndarray) -> Var:
        """Bind a trainable leaf; repeated calls with the same name share it."""
        if name in self._params:
            return Var(self, self._params[name])
        index = self._append(_Node('param', (), {}, value, requires_grad=True, name=name))
        self._params[name] = index
        self._named[name] = index
        return Var(self, index)

    def constant(self, value: np.ndarray | float, name: str | None = None) -> Var:
        array = np.asarray(value)
        if not isinstance(value, np.ndarray) or array.dtype.kind != 'f':
            array = array.astype(DTYPE)
        index = self._append(_Node('const', (), {}, array, requires_grad=False, name=name))
        if name is not None:
            self._named[name] = index
        return Var(self, index)

    def _lift(self, operand: Operand, like: Var | None = None) -> Var:
        if isinstance(operand, Var):
            if operand.graph is not self:
                msg = 'Operand belongs to a different compute graph'
                raise ShapeError(msg)
            return operand
        array = np.asarray(operand)
        if like is not None and array.dtype != like.value.dtype:
            array = array.astype(like.value.dtype)
        return self.constant(array)

    def parameters(self) -> dict[str, Var]:
        return {name: Var(self, index) for name, index in self._params.items()}

    # recording

    def _append(self, node: _Node) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def _record(self, kind: str, inputs: Sequence[Var], **attrs: Any) -> Var:
        ids = tuple(var.index for var in inputs)
        value = self._evaluate(len(self.nodes), kind, ids, attrs)
        requires_grad = any(self.nodes[i].requires_grad for i in ids)
        return Var(self, self._append(_Node(kind, ids, attrs, value, requires_grad)))

    def _evaluate(
        self, index: int, kind: str, ids: tuple[int, ...], attrs: Mapping[str, Any]
    ) -> np.ndarray:
        values = [self.nodes[i].value for i in ids]
        forward, _ = _OPS[kind]
        try:
            out = forward(values, attrs)
        except ValueError as e:
            shapes = ', '.join(str(v.shape) for v in values)
            msg = f'Shape mismatch in node #{index} ({kind}) with inputs {shapes}: {e}'
            raise ShapeError(msg) from None
        if not np.all(np.isfinite(out)):
            msg = f'Non-finite output in node #{index} ({kind})'
            raise NumericError(msg)
        return out

    def output(self, name: str, var: Var) -> Var:
        """Name ``var`` as a graph output reported by :meth:`forward`."""
        self._outputs[name] = var.index
        return var

    # primitives

    def matmul(self, a: Operand, b: Operand) -> Var:
        a_var = self._lift(a)
        b_var = self._lift(b, a_var)
        if a_var.value.ndim < 2 or b_var.value.ndim < 2:
            msg = (
                f'matmul expects operands of rank >= 2 (got {a_var.shape} and {b_var.shape})'
            )
            raise ShapeError(msg)
        return self._record('matmul', (a_var, b_var))

    def add(self, a: Operand, b: Operand) -> Var:
        a_var = a if isinstance(a, Var) else None
        b_var = self._lift(b, a_var)
        return self._record('add', (self._lift(a, b_var), b_var))

    def sub(self, a: Operand, b: Operand) -> Var:
        a_var = a if isinstance(a, Var) else None
        b_var = self._lift(b, a_var)
        return self._record('sub', (self._lift(a, b_var), b_var))

    def mul(self, a: Operand, b: Operand) -> Var:
        a_var = a if isinstance(a, Var) else None
        b_var = self._lift(b, a_var)
        return self._record('mul', (self._lift(a, b_var), b_var))

    def concat(self, parts: Iterable[Var], axis: int = -1) -> Var:
        return self._record('concat', tuple(parts), axis=axis)

    def slice(self, x: Var, start: int, stop: int, axis: int = -1) -> Var:
        return self._record('slice', (x,), axis=axis, start=start, stop=stop)

    def stack(self, parts: Iterable[Var], axis: int = 0) -> Var:
        return self._record('stack', tuple(parts), axis=axis)

    def reshape(self, x: Var, shape: tuple[int, ...]) -> Var:
        return self._record('reshape', (x,), shape=tuple(shape))

    def broadcast_to(self, x: Var, shape: tuple[int, ...]) -> Var:
        return self._record('broadcast_to', (x,), shape=tuple(shape))

    def sum(self, x: Var, axis: int | None = None, keepdims: bool = False) -> Var:
        return self._record('sum', (x,), axis=axis, keepdims=keepdims)

    def mean(self, x: Var, axis: int | None = None, keepdims: bool = False) -> Var:
        return self._record('mean', (x,), axis=axis, keepdims=keepdims)

    def tanh(self, x: Var) -> Var:
        return self._record('tanh', (x,))

    def sigmoid(self, x: Var) -> Var:
        return self._record('sigmoid', (x,))

    def log(self, x: Var) -> Var:
        return self._record('log', (x,))

    def exp(self, x: Var) -> Var:
        return self._record('exp', (x,))

    def softmax(self, x: Var, axis: int = -1, mask: np.ndarray | None = None) -> Var:
        """Softmax along ``axis``; entries where ``mask`` is false get exactly 0."""
        if mask is not None:
            mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
            if not mask.any(axis=axis).all():
                msg = 'Every position of a softmax row is masked'
                raise InputError(msg)
        return self._record('softmax', (x,), axis=axis, mask=mask)

    def log_softmax(self, x: Var, axis: int = -1) -> Var:
        return self._record('log_softmax', (x,), axis=axis)

    def gather(self, table: Var, indices: np.ndarray) -> Var:
        """Rows of ``table`` selected by an integer array of any shape."""
        indices = np.asarray(indices, dtype=np.int64)
        rows = table.shape[0]
        if indices.size and (indices.min() < 0 or indices.max() >= rows):
            msg = f'Gather index out of range for a table of {rows} rows'
            raise InputError(msg)
        return self._record('gather', (table,), indices=indices)

    def cross_entropy(
        self,
        logits: Var,
        targets: Sequence[int] | np.ndarray,
        weights: np.ndarray | None = None,
        *,
        vocab_mask: np.ndarray | None = None,
        reduction: str = 'sum',
    ) -> Var:
        """Weighted negative log-likelihood of ``targets`` under ``softmax(logits)``.

        ``logits`` has shape ``(N, V)``. With ``reduction='sum'`` the result
        is a scalar, with ``'none'`` one value per row. ``vocab_mask``
        removes classes from the normalisation.
        """
        if reduction not in ('sum', 'none'):
            msg = f'Unknown reduction "{reduction}"'
            raise InputError(msg)
        targets = np.asarray(targets, dtype=np.int64)
        n, vocab = logits.shape
        if targets.shape != (n,):
            msg = f'Expected {n} targets for logits of shape {logits.shape}'
            raise ShapeError(msg)
        if n and (targets.min() < 0 or targets.max() >= vocab):
            msg = f'Target id out of range for {vocab} classes'
            raise InputError(msg)
        dtype = logits.value.dtype
        weights = np.ones(n, dtype=dtype) if weights is None else np.asarray(weights, dtype=dtype)
        if vocab_mask is not None:
            vocab_mask = np.broadcast_to(np.asarray(vocab_mask, dtype=bool), (n, vocab))
            if not vocab_mask[np.arange(n), targets].all():
                msg = 'A cross-entropy target is excluded by the vocabulary mask'
                raise InputError(msg)
        return self._record(
            'cross_entropy',
            (logits,),
            targets=targets,
            weights=weights,
            vocab_mask=vocab_mask,
            reduction=reduction,
        )

    def dropout(
        self, x: Var, rate: float, rng: np.random.Generator | None, *, train: bool
    ) -> Var:
        """Inverted dropout; identity in eval mode."""
        if not train or rate <= 0:
            return x
        if rng is None:
            msg = 'Train-mode dropout needs a random generator'
            raise InputError(msg)
        keep = rng.random(x.shape) >= rate
        mask = (keep / (1 - rate)).astype(x.value.dtype)
        return self._record('dropout', (x,), mask=mask)

    # replay and differentiation

    def bind(self, name: str, value: np.ndarray) -> None:
        """Replace the value of a named leaf; the graph must be replayed."""
        try:
            index = self._named[name]
        except KeyError:
            msg = f'No leaf named "{name}" in the graph'
            raise InputError(msg) from None
        node = self.nodes[index]
        value = np.asarray(value)
        if value.shape != node.value.shape:
            msg = f'Leaf "{name}" has shape {node.value.shape}, got {value.shape}'
            raise ShapeError(msg)
        node.value = value
        self._stale = True

    def forward(self, inputs: Mapping[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
        """Re-evaluate every node in topological order.

        ``inputs`` rebinds named leaves first. Returns the values of the
        outputs registered with :meth:`output`.
        """
        for name, value in (inputs or {}).items():
            self.bind(name, value)
        for index, node in enumerate(self.nodes):
            if node.kind not in _LEAF_KINDS:
                node.value = self._evaluate(index, node.kind, node.inputs, node.attrs)
        self._stale = False
        return {name: self.nodes[index].value for name, index in self._outputs.items()}

    def backward(self, seed: Var) -> dict[str, np.ndarray]:
        """Gradients of the scalar ``seed`` with respect to every parameter leaf."""
        if self._stale:
            msg = 'Leaves were rebound since the last forward pass; call forward() first'
            raise GraphStateError(msg)
        if seed.graph is not self:
            msg = 'Seed belongs to a different compute graph'
            raise GraphStateError(msg)
        seed_value = self.nodes[seed.index].value
        if seed_value.size != 1:
            msg = f'Backward seed must be a scalar (got shape {seed_value.shape})'
            raise ShapeError(msg)

        grads: list[np.ndarray | None] = [None] * (seed.index + 1)
        grads[seed.index] = np.ones_like(seed_value)
        for index in range(seed.index, -1, -1):
            grad = grads[index]
            node = self.nodes[index]
            if grad is None or node.kind in _LEAF_KINDS or not node.requires_grad:
                continue
            _, backward = _OPS[node.kind]
            values = [self.nodes[i].value for i in node.inputs]
            for i, g in zip(node.inputs, backward(grad, node.value, values, node.attrs)):
                if g is None or not self.nodes[i].requires_grad:
                    continue
                grads[i] = g if grads[i] is None else grads[i] + g

        result: dict[str, np.ndarray] = {}
        for name, index in self._params.items():
            value = self.nodes[index].value
            grad = grads[index] if index < len(grads) else None
            if grad is None:
                grad = np.zeros_like(value)
            result[name] = np.asarray(grad, dtype=value.dtype)
        return result

    def value_of(self, name: str) -> np.ndarray:
        return self.nodes[self._named[name]].value


def grad_check(
    graph: ComputeGraph,
    seed: Var,
    *,
    eps: float = 1e-3,
    names: Iterable[str] | None = None,
    max_coordinates: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Largest relative error between analytic and central-difference gradients.

    The error of one coordinate is ``|analytic - numeric| / max(1, |analytic|)``.
    ``max_coordinates`` samples that many coordinates per parameter instead of
    visiting all of them. Build the graph from float64 leaves to keep float32
    rounding out of the comparison.
    """
    if not 0 < eps <= 1e-2:
        msg = f'eps must lie in (0, 1e-2] (got {eps})'
        raise InputError(msg)
    analytic = graph.backward(seed)
    rng = rng or np.random.default_rng(0)
    worst = 0.0
    for name in sorted(names) if names is not None else sorted(analytic):
        base = graph.value_of(name).copy()
        coords = np.arange(base.size)
        if max_coordinates is not None and base.size > max_coordinates:
            coords = np.sort(rng.choice(base.size, size=max_coordinates, replace=False))
        for flat in coords:
            values = []
            for delta in (eps, -eps):
                shifted = base.copy()
                shifted.flat[flat] += delta
                graph.bind(name, shifted)
                graph.forward()
                values.append(float(seed.value))
            numeric = (values[0] - values[1]) / (2 * eps)
            exact = float(analytic[name].flat[flat])
            worst = max(worst, abs(exact - numeric) / max(1.0, abs(exact)))
        graph.bind(name, base)
    graph.forward()
    logger.debug('Gradient check over %d parameters: max relative error %.3g', len(analytic), worst)
    return worst
