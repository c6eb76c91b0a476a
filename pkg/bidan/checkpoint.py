# SPDX-License-Identifier: MIT

"""Binary checkpoints.

Layout, all integers little-endian::

    b'BIDN'  u32 version
    vocabulary section, source then target:
        u8 word_level  u32 n_tokens  (u32 len, utf-8)*n_tokens
        u32 n_merges   (u32 len, utf-8, u32 len, utf-8)*n_merges
    u32 n_tensors
    tensor records sorted by (partition, name):
        u32 len, utf-8 name  u32 rank  u64 extent*rank  f32 data, row-major

A tensor's partition is the prefix of its name (``enc.``, ``dec1.``,
``dec2.``). The model configuration is recovered from the tensor shapes.
"""

from __future__ import annotations

import io
import logging
import math
import os
import pathlib
import struct
import tempfile
import typing

import numpy as np

from bidan.errors import BidanError, ConfigurationError, FormatError, InputError
from bidan.model import BiDAN, ModelConfig, ModelParameters, Partition, parameter_shapes
from bidan.vocab import MergeTable, Vocab


__all__ = [
    'FORMAT_VERSION',
    'MAGIC',
    'Checkpoint',
    'dumps',
    'load_checkpoint',
    'loads',
    'save_checkpoint',
]

logger = logging.getLogger(__name__)

MAGIC = b'BIDN'
FORMAT_VERSION = 1

_PARTITION_ORDER = {partition: rank for rank, partition in enumerate(Partition)}


class Checkpoint(typing.NamedTuple):
    model: BiDAN
    src_vocab: Vocab
    tgt_vocab: Vocab


def _tensor_order(name: str) -> tuple[int, str]:
    return _PARTITION_ORDER[ModelParameters.partition_of(name)], name


def _write_str(out: io.BytesIO, text: str) -> None:
    data = text.encode('utf-8')
    out.write(struct.pack('<I', len(data)))
    out.write(data)


def _write_vocab(out: io.BytesIO, vocab: Vocab) -> None:
    out.write(struct.pack('<B', int(vocab.word_level)))
    out.write(struct.pack('<I', len(vocab.tokens)))
    for token in vocab.tokens:
        _write_str(out, token)
    out.write(struct.pack('<I', len(vocab.merges.merges)))
    for left, right in vocab.merges.merges:
        _write_str(out, left)
        _write_str(out, right)


def dumps(model: BiDAN, src_vocab: Vocab, tgt_vocab: Vocab) -> bytes:
    config = model.config
    if (len(src_vocab), len(tgt_vocab)) != (config.src_vocab_size, config.tgt_vocab_size):
        msg = (
            f'Vocabulary sizes {len(src_vocab)}/{len(tgt_vocab)} do not match the model '
            f'({config.src_vocab_size}/{config.tgt_vocab_size})'
        )
        raise ConfigurationError(msg)
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack('<I', FORMAT_VERSION))
    _write_vocab(out, src_vocab)
    _write_vocab(out, tgt_vocab)
    names = sorted(model.params.tensors, key=_tensor_order)
    out.write(struct.pack('<I', len(names)))
    for name in names:
        value = model.params.tensors[name]
        _write_str(out, name)
        out.write(struct.pack('<I', value.ndim))
        out.write(struct.pack(f'<{value.ndim}Q', *value.shape))
        out.write(np.ascontiguousarray(value, dtype='<f4').tobytes())
    return out.getvalue()


def save_checkpoint(
    model: BiDAN, src_vocab: Vocab, tgt_vocab: Vocab, path: str | os.PathLike[str]
) -> None:
    """Write a checkpoint atomically: readers never see a partial file."""
    data = dumps(model, src_vocab, tgt_vocab)
    path = pathlib.Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f'.{path.name}.', suffix='.tmp')
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        pathlib.Path(tmp).unlink(missing_ok=True)
        raise
    logger.info('Saved checkpoint with %d parameters to %s', model.params.count(), path)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.data):
            msg = f'Truncated checkpoint while reading {what}'
            raise FormatError(msg, offset=self.pos)
        chunk = self.data[self.pos : self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str, what: str) -> tuple[int, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def u32(self, what: str) -> int:
        return self.unpack('<I', what)[0]

    def text(self, what: str) -> str:
        start = self.pos
        raw = self.take(self.u32(what), what)
        try:
            return raw.decode('utf-8')
        except UnicodeDecodeError:
            msg = f'Invalid UTF-8 in {what}'
            raise FormatError(msg, offset=start) from None

    def vocab(self, side: str) -> Vocab:
        start = self.pos
        flag = self.unpack('<B', f'{side} vocabulary flag')[0]
        if flag not in (0, 1):
            msg = f'Invalid word-level flag {flag} in the {side} vocabulary'
            raise FormatError(msg, offset=start)
        tokens = tuple(self.text(f'{side} token') for _ in range(self.u32(f'{side} token count')))
        merges = tuple(
            (self.text(f'{side} merge'), self.text(f'{side} merge'))
            for _ in range(self.u32(f'{side} merge count'))
        )
        try:
            return Vocab(tokens, MergeTable(merges), bool(flag))
        except BidanError as e:
            msg = f'Invalid {side} vocabulary: {e}'
            raise FormatError(msg, offset=start) from None


def _infer_config(tensors: dict[str, np.ndarray], offset: int) -> ModelConfig:
    try:
        src_vocab, embed = tensors['enc.embed'].shape
        units = tensors['enc.fwd.0.wh'].shape[0]
        layers = sum(1 for name in tensors if name.startswith('enc.fwd.') and name.endswith('.wh'))
        if 'dec1.attn.w1' in tensors:
            score = 'additive'
        elif tensors['dec1.attn.w'].shape[0] == 3 * units:
            score = 'concat'
        else:
            score = 'bilinear'
        config = ModelConfig(
            src_vocab_size=src_vocab,
            tgt_vocab_size=tensors['dec1.embed'].shape[0],
            layers=layers,
            units=units,
            embed=embed,
            score=score,
            input_feeding=tensors['dec1.lstm.0.wx'].shape[0] == embed + units,
        )
    except (KeyError, ValueError, IndexError) as e:
        msg = f'Checkpoint tensors do not describe a model (missing or malformed {e})'
        raise FormatError(msg, offset=offset) from None
    expected = parameter_shapes(config)
    actual = {name: value.shape for name, value in tensors.items()}
    if expected != actual:
        problems = sorted(expected.keys() ^ actual.keys()) or sorted(
            name for name in expected if expected[name] != actual[name]
        )
        msg = f'Checkpoint tensors do not match the inferred model: {", ".join(problems)}'
        raise FormatError(msg, offset=offset)
    return config


def loads(data: bytes) -> Checkpoint:
    reader = _Reader(data)
    if reader.take(len(MAGIC), 'magic') != MAGIC:
        msg = 'Not a checkpoint: bad magic'
        raise FormatError(msg, offset=0)
    version = reader.u32('version')
    if version != FORMAT_VERSION:
        msg = f'Unsupported checkpoint version {version}'
        raise FormatError(msg, offset=len(MAGIC))
    src_vocab = reader.vocab('source')
    tgt_vocab = reader.vocab('target')
    tensor_section = reader.pos
    tensors: dict[str, np.ndarray] = {}
    previous: tuple[int, str] | None = None
    for _ in range(reader.u32('tensor count')):
        start = reader.pos
        name = reader.text('tensor name')
        try:
            order = _tensor_order(name)
        except BidanError:
            msg = f'Tensor "{name}" has no partition label'
            raise FormatError(msg, offset=start) from None
        if previous is not None and order <= previous:
            msg = f'Tensor "{name}" is out of order or repeated'
            raise FormatError(msg, offset=start)
        previous = order
        rank = reader.u32('tensor rank')
        extents_at = reader.pos
        shape = reader.unpack(f'<{rank}Q', f'extents of "{name}"')
        count = math.prod(shape)
        if count > (len(data) - reader.pos) // 4:
            msg = f'Extents {shape} of "{name}" exceed the remaining data'
            raise FormatError(msg, offset=extents_at)
        raw = reader.take(4 * count, f'data of "{name}"')
        tensors[name] = np.frombuffer(raw, dtype='<f4').astype(np.float32).reshape(shape)
    if reader.pos != len(data):
        msg = 'Trailing bytes after the last tensor'
        raise FormatError(msg, offset=reader.pos)
    config = _infer_config(tensors, tensor_section)
    if (config.src_vocab_size, config.tgt_vocab_size) != (len(src_vocab), len(tgt_vocab)):
        msg = 'Vocabulary sizes do not match the embedding tables'
        raise FormatError(msg, offset=tensor_section)
    return Checkpoint(BiDAN(ModelParameters(config, tensors)), src_vocab, tgt_vocab)


def load_checkpoint(path: str | os.PathLike[str]) -> Checkpoint:
    try:
        data = pathlib.Path(path).read_bytes()
    except FileNotFoundError:
        msg = f'Checkpoint "{path}" not found'
        raise InputError(msg) from None
    checkpoint = loads(data)
    logger.debug('Loaded %s: %s', path, checkpoint.model.config)
    return checkpoint
