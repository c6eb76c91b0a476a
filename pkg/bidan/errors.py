# SPDX-License-Identifier: MIT

from __future__ import annotations


__all__ = [
    'BidanError',
    'ConfigurationError',
    'FormatError',
    'GraphStateError',
    'InputError',
    'NonFiniteGradientError',
    'NumericError',
    'ShapeError',
]


class BidanError(Exception):
    """Base class of every error raised by this package."""


class ConfigurationError(BidanError):
    """Error in the experiment or model configuration."""

    def __init__(self, msg: str, *, key: str | None = None):
        super().__init__(msg)
        self._key = key

    @property
    def key(self) -> str | None:
        return self._key


class InputError(BidanError, ValueError):
    """Caller supplied data that violates an operation's preconditions."""


class ShapeError(BidanError, ValueError):
    """Operand shapes do not fit an operation's signature."""


class NumericError(BidanError, ArithmeticError):
    """A computation produced NaN or infinity."""


class NonFiniteGradientError(NumericError):
    """A gradient contains NaN or infinity; the update was not applied."""


class GraphStateError(BidanError):
    """A compute graph was used in the wrong state."""


class FormatError(BidanError):
    """Malformed checkpoint file."""

    def __init__(self, msg: str, *, offset: int):
        super().__init__(f'{msg} (at byte offset {offset})')
        self._offset = offset

    @property
    def offset(self) -> int:
        return self._offset
