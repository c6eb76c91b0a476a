# SPDX-License-Identifier: MIT

"""Experiment configuration.

A configuration file is TOML. Both dotted keys (``model.units = 64``) and
``[model]`` tables work, and every key missing from the file keeps the value
of the selected profile (``desk`` unless ``profile = "full"``). Unknown keys
are errors.
"""

from __future__ import annotations

import dataclasses
import os
import pathlib
import sys
import typing


if typing.TYPE_CHECKING:
    from collections.abc import Mapping
    from typing import Any

    if sys.version_info < (3, 11):
        from typing_extensions import Self
    else:
        from typing import Self

if sys.version_info < (3, 11):
    import tomli as tomllib
else:
    import tomllib

from bidan.corpus import TASK_KINDS
from bidan.errors import ConfigurationError
from bidan.model import ModelConfig


__all__ = [
    'PROFILES',
    'ConfigFetcher',
    'DataConfig',
    'DecodeConfig',
    'ExperimentConfig',
    'OptimConfig',
    'ScheduleConfig',
]

AUX_MODES = ('additional', 'exclusive')
PHASE_GATES = ('converge', 'immediate', 'never')
NOISE_SIDES = ('target', 'input')


class ConfigFetcher:
    """Typed access to a nested mapping by dotted key.

    Every getter returns ``default`` when the key is absent and raises
    :class:`ConfigurationError` naming the key when the value has the wrong
    type. Keys that were read are remembered so that :meth:`check_unknown`
    can reject the rest.
    """

    def __init__(self, data: Mapping[str, Any]) -> None:
        self._data = data
        self._seen: set[str] = set()

    def __contains__(self, key: Any) -> bool:
        if not isinstance(key, str):
            return False
        try:
            self.get(key)
        except KeyError:
            return False
        return True

    def get(self, key: str) -> Any:
        val: Any = self._data
        for part in key.split('.'):
            if not isinstance(val, dict):
                raise KeyError(key)
            val = val[part]
        return val

    def _fetch(self, key: str, default: Any) -> Any:
        self._seen.add(key)
        try:
            return self.get(key)
        except KeyError:
            return default

    def get_str(self, key: str, default: str, choices: tuple[str, ...] | None = None) -> str:
        val = self._fetch(key, default)
        if not isinstance(val, str):
            msg = f'Field "{key}" has an invalid type, expecting a string (got "{val}")'
            raise ConfigurationError(msg, key=key)
        if choices is not None and val not in choices:
            msg = f'Field "{key}" must be one of {", ".join(choices)} (got "{val}")'
            raise ConfigurationError(msg, key=key)
        return val

    def get_int(self, key: str, default: int, minimum: int | None = None) -> int:
        val = self._fetch(key, default)
        if isinstance(val, bool) or not isinstance(val, int):
            msg = f'Field "{key}" has an invalid type, expecting an integer (got "{val}")'
            raise ConfigurationError(msg, key=key)
        if minimum is not None and val < minimum:
            msg = f'Field "{key}" must be at least {minimum} (got {val})'
            raise ConfigurationError(msg, key=key)
        return val

    def get_float(self, key: str, default: float, minimum: float | None = None) -> float:
        val = self._fetch(key, default)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            msg = f'Field "{key}" has an invalid type, expecting a number (got "{val}")'
            raise ConfigurationError(msg, key=key)
        if minimum is not None and val < minimum:
            msg = f'Field "{key}" must be at least {minimum} (got {val})'
            raise ConfigurationError(msg, key=key)
        return float(val)

    def get_bool(self, key: str, default: bool) -> bool:
        val = self._fetch(key, default)
        if not isinstance(val, bool):
            msg = f'Field "{key}" has an invalid type, expecting true or false (got "{val}")'
            raise ConfigurationError(msg, key=key)
        return val

    def check_unknown(self) -> None:
        def walk(data: Mapping[str, Any], prefix: str) -> None:
            for name, val in data.items():
                key = f'{prefix}{name}'
                if key in self._seen:
                    continue
                if isinstance(val, dict) and any(seen.startswith(f'{key}.') for seen in self._seen):
                    walk(val, f'{key}.')
                    continue
                msg = f'Unknown configuration key "{key}"'
                raise ConfigurationError(msg, key=key)

        walk(self._data, '')


@dataclasses.dataclass(frozen=True)
class ScheduleConfig:
    lambda_a: int = 5
    lambda_d: int = 2
    lambda_r: int = 2
    aux_mode: str = 'additional'
    phase_gate: str = 'converge'
    noise_side: str = 'target'
    reward_baseline: bool = True
    patience: int = 3
    delta_joint: float = 0.01
    delta_frozen: float = 0.001
    joint_max_steps: int = 2000
    frozen_max_steps: int = 1000
    eval_every: int = 200
    dev_bleu_sentences: int = 100

    @property
    def has_auxiliary(self) -> bool:
        return self.phase_gate != 'immediate' and self.lambda_a + self.lambda_d + self.lambda_r > 0


@dataclasses.dataclass(frozen=True)
class OptimConfig:
    lr: float = 1.0
    halve_start: int = 2000
    halve_every: int = 500
    total_steps: int = 3000
    clip_norm: float = 5.0
    batch_size: int = 32
    baseline_batch_size: int = 32


@dataclasses.dataclass(frozen=True)
class DecodeConfig:
    beam_size: int = 10
    length_norm: bool = False
    max_len_factor: int = 2
    max_len_offset: int = 5

    def max_len(self, source_length: int) -> int:
        return self.max_len_factor * source_length + self.max_len_offset


@dataclasses.dataclass(frozen=True)
class DataConfig:
    kind: str = 'mapped-reverse'
    vocab_size: int = 64
    min_len: int = 3
    max_len: int = 10
    train_pairs: int = 5000
    dev_pairs: int = 500
    test_pairs: int = 500
    bpe_merges: int = 0
    word_level: bool = True
    min_freq: int = 1


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    schedule: ScheduleConfig = dataclasses.field(default_factory=ScheduleConfig)
    optim: OptimConfig = dataclasses.field(default_factory=OptimConfig)
    decode: DecodeConfig = dataclasses.field(default_factory=DecodeConfig)
    data: DataConfig = dataclasses.field(default_factory=DataConfig)
    seed: int = 0
    profile: str = 'desk'

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> Self:
        fetcher = ConfigFetcher(data)
        profile = fetcher.get_str('profile', 'desk', tuple(PROFILES))
        base = PROFILES[profile]

        m = base.model
        model = dataclasses.replace(
            m,
            layers=fetcher.get_int('model.layers', m.layers, 1),
            units=fetcher.get_int('model.units', m.units, 1),
            embed=fetcher.get_int('model.embed', m.embed, 1),
            score=fetcher.get_str('model.score', m.score, ('additive', 'bilinear', 'concat')),
            input_feeding=fetcher.get_bool('model.input_feeding', m.input_feeding),
            dropout=fetcher.get_float('model.dropout', m.dropout, 0.0),
            init_scale=fetcher.get_float('model.init_scale', m.init_scale, 0.0),
        )
        model.validate(require_vocab=False)

        s = base.schedule
        schedule = ScheduleConfig(
            lambda_a=fetcher.get_int('schedule.lambda_a', s.lambda_a, 0),
            lambda_d=fetcher.get_int('schedule.lambda_d', s.lambda_d, 0),
            lambda_r=fetcher.get_int('schedule.lambda_r', s.lambda_r, 0),
            aux_mode=fetcher.get_str('schedule.aux_mode', s.aux_mode, AUX_MODES),
            phase_gate=fetcher.get_str('schedule.phase_gate', s.phase_gate, PHASE_GATES),
            noise_side=fetcher.get_str('schedule.noise_side', s.noise_side, NOISE_SIDES),
            reward_baseline=fetcher.get_bool('schedule.reward_baseline', s.reward_baseline),
            patience=fetcher.get_int('schedule.patience', s.patience, 1),
            delta_joint=fetcher.get_float('schedule.delta_joint', s.delta_joint, 0.0),
            delta_frozen=fetcher.get_float('schedule.delta_frozen', s.delta_frozen, 0.0),
            joint_max_steps=fetcher.get_int('schedule.joint_max_steps', s.joint_max_steps, 0),
            frozen_max_steps=fetcher.get_int('schedule.frozen_max_steps', s.frozen_max_steps, 0),
            eval_every=fetcher.get_int('schedule.eval_every', s.eval_every, 1),
            dev_bleu_sentences=fetcher.get_int(
                'schedule.dev_bleu_sentences', s.dev_bleu_sentences, 0
            ),
        )
        if schedule.phase_gate != 'immediate' and not (
            schedule.lambda_a + schedule.lambda_d + schedule.lambda_r
        ):
            msg = 'Mixing ratios are all zero; set a ratio or use schedule.phase_gate = "immediate"'
            raise ConfigurationError(msg, key='schedule.lambda_a')

        o = base.optim
        optim = OptimConfig(
            lr=fetcher.get_float('optim.lr', o.lr, 0.0),
            halve_start=fetcher.get_int('optim.halve_start', o.halve_start, 0),
            halve_every=fetcher.get_int('optim.halve_every', o.halve_every, 1),
            total_steps=fetcher.get_int('optim.total_steps', o.total_steps, 1),
            clip_norm=fetcher.get_float('optim.clip_norm', o.clip_norm, 0.0),
            batch_size=fetcher.get_int('optim.batch_size', o.batch_size, 1),
            baseline_batch_size=fetcher.get_int(
                'optim.baseline_batch_size', o.baseline_batch_size, 1
            ),
        )

        d = base.decode
        decode = DecodeConfig(
            beam_size=fetcher.get_int('decode.beam_size', d.beam_size, 1),
            length_norm=fetcher.get_bool('decode.length_norm', d.length_norm),
            max_len_factor=fetcher.get_int('decode.max_len_factor', d.max_len_factor, 0),
            max_len_offset=fetcher.get_int('decode.max_len_offset', d.max_len_offset, 1),
        )

        a = base.data
        data_config = DataConfig(
            kind=fetcher.get_str('data.kind', a.kind, TASK_KINDS),
            vocab_size=fetcher.get_int('data.vocab_size', a.vocab_size, 4),
            min_len=fetcher.get_int('data.min_len', a.min_len, 1),
            max_len=fetcher.get_int('data.max_len', a.max_len, 1),
            train_pairs=fetcher.get_int('data.train_pairs', a.train_pairs, 1),
            dev_pairs=fetcher.get_int('data.dev_pairs', a.dev_pairs, 1),
            test_pairs=fetcher.get_int('data.test_pairs', a.test_pairs, 1),
            bpe_merges=fetcher.get_int('data.bpe_merges', a.bpe_merges, 0),
            word_level=fetcher.get_bool('data.word_level', a.word_level),
            min_freq=fetcher.get_int('data.min_freq', a.min_freq, 1),
        )
        if data_config.min_len > data_config.max_len:
            msg = (
                f'Field "data.min_len" ({data_config.min_len}) exceeds '
                f'"data.max_len" ({data_config.max_len})'
            )
            raise ConfigurationError(msg, key='data.min_len')

        seed = fetcher.get_int('seed', base.seed, 0)
        fetcher.check_unknown()
        return cls(model, schedule, optim, decode, data_config, seed, profile)

    @classmethod
    def from_file(cls, path: str | os.PathLike[str]) -> Self:
        try:
            with pathlib.Path(path).open('rb') as f:
                data = tomllib.load(f)
        except FileNotFoundError:
            msg = f'Configuration file "{path}" not found'
            raise ConfigurationError(msg) from None
        except tomllib.TOMLDecodeError as e:
            msg = f'Invalid configuration file "{path}": {e}'
            raise ConfigurationError(msg) from None
        return cls.from_mapping(data)

    def with_overrides(self, **sections: Any) -> Self:
        """Copy with fields of the named sections replaced, e.g. ``schedule={'lambda_a': 0}``."""
        changes: dict[str, Any] = {}
        for section, values in sections.items():
            if section in ('seed', 'profile'):
                changes[section] = values
                continue
            if section not in ('model', 'schedule', 'optim', 'decode', 'data'):
                msg = f'Unknown configuration section "{section}"'
                raise ConfigurationError(msg, key=section)
            try:
                changes[section] = dataclasses.replace(getattr(self, section), **values)
            except TypeError:
                msg = f'Unknown key in section "{section}": {sorted(values)}'
                raise ConfigurationError(msg, key=section) from None
        return dataclasses.replace(self, **changes)


PROFILES: dict[str, ExperimentConfig] = {
    'desk': ExperimentConfig(),
    'full': ExperimentConfig(
        model=ModelConfig(layers=4, units=1024, embed=1024),
        schedule=ScheduleConfig(
            joint_max_steps=680_000,
            frozen_max_steps=680_000,
            eval_every=10_000,
            dev_bleu_sentences=1000,
        ),
        optim=OptimConfig(
            lr=1.0,
            halve_start=340_000,
            halve_every=34_000,
            total_steps=680_000,
            batch_size=64,
            baseline_batch_size=128,
        ),
        decode=DecodeConfig(beam_size=10),
        profile='full',
    ),
}
