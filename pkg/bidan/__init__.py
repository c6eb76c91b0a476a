# SPDX-License-Identifier: MIT

"""Bi-decoder neural machine translation.

A shared bidirectional LSTM encoder feeds two attentional decoders: D1
translates into the target language and D2 reconstructs the source. D2 is
trained with autoencoding, denoising and policy-gradient objectives so that
the encoder learns a representation that does not lean on one target
language.
"""

from __future__ import annotations

from bidan.bleu import BleuReport, corpus_bleu, modified_ngram_precision
from bidan.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from bidan.config import ExperimentConfig
from bidan.corpus import EncodedCorpus, ParallelCorpus, generate_synthetic_task
from bidan.decode import Hypothesis, beam_search, greedy_decode
from bidan.errors import (
    BidanError,
    ConfigurationError,
    FormatError,
    GraphStateError,
    InputError,
    NonFiniteGradientError,
    NumericError,
    ShapeError,
)
from bidan.model import BiDAN, Decoder, ModelConfig, ModelParameters, Partition
from bidan.scheduler import train
from bidan.vocab import MergeTable, Vocab, learn_bpe


__version__ = '0.1.0'

__all__ = [
    'BiDAN',
    'BidanError',
    'BleuReport',
    'Checkpoint',
    'ConfigurationError',
    'Decoder',
    'EncodedCorpus',
    'ExperimentConfig',
    'FormatError',
    'GraphStateError',
    'Hypothesis',
    'InputError',
    'MergeTable',
    'ModelConfig',
    'ModelParameters',
    'NonFiniteGradientError',
    'NumericError',
    'ParallelCorpus',
    'Partition',
    'ShapeError',
    'Vocab',
    'beam_search',
    'corpus_bleu',
    'generate_synthetic_task',
    'greedy_decode',
    'learn_bpe',
    'load_checkpoint',
    'modified_ngram_precision',
    'save_checkpoint',
    'train',
]
