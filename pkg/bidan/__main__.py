# SPDX-License-Identifier: MIT

"""Command-line interface: ``python -m bidan <command>``."""

from __future__ import annotations

import argparse
import io
import logging
import os
import pathlib
import sys
import tempfile
import typing

import bidan
from bidan.bleu import corpus_bleu, write_report_csv
from bidan.checkpoint import load_checkpoint, save_checkpoint
from bidan.config import ExperimentConfig
from bidan.corpus import EncodedCorpus, ParallelCorpus, read_lines
from bidan.errors import BidanError, InputError
from bidan.experiments import (
    build_model,
    evaluate_bleu,
    lambda_sweep,
    length_rows,
    run_ablation,
    swap_checkpoint,
    swap_protocol,
    synthetic_corpus,
    translate,
    write_ablation_csv,
    write_swap_csv,
    write_sweep_csv,
)
from bidan.model import Decoder
from bidan.scheduler import train
from bidan.vocab import MergeTable, learn_bpe


if typing.TYPE_CHECKING:
    from collections.abc import Callable, Sequence


__all__ = ['main']

logger = logging.getLogger(__name__)

_DECODERS = {'d1': Decoder.D1, 'd2': Decoder.D2}


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        msg = f'expecting comma-separated integers, got "{text}"'
        raise argparse.ArgumentTypeError(msg) from None


def _system(text: str) -> tuple[str, str]:
    name, sep, path = text.partition('=')
    if not sep or not name or not path:
        msg = f'expecting NAME=PATH, got "{text}"'
        raise argparse.ArgumentTypeError(msg)
    return name, path


def _write_output(path: str | None, text: str) -> None:
    """Write ``text`` to ``path`` atomically, or to stdout without a path."""
    if path is None or path == '-':
        sys.stdout.write(text)
        return
    target = pathlib.Path(path)
    fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f'.{target.name}.', suffix='.tmp')
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp, target)
    except BaseException:
        pathlib.Path(tmp).unlink(missing_ok=True)
        raise


def _config(args: argparse.Namespace) -> ExperimentConfig:
    config = ExperimentConfig() if args.config is None else ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    return config


def _corpus(args: argparse.Namespace, config: ExperimentConfig) -> ParallelCorpus:
    if getattr(args, 'data', None):
        return ParallelCorpus.load(args.data)
    return synthetic_corpus(config)


def cmd_make_data(args: argparse.Namespace) -> None:
    config = _config(args)
    corpus = synthetic_corpus(config)
    corpus.save(args.out)
    logger.info('Wrote %s task to %s', config.data.kind, args.out)


def cmd_learn_bpe(args: argparse.Namespace) -> None:
    table = learn_bpe(read_lines(args.input), args.merges)
    _write_output(args.out, ''.join(f'{left} {right}\n' for left, right in table.merges))
    logger.info('Learned %d merges', len(table))


def cmd_train(args: argparse.Namespace) -> None:
    config = _config(args)
    merges: tuple[MergeTable, MergeTable] | None = None
    if args.src_merges or args.tgt_merges:
        if not (args.src_merges and args.tgt_merges):
            msg = '--src-merges and --tgt-merges must be given together'
            raise InputError(msg)
        merges = (MergeTable.load(args.src_merges), MergeTable.load(args.tgt_merges))
    corpus = EncodedCorpus.build(_corpus(args, config), config.data, merges)
    model = build_model(config, corpus)
    log = io.StringIO() if args.log else None
    result = train(model, corpus, config, progress=args.progress, log_stream=log)
    save_checkpoint(result.model, corpus.src_vocab, corpus.tgt_vocab, args.out)
    if log is not None:
        _write_output(args.log, log.getvalue())
    if corpus.pairs('test'):
        logger.info('Test BLEU: %s', evaluate_bleu(result.model, corpus).summary())


def cmd_translate(args: argparse.Namespace) -> None:
    config = _config(args)
    checkpoint = load_checkpoint(args.ckpt)
    which = _DECODERS[args.decoder]
    out_vocab = checkpoint.tgt_vocab if which is Decoder.D1 else checkpoint.src_vocab
    decode = config.decode
    overrides: dict[str, object] = {}
    if args.beam is not None:
        overrides['beam_size'] = args.beam
    if args.length_norm:
        overrides['length_norm'] = True
    if overrides:
        decode = config.with_overrides(decode=overrides).decode
    if decode.beam_size < 1:
        msg = f'Beam size must be at least 1 (got {decode.beam_size})'
        raise InputError(msg)
    lines = read_lines(args.input)
    outputs = translate(checkpoint.model, lines, checkpoint.src_vocab, out_vocab, which, decode)
    _write_output(args.output, ''.join(f'{line}\n' for line in outputs))


def cmd_evaluate(args: argparse.Namespace) -> None:
    report = corpus_bleu(read_lines(args.hyp), read_lines(args.ref), smoothing=args.smoothing)
    _write_output(args.output, report.summary() + '\n')


def cmd_swap_encoder(args: argparse.Namespace) -> None:
    config = _config(args)
    target = load_checkpoint(args.target)
    donor = None if args.donor is None else load_checkpoint(args.donor)
    hybrid = swap_checkpoint(target, donor, seed=config.seed)
    save_checkpoint(hybrid.model, hybrid.src_vocab, hybrid.tgt_vocab, args.out)


def cmd_ablate(args: argparse.Namespace) -> None:
    rows = run_ablation(_config(args), workers=args.workers)
    out = io.StringIO()
    write_ablation_csv(rows, out)
    _write_output(args.out, out.getvalue())


def cmd_sweep_lambda(args: argparse.Namespace) -> None:
    rows = lambda_sweep(_config(args), args.values, workers=args.workers)
    out = io.StringIO()
    write_sweep_csv(rows, out)
    _write_output(args.out, out.getvalue())


def cmd_swap_protocol(args: argparse.Namespace) -> None:
    rows = swap_protocol(_config(args), workers=args.workers)
    out = io.StringIO()
    write_swap_csv(rows, out)
    _write_output(args.out, out.getvalue())


def cmd_report_lengths(args: argparse.Namespace) -> None:
    systems = {name: read_lines(path) for name, path in args.hyp}
    if len(systems) != len(args.hyp):
        msg = 'System names given to --hyp must be unique'
        raise InputError(msg)
    rows = length_rows(
        systems,
        read_lines(args.ref),
        read_lines(args.src),
        args.edges,
        smoothing=args.smoothing,
    )
    out = io.StringIO()
    write_report_csv(rows, out)
    _write_output(args.out, out.getvalue())


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='experiment configuration file (TOML)')
    common.add_argument('--seed', type=int, help='override the configured seed')
    common.add_argument(
        '-v', '--verbose', action='count', default=0, help='more logging (repeatable)'
    )
    common.add_argument('-q', '--quiet', action='store_true', help='only log errors')
    common.add_argument(
        '--no-progress', dest='progress', action='store_false', help='hide progress bars'
    )

    parser = argparse.ArgumentParser(
        prog='bidan', description='Bi-decoder neural machine translation toolkit'
    )
    parser.add_argument('--version', action='version', version=f'%(prog)s {bidan.__version__}')
    sub = parser.add_subparsers(dest='command', required=True, metavar='command')

    def add(
        name: str, func: Callable[[argparse.Namespace], None], text: str
    ) -> argparse.ArgumentParser:
        command = sub.add_parser(name, parents=[common], help=text, description=text)
        command.set_defaults(func=func)
        return command

    p = add('make-data', cmd_make_data, 'write the configured synthetic task to a directory')
    p.add_argument('--out', required=True, help='output directory')

    p = add('learn-bpe', cmd_learn_bpe, 'learn BPE merges from a text file')
    p.add_argument('--input', required=True)
    p.add_argument('--merges', type=int, required=True, help='number of merges')
    p.add_argument('--out', help='merge file (default: stdout)')

    p = add('train', cmd_train, 'train a model and save a checkpoint')
    p.add_argument('--data', help='corpus directory (default: the configured synthetic task)')
    p.add_argument('--out', required=True, help='checkpoint path')
    p.add_argument('--log', help='training log CSV')
    p.add_argument('--src-merges', help='source merge file from learn-bpe')
    p.add_argument('--tgt-merges', help='target merge file from learn-bpe')

    p = add('translate', cmd_translate, 'beam-search translation of a text file')
    p.add_argument('--ckpt', required=True)
    p.add_argument('--input', required=True)
    p.add_argument('--output', '-o', help='output file (default: stdout)')
    p.add_argument('--beam', type=int, help='beam size (default: 10)')
    p.add_argument('--length-norm', action='store_true', help='rank by per-token log-probability')
    p.add_argument('--decoder', choices=tuple(_DECODERS), default='d1')

    p = add('evaluate', cmd_evaluate, 'corpus BLEU of a hypothesis file')
    p.add_argument('--hyp', required=True)
    p.add_argument('--ref', required=True)
    p.add_argument('--smoothing', action='store_true', help='add-one smoothing for n >= 2')
    p.add_argument('--output', '-o', help='output file (default: stdout)')

    p = add('swap-encoder', cmd_swap_encoder, 'replace the encoder of a checkpoint')
    p.add_argument('--target', required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument('--donor', help='checkpoint providing the encoder')
    group.add_argument(
        '--random', action='store_true', help='use a random encoder drawn from --seed'
    )
    p.add_argument('--out', required=True)

    for name, func, text in (
        ('ablate', cmd_ablate, 'train the ablation grid'),
        ('sweep-lambda', cmd_sweep_lambda, 'train one model per lambda_a value'),
        ('swap-protocol', cmd_swap_protocol, 'run the encoder-swap experiment'),
    ):
        p = add(name, func, text)
        p.add_argument('--out', help='CSV report (default: stdout)')
        p.add_argument('--workers', type=int, default=1, help='parallel training processes')
        if name == 'sweep-lambda':
            p.add_argument('--values', type=_int_list, default=[0, 1, 2, 3, 4, 5, 6])

    p = add('report-lengths', cmd_report_lengths, 'BLEU per source-length bucket')
    p.add_argument(
        '--hyp', type=_system, action='append', required=True, help='NAME=PATH (repeatable)'
    )
    p.add_argument('--ref', required=True)
    p.add_argument('--src', required=True)
    p.add_argument('--edges', type=_int_list, default=[1, 10, 20, 30, 40, 50])
    p.add_argument('--smoothing', action='store_true')
    p.add_argument('--out', help='CSV report (default: stdout)')
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.quiet:
        level = logging.ERROR
    else:
        level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, format='%(levelname)s %(name)s: %(message)s')
    try:
        args.func(args)
    except (BidanError, OSError) as e:
        sys.stderr.write(f'bidan {args.command}: error: {e}\n')
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
