# SPDX-License-Identifier: MIT

"""Single-reference corpus BLEU with exact, auditable counts."""

from __future__ import annotations

import collections
import csv
import dataclasses
import math
import typing


if typing.TYPE_CHECKING:
    from collections.abc import Iterable, Sequence
    from typing import TextIO, Union

    Sentences = Sequence[Union[str, Sequence[str]]]

from bidan.errors import InputError


__all__ = [
    'REPORT_COLUMNS',
    'BleuReport',
    'BucketReport',
    'Precision',
    'corpus_bleu',
    'length_bucket_report',
    'modified_ngram_precision',
    'ngram_counts',
    'write_report_csv',
]

REPORT_COLUMNS = ('bucket', 'p1', 'p2', 'p3', 'p4', 'bp', 'bleu', 'n_sentences')


class Precision(typing.NamedTuple):
    """Clipped n-gram matches over candidate n-grams."""

    matches: int
    total: int

    @property
    def value(self) -> float:
        # zero candidate n-grams count as zero precision
        return self.matches / self.total if self.total else 0.0

    def __str__(self) -> str:
        return f'{self.matches}/{self.total}'


def _tokens(sentence: str | Sequence[str]) -> tuple[str, ...]:
    return tuple(sentence.split()) if isinstance(sentence, str) else tuple(sentence)


def ngram_counts(tokens: Sequence[str], n: int) -> collections.Counter[tuple[str, ...]]:
    return collections.Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check_aligned(hyps: Sentences, refs: Sentences) -> None:
    if len(hyps) != len(refs):
        msg = f'Got {len(hyps)} hypotheses for {len(refs)} references'
        raise InputError(msg)


def modified_ngram_precision(hyps: Sentences, refs: Sentences, n: int) -> Precision:
    if n < 1:
        msg = f'n-gram order must be at least 1 (got {n})'
        raise InputError(msg)
    _check_aligned(hyps, refs)
    matches = total = 0
    for hyp, ref in zip(hyps, refs):
        hyp_counts = ngram_counts(_tokens(hyp), n)
        ref_counts = ngram_counts(_tokens(ref), n)
        matches += sum(min(count, ref_counts[gram]) for gram, count in hyp_counts.items())
        total += sum(hyp_counts.values())
    return Precision(matches, total)


@dataclasses.dataclass(frozen=True)
class BleuReport:
    precisions: tuple[Precision, ...]
    brevity_penalty: float
    bleu: float
    hyp_length: int
    ref_length: int
    n_sentences: int

    def p(self, n: int) -> Precision:
        return self.precisions[n - 1]

    def summary(self) -> str:
        parts = [f'p{n}={p.value:.4f} ({p})' for n, p in enumerate(self.precisions, start=1)]
        return (
            ' '.join(parts)
            + f' BP={self.brevity_penalty:.4f} BLEU={self.bleu:.4f}'
            + f' (hyp_len={self.hyp_length} ref_len={self.ref_length})'
        )


def corpus_bleu(
    hyps: Sentences, refs: Sentences, max_n: int = 4, *, smoothing: bool = False
) -> BleuReport:
    """Corpus BLEU with uniform weights over orders ``1..max_n``.

    With ``smoothing`` orders two and up use add-one counts. Without it any
    zero precision makes the score 0.
    """
    _check_aligned(hyps, refs)
    if not hyps:
        msg = 'Cannot score an empty corpus'
        raise InputError(msg)
    precisions = tuple(modified_ngram_precision(hyps, refs, n) for n in range(1, max_n + 1))
    c = sum(len(_tokens(h)) for h in hyps)
    r = sum(len(_tokens(ref)) for ref in refs)
    if c == 0:
        bp = 0.0
    elif c > r:
        bp = 1.0
    else:
        bp = math.exp(1 - r / c)

    values = []
    for n, p in enumerate(precisions, start=1):
        if smoothing and n > 1:
            values.append((p.matches + 1) / (p.total + 1))
        else:
            values.append(p.value)
    if min(values) <= 0:
        bleu = 0.0
    else:
        bleu = bp * math.exp(sum(math.log(v) for v in values) / max_n)
    return BleuReport(precisions, bp, min(bleu, 1.0), c, r, len(hyps))


class BucketReport(typing.NamedTuple):
    low: int
    high: int | None
    report: BleuReport | None

    @property
    def label(self) -> str:
        return f'[{self.low},{self.high})' if self.high is not None else f'[{self.low},inf)'

    @property
    def empty(self) -> bool:
        return self.report is None


def length_bucket_report(
    hyps: Sentences,
    refs: Sentences,
    srcs: Sentences,
    edges: Sequence[int],
    *,
    smoothing: bool = False,
) -> list[BucketReport]:
    """Corpus BLEU per source-length bucket.

    ``edges`` ``e0 < e1 < ... < ek`` give the buckets ``[e0, e1)``, ...,
    ``[e(k-1), ek)`` plus an open ``[ek, inf)`` bucket, so ``k + 1`` edges
    give ``k + 1`` reports. The open bucket is reported empty when no
    source reaches ``ek``. Sentences shorter than ``e0`` fall in no bucket.
    """
    _check_aligned(hyps, refs)
    _check_aligned(hyps, srcs)
    if not edges or any(b <= a for a, b in zip(edges, edges[1:])):
        msg = f'Bucket edges must be non-empty and strictly increasing (got {list(edges)})'
        raise InputError(msg)
    bounds: list[tuple[int, int | None]] = [
        (low, edges[i + 1] if i + 1 < len(edges) else None) for i, low in enumerate(edges)
    ]
    members: list[list[int]] = [[] for _ in bounds]
    for index, src in enumerate(srcs):
        length = len(_tokens(src))
        for bucket, (low, high) in enumerate(bounds):
            if low <= length and (high is None or length < high):
                members[bucket].append(index)
                break
    reports = []
    for (low, high), rows in zip(bounds, members):
        report = (
            corpus_bleu([hyps[i] for i in rows], [refs[i] for i in rows], smoothing=smoothing)
            if rows
            else None
        )
        reports.append(BucketReport(low, high, report))
    return reports


def write_report_csv(
    rows: Iterable[tuple[str, BleuReport | None]], stream: TextIO, *, label: str = 'bucket'
) -> None:
    """Write ``bucket,p1..p4,bp,bleu,n_sentences`` rows; precisions as ``matches/total``.

    ``label`` renames the first column. An empty bucket keeps its label and
    a zero sentence count with the score cells left blank.
    """
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow((label, *REPORT_COLUMNS[1:]))
    for name, report in rows:
        if report is None:
            writer.writerow([name, '', '', '', '', '', '', 0])
            continue
        cells = [str(report.p(n)) if n <= len(report.precisions) else '' for n in range(1, 5)]
        writer.writerow(
            [
                name,
                *cells,
                f'{report.brevity_penalty:.6f}',
                f'{report.bleu:.6f}',
                report.n_sentences,
            ]
        )
