"""
Attack-success reports.

CSV columns are exactly surrogate,attack,target,n,fooled,rate with the rate
printed to four decimals. Markdown renders one row per (surrogate, attack)
and one column per target, in percent, with a trailing average.
"""
import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

from rest_framework import serializers

from sgplab.exceptions import InvalidArgumentError

logger = logging.getLogger(__name__)

CSV = 'csv'
MARKDOWN = 'md'
FORMAT_CHOICES = [(CSV, 'CSV'), (MARKDOWN, 'Markdown table')]

CSV_COLUMNS = ['surrogate', 'attack', 'target', 'n', 'fooled', 'rate']


@dataclass(frozen=True)
class ReportRow:
    surrogate: str
    attack: str
    target: str
    n: int
    fooled: int

    @property
    def rate(self) -> float:
        return self.fooled / self.n if self.n else 0.0


@dataclass
class EvalReport:
    rows: List[ReportRow] = field(default_factory=list)
    metadata: Dict = field(default_factory=dict)

    def rate(self, surrogate, attack, target) -> float:
        for row in self.rows:
            if (row.surrogate, row.attack, row.target) == (surrogate, attack, target):
                return row.rate
        raise KeyError((surrogate, attack, target))

    def average(self, surrogate, attack) -> float:
        rates = [row.rate for row in self.rows if (row.surrogate, row.attack) == (surrogate, attack)]
        return sum(rates) / len(rates) if rates else 0.0


def format_rate(rate) -> str:
    return f'{rate:.4f}'


def _emit_csv(report: EvalReport) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(CSV_COLUMNS)
    for row in report.rows:
        writer.writerow([row.surrogate, row.attack, row.target, row.n, row.fooled, format_rate(row.rate)])
    return buffer.getvalue()


def _emit_markdown(report: EvalReport) -> str:
    targets = list(dict.fromkeys(row.target for row in report.rows))
    pairs = list(dict.fromkeys((row.surrogate, row.attack) for row in report.rows))
    lines = [
        '| Surrogate | Attack | ' + ' | '.join(targets) + (' | ' if targets else '') + 'Avg. |',
        '|' + '---|' * (len(targets) + 3),
    ]
    for surrogate, attack in pairs:
        cells = []
        for target in targets:
            try:
                cells.append(f'{100 * report.rate(surrogate, attack, target):.1f}')
            except KeyError:
                cells.append('-')
        average = f'{100 * report.average(surrogate, attack):.1f}'
        lines.append(f'| {surrogate} | {attack} | ' + ''.join(f'{cell} | ' for cell in cells) + f'{average} |')
    return '\n'.join(lines) + '\n'


def emit_report(report: EvalReport, fmt=CSV) -> bytes:
    if fmt == CSV:
        return _emit_csv(report).encode('utf-8')
    if fmt in (MARKDOWN, 'markdown'):
        return _emit_markdown(report).encode('utf-8')
    raise InvalidArgumentError(f"unknown report format {fmt!r}; expected csv or md")


def parse_report(blob: bytes) -> EvalReport:
    """
    Inverse of emit_report for CSV; every row is validated.

    Only the rows come back: metadata lives in the JSON sidecar, so the
    parsed report's metadata is empty.
    """
    from .serializers import ReportRowSerializer

    reader = csv.DictReader(io.StringIO(blob.decode('utf-8')))
    if reader.fieldnames != CSV_COLUMNS:
        raise InvalidArgumentError(f"report header must be {','.join(CSV_COLUMNS)}, got {reader.fieldnames}")
    rows = []
    for line_no, record in enumerate(reader, start=2):
        serializer = ReportRowSerializer(data=record)
        try:
            serializer.is_valid(raise_exception=True)
        except serializers.ValidationError as e:
            raise InvalidArgumentError(f"report line {line_no}: {e.detail}") from e
        rows.append(serializer.save())
    return EvalReport(rows)


def emit_curve(points) -> bytes:
    """(m, rate) pairs of a depth ablation as CSV"""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(['m', 'rate'])
    for m, rate in points:
        writer.writerow([m, f'{rate:.4f}'])
    return buffer.getvalue().encode('utf-8')


def write_report(report: EvalReport, path, fmt=CSV) -> Path:
    """Write the report and its JSON metadata sidecar (same stem, .json)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(emit_report(report, fmt))
    sidecar = write_sidecar(path, report.metadata)
    logger.info(f"Wrote {len(report.rows)} report rows to {path} (metadata in {sidecar.name})")
    return path


def write_sidecar(path, metadata) -> Path:
    sidecar = Path(path).with_suffix('.json')
    sidecar.write_text(json.dumps(metadata, indent=2, sort_keys=True, default=str) + '\n')
    return sidecar
