"""
Report writer for restobench
Handles JSON and CSV output of metric reports, sweeps and matrices
"""
import csv
import json
import logging
import os

from src.errors import UsageError
from src.harness import SweepResult
from src.metrics import METRICS, MetricReport

logger = logging.getLogger(__name__)

FORMATS = ('json', 'csv')
REPORT_CSV_COLUMNS = ('item_id',) + METRICS
SWEEP_CSV_COLUMNS = ('experiment', 'value', 'metric', 'mean', 'std', 'delta_mean')
AGGREGATE_ROW_ID = 'aggregate'


def _cell(value):
    return '' if value is None else repr(float(value))


class ReportWriter:
    def __init__(self, fmt='json'):
        """Initialize the writer for one output format"""
        if fmt not in FORMATS:
            raise UsageError(f"unknown report format '{fmt}' (expected one of {FORMATS})")
        self.fmt = fmt

    def write(self, result, path):
        """Serialize a MetricReport or SweepResult to `path`"""
        directory = os.path.dirname(os.fspath(path))
        if directory:
            os.makedirs(directory, exist_ok=True)
        if self.fmt == 'json':
            self._write_json(result, path)
        elif isinstance(result, SweepResult):
            self._write_sweep_csv(result, path)
        else:
            self._write_report_csv(result, path)
        logger.info("wrote %s report to %s", self.fmt, path)
        return path

    def _write_json(self, result, path):
        with open(path, 'w', encoding='utf-8') as handle:
            json.dump(result.to_dict(), handle, indent=2)
            handle.write('\n')

    def _write_report_csv(self, report, path):
        # one row per item, then the aggregate means
        with open(path, 'w', encoding='utf-8', newline='') as handle:
            writer = csv.writer(handle)
            writer.writerow(REPORT_CSV_COLUMNS)
            for item in report.per_item:
                writer.writerow([item.item_id] + [_cell(getattr(item, m)) for m in METRICS])
            writer.writerow([AGGREGATE_ROW_ID] + [_cell(report.mean(m)) for m in METRICS])

    def _write_sweep_csv(self, result, path):
        with open(path, 'w', encoding='utf-8', newline='') as handle:
            writer = csv.writer(handle)
            writer.writerow(SWEEP_CSV_COLUMNS)
            for point in result.points:
                report = point.report
                for metric in METRICS:
                    stats = report.aggregate[metric]
                    delta = report.deltas.mean(metric) if report.deltas is not None else None
                    value = point.value if isinstance(point.value, str) else repr(float(point.value))
                    writer.writerow([result.kind, value, metric, _cell(stats['mean']),
                                     _cell(stats['std']), _cell(delta)])


def emit_report(result, fmt, path):
    """Write a report or sweep result as json or csv"""
    return ReportWriter(fmt).write(result, path)


def load_report(path):
    """Parse a JSON report written by emit_report"""
    with open(path, 'r', encoding='utf-8') as handle:
        data = json.load(handle)
    if 'points' in data:
        return SweepResult.from_dict(data)
    return MetricReport.from_dict(data)
