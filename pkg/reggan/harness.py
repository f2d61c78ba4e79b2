#!/usr/bin/env python3
"""Before/after evaluation of registration methods and aggregate reports"""
import csv
import io
import json
import logging
import time
import typing
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from reggan.baseline import baseline_register
from reggan.constants import (
    METHOD_ORDER,
    BorderPolicy,
    Method,
    MissingCheckpointError,
    ReportFormat,
)
from reggan.deformation import err_def
from reggan.imaging import warp, zero_field
from reggan.metrics import dice, hd95, mad, mse
from reggan.networks import Generator
from reggan.synthdata import RegistrationCase
from reggan.training import register

_LOGGER = logging.getLogger("reggan")

METRIC_COLUMNS = ("dice", "err_def", "hd95", "mad", "mse", "time_s")

REPORT_NOTES = [
    "dice is plain Dice overlap (not normalized)",
    "baseline_nmi is an NMI/B-spline gradient-ascent baseline",
]

# -----------------------------------------------------------------------------


@dataclass
class MetricsReport:
    """Metrics of one method on one case (None when not applicable)"""

    case_id: str
    method: Method
    dice: float
    err_def: typing.Optional[float] = None
    hd95: typing.Optional[float] = None
    mad: typing.Optional[float] = None
    mse: typing.Optional[float] = None
    time_s: float = 0.0

    def __post_init__(self):
        self.method = Method(self.method)

        for name in METRIC_COLUMNS:
            value = getattr(self, name)
            if (value is not None) and (value < 0):
                raise ValueError(f"Metric {name} must be nonnegative, got {value}")

        if self.dice > 1:
            raise ValueError(f"Dice must be at most 1, got {self.dice}")

    def metric(self, name: str) -> typing.Optional[float]:
        """Metric value by column name"""
        return getattr(self, name)


@dataclass
class EvaluationArtifacts:
    """Everything the methods need to register a case"""

    generators: typing.Dict[Method, Generator] = field(default_factory=dict)
    baseline_grid: typing.Tuple[int, int] = (8, 8)
    baseline_iters: int = 200
    baseline_step: float = 1.0
    max_displacement: typing.Optional[float] = None
    pixel_size_mm: float = 1.0
    mask_only: bool = False
    border: BorderPolicy = BorderPolicy.CLAMP


@dataclass
class CaseFailure:
    """A (case, method) evaluation that raised"""

    case_id: str
    method: Method
    message: str


@dataclass
class AggregateTable:
    """Per-method mean metrics in fixed row order"""

    rows: typing.List[typing.Tuple[Method, typing.Dict[str, typing.Optional[float]]]]
    counts: typing.Dict[Method, int]
    notes: typing.List[str] = field(default_factory=lambda: list(REPORT_NOTES))

    def row(self, method: Method) -> typing.Dict[str, typing.Optional[float]]:
        """Means of one method"""
        for row_method, values in self.rows:
            if row_method == method:
                return values

        raise KeyError(method)


# -----------------------------------------------------------------------------


def recover_field(
    case: RegistrationCase, method: Method, artifacts: EvaluationArtifacts
) -> typing.Tuple[np.ndarray, float]:
    """Field a method recovers for a case, and the registration time"""
    method = Method(method)
    height, width = case.ref.shape

    if method == Method.BEFORE:
        return zero_field(width, height), 0.0

    if method in (Method.GAN_REG, Method.GAN_REG_NCYC):
        gen = artifacts.generators.get(method)
        if gen is None:
            raise MissingCheckpointError(f"No checkpoint for method {method.value}")

        output = register(gen, case.ref, case.flt, max_disp=artifacts.max_displacement)
        return output.field, float(output.time_s or 0.0)

    start_time = time.perf_counter()
    recovered, _ = baseline_register(
        case.ref,
        case.flt,
        grid=artifacts.baseline_grid,
        iters=artifacts.baseline_iters,
        step=artifacts.baseline_step,
        border=artifacts.border,
    )

    return recovered, time.perf_counter() - start_time


def evaluate_case(
    case: RegistrationCase, method: Method, artifacts: EvaluationArtifacts
) -> MetricsReport:
    """All applicable metrics after registering a case with one method"""
    method = Method(method)
    recovered, time_s = recover_field(case, method, artifacts)

    warped_mask = (
        warp(case.mask_flt_deformed.astype(np.float64), recovered, border=artifacts.border)
        >= 0.5
    )

    report = MetricsReport(
        case_id=case.id,
        method=method,
        dice=dice(case.mask_ref, warped_mask),
        time_s=time_s,
    )

    if case.mask_ref.any() and warped_mask.any():
        report.hd95 = hd95(case.mask_ref, warped_mask) * artifacts.pixel_size_mm
        report.mad = mad(case.mask_ref, warped_mask) * artifacts.pixel_size_mm

    if not artifacts.mask_only:
        report.err_def = err_def(case.target_field, recovered) * artifacts.pixel_size_mm
        trans = warp(case.flt, recovered, border=artifacts.border)
        report.mse = mse(trans, case.flt_aligned)

    return report


def evaluate_cases(
    cases: typing.Sequence[RegistrationCase],
    methods: typing.Sequence[Method],
    artifacts: EvaluationArtifacts,
    jobs: int = 1,
) -> typing.Tuple[typing.List[MetricsReport], typing.List[CaseFailure]]:
    """Evaluate every (case, method) pair; failures are recorded, not raised"""
    if jobs < 1:
        raise ValueError(f"Jobs must be positive, got {jobs}")

    tasks = [(case, Method(method)) for case in cases for method in methods]

    def run_task(
        task: typing.Tuple[RegistrationCase, Method]
    ) -> typing.Union[MetricsReport, CaseFailure]:
        case, method = task
        try:
            return evaluate_case(case, method, artifacts)
        except Exception as e:
            _LOGGER.warning("Evaluation of %s with %s failed: %s", case.id, method.value, e)
            return CaseFailure(case_id=case.id, method=method, message=str(e))

    if jobs == 1:
        results = [run_task(task) for task in tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as executor:
            results = list(executor.map(run_task, tasks))

    reports = [r for r in results if isinstance(r, MetricsReport)]
    failures = [r for r in results if isinstance(r, CaseFailure)]

    return reports, failures


# -----------------------------------------------------------------------------
# Aggregation and reports
# -----------------------------------------------------------------------------


def aggregate(reports: typing.Sequence[MetricsReport]) -> AggregateTable:
    """Mean of every metric per method (rows: before, gan_reg, gan_reg_ncyc, baseline_nmi)"""
    if not reports:
        raise ValueError("Cannot aggregate an empty report list")

    rows = []
    counts: typing.Dict[Method, int] = {}
    for method in METHOD_ORDER:
        method_reports = [r for r in reports if r.method == method]
        if not method_reports:
            continue

        counts[method] = len(method_reports)
        means: typing.Dict[str, typing.Optional[float]] = {}
        for name in METRIC_COLUMNS:
            values = [r.metric(name) for r in method_reports if r.metric(name) is not None]
            means[name] = float(np.mean(sorted(values))) if values else None

        rows.append((method, means))

    return AggregateTable(rows=rows, counts=counts)


def _cell(value: typing.Optional[float]) -> str:
    return "" if value is None else f"{value:.6f}"


def render_report(
    table: AggregateTable, report_format: typing.Union[str, ReportFormat]
) -> bytes:
    """Serialize an aggregate table as csv, json-text, or aligned-text"""
    try:
        report_format = ReportFormat(report_format)
    except ValueError as e:
        raise ValueError(f"Unknown report format: {report_format}") from e

    header = ["method"] + list(METRIC_COLUMNS)
    body = [
        [method.value] + [_cell(means[name]) for name in METRIC_COLUMNS]
        for method, means in table.rows
    ]

    if report_format == ReportFormat.CSV:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(body)
        return out.getvalue().encode("utf-8")

    if report_format == ReportFormat.JSON:
        report_dict = {
            "columns": header,
            "rows": [
                {"method": method.value, "count": table.counts[method], **means}
                for method, means in table.rows
            ],
            "notes": table.notes,
        }
        return (json.dumps(report_dict, indent=4) + "\n").encode("utf-8")

    widths = [
        max(len(line[col]) for line in [header] + body) for col in range(len(header))
    ]
    lines = [
        "  ".join(cell.ljust(width) for cell, width in zip(line, widths)).rstrip()
        for line in [header] + body
    ]
    lines.extend(f"# {note}" for note in table.notes)

    return ("\n".join(lines) + "\n").encode("utf-8")


CASE_COLUMNS = ("case_id", "method") + METRIC_COLUMNS


def render_cases(reports: typing.Sequence[MetricsReport]) -> bytes:
    """Per-case CSV (timing with 3 decimals)"""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CASE_COLUMNS)
    for report in reports:
        row = [report.case_id, report.method.value]
        row.extend(_cell(report.metric(name)) for name in METRIC_COLUMNS[:-1])
        row.append(f"{report.time_s:.3f}")
        writer.writerow(row)

    return out.getvalue().encode("utf-8")


def read_cases(path: typing.Union[str, Path]) -> typing.List[MetricsReport]:
    """Load a per-case CSV written by render_cases"""
    reports: typing.List[MetricsReport] = []
    with open(path, "r", encoding="utf-8", newline="") as cases_file:
        reader = csv.DictReader(cases_file)
        missing = set(CASE_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"Per-case CSV is missing columns {sorted(missing)}: {path}")

        for row in reader:
            values = {
                name: (float(row[name]) if row[name] else None) for name in METRIC_COLUMNS
            }
            reports.append(
                MetricsReport(
                    case_id=row["case_id"],
                    method=Method(row["method"]),
                    dice=typing.cast(float, values["dice"]),
                    err_def=values["err_def"],
                    hd95=values["hd95"],
                    mad=values["mad"],
                    mse=values["mse"],
                    time_s=values["time_s"] or 0.0,
                )
            )

    return reports

