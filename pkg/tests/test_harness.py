#!/usr/bin/env python3
"""Tests for evaluation and reports"""
import csv
import io
import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from reggan.constants import DeformationKind, Method, MissingCheckpointError, ReportFormat
from reggan.deformation import DeformationSpec
from reggan.harness import (
    METRIC_COLUMNS,
    EvaluationArtifacts,
    MetricsReport,
    aggregate,
    evaluate_case,
    evaluate_cases,
    read_cases,
    render_cases,
    render_report,
)
from reggan.imaging import warp
from reggan.metrics import dice
from reggan.networks import build_generator
from reggan.synthdata import make_case, make_phantom


def rigid_case(translation=(0.0, 0.0), ident="p000_d0000"):
    """Unimodal case deformed by a constant translation"""
    ref, mask = make_phantom(0, width=32, height=32)
    spec = DeformationSpec(kind=DeformationKind.RIGID, translation=translation)
    return make_case(ident, ref, ref, mask, spec)


def report(method, dice_value, err=None, case_id="p000_d0000", time_s=0.0):
    """Report with only dice and err_def filled in"""
    return MetricsReport(
        case_id=case_id, method=method, dice=dice_value, err_def=err, time_s=time_s
    )


class EvaluateTestCase(unittest.TestCase):
    """Test cases for single-case evaluation"""

    def test_aligned_before(self):
        """Undeformed case is perfect before registration"""
        result = evaluate_case(rigid_case(), Method.BEFORE, EvaluationArtifacts())

        self.assertEqual(result.dice, 1.0)
        self.assertEqual(result.err_def, 0.0)
        self.assertEqual(result.mse, 0.0)
        self.assertEqual(result.hd95, 0.0)
        self.assertEqual(result.time_s, 0.0)

    def test_translated_before(self):
        """Err_Def before registration is the translation length"""
        result = evaluate_case(rigid_case((3.0, 4.0)), Method.BEFORE, EvaluationArtifacts())
        self.assertAlmostEqual(result.err_def, 5.0, places=9)

    def test_pixel_size(self):
        """Distances scale with the pixel size"""
        case = rigid_case((3.0, 4.0))
        result = evaluate_case(case, Method.BEFORE, EvaluationArtifacts(pixel_size_mm=0.5))
        self.assertAlmostEqual(result.err_def, 2.5, places=9)

    def test_dice_recomputed(self):
        """Dice matches a recomputation from the warped mask"""
        case = rigid_case((2.0, 1.0))
        gen = build_generator(channels=8, blocks=1)
        artifacts = EvaluationArtifacts(generators={Method.GAN_REG: gen})

        result = evaluate_case(case, Method.GAN_REG, artifacts)

        # Untrained generator is the identity
        expected = dice(
            case.mask_ref,
            warp(case.mask_flt_deformed.astype(np.float64), np.zeros((2, 32, 32))) >= 0.5,
        )
        self.assertEqual(result.dice, expected)
        self.assertEqual(result.dice, evaluate_case(case, Method.BEFORE, artifacts).dice)

    def test_mask_only(self):
        """Mask-only evaluation skips field and intensity metrics"""
        result = evaluate_case(
            rigid_case((1.0, 0.0)), Method.BEFORE, EvaluationArtifacts(mask_only=True)
        )
        self.assertIsNone(result.err_def)
        self.assertIsNone(result.mse)
        self.assertIsNotNone(result.hd95)

    def test_missing_checkpoint(self):
        """Learned methods need a generator"""
        with self.assertRaises(MissingCheckpointError):
            evaluate_case(rigid_case(), Method.GAN_REG, EvaluationArtifacts())

    def test_baseline(self):
        """Baseline produces a timed report"""
        artifacts = EvaluationArtifacts(baseline_grid=(4, 4), baseline_iters=4)
        result = evaluate_case(rigid_case((1.0, 0.0)), Method.BASELINE_NMI, artifacts)

        self.assertEqual(result.method, Method.BASELINE_NMI)
        self.assertGreater(result.time_s, 0.0)
        self.assertIsNotNone(result.err_def)


class EvaluateCasesTestCase(unittest.TestCase):
    """Test cases for batch evaluation"""

    def test_failures_recorded(self):
        """A failing method does not stop the others"""
        cases = [rigid_case(ident="p000_d0000"), rigid_case((1.0, 1.0), ident="p000_d0001")]
        reports, failures = evaluate_cases(
            cases, [Method.BEFORE, Method.GAN_REG_NCYC], EvaluationArtifacts()
        )

        self.assertEqual(len(reports), 2)
        self.assertEqual(len(failures), 2)
        self.assertTrue(all(f.method == Method.GAN_REG_NCYC for f in failures))

    def test_jobs(self):
        """Parallel evaluation matches sequential evaluation"""
        cases = [rigid_case((float(i), 0.0), ident=f"p000_d{i:04d}") for i in range(3)]
        sequential, _ = evaluate_cases(cases, [Method.BEFORE], EvaluationArtifacts(), jobs=1)
        parallel, _ = evaluate_cases(cases, [Method.BEFORE], EvaluationArtifacts(), jobs=3)

        self.assertEqual(sequential, parallel)

        with self.assertRaises(ValueError):
            evaluate_cases(cases, [Method.BEFORE], EvaluationArtifacts(), jobs=0)


class AggregateTestCase(unittest.TestCase):
    """Test cases for aggregate tables"""

    def test_single(self):
        """One report aggregates to itself"""
        table = aggregate([report(Method.BEFORE, 0.8, err=2.0)])

        self.assertEqual(table.row(Method.BEFORE)["dice"], 0.8)
        self.assertEqual(table.row(Method.BEFORE)["err_def"], 2.0)
        self.assertIsNone(table.row(Method.BEFORE)["hd95"])
        self.assertEqual(table.counts[Method.BEFORE], 1)

    def test_means(self):
        """Per-method means in fixed row order"""
        reports = [
            report(Method.BASELINE_NMI, 0.7),
            report(Method.GAN_REG, 0.8),
            report(Method.GAN_REG, 0.9, case_id="p000_d0001"),
            report(Method.BEFORE, 0.5),
        ]
        table = aggregate(reports)

        self.assertEqual(
            [method for method, _ in table.rows],
            [Method.BEFORE, Method.GAN_REG, Method.BASELINE_NMI],
        )
        self.assertAlmostEqual(table.row(Method.GAN_REG)["dice"], 0.85)

    def test_permutation(self):
        """Report order does not change the table"""
        rng = np.random.default_rng(0)
        reports = [
            report(Method.BEFORE, float(d), err=float(e), case_id=f"p000_d{i:04d}")
            for i, (d, e) in enumerate(rng.uniform(size=(20, 2)))
        ]
        shuffled = [reports[i] for i in rng.permutation(len(reports))]

        self.assertEqual(aggregate(reports).rows, aggregate(shuffled).rows)

    def test_empty(self):
        """Nothing to aggregate"""
        with self.assertRaises(ValueError):
            aggregate([])

    def test_invalid_report(self):
        """Metrics are range-checked"""
        with self.assertRaises(ValueError):
            report(Method.BEFORE, 1.5)

        with self.assertRaises(ValueError):
            report(Method.BEFORE, 0.5, err=-1.0)


class RenderTestCase(unittest.TestCase):
    """Test cases for report serialization"""

    def setUp(self):
        self.table = aggregate(
            [report(Method.BEFORE, 0.5, err=4.0), report(Method.GAN_REG, 0.75, err=1.25)]
        )

    def test_csv(self):
        """CSV parses back into the same values"""
        rows = list(csv.reader(io.StringIO(render_report(self.table, "csv").decode("utf-8"))))

        self.assertEqual(rows[0], ["method"] + list(METRIC_COLUMNS))
        self.assertEqual(rows[1][0], "before")
        self.assertEqual(float(rows[1][1]), 0.5)
        self.assertEqual(float(rows[2][2]), 1.25)

        # Metrics that were never computed stay empty
        self.assertEqual(rows[1][3], "")

    def test_json(self):
        """JSON carries counts and notes"""
        report_dict = json.loads(render_report(self.table, ReportFormat.JSON))

        self.assertEqual(report_dict["rows"][1]["method"], "gan_reg")
        self.assertEqual(report_dict["rows"][1]["count"], 1)
        self.assertEqual(report_dict["rows"][1]["dice"], 0.75)
        self.assertTrue(any("Dice" in note for note in report_dict["notes"]))

    def test_text(self):
        """Aligned text is deterministic and ends with notes"""
        text = render_report(self.table, "aligned-text").decode("utf-8")

        self.assertEqual(text, render_report(self.table, "aligned-text").decode("utf-8"))
        lines = text.splitlines()
        self.assertTrue(lines[0].startswith("method"))
        self.assertTrue(lines[1].startswith("before"))
        self.assertTrue(lines[-1].startswith("# "))

    def test_unknown_format(self):
        """Unknown formats are rejected"""
        with self.assertRaises(ValueError):
            render_report(self.table, "xml")

    def test_cases_round_trip(self):
        """Per-case CSV reads back"""
        reports = [
            report(Method.BEFORE, 0.5, err=4.0, time_s=0.0),
            report(Method.GAN_REG, 0.75, err=1.25, time_s=0.125),
        ]

        with tempfile.TemporaryDirectory() as temp_dir:
            path = Path(temp_dir) / "cases.csv"
            path.write_bytes(render_cases(reports))
            loaded = read_cases(path)

        self.assertEqual(loaded, reports)


# -----------------------------------------------------------------------------

if __name__ == "__main__":
    unittest.main()
