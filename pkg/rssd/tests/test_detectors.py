from django.test import SimpleTestCase

from rssd import detectors
from rssd.detectors import DetectionReport, LoggedOp, get_detector, registered
from rssd.exceptions import UnknownDetector
from rssd.oplog import LogKind

S = 1_000_000_000


def write(seq, t, lpa):
    return LoggedOp(seq, t * S, LogKind.WRITE, lpa, lpa + 1)


def trim(seq, t, lpa, length=1):
    return LoggedOp(seq, t * S, LogKind.TRIM, lpa, lpa + length)


class OverwriteBurstTests(SimpleTestCase):

    def run_hook(self, ops, previously_written):
        return get_detector('overwrite-burst')(ops, previously_written, threshold=3, window_ns=10 * S)

    def test_burst_of_overwrites(self):
        ops = [write(i + 1, i, lpa) for i, lpa in enumerate(range(5))]
        report = self.run_hook(ops, set(range(5)))
        self.assertTrue(report.suspicious)
        self.assertEqual(report.evidence, (1, 2, 3, 4, 5))

    def test_fresh_writes_are_quiet(self):
        ops = [write(i + 1, i, 50 + i) for i in range(10)]
        self.assertFalse(self.run_hook(ops, set(range(5))).suspicious)

    def test_slow_overwrites_are_quiet(self):
        ops = [write(i + 1, 20 * i, lpa) for i, lpa in enumerate(range(5))]
        report = self.run_hook(ops, set(range(5)))
        self.assertFalse(report.suspicious)
        self.assertIn('peak of 1', report.summary)

    def test_trims_count_as_destruction(self):
        ops = [trim(1, 0, 0, 4)]
        self.assertTrue(self.run_hook(ops, {0, 1, 2, 3}).suspicious)


class TrimAfterOverwriteTests(SimpleTestCase):

    def run_hook(self, ops, previously_written):
        return get_detector('trim-after-overwrite')(ops, previously_written, threshold=2, window_ns=10 * S)

    def test_encrypt_in_place_then_trim(self):
        ops = [write(1, 1, 1), trim(2, 2, 1), write(3, 3, 2), trim(4, 4, 2)]
        report = self.run_hook(ops, {1, 2})
        self.assertTrue(report.suspicious)
        self.assertEqual(report.evidence, (2, 4))

    def test_encrypt_to_copy_then_trim(self):
        ops = [write(1, 1, 50), trim(2, 2, 1), write(3, 3, 51), trim(4, 4, 2)]
        self.assertTrue(self.run_hook(ops, {1, 2}).suspicious)

    def test_plain_trims_are_quiet(self):
        ops = [trim(1, 1, 1), trim(2, 2, 2), trim(3, 3, 3)]
        report = self.run_hook(ops, {1, 2, 3})
        self.assertFalse(report.suspicious)
        self.assertEqual(report.summary, "0 trims followed a rewrite or a fresh write")

    def test_trims_spread_over_time_stay_below_threshold(self):
        ops = [write(1, 0, 1), trim(2, 1, 1), write(3, 100, 2), trim(4, 101, 2)]
        self.assertFalse(self.run_hook(ops, {1, 2}).suspicious)


class RegistryTests(SimpleTestCase):

    def test_builtins(self):
        self.assertEqual(registered(), ['overwrite-burst', 'trim-after-overwrite'])
        with self.assertRaises(UnknownDetector):
            get_detector('entropy')

    def test_custom_hook(self):
        @detectors.detector('every-trim')
        def every_trim(ops, previously_written):
            trims = tuple(op.seq for op in ops if op.kind is LogKind.TRIM)
            return DetectionReport('every-trim', bool(trims), trims)
        self.addCleanup(detectors._REGISTRY.pop, 'every-trim')
        self.assertIn('every-trim', registered())
        self.assertEqual(get_detector('every-trim')([trim(7, 0, 0)], set()).evidence, (7,))

    def test_report_serialization(self):
        report = DetectionReport('overwrite-burst', True, (3, 4), 1, 9, 'peak of 2')
        self.assertEqual(DetectionReport.from_dict(report.to_dict()), report)
        op = trim(4, 1, 2, 3)
        self.assertEqual(LoggedOp.from_dict(op.to_dict()), op)
