import os
import random

from django.test import SimpleTestCase, TestCase

from rssd.exceptions import DigestMismatch, OutOfRange, TamperDetected
from rssd.ftl import UNMAPPED
from rssd.harness import HostSession
from rssd.models import StoredSegment
from rssd.oplog import LogKind
from rssd.recovery import LOST, TRIM_MARKER, LocalPage, RecoveryEngine, Remote, compare_order
from rssd.vault import segment_file_name

from .support import VaultMixin, page, scaled, unit_device

MS = 1_000_000


class LocalRecoveryTests(SimpleTestCase):

    def setUp(self):
        self.device = unit_device()
        self.host = self.device.host()
        self.recovery = RecoveryEngine(self.device)

    def test_restore_as_of(self):
        self.host.write(5, page('a'), 10 * MS)
        self.host.write(5, page('b'), 20 * MS)
        restore = self.recovery.restore
        self.assertIs(restore([5], 5 * MS)[5], UNMAPPED)
        self.assertEqual(restore([5], 10 * MS)[5], page('a'))
        self.assertEqual(restore([5], 19 * MS)[5], page('a'))
        self.assertEqual(restore([5], 20 * MS)[5], page('b'))
        self.assertIs(restore([6], 20 * MS)[6], UNMAPPED)

    def test_backtrack_shows_every_version_and_trim(self):
        self.host.write(5, page('a'), 10 * MS)
        self.host.write(5, page('b'), 20 * MS)
        self.host.trim(4, 4, 30 * MS)
        self.host.write(5, page('c'), 40 * MS)
        chain = self.recovery.backtrack(5)
        self.assertEqual([e.write_seq for e in chain.entries], [1, 2, 3, 4])
        self.assertEqual([e.kind for e in chain.entries],
                         [LogKind.WRITE, LogKind.WRITE, LogKind.TRIM, LogKind.WRITE])
        self.assertIs(chain.entries[2].location, TRIM_MARKER)
        self.assertTrue(all(isinstance(chain.entries[i].location, LocalPage) for i in (0, 1, 3)))
        self.assertIs(self.recovery.restore([5], 35 * MS)[5], UNMAPPED)
        self.assertEqual(self.recovery.restore([5], 25 * MS)[5], page('b'))
        self.assertEqual(len(self.recovery.backtrack(5, max_seq=2)), 2)

    def test_same_timestamp_resolves_by_seq(self):
        self.host.write(1, page('x'), 10 * MS)
        self.host.write(1, page('y'), 10 * MS)
        self.assertEqual(self.recovery.restore([1], 10 * MS)[1], page('y'))
        self.assertEqual(self.recovery.restore_at_seq([1], 1)[1], page('x'))

    def test_out_of_range(self):
        self.host.write(0, page(0), MS)
        with self.assertRaises(OutOfRange):
            self.recovery.backtrack(self.host.logical_pages)
        with self.assertRaises(OutOfRange):
            self.recovery.build_evidence_chain((0, 1))
        with self.assertRaises(OutOfRange):
            self.recovery.build_evidence_chain((1, 2))

    def test_local_evidence_chain_replays(self):
        for i in range(30):
            self.host.write(i % 7, page(i), (i + 1) * MS)
        self.host.trim(0, 3, 40 * MS)
        chain = self.recovery.build_evidence_chain((10, 31))
        self.assertTrue(chain.verified)
        self.assertTrue(chain.replay_ok)
        self.assertEqual([e.seq for e in chain.entries], list(range(10, 32)))
        self.assertEqual(chain.host_ops()[-1].kind, LogKind.TRIM)

    def test_replay_notices_a_drifted_current_page(self):
        for i in range(12):
            self.host.write(i % 4, page(i), (i + 1) * MS)
        ppa, seq = self.device.ftl.version_head(3)
        self.assertEqual(seq, 12)
        self.device.nand._pages[self.device.nand.geometry.page_number(ppa)] = page('evil')
        chain = self.recovery.build_evidence_chain((5, 12), strict=False)
        self.assertTrue(chain.verified)
        self.assertFalse(chain.replay_ok)

    def test_replay_notices_a_drifted_old_version(self):
        for i in range(12):
            self.host.write(i % 4, page(i), (i + 1) * MS)
        # seq 8 is lpa 3's content at the end of the window, overwritten later by seq 12
        location = next(e.location for e in self.recovery.backtrack(3).entries if e.write_seq == 8)
        self.assertIsInstance(location, LocalPage)
        self.assertTrue(self.recovery.build_evidence_chain((5, 9)).replay_ok)
        self.device.nand._pages[self.device.nand.geometry.page_number(location.ppa)] = page('evil')
        chain = self.recovery.build_evidence_chain((5, 9), strict=False)
        self.assertTrue(chain.verified)
        self.assertFalse(chain.replay_ok)
        self.assertTrue(self.recovery.build_evidence_chain((10, 12)).replay_ok)

    def test_altered_flash_page_is_refused_on_restore(self):
        self.host.write(2, page('good'), MS)
        ppa, _ = self.device.ftl.version_head(2)
        self.device.nand._pages[self.device.nand.geometry.page_number(ppa)] = page('evil')
        with self.assertRaises(DigestMismatch) as caught:
            self.recovery.restore([2], MS)
        self.assertEqual(caught.exception.seq, 1)

    def test_conventional_device_loses_old_versions(self):
        device = unit_device(retention=False)
        host = device.host()
        for i in range(1000):
            host.write(i % 20, page(i), (i + 1) * MS)
        recovery = RecoveryEngine(device)
        chain = recovery.backtrack(3)
        self.assertIs(chain.entries[0].location, LOST)
        self.assertIsInstance(chain.entries[-1].location, LocalPage)
        self.assertIs(recovery.restore([3], 4 * MS)[3], LOST)
        self.assertEqual(recovery.restore([3], 1000 * MS)[3], page(983))


class OrderTests(SimpleTestCase):

    def setUp(self):
        self.device = unit_device()
        self.session = HostSession(self.device.host())
        for i in range(20):
            self.session.write(i % 5, page(i), (i + 1) * MS)
            if i % 6 == 5:
                self.session.trim(i % 5, 2, (i + 1) * MS + 1)
            self.session.read(i % 3, (i + 1) * MS + 2)
        self.recovery = RecoveryEngine(self.device)

    def test_chain_matches_the_issued_order(self):
        last = self.device.log.last_seq
        chain = self.recovery.build_evidence_chain((1, last), self.session.ground_truth)
        agreement = compare_order(chain, self.session.ground_truth)
        self.assertTrue(agreement.ok)
        self.assertEqual(agreement.matched, agreement.expected)
        self.assertEqual(agreement.expected, 23)
        self.assertEqual({a.phase for a in chain.annotations}, {'benign'})

    def test_reordered_schedule_is_reported(self):
        last = self.device.log.last_seq
        chain = self.recovery.build_evidence_chain((1, last))
        issued = [op for op in self.session.ground_truth if op.seq is not None]
        issued[3], issued[4] = issued[4], issued[3]
        agreement = compare_order(chain, issued)
        self.assertFalse(agreement.ok)
        self.assertEqual(agreement.first_divergence, 3)
        self.assertEqual(agreement.matched, agreement.expected - 2)


class VaultRecoveryTests(VaultMixin, TestCase):

    def setUp(self):
        super().setUp()
        self.device = unit_device(self.link, self.key)
        self.host = self.device.host()
        for i in range(400):
            self.host.write(i % 30, page(i), (i + 1) * MS)
        self.recovery = RecoveryEngine(self.device, self.link)

    def test_old_versions_come_back_from_the_vault(self):
        chain = self.recovery.backtrack(4)
        self.assertTrue(any(isinstance(e.location, Remote) for e in chain.entries))
        self.assertEqual(len(chain), 14)
        for i in (4, 34, 214, 394):
            self.assertEqual(self.recovery.restore([4], (i + 1) * MS)[4], page(i))

    def test_chain_spans_vault_and_device(self):
        oldest_local = self.device.log.oldest_local_seq
        self.assertGreater(oldest_local, 1)
        last = self.device.log.last_seq
        chain = self.recovery.build_evidence_chain((oldest_local - 20, last))
        self.assertTrue(chain.verified)
        self.assertTrue(chain.replay_ok)
        self.assertEqual(chain.entries[0].seq, oldest_local - 20)
        self.assertEqual(chain.entries[-1].seq, last)

    def test_random_windows_replay(self):
        rng = random.Random(31)
        last = self.device.log.last_seq
        for _ in range(scaled(20, 100)):
            # a third of the windows end at the newest seq, where the live mapping is compared
            if rng.random() < 0.3:
                end = last
                first = rng.randint(max(1, last - 120), last)
            else:
                first = rng.randint(1, last)
                end = rng.randint(first, min(last, first + 120))
            with self.subTest(window=(first, end)):
                chain = self.recovery.build_evidence_chain((first, end))
                self.assertTrue(chain.verified)
                self.assertTrue(chain.replay_ok)

    def test_damaged_vault_segment_breaks_the_chain(self):
        stored = StoredSegment.objects.get(volume=self.store.volume, segment_id=1)
        path = os.path.join(self.vault_root, segment_file_name(1))
        with open(path, 'r+b') as f:
            f.seek(-1, os.SEEK_END)
            last = f.read(1)
            f.seek(-1, os.SEEK_END)
            f.write(bytes([last[0] ^ 0x01]))
        window = (1, self.device.log.last_seq)
        with self.assertRaises(TamperDetected) as caught:
            self.recovery.build_evidence_chain(window)
        self.assertEqual(caught.exception.seq, stored.last_seq)
        chain = self.recovery.build_evidence_chain(window, strict=False)
        self.assertFalse(chain.verified)
        self.assertEqual(chain.status.tamper_seq, stored.last_seq)
