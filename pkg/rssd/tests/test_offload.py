import random
import threading

from django.test import SimpleTestCase, TestCase

from rssd.exceptions import CapacityExhausted, VaultUnreachable
from rssd.frames import DeviceKey, decode_frame
from rssd.ftl import UNMAPPED, PageLifecycle
from rssd.models import StoredPageRecord
from rssd.oplog import LogKind
from rssd.recovery import RecoveryEngine
from rssd.transport import FaultyLink

from .support import CaptureLink, VaultMixin, page, scaled, unit_device

NS = 1_000_000_000
MS = 1_000_000


class OffloadTests(VaultMixin, TestCase):

    def fill(self, device, rounds, lpas, t=0, step=MS):
        host = device.host()
        written = {}
        for round_ in range(rounds):
            for lpa in range(lpas):
                t += step
                data = page(f"{round_}-{lpa}")
                host.write(lpa, data, t)
                written[(round_, lpa)] = (t, data)
        return written

    def test_gc_only_erases_pages_the_vault_holds(self):
        device = unit_device(self.link, self.key)
        checked = []

        def guard(pages):
            for ppa, meta in pages:
                self.assertNotIn(meta.lifecycle, (PageLifecycle.INVALID_RETAINED, PageLifecycle.OFFLOAD_PENDING))
                if meta.lifecycle is not PageLifecycle.SAFE_TO_ERASE:
                    continue
                record = StoredPageRecord.objects.get(volume=self.store.volume, write_seq=meta.write_seq)
                self.assertEqual(bytes(record.digest), meta.payload_digest)
                checked.append(meta.write_seq)
        device.ftl.erase_guards.append(guard)
        host = device.host()
        rng = random.Random(9)
        first = {}
        last = {}
        for step in range(1, scaled(3000, 1_000_000) + 1):
            t = step * MS
            lpa = rng.randrange(48)
            if rng.random() < 0.1:
                host.trim(lpa, 1, t)
                last[lpa] = UNMAPPED
            else:
                data = page(f"{step}")
                host.write(lpa, data, t)
                first.setdefault(lpa, (t, data))
                last[lpa] = data
        device.flush()

        self.assertTrue(checked)
        self.assertGreater(device.wear().total_erases, 0)
        self.assertEqual(device.ftl.audit(), [])
        self.assertEqual(device.offload.stats.nacks, 0)
        recovery = RecoveryEngine(device, self.link)
        for lpa in (3, 17, 40):
            t, data = first[lpa]
            self.assertEqual(recovery.restore([lpa], t)[lpa], data)
        for lpa, data in last.items():
            self.assertEqual(host.read(lpa), data)

    def test_everything_retained_reaches_the_vault(self):
        device = unit_device(self.link, self.key)
        self.fill(device, 3, 10)
        device.flush()
        status = self.store.status()
        self.assertEqual(status.pages, 20)
        self.assertEqual(status.last_seq, device.log.last_seq)
        self.assertEqual(status.tail_hash, device.log.tail_hash)
        self.assertFalse(device.log.has_unshipped())
        self.assertEqual(device.ftl.held_pages, 0)

    def test_lost_acknowledgement_is_resent_after_backoff(self):
        link = FaultyLink(self.link, ['lose-ack'])
        device = unit_device(link, self.key)
        self.fill(device, 2, 10)
        with self.assertRaises(VaultUnreachable):
            device.flush()
        self.assertEqual(self.store.status().segments, 1)
        self.assertEqual(device.ftl.lifecycle_counts()[PageLifecycle.OFFLOAD_PENDING], 0)
        device.tick(device.now + 2 * NS)
        device.flush()
        self.assertEqual(device.offload.stats.timeouts, 1)
        self.assertEqual(self.store.status().pages, 10)
        self.assertEqual(link.delivered[0], link.delivered[1])

    def test_dropped_frame_is_resent(self):
        link = FaultyLink(self.link, ['drop'])
        device = unit_device(link, self.key)
        self.fill(device, 2, 10)
        with self.assertRaises(VaultUnreachable):
            device.flush()
        self.assertEqual(self.store.status().segments, 0)
        device.tick(device.now + 2 * NS)
        device.flush()
        self.assertEqual(self.store.status().pages, 10)

    def test_swallowed_frame_is_resent_from_the_archive(self):
        link = FaultyLink(self.link, ['swallow', 'duplicate'])
        device = unit_device(link, self.key)
        self.fill(device, 2, 10)
        device.flush()
        self.assertEqual(device.offload.stats.resends, 1)
        status = self.store.status()
        self.assertEqual((status.segments, status.pages), (device.offload.stats.segments_acked, 10))
        self.assertEqual(status.tail_hash, device.log.tail_hash)

    def test_backoff_doubles_until_the_vault_answers(self):
        link = FaultyLink(self.link)
        device = unit_device(link, self.key)
        self.fill(device, 2, 10)
        link.down = True
        t0 = device.now
        with self.assertRaises(VaultUnreachable):
            device.flush()
        engine = device.offload
        self.assertEqual(engine.retry_at, t0 + NS)
        device.tick(t0 + NS // 2)
        self.assertEqual(engine.stats.timeouts, 1)
        device.tick(t0 + NS)
        self.assertEqual((engine.stats.timeouts, engine.retry_at), (2, t0 + 3 * NS))
        device.tick(t0 + 3 * NS)
        self.assertEqual((engine.stats.timeouts, engine.retry_at), (3, t0 + 7 * NS))
        link.down = False
        device.tick(t0 + 7 * NS)
        self.assertEqual(engine.retry_at, 0)
        self.assertGreaterEqual(engine.stats.segments_acked, 1)

    def test_unreachable_vault_refuses_writes_but_keeps_history(self):
        link = FaultyLink(self.link)
        link.down = True
        device = unit_device(link, self.key)
        host = device.host()
        t = 0
        versions = []
        with self.assertRaises(CapacityExhausted):
            for i in range(10_000):
                t += MS
                data = page(i)
                host.write(i % 8, data, t)
                versions.append((i % 8, t, data))
        recovery = RecoveryEngine(device)
        for lpa, timestamp, data in versions[::13]:
            self.assertEqual(recovery.restore([lpa], timestamp)[lpa], data)

        link.down = False
        device.tick(t + 120 * NS)
        t += 121 * NS
        host.write(0, page('after'), t)
        device.flush()
        self.assertEqual(host.read(0), page('after'))
        recovery = RecoveryEngine(device, self.link)
        lpa, timestamp, data = versions[0]
        self.assertEqual(recovery.restore([lpa], timestamp)[lpa], data)
        kinds = {e.kind for e in self.store.fetch_log_entries(1, device.log.last_seq)}
        self.assertIn(LogKind.OFFLOAD_ACKED, kinds)

    def test_frames_travel_without_the_ftl_lock(self):
        link = LockWatchingLink(self.link)
        device = unit_device(link, self.key)
        link.lock = device.ftl.lock
        # offload only through the write path's capacity hook
        device.ftl.background_hook = None
        relieved = []
        relieve = device.ftl.pressure_hook

        def counting_hook():
            relieved.append(device.now)
            return relieve()
        device.ftl.pressure_hook = counting_hook
        self.fill(device, 10, 40)
        device.flush()

        self.assertTrue(relieved)
        self.assertGreaterEqual(len(link.lock_free), len(relieved))
        self.assertTrue(all(link.lock_free))
        self.assertEqual(device.ftl.audit(), [])
        self.assertEqual(self.store.status().pages, 360)


class LockWatchingLink:
    """Forwards frames, noting whether another thread could take the FTL lock while each was sent."""

    def __init__(self, inner):
        self.inner = inner
        self.lock = None
        self.lock_free = []

    def send_frame(self, frame):
        outcome = []

        def try_lock():
            acquired = self.lock.acquire(timeout=1)
            if acquired:
                self.lock.release()
            outcome.append(acquired)
        thread = threading.Thread(target=try_lock)
        thread.start()
        thread.join()
        self.lock_free.append(outcome[0])
        return self.inner.send_frame(frame)

    def __getattr__(self, name):
        return getattr(self.inner, name)


class ShipmentOrderTests(SimpleTestCase):

    def setUp(self):
        self.key = DeviceKey.generate()
        self.link = CaptureLink()
        self.device = unit_device(self.link, self.key)
        self.host = self.device.host()

    def shipped(self):
        return [decode_frame(frame, self.key)[0] for frame in self.link.frames]

    def test_long_lived_version_ships_after_newer_ones(self):
        self.host.write(0, page('A'), 1 * MS)
        self.host.write(1, page('B'), 2 * MS)
        self.host.write(1, page('C'), 3 * MS)
        self.device.flush()
        self.host.write(0, page('D'), 4 * MS)
        self.device.flush()
        records = [[(r.write_seq, r.lpa) for r in s.page_records] for s in self.shipped() if s.page_records]
        self.assertEqual(records, [[(2, 1)], [(1, 0)]])

    def test_versions_of_each_lpa_ship_oldest_first(self):
        rng = random.Random(11)
        for step in range(1, scaled(2000, 20_000) + 1):
            lpa = rng.randrange(64)
            if rng.random() < 0.1:
                self.host.trim(lpa, min(rng.randint(1, 4), 64 - lpa), step * MS)
            else:
                self.host.write(lpa, page(f"{step}"), step * MS)
        self.device.flush()

        newest = {}
        logged = []
        writes = set()
        for segment in self.shipped():
            logged.extend(e.seq for e in segment.entries)
            writes.update(e.seq for e in segment.entries if e.kind is LogKind.WRITE)
            seqs = [r.write_seq for r in segment.page_records]
            self.assertEqual(seqs, sorted(set(seqs)))
            for record in segment.page_records:
                self.assertGreater(record.write_seq, newest.get(record.lpa, 0))
                self.assertIn(record.write_seq, writes)
                newest[record.lpa] = record.write_seq
        self.assertEqual(logged, list(range(1, self.device.log.last_seq + 1)))
        self.assertTrue(newest)
