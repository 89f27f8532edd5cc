"""The remote vault: verified, durable storage of offload segments.

Each acknowledged segment is one file ``segment-<id>.seg`` holding the
decrypted, uncompressed canonical serialization. The database tables are an
index over those files; on open the index is reconciled with the directory
so a crash between rename and commit loses nothing.
"""
import logging
import os
import threading
from collections import OrderedDict
from dataclasses import dataclass
from itertools import groupby
from operator import attrgetter
from pathlib import Path

from django.db import transaction
from django.db.models import Max, Sum

from . import detectors
from .exceptions import (
    AuthenticationFailed, BadIndex, DigestMismatch, FrameFormatError, TamperDetected, UnknownSegment,
)
from .frames import decode_frame
from .ftl import page_digest
from .models import StoredLogEntry, StoredPageRecord, StoredSegment, VaultVolume
from .oplog import BODY_SIZE, ENTRY_SIZE, GENESIS_HASH, LogKind, chain_hash, verify_chain
from .protocol import IngestReply, NackReason
from .segments import (
    HEADER, LOGSEG_HEADER, RECORD_HEADER, SEGMENT_FORMAT_TAG, parse_segment, segment_digest,
)

logger = logging.getLogger(__name__)

SEGMENT_SUFFIX = '.seg'
TMP_SUFFIX = '.tmp'


def segment_file_name(segment_id):
    return f"segment-{segment_id:020d}{SEGMENT_SUFFIX}"


@dataclass(frozen=True)
class VaultVersion:
    write_seq: int
    timestamp: int
    segment_id: int
    record_index: int
    lpa: int = None

    def to_dict(self):
        return {'write_seq': self.write_seq, 'timestamp': self.timestamp, 'segment_id': self.segment_id,
                'record_index': self.record_index, 'lpa': self.lpa}

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass(frozen=True)
class FetchedPage:
    lpa: int
    write_seq: int
    data: bytes


@dataclass(frozen=True)
class VaultStatus:
    last_segment_id: int
    last_seq: int
    tail_hash: bytes
    segments: int
    pages: int
    bytes_stored: int

    def to_dict(self):
        return {'last_segment_id': self.last_segment_id, 'last_seq': self.last_seq,
                'tail_hash': self.tail_hash.hex(), 'segments': self.segments,
                'pages': self.pages, 'bytes_stored': self.bytes_stored}

    @classmethod
    def from_dict(cls, data):
        return cls(**{**data, 'tail_hash': bytes.fromhex(data['tail_hash'])})


def _in_range(queryset, field, time_range):
    if time_range is None:
        return queryset
    start, end = time_range
    if start is not None:
        queryset = queryset.filter(**{f'{field}__gte': start})
    if end is not None:
        queryset = queryset.filter(**{f'{field}__lte': end})
    return queryset


class VaultStore:
    """Segment files under root plus their index rows.

    Ingest is serialized by a lock; queries only ever see segments whose
    index transaction committed.
    """

    def __init__(self, root, key, fault_hook=None, cache_size=32):
        self.root = Path(root).resolve()
        self.root.mkdir(parents=True, exist_ok=True)
        self.key = key
        self.fault_hook = fault_hook
        self.cache_size = cache_size
        self._ingest_lock = threading.Lock()
        self._cache_lock = threading.Lock()
        self._cache = OrderedDict()
        self.volume, created = VaultVolume.objects.get_or_create(root=str(self.root))
        if created:
            logger.info("new vault volume at %s", self.root)
        self.reconcile()

    def _fault(self, stage):
        if self.fault_hook is not None:
            self.fault_hook(stage)

    def _segments(self):
        return StoredSegment.objects.filter(volume=self.volume)

    def _last_segment(self):
        return self._segments().order_by('-segment_id').first()

    # Ingest

    def ingest(self, frame):
        with self._ingest_lock:
            try:
                segment, raw = decode_frame(frame, self.key)
            except AuthenticationFailed as exc:
                logger.warning("nack: %s", exc)
                return IngestReply.nack(NackReason.AUTH_FAILED)
            except FrameFormatError as exc:
                logger.warning("nack: malformed frame: %s", exc)
                return IngestReply.nack(NackReason.MALFORMED)

            reply = self._check(segment, raw)
            if reply is not None:
                if not reply.acked:
                    logger.warning("segment %d refused: %s", segment.segment_id, reply)
                return reply
            self._persist(segment, raw)
            logger.info("segment %d ingested (seq %d-%d, %d pages)", segment.segment_id,
                        segment.first_seq, segment.last_seq, len(segment.page_records))
            return IngestReply.ack(segment.segment_id)

    def _check(self, segment, raw):
        """Reason to refuse segment, an idempotent Ack for a resend, or None to accept it."""
        last = self._last_segment()
        last_id = last.segment_id if last else 0
        if segment.segment_id <= last_id:
            stored = self._segments().filter(segment_id=segment.segment_id).first()
            if stored is not None and stored.content_digest == segment_digest(raw):
                return IngestReply.ack(segment.segment_id)
            return IngestReply.nack(NackReason.SEGMENT_REUSED, segment.segment_id)
        if segment.segment_id != last_id + 1:
            return IngestReply.nack(NackReason.OUT_OF_ORDER, last_id + 1)
        if not segment.log_segments:
            return IngestReply.nack(NackReason.MALFORMED, segment.segment_id)

        tail = bytes(last.tail_hash) if last else GENESIS_HASH
        last_seq = last.last_seq if last else 0
        if segment.prev_tail_hash != tail:
            return IngestReply.nack(NackReason.CHAIN_MISMATCH, last_seq + 1)
        check = verify_chain(segment.entries, tail, first_seq=last_seq + 1)
        if not check:
            return IngestReply.nack(NackReason.CHAIN_MISMATCH, check.tamper_seq)
        prev = tail
        for logseg in segment.log_segments:
            if logseg.head_hash != prev or logseg.tail_hash != logseg.entries[-1].chain_hash:
                return IngestReply.nack(NackReason.CHAIN_MISMATCH, logseg.first_seq)
            prev = logseg.tail_hash

        writes = {e.seq: e for e in segment.entries if e.kind is LogKind.WRITE}
        stored_records = set(StoredPageRecord.objects.filter(
            volume=self.volume, write_seq__in=[r.write_seq for r in segment.page_records],
        ).values_list('write_seq', flat=True))
        newest = self._newest_versions({r.lpa for r in segment.page_records})
        for record in segment.page_records:
            if record.write_seq in stored_records:
                return IngestReply.nack(NackReason.MALFORMED, record.write_seq)
            # versions of one lpa arrive oldest first; across lpas only the log is totally ordered
            if record.write_seq <= newest.get(record.lpa, 0):
                return IngestReply.nack(NackReason.VERSION_ORDER, record.write_seq)
            if not self._matches_write(record, writes.get(record.write_seq)):
                return IngestReply.nack(NackReason.DIGEST_MISMATCH, record.write_seq)
        return None

    def _newest_versions(self, lpas):
        """Highest stored write_seq per lpa."""
        if not lpas:
            return {}
        return dict(StoredPageRecord.objects.filter(volume=self.volume, lpa__in=lpas)
                    .values('lpa').annotate(newest=Max('write_seq')).values_list('lpa', 'newest'))

    def _matches_write(self, record, entry):
        if entry is not None:
            return entry.lpa == record.lpa and entry.payload_digest == record.digest
        row = StoredLogEntry.objects.filter(
            volume=self.volume, seq=record.write_seq, kind=LogKind.WRITE).first()
        return row is not None and row.lpa_start == record.lpa and bytes(row.digest) == record.digest

    def _persist(self, segment, raw):
        name = segment_file_name(segment.segment_id)
        path = self.root / name
        tmp = self.root / (name + TMP_SUFFIX)
        with open(tmp, 'wb') as f:
            f.write(raw)
            f.flush()
            os.fsync(f.fileno())
        self._fault('tmp-written')
        os.replace(tmp, path)
        self._fsync_dir()
        self._fault('renamed')
        self._index(segment, raw, name)
        self._fault('indexed')

    def _fsync_dir(self):
        try:
            fd = os.open(self.root, os.O_RDONLY)
        except OSError:
            return
        try:
            os.fsync(fd)
        except OSError:
            pass
        finally:
            os.close(fd)

    @transaction.atomic
    def _index(self, segment, raw, file_name):
        stored = StoredSegment.objects.create(
            volume=self.volume,
            segment_id=segment.segment_id,
            file_name=file_name,
            content_digest=segment_digest(raw),
            prev_tail_hash=segment.prev_tail_hash,
            tail_hash=segment.tail_hash,
            first_seq=segment.first_seq,
            last_seq=segment.last_seq,
            page_count=len(segment.page_records),
            log_segment_count=len(segment.log_segments),
            size_bytes=len(raw),
        )
        StoredPageRecord.objects.bulk_create(
            StoredPageRecord(
                segment=stored,
                volume=self.volume,
                record_index=index,
                lpa=record.lpa,
                write_seq=record.write_seq,
                timestamp=record.timestamp,
                length=len(record.data),
                digest=record.digest,
            )
            for index, record in enumerate(segment.page_records)
        )
        rows = []
        for logseg in segment.log_segments:
            for entry in logseg.entries:
                start, length = entry.lpa_range or (None, None)
                rows.append(StoredLogEntry(
                    segment=stored,
                    volume=self.volume,
                    seq=entry.seq,
                    timestamp=entry.timestamp,
                    log_segment_id=logseg.segment_id,
                    kind=int(entry.kind),
                    lpa_start=start,
                    lpa_end=None if start is None else start + length,
                    digest=entry.payload_digest,
                    chain_hash=entry.chain_hash,
                ))
        StoredLogEntry.objects.bulk_create(rows, batch_size=500)
        return stored

    # Startup repair

    def reconcile(self):
        """Bring the index in line with the segment files. Returns the number of repairs."""
        repairs = 0
        for tmp in self.root.glob(f'*{SEGMENT_SUFFIX}{TMP_SUFFIX}'):
            tmp.unlink()
            logger.warning("removed unfinished segment file %s", tmp.name)
            repairs += 1

        on_disk = {}
        for path in self.root.glob(f'segment-*{SEGMENT_SUFFIX}'):
            try:
                on_disk[int(path.stem.split('-', 1)[1])] = path
            except ValueError:
                logger.warning("ignoring stray file %s", path.name)

        for stored in self._segments():
            if stored.segment_id not in on_disk:
                logger.warning("segment %d is indexed but its file is gone", stored.segment_id)
                stored.delete()
                repairs += 1

        last = self._last_segment()
        next_id = (last.segment_id if last else 0) + 1
        for segment_id in sorted(i for i in on_disk if i >= next_id):
            if segment_id != next_id:
                logger.warning("segment file %d does not extend the index; left unindexed", segment_id)
                break
            path = on_disk[segment_id]
            raw = path.read_bytes()
            try:
                segment = parse_segment(raw)
            except FrameFormatError as exc:
                logger.error("segment file %s is unreadable: %s", path.name, exc)
                break
            self._index(segment, raw, path.name)
            logger.warning("indexed segment %d found on disk", segment_id)
            repairs += 1
            next_id += 1
        return repairs

    # Queries

    def query_versions(self, lpa, time_range=None):
        rows = _in_range(
            StoredPageRecord.objects.filter(volume=self.volume, lpa=lpa), 'timestamp', time_range,
        ).select_related('segment').order_by('write_seq')
        return [VaultVersion(r.write_seq, r.timestamp, r.segment.segment_id, r.record_index, r.lpa)
                for r in rows]

    def query_log_history(self, lpa, time_range=None):
        """Write and Trim entries touching lpa, ascending by seq."""
        rows = _in_range(
            StoredLogEntry.objects.filter(
                volume=self.volume, kind__in=[LogKind.WRITE, LogKind.TRIM],
                lpa_start__lte=lpa, lpa_end__gt=lpa,
            ),
            'timestamp', time_range,
        ).order_by('seq')
        return [self._logged_op(r) for r in rows]

    @staticmethod
    def _logged_op(row):
        return detectors.LoggedOp(
            seq=row.seq,
            timestamp=row.timestamp,
            kind=LogKind(row.kind),
            lpa_start=row.lpa_start,
            lpa_end=row.lpa_end,
            digest=bytes(row.digest) if row.digest is not None else None,
        )

    def fetch_page(self, segment_id, record_index):
        stored = self._segments().filter(segment_id=segment_id).first()
        if stored is None:
            raise UnknownSegment(f"segment {segment_id} is not in the vault")
        if not 0 <= record_index < stored.page_count:
            raise BadIndex(f"segment {segment_id} has {stored.page_count} records, not {record_index + 1}")
        record = self._load(stored).page_records[record_index]
        return FetchedPage(record.lpa, record.write_seq, record.data)

    def fetch_log_entries(self, first_seq, last_seq):
        """Log entries in [first_seq, last_seq] read back from the segment files."""
        entries = []
        overlapping = self._segments().filter(
            first_seq__lte=last_seq, last_seq__gte=first_seq).order_by('segment_id')
        for stored in overlapping:
            segment = self._load(stored)
            entries.extend(e for e in segment.entries if first_seq <= e.seq <= last_seq)
        return entries

    def _load(self, stored):
        """Parse a segment file; any byte differing from what was ingested raises TamperDetected."""
        path = self.root / stored.file_name
        try:
            raw = path.read_bytes()
        except FileNotFoundError:
            raise TamperDetected(stored.first_seq, f"segment file {stored.file_name} is missing") from None
        if segment_digest(raw) == stored.content_digest:
            with self._cache_lock:
                cached = self._cache.get(stored.segment_id)
                if cached is not None:
                    self._cache.move_to_end(stored.segment_id)
                    return cached
        else:
            self._audit(stored, raw)
            raise TamperDetected(stored.first_seq, f"segment {stored.segment_id} content digest differs")
        try:
            segment = parse_segment(raw)
        except FrameFormatError as exc:
            raise TamperDetected(stored.first_seq, f"segment {stored.segment_id}: {exc}") from exc
        with self._cache_lock:
            self._cache[stored.segment_id] = segment
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return segment

    def _audit(self, stored, raw):
        """Raise TamperDetected at the seq owning the first byte that differs from the index."""
        records = list(StoredPageRecord.objects.filter(segment=stored).order_by('record_index'))
        rows = list(StoredLogEntry.objects.filter(segment=stored).order_by('seq'))
        pos = 0

        def take(size, seq):
            nonlocal pos
            chunk = raw[pos:pos + size]
            if len(chunk) != size:
                raise TamperDetected(seq, f"segment {stored.segment_id} is truncated")
            pos += size
            return chunk

        prev = bytes(stored.prev_tail_hash)
        header = HEADER.pack(SEGMENT_FORMAT_TAG, stored.segment_id, prev, len(records),
                             stored.log_segment_count)
        if take(HEADER.size, stored.first_seq) != header:
            raise TamperDetected(stored.first_seq, f"segment {stored.segment_id} header altered")
        for record in records:
            head = RECORD_HEADER.pack(record.write_seq, record.lpa, record.timestamp, record.length)
            if take(RECORD_HEADER.size, record.write_seq) != head:
                raise TamperDetected(record.write_seq, f"page record of seq {record.write_seq} altered")
            if page_digest(take(record.length, record.write_seq)) != bytes(record.digest):
                raise DigestMismatch(record.write_seq, f"page bytes of seq {record.write_seq} altered")
        for log_id, group in groupby(rows, key=attrgetter('log_segment_id')):
            group = list(group)
            head = LOGSEG_HEADER.pack(log_id, group[0].seq, group[-1].seq, prev,
                                      bytes(group[-1].chain_hash), len(group))
            if take(LOGSEG_HEADER.size, group[0].seq) != head:
                raise TamperDetected(group[0].seq, f"log segment {log_id} header altered")
            for row in group:
                entry = take(ENTRY_SIZE, row.seq)
                link = entry[BODY_SIZE:]
                if link != bytes(row.chain_hash) or chain_hash(prev, entry[:BODY_SIZE]) != link:
                    raise TamperDetected(row.seq, f"log entry {row.seq} altered")
                prev = link
        if pos != len(raw):
            raise TamperDetected(stored.last_seq, f"segment {stored.segment_id} has trailing bytes")

    def run_detector(self, name, seq_window=None, **params):
        hook = detectors.get_detector(name)
        first, last = seq_window or (1, self.last_seq)
        ops = [self._logged_op(r) for r in StoredLogEntry.objects.filter(
            volume=self.volume, kind__in=[LogKind.WRITE, LogKind.TRIM],
            seq__gte=first, seq__lte=last,
        ).order_by('seq')]
        previously_written = set(StoredLogEntry.objects.filter(
            volume=self.volume, kind=LogKind.WRITE, seq__lt=first,
        ).values_list('lpa_start', flat=True).distinct())
        report = hook(ops, previously_written, **params)
        logger.info("detector %s over seq %d-%d: suspicious=%s", name, first, last, report.suspicious)
        return detectors.DetectionReport(
            detector=report.detector,
            suspicious=report.suspicious,
            evidence=report.evidence,
            first_seq=first,
            last_seq=last,
            summary=report.summary,
        )

    @property
    def last_segment_id(self):
        last = self._last_segment()
        return last.segment_id if last else 0

    @property
    def last_seq(self):
        last = self._last_segment()
        return last.last_seq if last else 0

    @property
    def last_tail_hash(self):
        last = self._last_segment()
        return bytes(last.tail_hash) if last else GENESIS_HASH

    def status(self):
        segments = self._segments()
        totals = segments.aggregate(pages=Sum('page_count'), size=Sum('size_bytes'), last=Max('segment_id'))
        return VaultStatus(
            last_segment_id=totals['last'] or 0,
            last_seq=self.last_seq,
            tail_hash=self.last_tail_hash,
            segments=segments.count(),
            pages=totals['pages'] or 0,
            bytes_stored=totals['size'] or 0,
        )
