"""Canonical serialization of offload segments.

    header   tag u8 | segment_id u64 | prev_tail_hash 32B | n_pages u32 | n_logsegs u32
    record   write_seq u64 | lpa u64 | timestamp u64 | length u32 | bytes
    logseg   segment_id u64 | first_seq u64 | last_seq u64 | head_hash 32B | tail_hash 32B
             | n_entries u32 | entries (oplog.ENTRY_SIZE each)

All integers big-endian. The vault stores segments in exactly this form.
"""
import hashlib
import struct
from dataclasses import dataclass

from .exceptions import FrameFormatError
from .oplog import ENTRY_SIZE, LogEntry, LogSegment

SEGMENT_FORMAT_TAG = 0x01

HEADER = struct.Struct('>BQ32sII')
RECORD_HEADER = struct.Struct('>QQQI')
LOGSEG_HEADER = struct.Struct('>QQQ32s32sI')


@dataclass(frozen=True)
class PageRecord:
    write_seq: int
    lpa: int
    timestamp: int
    data: bytes

    @property
    def digest(self):
        return hashlib.sha256(self.data).digest()


@dataclass(frozen=True)
class OffloadSegment:
    segment_id: int
    page_records: tuple
    log_segments: tuple
    prev_tail_hash: bytes

    @property
    def entries(self):
        return [entry for logseg in self.log_segments for entry in logseg.entries]

    @property
    def first_seq(self):
        return self.log_segments[0].first_seq if self.log_segments else None

    @property
    def last_seq(self):
        return self.log_segments[-1].last_seq if self.log_segments else None

    @property
    def tail_hash(self):
        return self.log_segments[-1].tail_hash if self.log_segments else self.prev_tail_hash


def serialize_segment(segment):
    parts = [HEADER.pack(SEGMENT_FORMAT_TAG, segment.segment_id, segment.prev_tail_hash,
                         len(segment.page_records), len(segment.log_segments))]
    for record in segment.page_records:
        parts.append(RECORD_HEADER.pack(record.write_seq, record.lpa, record.timestamp, len(record.data)))
        parts.append(record.data)
    for logseg in segment.log_segments:
        parts.append(LOGSEG_HEADER.pack(logseg.segment_id, logseg.first_seq, logseg.last_seq,
                                        logseg.head_hash, logseg.tail_hash, len(logseg.entries)))
        parts.extend(entry.to_bytes() for entry in logseg.entries)
    return b''.join(parts)


def segment_digest(raw):
    return hashlib.sha256(raw).hexdigest()


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, size):
        if self.pos + size > len(self.raw):
            raise FrameFormatError("segment truncated")
        chunk = self.raw[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt):
        return fmt.unpack(self.take(fmt.size))


def parse_segment(raw):
    reader = _Reader(bytes(raw))
    tag, segment_id, prev_tail_hash, n_pages, n_logsegs = reader.unpack(HEADER)
    if tag != SEGMENT_FORMAT_TAG:
        raise FrameFormatError(f"unknown segment format tag {tag}")
    records = []
    for _ in range(n_pages):
        write_seq, lpa, timestamp, length = reader.unpack(RECORD_HEADER)
        records.append(PageRecord(write_seq, lpa, timestamp, reader.take(length)))
    logsegs = []
    for _ in range(n_logsegs):
        log_id, first_seq, last_seq, head_hash, tail_hash, count = reader.unpack(LOGSEG_HEADER)
        try:
            entries = tuple(LogEntry.from_bytes(reader.take(ENTRY_SIZE)) for _ in range(count))
        except ValueError as exc:
            raise FrameFormatError(str(exc)) from exc
        logsegs.append(LogSegment(log_id, first_seq, last_seq, entries, head_hash, tail_hash))
    if reader.pos != len(reader.raw):
        raise FrameFormatError("trailing bytes after segment")
    return OffloadSegment(segment_id, tuple(records), tuple(logsegs), prev_tail_hash)


def check_well_formed(segment):
    """Raise FrameFormatError unless records ascend by write_seq and log segments are contiguous."""
    seqs = [r.write_seq for r in segment.page_records]
    if any(a >= b for a, b in zip(seqs, seqs[1:])):
        raise FrameFormatError("page records are not strictly ascending by write_seq")
    previous = None
    for logseg in segment.log_segments:
        if not logseg.entries or logseg.entries[0].seq != logseg.first_seq \
                or logseg.entries[-1].seq != logseg.last_seq:
            raise FrameFormatError(f"log segment {logseg.segment_id} bounds do not match its entries")
        if previous is not None and logseg.first_seq != previous.last_seq + 1:
            raise FrameFormatError("log segments are not contiguous")
        previous = logseg
