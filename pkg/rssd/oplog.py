"""Hash-chained, append-only journal of storage operations.

Every entry is serialized canonically (fixed-width big-endian fields behind
a one-byte format tag) and chained as

    chain_hash = SHA-256(previous chain_hash || canonical body)

starting from 32 zero bytes. Sealed segments are the unit that is shipped
to the vault and verified there.
"""
import enum
import hashlib
import logging
import struct
from collections import defaultdict
from dataclasses import dataclass, replace

from .exceptions import NothingToSeal
from .nand import PhysPageAddr

logger = logging.getLogger(__name__)

GENESIS_HASH = bytes(32)
ENTRY_FORMAT_TAG = 0x01

_BODY = struct.Struct('>BQQBBQQBIIIIB32s')
BODY_SIZE = _BODY.size
ENTRY_SIZE = BODY_SIZE + 32

DEFAULT_SEAL_ENTRIES = 1024
DEFAULT_SEAL_AGE_NS = 5 * 60 * 1_000_000_000


class LogKind(enum.IntEnum):
    WRITE = 1
    TRIM = 2
    GC_MOVE = 3
    OFFLOAD_SEALED = 4
    OFFLOAD_ACKED = 5
    READ = 6


@dataclass(frozen=True)
class LogEntry:
    seq: int
    timestamp: int
    kind: LogKind
    lpa_range: tuple = None
    ppa: PhysPageAddr = None
    payload_digest: bytes = None
    chain_hash: bytes = GENESIS_HASH

    def body(self):
        start, length = self.lpa_range or (0, 0)
        ppa = self.ppa or PhysPageAddr(0, 0, 0, 0)
        return _BODY.pack(
            ENTRY_FORMAT_TAG,
            self.seq,
            self.timestamp,
            int(self.kind),
            1 if self.lpa_range is not None else 0,
            start,
            length,
            1 if self.ppa is not None else 0,
            ppa.channel, ppa.chip, ppa.block, ppa.page,
            1 if self.payload_digest is not None else 0,
            self.payload_digest or bytes(32),
        )

    def to_bytes(self):
        return self.body() + self.chain_hash

    @classmethod
    def from_bytes(cls, raw):
        if len(raw) != ENTRY_SIZE:
            raise ValueError(f"log entry must be {ENTRY_SIZE} bytes, got {len(raw)}")
        (tag, seq, timestamp, kind, has_range, start, length, has_ppa,
         channel, chip, block, page, has_digest, digest) = _BODY.unpack(raw[:BODY_SIZE])
        if tag != ENTRY_FORMAT_TAG:
            raise ValueError(f"unknown log entry format tag {tag}")
        return cls(
            seq=seq,
            timestamp=timestamp,
            kind=LogKind(kind),
            lpa_range=(start, length) if has_range else None,
            ppa=PhysPageAddr(channel, chip, block, page) if has_ppa else None,
            payload_digest=digest if has_digest else None,
            chain_hash=raw[BODY_SIZE:],
        )

    def touches(self, lpa):
        if self.lpa_range is None:
            return False
        start, length = self.lpa_range
        return start <= lpa < start + length

    @property
    def lpa(self):
        return self.lpa_range[0] if self.lpa_range else None


def chain_hash(prev_hash, body):
    return hashlib.sha256(prev_hash + body).digest()


@dataclass(frozen=True)
class LogSegment:
    segment_id: int
    first_seq: int
    last_seq: int
    entries: tuple
    head_hash: bytes
    tail_hash: bytes
    sealed: bool = True


@dataclass(frozen=True)
class ChainCheck:
    tamper_seq: int = None

    @property
    def ok(self):
        return self.tamper_seq is None

    def __bool__(self):
        return self.ok


def verify_chain(entries, expected_head_hash, first_seq=None):
    """Recompute every chain hash; report the first sequence number that diverges.

    Entries must be contiguous in seq starting at first_seq (defaults to the
    first entry's own seq). A deleted, inserted or reordered entry shows up as
    a seq discontinuity at the position where the expected seq is missing.
    """
    entries = list(entries)
    if not entries:
        return ChainCheck()
    expected_seq = entries[0].seq if first_seq is None else first_seq
    prev = expected_head_hash
    for entry in entries:
        if entry.seq != expected_seq:
            return ChainCheck(expected_seq)
        if chain_hash(prev, entry.body()) != entry.chain_hash:
            return ChainCheck(expected_seq)
        prev = entry.chain_hash
        expected_seq += 1
    return ChainCheck()


def verify_segment(segment, expected_head_hash=None):
    head = segment.head_hash if expected_head_hash is None else expected_head_hash
    check = verify_chain(segment.entries, head, segment.first_seq)
    if check.ok and segment.entries and segment.entries[-1].chain_hash != segment.tail_hash:
        return ChainCheck(segment.last_seq)
    return check


class OperationLog:
    """The device's journal. Appends happen under the FTL's command lock."""

    enabled = True

    def __init__(self, seal_max_entries=DEFAULT_SEAL_ENTRIES, seal_max_age_ns=DEFAULT_SEAL_AGE_NS):
        self.seal_max_entries = seal_max_entries
        self.seal_max_age_ns = seal_max_age_ns
        self._next_seq = 1
        self._tail_hash = GENESIS_HASH
        self._open = []
        self._open_head_hash = GENESIS_HASH
        self._next_segment_id = 1
        self._sealed = []
        # seq -> entry and lpa -> [seq] for every entry still held on the device
        self._by_seq = {}
        self._by_lpa = defaultdict(list)

    @property
    def last_seq(self):
        return self._next_seq - 1

    @property
    def tail_hash(self):
        return self._tail_hash

    def append(self, kind, lpa_range, ppa, payload_digest, timestamp):
        entry = LogEntry(
            seq=self._next_seq,
            timestamp=timestamp,
            kind=LogKind(kind),
            lpa_range=lpa_range,
            ppa=ppa,
            payload_digest=payload_digest,
        )
        entry = replace(entry, chain_hash=chain_hash(self._tail_hash, entry.body()))
        self._next_seq += 1
        self._tail_hash = entry.chain_hash
        self._open.append(entry)
        self._index(entry)
        if (len(self._open) >= self.seal_max_entries
                or timestamp - self._open[0].timestamp >= self.seal_max_age_ns):
            self.seal_segment()
        return entry

    def _index(self, entry):
        self._by_seq[entry.seq] = entry
        if entry.kind in (LogKind.WRITE, LogKind.TRIM) and entry.lpa_range:
            start, length = entry.lpa_range
            for lpa in range(start, start + length):
                self._by_lpa[lpa].append(entry.seq)

    def seal_segment(self):
        if not self._open:
            raise NothingToSeal("no unsealed log entries")
        segment = LogSegment(
            segment_id=self._next_segment_id,
            first_seq=self._open[0].seq,
            last_seq=self._open[-1].seq,
            entries=tuple(self._open),
            head_hash=self._open_head_hash,
            tail_hash=self._open[-1].chain_hash,
        )
        self._next_segment_id += 1
        self._sealed.append(segment)
        self._open = []
        self._open_head_hash = segment.tail_hash
        logger.debug("sealed log segment %d (seq %d-%d)",
                     segment.segment_id, segment.first_seq, segment.last_seq)
        return segment

    def unshipped_segments(self):
        return list(self._sealed)

    def has_unshipped(self):
        return bool(self._sealed)

    def unsealed_entries(self):
        return tuple(self._open)

    def mark_shipped(self, through_segment_id):
        """Drop sealed segments up to through_segment_id; the vault holds them now."""
        keep = []
        for segment in self._sealed:
            if segment.segment_id > through_segment_id:
                keep.append(segment)
                continue
            for entry in segment.entries:
                self._forget(entry)
        self._sealed = keep

    def _forget(self, entry):
        self._by_seq.pop(entry.seq, None)
        if entry.kind in (LogKind.WRITE, LogKind.TRIM) and entry.lpa_range:
            start, length = entry.lpa_range
            for lpa in range(start, start + length):
                seqs = self._by_lpa.get(lpa)
                if seqs:
                    seqs.remove(entry.seq)
                    if not seqs:
                        del self._by_lpa[lpa]

    def local_entries(self, first_seq=1, last_seq=None):
        """Entries still held on the device within [first_seq, last_seq], in seq order."""
        last_seq = self.last_seq if last_seq is None else last_seq
        return [entry for seq, entry in self._by_seq.items() if first_seq <= seq <= last_seq]

    def local_history(self, lpa):
        """Write and Trim entries touching lpa that have not been shipped yet."""
        return [self._by_seq[s] for s in self._by_lpa.get(lpa, ())]

    def local_entry(self, seq):
        return self._by_seq.get(seq)

    @property
    def oldest_local_seq(self):
        return min(self._by_seq, default=None)


class SequenceOnlyLog(OperationLog):
    """Hands out sequence numbers without hashing or keeping entries.

    Used for the logging-off side of the overhead comparison.
    """

    enabled = False

    def append(self, kind, lpa_range, ppa, payload_digest, timestamp):
        entry = LogEntry(self._next_seq, timestamp, LogKind(kind), lpa_range, ppa, payload_digest)
        self._next_seq += 1
        return entry

    def seal_segment(self):
        raise NothingToSeal("logging is disabled")
