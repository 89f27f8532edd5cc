"""Point-in-time restore, per-address backtracking and evidence-chain reconstruction.

Everything here reads device and vault state and never changes either. Each
operation fixes a sequence boundary first and ignores anything journaled
after it, so it can run alongside host I/O.
"""
import logging
from dataclasses import dataclass

from .exceptions import DigestMismatch, OutOfRange, TamperDetected
from .ftl import UNMAPPED, page_digest
from .oplog import GENESIS_HASH, ChainCheck, LogKind, verify_chain

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LocalPage:
    ppa: object

    def __str__(self):
        return f"local {self.ppa}"


@dataclass(frozen=True)
class Remote:
    segment_id: int
    record_index: int

    def __str__(self):
        return f"vault {self.segment_id}/{self.record_index}"


class _Marker:
    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return self.name

    __str__ = __repr__

    def __reduce__(self):
        return (_marker, (self.name,))


_MARKERS = {}


def _marker(name):
    return _MARKERS.setdefault(name, _Marker(name))


TRIM_MARKER = _marker('trim')
# a version whose bytes exist nowhere any more; only a conventional FTL produces these
LOST = _marker('LOST')
# stored bytes the vault refuses to hand out as ingested
UNREADABLE = _marker('unreadable')


@dataclass(frozen=True)
class VersionEntry:
    write_seq: int
    timestamp: int
    kind: LogKind
    location: object
    digest: bytes = None


@dataclass(frozen=True)
class VersionChain:
    lpa: int
    entries: tuple

    def __len__(self):
        return len(self.entries)

    def as_of(self, timestamp):
        """Newest entry with timestamp <= as_of; seq breaks timestamp ties."""
        current = None
        for entry in self.entries:
            if entry.timestamp > timestamp:
                break
            current = entry
        return current

    def at_seq(self, seq):
        current = None
        for entry in self.entries:
            if entry.write_seq > seq:
                break
            current = entry
        return current


@dataclass(frozen=True)
class EvidenceAnnotation:
    seq: int
    kind: LogKind
    lpa: int
    length: int
    digest: bytes
    phase: str = None


@dataclass(frozen=True)
class EvidenceChain:
    first_seq: int
    last_seq: int
    entries: tuple
    status: ChainCheck
    replay_ok: bool
    annotations: tuple

    @property
    def verified(self):
        return self.status.ok

    def host_ops(self):
        return [a for a in self.annotations if a.kind in (LogKind.WRITE, LogKind.TRIM)]


@dataclass(frozen=True)
class OrderAgreement:
    expected: int
    matched: int
    first_divergence: int = None

    @property
    def ok(self):
        return self.first_divergence is None

    @property
    def fraction(self):
        return 1.0 if not self.expected else self.matched / self.expected


class RecoveryEngine:

    def __init__(self, device, link=None):
        self.ftl = device.ftl
        self.log = device.log
        self.link = link

    def _boundary(self):
        with self.ftl.lock:
            return self.log.last_seq

    # Backtracking

    def backtrack(self, lpa, max_seq=None):
        """Full Write/Trim history of lpa up to max_seq, with where each version lives."""
        if not 0 <= lpa < self.ftl.logical_pages:
            raise OutOfRange(f"lpa {lpa} outside 0..{self.ftl.logical_pages - 1}")
        max_seq = self._boundary() if max_seq is None else max_seq
        events = {}
        locations = {}
        with self.ftl.lock:
            for entry in self.log.local_history(lpa):
                events[entry.seq] = (entry.timestamp, entry.kind, entry.payload_digest)
            head = self.ftl.version_head(lpa)
            while head is not None:
                ppa, seq = head
                meta = self.ftl.local_version(ppa, seq)
                if meta is None:
                    break
                locations[seq] = LocalPage(ppa)
                events.setdefault(seq, (meta.timestamp, LogKind.WRITE, meta.payload_digest))
                head = (meta.prev_version, meta.prev_seq) if meta.prev_version is not None else None
        if self.link is not None:
            for op in self.link.query_log_history(lpa):
                events.setdefault(op.seq, (op.timestamp, op.kind, op.digest))
            for version in self.link.query_versions(lpa):
                locations.setdefault(version.write_seq, Remote(version.segment_id, version.record_index))

        entries = []
        for seq in sorted(s for s in events if s <= max_seq):
            timestamp, kind, digest = events[seq]
            if kind is LogKind.TRIM:
                location = TRIM_MARKER
            else:
                location = locations.get(seq, LOST)
            entries.append(VersionEntry(seq, timestamp, kind, location, digest))
        return VersionChain(lpa, tuple(entries))

    # Restore

    def restore(self, lpas, as_of):
        """Content of every lpa in lpas as of a simulated timestamp: bytes, UNMAPPED or LOST."""
        boundary = self._boundary()
        return {lpa: self._content(lpa, self.backtrack(lpa, boundary).as_of(as_of)) for lpa in lpas}

    def restore_at_seq(self, lpas, seq):
        return {lpa: self._content(lpa, self.backtrack(lpa, seq).at_seq(seq)) for lpa in lpas}

    def _content(self, lpa, entry):
        data = self._load(lpa, entry)
        if data is UNMAPPED or data is LOST:
            return data
        if entry.digest is not None and page_digest(data) != entry.digest:
            raise DigestMismatch(entry.write_seq, f"restored bytes of seq {entry.write_seq} do not match the log")
        return data

    def _load(self, lpa, entry):
        """Stored bytes of entry, unchecked: bytes, UNMAPPED or LOST."""
        if entry is None or entry.kind is LogKind.TRIM:
            return UNMAPPED
        data = None
        if isinstance(entry.location, LocalPage):
            data = self.ftl.read_version(entry.location.ppa, entry.write_seq)
        if data is None:
            data = self._fetch_remote(lpa, entry)
        return data

    def _fetch_remote(self, lpa, entry):
        location = entry.location
        if isinstance(location, LocalPage) and self.link is not None:
            # the local copy was erased after it reached the vault
            location = next((Remote(v.segment_id, v.record_index) for v in self.link.query_versions(lpa)
                             if v.write_seq == entry.write_seq), LOST)
        if not isinstance(location, Remote):
            return LOST
        return self.link.fetch_page(location.segment_id, location.record_index).data

    # Evidence chains

    def build_evidence_chain(self, seq_window, ground_truth=None, strict=True):
        """Entries of the window in seq order, hash-verified end to end and replay-checked."""
        first, last = seq_window
        boundary = self._boundary()
        if not 1 <= first <= last <= boundary:
            raise OutOfRange(f"window {first}-{last} outside 1-{boundary}")
        lower = max(first - 1, 1)
        with self.ftl.lock:
            local = {e.seq: e for e in self.log.local_entries(lower, last)}
            oldest_local = self.log.oldest_local_seq
        merged = {}
        try:
            if self.link is not None and (oldest_local is None or lower < oldest_local):
                upper = last if oldest_local is None else min(last, oldest_local - 1)
                merged.update((e.seq, e) for e in self.link.fetch_log_entries(lower, upper))
        except TamperDetected as exc:
            if strict:
                logger.error("vault segment damaged at seq %s", exc.seq)
                raise
            return self._failed_chain(first, last, exc.seq)
        merged.update(local)

        if first == 1:
            anchor = GENESIS_HASH
        elif first - 1 in merged:
            anchor = merged[first - 1].chain_hash
        else:
            return self._settle(self._failed_chain(first, last, first - 1), strict)
        entries = [merged[s] for s in sorted(merged) if first <= s <= last]
        status = verify_chain(entries, anchor, first_seq=first)
        if status.ok and (not entries or entries[-1].seq != last):
            status = ChainCheck(entries[-1].seq + 1 if entries else first)
        if not status.ok:
            return self._settle(EvidenceChain(first, last, tuple(entries), status, False, ()), strict)

        phases = {}
        for op in ground_truth or ():
            if op.seq is not None:
                phases[op.seq] = op.phase
        annotations = tuple(EvidenceAnnotation(
            seq=e.seq,
            kind=e.kind,
            lpa=e.lpa,
            length=e.lpa_range[1] if e.lpa_range else 0,
            digest=e.payload_digest,
            phase=phases.get(e.seq),
        ) for e in entries)
        return EvidenceChain(first, last, tuple(entries), status, self._replay_check(first, last, entries),
                             annotations)

    @staticmethod
    def _failed_chain(first, last, seq):
        return EvidenceChain(first, last, (), ChainCheck(seq), False, ())

    @staticmethod
    def _settle(chain, strict):
        if strict and not chain.verified:
            logger.error("evidence chain broken at seq %d", chain.status.tamper_seq)
            raise TamperDetected(chain.status.tamper_seq)
        return chain

    def _replay_check(self, first, last, entries):
        """Replaying the window's writes and trims on the start state must give the end state.

        Both states are hashed from the bytes actually stored, never taken
        from the log, so a page whose content drifted from its journaled
        digest fails the replay. At the device's newest seq the end state is
        read through the live mapping instead of the version chains.
        """
        touched = set()
        for entry in entries:
            if entry.kind in (LogKind.WRITE, LogKind.TRIM):
                start, length = entry.lpa_range
                touched.update(range(start, start + length))
        replayed = self._stored_state(touched, first - 1)
        for entry in entries:
            if entry.kind is LogKind.WRITE:
                replayed[entry.lpa] = entry.payload_digest
            elif entry.kind is LogKind.TRIM:
                start, length = entry.lpa_range
                for lpa in range(start, start + length):
                    replayed[lpa] = None
        if last == self._boundary():
            with self.ftl.lock:
                actual = {lpa: _digest_of(self.ftl.peek(lpa)) for lpa in touched}
        else:
            actual = self._stored_state(touched, last)
        if replayed != actual:
            bad = sorted(lpa for lpa in touched if replayed[lpa] != actual[lpa])
            logger.warning("replay of seq %d-%d disagrees on lpas %s", first, last, bad[:10])
            return False
        return True

    def _stored_state(self, lpas, seq):
        state = {}
        for lpa in lpas:
            try:
                state[lpa] = _digest_of(self._load(lpa, self.backtrack(lpa, seq).at_seq(seq)))
            except TamperDetected as exc:
                logger.warning("version of lpa %d at seq %d is unreadable: %s", lpa, seq, exc)
                state[lpa] = UNREADABLE
        return state


def _digest_of(data):
    if data is UNMAPPED:
        return None
    if data is LOST:
        return LOST
    return page_digest(data)


def compare_order(chain, ground_truth):
    """How far the chain's host operations agree with the issued schedule, position by position."""
    expected = [op for op in ground_truth
                if op.seq is not None and op.op in ('W', 'T') and chain.first_seq <= op.seq <= chain.last_seq]
    actual = chain.host_ops()
    matched = 0
    divergence = None
    for index in range(max(len(expected), len(actual))):
        want = expected[index] if index < len(expected) else None
        got = actual[index] if index < len(actual) else None
        same = (want is not None and got is not None and want.seq == got.seq and want.lpa == got.lpa
                and want.length == got.length
                and (got.kind is LogKind.WRITE) == (want.op == 'W'))
        if same:
            matched += 1
        elif divergence is None:
            divergence = index
    return OrderAgreement(expected=len(expected), matched=matched, first_divergence=divergence)
