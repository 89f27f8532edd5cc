"""Pluggable detection hooks evaluated by the vault over shipped log entries.

The two built-ins are demonstrations of offloaded analysis, not tuned
ransomware classifiers. A hook receives the Write/Trim operations of a seq
window in seq order plus the set of lpas written before the window, and
must not touch vault state.
"""
import logging
from collections import deque
from dataclasses import asdict, dataclass

from django.conf import settings

from .exceptions import UnknownDetector
from .oplog import LogKind

logger = logging.getLogger(__name__)

_REGISTRY = {}


@dataclass(frozen=True)
class LoggedOp:
    seq: int
    timestamp: int
    kind: LogKind
    lpa_start: int
    lpa_end: int
    digest: bytes = None

    @property
    def lpas(self):
        return range(self.lpa_start, self.lpa_end)

    def to_dict(self):
        return {
            'seq': self.seq,
            'timestamp': self.timestamp,
            'kind': self.kind.name,
            'lpa_start': self.lpa_start,
            'lpa_end': self.lpa_end,
            'digest': self.digest.hex() if self.digest else None,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            seq=data['seq'],
            timestamp=data['timestamp'],
            kind=LogKind[data['kind']],
            lpa_start=data['lpa_start'],
            lpa_end=data['lpa_end'],
            digest=bytes.fromhex(data['digest']) if data.get('digest') else None,
        )


@dataclass(frozen=True)
class DetectionReport:
    detector: str
    suspicious: bool
    evidence: tuple
    first_seq: int = None
    last_seq: int = None
    summary: str = ''

    def to_dict(self):
        data = asdict(self)
        data['evidence'] = list(self.evidence)
        return data

    @classmethod
    def from_dict(cls, data):
        return cls(**{**data, 'evidence': tuple(data['evidence'])})


def detector(name):
    """Register a detection hook under name."""
    def register(fn):
        _REGISTRY[name] = fn
        return fn
    return register


def get_detector(name):
    try:
        return _REGISTRY[name]
    except KeyError:
        raise UnknownDetector(f"no detector named {name!r}") from None


def registered():
    return sorted(_REGISTRY)


def _window_ns():
    return int(getattr(settings, 'RSSD_DETECTOR_WINDOW_S', 10) * 1_000_000_000)


@detector('overwrite-burst')
def overwrite_burst(ops, previously_written, threshold=None, window_ns=None):
    """Destructive updates to many distinct lpas within a short time window.

    An overwrite of an lpa that already holds data and a trim of such an lpa
    both count as destroying it.
    """
    threshold = threshold or getattr(settings, 'RSSD_DETECTOR_BURST_THRESHOLD', 32)
    window_ns = window_ns or _window_ns()
    written = set(previously_written)
    recent = deque()
    evidence = set()
    peak = 0
    for op in ops:
        destroyed = [lpa for lpa in op.lpas if lpa in written]
        if op.kind is LogKind.WRITE:
            written.add(op.lpa_start)
        else:
            written.difference_update(op.lpas)
        if not destroyed:
            continue
        recent.extend((op.timestamp, op.seq, lpa) for lpa in destroyed)
        while recent and recent[0][0] < op.timestamp - window_ns:
            recent.popleft()
        distinct = len({lpa for _, _, lpa in recent})
        peak = max(peak, distinct)
        if distinct >= threshold:
            evidence.update(seq for _, seq, _ in recent)
    return DetectionReport(
        detector='overwrite-burst',
        suspicious=bool(evidence),
        evidence=tuple(sorted(evidence)),
        summary=f"peak of {peak} distinct lpas destroyed within {window_ns // 1_000_000_000}s",
    )


@detector('trim-after-overwrite')
def trim_after_overwrite(ops, previously_written, threshold=None, window_ns=None):
    """Trims that shortly follow a rewrite of the same lpa or a write to a fresh lpa.

    The first pattern is encrypt-in-place then discard; the second is
    encrypt-to-copy then discard the original.
    """
    threshold = threshold or getattr(settings, 'RSSD_DETECTOR_TRIM_THRESHOLD', 8)
    window_ns = window_ns or _window_ns()
    written = set(previously_written)
    last_overwrite = {}
    fresh_writes = deque()
    flagged = deque()
    evidence = set()
    total = 0
    for op in ops:
        if op.kind is LogKind.WRITE:
            lpa = op.lpa_start
            if lpa in written:
                last_overwrite[lpa] = op.timestamp
            else:
                fresh_writes.append(op.timestamp)
            written.add(lpa)
            continue
        while fresh_writes and fresh_writes[0] < op.timestamp - window_ns:
            fresh_writes.popleft()
        rewritten = any(op.timestamp - last_overwrite.get(lpa, -window_ns - 1) <= window_ns
                        for lpa in op.lpas)
        if rewritten or (fresh_writes and any(lpa in written for lpa in op.lpas)):
            total += 1
            flagged.append((op.timestamp, op.seq))
            while flagged[0][0] < op.timestamp - window_ns:
                flagged.popleft()
            if len(flagged) >= threshold:
                evidence.update(seq for _, seq in flagged)
        written.difference_update(op.lpas)
    return DetectionReport(
        detector='trim-after-overwrite',
        suspicious=bool(evidence),
        evidence=tuple(sorted(evidence)),
        summary=f"{total} trims followed a rewrite or a fresh write",
    )
