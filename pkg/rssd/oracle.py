"""Brute-force full-history store used as ground truth for recovery checks."""
from collections import defaultdict
from dataclasses import dataclass

from .ftl import UNMAPPED


@dataclass(frozen=True)
class OracleEvent:
    seq: int
    timestamp: int
    kind: str
    data: bytes = None


class ShadowOracle:
    """Every version of every lpa the harness ever got the device to accept, append-only."""

    def __init__(self):
        self._history = defaultdict(list)

    def record_write(self, lpa, seq, timestamp, data):
        self._history[lpa].append(OracleEvent(seq, timestamp, 'W', bytes(data)))

    def record_trim(self, start, length, seq, timestamp):
        for lpa in range(start, start + length):
            self._history[lpa].append(OracleEvent(seq, timestamp, 'T'))

    def history(self, lpa):
        return list(self._history.get(lpa, ()))

    def current(self, lpa):
        events = self._history.get(lpa)
        if not events or events[-1].kind == 'T':
            return UNMAPPED
        return events[-1].data

    def as_of(self, lpa, timestamp):
        value = UNMAPPED
        for event in self._history.get(lpa, ()):
            if event.timestamp > timestamp:
                break
            value = event.data if event.kind == 'W' else UNMAPPED
        return value

    def snapshot(self, timestamp, lpas=None):
        lpas = self._history.keys() if lpas is None else lpas
        return {lpa: self.as_of(lpa, timestamp) for lpa in lpas}

    def written_lpas(self):
        return sorted(lpa for lpa, events in self._history.items() if any(e.kind == 'W' for e in events))

    def mapped_lpas(self):
        return sorted(lpa for lpa in self._history if self.current(lpa) is not UNMAPPED)

    def event_times(self):
        return sorted({e.timestamp for events in self._history.values() for e in events})


class SampledOracle(ShadowOracle):
    """Full history for a fixed set of lpas only; long runs cannot keep every byte ever written."""

    def __init__(self, lpas):
        super().__init__()
        self.lpas = frozenset(lpas)

    def record_write(self, lpa, seq, timestamp, data):
        if lpa in self.lpas:
            super().record_write(lpa, seq, timestamp, data)

    def record_trim(self, start, length, seq, timestamp):
        for lpa in range(start, start + length):
            if lpa in self.lpas:
                super().record_trim(lpa, 1, seq, timestamp)
