"""Host-side workload engine: benign replay, the three attack models and oracle checks.

The harness drives the device only through its HostPort. It never sees the
journal, the offload engine or the device key.
"""
import logging
import random
import time
from dataclasses import dataclass, field

from .exceptions import CapacityExhausted
from .ftl import UNMAPPED
from .oracle import ShadowOracle
from .traces import TraceOp, payload_for

logger = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000

ATTACKS = ('gc', 'timing', 'trimming')


@dataclass(frozen=True)
class GroundTruthOp:
    seq: int
    timestamp: int
    op: str
    lpa: int
    length: int
    phase: str
    outcome: str = 'ok'


@dataclass
class RunReport:
    ops: int = 0
    writes: int = 0
    trims: int = 0
    reads: int = 0
    refused: int = 0
    read_mismatches: int = 0
    first_seq: int = None
    last_seq: int = None
    start_ns: int = 0
    end_ns: int = 0
    wall_seconds: float = 0.0

    @property
    def ops_per_second(self):
        return self.ops / self.wall_seconds if self.wall_seconds else 0.0


@dataclass
class AttackRun:
    kind: str
    seed: int
    params: dict
    victims: tuple
    pre_attack_ns: int
    report: RunReport
    ground_truth: list = field(default_factory=list)

    @property
    def capacity_exhausted(self):
        return self.report.refused


class HostSession:
    """The single issuing stream. Ground truth and oracle only record what the device accepted."""

    def __init__(self, host, oracle=None, start_ns=0, keep_ground_truth=True):
        self.host = host
        self.oracle = oracle if oracle is not None else ShadowOracle()
        self.keep_ground_truth = keep_ground_truth
        self.now = start_ns
        self.ground_truth = []
        self._report = None
        self._started = 0.0

    def _clock(self, timestamp):
        self.now = max(self.now, timestamp)
        return self.now

    def advance(self, timestamp):
        """Let time pass with nothing issued."""
        return self._clock(timestamp)

    def begin(self):
        self._report = RunReport(start_ns=self.now)
        self._started = time.perf_counter()
        return self._report

    def end(self):
        report = self._report
        report.end_ns = self.now
        report.wall_seconds = time.perf_counter() - self._started
        self._report = None
        return report

    def exclude(self, seconds):
        """Leave time spent on checks out of the throughput figure."""
        self._started += seconds

    def _record(self, op):
        if self.keep_ground_truth:
            self.ground_truth.append(op)

    def _account(self, attr, seq=None):
        report = self._report
        if report is None:
            return
        report.ops += 1
        setattr(report, attr, getattr(report, attr) + 1)
        if seq is not None:
            report.first_seq = seq if report.first_seq is None else report.first_seq
            report.last_seq = seq

    def write(self, lpa, data, timestamp, phase='benign'):
        timestamp = self._clock(timestamp)
        try:
            seq = self.host.write(lpa, data, timestamp)
        except CapacityExhausted:
            self._record(GroundTruthOp(None, timestamp, 'W', lpa, 1, phase, 'capacity-exhausted'))
            self._account('refused')
            return None
        self.oracle.record_write(lpa, seq, timestamp, data)
        self._record(GroundTruthOp(seq, timestamp, 'W', lpa, 1, phase))
        self._account('writes', seq)
        return seq

    def trim(self, start, length, timestamp, phase='benign'):
        timestamp = self._clock(timestamp)
        seq = self.host.trim(start, length, timestamp)
        self.oracle.record_trim(start, length, seq, timestamp)
        self._record(GroundTruthOp(seq, timestamp, 'T', start, length, phase))
        self._account('trims', seq)
        return seq

    def read(self, lpa, timestamp, phase='benign'):
        self._clock(timestamp)
        data = self.host.read(lpa)
        self._record(GroundTruthOp(None, self.now, 'R', lpa, 1, phase))
        self._account('reads')
        if self._report is not None and data != self.oracle.current(lpa):
            self._report.read_mismatches += 1
        return data

    def issue(self, op, phase='benign', timestamp=None):
        """Issue one TraceOp; a multi-page write becomes one write per page."""
        timestamp = op.timestamp_ns if timestamp is None else timestamp
        if op.op == 'W':
            for i in range(op.length):
                self.write(op.lpa + i, payload_for(op.payload_seed + i, self.host.page_size), timestamp, phase)
        elif op.op == 'T':
            self.trim(op.lpa, op.length, timestamp, phase)
        else:
            for i in range(op.length):
                self.read(op.lpa + i, timestamp, phase)


def replay_trace(session, trace, speed_factor=1.0, observer=None, observe_every=0):
    """Issue trace in order at scaled virtual time starting from the session clock.

    observer(index) is called every observe_every operations.
    """
    session.begin()
    if trace:
        base, origin = session.now, trace[0].timestamp_ns
        for index, op in enumerate(trace, start=1):
            offset = int((op.timestamp_ns - origin) / speed_factor)
            session.issue(op, timestamp=base + offset)
            if observer is not None and observe_every and index % observe_every == 0:
                paused = time.perf_counter()
                observer(index)
                session.exclude(time.perf_counter() - paused)
    return session.end()


def choose_victims(oracle, fraction=0.25, seed=0):
    """A seeded uniform sample of the lpas currently holding data."""
    mapped = oracle.mapped_lpas()
    count = int(len(mapped) * fraction)
    return tuple(sorted(random.Random(seed).sample(mapped, count)))


def _step(rate_per_s):
    return max(1, int(NS_PER_S / rate_per_s))


def _encrypted(rng, page_size):
    return rng.randbytes(page_size)


def gc_attack(session, victims, fill_fraction=0.95, write_rate_pages_per_s=2000, pressure_passes=2, seed=0):
    """Encrypt the victims, then dump junk until fill_fraction of the logical space holds data.

    The junk is rewritten pressure_passes times so garbage collection keeps
    running and the device is pushed to give up retained pages.
    """
    rng = random.Random(seed)
    host = session.host
    step = _step(write_rate_pages_per_s)
    pre_attack = session.now
    report = session.begin()
    t = pre_attack
    for lpa in victims:
        t += step
        session.write(lpa, _encrypted(rng, host.page_size), t, phase='attack-encrypt')

    target = int(host.logical_pages * fill_fraction)
    mapped = set(session.oracle.mapped_lpas())
    fresh = [lpa for lpa in range(host.logical_pages) if lpa not in mapped]
    flood = fresh[:max(0, target - len(mapped))]
    logger.info("gc attack: %d victims, flooding %d fresh lpas", len(victims), len(flood))
    for _ in range(1 + (pressure_passes if flood else 0)):
        for lpa in flood:
            t += step
            session.write(lpa, _encrypted(rng, host.page_size), t, phase='attack-flood')
    session.end()
    return AttackRun('gc', seed, {'fill_fraction': fill_fraction,
                                  'write_rate_pages_per_s': write_rate_pages_per_s,
                                  'pressure_passes': pressure_passes},
                     tuple(victims), pre_attack, report, _since(session, pre_attack))


def timing_attack(session, victims, ops_per_minute, benign_trace, seed=0):
    """Slow encrypt-overwrites of the victims hidden among benign traffic."""
    rng = random.Random(seed)
    pre_attack = session.now
    schedule = []
    origin = benign_trace[0].timestamp_ns if benign_trace else 0
    for op in benign_trace:
        schedule.append((pre_attack + 1 + op.timestamp_ns - origin, 0, op, 'benign'))
    if ops_per_minute > 0:
        step = int(60 * NS_PER_S / ops_per_minute)
        for index, lpa in enumerate(victims, start=1):
            op = TraceOp(pre_attack + index * step, 'W', lpa, 1, rng.getrandbits(63))
            schedule.append((op.timestamp_ns, 1, op, 'attack-encrypt'))
    schedule.sort(key=lambda item: (item[0], item[1]))
    report = session.begin()
    for timestamp, _, op, phase in schedule:
        session.issue(op, phase=phase, timestamp=timestamp)
    session.end()
    return AttackRun('timing', seed, {'ops_per_minute': ops_per_minute}, tuple(victims), pre_attack, report,
                     _since(session, pre_attack))


def trimming_attack(session, victims, mode='copy', rate_per_s=500, seed=0):
    """Encrypt each victim, then trim the original so a conventional SSD would reclaim it.

    mode='copy' writes the encrypted copy to an unused lpa; mode='in_place'
    overwrites the victim itself before trimming it.
    """
    if mode not in ('copy', 'in_place'):
        raise ValueError(f"unknown trimming mode {mode!r}")
    rng = random.Random(seed)
    host = session.host
    step = _step(rate_per_s)
    pre_attack = session.now
    used = set(session.oracle.written_lpas())
    spare = (lpa for lpa in range(host.logical_pages - 1, -1, -1) if lpa not in used)
    report = session.begin()
    t = pre_attack
    for lpa in victims:
        target = next(spare, None) if mode == 'copy' else lpa
        if target is None:
            target = lpa
        t += step
        session.read(lpa, t, phase='attack-read')
        t += step
        session.write(target, _encrypted(rng, host.page_size), t, phase='attack-encrypt')
        t += step
        session.trim(lpa, 1, t, phase='attack-trim')
    session.end()
    return AttackRun('trimming', seed, {'mode': mode, 'rate_per_s': rate_per_s}, tuple(victims), pre_attack,
                     report, _since(session, pre_attack))


def _since(session, timestamp):
    return [op for op in session.ground_truth if op.timestamp > timestamp]


@dataclass(frozen=True)
class OracleCheck:
    samples: int
    mismatches: tuple

    @property
    def ok(self):
        return not self.mismatches


def lost_lpas(recovery, oracle, lpas, as_of):
    """lpas whose restored content at as_of differs from the oracle."""
    restored = recovery.restore(lpas, as_of)
    expected = oracle.snapshot(as_of, lpas)
    return sorted(lpa for lpa in lpas if restored[lpa] != expected[lpa])


def verify_against_oracle(recovery, oracle, samples=100, seed=0):
    """Compare restore() with the oracle at sampled (lpa, timestamp) pairs."""
    rng = random.Random(seed)
    lpas = oracle.written_lpas()
    times = oracle.event_times()
    if not lpas or not times:
        return OracleCheck(0, ())
    mismatches = []
    for _ in range(samples):
        lpa = rng.choice(lpas)
        history = oracle.history(lpa)
        # half the samples land exactly on an event of this lpa
        t = rng.choice(history).timestamp if rng.random() < 0.5 else rng.randint(0, times[-1])
        if recovery.restore([lpa], t)[lpa] != oracle.as_of(lpa, t):
            mismatches.append((lpa, t))
    return OracleCheck(samples, tuple(mismatches))


def device_matches_oracle(host, oracle, lpas=None):
    """lpas where a host read disagrees with the oracle's current value."""
    lpas = range(host.logical_pages) if lpas is None else lpas
    wrong = []
    for lpa in lpas:
        data = host.read(lpa)
        expected = oracle.current(lpa)
        if (data is UNMAPPED) != (expected is UNMAPPED) or (data is not UNMAPPED and data != expected):
            wrong.append(lpa)
    return wrong
