"""Line-oriented I/O traces and a seeded benign workload generator.

One operation per line::

    timestamp_ns,op,lpa,length_pages,payload_seed

op is W (write), T (trim) or R (read). Blank lines and lines starting with
``#`` are ignored. Timestamps must not decrease.
"""
import random
from dataclasses import dataclass

from .exceptions import TraceParseError

OPS = ('W', 'T', 'R')


@dataclass(frozen=True)
class TraceOp:
    timestamp_ns: int
    op: str
    lpa: int
    length: int = 1
    payload_seed: int = 0

    def __str__(self):
        return f"{self.timestamp_ns},{self.op},{self.lpa},{self.length},{self.payload_seed}"


def parse_trace(lines):
    ops = []
    previous = 0
    for number, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith('#'):
            continue
        fields = [f.strip() for f in line.split(',')]
        if len(fields) != 5:
            raise TraceParseError(number, f"expected 5 fields, got {len(fields)}")
        try:
            timestamp, lpa, length, seed = int(fields[0]), int(fields[2]), int(fields[3]), int(fields[4])
        except ValueError as exc:
            raise TraceParseError(number, str(exc)) from exc
        op = fields[1].upper()
        if op not in OPS:
            raise TraceParseError(number, f"unknown op {fields[1]!r}")
        if timestamp < previous:
            raise TraceParseError(number, "timestamp goes backwards")
        if lpa < 0 or length < 1:
            raise TraceParseError(number, "lpa must be >= 0 and length >= 1")
        previous = timestamp
        ops.append(TraceOp(timestamp, op, lpa, length, seed))
    return ops


def read_trace(path):
    with open(path) as f:
        return parse_trace(f)


def write_trace(path, ops, header=None):
    with open(path, 'w') as f:
        if header:
            f.write(f"# {header}\n")
        for op in ops:
            f.write(f"{op}\n")


def payload_for(seed, page_size):
    return random.Random(seed).randbytes(page_size)


def generate_benign_trace(seed, count, logical_pages, ops_per_second=1.0, hot_fraction=0.2,
                          hot_weight=0.8, read_fraction=0.2, trim_fraction=0.02, max_trim=8,
                          start_ns=0, lpa_limit=None):
    """Skewed random workload: most accesses go to a small hot set of lpas."""
    rng = random.Random(seed)
    span = min(logical_pages, lpa_limit or logical_pages)
    hot = max(1, int(span * hot_fraction))
    interval = int(1_000_000_000 / ops_per_second)
    ops = []
    timestamp = start_ns
    for _ in range(count):
        timestamp += max(1, int(rng.expovariate(1.0) * interval))
        lpa = rng.randrange(hot) if rng.random() < hot_weight else rng.randrange(span)
        roll = rng.random()
        if roll < read_fraction:
            ops.append(TraceOp(timestamp, 'R', lpa))
        elif roll < read_fraction + trim_fraction:
            length = min(rng.randint(1, max_trim), span - lpa)
            ops.append(TraceOp(timestamp, 'T', lpa, length))
        else:
            ops.append(TraceOp(timestamp, 'W', lpa, 1, rng.getrandbits(63)))
    return ops


def generate_fill_trace(seed, logical_pages, passes=1.0, ops_per_second=1.0, start_ns=0):
    """Sequential-ish overwrite of the whole logical space, used for the daily retention workload."""
    rng = random.Random(seed)
    interval = int(1_000_000_000 / ops_per_second)
    ops = []
    total = int(logical_pages * passes)
    for index in range(total):
        ops.append(TraceOp(start_ns + index * interval, 'W', index % logical_pages, 1, rng.getrandbits(63)))
    return ops
