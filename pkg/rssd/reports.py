"""Run directory reports: plain text for people, CSV for plots, JSON Lines for tools."""
import csv
import json
from pathlib import Path

from .harness import GroundTruthOp
from .recovery import LOST, TRIM_MARKER

SUMMARY_FILE = 'summary.txt'
GROUND_TRUTH_FILE = 'ground_truth.csv'
GROUND_TRUTH_HEADER = ('seq', 'timestamp', 'op', 'lpa', 'length', 'phase', 'outcome')


def write_summary(directory, items):
    path = Path(directory) / SUMMARY_FILE
    with open(path, 'w') as f:
        for key, value in items.items():
            f.write(f"{key}: {value}\n")
    return path


def read_summary(directory):
    summary = {}
    with open(Path(directory) / SUMMARY_FILE) as f:
        for line in f:
            key, _, value = line.rstrip('\n').partition(': ')
            summary[key] = value
    return summary


def write_csv(path, header, rows):
    with open(path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def write_jsonl(path, records):
    with open(path, 'w') as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True) + '\n')
    return path


def read_jsonl(path):
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def write_ground_truth(path, ops):
    rows = (('' if op.seq is None else op.seq, op.timestamp, op.op, op.lpa, op.length, op.phase, op.outcome)
            for op in ops)
    return write_csv(path, GROUND_TRUTH_HEADER, rows)


def read_ground_truth(path):
    with open(path, newline='') as f:
        return [GroundTruthOp(
            seq=int(row['seq']) if row['seq'] else None,
            timestamp=int(row['timestamp']),
            op=row['op'],
            lpa=int(row['lpa']),
            length=int(row['length']),
            phase=row['phase'],
            outcome=row['outcome'],
        ) for row in csv.DictReader(f)]


def _hex(value):
    return value.hex() if value else None


# Evidence chains

def entry_record(entry, phase=None):
    start, length = entry.lpa_range if entry.lpa_range else (None, 0)
    return {
        'seq': entry.seq,
        'timestamp': entry.timestamp,
        'kind': entry.kind.name,
        'lpa': start,
        'length': length,
        'ppa': str(entry.ppa) if entry.ppa is not None else None,
        'digest': _hex(entry.payload_digest),
        'chain_hash': entry.chain_hash.hex(),
        'phase': phase,
    }


def chain_verdict(chain):
    if not chain.verified:
        return f"BROKEN at seq {chain.status.tamper_seq}"
    return 'VERIFIED' if chain.replay_ok else 'VERIFIED (replay check failed)'


def write_evidence(directory, chain, agreement=None):
    """evidence-<first>-<last>.txt and .jsonl for one evidence chain."""
    stem = Path(directory) / f"evidence-{chain.first_seq}-{chain.last_seq}"
    phases = {a.seq: a.phase for a in chain.annotations}
    records = [entry_record(e, phases.get(e.seq)) for e in chain.entries]
    write_jsonl(f"{stem}.jsonl", records)
    with open(f"{stem}.txt", 'w') as f:
        f.write(f"evidence chain seq {chain.first_seq}-{chain.last_seq}: {chain_verdict(chain)}\n")
        f.write(f"replay check: {'OK' if chain.replay_ok else 'FAILED'}\n")
        if agreement is not None:
            f.write(f"order agreement: {agreement.matched}/{agreement.expected} "
                    f"({agreement.fraction:.1%})")
            if not agreement.ok:
                f.write(f", first divergence at position {agreement.first_divergence}")
            f.write('\n')
        f.write('\n')
        f.write(f"{'seq':>10}  {'timestamp_ns':>20}  {'kind':<14}{'lpa':>10}  {'len':>5}  phase\n")
        for r in records:
            f.write(f"{r['seq']:>10}  {r['timestamp']:>20}  {r['kind']:<14}"
                    f"{'' if r['lpa'] is None else r['lpa']:>10}  {r['length']:>5}  {r['phase'] or ''}\n")
    return Path(f"{stem}.txt")


# Backtracking

def _describe(location):
    if location is TRIM_MARKER:
        return 'trim'
    if location is LOST:
        return 'LOST'
    return str(location)


def version_records(chain):
    return [{
        'lpa': chain.lpa,
        'write_seq': v.write_seq,
        'timestamp': v.timestamp,
        'kind': v.kind.name,
        'location': _describe(v.location),
        'digest': _hex(v.digest),
    } for v in chain.entries]


def write_backtrack(directory, chains):
    records = [r for chain in chains for r in version_records(chain)]
    write_jsonl(Path(directory) / 'backtrack.jsonl', records)
    with open(Path(directory) / 'backtrack.txt', 'w') as f:
        for chain in chains:
            f.write(f"lpa {chain.lpa}: {len(chain)} versions\n")
            for r in version_records(chain):
                f.write(f"  seq {r['write_seq']:>10}  t={r['timestamp']:>20}  {r['kind']:<6} {r['location']}\n")
    return records

