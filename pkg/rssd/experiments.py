"""Run orchestration behind the management commands.

Each function takes a validated RunConfig and a run directory, drives the
device through the harness and writes its reports there.
"""
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

from . import reports
from .detectors import registered
from .device import RansomwareAwareSSD
from .exceptions import RetentionViolation
from .harness import (
    HostSession, choose_victims, device_matches_oracle, gc_attack, lost_lpas, replay_trace, timing_attack,
    trimming_attack, verify_against_oracle,
)
from .oracle import SampledOracle
from .recovery import RecoveryEngine, compare_order
from .traces import generate_benign_trace, generate_fill_trace, read_trace
from .transport import LocalVaultLink, SocketVaultLink
from .vault import VaultStore

logger = logging.getLogger(__name__)

SNAPSHOT_FILE = 'device.snapshot'
NS_PER_S = 1_000_000_000
DAY_NS = 86_400 * NS_PER_S
RETENTION_SAMPLE = 16


@dataclass
class VaultHandle:
    link: object = None
    store: object = None

    def close(self):
        if self.link is not None:
            self.link.close()


def uses_vault(config):
    return config.vault_mode != 'disabled' and config.retention and config.logging and not config.ablation


def open_vault(config, key):
    if not uses_vault(config):
        return VaultHandle()
    if config.vault_mode == 'remote':
        return VaultHandle(SocketVaultLink(config.vault_host, config.vault_port, config.vault_timeout_s))
    store = VaultStore(config.vault_dir(), key)
    return VaultHandle(LocalVaultLink(store), store)


def prepare_run(config):
    """Create the run directory, load the key and archive the configuration."""
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    key = None
    if uses_vault(config):
        key = config.load_key(create=config.vault_mode == 'local')
    config.archive(out, key)
    return out, key


def benign_trace(config, logical_pages):
    if config.trace:
        return read_trace(config.trace)
    return generate_benign_trace(config.seed, config.ops, logical_pages, ops_per_second=config.ops_per_second)


def _finish_device(device):
    device.tick(device.now + 1)
    device.flush()


# Simulation

@dataclass
class SimulationResult:
    report: object
    problems: list
    oracle_samples: int
    wrong_lpas: list
    total_erases: int
    segments_acked: int
    checked: bool = True

    @property
    def ok(self):
        return not self.problems and not self.wrong_lpas


def run_benign(config, device, trace, link=None, checks=100):
    """Replay trace on device, checking the mapping and a few restores at sampled instants."""
    session = HostSession(device.host())
    checked = device.config.retention and device.config.logging
    recovery = RecoveryEngine(device, link) if checked else None
    problems = []

    def observe(index):
        problems.extend(f"after op {index}: {p}" for p in device.ftl.audit())
        check = verify_against_oracle(recovery, session.oracle, samples=2, seed=config.seed + index)
        problems.extend(f"after op {index}: restore of lpa {lpa} at {t} disagrees with the oracle"
                        for lpa, t in check.mismatches)

    every = max(1, len(trace) // checks) if checked and checks else 0
    report = replay_trace(session, trace, observer=observe if every else None, observe_every=every)
    if device.vault_attached:
        _finish_device(device)
    problems.extend(device.ftl.audit())
    samples = 0
    if checked:
        final = verify_against_oracle(recovery, session.oracle, samples=100, seed=config.seed)
        samples = final.samples
        problems.extend(f"restore of lpa {lpa} at {t} disagrees with the oracle" for lpa, t in final.mismatches)
    wrong = device_matches_oracle(device.host(), session.oracle, session.oracle.written_lpas())
    return session, SimulationResult(
        report=report,
        problems=problems,
        oracle_samples=samples,
        wrong_lpas=wrong,
        total_erases=device.wear().total_erases,
        segments_acked=device.offload.stats.segments_acked if device.offload else 0,
        checked=checked,
    )


def _throughput_rows(name, result):
    r = result.report
    return [(name, r.ops, r.writes, r.trims, r.reads, r.refused, f"{r.wall_seconds:.6f}",
             f"{r.ops_per_second:.1f}", result.total_erases)]


THROUGHPUT_HEADER = ('run', 'ops', 'writes', 'trims', 'reads', 'refused', 'wall_seconds', 'ops_per_second',
                     'block_erases')


def simulate(config, paired=False):
    out, key = prepare_run(config)
    vault = open_vault(config, key)
    try:
        device = RansomwareAwareSSD(config.device_config(), vault.link, key)
        trace = benign_trace(config, device.ftl.logical_pages)
        logger.info("replaying %d operations", len(trace))
        _, result = run_benign(config, device, trace, vault.link)
        device.save_snapshot(out / SNAPSHOT_FILE)
    finally:
        vault.close()

    reports.write_csv(out / 'throughput.csv', THROUGHPUT_HEADER, _throughput_rows('rssd', result))
    summary = {
        'command': 'simulate',
        'seed': config.seed,
        'ops': result.report.ops,
        'retention': _retention_label(result),
        'oracle samples': result.oracle_samples,
        'device reads vs oracle': 'OK' if not result.wrong_lpas else f"{len(result.wrong_lpas)} lpas differ",
        'segments acked': result.segments_acked,
        'block erases': result.total_erases,
        'ops per second': f"{result.report.ops_per_second:.1f}",
    }
    baseline = None
    if paired:
        baseline_device = RansomwareAwareSSD(config.device_config(retention=False, logging=False))
        _, baseline = run_benign(config, baseline_device, trace)
        reports.write_csv(out / 'throughput_baseline.csv', THROUGHPUT_HEADER,
                          _throughput_rows('baseline', baseline))
        delta = _overhead(baseline.report.ops_per_second, result.report.ops_per_second)
        wear_ratio = _ratio(result.total_erases, baseline.total_erases)
        reports.write_csv(out / 'overhead.csv', (
            'baseline_ops_per_second', 'rssd_ops_per_second', 'throughput_delta_pct',
            'baseline_block_erases', 'rssd_block_erases', 'wear_ratio', 'wear_bound',
        ), [(f"{baseline.report.ops_per_second:.1f}", f"{result.report.ops_per_second:.1f}", f"{delta:.2f}",
             baseline.total_erases, result.total_erases, f"{wear_ratio:.3f}", config.wear_bound)])
        summary['throughput delta'] = f"{delta:.2f}%"
        summary['wear ratio'] = f"{wear_ratio:.3f} (bound {config.wear_bound})"
        logger.info("logging overhead %.2f%%, wear ratio %.3f", delta, wear_ratio)
    if result.problems:
        with open(out / 'problems.txt', 'w') as f:
            f.writelines(f"{p}\n" for p in result.problems)
    reports.write_summary(out, summary)
    return result, baseline


def _retention_label(result):
    if not result.checked:
        return 'NOT CHECKED'
    return 'OK' if result.ok else f"FAILED ({len(result.problems) + len(result.wrong_lpas)} problems)"


def _overhead(baseline, measured):
    return 0.0 if not baseline else (baseline - measured) / baseline * 100


def _ratio(value, baseline):
    if not baseline:
        return 1.0 if not value else float('inf')
    return value / baseline


# Attacks

@dataclass
class AttackResult:
    run: object
    victims: tuple
    lost: list
    erases_during_attack: int
    chain: object = None
    agreement: object = None
    detections: list = field(default_factory=list)

    @property
    def recovered(self):
        return not self.lost

    @property
    def verdict(self):
        if not self.lost:
            return 'RECOVERED(100%)'
        shown = ', '.join(str(lpa) for lpa in self.lost[:20])
        more = '' if len(self.lost) <= 20 else f" and {len(self.lost) - 20} more"
        return f"LOST {len(self.lost)}/{len(self.victims)} lpas: {shown}{more}"


def launch_attack(config, session, victims, logical_pages):
    if config.attack == 'gc':
        return gc_attack(session, victims, fill_fraction=config.fill_fraction,
                         write_rate_pages_per_s=config.attack_rate, seed=config.seed)
    if config.attack == 'timing':
        camouflage = generate_benign_trace(config.seed + 1, config.ops, logical_pages,
                                           ops_per_second=config.ops_per_second)
        return timing_attack(session, victims, config.ops_per_minute, camouflage, seed=config.seed)
    return trimming_attack(session, victims, mode=config.trimming_mode, rate_per_s=config.attack_rate,
                           seed=config.seed)


def attack(config):
    out, key = prepare_run(config)
    vault = open_vault(config, key)
    try:
        device = RansomwareAwareSSD(config.device_config(retention=not config.ablation), vault.link, key)
        session = HostSession(device.host())
        replay_trace(session, benign_trace(config, device.ftl.logical_pages))
        victims = choose_victims(session.oracle, config.victim_fraction, config.seed)
        erases_before = device.wear().total_erases
        logger.info("%s attack on %d victims%s", config.attack, len(victims),
                    ' (retention disabled)' if config.ablation else '')
        run = launch_attack(config, session, victims, device.ftl.logical_pages)
        if config.ablation:
            # a conventional drive reclaims trimmed and stale pages on its own schedule
            device.force_gc()
        elif device.vault_attached:
            _finish_device(device)
        recovery = RecoveryEngine(device, vault.link)
        result = AttackResult(
            run=run,
            victims=tuple(victims),
            lost=lost_lpas(recovery, session.oracle, victims, run.pre_attack_ns),
            erases_during_attack=device.wear().total_erases - erases_before,
        )
        if run.report.first_seq is not None and device.config.logging:
            window = (run.report.first_seq, run.report.last_seq)
            result.chain = recovery.build_evidence_chain(window, session.ground_truth)
            result.agreement = compare_order(result.chain, session.ground_truth)
            if vault.link is not None:
                result.detections = [vault.link.run_detector(name, window) for name in registered()]
        device.save_snapshot(out / SNAPSHOT_FILE)
    finally:
        vault.close()

    reports.write_ground_truth(out / reports.GROUND_TRUTH_FILE, session.ground_truth)
    records = [{
        'record': 'run',
        'attack': run.kind,
        'seed': run.seed,
        'params': run.params,
        'ablation': config.ablation,
        'pre_attack_ns': run.pre_attack_ns,
        'victims': len(victims),
        'refused_writes': run.capacity_exhausted,
        'block_erases': result.erases_during_attack,
        'verdict': result.verdict,
    }]
    lost = set(result.lost)
    records.extend({'record': 'victim', 'lpa': lpa, 'recovered': lpa not in lost} for lpa in victims)
    records.extend(dict(d.to_dict(), record='detector') for d in result.detections)
    reports.write_jsonl(out / 'attack_report.jsonl', records)
    summary = {
        'command': 'attack',
        'attack': run.kind,
        'seed': config.seed,
        'ablation': config.ablation,
        'victims': len(victims),
        'attack ops': run.report.ops,
        'block erases during attack': result.erases_during_attack,
        'verdict': result.verdict,
    }
    if result.chain is not None:
        reports.write_evidence(out, result.chain, result.agreement)
        summary['evidence chain'] = reports.chain_verdict(result.chain)
        summary['order agreement'] = f"{result.agreement.fraction:.1%}"
    for report in result.detections:
        summary[f"detector {report.detector}"] = 'suspicious' if report.suspicious else 'quiet'
    reports.write_summary(out, summary)
    return result


# Forensics

@dataclass
class ForensicsResult:
    chain: object
    agreement: object = None
    backtracks: list = field(default_factory=list)


def forensics(config, run_dir, window=None, lpas=()):
    """Rebuild and verify the evidence chain of a completed run from its snapshot and vault."""
    run_dir = Path(run_dir)
    key = config.load_key() if uses_vault(config) else None
    vault = open_vault(config, key)
    try:
        device = RansomwareAwareSSD.load_snapshot(run_dir / SNAPSHOT_FILE, vault.link, key)
        recovery = RecoveryEngine(device, vault.link)
        ground_truth_path = run_dir / reports.GROUND_TRUTH_FILE
        ground_truth = reports.read_ground_truth(ground_truth_path) if ground_truth_path.exists() else None
        window = window or (1, device.log.last_seq)
        chain = recovery.build_evidence_chain(window, ground_truth)
        result = ForensicsResult(chain)
        if ground_truth is not None:
            result.agreement = compare_order(chain, ground_truth)
        result.backtracks = [recovery.backtrack(lpa) for lpa in lpas]
    finally:
        vault.close()
    reports.write_evidence(run_dir, chain, result.agreement)
    if result.backtracks:
        reports.write_backtrack(run_dir, result.backtracks)
    return result


# Retention

@dataclass(frozen=True)
class RetentionDay:
    day: int
    oldest_restorable_age: int
    local_retained_pages: int
    vault_bytes: int
    refused_writes: int


RETENTION_HEADER = ('day', 'oldest_restorable_version_age_days', 'local_retained_pages', 'vault_bytes',
                    'refused_writes')


def retention(config, days):
    """Replay the daily workload for days simulated days and track how far back restores reach.

    Day 0 is one pass over the logical space; every later day rewrites it
    daily_passes times. Restorability is checked on a fixed seeded sample of lpas.
    """
    out, key = prepare_run(config)
    vault = open_vault(config, key)
    rows = []
    try:
        device = RansomwareAwareSSD(config.device_config(), vault.link, key)
        logical = device.ftl.logical_pages
        sample = sorted(random.Random(config.seed).sample(range(logical), min(RETENTION_SAMPLE, logical)))
        session = HostSession(device.host(), SampledOracle(sample), keep_ground_truth=False)
        recovery = RecoveryEngine(device, vault.link)
        oldest = 0
        refused = 0
        for day in range(days + 1 if days else 0):
            session.advance(day * DAY_NS)
            passes = 1.0 if day == 0 else config.daily_passes
            count = int(logical * passes)
            trace = generate_fill_trace(config.seed + day, logical, passes=passes,
                                        ops_per_second=count * NS_PER_S / DAY_NS, start_ns=day * DAY_NS)
            refused += replay_trace(session, trace).refused
            device.tick((day + 1) * DAY_NS - 1)
            if device.vault_attached:
                device.flush()
            if day == 0:
                continue
            while oldest < day and not _restorable(recovery, session.oracle, sample, oldest):
                oldest += 1
            rows.append(RetentionDay(
                day=day,
                oldest_restorable_age=day - oldest,
                local_retained_pages=device.ftl.held_pages,
                vault_bytes=vault.link.status().bytes_stored if vault.link is not None else 0,
                refused_writes=refused,
            ))
            logger.info("day %d: oldest restorable version %d days old", day, day - oldest)
        if days:
            device.save_snapshot(out / SNAPSHOT_FILE)
    finally:
        vault.close()

    reports.write_csv(out / 'retention.csv', RETENTION_HEADER,
                      [(r.day, r.oldest_restorable_age, r.local_retained_pages, r.vault_bytes, r.refused_writes)
                       for r in rows])
    unbounded = all(r.oldest_restorable_age == r.day for r in rows)
    reports.write_summary(out, {
        'command': 'retention',
        'seed': config.seed,
        'days': days,
        'vault': 'enabled' if vault.link is not None else 'disabled',
        'retention': 'OK' if unbounded and not refused else ('CAPPED' if refused else 'FAILED'),
        'refused writes': refused,
    })
    if vault.link is not None and not unbounded:
        raise RetentionViolation("a day-0 version is no longer restorable with the vault enabled")
    return rows


def _restorable(recovery, oracle, lpas, day):
    as_of = (day + 1) * DAY_NS - 1
    return recovery.restore(lpas, as_of) == oracle.snapshot(as_of, lpas)
