"""Ransomware-aware flash translation layer.

Out-of-place writes keep every superseded version of a logical page. Trim
unmaps the logical page but keeps its last version. Garbage collection only
erases blocks whose pages are either still current (those get relocated) or
acknowledged by the vault; a page waiting for offload is never erased.
"""
import enum
import hashlib
import heapq
import logging
import threading
from dataclasses import dataclass

from .exceptions import BadLength, CapacityExhausted, OutOfRange, RetentionViolation
from .oplog import LogKind

logger = logging.getLogger(__name__)


class PageLifecycle(enum.Enum):
    FREE = 'free'
    VALID = 'valid'
    INVALID_RETAINED = 'invalid-retained'
    OFFLOAD_PENDING = 'offload-pending'
    SAFE_TO_ERASE = 'safe-to-erase'


_LEGAL = {
    (PageLifecycle.FREE, PageLifecycle.VALID),
    (PageLifecycle.VALID, PageLifecycle.INVALID_RETAINED),
    (PageLifecycle.INVALID_RETAINED, PageLifecycle.OFFLOAD_PENDING),
    (PageLifecycle.OFFLOAD_PENDING, PageLifecycle.SAFE_TO_ERASE),
    (PageLifecycle.OFFLOAD_PENDING, PageLifecycle.INVALID_RETAINED),
    (PageLifecycle.SAFE_TO_ERASE, PageLifecycle.FREE),
}
# conventional mode skips retention entirely
_LEGAL_CONVENTIONAL = _LEGAL | {(PageLifecycle.VALID, PageLifecycle.SAFE_TO_ERASE)}

_HELD = (PageLifecycle.INVALID_RETAINED, PageLifecycle.OFFLOAD_PENDING)


class _NoFreeBlock(Exception):
    """Raised under the lock when only offload can free a block."""


class _Unmapped:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __bool__(self):
        return False

    def __repr__(self):
        return 'UNMAPPED'

    def __reduce__(self):
        return (_Unmapped, ())


UNMAPPED = _Unmapped()


@dataclass
class PageMeta:
    lpa: int
    write_seq: int
    timestamp: int
    prev_version: object
    prev_seq: int
    lifecycle: PageLifecycle
    payload_digest: bytes


@dataclass(frozen=True)
class GcPolicy:
    high_watermark: float = 0.20
    offload_watermark: float = 0.30
    victim_rule: str = 'greedy'

    def __post_init__(self):
        if not 0 < self.high_watermark < 1:
            raise ValueError("high_watermark must be between 0 and 1")
        if not 0 < self.offload_watermark < 1:
            raise ValueError("offload_watermark must be between 0 and 1")
        if self.victim_rule != 'greedy':
            raise ValueError(f"unknown victim rule {self.victim_rule!r}")


@dataclass(frozen=True)
class GcReport:
    blocks_erased: int
    pages_moved: int
    pages_awaiting_offload: int


@dataclass(frozen=True)
class ClaimedPage:
    write_seq: int
    lpa: int
    timestamp: int
    data: bytes
    ppa: object
    payload_digest: bytes


def page_digest(data):
    return hashlib.sha256(data).digest()


class FlashTranslationLayer:
    """Page-mapped FTL over a NandArray, journaling into an OperationLog.

    All host commands, GC and the two offload transitions run under one
    re-entrant lock, in arrival order. The offload hooks are only ever
    called with that lock released.
    """

    def __init__(self, nand, oplog, policy=None, over_provisioning=0.25, retention=True,
                 log_reads=False):
        self._nand = nand
        self._log = oplog
        self.policy = policy or GcPolicy()
        self.retention = retention
        self.log_reads = log_reads
        geometry = nand.geometry
        self.geometry = geometry
        self.page_size = geometry.page_size
        self._ppb = geometry.pages_per_block
        self._nblocks = geometry.total_blocks
        self._total_pages = geometry.total_pages
        self.logical_pages = int(self._total_pages * (1 - over_provisioning))
        if not 1 <= self.logical_pages <= self._total_pages - 2 * self._ppb:
            raise ValueError(
                f"over-provisioning {over_provisioning} leaves {self.logical_pages} logical pages; "
                f"need between 1 and {self._total_pages - 2 * self._ppb} for this geometry")
        self._legal = _LEGAL if retention else _LEGAL_CONVENTIONAL

        self._meta = {}
        self._mapping = {}
        self._heads = {}
        self._retained = {}
        self._valid_in = [0] * self._nblocks
        self._held_in = [0] * self._nblocks
        self._safe_in = [0] * self._nblocks
        self._write_ptr = [0] * self._nblocks
        self._free_heap = [(0, b) for b in range(self._nblocks)]
        heapq.heapify(self._free_heap)
        self._host_block = None
        self._gc_block = None
        self._held_total = 0
        self._safe_total = 0
        self._now = 0
        self._lock = threading.RLock()
        self.pressure_hook = None
        self.background_hook = None
        self.erase_guards = []

    def __getstate__(self):
        state = self.__dict__.copy()
        state['_lock'] = None
        state['pressure_hook'] = None
        state['background_hook'] = None
        state['erase_guards'] = []
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.RLock()

    @property
    def lock(self):
        return self._lock

    @property
    def now(self):
        return self._now

    def _observe(self, timestamp):
        # the device clock never runs backwards
        if timestamp > self._now:
            self._now = timestamp
        return self._now

    def advance_clock(self, timestamp):
        with self._lock:
            return self._observe(timestamp)

    def _check_lpa(self, lpa):
        if not 0 <= lpa < self.logical_pages:
            raise OutOfRange(f"lpa {lpa} outside 0..{self.logical_pages - 1}")

    # Host commands

    def write(self, lpa, data, timestamp):
        self._check_lpa(lpa)
        if len(data) != self.page_size:
            raise BadLength(f"write of {len(data)} bytes, page size is {self.page_size}")
        while True:
            with self._lock:
                try:
                    seq = self._write(lpa, data, timestamp)
                    break
                except _NoFreeBlock:
                    pass
            # offload talks to the vault, so it runs with the lock released
            if self.pressure_hook is None or not self.pressure_hook():
                logger.warning("capacity exhausted: %d pages held for offload", self._held_total)
                raise CapacityExhausted(
                    f"no free block; {self._held_total} pages are waiting for offload")
        self._after_command()
        return seq

    def _write(self, lpa, data, timestamp):
        now = self._observe(timestamp)
        index = self._allocate(for_gc=False)
        ppa = self.geometry.page_address(index)
        digest = page_digest(data)
        entry = self._log.append(LogKind.WRITE, (lpa, 1), ppa, digest, now)
        self._nand.program_page(ppa, data)
        head = self._heads.get(lpa)
        self._meta[index] = PageMeta(
            lpa=lpa,
            write_seq=entry.seq,
            timestamp=now,
            prev_version=self.geometry.page_address(head[0]) if head else None,
            prev_seq=head[1] if head else None,
            lifecycle=PageLifecycle.VALID,
            payload_digest=digest,
        )
        self._valid_in[index // self._ppb] += 1
        old = self._mapping.get(lpa)
        if old is not None:
            self._supersede(old)
        self._mapping[lpa] = index
        self._heads[lpa] = (index, entry.seq)
        return entry.seq

    def read(self, lpa):
        self._check_lpa(lpa)
        with self._lock:
            index = self._mapping.get(lpa)
            ppa = self.geometry.page_address(index) if index is not None else None
            if self.log_reads:
                self._log.append(LogKind.READ, (lpa, 1), ppa, None, self._now)
            if index is None:
                return UNMAPPED
            return self._nand.read_page(ppa)

    def peek(self, lpa):
        """What the mapping currently points at, without journaling a read."""
        with self._lock:
            index = self._mapping.get(lpa)
            if index is None:
                return UNMAPPED
            return self._nand.read_page(self.geometry.page_address(index))

    def trim(self, start, length, timestamp):
        if length < 1:
            raise OutOfRange("trim length must be at least 1")
        self._check_lpa(start)
        self._check_lpa(start + length - 1)
        with self._lock:
            now = self._observe(timestamp)
            entry = self._log.append(LogKind.TRIM, (start, length), None, None, now)
            for lpa in range(start, start + length):
                index = self._mapping.pop(lpa, None)
                if index is not None:
                    # the head keeps pointing at the trimmed page so the next
                    # write chains back to it
                    self._supersede(index)
        self._after_command()
        return entry.seq

    def _supersede(self, index):
        target = PageLifecycle.INVALID_RETAINED if self.retention else PageLifecycle.SAFE_TO_ERASE
        self._transition(index, target)

    def _after_command(self):
        if self.background_hook is not None:
            self.background_hook()
        if self.free_fraction < self.policy.high_watermark:
            self.garbage_collect()

    # Lifecycle bookkeeping

    def _transition(self, index, target):
        meta = self._meta[index]
        current = meta.lifecycle
        if (current, target) not in self._legal:
            raise RetentionViolation(f"illegal transition {current.value} -> {target.value} "
                                     f"for page {self.geometry.page_address(index)}")
        block = index // self._ppb
        self._account(block, current, -1)
        self._account(block, target, +1)
        if current is PageLifecycle.INVALID_RETAINED:
            del self._retained[meta.write_seq]
        if target is PageLifecycle.INVALID_RETAINED:
            self._retained[meta.write_seq] = index
        meta.lifecycle = target

    def _account(self, block, lifecycle, delta):
        if lifecycle is PageLifecycle.VALID:
            self._valid_in[block] += delta
        elif lifecycle in _HELD:
            self._held_in[block] += delta
            self._held_total += delta
        elif lifecycle is PageLifecycle.SAFE_TO_ERASE:
            self._safe_in[block] += delta
            self._safe_total += delta

    # Space management

    @property
    def free_pages(self):
        free = len(self._free_heap) * self._ppb
        for block in (self._host_block, self._gc_block):
            if block is not None:
                free += self._ppb - self._write_ptr[block]
        return free

    @property
    def free_fraction(self):
        return self.free_pages / self._total_pages

    @property
    def retained_fraction(self):
        return len(self._retained) / self._total_pages

    @property
    def held_pages(self):
        """Pages that may not be erased yet: InvalidRetained plus OffloadPending."""
        return self._held_total

    def _allocate(self, for_gc):
        block = self._gc_block if for_gc else self._host_block
        if block is None or self._write_ptr[block] == self._ppb:
            block = self._open_block(for_gc)
        index = block * self._ppb + self._write_ptr[block]
        self._write_ptr[block] += 1
        return index

    def _open_block(self, for_gc):
        if for_gc:
            if not self._free_heap:
                raise RetentionViolation("GC reserve block exhausted")
        elif not self._reclaim():
            raise _NoFreeBlock()
        _, block = heapq.heappop(self._free_heap)
        self._write_ptr[block] = 0
        if for_gc:
            self._gc_block = block
        else:
            self._host_block = block
        return block

    def _reclaim(self):
        """Make sure the host can take a block without touching the GC reserve."""
        while len(self._free_heap) <= 1:
            if self._collect_one() is None:
                return False
        return True

    def _pick_victim(self):
        room = len(self._free_heap) * self._ppb
        if self._gc_block is not None:
            room += self._ppb - self._write_ptr[self._gc_block]
        best = None
        for block in range(self._nblocks):
            if block in (self._host_block, self._gc_block):
                continue
            safe = self._safe_in[block]
            if not safe or self._held_in[block] or self._valid_in[block] > room:
                continue
            key = (-safe, self._nand.erase_count(block), block)
            if best is None or key < best:
                best = key
        return None if best is None else best[2]

    def _collect_one(self):
        """Relocate and erase one victim block. Returns the number of relocated pages, or None."""
        if not self._safe_total:
            return None
        victim = self._pick_victim()
        if victim is None:
            return None
        start = victim * self._ppb
        pages = [(self.geometry.page_address(i), self._meta[i])
                 for i in range(start, start + self._write_ptr[victim]) if i in self._meta]
        for guard in self.erase_guards:
            guard(pages)
        moved = 0
        for index in range(start, start + self._write_ptr[victim]):
            meta = self._meta.get(index)
            if meta is None:
                continue
            if meta.lifecycle in _HELD:
                raise RetentionViolation(f"block {victim} holds a page awaiting offload")
            if meta.lifecycle is PageLifecycle.VALID:
                self._relocate(index, meta)
                moved += 1
        for index in range(start, start + self._write_ptr[victim]):
            meta = self._meta.pop(index, None)
            if meta is not None:
                self._account(victim, meta.lifecycle, -1)
        channel, chip, block = self.geometry.block_address(victim)
        self._nand.erase_block(channel, chip, block)
        self._write_ptr[victim] = 0
        heapq.heappush(self._free_heap, (self._nand.erase_count(victim), victim))
        logger.debug("erased block %d after moving %d valid pages", victim, moved)
        return moved

    def _relocate(self, index, meta):
        target = self._allocate(for_gc=True)
        ppa = self.geometry.page_address(target)
        data = self._nand.read_page(self.geometry.page_address(index))
        self._log.append(LogKind.GC_MOVE, (meta.lpa, 1), ppa, meta.payload_digest, self._now)
        self._nand.program_page(ppa, data)
        self._meta[target] = PageMeta(
            lpa=meta.lpa,
            write_seq=meta.write_seq,
            timestamp=meta.timestamp,
            prev_version=meta.prev_version,
            prev_seq=meta.prev_seq,
            lifecycle=PageLifecycle.VALID,
            payload_digest=meta.payload_digest,
        )
        self._valid_in[target // self._ppb] += 1
        self._mapping[meta.lpa] = target
        self._heads[meta.lpa] = (target, meta.write_seq)
        # the stale copy goes away with its block
        self._valid_in[index // self._ppb] -= 1
        del self._meta[index]

    def garbage_collect(self, force=False):
        """Reclaim blocks until free space is back above the watermark.

        Victims are the blocks with the most SafeToErase pages (ties to the
        least-worn block). A block holding any page that still awaits offload
        is never a victim. With force=True every eligible block is reclaimed.
        """
        erased = moved = 0
        with self._lock:
            while force or self.free_fraction < self.policy.high_watermark:
                relocated = self._collect_one()
                if relocated is None:
                    break
                erased += 1
                moved += relocated
            if erased:
                logger.info("gc erased %d blocks, moved %d pages", erased, moved)
            return GcReport(blocks_erased=erased, pages_moved=moved,
                            pages_awaiting_offload=self._held_total)

    # Offload transitions

    def retained_inventory(self):
        with self._lock:
            return [(seq, self.geometry.page_address(self._retained[seq]))
                    for seq in sorted(self._retained)]

    def claim_retained(self, max_pages):
        """InvalidRetained -> OffloadPending for the oldest pages by write_seq.

        A version is retained only once something superseded it, so the
        versions of one lpa are claimed oldest first. A long-lived version of
        one lpa can still be claimed after newer versions of other lpas.
        """
        with self._lock:
            claims = []
            for seq in heapq.nsmallest(max_pages, self._retained):
                index = self._retained[seq]
                meta = self._meta[index]
                ppa = self.geometry.page_address(index)
                self._transition(index, PageLifecycle.OFFLOAD_PENDING)
                claims.append(ClaimedPage(
                    write_seq=seq,
                    lpa=meta.lpa,
                    timestamp=meta.timestamp,
                    data=self._nand.read_page(ppa),
                    ppa=ppa,
                    payload_digest=meta.payload_digest,
                ))
            return claims

    def seal_offload(self, claims):
        """Journal the sealing of an offload batch. Returns the manifest digest."""
        with self._lock:
            manifest = hashlib.sha256(b''.join(c.payload_digest for c in claims)).digest()
            self._log.append(LogKind.OFFLOAD_SEALED, None, None, manifest, self._now)
            return manifest

    def acknowledge_offload(self, claims, manifest):
        """OffloadPending -> SafeToErase once the vault acknowledged these exact bytes.

        Pages rolled back after a timeout are re-claimed in the same step when
        a resend of their frame gets acknowledged.
        """
        with self._lock:
            for claim in claims:
                index = self._match(claim)
                if self._meta[index].lifecycle is PageLifecycle.INVALID_RETAINED:
                    self._transition(index, PageLifecycle.OFFLOAD_PENDING)
                self._transition(index, PageLifecycle.SAFE_TO_ERASE)
            self._log.append(LogKind.OFFLOAD_ACKED, None, None, manifest, self._now)

    def rollback_offload(self, claims):
        with self._lock:
            for claim in claims:
                index = self._match(claim)
                if self._meta[index].lifecycle is PageLifecycle.OFFLOAD_PENDING:
                    self._transition(index, PageLifecycle.INVALID_RETAINED)

    def _match(self, claim):
        index = self.geometry.page_number(claim.ppa)
        meta = self._meta.get(index)
        if meta is None or meta.write_seq != claim.write_seq or meta.payload_digest != claim.payload_digest:
            raise RetentionViolation(f"offloaded page {claim.ppa} no longer holds seq {claim.write_seq}")
        return index

    # Version access for recovery

    def version_head(self, lpa):
        """(ppa, write_seq) of the newest local version of lpa, trimmed or not."""
        with self._lock:
            head = self._heads.get(lpa)
            return None if head is None else (self.geometry.page_address(head[0]), head[1])

    def local_version(self, ppa, write_seq):
        """PageMeta of the page at ppa if it still holds version write_seq."""
        with self._lock:
            meta = self._meta.get(self.geometry.page_number(ppa))
            if meta is None or meta.write_seq != write_seq:
                return None
            return meta

    def read_version(self, ppa, write_seq):
        with self._lock:
            if self.local_version(ppa, write_seq) is None:
                return None
            return self._nand.read_page(ppa)

    def page_meta(self, ppa):
        with self._lock:
            return self._meta.get(self.geometry.page_number(ppa))

    def lifecycle_counts(self):
        with self._lock:
            counts = {state: 0 for state in PageLifecycle}
            for meta in self._meta.values():
                counts[meta.lifecycle] += 1
            counts[PageLifecycle.FREE] = self.free_pages
            return counts

    def audit(self):
        """Check the mapping invariants; returns a list of human-readable violations."""
        problems = []
        with self._lock:
            valid_by_lpa = {}
            for index, meta in self._meta.items():
                if meta.lifecycle is PageLifecycle.VALID:
                    if meta.lpa in valid_by_lpa:
                        problems.append(f"lpa {meta.lpa} has more than one valid page")
                    valid_by_lpa[meta.lpa] = index
                if meta.prev_seq is not None and meta.prev_seq >= meta.write_seq:
                    problems.append(f"page {self.geometry.page_address(index)} chains to a newer version")
            for lpa, index in self._mapping.items():
                meta = self._meta.get(index)
                if meta is None or meta.lpa != lpa or meta.lifecycle is not PageLifecycle.VALID:
                    problems.append(f"mapping of lpa {lpa} does not point at its valid page")
            if set(valid_by_lpa) != set(self._mapping):
                problems.append("valid pages and mapping disagree")
            if len(self._retained) + sum(
                    1 for m in self._meta.values() if m.lifecycle is PageLifecycle.OFFLOAD_PENDING
            ) != self._held_total:
                problems.append("held page counter drifted")
        return problems
