"""Shipping retained pages and sealed log segments to the vault.

One segment is in flight at a time. The FTL lock covers claiming, sealing,
encoding and settling a segment, never the link itself. A page only becomes SafeToErase after
the vault acknowledged the frame carrying it; a timeout rolls the pages back
to InvalidRetained and keeps the frame so the identical bytes can be resent.
"""
import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass

from .exceptions import NothingToOffload, VaultRejected, VaultUnreachable
from .frames import COMPRESSION_ZLIB, encode_frame
from .protocol import IngestReply, NackReason
from .segments import OffloadSegment, PageRecord

logger = logging.getLogger(__name__)

NS_PER_S = 1_000_000_000


@dataclass
class InFlight:
    segment_id: int
    frame: bytes
    claims: list
    manifest: bytes
    through_log_segment: int
    page_count: int


@dataclass
class OffloadStats:
    segments_acked: int = 0
    pages_offloaded: int = 0
    bytes_sent: int = 0
    timeouts: int = 0
    nacks: int = 0
    resends: int = 0


class OffloadEngine:

    def __init__(self, ftl, oplog, link, key, max_pages=256, compression=COMPRESSION_ZLIB,
                 archive_size=8, backoff_base_s=1, backoff_cap_s=60):
        self._ftl = ftl
        self._log = oplog
        self.link = link
        self.key = key
        self.max_pages = max_pages
        self.compression = compression
        self.archive_size = archive_size
        self.backoff_base_ns = backoff_base_s * NS_PER_S
        self.backoff_cap_ns = backoff_cap_s * NS_PER_S
        self._next_segment_id = 1
        self._in_flight = None
        self._archive = OrderedDict()
        self._failures = 0
        self._retry_at = 0
        self._activity = threading.RLock()
        self.stats = OffloadStats()

    def __getstate__(self):
        # neither the key nor the transport is ever written to a snapshot
        state = self.__dict__.copy()
        state['link'] = None
        state['key'] = None
        state['_activity'] = None
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._activity = threading.RLock()

    def attach(self, link, key):
        self.link = link
        self.key = key

    @property
    def in_flight(self):
        return self._in_flight

    @property
    def retry_at(self):
        return self._retry_at

    def build_segment(self, max_pages=None):
        """Claim the oldest retained pages and bundle them with every unshipped sealed log segment."""
        with self._ftl.lock:
            claims = self._ftl.claim_retained(self.max_pages if max_pages is None else max_pages)
            if not claims and not self._log.has_unshipped():
                raise NothingToOffload("no retained pages and no sealed log segment to ship")
            manifest = None
            if claims:
                manifest = self._ftl.seal_offload(claims)
                if self._log.unsealed_entries():
                    self._log.seal_segment()
            log_segments = tuple(self._log.unshipped_segments())
            segment = OffloadSegment(
                segment_id=self._next_segment_id,
                page_records=tuple(PageRecord(c.write_seq, c.lpa, c.timestamp, c.data) for c in claims),
                log_segments=log_segments,
                prev_tail_hash=log_segments[0].head_hash,
            )
            self._next_segment_id += 1
            self._in_flight = InFlight(
                segment_id=segment.segment_id,
                frame=encode_frame(segment, self.key, self.compression),
                claims=claims,
                manifest=manifest,
                through_log_segment=log_segments[-1].segment_id,
                page_count=len(claims),
            )
            return segment

    def ship(self):
        """Send the in-flight frame and settle the outcome. Returns the vault's reply."""
        flight = self._in_flight
        if flight is None:
            raise NothingToOffload("no segment in flight")
        reply = self._send(flight.frame)
        if not reply.acked and reply.reason is NackReason.OUT_OF_ORDER and reply.detail < flight.segment_id:
            logger.warning("vault expects segment %d before %d; resending", reply.detail, flight.segment_id)
            reply = self._resend_archived(reply.detail, flight.segment_id) or self._send(flight.frame)
        if reply.acked:
            self._complete(flight)
            return reply
        self.stats.nacks += 1
        self._ftl.rollback_offload(flight.claims)
        self._in_flight = None
        self._next_segment_id = flight.segment_id
        logger.warning("segment %d rejected: %s", flight.segment_id, reply)
        raise VaultRejected(reply.reason.name, reply.detail)

    def _send(self, frame):
        try:
            reply = self.link.send_frame(frame)
        except VaultUnreachable:
            self._note_timeout()
            raise
        self.stats.bytes_sent += len(frame)
        return reply

    def _note_timeout(self):
        flight = self._in_flight
        self.stats.timeouts += 1
        self._ftl.rollback_offload(flight.claims)
        self._failures += 1
        delay = min(self.backoff_base_ns * 2 ** (self._failures - 1), self.backoff_cap_ns)
        self._retry_at = self._ftl.now + delay
        logger.warning("segment %d not acknowledged; retry in %ds", flight.segment_id, delay // NS_PER_S)

    def _resend_archived(self, first_missing, upto):
        """Resend acknowledged frames the vault lost. Returns a refusal to settle, or None."""
        for segment_id in range(first_missing, upto):
            frame = self._archive.get(segment_id)
            if frame is None:
                logger.error("segment %d is no longer archived on the device", segment_id)
                return IngestReply.nack(NackReason.OUT_OF_ORDER, first_missing)
            reply = self._send(frame)
            self.stats.resends += 1
            if not reply.acked:
                return reply
        return None

    def _complete(self, flight):
        with self._ftl.lock:
            if flight.claims:
                self._ftl.acknowledge_offload(flight.claims, flight.manifest)
            self._log.mark_shipped(flight.through_log_segment)
        self._archive[flight.segment_id] = flight.frame
        while len(self._archive) > self.archive_size:
            self._archive.popitem(last=False)
        self._in_flight = None
        self._failures = 0
        self._retry_at = 0
        self.stats.segments_acked += 1
        self.stats.pages_offloaded += flight.page_count
        logger.debug("segment %d acknowledged (%d pages)", flight.segment_id, flight.page_count)

    def _ship_next(self):
        if self._in_flight is None:
            self.build_segment()
        return self.ship()

    def _wants_to_ship(self):
        ftl = self._ftl
        if self._in_flight is not None or self._log.has_unshipped():
            return True
        if ftl.retained_fraction > ftl.policy.offload_watermark:
            return True
        # GC cannot reclaim retained pages until they are offloaded
        return ftl.free_fraction < ftl.policy.high_watermark and ftl.held_pages > 0

    def pump(self):
        """Ship while there is work and the backoff allows it. Returns the number of acked segments.

        Called between host commands; one caller at a time drives the offload activity.
        """
        acked = 0
        with self._activity:
            while self._wants_to_ship() and self._ftl.now >= self._retry_at:
                try:
                    self._ship_next()
                except (NothingToOffload, VaultUnreachable):
                    break
                except VaultRejected as exc:
                    logger.error("offload stopped: %s", exc)
                    break
                acked += 1
        return acked

    def relieve_pressure(self):
        """Capacity hook for the FTL: try to turn retained pages into erasable ones."""
        with self._activity:
            if self._ftl.now < self._retry_at:
                return False
            try:
                self._ship_next()
            except (NothingToOffload, VaultUnreachable, VaultRejected):
                return False
            return True

    def flush(self):
        """Seal the open log segment and ship everything still on the device.

        Raises VaultUnreachable if the vault cannot be reached.
        """
        with self._activity:
            with self._ftl.lock:
                if self._log.unsealed_entries():
                    self._log.seal_segment()
            while True:
                try:
                    self._ship_next()
                except NothingToOffload:
                    break
                with self._ftl.lock:
                    if self._log.unsealed_entries() and not self._ftl.retained_inventory():
                        self._log.seal_segment()
