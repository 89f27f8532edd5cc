"""The simulated SSD: flash array, translation layer, journal and offload engine in one box.

The host only ever gets a HostPort. Offload, the journal and the device key
stay behind it, the way the offload NIC path is invisible to the host OS.
"""
import logging
import os
import pickle
from dataclasses import dataclass, field

from .frames import COMPRESSION_ZLIB
from .ftl import FlashTranslationLayer, GcPolicy
from .nand import DESK_GEOMETRY, NandArray
from .offload import OffloadEngine
from .oplog import DEFAULT_SEAL_AGE_NS, DEFAULT_SEAL_ENTRIES, OperationLog, SequenceOnlyLog

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DeviceConfig:
    geometry: object = DESK_GEOMETRY
    over_provisioning: float = 0.25
    policy: GcPolicy = field(default_factory=GcPolicy)
    retention: bool = True
    logging: bool = True
    log_reads: bool = False
    seal_max_entries: int = DEFAULT_SEAL_ENTRIES
    seal_max_age_ns: int = DEFAULT_SEAL_AGE_NS
    segment_max_pages: int = 256
    compression: int = COMPRESSION_ZLIB
    archive_size: int = 8


class HostPort:
    """The block interface: write, trim and read of logical pages, nothing else."""

    def __init__(self, ftl):
        self._ftl = ftl

    @property
    def logical_pages(self):
        return self._ftl.logical_pages

    @property
    def page_size(self):
        return self._ftl.page_size

    def write(self, lpa, data, timestamp):
        return self._ftl.write(lpa, data, timestamp)

    def trim(self, start, length, timestamp):
        return self._ftl.trim(start, length, timestamp)

    def read(self, lpa):
        return self._ftl.read(lpa)


class RansomwareAwareSSD:

    def __init__(self, config=None, link=None, key=None):
        self.config = config or DeviceConfig()
        cfg = self.config
        self.nand = NandArray(cfg.geometry)
        if cfg.logging:
            self.log = OperationLog(cfg.seal_max_entries, cfg.seal_max_age_ns)
        else:
            self.log = SequenceOnlyLog()
        self.ftl = FlashTranslationLayer(
            self.nand, self.log, cfg.policy,
            over_provisioning=cfg.over_provisioning,
            retention=cfg.retention,
            log_reads=cfg.log_reads,
        )
        self.offload = None
        if link is not None:
            self.attach_vault(link, key)

    def attach_vault(self, link, key):
        cfg = self.config
        if not (cfg.retention and cfg.logging):
            raise ValueError("offload needs both retention and logging enabled")
        if self.offload is None:
            self.offload = OffloadEngine(
                self.ftl, self.log, link, key,
                max_pages=cfg.segment_max_pages,
                compression=cfg.compression,
                archive_size=cfg.archive_size,
            )
        else:
            self.offload.attach(link, key)
        self.ftl.pressure_hook = self.offload.relieve_pressure
        self.ftl.background_hook = self.offload.pump

    @property
    def vault_attached(self):
        return self.offload is not None and self.offload.link is not None

    def host(self):
        return HostPort(self.ftl)

    @property
    def now(self):
        return self.ftl.now

    def tick(self, timestamp):
        """Let simulated time pass with no host command: age-based sealing and offload."""
        with self.ftl.lock:
            now = self.ftl.advance_clock(timestamp)
            entries = self.log.unsealed_entries()
            if entries and now - entries[0].timestamp >= self.log.seal_max_age_ns:
                self.log.seal_segment()
        if self.vault_attached:
            self.offload.pump()

    def flush(self):
        if self.vault_attached:
            self.offload.flush()

    def force_gc(self):
        return self.ftl.garbage_collect(force=True)

    def wear(self):
        return self.nand.wear_report()

    def save_snapshot(self, path):
        tmp = f"{path}.tmp"
        with open(tmp, 'wb') as f:
            pickle.dump(self, f, protocol=pickle.HIGHEST_PROTOCOL)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
        logger.info("device snapshot written to %s", path)

    @classmethod
    def load_snapshot(cls, path, link=None, key=None):
        with open(path, 'rb') as f:
            device = pickle.load(f)
        if not isinstance(device, cls):
            raise ValueError(f"{path} does not hold a device snapshot")
        if link is not None and device.offload is not None:
            device.attach_vault(link, key)
        return device
