"""Shared fixtures for the rssd tests."""
import os
import random
import shutil
import tempfile

from rssd.device import DeviceConfig, RansomwareAwareSSD
from rssd.frames import COMPRESSION_ZLIB, DeviceKey, frame_segment_id
from rssd.nand import UNIT_GEOMETRY
from rssd.oplog import ENTRY_SIZE
from rssd.protocol import IngestReply
from rssd.segments import HEADER, LOGSEG_HEADER, RECORD_HEADER, parse_segment
from rssd.transport import LocalVaultLink
from rssd.vault import VaultStore

ACCEPTANCE = os.environ.get('RSSD_ACCEPTANCE') == '1'
PAGE = UNIT_GEOMETRY.page_size


def scaled(quick, full):
    """Iteration count: quick by default, the full figure with RSSD_ACCEPTANCE=1."""
    return full if ACCEPTANCE else quick


def page(value, size=PAGE):
    return random.Random(value).randbytes(size)


def unit_config(**overrides):
    options = {
        'geometry': UNIT_GEOMETRY,
        'seal_max_entries': 64,
        'segment_max_pages': 16,
        'compression': COMPRESSION_ZLIB,
    }
    options.update(overrides)
    return DeviceConfig(**options)


def unit_device(link=None, key=None, **overrides):
    return RansomwareAwareSSD(unit_config(**overrides), link, key)


class CaptureLink:
    """Acknowledges every frame without a vault and keeps them in order."""

    def __init__(self):
        self.frames = []

    def send_frame(self, frame):
        self.frames.append(frame)
        return IngestReply.ack(frame_segment_id(frame))

    def close(self):
        pass


def captured_frames(key, writes, segment_max_pages=4, overwrite=True):
    """Frames a unit device ships after writing lpas 0..writes-1 (twice when overwrite)."""
    link = CaptureLink()
    device = unit_device(link, key, segment_max_pages=segment_max_pages)
    host = device.host()
    t = 0
    for round_ in range(2 if overwrite else 1):
        for lpa in range(writes):
            t += 1000
            host.write(lpa, page(f"{key.fingerprint}-{round_}-{lpa}"), t)
    device.flush()
    return link.frames


class TempDirMixin:

    def setUp(self):
        super().setUp()
        self.tmp = tempfile.mkdtemp(prefix='rssd-test-')

    def tearDown(self):
        shutil.rmtree(self.tmp, ignore_errors=True)
        super().tearDown()


class VaultMixin(TempDirMixin):
    """A fresh vault directory and key per test."""

    def setUp(self):
        super().setUp()
        self.key = DeviceKey.generate()
        self.vault_root = os.path.join(self.tmp, 'vault')
        self.store = VaultStore(self.vault_root, self.key)
        self.link = LocalVaultLink(self.store)

    def reopen(self, **kwargs):
        self.store = VaultStore(self.vault_root, self.key, **kwargs)
        self.link = LocalVaultLink(self.store)
        return self.store


def owner_spans(raw):
    """(end offset, owning seq) for every region of a serialized segment, in file order."""
    segment = parse_segment(raw)
    pos = HEADER.size
    spans = [(pos, segment.first_seq)]
    for record in segment.page_records:
        pos += RECORD_HEADER.size + len(record.data)
        spans.append((pos, record.write_seq))
    for logseg in segment.log_segments:
        pos += LOGSEG_HEADER.size
        spans.append((pos, logseg.first_seq))
        for entry in logseg.entries:
            pos += ENTRY_SIZE
            spans.append((pos, entry.seq))
    return spans


def owner_of(spans, offset):
    for end, seq in spans:
        if offset < end:
            return seq
    raise ValueError(f"offset {offset} is past the end of the segment")
