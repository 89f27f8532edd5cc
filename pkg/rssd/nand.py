"""Raw NAND flash array: program/erase semantics and wear accounting.

The array knows nothing about mapping or retention. It enforces the
write-once rule (a page is programmed at most once between two erases of
its block) and hands back exactly the bytes that were programmed.
"""
import enum
import logging
import os
import pickle
import threading
from dataclasses import dataclass

from .exceptions import BadAddress, BadLength, ProgramOnProgrammed, ReadErased

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Geometry:
    channels: int
    chips_per_channel: int
    blocks_per_chip: int
    pages_per_block: int
    page_size: int

    def __post_init__(self):
        for name in ('channels', 'chips_per_channel', 'blocks_per_chip', 'pages_per_block'):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.page_size < 16 or self.page_size & (self.page_size - 1):
            raise ValueError("page_size must be a power of two and at least 16")

    @classmethod
    def parse(cls, text):
        """Build a geometry from "channels,chips,blocks,pages,page_size"."""
        parts = [int(p) for p in str(text).replace('x', ',').split(',') if p.strip()]
        if len(parts) != 5:
            raise ValueError("geometry needs five comma-separated integers")
        return cls(*parts)

    def __str__(self):
        return (f"{self.channels},{self.chips_per_channel},{self.blocks_per_chip},"
                f"{self.pages_per_block},{self.page_size}")

    @property
    def total_blocks(self):
        return self.channels * self.chips_per_channel * self.blocks_per_chip

    @property
    def total_pages(self):
        return self.total_blocks * self.pages_per_block

    @property
    def capacity_bytes(self):
        return self.total_pages * self.page_size

    def block_number(self, channel, chip, block):
        if not (0 <= channel < self.channels and 0 <= chip < self.chips_per_channel
                and 0 <= block < self.blocks_per_chip):
            raise BadAddress(f"block ({channel},{chip},{block}) outside geometry")
        return (channel * self.chips_per_channel + chip) * self.blocks_per_chip + block

    def block_address(self, number):
        """Inverse of block_number: flat block index -> (channel, chip, block)."""
        chip_index, block = divmod(number, self.blocks_per_chip)
        channel, chip = divmod(chip_index, self.chips_per_channel)
        return channel, chip, block

    def page_number(self, addr):
        if not 0 <= addr.page < self.pages_per_block:
            raise BadAddress(f"page {addr} outside geometry")
        return self.block_number(addr.channel, addr.chip, addr.block) * self.pages_per_block + addr.page

    def page_address(self, number):
        block_number, page = divmod(number, self.pages_per_block)
        channel, chip, block = self.block_address(block_number)
        return PhysPageAddr(channel, chip, block, page)


DESK_GEOMETRY = Geometry(2, 2, 128, 64, 4096)
UNIT_GEOMETRY = Geometry(1, 1, 16, 8, 64)


@dataclass(frozen=True, order=True)
class PhysPageAddr:
    channel: int
    chip: int
    block: int
    page: int

    def __str__(self):
        return f"{self.channel}:{self.chip}:{self.block}:{self.page}"


class RawPageState(enum.Enum):
    ERASED = 'erased'
    PROGRAMMED = 'programmed'


@dataclass(frozen=True)
class WearCounters:
    erase_counts: tuple
    total_programs: int
    total_erases: int

    @property
    def max_erase_count(self):
        return max(self.erase_counts, default=0)


class NandArray:
    """In-memory page store. Mutations are serialized by the caller."""

    def __init__(self, geometry):
        self.geometry = geometry
        self._pages = [None] * geometry.total_pages
        self._erase_counts = [0] * geometry.total_blocks
        self._total_programs = 0
        self._total_erases = 0
        self._lock = threading.Lock()

    def __getstate__(self):
        state = self.__dict__.copy()
        del state['_lock']
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.Lock()

    def program_page(self, addr, data):
        index = self.geometry.page_number(addr)
        if len(data) != self.geometry.page_size:
            raise BadLength(f"page data is {len(data)} bytes, expected {self.geometry.page_size}")
        if self._pages[index] is not None:
            raise ProgramOnProgrammed(f"page {addr} already programmed")
        with self._lock:
            self._pages[index] = bytes(data)
            self._total_programs += 1

    def read_page(self, addr):
        data = self._pages[self.geometry.page_number(addr)]
        if data is None:
            raise ReadErased(f"page {addr} is erased")
        return data

    def page_state(self, addr):
        if self._pages[self.geometry.page_number(addr)] is None:
            return RawPageState.ERASED
        return RawPageState.PROGRAMMED

    def erase_block(self, channel, chip, block):
        number = self.geometry.block_number(channel, chip, block)
        ppb = self.geometry.pages_per_block
        start = number * ppb
        with self._lock:
            self._pages[start:start + ppb] = [None] * ppb
            self._erase_counts[number] += 1
            self._total_erases += 1

    def erase_count(self, block_number):
        return self._erase_counts[block_number]

    def wear_report(self):
        with self._lock:
            return WearCounters(
                erase_counts=tuple(self._erase_counts),
                total_programs=self._total_programs,
                total_erases=self._total_erases,
            )

    def save_snapshot(self, path):
        """Write the page store to path atomically."""
        tmp = f"{path}.tmp"
        with open(tmp, 'wb') as f:
            pickle.dump(self, f, protocol=pickle.HIGHEST_PROTOCOL)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
        logger.debug("nand snapshot written to %s", path)

    @classmethod
    def load_snapshot(cls, path):
        with open(path, 'rb') as f:
            array = pickle.load(f)
        if not isinstance(array, cls):
            raise ValueError(f"{path} does not hold a NAND snapshot")
        return array
