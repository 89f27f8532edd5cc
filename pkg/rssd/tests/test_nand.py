import os
import random

from django.test import SimpleTestCase

from rssd.exceptions import BadAddress, BadLength, ProgramOnProgrammed, ReadErased
from rssd.nand import DESK_GEOMETRY, UNIT_GEOMETRY, Geometry, NandArray, PhysPageAddr, RawPageState

from .support import TempDirMixin, page, scaled


class GeometryTests(SimpleTestCase):

    def test_desk_geometry_is_128_mib(self):
        self.assertEqual(DESK_GEOMETRY.capacity_bytes, 128 * 1024 * 1024)

    def test_parse_and_str(self):
        geometry = Geometry.parse('1,2,16,8,64')
        self.assertEqual(geometry, Geometry(1, 2, 16, 8, 64))
        self.assertEqual(str(geometry), '1,2,16,8,64')

    def test_parse_rejects_wrong_field_count(self):
        with self.assertRaises(ValueError):
            Geometry.parse('1,2,3')

    def test_page_size_must_be_power_of_two(self):
        with self.assertRaises(ValueError):
            Geometry(1, 1, 4, 8, 100)

    def test_page_numbering_inverts(self):
        addr = PhysPageAddr(0, 0, 5, 3)
        self.assertEqual(UNIT_GEOMETRY.page_address(UNIT_GEOMETRY.page_number(addr)), addr)


class NandArrayTests(TempDirMixin, SimpleTestCase):

    def setUp(self):
        super().setUp()
        self.nand = NandArray(UNIT_GEOMETRY)
        self.addr = PhysPageAddr(0, 0, 2, 1)

    def test_program_then_read(self):
        data = page(1)
        self.nand.program_page(self.addr, data)
        self.assertEqual(self.nand.read_page(self.addr), data)
        self.assertEqual(self.nand.page_state(self.addr), RawPageState.PROGRAMMED)

    def test_program_twice_is_refused(self):
        self.nand.program_page(self.addr, page(1))
        with self.assertRaises(ProgramOnProgrammed):
            self.nand.program_page(self.addr, page(2))
        self.assertEqual(self.nand.read_page(self.addr), page(1))

    def test_read_erased_page(self):
        with self.assertRaises(ReadErased):
            self.nand.read_page(self.addr)

    def test_erase_resets_block_and_counts_wear(self):
        self.nand.program_page(self.addr, page(1))
        self.nand.erase_block(0, 0, 2)
        self.assertEqual(self.nand.page_state(self.addr), RawPageState.ERASED)
        self.nand.program_page(self.addr, page(2))
        wear = self.nand.wear_report()
        self.assertEqual(wear.total_erases, 1)
        self.assertEqual(wear.total_programs, 2)
        self.assertEqual(wear.erase_counts[2], 1)
        self.assertEqual(wear.max_erase_count, 1)

    def test_out_of_geometry_address(self):
        with self.assertRaises(BadAddress):
            self.nand.program_page(PhysPageAddr(0, 0, 99, 0), page(1))
        with self.assertRaises(BadAddress):
            self.nand.erase_block(1, 0, 0)

    def test_wrong_length(self):
        with self.assertRaises(BadLength):
            self.nand.program_page(self.addr, b'short')

    def test_snapshot_round_trip(self):
        self.nand.program_page(self.addr, page(7))
        self.nand.erase_block(0, 0, 3)
        path = os.path.join(self.tmp, 'nand.snapshot')
        self.nand.save_snapshot(path)
        restored = NandArray.load_snapshot(path)
        self.assertEqual(restored.read_page(self.addr), page(7))
        self.assertEqual(restored.wear_report(), self.nand.wear_report())
        restored.program_page(PhysPageAddr(0, 0, 0, 0), page(8))


class RandomCommandTests(SimpleTestCase):

    def test_random_program_read_erase_against_a_model(self):
        geometry = Geometry(2, 2, 4, 4, 64)
        nand = NandArray(geometry)
        rng = random.Random(5)
        model = {}
        erases = [0] * geometry.total_blocks
        programs = 0
        for step in range(scaled(300, 1000)):
            addr = geometry.page_address(rng.randrange(geometry.total_pages))
            roll = rng.random()
            if roll < 0.5:
                data = page(step)
                if addr in model:
                    with self.assertRaises(ProgramOnProgrammed):
                        nand.program_page(addr, data)
                else:
                    nand.program_page(addr, data)
                    model[addr] = data
                    programs += 1
            elif roll < 0.85:
                if addr in model:
                    self.assertEqual(nand.read_page(addr), model[addr])
                else:
                    with self.assertRaises(ReadErased):
                        nand.read_page(addr)
            else:
                nand.erase_block(addr.channel, addr.chip, addr.block)
                number = geometry.block_number(addr.channel, addr.chip, addr.block)
                erases[number] += 1
                model = {a: d for a, d in model.items()
                         if geometry.block_number(a.channel, a.chip, a.block) != number}
        for number in range(geometry.total_pages):
            addr = geometry.page_address(number)
            expected = RawPageState.PROGRAMMED if addr in model else RawPageState.ERASED
            self.assertEqual(nand.page_state(addr), expected)
        wear = nand.wear_report()
        self.assertEqual(list(wear.erase_counts), erases)
        self.assertEqual(wear.total_programs, programs)
        self.assertEqual(wear.total_erases, sum(erases))
