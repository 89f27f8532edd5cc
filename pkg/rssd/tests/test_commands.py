import csv
import glob
import os
import socket
import threading
from io import StringIO

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase, TransactionTestCase, override_settings

from rssd.reports import read_jsonl, read_summary
from rssd.segments import parse_segment
from rssd.server import VaultServer
from rssd.vault import segment_file_name

from .support import TempDirMixin, VaultMixin

SMALL = ['--geometry', '1,1,16,8,64', '--ops', '150']


def read_rows(path):
    with open(path, newline='') as f:
        return list(csv.reader(f))


@override_settings(RSSD_DEVICE_KEY='', RSSD_VAULT_MODE='local', RSSD_VAULT_ROOT='', RSSD_SEED=1)
class CommandTests(TempDirMixin, TestCase):

    def call(self, name, *args):
        out = StringIO()
        call_command(name, *args, stdout=out)
        return out.getvalue()

    def run_dir(self, name):
        return os.path.join(self.tmp, name)

    def attack(self, name, *args):
        out = self.run_dir(name)
        self.call('attack', *SMALL, '--output-dir', out, *args)
        return out

    # simulate

    def test_simulate(self):
        out = self.run_dir('sim')
        stdout = self.call('simulate', *SMALL, '--output-dir', out)
        self.assertIn('retention: OK', stdout)
        summary = read_summary(out)
        self.assertEqual((summary['retention'], summary['ops']), ('OK', '150'))
        for name in ('throughput.csv', 'device.snapshot', 'run_config.env', os.path.join('vault', 'device.key')):
            self.assertTrue(os.path.exists(os.path.join(out, name)), name)
        self.assertFalse(os.path.exists(os.path.join(out, 'problems.txt')))

    def test_simulate_paired(self):
        out = self.run_dir('paired')
        self.call('simulate', *SMALL, '--output-dir', out, '--paired')
        header, row = read_rows(os.path.join(out, 'overhead.csv'))
        self.assertEqual(header[2], 'throughput_delta_pct')
        self.assertEqual(float(row[header.index('wear_bound')]), 1.5)
        self.assertTrue(os.path.exists(os.path.join(out, 'throughput_baseline.csv')))
        self.assertIn('wear ratio', read_summary(out))

    def test_retention_stays_within_the_wear_bound(self):
        out = self.run_dir('wear')
        self.call('simulate', '--geometry', '1,1,16,8,64', '--ops', '3000', '--output-dir', out, '--paired')
        header, row = read_rows(os.path.join(out, 'overhead.csv'))
        column = dict(zip(header, row))
        self.assertGreater(int(column['baseline_block_erases']), 0)
        self.assertLessEqual(float(column['wear_ratio']), float(column['wear_bound']))

    def test_simulate_without_retention_is_not_checked(self):
        out = self.run_dir('conventional')
        stdout = self.call('simulate', *SMALL, '--output-dir', out, '--no-retention', '--vault-mode', 'disabled')
        self.assertIn('retention: NOT CHECKED', stdout)

    def test_bad_configuration_exits_with_usage_error(self):
        cases = [
            ['--over-provisioning', '0.01'],
            ['--geometry', '1,2'],
            ['--trace', self.run_dir('missing.trace')],
            ['--no-retention'],
        ]
        for args in cases:
            with self.subTest(args=args), self.assertRaises(CommandError) as caught:
                self.call('simulate', *SMALL, '--output-dir', self.run_dir('bad'), *args)
            self.assertEqual(caught.exception.returncode, 2)

    def test_run_directory_is_not_reused(self):
        out = self.run_dir('once')
        self.call('simulate', *SMALL, '--output-dir', out)
        with self.assertRaises(CommandError) as caught:
            self.call('simulate', *SMALL, '--output-dir', out)
        self.assertEqual(caught.exception.returncode, 2)

    def test_config_file_overrides_flags(self):
        config = os.path.join(self.tmp, 'run.env')
        with open(config, 'w') as f:
            f.write('OPS=40\nSEED=4\n')
        out = self.run_dir('from-file')
        self.call('simulate', *SMALL, '--output-dir', out, '--config', config)
        summary = read_summary(out)
        self.assertEqual((summary['ops'], summary['seed']), ('40', '4'))

    # attack

    def test_trimming_attack_is_recovered(self):
        out = self.attack('trim', '--attack', 'trimming')
        summary = read_summary(out)
        self.assertEqual(summary['verdict'], 'RECOVERED(100%)')
        self.assertEqual(summary['evidence chain'], 'VERIFIED')
        self.assertEqual(summary['order agreement'], '100.0%')
        records = read_jsonl(os.path.join(out, 'attack_report.jsonl'))
        self.assertEqual(records[0]['record'], 'run')
        victims = [r for r in records if r['record'] == 'victim']
        self.assertEqual(len(victims), records[0]['victims'])
        self.assertTrue(all(r['recovered'] for r in victims))
        self.assertEqual({r['detector'] for r in records if r['record'] == 'detector'},
                         {'overwrite-burst', 'trim-after-overwrite'})
        self.assertEqual(len(glob.glob(os.path.join(out, 'evidence-*.txt'))), 1)
        self.assertTrue(os.path.exists(os.path.join(out, 'ground_truth.csv')))

    def test_gc_attack_on_a_conventional_drive_loses_data(self):
        out = self.attack('gc-ablation', '--attack', 'gc', '--ablation')
        summary = read_summary(out)
        self.assertTrue(summary['verdict'].startswith('LOST '), summary['verdict'])
        self.assertFalse(os.path.exists(os.path.join(out, 'vault')))

    def test_attack_needs_a_kind(self):
        with self.assertRaises(CommandError):
            self.call('attack', *SMALL, '--output-dir', self.run_dir('none'))

    # forensics

    def test_forensics_verifies_an_attack_run(self):
        out = self.attack('for-forensics', '--attack', 'trimming', '--trimming-mode', 'in_place')
        stdout = self.call('forensics', out, '--lpa', '3', '--lpa', '4')
        self.assertIn('VERIFIED', stdout)
        self.assertIn('order agreement', stdout)
        self.assertTrue(os.path.exists(os.path.join(out, 'backtrack.txt')))
        self.assertEqual({r['lpa'] for r in read_jsonl(os.path.join(out, 'backtrack.jsonl'))}, {3, 4})

    def test_forensics_window(self):
        out = self.attack('window', '--attack', 'timing', '--ops-per-minute', '600')
        self.call('forensics', out, '--window', '5', '20')
        self.assertTrue(os.path.exists(os.path.join(out, 'evidence-5-20.txt')))

    def test_forensics_reports_a_tampered_vault(self):
        out = self.attack('tampered', '--attack', 'trimming')
        path = os.path.join(out, 'vault', segment_file_name(1))
        with open(path, 'rb') as f:
            raw = f.read()
        last_seq = parse_segment(raw).last_seq
        with open(path, 'wb') as f:
            f.write(raw[:-1] + bytes([raw[-1] ^ 0x01]))
        with self.assertRaises(CommandError) as caught:
            self.call('forensics', out)
        self.assertEqual(caught.exception.returncode, 1)
        self.assertIn(f'seq {last_seq}', str(caught.exception))

    def test_forensics_needs_a_run_directory(self):
        with self.assertRaises(CommandError) as caught:
            self.call('forensics', self.tmp)
        self.assertEqual(caught.exception.returncode, 2)

    # retention

    def test_retention_with_vault_reaches_day_zero(self):
        out = self.run_dir('ret')
        self.call('retention', *SMALL, '--output-dir', out, '--days', '3')
        header, *rows = read_rows(os.path.join(out, 'retention.csv'))
        self.assertEqual(header[:2], ['day', 'oldest_restorable_version_age_days'])
        self.assertEqual([(r[0], r[1]) for r in rows], [('1', '1'), ('2', '2'), ('3', '3')])
        self.assertEqual(read_summary(out)['retention'], 'OK')

    def test_retention_zero_days(self):
        out = self.run_dir('ret0')
        self.call('retention', *SMALL, '--output-dir', out, '--days', '0')
        self.assertEqual(len(read_rows(os.path.join(out, 'retention.csv'))), 1)

    def test_retention_without_vault_is_capped(self):
        out = self.run_dir('ret-capped')
        self.call('retention', *SMALL, '--output-dir', out, '--days', '2', '--vault-mode', 'disabled')
        rows = read_rows(os.path.join(out, 'retention.csv'))[1:]
        self.assertGreater(int(rows[-1][4]), 0)
        self.assertEqual(read_summary(out)['retention'], 'CAPPED')

    # vault_serve

    def test_vault_serve_on_a_busy_port(self):
        with socket.socket() as blocker:
            blocker.bind(('127.0.0.1', 0))
            blocker.listen()
            with self.assertRaises(CommandError) as caught:
                self.call('vault_serve', '--host', '127.0.0.1', '--port', str(blocker.getsockname()[1]),
                          '--vault-root', self.run_dir('served'))
        self.assertEqual(caught.exception.returncode, 1)
        self.assertTrue(os.path.exists(os.path.join(self.run_dir('served'), 'device.key')))

    def test_vault_serve_with_a_missing_key_file(self):
        with self.assertRaises(CommandError) as caught:
            self.call('vault_serve', '--port', '0', '--vault-root', self.run_dir('served'),
                      '--key-file', self.run_dir('absent.key'))
        self.assertEqual(caught.exception.returncode, 2)


@override_settings(RSSD_VAULT_ROOT='', RSSD_SEED=1)
class RemoteVaultCommandTests(VaultMixin, TransactionTestCase):

    def setUp(self):
        super().setUp()
        self.server = VaultServer(('127.0.0.1', 0), self.store)
        threading.Thread(target=self.server.serve_forever, kwargs={'poll_interval': 0.05}, daemon=True).start()

    def tearDown(self):
        self.server.shutdown()
        self.server.server_close()
        super().tearDown()

    def call(self, name, *args):
        out = StringIO()
        with self.settings(RSSD_DEVICE_KEY=self.key.hex()):
            call_command(name, *args, stdout=out)
        return out.getvalue()

    def test_simulate_and_forensics_against_a_served_vault(self):
        out = os.path.join(self.tmp, 'remote-run')
        self.call('simulate', *SMALL, '--output-dir', out, '--vault-mode', 'remote',
                  '--vault-host', '127.0.0.1', '--vault-port', str(self.server.port))
        self.assertEqual(read_summary(out)['retention'], 'OK')
        self.assertFalse(os.path.exists(os.path.join(out, 'vault')))
        status = self.store.status()
        self.assertGreater(status.segments, 0)
        with open(os.path.join(out, 'run_config.env')) as f:
            archived = f.read()
        self.assertIn(f'DEVICE_KEY_FINGERPRINT={self.key.fingerprint}', archived)
        self.assertNotIn(self.key.hex(), archived)

        stdout = self.call('forensics', out)
        self.assertIn('VERIFIED', stdout)
        self.assertTrue(os.path.exists(os.path.join(out, f'evidence-1-{status.last_seq}.txt')))

    def test_remote_mode_without_a_key_is_a_usage_error(self):
        with self.settings(RSSD_DEVICE_KEY=''), self.assertRaises(CommandError) as caught:
            call_command('simulate', *SMALL, '--output-dir', os.path.join(self.tmp, 'nokey'),
                         '--vault-mode', 'remote', stdout=StringIO())
        self.assertEqual(caught.exception.returncode, 2)
