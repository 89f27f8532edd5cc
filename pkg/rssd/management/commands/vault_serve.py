import logging
from pathlib import Path

from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from rssd.exceptions import BindFailed
from rssd.frames import DeviceKey
from rssd.management.base import USAGE_ERROR
from rssd.runconfig import KEY_FILE_NAME
from rssd.server import VaultServer
from rssd.vault import VaultStore

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Run the remote vault: ingest offload frames and answer recovery queries over TCP'

    def add_arguments(self, parser):
        parser.add_argument('--host', default=None)
        parser.add_argument('--port', type=int, default=None)
        parser.add_argument('--vault-root', default=None)
        parser.add_argument('--key-file', default=None,
                            help='Hex device key file (default: RSSD_DEVICE_KEY, else <vault-root>/device.key)')

    def handle(self, *args, **options):
        host = options['host'] or settings.RSSD_VAULT_HOST
        port = settings.RSSD_VAULT_PORT if options['port'] is None else options['port']
        root = Path(options['vault_root'] or settings.RSSD_VAULT_ROOT or Path(settings.BASE_DIR) / 'vault')
        try:
            key = self.load_key(root, options['key_file'])
        except (ValueError, ValidationError) as exc:
            raise CommandError(f'bad device key: {exc}', returncode=USAGE_ERROR)

        store = VaultStore(root, key)
        try:
            server = VaultServer((host, port), store)
        except BindFailed as exc:
            raise CommandError(str(exc))
        logger.info("vault listening on %s:%d, root %s, key %s", host, server.port, root, key.fingerprint)
        self.stdout.write(self.style.SUCCESS(f'Vault listening on {host}:{server.port} (key {key.fingerprint})'))
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            self.stdout.write('Shutting down...')
        finally:
            server.server_close()

    def load_key(self, root, key_file):
        if settings.RSSD_DEVICE_KEY:
            return DeviceKey.from_hex(settings.RSSD_DEVICE_KEY)
        path = Path(key_file) if key_file else root / KEY_FILE_NAME
        if path.exists():
            return DeviceKey.from_hex(path.read_text())
        if key_file:
            raise ValidationError(f'no key file at {path}')
        root.mkdir(parents=True, exist_ok=True)
        key = DeviceKey.generate()
        path.write_text(key.hex())
        path.chmod(0o600)
        self.stdout.write(f'Generated device key at {path}; give it to the device with --key-file')
        return key
