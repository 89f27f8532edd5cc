"""Shared plumbing of the run commands: RunConfig flags and the 0/1/2 exit code contract."""
from pathlib import Path

from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError
from django.utils import timezone

from rssd.exceptions import RSSDError, TamperDetected
from rssd.frames import COMPRESSORS
from rssd.runconfig import VAULT_MODES, RunConfig

USAGE_ERROR = 2


class RunCommand(BaseCommand):
    """A command driven by a RunConfig. Subclasses implement run(config, options)."""

    run_name = 'run'

    def add_arguments(self, parser):
        group = parser.add_argument_group('run configuration')
        group.add_argument('--config', dest='config_file', help='KEY=VALUE run file; overrides the flags')
        group.add_argument('--output-dir', help='Run directory (default: RSSD_OUTPUT_DIR/<command>-<time>)')
        group.add_argument('--seed', type=int)
        group.add_argument('--geometry', help='channels,chips,blocks,pages,page_size')
        group.add_argument('--over-provisioning', type=float)
        group.add_argument('--gc-high-watermark', type=float)
        group.add_argument('--offload-watermark', type=float)
        group.add_argument('--seal-max-entries', type=int)
        group.add_argument('--seal-max-age-s', type=int)
        group.add_argument('--segment-max-pages', type=int)
        group.add_argument('--compression', choices=sorted(COMPRESSORS))
        group.add_argument('--no-logging', dest='logging', action='store_const', const=False)
        group.add_argument('--no-retention', dest='retention', action='store_const', const=False)
        group.add_argument('--log-reads', action='store_const', const=True)
        group.add_argument('--vault-mode', choices=VAULT_MODES)
        group.add_argument('--vault-host')
        group.add_argument('--vault-port', type=int)
        group.add_argument('--vault-root')
        group.add_argument('--key-file')
        group.add_argument('--trace', help='Trace file; a seeded benign trace is generated when omitted')
        group.add_argument('--ops', type=int, help='Length of the generated benign trace')
        group.add_argument('--ops-per-second', type=float)

    def load_config(self, options):
        try:
            config = RunConfig.layered(options, options.get('config_file'))
            if not config.output_dir:
                stamp = timezone.now().strftime('%Y%m%d-%H%M%S')
                config.output_dir = str(Path(settings.RSSD_OUTPUT_DIR) / f"{self.run_name}-{stamp}")
            return config.validate(command=self.run_name)
        except ValidationError as exc:
            raise CommandError('invalid configuration: ' + '; '.join(exc.messages), returncode=USAGE_ERROR)

    def handle(self, *args, **options):
        config = self.load_config(options)
        try:
            self.run(config, options)
        except TamperDetected as exc:
            raise CommandError(f"tamper detected at seq {exc.seq}: {exc}")
        except ValidationError as exc:
            raise CommandError('; '.join(exc.messages), returncode=USAGE_ERROR)
        except (RSSDError, OSError) as exc:
            raise CommandError(f"{type(exc).__name__}: {exc}")

    def run(self, config, options):
        raise NotImplementedError
