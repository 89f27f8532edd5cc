from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from rssd.exceptions import RSSDError, TamperDetected
from rssd.experiments import forensics
from rssd.management.base import USAGE_ERROR
from rssd.reports import chain_verdict
from rssd.runconfig import RunConfig


class Command(BaseCommand):
    help = 'Rebuild and verify the evidence chain of a completed run'

    def add_arguments(self, parser):
        parser.add_argument('run_dir', help='Directory written by simulate or attack')
        parser.add_argument('--window', nargs=2, type=int, metavar=('FIRST_SEQ', 'LAST_SEQ'),
                            help='Sequence window (default: the whole run)')
        parser.add_argument('--lpa', type=int, action='append', default=[],
                            help='Also write the version history of this lpa (repeatable)')

    def handle(self, *args, **options):
        try:
            config = RunConfig.from_run_dir(options['run_dir'])
        except ValidationError as exc:
            raise CommandError('; '.join(exc.messages), returncode=USAGE_ERROR)
        window = tuple(options['window']) if options['window'] else None
        try:
            result = forensics(config, options['run_dir'], window, options['lpa'])
        except TamperDetected as exc:
            raise CommandError(f"tamper detected at seq {exc.seq}: {exc}")
        except ValidationError as exc:
            raise CommandError('; '.join(exc.messages), returncode=USAGE_ERROR)
        except (RSSDError, OSError) as exc:
            raise CommandError(f"{type(exc).__name__}: {exc}")

        chain = result.chain
        self.stdout.write(f'seq {chain.first_seq}-{chain.last_seq}: {len(chain.entries)} entries')
        if result.agreement is not None:
            self.stdout.write(f'order agreement: {result.agreement.matched}/{result.agreement.expected}')
            attack_ops = [a for a in chain.host_ops() if a.phase and a.phase.startswith('attack')]
            self.stdout.write(f'attack operations: {len(attack_ops)}')
        for history in result.backtracks:
            self.stdout.write(f'lpa {history.lpa}: {len(history)} versions')
        verdict = chain_verdict(chain)
        if not chain.replay_ok:
            raise CommandError(f'evidence chain {verdict}')
        self.stdout.write(self.style.SUCCESS(verdict))
