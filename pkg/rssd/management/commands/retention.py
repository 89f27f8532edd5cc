from rssd.experiments import retention
from rssd.management.base import RunCommand


class Command(RunCommand):
    help = 'Replay a daily overwrite workload for N simulated days and emit retention.csv'
    run_name = 'retention'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--days', type=int, required=True)
        parser.add_argument('--daily-passes', type=float,
                            help='Times the logical space is rewritten per day (default 2)')

    def run(self, config, options):
        self.stdout.write(f'Replaying {config.days} days into {config.output_dir}...')
        rows = retention(config, config.days)
        if rows:
            last = rows[-1]
            self.stdout.write(f'  day {last.day}: oldest restorable version {last.oldest_restorable_age} days old, '
                              f'{last.local_retained_pages} retained pages on device, {last.vault_bytes} vault bytes')
            if last.refused_writes:
                self.stdout.write(self.style.WARNING(f'  {last.refused_writes} writes refused, device full'))
        self.stdout.write(self.style.SUCCESS('retention.csv written'))
