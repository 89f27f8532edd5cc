from django.core.management.base import CommandError

from rssd.experiments import simulate
from rssd.management.base import RunCommand


class Command(RunCommand):
    help = 'Replay a benign trace on the simulated SSD and check retention against the shadow oracle'
    run_name = 'simulate'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--paired', action='store_true',
                            help='Also run with logging and retention off and write overhead.csv')

    def run(self, config, options):
        self.stdout.write(f'Simulating into {config.output_dir}...')
        result, baseline = simulate(config, paired=options['paired'])
        r = result.report
        self.stdout.write(f'  {r.ops} ops ({r.writes} writes, {r.trims} trims, {r.reads} reads), '
                          f'{r.ops_per_second:.0f} ops/s')
        if baseline is not None:
            self.stdout.write(f'  baseline {baseline.report.ops_per_second:.0f} ops/s, '
                              f'{baseline.total_erases} erases vs {result.total_erases}')
        if result.checked and not result.ok:
            raise CommandError(f'retention: FAILED, see {config.output_dir}/problems.txt')
        label = 'OK' if result.checked else 'NOT CHECKED'
        self.stdout.write(self.style.SUCCESS(f'retention: {label}'))
