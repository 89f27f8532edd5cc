from rssd.experiments import attack
from rssd.harness import ATTACKS
from rssd.management.base import RunCommand
from rssd.runconfig import TRIMMING_MODES


class Command(RunCommand):
    help = 'Run one of the three attacks, restore the victims and report whether anything was lost'
    run_name = 'attack'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--attack', choices=ATTACKS, required=True)
        parser.add_argument('--ablation', action='store_const', const=True,
                            help='Run against a conventional FTL (retention off, no vault)')
        parser.add_argument('--victim-fraction', type=float)
        parser.add_argument('--fill-fraction', type=float, help='gc attack: share of logical space to fill')
        parser.add_argument('--attack-rate', type=float, help='gc/trimming attack: pages per second')
        parser.add_argument('--ops-per-minute', type=float, help='timing attack: encrypt-overwrites per minute')
        parser.add_argument('--trimming-mode', choices=TRIMMING_MODES)

    def run(self, config, options):
        self.stdout.write(f'Running {config.attack} attack into {config.output_dir}...')
        result = attack(config)
        self.stdout.write(f'  {len(result.victims)} victims, {result.run.report.ops} attack ops, '
                          f'{result.erases_during_attack} block erases')
        if result.chain is not None:
            self.stdout.write(f'  evidence chain {"verified" if result.chain.verified else "BROKEN"}, '
                              f'order agreement {result.agreement.fraction:.1%}')
        style = self.style.SUCCESS if result.recovered else self.style.WARNING
        self.stdout.write(style(f'verdict: {result.verdict}'))
