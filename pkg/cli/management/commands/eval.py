from pathlib import Path

from django.utils import timezone

import sgplab
from cli.archives import load_archive
from cli.base import ExperimentCommand
from evalharness.defenses import ADV_TRAINED, NONE, DefenseWrapper
from evalharness.metrics import count_successes
from evalharness.reports import CSV, MARKDOWN, EvalReport, ReportRow, write_report
from sgplab.exceptions import InvalidArgumentError


class Command(ExperimentCommand):
    help = 'Score adversarial archives against target models and defenses'

    def add_arguments(self, parser):
        parser.add_argument('--adv', type=Path, action='append', required=True, help='Archive directory; repeatable')
        parser.add_argument('--target', type=Path, action='append', default=[], help='Target model; repeatable')
        parser.add_argument('--adv-trained', type=Path, action='append', default=[],
                            help='Adversarially trained target model; repeatable')
        parser.add_argument('--defense', action='append', default=[],
                            help="Input defense applied to every --target: 'none', 'blur:SIGMA' or 'bitdepth:BITS'")
        parser.add_argument('--unfiltered', action='store_true',
                            help='Count every example, not only those the clean target classifies correctly')
        parser.add_argument('--format', choices=[CSV, MARKDOWN], default=CSV)
        parser.add_argument('--out', type=Path, required=True, help='Report path')

    def targets(self, options):
        targets = []
        for path in options['target']:
            model = self.load_model(path)
            for spec in options['defense'] or [NONE]:
                targets.append(DefenseWrapper.parse(model, path.stem, spec))
        for path in options['adv_trained']:
            targets.append(DefenseWrapper(self.load_model(path), ADV_TRAINED, name=path.stem))
        return targets

    def run(self, **options):
        targets = self.targets(options)
        if not targets:
            raise InvalidArgumentError('at least one --target or --adv-trained model is required')
        filter_clean = not options['unfiltered']

        report = EvalReport(metadata={
            'toolkit_version': sgplab.__version__,
            'created_at': timezone.now().isoformat(),
            'filter_clean': filter_clean,
            'archives': [],
            'targets': [target.id for target in targets],
        })
        for path in options['adv']:
            self.record_input(path)
            archive = load_archive(path)
            report.metadata['archives'].append({'path': str(path), **{
                key: archive.metadata.get(key) for key in ('surrogate', 'attack', 'config', 'models')
            }})
            for target in targets:
                counts = count_successes(target, archive.records, filter_clean)
                report.rows.append(ReportRow(archive.surrogate, archive.attack, target.id, counts.n, counts.fooled))

        out = options['out']
        self.record_output(write_report(report, out, options['format']))
        self.record_output(out.with_suffix('.json'))
        for row in report.rows:
            self.stdout.write(f"{row.surrogate} / {row.attack} -> {row.target}: {row.rate:.4f}")
        return out
