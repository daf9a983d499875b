"""
Shared plumbing for the experiment commands: exit codes, dataset and model
loading, flag validation and the run manifest written beside every output.
"""
import logging
import sys
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError, CommandParser
from django.utils import timezone
from rest_framework import serializers

import sgplab
from data.idx import load_idx
from data.storage import METADATA_FILE, load_dataset_dir
from nn.persistence import load_model
from sgplab.exceptions import (
    DepthExceededError,
    InvalidArgumentError,
    ToolkitError,
    UnsupportedArchitectureError,
)
from .manifest import RunManifest, command_line, manifest_path_for, write_manifest

logger = logging.getLogger(__name__)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_INFEASIBLE = 3

IDX_IMAGES = 'images.idx'
IDX_LABELS = 'labels.idx'

DJANGO_OPTIONS = {'verbosity', 'settings', 'pythonpath', 'traceback', 'no_color', 'force_color', 'skip_checks'}


def exit_code_for(error) -> int:
    if isinstance(error, (DepthExceededError, UnsupportedArchitectureError)):
        return EXIT_INFEASIBLE
    if isinstance(error, (InvalidArgumentError, serializers.ValidationError)):
        return EXIT_USAGE
    return EXIT_DATA


class ExperimentParser(CommandParser):
    """Usage errors exit with status 1 instead of argparse's 2"""

    def error(self, message):
        if self.called_from_command_line:
            self.print_usage(sys.stderr)
            self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")
        raise CommandError(f"Error: {message}", returncode=EXIT_USAGE)


class ExperimentCommand(BaseCommand):
    """
    Base class of the sgplab verbs.

    Subclasses implement run(**options), returning the output file or
    directory the manifest belongs to, and call record_input/record_output
    for every file they read or write.
    """

    requires_system_checks = []

    @property
    def verb(self) -> str:
        return type(self).__module__.rsplit('.', 1)[-1]

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.__class__ = ExperimentParser
        return parser

    def execute(self, *args, **options):
        try:
            return super().execute(*args, **options)
        except (ToolkitError, FileNotFoundError, serializers.ValidationError) as e:
            message = str(e.detail if isinstance(e, serializers.ValidationError) else e)
            logger.error(f"{self.verb} failed: {message}")
            raise CommandError(message, returncode=exit_code_for(e)) from e

    def handle(self, *args, **options):
        self.inputs, self.outputs = [], []
        started_at = timezone.now()
        flags = {name: value for name, value in options.items() if name not in DJANGO_OPTIONS}
        target = self.run(**options)
        manifest = RunManifest(
            command=self.verb,
            options=flags,
            master_seed=options.get('seed'),
            toolkit_version=sgplab.__version__,
            inputs=[str(path) for path in self.inputs],
            outputs=[str(path) for path in self.outputs],
            started_at=started_at,
            finished_at=timezone.now(),
            arguments=command_line(self.create_parser('manage.py', self.verb), flags),
        )
        write_manifest(manifest, manifest_path_for(target))

    def run(self, **options):
        raise NotImplementedError('subclasses of ExperimentCommand must provide a run() method')

    def record_input(self, path):
        self.inputs.append(Path(path))

    def record_output(self, path):
        self.outputs.append(Path(path))
        return path

    def validated(self, serializer_class, data, **context):
        serializer = serializer_class(data=data, context=context)
        serializer.is_valid(raise_exception=True)
        return serializer.save()

    def load_dataset(self, path, split=None):
        """A dataset directory, its <split>/ subdirectory, or an images.idx/labels.idx pair"""
        path = Path(path)
        if split and (path / split / METADATA_FILE).exists():
            path = path / split
        self.record_input(path)
        if (path / METADATA_FILE).exists():
            return load_dataset_dir(path)
        if (path / IDX_IMAGES).exists():
            return load_idx(path / IDX_IMAGES, path / IDX_LABELS)
        raise FileNotFoundError(f"{path} holds neither {METADATA_FILE} nor {IDX_IMAGES}")

    def load_model(self, path):
        self.record_input(path)
        return load_model(path)
