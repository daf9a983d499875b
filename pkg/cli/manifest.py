"""
Run manifests: the verb, every flag, the master seed, the toolkit version,
the files read and written, and start/end timestamps of one command run.
"""
import json
import logging
from argparse import _AppendAction
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.json'


def command_line(parser, options) -> List[str]:
    """
    Tokens that make parser reproduce options.

    Flags come from the parser's own actions, so dests like class_idx map
    back to --class. Repeatable flags are repeated; other list values were
    parsed from one comma list and are joined again.
    """
    tokens = []
    for action in parser._actions:
        if not action.option_strings or action.dest not in options:
            continue
        value = options[action.dest]
        if value is None or value is False or value == []:
            continue
        flag = next((s for s in action.option_strings if s.startswith('--')), action.option_strings[0])
        if value is True:
            tokens.append(flag)
        elif isinstance(action, _AppendAction):
            for item in value:
                tokens += [flag, str(item)]
        elif isinstance(value, (list, tuple)):
            tokens += [flag, ','.join(str(item) for item in value)]
        else:
            tokens += [flag, str(value)]
    return tokens


@dataclass
class RunManifest:
    command: str
    options: Dict
    master_seed: Optional[int]
    toolkit_version: str
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    started_at: Optional[datetime] = None
    finished_at: Optional[datetime] = None
    arguments: List[str] = field(default_factory=list)

    def argv(self) -> List[str]:
        """Command-line tokens that repeat this run"""
        return [self.command, *self.arguments]

    def as_json(self) -> str:
        from .serializers import RunManifestSerializer

        return json.dumps(RunManifestSerializer(self).data, indent=2, sort_keys=True) + '\n'


def manifest_path_for(output) -> Path:
    """manifest.json inside an output directory, <stem>.manifest.json beside an output file"""
    output = Path(output)
    if output.is_dir() or not output.suffix:
        return output / MANIFEST_NAME
    return output.with_name(f'{output.stem}.manifest.json')


def write_manifest(manifest: RunManifest, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(manifest.as_json())
    logger.info(f"Wrote run manifest {path}")
    return path


def read_manifest(path) -> RunManifest:
    from .serializers import RunManifestSerializer

    serializer = RunManifestSerializer(data=json.loads(Path(path).read_text()))
    serializer.is_valid(raise_exception=True)
    return serializer.save()
