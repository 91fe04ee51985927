"""
Phase 1: Config Parser
Reads sectioned key=value files (and YAML equivalents) into a validated
PipelineConfig. Unknown sections and keys are hard errors.
"""

import re
from pathlib import Path
from typing import Any, Optional

import yaml
from pydantic import BaseModel, ValidationError

from .schemas import ConfigError, PipelineConfig


class SectionedTextParser:
    """
    Line-oriented reader for the sectioned key=value format.

    Recognized lines:
    - blank lines and '#' / ';' comments
    - [section] or [section name] headers (the optional name is kept)
    - key = value pairs

    Every value remembers the line it came from so that validation errors
    can be reported against the file.
    """

    PATTERNS = {
        'section': r'^\[\s*(?P<section>[A-Za-z_][\w-]*)(?:\s+(?P<label>[^\]]+?))?\s*\]$',
        'pair': r'^(?P<key>[A-Za-z_][\w.-]*)\s*=\s*(?P<value>.*)$',
    }
    # a comment marker opens the line or follows whitespace
    COMMENT = r'(?:^|\s)[#;].*$'

    def __init__(self, file_path: str | Path):
        self.file_path = Path(file_path)

        if not self.file_path.exists():
            raise FileNotFoundError(f"Config file not found: {self.file_path}")

    def _strip_comment(self, line: str) -> str:
        """Drop a '#' or ';' comment; a marker inside a token (a path, say) is kept."""
        return re.sub(self.COMMENT, '', line).strip()

    def parse(self) -> list[dict]:
        """
        Parse the file into blocks.

        Returns:
            List of {'section', 'label', 'line', 'values': {key: (value, line)}}
            in file order. Pairs before any header land in a block with
            section None.
        """
        blocks: list[dict] = []
        current = {'section': None, 'label': None, 'line': 0, 'values': {}}

        for line_no, raw in enumerate(self.file_path.read_text().splitlines(), start=1):
            line = self._strip_comment(raw)
            if not line:
                continue

            match = re.match(self.PATTERNS['section'], line)
            if match:
                if current['values'] or current['section'] is not None:
                    blocks.append(current)
                current = {
                    'section': match.group('section').lower(),
                    'label': match.group('label'),
                    'line': line_no,
                    'values': {},
                }
                continue

            match = re.match(self.PATTERNS['pair'], line)
            if match:
                key = match.group('key').lower()
                if key in current['values']:
                    raise ConfigError(f"duplicate key '{key}'", line_no, self.file_path)
                current['values'][key] = (match.group('value').strip(), line_no)
                continue

            raise ConfigError(f"cannot parse line: {raw.strip()!r}", line_no, self.file_path)

        if current['values'] or current['section'] is not None:
            blocks.append(current)
        return blocks


def _check_known(model: type[BaseModel], keys: dict, path: Path, where: str) -> None:
    for key, (_, line) in keys.items():
        if key not in model.model_fields:
            raise ConfigError(f"unknown key '{key}' in {where}", line, path)


def _nested_from_blocks(blocks: list[dict], path: Path) -> tuple[dict, dict]:
    """Build the nested raw dict plus a (section, key) -> line index."""
    raw: dict[str, dict[str, Any]] = {}
    lines: dict[tuple, int] = {}

    for block in blocks:
        section = block['section']
        if section is None:
            first_line = min(line for _, line in block['values'].values())
            raise ConfigError("key outside of any [section]", first_line, path)
        if section not in PipelineConfig.model_fields:
            raise ConfigError(f"unknown section [{section}]", block['line'], path)
        if section in raw:
            raise ConfigError(f"duplicate section [{section}]", block['line'], path)

        model = PipelineConfig.model_fields[section].annotation
        _check_known(model, block['values'], path, f"[{section}]")

        raw[section] = {key: value for key, (value, _) in block['values'].items()}
        lines[(section,)] = block['line']
        for key, (_, line) in block['values'].items():
            lines[(section, key)] = line
    return raw, lines


def _nested_from_yaml(file_path: Path) -> tuple[dict, dict]:
    with open(file_path, 'r') as f:
        raw = yaml.safe_load(f) or {}
    if not isinstance(raw, dict):
        raise ConfigError("YAML config must be a mapping of sections", 1, file_path)

    for section, values in raw.items():
        if section not in PipelineConfig.model_fields:
            raise ConfigError(f"unknown section [{section}]", 0, file_path)
        if not isinstance(values, dict):
            raise ConfigError(f"section [{section}] must be a mapping", 0, file_path)
        model = PipelineConfig.model_fields[section].annotation
        _check_known(model, {k: (v, 0) for k, v in values.items()}, file_path, f"[{section}]")
    return raw, {}


def _line_for(loc: tuple, lines: dict) -> int:
    for depth in range(len(loc), 0, -1):
        key = tuple(str(part) for part in loc[:depth])
        if key in lines:
            return lines[key]
    return 0


def build_config(raw: dict, lines: Optional[dict] = None, path: Optional[Path] = None) -> PipelineConfig:
    """Validate a nested raw dict, mapping pydantic errors to file lines."""
    lines = lines or {}
    try:
        return PipelineConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        loc = tuple(first['loc'])
        name = ".".join(str(part) for part in loc)
        raise ConfigError(f"invalid value for {name}: {first['msg']}", _line_for(loc, lines), path) from e


def parse_config(config_path: Optional[str | Path] = None, overrides: Optional[dict] = None) -> PipelineConfig:
    """
    Load a PipelineConfig with auto-format detection.

    Args:
        config_path: sectioned key=value file (.cfg, .ini, .txt, .conf) or
            YAML file (.yaml, .yml); None gives the defaults
        overrides: nested {section: {key: value}} applied on top of the file

    Returns:
        Validated PipelineConfig
    """
    raw: dict = {}
    lines: dict = {}
    path = Path(config_path) if config_path is not None else None

    if path is not None:
        suffix = path.suffix.lower()
        if suffix in ['.yaml', '.yml']:
            if not path.exists():
                raise FileNotFoundError(f"Config file not found: {path}")
            raw, lines = _nested_from_yaml(path)
        elif suffix in ['.cfg', '.ini', '.txt', '.conf', '']:
            blocks = SectionedTextParser(path).parse()
            raw, lines = _nested_from_blocks(blocks, path)
        else:
            raise ConfigError(f"unsupported config format: {suffix}", 0, path)

    for section, values in (overrides or {}).items():
        raw.setdefault(section, {}).update(values)

    return build_config(raw, lines, path)
