"""
Phase 1: World Spec Parser
Converts sectioned world descriptions into WorldSpec objects.

Format:
    [world]
    extents = 16, 16, 8

    [class empty]
    empty = true

    [class car]
    dynamic = true

    [box]
    origin = 2, 3, 0
    size = 4, 4, 3
    class = car
    velocity = 0.5, 0, 0
"""

from pathlib import Path

from pydantic import ValidationError

from .parse_config import SectionedTextParser
from .schemas import BoxSpec, ClassInfo, ConfigError, WorldSpec


class WorldParser:
    """Builds a WorldSpec from repeated [class] and [box] sections."""

    FIELD_MAPPINGS = {
        'box': {'origin': 'origin', 'min': 'origin', 'size': 'size', 'class': 'class_name', 'velocity': 'velocity'},
        'class': {'dynamic': 'dynamic', 'empty': 'empty'},
        'world': {'extents': 'extents'},
    }

    def __init__(self, world_file_path: str | Path):
        self.world_file_path = Path(world_file_path)
        self.blocks = SectionedTextParser(self.world_file_path).parse()

    def _map_fields(self, block: dict) -> dict:
        mapping = self.FIELD_MAPPINGS.get(block['section'])
        if mapping is None:
            raise ConfigError(f"unknown section [{block['section']}]", block['line'], self.world_file_path)

        fields = {}
        for key, (value, line) in block['values'].items():
            if key not in mapping:
                raise ConfigError(f"unknown key '{key}' in [{block['section']}]", line, self.world_file_path)
            fields[mapping[key]] = value
        return fields

    def _build(self, model, fields: dict, line: int):
        try:
            return model.model_validate(fields)
        except ValidationError as e:
            first = e.errors()[0]
            raise ConfigError(f"{first['loc']}: {first['msg']}", line, self.world_file_path) from e

    def parse(self) -> WorldSpec:
        extents = None
        classes: list[ClassInfo] = []
        boxes: list[BoxSpec] = []

        for block in self.blocks:
            if block['section'] is None:
                raise ConfigError("key outside of any [section]", block['line'], self.world_file_path)
            fields = self._map_fields(block)

            if block['section'] == 'world':
                extents = fields.get('extents')
            elif block['section'] == 'class':
                if not block['label']:
                    raise ConfigError("[class] needs a name, e.g. [class car]", block['line'], self.world_file_path)
                classes.append(self._build(ClassInfo, {'name': block['label'].strip(), **fields}, block['line']))
            elif block['section'] == 'box':
                boxes.append(self._build(BoxSpec, fields, block['line']))

        if extents is None:
            raise ConfigError("missing [world] extents", 0, self.world_file_path)
        return self._build(WorldSpec, {'extents': extents, 'classes': classes, 'boxes': boxes}, 0)


def parse_world(world_file_path: str | Path) -> WorldSpec:
    """
    Convenience function to parse a world spec.

    Args:
        world_file_path: Path to the sectioned world description

    Returns:
        WorldSpec object
    """
    return WorldParser(world_file_path).parse()
