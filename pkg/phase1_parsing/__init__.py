"""
Phase 1: Parsing Module
Parses run configurations, world specs and GDFT tensor dumps.
"""

from .schemas import (
    ConfigError,
    PipelineConfig,
    FusionConfig,
    WeightsSource,
    CameraModel,
    HeadFit,
    ClassInfo,
    BoxSpec,
    WorldSpec,
)
from .parse_config import parse_config, build_config, SectionedTextParser
from .parse_world import parse_world
from .tensor_io import (
    GDFTFormatError,
    encode_tensor,
    decode_tensor,
    encoded_size,
    write_tensor,
    read_tensor,
    write_manifest,
    read_manifest,
)

__all__ = [
    'ConfigError',
    'PipelineConfig',
    'FusionConfig',
    'WeightsSource',
    'CameraModel',
    'HeadFit',
    'ClassInfo',
    'BoxSpec',
    'WorldSpec',
    'parse_config',
    'build_config',
    'SectionedTextParser',
    'parse_world',
    'GDFTFormatError',
    'encode_tensor',
    'decode_tensor',
    'encoded_size',
    'write_tensor',
    'read_tensor',
    'write_manifest',
    'read_manifest',
]
