"""Multi-scale diffusion with coordinate conditioning, pyramidal sampling and
guided super-resolution, with exact Gaussian-mixture oracles for testing."""

from .errors import ConfigError, FileFormatError, NumericalError, ParameterError, ShapeError
from .grid import ImageGrid, PositionalEncoding, downsample2x, make_coordinates, positional_encode, upsample2x
from .sampler import (
    SamplerConfig,
    forward_diffuse,
    generate_pyramidal,
    guided_reverse_step,
    make_sampler_config,
    predict_x0,
    reverse_step,
    super_resolve_pyramidal,
)
from .schedule import NoiseSchedule, make_schedule, respace

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FileFormatError",
    "ImageGrid",
    "NoiseSchedule",
    "NumericalError",
    "ParameterError",
    "PositionalEncoding",
    "SamplerConfig",
    "ShapeError",
    "downsample2x",
    "forward_diffuse",
    "generate_pyramidal",
    "guided_reverse_step",
    "make_coordinates",
    "make_sampler_config",
    "make_schedule",
    "positional_encode",
    "predict_x0",
    "respace",
    "reverse_step",
    "super_resolve_pyramidal",
    "upsample2x",
]
