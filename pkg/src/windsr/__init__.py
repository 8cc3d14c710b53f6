"""Composite classifier-free guidance for multi-conditioned diffusion wind super-resolution."""

from .errors import (
    ConfigError,
    DimensionError,
    FormatError,
    NumericError,
    TrainingDivergedError,
    ValidationError,
    WindsrError,
)
from .grids import (
    ConditioningSet,
    ConditioningVariable,
    FieldGrid,
    SamplePair,
    StandardizationStats,
    VariableSpec,
)
from .guidance import SubsetFamily, SubsetWeights, cfg_combine, ccfg_combine, enumerate_subsets
from .samplers import SamplerConfig, sample
from .schedule import NoiseSchedule, make_schedule

__version__ = "0.1.0"

__all__ = [
    "ConditioningSet",
    "ConditioningVariable",
    "ConfigError",
    "DimensionError",
    "FieldGrid",
    "FormatError",
    "NoiseSchedule",
    "NumericError",
    "SamplePair",
    "SamplerConfig",
    "StandardizationStats",
    "SubsetFamily",
    "SubsetWeights",
    "TrainingDivergedError",
    "ValidationError",
    "VariableSpec",
    "WindsrError",
    "ccfg_combine",
    "cfg_combine",
    "enumerate_subsets",
    "make_schedule",
    "sample",
]
