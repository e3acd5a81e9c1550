"""Acoustic sub-bottom seafloor classification and crust thickness toolkit."""

from .errors import (
    CrustProbeError,
    EdgeTruncationError,
    ExtrapolationError,
    FormatError,
    NoSeafloorError,
    NumericalError,
    StateError,
    TrainingDivergedError,
    ValidationError,
)
from .synth import (
    EchoSignature,
    GroundTruthRecord,
    Patch,
    Ping,
    SceneSpec,
    SeafloorClass,
    Survey,
    read_survey,
    synthesize_survey,
    write_survey,
)

__version__ = "0.1.0"

__all__ = [
    "CrustProbeError",
    "EchoSignature",
    "EdgeTruncationError",
    "ExtrapolationError",
    "FormatError",
    "GroundTruthRecord",
    "NoSeafloorError",
    "NumericalError",
    "Patch",
    "Ping",
    "SceneSpec",
    "SeafloorClass",
    "StateError",
    "Survey",
    "TrainingDivergedError",
    "ValidationError",
    "read_survey",
    "synthesize_survey",
    "write_survey",
    "__version__",
]
