"""Simulation and analysis of superbunching pseudothermal light."""

__version__ = "0.1.0"

from .coherence import CoherenceModel, g1, g3, gN_zero, permanent_oracle, stage_bracket  # noqa: E402
from .model import ConfigError, PhotonStream, SliceSpec, SourceConfig, TimeTuple, validate  # noqa: E402

__all__ = [
    "CoherenceModel",
    "ConfigError",
    "PhotonStream",
    "SliceSpec",
    "SourceConfig",
    "TimeTuple",
    "g1",
    "g3",
    "gN_zero",
    "permanent_oracle",
    "stage_bracket",
    "validate",
]
