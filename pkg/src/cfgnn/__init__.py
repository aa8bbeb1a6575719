"""Edge-centric GNN downlink precoding for cell-free massive MIMO.

Synthetic channel generation, closed-form CB/ZF baselines, an 8-layer
message-passing precoder trained by unsupervised sum-rate maximization,
layer-freezing fine-tuning and SNR-sweep evaluation.
"""

from .errors import (
    CfgnnError,
    CheckpointError,
    ConfigError,
    DegeneratePrecoderError,
    InsufficientDataError,
    InvalidArgumentError,
    NumericalFailureError,
    ParseError,
    SingularChannelError,
)

__version__ = "0.1.0"

__all__ = [
    "CfgnnError",
    "CheckpointError",
    "ConfigError",
    "DegeneratePrecoderError",
    "InsufficientDataError",
    "InvalidArgumentError",
    "NumericalFailureError",
    "ParseError",
    "SingularChannelError",
]
