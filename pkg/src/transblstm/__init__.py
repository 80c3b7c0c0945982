"""TRANS-BLSTM: transformer encoders with bidirectional LSTM sublayers, on numpy."""

from .audit import ParamReport, count_params_analytic, count_params_model
from .encoder import Encoder, ModelConfig, preset
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    NonFiniteError,
    ShapeError,
    TransBlstmError,
    VocabError,
)
from .heads import PretrainModel, TaskModel, build_model

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "Encoder",
    "ModelConfig",
    "NonFiniteError",
    "ParamReport",
    "PretrainModel",
    "ShapeError",
    "TaskModel",
    "TransBlstmError",
    "VocabError",
    "build_model",
    "count_params_analytic",
    "count_params_model",
    "preset",
]
