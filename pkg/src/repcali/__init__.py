"""Latent-space representation calibration for small encoder-decoder
transformers, with parameter-efficient fine-tuning baselines, synthetic
sequence tasks, and latent-space projection tooling."""

from .calibration import (
    CalibrationBlock,
    CalibrationOptions,
    build_shape_seed,
    calibrate,
    calibrated_forward,
    compute_calibration,
    repcali_param_count,
)
from .config import ExperimentConfig, parse_config, serialize_config
from .methods import TuningMethodSpec, attach, audit_params, compare_methods, published_param_formula
from .model import ModelConfig, Seq2SeqModel, count_trainable_params
from .tasks import TaskSpec, generate_task
from .tensor import Tape, Tensor, backward, grad_check

__version__ = "0.1.0"

__all__ = [
    "CalibrationBlock",
    "CalibrationOptions",
    "ExperimentConfig",
    "ModelConfig",
    "Seq2SeqModel",
    "Tape",
    "TaskSpec",
    "Tensor",
    "TuningMethodSpec",
    "attach",
    "audit_params",
    "backward",
    "build_shape_seed",
    "calibrate",
    "calibrated_forward",
    "compare_methods",
    "compute_calibration",
    "count_trainable_params",
    "generate_task",
    "grad_check",
    "parse_config",
    "published_param_formula",
    "repcali_param_count",
    "serialize_config",
]
