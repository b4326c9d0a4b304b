"""Field-embedded factorization machines for click-through rate prediction."""

__version__ = "0.1.0"

from .analysis import pair_strength, rank_field_pairs, symmetric_eigenvalues
from .data import Dataset, FieldSchema, Instance, Vocabulary, build_vocabulary, encode_instance, split_dataset
from .deep import DeepFefmParams, DnnParams
from .errors import ConfigError, DataError, FefmError, NumericError
from .models import init_model
from .shallow import ShallowParams, logit, param_count
from .trainer import TrainConfig, evaluate, fit

__all__ = [
    "ConfigError",
    "DataError",
    "Dataset",
    "DeepFefmParams",
    "DnnParams",
    "FefmError",
    "FieldSchema",
    "Instance",
    "NumericError",
    "ShallowParams",
    "TrainConfig",
    "Vocabulary",
    "build_vocabulary",
    "encode_instance",
    "evaluate",
    "fit",
    "init_model",
    "logit",
    "pair_strength",
    "param_count",
    "rank_field_pairs",
    "split_dataset",
    "symmetric_eigenvalues",
]
