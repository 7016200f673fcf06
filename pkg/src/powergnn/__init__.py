"""Learning multi-cell power control with permutation-aware graph networks."""
from .dataset import Dataset, LabeledSample
from .models import (Model, ModelKind, build_model, load_checkpoint, param_count, save_checkpoint)
from .netsim import ChannelRealization, NetworkConfig, generate_channels, sum_rate
from .oracle import WmmseOptions, WmmseResult, generate_dataset, grid_search, wmmse_solve
from .seeding import derive_seed
from .training import (EvalReport, TrainConfig, default_train_config, performance_ratio,
                       sample_complexity, train, train_and_evaluate)

__version__ = "0.1.0"

__all__ = [
    "ChannelRealization", "Dataset", "EvalReport", "LabeledSample", "Model", "ModelKind",
    "NetworkConfig", "TrainConfig", "WmmseOptions", "WmmseResult", "build_model",
    "default_train_config", "derive_seed", "generate_channels", "generate_dataset", "grid_search",
    "load_checkpoint", "param_count", "performance_ratio", "sample_complexity", "save_checkpoint",
    "sum_rate", "train", "train_and_evaluate", "wmmse_solve",
]
