"""R3 rating prediction: C++ core with Python bindings."""

from ._r3 import (
    ConfigError,
    ContractError,
    CorruptionError,
    Dataset,
    Error,
    FormatError,
    IoError,
    PMFConfig,
    PMFModel,
    R3Model,
    StatsModel,
    TrainConfig,
    __version__,
    bench_scaling,
    fit_stats,
    gradcheck,
    load_model,
    rmse,
    train_pmf,
    train_r3,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "CorruptionError",
    "Dataset",
    "Error",
    "FormatError",
    "IoError",
    "PMFConfig",
    "PMFModel",
    "R3Model",
    "StatsModel",
    "TrainConfig",
    "bench_scaling",
    "fit_stats",
    "gradcheck",
    "load_model",
    "rmse",
    "train_pmf",
    "train_r3",
]
