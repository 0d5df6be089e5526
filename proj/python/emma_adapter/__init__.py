"""Instruction-conditioned modality adaptation.

A token-mixing visual alignment adapter over frozen dual encoders, with
synthetic data generation, two-stage training, checkpointing,
information-theoretic analyses, and the command line entry point. The heavy
lifting lives in the compiled extension; this package re-exports its surface.
"""

from ._core import (
    Adapter,
    ConfigError,
    ContractError,
    Dataset,
    DimensionError,
    EstimationError,
    FormatError,
    IndexError,
    InputError,
    IoError,
    RunConfig,
    TrainedModel,
    __version__,
    adapter_param_count,
    digamma,
    estimate_mi,
    generate_dataset,
    generate_splits,
    load_dataset,
    load_model,
    run_cli,
    run_gradient_suite,
    train,
)

__all__ = [
    "Adapter",
    "ConfigError",
    "ContractError",
    "Dataset",
    "DimensionError",
    "EstimationError",
    "FormatError",
    "IndexError",
    "InputError",
    "IoError",
    "RunConfig",
    "TrainedModel",
    "__version__",
    "adapter_param_count",
    "digamma",
    "estimate_mi",
    "generate_dataset",
    "generate_splits",
    "load_dataset",
    "load_model",
    "run_cli",
    "run_gradient_suite",
    "train",
]
