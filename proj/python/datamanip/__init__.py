"""Joint training of a dialogue model and a data manipulation network."""

from ._core import (
    ConfigError,
    SyntheticCorpus,
    gumbel_softmax,
    load_checkpoint,
    make_synthetic_corpus,
    metrics,
    noise_detection_auc,
    run_cli,
    train,
    train_config,
)

__all__ = [
    "ConfigError",
    "SyntheticCorpus",
    "gumbel_softmax",
    "load_checkpoint",
    "make_synthetic_corpus",
    "metrics",
    "noise_detection_auc",
    "run_cli",
    "train",
    "train_config",
]
