"""Mixture of empathetic listeners: emotion-routed transformer dialogue models."""

from ._core import (
    Checkpoint,
    ConfigError,
    IoError,
    NumericError,
    SchemaError,
    corpus_bleu,
    emotion_labels,
    epsilon_oracle,
    gen_synthetic,
    lr_schedule,
    normalize_config,
    param_counts,
    style_marker,
    tokenize,
    topk_accuracy,
    train,
    write_synthetic,
)

__all__ = [
    "Checkpoint",
    "ConfigError",
    "IoError",
    "NumericError",
    "SchemaError",
    "corpus_bleu",
    "emotion_labels",
    "epsilon_oracle",
    "gen_synthetic",
    "lr_schedule",
    "normalize_config",
    "param_counts",
    "style_marker",
    "tokenize",
    "topk_accuracy",
    "train",
    "write_synthetic",
]
