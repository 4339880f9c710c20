"""Desk-scale simulator for federated class-incremental learning with diffusion replay."""

from ._core import (
    ConfigError,
    FedgenError,
    ce_loss,
    config_keys,
    entropy_filter_mask,
    fd_loss,
    generation_count,
    kd_loss,
    linear_schedule,
    metrics_from_csv,
    plan_epoch,
    prediction_entropy,
    profile,
    read_bundle,
    report,
    retention_count,
    run,
    synth_dataset,
    write_bundle,
)

__all__ = [
    "ConfigError",
    "FedgenError",
    "ce_loss",
    "config_keys",
    "entropy_filter_mask",
    "fd_loss",
    "generation_count",
    "kd_loss",
    "linear_schedule",
    "metrics_from_csv",
    "plan_epoch",
    "prediction_entropy",
    "profile",
    "read_bundle",
    "report",
    "retention_count",
    "run",
    "synth_dataset",
    "write_bundle",
]
