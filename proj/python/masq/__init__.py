"""Robotized human video pipeline and co-training experiments."""

from ._masq import (
    CameraModel,
    ChecksumMismatch,
    DegenerateConfiguration,
    Error,
    InvalidArgument,
    VersionMismatch,
    checkpoint_info,
    cosine_lr,
    dataset_summary,
    diffusion_schedule,
    embed_language,
    estimate_homography,
    experiment_defaults,
    scripted_score,
    subsample_indices,
    tasks,
    warp,
)

__all__ = [
    "CameraModel",
    "ChecksumMismatch",
    "DegenerateConfiguration",
    "Error",
    "InvalidArgument",
    "VersionMismatch",
    "checkpoint_info",
    "cosine_lr",
    "dataset_summary",
    "diffusion_schedule",
    "embed_language",
    "estimate_homography",
    "experiment_defaults",
    "scripted_score",
    "subsample_indices",
    "tasks",
    "warp",
]
