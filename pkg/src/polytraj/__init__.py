"""Continuous polynomial trajectory prediction for road agents."""

from .anchoring import AnchorDistribution, AnchorSchedule, fixed_schedule, random_schedule
from .model import ModelConfig, TrainSettings, TrajectoryModel, train
from .poly import PolyTrajectory, eval_poly, eval_traj, gaussian_nll, propagate_variance, trajectory_loss

__all__ = [
    "AnchorDistribution",
    "AnchorSchedule",
    "fixed_schedule",
    "random_schedule",
    "ModelConfig",
    "TrainSettings",
    "TrajectoryModel",
    "train",
    "PolyTrajectory",
    "eval_poly",
    "eval_traj",
    "gaussian_nll",
    "propagate_variance",
    "trajectory_loss",
]
