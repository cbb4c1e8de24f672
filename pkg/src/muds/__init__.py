"""Minimum-uncertainty GP motion policies taught from demonstrations and
teleoperated corrections, with a desk-scale simulated plant, a teaching
service, and headless experiment campaigns."""

from .gp import Bounds, GpModel, Hyperparameters, Posterior, fit, kernel_eval
from .policy import (
    AttractorCommand,
    Frame,
    MudsPolicy,
    PolicyConfig,
    PolicyPhase,
    modulate_alpha,
)
from .simulator import (
    GripperDelayModel,
    ImpedanceParams,
    RobotState,
    Scenario,
    SimObject,
    World,
    compute_ade,
)
from .teaching import (
    CorrectionEvent,
    Demonstration,
    RoundLoop,
    RoundRecord,
    SessionArchive,
    record_demo,
    replay_archive,
    run_round,
    train_policy,
)

__all__ = [
    "AttractorCommand", "Bounds", "CorrectionEvent", "Demonstration", "Frame",
    "GpModel", "GripperDelayModel", "Hyperparameters", "ImpedanceParams",
    "MudsPolicy", "PolicyConfig", "PolicyPhase", "Posterior", "RobotState",
    "RoundLoop", "RoundRecord", "Scenario", "SessionArchive", "SimObject",
    "World", "compute_ade", "fit", "kernel_eval", "modulate_alpha",
    "record_demo", "replay_archive", "run_round", "train_policy",
]
