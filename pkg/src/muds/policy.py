"""Position-conditioned motion policy composed of four GP regressors per
reference frame: attractor transition, scaling factor, orientation (sin/cos
of intrinsic-XYZ Euler angles), and gripper width.

The attractor command superposes the learned transition, its position-local
scaling, and a descent step on the posterior-variance manifold whose gain is
modulated so the resulting impedance force never exceeds a set threshold.
Orientation and width are never extrapolated: they are read at the training
sample most correlated with the query.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gp import GpModel

POLICY_FORMAT_VERSION = 1
EULER_CONVENTION = "intrinsic-xyz"

GAMMA_MIN, GAMMA_MAX = 0.1, 10.0


@dataclass
class Frame:
    """A reference frame fixed in the world; policies evaluate positions
    relative to its origin."""

    origin: np.ndarray
    label: str = "global"

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        if not np.all(np.isfinite(self.origin)):
            raise ValueError("frame origin must be finite")

    def to_local(self, x_world):
        return np.asarray(x_world, dtype=float) - self.origin

    def to_world(self, x_local):
        return np.asarray(x_local, dtype=float) + self.origin

    def to_payload(self):
        return {"origin": self.origin.tolist(), "label": self.label}

    @classmethod
    def from_payload(cls, p):
        return cls(origin=np.array(p["origin"]), label=p["label"])


@dataclass
class PolicyConfig:
    """Caps, gains and limits of the composed field.

    alpha_cap is the maximum allowed norm of stiffness times the stabilization
    step (Newtons); delta_bound caps each axis of the learned transition;
    sigma_max_fraction resolves the confidence gate as a fraction of the
    delta-GP prior variance.
    """

    alpha_nominal: float = 1.0
    alpha_cap: float = 15.0
    delta_bound: float | None = 0.04
    sigma_max_fraction: float = 0.2
    gamma_min: float = GAMMA_MIN
    gamma_max: float = GAMMA_MAX
    w_max: float = 0.08
    cap_delta: float = 0.005
    cap_gamma: float = 0.05
    cap_width: float = 0.002

    def to_payload(self):
        return {
            "alpha_nominal": self.alpha_nominal, "alpha_cap": self.alpha_cap,
            "delta_bound": self.delta_bound,
            "sigma_max_fraction": self.sigma_max_fraction,
            "gamma_min": self.gamma_min, "gamma_max": self.gamma_max,
            "w_max": self.w_max, "cap_delta": self.cap_delta,
            "cap_gamma": self.cap_gamma, "cap_width": self.cap_width,
        }

    @classmethod
    def from_payload(cls, p):
        return cls(**p)


@dataclass
class Diagnostics:
    delta_raw: np.ndarray
    gamma: float
    alpha: float
    grad: np.ndarray
    sigma: float


@dataclass
class AttractorCommand:
    x_des: np.ndarray
    theta_des: np.ndarray
    w_des: float
    confidence_ok: bool
    diagnostics: Diagnostics


@dataclass
class PolicyPhase:
    """The four GP heads evaluated while one frame is active."""

    gp_delta: GpModel
    gp_gamma: GpModel
    gp_angles: GpModel
    gp_width: GpModel
    confidence_threshold: float

    def to_payload(self):
        return {
            "gp_delta": self.gp_delta.to_payload(),
            "gp_gamma": self.gp_gamma.to_payload(),
            "gp_angles": self.gp_angles.to_payload(),
            "gp_width": self.gp_width.to_payload(),
            "confidence_threshold": self.confidence_threshold,
        }

    @classmethod
    def from_payload(cls, p):
        return cls(
            gp_delta=GpModel.from_payload(p["gp_delta"]),
            gp_gamma=GpModel.from_payload(p["gp_gamma"]),
            gp_angles=GpModel.from_payload(p["gp_angles"]),
            gp_width=GpModel.from_payload(p["gp_width"]),
            confidence_threshold=p["confidence_threshold"],
        )


def modulate_alpha(grad, stiffness, alpha_cap, alpha_nominal=1.0) -> float:
    """Gain on the variance-descent step, reduced whenever the implied
    impedance force K_s * (alpha * grad) would exceed alpha_cap Newtons."""
    if alpha_cap <= 0:
        raise ValueError("alpha_cap must be positive")
    force = float(np.linalg.norm(np.asarray(stiffness) * np.asarray(grad)))
    if force == 0.0:
        return alpha_nominal
    return min(alpha_nominal, alpha_cap / force)


class MudsPolicy:
    """One phase per frame; in two-frame mode the first (object) phase is
    active until the gripper latches closed on the object, after which the
    second (goal) phase stays active for the rest of the episode.
    """

    def __init__(self, frames: list[Frame], phases: list[PolicyPhase],
                 config: PolicyConfig | None = None):
        if len(frames) not in (1, 2):
            raise ValueError("policies carry one frame (global) or two (object, goal)")
        if len(frames) != len(phases):
            raise ValueError("one phase per frame")
        self.frames = frames
        self.phases = phases
        self.config = config or PolicyConfig()
        self.goal_latched = False

    # -- frame handling ----------------------------------------------------

    @property
    def two_frame(self) -> bool:
        return len(self.frames) == 2

    @property
    def active_index(self) -> int:
        return 1 if (self.two_frame and self.goal_latched) else 0

    @property
    def active_frame(self) -> Frame:
        return self.frames[self.active_index]

    @property
    def active_phase(self) -> PolicyPhase:
        return self.phases[self.active_index]

    def reset_episode(self):
        self.goal_latched = False

    def select_frame(self, gripper_closed: bool) -> Frame:
        """Latching object->goal frame switch; never oscillates back."""
        if self.two_frame and gripper_closed:
            self.goal_latched = True
        return self.active_frame

    # -- single-phase conveniences (the common global-frame case) ----------

    @property
    def gp_delta(self) -> GpModel:
        return self.active_phase.gp_delta

    @property
    def gp_gamma(self) -> GpModel:
        return self.active_phase.gp_gamma

    @property
    def gp_angles(self) -> GpModel:
        return self.active_phase.gp_angles

    @property
    def gp_width(self) -> GpModel:
        return self.active_phase.gp_width

    # -- evaluation ---------------------------------------------------------

    def compute_attractor(self, x_world, stiffness) -> AttractorCommand:
        """One control tick of the composed field at a world position."""
        x_world = np.asarray(x_world, dtype=float)
        if x_world.shape != (3,) or not np.all(np.isfinite(x_world)):
            raise ValueError("query position must be a finite 3-vector")
        cfg = self.config
        phase = self.active_phase
        x_local = self.active_frame.to_local(x_world)

        delta_mean, sigma, grad = phase.gp_delta.predict_full(x_local)
        delta = delta_mean
        if cfg.delta_bound is not None:
            delta = np.clip(delta, -cfg.delta_bound, cfg.delta_bound)
        gamma = float(np.clip(phase.gp_gamma.predict(x_local).mean[0],
                              cfg.gamma_min, cfg.gamma_max))
        alpha = modulate_alpha(grad, stiffness, cfg.alpha_cap, cfg.alpha_nominal)
        confidence_ok = sigma <= phase.confidence_threshold

        if confidence_ok:
            x_des = x_world + gamma * delta - alpha * grad
        else:
            x_des = x_world.copy()  # arrest the motion for safety

        theta_des = self.infer_orientation(x_local)
        w_des = self.infer_gripper(x_local)
        return AttractorCommand(
            x_des=x_des, theta_des=theta_des, w_des=w_des,
            confidence_ok=bool(confidence_ok),
            diagnostics=Diagnostics(delta_raw=delta_mean, gamma=gamma, alpha=alpha,
                                    grad=grad, sigma=sigma),
        )

    def infer_orientation(self, x_local) -> np.ndarray:
        """Euler angles recovered from sin/cos read at the most correlated
        training sample, so queries outside the data never fall back to the
        zero-radian prior."""
        phase = self.active_phase
        idx, point = phase.gp_angles.mu_project(np.asarray(x_local, dtype=float))
        sincos = phase.gp_angles.predict(point).mean
        return np.arctan2(sincos[:3], sincos[3:])

    def infer_gripper(self, x_local) -> float:
        """Gripper width read at the most correlated training sample, clamped
        to the hardware range."""
        phase = self.active_phase
        idx, point = phase.gp_width.mu_project(np.asarray(x_local, dtype=float))
        width = float(phase.gp_width.predict(point).mean[0])
        return float(np.clip(width, 0.0, self.config.w_max))

    # -- serialization -------------------------------------------------------

    def to_payload(self) -> dict:
        return {
            "format_version": POLICY_FORMAT_VERSION,
            "euler_convention": EULER_CONVENTION,
            "frames": [f.to_payload() for f in self.frames],
            "phases": [p.to_payload() for p in self.phases],
            "config": self.config.to_payload(),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "MudsPolicy":
        version = payload.get("format_version")
        if version != POLICY_FORMAT_VERSION:
            raise ValueError(f"unsupported policy format version {version!r}")
        if payload.get("euler_convention") != EULER_CONVENTION:
            raise ValueError("unknown Euler convention tag")
        return cls(
            frames=[Frame.from_payload(f) for f in payload["frames"]],
            phases=[PolicyPhase.from_payload(p) for p in payload["phases"]],
            config=PolicyConfig.from_payload(payload["config"]),
        )
