"""Desk-scale plant: a point-mass end-effector driven by a critically damped
impedance loop toward a moving attractor, a gripper with stochastic command
delay, tabletop objects with topple/pick/drop rules, and rollout metrics.

The table plane sits at z = 0; all positions are meters in the world frame.
Each world owns a seeded RNG, so identical seeds and command streams give
bit-identical rollouts.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

# contact geometry tolerances
Z_WINDOW = 0.03         # vertical reach of the prongs around an object center
GRASP_TOL = 5e-4        # prong gap slack treated as "reached the object width"
RELEASE_TOL = 2e-3      # opening beyond width + tol lets go of a held object
REF_SUPPORT = 0.02      # support radius at which topple_impulse applies as-is
HYSTERESIS = 1e-3       # repeated gripper commands within 1 mm do not re-queue
STUCK_AFTER = 1.0       # seconds of attractor below the table before "stuck"
MISS_RADIUS = 0.12      # empty closes within this xy range of an object are misses

KIND_FACTOR = {"rigid": 1.0, "flexible": 0.5, "deformable": 0.4}


@dataclass
class ImpedanceParams:
    """Per-axis stiffness and effective mass; damping is always the critical
    value, recomputed rather than stored."""

    stiffness: np.ndarray = field(default_factory=lambda: np.full(3, 600.0))
    mass: float = 1.5

    def __post_init__(self):
        self.stiffness = np.asarray(self.stiffness, dtype=float)
        if np.any(self.stiffness <= 0) or self.mass <= 0:
            raise ValueError("stiffness and mass must be positive")

    @property
    def damping(self) -> np.ndarray:
        return 2.0 * np.sqrt(self.stiffness * self.mass)

    @property
    def omega(self) -> np.ndarray:
        return np.sqrt(self.stiffness / self.mass)


def _truncated_mean(loc, sigma, low, high):
    from scipy.stats import norm
    a, b = (low - loc) / sigma, (high - loc) / sigma
    z = norm.cdf(b) - norm.cdf(a)
    return loc + sigma * (norm.pdf(a) - norm.pdf(b)) / z


@dataclass
class GripperDelayModel:
    """Truncated-normal command-to-actuation delay.

    ``mean`` is the mean of the *truncated* distribution: the underlying
    normal's location is solved at construction so that sample averages
    converge to ``mean`` despite the asymmetric bounds.
    """

    mean: float = 0.93
    sigma: float = 0.25
    low: float = 0.56
    high: float = 1.54

    def __post_init__(self):
        if not self.low <= self.mean <= self.high:
            raise ValueError("mean must lie within [low, high]")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        self._loc = self._solve_loc()

    def _solve_loc(self):
        if self.sigma < 1e-12:
            return self.mean
        lo, hi = self.low - 5 * self.sigma, self.high + 5 * self.sigma
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if _truncated_mean(mid, self.sigma, self.low, self.high) < self.mean:
                lo = mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def sample(self, rng: np.random.Generator) -> float:
        if self.sigma < 1e-12:
            return self.mean
        for _ in range(10000):
            d = rng.normal(self._loc, self.sigma)
            if self.low <= d <= self.high:
                return float(d)
        return float(np.clip(self._loc, self.low, self.high))


@dataclass
class SimObject:
    position: np.ndarray
    mass: float = 0.25
    width: float = 0.04
    support_radius: float = 0.02
    kind: str = "rigid"
    topple_impulse: float = 0.9
    max_grip_width: float = 0.08
    min_grip_width: float = 0.002
    toppled: bool = False

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.kind not in KIND_FACTOR:
            raise ValueError(f"unknown object kind {self.kind!r}")
        if self.support_radius <= 0:
            raise ValueError("support_radius must be positive")
        if not self.min_grip_width < self.width < self.max_grip_width:
            raise ValueError("object width must lie inside the pick window")

    @property
    def topple_threshold(self) -> float:
        """Impulse above which a standing object falls over."""
        return self.topple_impulse * (self.support_radius / REF_SUPPORT) \
            * KIND_FACTOR[self.kind]

    def to_payload(self):
        return {
            "position": self.position.tolist(), "mass": self.mass,
            "width": self.width, "support_radius": self.support_radius,
            "kind": self.kind, "topple_impulse": self.topple_impulse,
            "max_grip_width": self.max_grip_width,
            "min_grip_width": self.min_grip_width,
        }

    @classmethod
    def from_payload(cls, p):
        return cls(position=np.array(p["position"]), mass=p["mass"], width=p["width"],
                   support_radius=p["support_radius"], kind=p["kind"],
                   topple_impulse=p["topple_impulse"],
                   max_grip_width=p["max_grip_width"], min_grip_width=p["min_grip_width"])


@dataclass
class RobotState:
    position: np.ndarray
    velocity: np.ndarray
    orientation: np.ndarray
    width: float
    held_object: int | None = None

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.velocity = np.asarray(self.velocity, dtype=float)
        self.orientation = np.asarray(self.orientation, dtype=float)


class GripperActuator:
    """Width actuator with a queue of (target, deadline) commands.

    A command only starts moving the prongs once its sampled delay expires;
    closing onto a held object is blocked at the object's width.
    """

    def __init__(self, delay: GripperDelayModel, closing_speed: float = 0.1,
                 w_max: float = 0.08):
        self.delay = delay
        self.closing_speed = closing_speed
        self.w_max = w_max
        self.pending: list[tuple[float, float]] = []
        self.last_command: float | None = None
        self.active_target: float | None = None

    def command(self, w_des: float, now: float, rng) -> float | None:
        """Queue a width target; returns the actuation deadline, or None when
        the command is within hysteresis of the previous one."""
        w_des = float(np.clip(w_des, 0.0, self.w_max))
        if self.last_command is not None and abs(w_des - self.last_command) <= HYSTERESIS:
            return None
        self.last_command = w_des
        deadline = now + self.delay.sample(rng)
        self.pending.append((w_des, deadline))
        self.pending.sort(key=lambda td: td[1])
        return deadline

    def to_payload(self):
        return {"delay": {"mean": self.delay.mean, "sigma": self.delay.sigma,
                          "low": self.delay.low, "high": self.delay.high},
                "closing_speed": self.closing_speed, "w_max": self.w_max}


class World:
    """Single-owner simulation state; one rollout loop mutates it at a time."""

    def __init__(self, impedance: ImpedanceParams, robot: RobotState,
                 objects: list[SimObject], goal, gripper: GripperActuator,
                 seed: int = 0, goal_radius: float = 0.03,
                 max_angular_rate: float = 3.0):
        self.impedance = impedance
        self.robot = robot
        self.objects = objects
        self.goal = np.asarray(goal, dtype=float)
        self.goal_radius = goal_radius
        self.gripper = gripper
        self.max_angular_rate = max_angular_rate
        self.rng = np.random.default_rng(seed)
        self.seed = seed
        self.t = 0.0
        self.events: list[dict] = []
        self.outcome: str | None = None
        self._below_since: float | None = None
        self._stuck_emitted = False
        self._in_contact: set[int] = set()

    # -- bookkeeping -----------------------------------------------------

    def emit(self, kind: str, **data):
        self.events.append({"t": round(self.t, 9), "kind": kind, **data})

    def set_outcome(self, outcome: str):
        if self.outcome is None:
            self.outcome = outcome
            self.emit("outcome", outcome=outcome)

    # -- gripper ---------------------------------------------------------

    def command_gripper(self, w_des: float, now: float):
        deadline = self.gripper.command(w_des, now, self.rng)
        if deadline is not None:
            self.emit("gripper_command", target=float(w_des), deadline=round(deadline, 9))

    def _advance_gripper(self, dt):
        g = self.gripper
        while g.pending and g.pending[0][1] <= self.t:
            target, _ = g.pending.pop(0)
            g.active_target = target
            self.emit("gripper_actuated", target=target)
        if g.active_target is None:
            return False
        w, target = self.robot.width, g.active_target
        floor = 0.0
        held = self._held()
        if held is not None:
            floor = held.width
        elif target < w:
            # closing prongs cannot pass through an object they straddle
            for obj in self._corralled():
                floor = max(floor, obj.width)
        target_eff = max(target, floor) if target < w else target
        step = np.clip(target_eff - w, -g.closing_speed * dt, g.closing_speed * dt)
        self.robot.width = float(np.clip(w + step, 0.0, g.w_max))
        if abs(self.robot.width - target) < 1e-12:
            g.active_target = None
            return True  # command completed at its own target
        if floor > 0.0 and abs(self.robot.width - floor) < 1e-12 and target < floor:
            if held is not None:
                g.active_target = None  # blocked by the held object
        return False

    def _closing_now(self) -> bool:
        t = self.gripper.active_target
        return t is not None and t < self.robot.width - 1e-12

    def _corralled(self):
        """Standing objects inside the pick window at graspable height."""
        out = []
        for i, obj in enumerate(self.objects):
            if i == self.robot.held_object or obj.toppled:
                continue
            if abs(self.robot.position[2] - obj.position[2]) > Z_WINDOW:
                continue
            window = (obj.max_grip_width - obj.width) / 2.0
            if np.linalg.norm(self.robot.position[:2] - obj.position[:2]) < window:
                out.append(obj)
        return out

    def _held(self) -> SimObject | None:
        if self.robot.held_object is None:
            return None
        return self.objects[self.robot.held_object]

    # -- dynamics --------------------------------------------------------

    def step(self, x_des, theta_des, w_des, dt: float):
        """One control tick: actuate gripper, integrate the impedance loop
        exactly over dt, slew orientation, resolve contacts."""
        if dt <= 0:
            raise ValueError("dt must be positive")
        x_des = np.asarray(x_des, dtype=float)

        self.command_gripper(w_des, self.t)

        # exact flow of m*a = K (x_des - x) - 2 sqrt(Km) v over the tick
        omega = self.impedance.omega
        decay = np.exp(-omega * dt)
        e0 = self.robot.position - x_des
        b = self.robot.velocity + omega * e0
        self.robot.position = x_des + (e0 + b * dt) * decay
        self.robot.velocity = (b - omega * e0 - omega * b * dt) * decay

        if self.robot.position[2] < 0.0:
            self.robot.position[2] = 0.0
            self.robot.velocity[2] = max(self.robot.velocity[2], 0.0)
        if x_des[2] < 0.0:
            if self._below_since is None:
                self._below_since = self.t
            if not self._stuck_emitted and self.t - self._below_since > STUCK_AFTER:
                self._stuck_emitted = True
                self.emit("stuck")
        else:
            self._below_since = None

        if theta_des is not None:
            diff = np.arctan2(np.sin(theta_des - self.robot.orientation),
                              np.cos(theta_des - self.robot.orientation))
            step = np.clip(diff, -self.max_angular_rate * dt, self.max_angular_rate * dt)
            self.robot.orientation = np.arctan2(np.sin(self.robot.orientation + step),
                                                np.cos(self.robot.orientation + step))

        held = self._held()
        if held is not None:
            held.position = self.robot.position.copy()

        close_completed = self._advance_gripper(dt)
        self.evaluate_contact(close_completed)
        self.t += dt
        return self

    # -- contact rules -----------------------------------------------------

    def evaluate_contact(self, close_completed: bool = False):
        """Gripper/object interaction rules.

        Open, static prongs straddle standing objects without touching them.
        While closing, objects inside the pick window are centered between the
        jaws (the push strategy: a corralled object rides along until the gap
        reaches its width and the grasp completes); objects between the pick
        window and the prong span are clipped by a jaw and shoved aside. A
        prong assembly already narrower than the object bulldozes it. Every
        first touch runs the impulse topple check.
        """
        robot = self.robot
        target = self.gripper.active_target
        for i, obj in enumerate(self.objects):
            if i == robot.held_object or obj.toppled:
                continue
            dxy = float(np.linalg.norm(robot.position[:2] - obj.position[:2]))
            if abs(robot.position[2] - obj.position[2]) > Z_WINDOW:
                self._in_contact.discard(i)
                continue
            outer = (robot.width + obj.width) / 2.0
            pick_window = (obj.max_grip_width - obj.width) / 2.0
            closing = self._closing_now()
            can_straddle = robot.width > obj.width

            if (robot.width <= obj.width + GRASP_TOL and target is not None
                    and target <= obj.width + GRASP_TOL and dxy < pick_window):
                if i not in self._in_contact and self._impact(obj):
                    continue
                robot.width = obj.width
                robot.held_object = i
                obj.position = robot.position.copy()
                self.gripper.active_target = None
                self._in_contact.add(i)
                self.emit("pick", object=i)
            elif closing and dxy < pick_window:
                # closing jaws center the object in the gap; it rides along
                # until the gap reaches its width and the grasp completes
                if i not in self._in_contact:
                    self._in_contact.add(i)
                    if self._impact(obj):
                        continue
                obj.position[0] = robot.position[0]
                obj.position[1] = robot.position[1]
            elif dxy < outer and not can_straddle:
                # a prong assembly narrower than the object is a solid body
                if i not in self._in_contact:
                    self._in_contact.add(i)
                    if self._impact(obj):
                        continue
                    self._push_aside(obj, dxy)
            else:
                self._in_contact.discard(i)

        if close_completed and robot.held_object is None and self.outcome is None:
            # a grasp attempt (closing past an object's width) that completes
            # empty near that object is a missed grasp; far from any object it
            # is just an empty close and the episode plays on
            near = [o for o in self.objects if not o.toppled
                    and np.linalg.norm(robot.position[:2] - o.position[:2]) < MISS_RADIUS]
            if near and robot.width < min(o.width for o in near) - 1e-3:
                self.emit("grasp_missed", width=robot.width)
                self.set_outcome("MissedGrasp")
            elif robot.width < 0.079:
                self.emit("close_empty", width=robot.width)

        held = self._held()
        if held is not None and robot.width > held.width + RELEASE_TOL:
            idx = robot.held_object
            robot.held_object = None
            held.position[2] = 0.0
            if np.linalg.norm(held.position[:2] - self.goal[:2]) <= self.goal_radius:
                self.emit("place", object=idx)
                self.set_outcome("Success")
            else:
                self.emit("drop", object=idx)
                self.set_outcome("Dropped")

    def _impact(self, obj) -> bool:
        impulse = self.impedance.mass * float(np.linalg.norm(self.robot.velocity[:2]))
        if impulse > obj.topple_threshold:
            obj.toppled = True
            self.emit("topple", impulse=impulse, threshold=obj.topple_threshold)
            self.set_outcome("Toppled")
            return True
        self.emit("contact", impulse=impulse)
        return False

    def _push_aside(self, obj, dxy):
        """A grazing prong shoves the object just outside the prong span."""
        outward = obj.position[:2] - self.robot.position[:2]
        if dxy > 1e-9:
            outward = outward / dxy
        else:
            outward = np.array([1.0, 0.0])
        obj.position[:2] = self.robot.position[:2] + outward * (
            (self.robot.width + obj.width) / 2.0 + 1e-3)


def compute_ade(rollout_positions, demo_positions) -> float:
    """Mean distance from each rollout sample to its nearest demo point."""
    rollout_positions = np.atleast_2d(np.asarray(rollout_positions, dtype=float))
    demo_positions = np.atleast_2d(np.asarray(demo_positions, dtype=float))
    if rollout_positions.size == 0 or demo_positions.size == 0:
        raise ValueError("both trajectories must be non-empty")
    return float(cdist(rollout_positions, demo_positions).min(axis=1).mean())


@dataclass
class Scenario:
    """Everything needed to build a reproducible world."""

    name: str
    start_position: np.ndarray
    start_orientation: np.ndarray
    start_width: float
    objects: list[SimObject]
    goal: np.ndarray
    goal_radius: float = 0.03
    stiffness: np.ndarray = field(default_factory=lambda: np.full(3, 600.0))
    mass: float = 1.5
    gripper_delay: GripperDelayModel = field(default_factory=GripperDelayModel)
    closing_speed: float = 0.1
    w_max: float = 0.08
    control_rate: float = 100.0
    timeout: float = 30.0
    max_angular_rate: float = 3.0

    def __post_init__(self):
        self.start_position = np.asarray(self.start_position, dtype=float)
        self.start_orientation = np.asarray(self.start_orientation, dtype=float)
        self.goal = np.asarray(self.goal, dtype=float)
        self.stiffness = np.asarray(self.stiffness, dtype=float)

    @property
    def dt(self) -> float:
        return 1.0 / self.control_rate

    def make_world(self, seed: int = 0, start_position=None) -> World:
        start = self.start_position if start_position is None else np.asarray(start_position)
        robot = RobotState(position=start.copy(), velocity=np.zeros(3),
                           orientation=self.start_orientation.copy(),
                           width=self.start_width)
        gripper = GripperActuator(self.gripper_delay, self.closing_speed, self.w_max)
        objects = [SimObject.from_payload(o.to_payload()) for o in self.objects]
        return World(ImpedanceParams(self.stiffness.copy(), self.mass), robot, objects,
                     self.goal.copy(), gripper, seed=seed, goal_radius=self.goal_radius,
                     max_angular_rate=self.max_angular_rate)

    def to_payload(self) -> dict:
        return {
            "name": self.name,
            "start_position": self.start_position.tolist(),
            "start_orientation": self.start_orientation.tolist(),
            "start_width": self.start_width,
            "objects": [o.to_payload() for o in self.objects],
            "goal": self.goal.tolist(),
            "goal_radius": self.goal_radius,
            "stiffness": self.stiffness.tolist(),
            "mass": self.mass,
            "gripper_delay": {"mean": self.gripper_delay.mean,
                              "sigma": self.gripper_delay.sigma,
                              "low": self.gripper_delay.low,
                              "high": self.gripper_delay.high},
            "closing_speed": self.closing_speed,
            "w_max": self.w_max,
            "control_rate": self.control_rate,
            "timeout": self.timeout,
            "max_angular_rate": self.max_angular_rate,
        }

    @classmethod
    def from_payload(cls, p: dict) -> "Scenario":
        return cls(
            name=p["name"],
            start_position=np.array(p["start_position"]),
            start_orientation=np.array(p["start_orientation"]),
            start_width=p["start_width"],
            objects=[SimObject.from_payload(o) for o in p["objects"]],
            goal=np.array(p["goal"]),
            goal_radius=p["goal_radius"],
            stiffness=np.array(p["stiffness"]),
            mass=p["mass"],
            gripper_delay=GripperDelayModel(**p["gripper_delay"]),
            closing_speed=p["closing_speed"],
            w_max=p["w_max"],
            control_rate=p["control_rate"],
            timeout=p["timeout"],
            max_angular_rate=p["max_angular_rate"],
        )
