"""Demonstration capture, policy training, and the interactive correction
loop: corrections are drained once per control tick, routed to exactly one GP
output channel, and spread over that GP's database by kernel correlation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gp import Bounds, FitError, GpModel, Hyperparameters, fit
from .policy import Frame, MudsPolicy, PolicyConfig, PolicyPhase

# the gripper-width head gets a tighter lengthscale ceiling so the close onset
# stays sharp and width corrections spread only over the approach corridor
WIDTH_LENGTHSCALE = (0.01, 0.12)
# scaling corrections spread over this fixed neighborhood
GAMMA_LENGTHSCALE = 0.05

RECORD_RATE = 10.0          # Hz at which demonstrations are stored
STICK_CAP = 0.002           # m of transition change per tick at full deflection
STATIONARY_EPS = 1e-5       # transitions below this norm are treated as a pause
MIN_SPACING = 0.002         # minimum spacing between transition-head input rows
DELTA_SIGMA_N = (2e-3, 0.1)  # noise floor keeping the transition Gram well conditioned
ARREST_PATIENCE = 1.0       # seconds of gate-frozen command before Arrested

ASPECTS = {"attractor_xy": "attractor", "attractor_z": "attractor",
           "scaling_increment": "scaling", "gripper_increment": "gripper"}


class DemoError(ValueError):
    """Raised for malformed demonstration streams."""


@dataclass
class Demonstration:
    """Downsampled trajectory with per-step transitions.

    Angles are stored as sin/cos so the regression target is continuous
    across the +-pi wrap; transitions[i] is positions[i+1] - positions[i].
    """

    times: np.ndarray
    positions: np.ndarray
    sines: np.ndarray
    cosines: np.ndarray
    widths: np.ndarray
    transitions: np.ndarray
    frame_label: str = "global"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.sines = np.asarray(self.sines, dtype=float)
        self.cosines = np.asarray(self.cosines, dtype=float)
        self.widths = np.asarray(self.widths, dtype=float)
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.validate()

    def validate(self):
        n = len(self.times)
        if n < 2:
            raise DemoError("a demonstration needs at least two samples")
        if np.any(np.diff(self.times) <= 0):
            raise DemoError("timestamps must be strictly increasing")
        if self.transitions.shape != (n - 1, 3):
            raise DemoError("transitions must be one shorter than samples")
        unit = self.sines**2 + self.cosines**2
        if not np.allclose(unit, 1.0, atol=1e-9):
            raise DemoError("sin^2 + cos^2 must equal 1 per angle per sample")

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0])

    def angles(self) -> np.ndarray:
        return np.arctan2(self.sines, self.cosines)

    def to_payload(self) -> dict:
        return {
            "times": self.times.tolist(),
            "positions": self.positions.tolist(),
            "sines": self.sines.tolist(),
            "cosines": self.cosines.tolist(),
            "widths": self.widths.tolist(),
            "transitions": self.transitions.tolist(),
            "frame_label": self.frame_label,
        }

    @classmethod
    def from_payload(cls, p: dict) -> "Demonstration":
        return cls(times=np.array(p["times"]), positions=np.array(p["positions"]),
                   sines=np.array(p["sines"]), cosines=np.array(p["cosines"]),
                   widths=np.array(p["widths"]), transitions=np.array(p["transitions"]),
                   frame_label=p["frame_label"])


def record_demo(times, positions, angles, widths, record_rate: float = RECORD_RATE,
                frame_label: str = "global") -> Demonstration:
    """Downsample a raw pose stream to the recording rate.

    The nearest raw sample is taken for each record tick. Near-stationary
    steps keep their samples (they carry orientation and gripper data) but
    their transitions collapse to exactly zero.
    """
    times = np.asarray(times, dtype=float)
    positions = np.atleast_2d(np.asarray(positions, dtype=float))
    angles = np.atleast_2d(np.asarray(angles, dtype=float))
    widths = np.asarray(widths, dtype=float)
    if len(times) < 2:
        raise DemoError("need at least two raw samples")
    if np.any(np.diff(times) <= 0):
        raise DemoError("raw timestamps must be strictly increasing")

    period = 1.0 / record_rate
    n_ticks = int(np.floor((times[-1] - times[0]) / period)) + 1
    tick_times = times[0] + period * np.arange(n_ticks)
    idx = np.clip(np.searchsorted(times, tick_times), 0, len(times) - 1)
    left = np.clip(idx - 1, 0, len(times) - 1)
    pick_left = np.abs(times[left] - tick_times) <= np.abs(times[idx] - tick_times)
    nearest = np.where(pick_left, left, idx)
    nearest = np.maximum.accumulate(nearest)  # keep time order on coarse streams

    pos = positions[nearest]
    ang = angles[nearest]
    wid = widths[nearest]
    transitions = np.diff(pos, axis=0)
    small = np.linalg.norm(transitions, axis=1) < STATIONARY_EPS
    transitions[small] = 0.0
    return Demonstration(times=tick_times, positions=pos, sines=np.sin(ang),
                         cosines=np.cos(ang), widths=wid, transitions=transitions,
                         frame_label=frame_label)


# -- training ----------------------------------------------------------------


def _fit_phase(positions, transitions, sines, cosines, widths, delta_inputs,
               bounds, seed, config) -> PolicyPhase:
    delta_bounds = Bounds(sigma_f=bounds.sigma_f, theta_diag=bounds.theta_diag,
                          sigma_n=(max(bounds.sigma_n[0], DELTA_SIGMA_N[0]),
                                   max(bounds.sigma_n[1], DELTA_SIGMA_N[1])))
    try:
        gp_delta = fit(delta_inputs, transitions, bounds=delta_bounds, seed=seed)
    except FitError as err:
        raise FitError(f"transition GP failed to fit: {err}", best=err.best) from err

    # the scaling head starts as the identity (gamma = 1 everywhere on the
    # demo support); a fixed local metric keeps speed corrections from
    # bleeding across the workspace, and a unit output scale makes one
    # increment move gamma(x) by exactly the increment at x
    gamma_hp = Hyperparameters(sigma_f=1.0,
                               theta_diag=np.full(3, GAMMA_LENGTHSCALE**-2),
                               sigma_n=1e-5)
    gp_gamma = GpModel(delta_inputs, np.ones((len(delta_inputs), 1)), gamma_hp)

    try:
        gp_angles = fit(positions, np.hstack([sines, cosines]),
                        bounds=bounds, seed=seed + 2)
    except FitError as err:
        raise FitError(f"orientation GP failed to fit: {err}", best=err.best) from err
    width_bounds = Bounds.default(3, lengthscale=WIDTH_LENGTHSCALE)
    try:
        gp_width = fit(positions, widths[:, None], bounds=width_bounds, seed=seed + 3)
    except FitError as err:
        raise FitError(f"gripper GP failed to fit: {err}", best=err.best) from err
    threshold = config.sigma_max_fraction * gp_delta.prior_variance
    return PolicyPhase(gp_delta=gp_delta, gp_gamma=gp_gamma, gp_angles=gp_angles,
                       gp_width=gp_width, confidence_threshold=threshold)


def pick_split_index(demo: Demonstration) -> int:
    """Sample index at which the gripper has fully closed on the object."""
    closed = demo.widths <= demo.widths.min() + 1e-4
    return int(np.argmax(closed))


def train_policy(demos, config: PolicyConfig | None = None, frames=None,
                 bounds: Bounds | None = None, seed: int = 0,
                 split_overlap: tuple = (4, 6)) -> MudsPolicy:
    """Fit the four GP heads from one or more demonstrations.

    With ``frames=(object_position, goal_position)`` each demonstration is
    split at the moment the gripper closes; the approach segment is expressed
    relative to the object and the transport segment relative to the goal.
    ``split_overlap`` = (backward, forward) sample counts shared across the
    split: the goal phase reaches back so it is confident at the switch, and
    the object phase reaches forward so its data tube continues past the pick
    instead of ending there (where the variance-descent term would otherwise
    brake the final approach).
    """
    if isinstance(demos, Demonstration):
        demos = [demos]
    if not demos:
        raise ValueError("need at least one demonstration")
    config = config or PolicyConfig()
    bounds = bounds or Bounds.default(3)

    if frames is None:
        frame_list = [Frame(origin=np.zeros(3), label="global")]
        segments = [[(demo, 0, demo.n) for demo in demos]]
    else:
        object_pos, goal_pos = frames
        frame_list = [Frame(origin=object_pos, label="object"),
                      Frame(origin=goal_pos, label="goal")]
        back, fwd = split_overlap
        segments = [[], []]
        for demo in demos:
            split = pick_split_index(demo)
            if split <= 1 or split >= demo.n - 1:
                raise DemoError("two-frame training needs a gripper close inside the demo")
            segments[0].append((demo, 0, min(split + 1 + fwd, demo.n)))
            segments[1].append((demo, max(split - back, 0), demo.n))

    phases = []
    for phase_idx, (frame, segs) in enumerate(zip(frame_list, segments)):
        pos, sin_rows, cos_rows, wid = [], [], [], []
        delta_in, delta_out = [], []
        for demo, lo, hi in segs:
            local = demo.positions[lo:hi] - frame.origin
            pos.append(local)
            sin_rows.append(demo.sines[lo:hi])
            cos_rows.append(demo.cosines[lo:hi])
            wid.append(demo.widths[lo:hi])
            # pauses and eased segment ends leave duplicate or sub-mm-spaced
            # rows; keeping them all makes the transition Gram near-singular
            # and the mean field ring violently off the path, so this head
            # only takes rows a minimum spacing apart
            trans = demo.transitions[lo:hi - 1]
            pts = local[:-1]
            last = None
            keep = np.zeros(len(trans), dtype=bool)
            for i in range(len(trans)):
                if last is None or np.linalg.norm(pts[i] - last) >= MIN_SPACING:
                    keep[i] = True
                    last = pts[i]
            if not keep.any():
                keep[-1] = True
            delta_in.append(pts[keep])
            delta_out.append(trans[keep])
        phases.append(_fit_phase(
            positions=np.vstack(pos), transitions=np.vstack(delta_out),
            sines=np.vstack(sin_rows), cosines=np.vstack(cos_rows),
            widths=np.concatenate(wid), delta_inputs=np.vstack(delta_in),
            bounds=bounds, seed=seed + 10 * phase_idx, config=config))

    return MudsPolicy(frames=frame_list, phases=phases, config=config)


# -- corrections ---------------------------------------------------------------


@dataclass
class CorrectionEvent:
    """One timestamped user input routed to exactly one GP output database."""

    t: float
    kind: str
    value: tuple
    position: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.value = tuple(float(v) for v in np.atleast_1d(self.value))
        if self.kind in ("attractor_xy",):
            if len(self.value) != 2 or any(abs(v) > 1.0 for v in self.value):
                raise ValueError("attractor_xy takes a 2-vector in [-1, 1]")
        elif self.kind in ("attractor_z",):
            if len(self.value) != 1 or abs(self.value[0]) > 1.0:
                raise ValueError("attractor_z takes one value in [-1, 1]")
        elif self.kind in ("scaling_increment", "gripper_increment"):
            if len(self.value) != 1 or self.value[0] not in (-1.0, 1.0):
                raise ValueError(f"{self.kind} takes +1 or -1")
        elif self.kind not in ("stop", "goto_start"):
            raise ValueError(f"unknown correction kind {self.kind!r}")

    def to_payload(self) -> dict:
        return {"t": self.t, "kind": self.kind, "value": list(self.value),
                "position": self.position.tolist(), "frame_index": self.frame_index}

    @classmethod
    def from_payload(cls, p: dict) -> "CorrectionEvent":
        return cls(t=p["t"], kind=p["kind"], value=tuple(p["value"]),
                   position=np.array(p["position"]), frame_index=p["frame_index"])


def route_correction(event: CorrectionEvent, policy: MudsPolicy,
                     dt: float = 0.01) -> list[tuple[str, int, float]]:
    """Map a correction event to (gp name, channel, increment) triples.

    Stick deflections move the local transition by STICK_CAP per tick at full
    deflection, scaled so one second of full deflection shifts it by 0.02 m at
    the default control rate. Discrete increments use the configured steps; a
    positive gripper increment closes earlier (smaller stored width).
    """
    cfg = policy.config
    dt_scaled = 10.0 * dt
    if event.kind == "attractor_xy":
        step = STICK_CAP * dt_scaled
        return [("gp_delta", 0, event.value[0] * step),
                ("gp_delta", 1, event.value[1] * step)]
    if event.kind == "attractor_z":
        return [("gp_delta", 2, event.value[0] * STICK_CAP * dt_scaled)]
    if event.kind == "scaling_increment":
        return [("gp_gamma", 0, event.value[0] * cfg.cap_gamma)]
    if event.kind == "gripper_increment":
        return [("gp_width", 0, -event.value[0] * cfg.cap_width)]
    return []


def apply_correction_event(policy: MudsPolicy, event: CorrectionEvent,
                           dt: float = 0.01):
    """Spread a routed correction over the GP database at the event position,
    expressed in the frame that was active when the event fired."""
    frame = policy.frames[event.frame_index]
    phase = policy.phases[event.frame_index]
    x_local = frame.to_local(event.position)
    caps = {"gp_delta": policy.config.cap_delta, "gp_gamma": policy.config.cap_gamma,
            "gp_width": policy.config.cap_width}
    for name, channel, eps in route_correction(event, policy, dt):
        getattr(phase, name).apply_correction(x_local, channel, eps, cap=caps[name])


def replay_corrections(policy: MudsPolicy, events, dt: float = 0.01) -> MudsPolicy:
    """Re-apply a recorded correction stream; with the same initial policy this
    reproduces the taught policy exactly."""
    for event in events:
        if event.kind in ("stop", "goto_start"):
            continue
        apply_correction_event(policy, event, dt)
    return policy


# -- the correction round loop -------------------------------------------------


@dataclass
class RoundRecord:
    states: list
    events: list
    outcome: str
    execution_time: float
    corrections: list[CorrectionEvent] = field(default_factory=list)
    aspect_seconds: dict = field(default_factory=dict)

    def positions(self) -> np.ndarray:
        return np.array([s["x"] for s in self.states])

    def to_payload(self) -> dict:
        return {"states": self.states, "events": self.events, "outcome": self.outcome,
                "execution_time": self.execution_time,
                "corrections": [c.to_payload() for c in self.corrections],
                "aspect_seconds": self.aspect_seconds}

    @classmethod
    def from_payload(cls, p: dict) -> "RoundRecord":
        return cls(states=p["states"], events=p["events"], outcome=p["outcome"],
                   execution_time=p["execution_time"],
                   corrections=[CorrectionEvent.from_payload(c) for c in p["corrections"]],
                   aspect_seconds=p["aspect_seconds"])


class RoundLoop:
    """Tick-steppable correction round.

    One tick drains the queued corrections, evaluates the policy, sends the
    attractor and steps the plant. Corrections may be preloaded (a recorded
    stream replayed by timestamp) or pushed live between ticks; their recorded
    positions/frames are overwritten with the live robot state so a replay of
    the finished record is faithful to what was actually applied.
    """

    def __init__(self, policy: MudsPolicy, world, corrections=(), dt: float = 0.01,
                 timeout: float = 30.0, demo: Demonstration | None = None,
                 start_index: int | None = None, teacher=None,
                 arrest_patience: float = ARREST_PATIENCE):
        policy.reset_episode()
        if start_index is not None:
            if demo is None:
                raise ValueError("start_index requires the demonstration")
            world.robot.position = demo.positions[start_index].copy()
            world.robot.velocity = np.zeros(3)
            world.robot.orientation = demo.angles()[start_index]
            world.robot.width = float(demo.widths[start_index])
        self.policy = policy
        self.world = world
        self.dt = dt
        self.timeout = timeout
        self.demo = demo
        self.teacher = teacher
        self.arrest_patience = arrest_patience
        self.queue = sorted(corrections, key=lambda e: e.t)
        self.applied: list[CorrectionEvent] = []
        self.aspect_seconds: dict[str, float] = {}
        self.states: list[dict] = []
        self._frozen_for = 0.0
        self._stopped = False
        self._last_confidence = True
        self._events_seen = 0

    @property
    def done(self) -> bool:
        return (self._stopped or self.world.outcome is not None
                or self.world.t >= self.timeout - 1e-9)

    def push(self, event: CorrectionEvent):
        """Queue a correction arriving asynchronously; applied next tick."""
        self.queue.append(event)
        self.queue.sort(key=lambda e: e.t)

    def new_events(self):
        events = self.world.events[self._events_seen:]
        self._events_seen = len(self.world.events)
        return events

    def tick(self):
        """Advance one control tick; returns the state record, or None once
        the round has ended."""
        world, policy, dt = self.world, self.policy, self.dt
        if self.done:
            return None
        tick_aspects = set()
        if self.teacher is not None:
            self.queue.extend(self.teacher.tick(world, policy, dt))
        while self.queue and self.queue[0].t <= world.t + 1e-12:
            event = self.queue.pop(0)
            if event.kind == "stop":
                world.emit("stop")
                self._stopped = True
                return None
            if event.kind == "goto_start":
                if self.demo is not None:
                    world.robot.position = self.demo.positions[0].copy()
                    world.robot.velocity = np.zeros(3)
                world.emit("goto_start")
                continue
            live = CorrectionEvent(t=world.t, kind=event.kind, value=event.value,
                                   position=world.robot.position.copy(),
                                   frame_index=policy.active_index)
            apply_correction_event(policy, live, dt)
            self.applied.append(live)
            tick_aspects.add(ASPECTS[event.kind])
            world.emit("correction", correction=event.kind,
                       while_arrested=not self._last_confidence)
        for aspect in tick_aspects:
            self.aspect_seconds[aspect] = self.aspect_seconds.get(aspect, 0.0) + dt

        policy.select_frame(world.robot.held_object is not None)
        cmd = policy.compute_attractor(world.robot.position,
                                       world.impedance.stiffness)
        self._last_confidence = cmd.confidence_ok
        if not cmd.confidence_ok:
            self._frozen_for += dt
            if self._frozen_for > self.arrest_patience:
                world.emit("gate_arrest")
                world.set_outcome("Arrested")
                return None
        else:
            self._frozen_for = 0.0

        world.step(cmd.x_des, cmd.theta_des, cmd.w_des, dt)
        state = {
            "t": round(world.t, 9),
            "x": world.robot.position.tolist(),
            "v": world.robot.velocity.tolist(),
            "theta": world.robot.orientation.tolist(),
            "w": world.robot.width,
            "held": world.robot.held_object,
            "confidence_ok": cmd.confidence_ok,
        }
        self.states.append(state)
        return state

    def finish(self) -> RoundRecord:
        if self.world.outcome is None:
            self.world.set_outcome("Timeout")
        return RoundRecord(states=self.states, events=list(self.world.events),
                           outcome=self.world.outcome,
                           execution_time=round(self.world.t, 9),
                           corrections=self.applied,
                           aspect_seconds=self.aspect_seconds)


def run_round(policy: MudsPolicy, world, corrections=(), dt: float = 0.01,
              timeout: float = 30.0, demo: Demonstration | None = None,
              start_index: int | None = None, teacher=None,
              arrest_patience: float = ARREST_PATIENCE) -> RoundRecord:
    """Execute one correction round to completion; see RoundLoop."""
    loop = RoundLoop(policy, world, corrections=corrections, dt=dt, timeout=timeout,
                     demo=demo, start_index=start_index, teacher=teacher,
                     arrest_patience=arrest_patience)
    while not loop.done:
        loop.tick()
    return loop.finish()


# -- session archive -------------------------------------------------------------


@dataclass
class SessionArchive:
    """Everything needed to audit a teaching session: replaying the recorded
    correction stream against the stored initial policy reproduces the final
    policy byte for byte."""

    demos: list
    scenario_payload: dict
    initial_policy_payload: dict
    final_policy_payload: dict
    rounds: list
    timers: dict
    seeds: dict

    def to_payload(self) -> dict:
        return {
            "demos": [d.to_payload() for d in self.demos],
            "scenario": self.scenario_payload,
            "initial_policy": self.initial_policy_payload,
            "final_policy": self.final_policy_payload,
            "rounds": [r.to_payload() for r in self.rounds],
            "timers": self.timers,
            "seeds": self.seeds,
        }

    @classmethod
    def from_payload(cls, p: dict) -> "SessionArchive":
        return cls(
            demos=[Demonstration.from_payload(d) for d in p["demos"]],
            scenario_payload=p["scenario"],
            initial_policy_payload=p["initial_policy"],
            final_policy_payload=p["final_policy"],
            rounds=[RoundRecord.from_payload(r) for r in p["rounds"]],
            timers=p["timers"],
            seeds=p["seeds"],
        )

    def correction_stream(self):
        for rnd in self.rounds:
            yield from rnd.corrections


def build_archive(demos, scenario, initial_policy_payload, policy, rounds,
                  seeds=None) -> SessionArchive:
    if isinstance(demos, Demonstration):
        demos = [demos]
    demo_s = sum(d.duration for d in demos)
    feedback_s = sum(sum(r.aspect_seconds.values()) for r in rounds)
    total_s = demo_s + sum(r.execution_time for r in rounds)
    return SessionArchive(
        demos=demos,
        scenario_payload=scenario.to_payload(),
        initial_policy_payload=initial_policy_payload,
        final_policy_payload=policy.to_payload(),
        rounds=rounds,
        timers={"demo_s": round(demo_s, 9), "feedback_s": round(feedback_s, 9),
                "total_s": round(total_s, 9), "rounds": len(rounds)},
        seeds=seeds or {},
    )


def replay_archive(archive: SessionArchive) -> MudsPolicy:
    """Rebuild the final policy from the archive's initial policy and the
    recorded correction stream."""
    policy = MudsPolicy.from_payload(archive.initial_policy_payload)
    dt = 1.0 / archive.scenario_payload.get("control_rate", 100.0)
    return replay_corrections(policy, archive.correction_stream(), dt)
