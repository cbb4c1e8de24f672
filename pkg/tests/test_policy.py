"""Attractor composition, alpha modulation, MU inference, frame handling."""

import numpy as np
import pytest

from muds.gp import GpModel, Hyperparameters
from muds.policy import (
    Frame,
    MudsPolicy,
    PolicyConfig,
    PolicyPhase,
    modulate_alpha,
)
from muds.teaching import record_demo, train_policy


def line_stream(n=600, speed=0.12, rate=100.0, z=0.05, yaw=0.0):
    t = np.arange(n) / rate
    x = np.stack([speed * t, np.zeros(n), np.full(n, z)], axis=1)
    angles = np.tile([0.0, 0.0, yaw], (n, 1))
    widths = np.full(n, 0.06)
    return t, x, angles, widths


@pytest.fixture(scope="module")
def line_policy():
    demo = record_demo(*line_stream())
    return demo, train_policy(demo, config=PolicyConfig(), seed=0)


class TestModulateAlpha:
    def test_zero_gradient_returns_nominal(self):
        assert modulate_alpha(np.zeros(3), np.full(3, 600.0), 15.0, 2.0) == 2.0

    def test_cap_algebra(self):
        # force at 2x the cap per unit alpha: alpha halves, product hits the cap
        stiffness = np.array([600.0, 600.0, 600.0])
        alpha_nominal = 1.0
        grad = np.array([2 * 15.0 / (alpha_nominal * 600.0), 0.0, 0.0])
        alpha = modulate_alpha(grad, stiffness, 15.0, alpha_nominal)
        assert alpha == pytest.approx(alpha_nominal / 2)
        assert np.linalg.norm(stiffness * alpha * grad) == pytest.approx(15.0)

    def test_cap_never_exceeded(self):
        rng = np.random.default_rng(0)
        stiffness = np.array([600.0, 500.0, 700.0])
        for _ in range(1000):
            grad = rng.normal(0, 0.01, 3)
            alpha = modulate_alpha(grad, stiffness, 15.0, 1.0)
            assert np.linalg.norm(stiffness * alpha * grad) <= 15.0 + 1e-9

    def test_rejects_bad_cap(self):
        with pytest.raises(ValueError):
            modulate_alpha(np.ones(3), np.ones(3), 0.0)


class TestComputeAttractor:
    def test_on_demo_point_stabilization_negligible(self, line_policy):
        demo, policy = line_policy
        x = demo.positions[20]
        cmd = policy.compute_attractor(x, np.full(3, 600.0))
        d = cmd.diagnostics
        assert np.linalg.norm(d.alpha * d.grad) < 1e-4
        expected = x + d.gamma * np.clip(d.delta_raw, -0.04, 0.04)
        assert np.allclose(cmd.x_des, expected, atol=1e-4)

    def test_far_query_freezes(self, line_policy):
        _, policy = line_policy
        x = np.array([5.0, 5.0, 5.0])
        cmd = policy.compute_attractor(x, np.full(3, 600.0))
        assert not cmd.confidence_ok
        assert np.array_equal(cmd.x_des, x)
        assert np.linalg.norm(cmd.diagnostics.delta_raw) < 1e-6

    def test_lateral_displacement_pulled_back(self, line_policy):
        demo, policy = line_policy
        displacement = np.array([0.0, 0.02, 0.0])
        x = demo.positions[30] + displacement
        cmd = policy.compute_attractor(x, np.full(3, 600.0))
        d = cmd.diagnostics
        assert cmd.confidence_ok
        # the stabilization term points back toward the demonstrated line
        assert float(np.dot(-d.alpha * d.grad, displacement)) < 0.0

    def test_gamma_clamped(self, line_policy):
        demo, policy = line_policy
        x_local = demo.positions[10]
        policy.gp_gamma.apply_correction(x_local, 0, 0.05)
        policy.gp_gamma.outputs[:, 0] = 50.0
        policy.gp_gamma._refresh_weights()
        cmd = policy.compute_attractor(demo.positions[10], np.full(3, 600.0))
        assert cmd.diagnostics.gamma == policy.config.gamma_max
        policy.gp_gamma.outputs[:, 0] = 1.0
        policy.gp_gamma._refresh_weights()

    def test_rejects_non_finite(self, line_policy):
        _, policy = line_policy
        with pytest.raises(ValueError):
            policy.compute_attractor(np.array([np.nan, 0, 0]), np.full(3, 600.0))

    def test_displacement_bound_invariant(self, line_policy):
        demo, policy = line_policy
        cfg = policy.config
        stiffness = np.full(3, 600.0)
        bound = (cfg.gamma_max * np.sqrt(3) * cfg.delta_bound
                 + cfg.alpha_cap / stiffness.min())
        rng = np.random.default_rng(1)
        for _ in range(200):
            x = rng.uniform(-0.3, 1.0, 3)
            cmd = policy.compute_attractor(x, stiffness)
            assert np.linalg.norm(cmd.x_des - x) <= bound + 1e-12

    def test_gate_monotone_in_variance(self, line_policy):
        demo, policy = line_policy
        threshold = policy.active_phase.confidence_threshold
        rng = np.random.default_rng(2)
        for _ in range(200):
            a, b = rng.uniform(-0.5, 1.2, (2, 3))
            sa = policy.gp_delta.predict(a).variance
            sb = policy.gp_delta.predict(b).variance
            if sa > threshold and sb >= sa:
                cmd = policy.compute_attractor(b, np.full(3, 600.0))
                assert not cmd.confidence_ok


class TestMuInference:
    def test_orientation_at_demo_point(self):
        demo = record_demo(*line_stream(yaw=np.pi / 2))
        policy = train_policy(demo, seed=0)
        theta = policy.infer_orientation(demo.positions[25])
        assert theta[2] == pytest.approx(np.pi / 2, abs=1e-2)
        assert abs(theta[0]) < 1e-2 and abs(theta[1]) < 1e-2

    def test_orientation_never_extrapolates_to_zero(self):
        demo = record_demo(*line_stream(yaw=1.2))
        policy = train_policy(demo, seed=0)
        theta = policy.infer_orientation(np.array([10.0, 10.0, 10.0]))
        assert theta[2] == pytest.approx(1.2, abs=0.05)

    def test_orientation_continuous_across_wrap(self):
        n = 600
        t = np.arange(n) / 100.0
        x = np.stack([0.12 * t, np.zeros(n), np.full(n, 0.05)], axis=1)
        yaw_true = 3.0 + (np.pi * 2 - 6.0) * (t / t[-1])  # 3.0 rad wraps to -3.0
        yaw = np.arctan2(np.sin(yaw_true), np.cos(yaw_true))
        angles = np.stack([np.zeros(n), np.zeros(n), yaw], axis=1)
        demo = record_demo(t, x, angles, np.full(n, 0.06))
        policy = train_policy(demo, seed=0)
        for i in range(0, demo.n, 3):
            inferred = policy.infer_orientation(demo.positions[i])[2]
            err = np.arctan2(np.sin(inferred - yaw[i * 10]), np.cos(inferred - yaw[i * 10]))
            assert abs(err) < 0.1

    def test_gripper_at_demo_point_and_far(self):
        t, x, angles, widths = line_stream()
        widths = np.full(len(t), 0.03)
        demo = record_demo(t, x, angles, widths)
        policy = train_policy(demo, seed=0)
        assert policy.infer_gripper(demo.positions[30]) == pytest.approx(0.03, abs=1e-3)
        far = policy.infer_gripper(np.array([7.0, -3.0, 2.0]))
        assert far == pytest.approx(0.03, abs=2e-3)  # nearest sample, not the open prior

    def test_gripper_clamped_to_hardware(self, line_policy):
        demo, policy = line_policy
        policy.gp_width.outputs[:, 0] = 0.2
        policy.gp_width._refresh_weights()
        assert policy.infer_gripper(demo.positions[5]) == policy.config.w_max
        policy.gp_width.outputs[:, 0] = 0.06
        policy.gp_width._refresh_weights()

    def test_mu_outputs_are_exact_posterior_at_projection(self, line_policy):
        demo, policy = line_policy
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = rng.uniform(-0.5, 1.5, 3)
            idx, point = policy.gp_width.mu_project(x)
            assert policy.infer_gripper(x) == float(np.clip(
                policy.gp_width.predict(point).mean[0], 0.0, policy.config.w_max))


class TestFrames:
    def _two_frame_policy(self):
        hp = Hyperparameters(1.0, np.full(3, 100.0), 0.01)
        xs = np.random.default_rng(0).uniform(-0.2, 0.2, (5, 3))
        ys = np.zeros((5, 3))
        def phase():
            return PolicyPhase(
                gp_delta=GpModel(xs, ys, hp),
                gp_gamma=GpModel(xs, np.ones((5, 1)), hp),
                gp_angles=GpModel(xs, np.tile([0, 0, 0, 1, 1, 1], (5, 1)).astype(float), hp),
                gp_width=GpModel(xs, np.full((5, 1), 0.05), hp),
                confidence_threshold=0.5,
            )
        frames = [Frame(np.array([0.4, 0.0, 0.0]), "object"),
                  Frame(np.array([0.1, 0.3, 0.0]), "goal")]
        return MudsPolicy(frames, [phase(), phase()])

    def test_object_frame_while_open(self):
        policy = self._two_frame_policy()
        assert policy.select_frame(gripper_closed=False).label == "object"

    def test_latch_holds_after_reopen(self):
        policy = self._two_frame_policy()
        policy.select_frame(gripper_closed=True)
        assert policy.select_frame(gripper_closed=False).label == "goal"
        policy.reset_episode()
        assert policy.select_frame(gripper_closed=False).label == "object"

    def test_single_frame_always_global(self, line_policy):
        _, policy = line_policy
        assert policy.select_frame(True).label == "global"
        assert policy.select_frame(False).label == "global"
        policy.reset_episode()

    def test_translation_invariance(self):
        shift = np.array([0.31, -0.17, 0.05])
        t, x, angles, widths = line_stream(n=400)
        demo_a = record_demo(t, x, angles, widths)
        demo_b = record_demo(t, x + shift, angles, widths)
        pa = train_policy(demo_a, seed=0)
        pb = train_policy(demo_b, seed=0)
        pb.frames[0].origin = shift.copy()  # same data in a translated frame
        rng = np.random.default_rng(4)
        for _ in range(20):
            q = rng.uniform(-0.1, 0.5, 3)
            ca = pa.compute_attractor(q, np.full(3, 600.0))
            cb = pb.compute_attractor(q + shift, np.full(3, 600.0))
            assert np.allclose(cb.x_des - shift, ca.x_des, atol=1e-10)
            assert ca.confidence_ok == cb.confidence_ok

    def test_gamma_scales_without_changing_direction(self, line_policy):
        demo, policy = line_policy
        x_local = demo.positions[40]
        delta = policy.gp_delta.predict(x_local).mean
        for g1, g2 in [(0.5, 2.0), (1.0, 7.0)]:
            v1, v2 = g1 * delta, g2 * delta
            assert np.allclose(v1 / np.linalg.norm(v1), v2 / np.linalg.norm(v2))


class TestSerialization:
    def test_round_trip_byte_stable(self, line_policy, tmp_path):
        import json
        _, policy = line_policy
        p1 = json.dumps(policy.to_payload(), sort_keys=True)
        policy2 = MudsPolicy.from_payload(json.loads(p1))
        p2 = json.dumps(policy2.to_payload(), sort_keys=True)
        assert p1 == p2

    def test_version_and_convention_checks(self, line_policy):
        _, policy = line_policy
        payload = policy.to_payload()
        bad = dict(payload, format_version=99)
        with pytest.raises(ValueError):
            MudsPolicy.from_payload(bad)
        bad = dict(payload, euler_convention="zyx")
        with pytest.raises(ValueError):
            MudsPolicy.from_payload(bad)
