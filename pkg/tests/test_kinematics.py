import numpy as np
import pytest

import skillmem as sm
from skillmem.demos import gen_pick_place, nominal_pick_place
from skillmem.kinematics import (
    IkError,
    fault_sample_index,
    jacobian,
    trace_to_csv,
)


@pytest.fixture
def arm():
    return sm.default_arm()


def fk_by_hand(lengths, q):
    """Cumulative-angle chain with scalar arithmetic only."""
    x = y = 0.0
    angle = 0.0
    for lk, qk in zip(lengths, q):
        angle += qk
        x += lk * np.cos(angle)
        y += lk * np.sin(angle)
    return x, y


class TestForwardKinematics:
    def test_straight_two_link(self):
        arm = sm.ArmModel(link_lengths=[1.0, 1.0], joint_limits=[[-3, 3], [-3, 3]])
        np.testing.assert_allclose(sm.forward_kinematics(arm, [0.0, 0.0]), [2.0, 0.0], atol=1e-15)

    def test_right_angle_elbow(self):
        arm = sm.ArmModel(link_lengths=[1.0, 1.0], joint_limits=[[-3, 3], [-3, 3]])
        np.testing.assert_allclose(
            sm.forward_kinematics(arm, [0.0, np.pi / 2]), [1.0, 1.0], atol=1e-12
        )

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_scalar_oracle(self, arm, seed):
        q = np.random.default_rng(seed).uniform(-1.5, 1.5, 7)
        expect = fk_by_hand(arm.link_lengths, q)
        np.testing.assert_allclose(sm.forward_kinematics(arm, q), expect, atol=1e-12)

    def test_limit_violation_warns(self, arm):
        q = np.zeros(7)
        q[2] = 5.0
        with pytest.warns(UserWarning):
            sm.forward_kinematics(arm, q, check_limits=True)

    def test_jacobian_matches_finite_differences(self, arm):
        q = np.random.default_rng(3).uniform(-1.0, 1.0, 7)
        jac = jacobian(arm, q)
        eps = 1e-7
        for i in range(7):
            up, dn = q.copy(), q.copy()
            up[i] += eps
            dn[i] -= eps
            col = (sm.forward_kinematics(arm, up) - sm.forward_kinematics(arm, dn)) / (2 * eps)
            np.testing.assert_allclose(jac[:, i], col, atol=1e-6)


class TestInverseKinematics:
    def test_target_at_seed_returns_seed(self, arm):
        q_seed = np.full(7, 0.3)
        target = sm.forward_kinematics(arm, q_seed)
        np.testing.assert_array_equal(sm.ik_dls(arm, target, q_seed), q_seed)

    def test_two_link_elbow_solution(self):
        arm = sm.ArmModel(link_lengths=[1.0, 1.0], joint_limits=[[-3, 3], [-3, 3]])
        q = sm.ik_dls(arm, (1.0, 1.0), np.array([0.1, 1.4]), tol_m=1e-6)
        np.testing.assert_allclose(sm.forward_kinematics(arm, q), [1.0, 1.0], atol=1e-6)

    def test_unreachable_target_raises(self, arm):
        with pytest.raises(IkError):
            sm.ik_dls(arm, (arm.reach + 0.1, 0.0), np.zeros(7))

    def test_round_trip_over_workspace(self, arm):
        rng = np.random.default_rng(0)
        q = np.full(7, 0.25)
        for _ in range(20):
            radius = rng.uniform(0.5, 0.95 * arm.reach)
            angle = rng.uniform(0.1, 2.0)
            target = radius * np.array([np.cos(angle), np.sin(angle)])
            q = sm.ik_dls(arm, target, q)
            assert np.hypot(*(sm.forward_kinematics(arm, q) - target)) < 1e-4

    def test_respects_joint_limits(self):
        arm = sm.ArmModel(link_lengths=[1.0, 1.0], joint_limits=[[-0.5, 0.5], [-0.5, 0.5]])
        q = None
        try:
            q = sm.ik_dls(arm, (1.2, 0.9), np.zeros(2))
        except IkError:
            pass  # fine: target may be unreachable under these limits
        if q is not None:
            assert np.all(q >= -0.5) and np.all(q <= 0.5)


class TestServo:
    cfg = sm.ControllerConfig()

    def test_at_target_is_fixed_point(self):
        q = np.array([0.1, -0.2, 0.3])
        np.testing.assert_array_equal(sm.servo_step(q, q, self.cfg), q)

    def test_saturates_at_tick_budget(self):
        q = np.zeros(3)
        target = np.array([1.0, -1.0, 0.001])
        out = sm.servo_step(q, target, self.cfg)
        budget = self.cfg.tick_budget
        np.testing.assert_allclose(out[:2], [budget, -budget], atol=1e-15)
        assert out[2] == target[2]  # within one tick's travel: exact

    def test_reaches_target_in_predicted_ticks(self):
        delta = 0.13
        budget = self.cfg.tick_budget
        expected = int(np.ceil(delta / budget))
        q = np.array([0.0])
        target = np.array([delta])
        ticks = 0
        while not np.array_equal(q, target):
            q = sm.servo_step(q, target, self.cfg)
            ticks += 1
            assert ticks <= expected
        assert ticks == expected

    def test_error_is_non_increasing(self):
        rng = np.random.default_rng(1)
        q = rng.uniform(-1, 1, 5)
        target = rng.uniform(-1, 1, 5)
        err = np.abs(q - target).max()
        for _ in range(100):
            q = sm.servo_step(q, target, self.cfg)
            new_err = np.abs(q - target).max()
            assert new_err <= err
            err = new_err

    def test_rate_mismatch_rejected(self):
        with pytest.raises(ValueError):
            sm.ControllerConfig(high_rate=3, low_rate=40)


class TestRunTrial:
    cfg = sm.ControllerConfig()

    @pytest.fixture(scope="class")
    def nominal(self):
        return nominal_pick_place(sm.default_arm(), 0)

    def test_servo_lag_bound(self, arm, nominal):
        trace = sm.run_trial(arm, self.cfg, nominal)
        tps = self.cfg.ticks_per_step
        sample_ticks = np.arange(1, nominal.n_steps + 1) * tps - 1
        lag = np.abs(trace.actual[sample_ticks] - trace.commanded[sample_ticks]).max()
        assert lag < 2 * self.cfg.max_joint_speed / self.cfg.high_rate

    def test_joint_lock_freezes_joint(self, arm, nominal):
        fault = sm.FaultSpec("joint_lock", joint=2, time_s=3.0, overshoot_deg=0.0)
        trace = sm.run_trial(arm, self.cfg, nominal, fault=fault)
        lock_tick = int(np.ceil(3.0 * self.cfg.low_rate)) - 1
        locked = trace.actual[lock_tick:, 2]
        np.testing.assert_array_equal(locked, np.full_like(locked, locked[0]))

    def test_lock_visible_at_fault_sample(self, arm, nominal):
        fault = sm.FaultSpec("joint_lock", joint=4, time_s=3.0, overshoot_deg=10.0)
        trace = sm.run_trial(arm, self.cfg, nominal, fault=fault)
        step = fault_sample_index(3.0, self.cfg.high_rate)
        assert step == 5
        observed = trace.observed_seq.data[step, 4]
        commanded = nominal.data[step, 4]
        assert abs(observed - commanded) > 0.5 * np.deg2rad(10.0)

    def test_transient_push_recovers(self, arm, nominal):
        fault = sm.FaultSpec("transient_push", joint=3, time_s=3.0, push_rad=0.2, duration_s=0.5)
        clean = sm.run_trial(arm, self.cfg, nominal)
        pushed = sm.run_trial(arm, self.cfg, nominal, fault=fault)
        assert np.hypot(*(pushed.final_ee - clean.final_ee)) < 1e-9
        # during the push window the joint is held off its command
        push_tick = int(np.ceil(3.0 * self.cfg.low_rate)) - 1
        assert abs(pushed.actual[push_tick, 3] - pushed.commanded[push_tick, 3]) == pytest.approx(0.2)

    def test_fault_causality(self, arm, nominal):
        fault = sm.FaultSpec("joint_lock", joint=1, time_s=4.0, overshoot_deg=-10.0)
        sensors = sm.SensorModel(seed=99)
        clean = sm.run_trial(arm, self.cfg, nominal, sensors=sensors)
        faulty = sm.run_trial(arm, self.cfg, nominal, fault=fault, sensors=sensors)
        step = fault_sample_index(4.0, self.cfg.high_rate)
        np.testing.assert_array_equal(
            clean.observed_seq.data[:step], faulty.observed_seq.data[:step]
        )

    def test_fault_joint_out_of_range(self, arm, nominal):
        with pytest.raises(ValueError):
            sm.run_trial(arm, self.cfg, nominal, fault=sm.FaultSpec("joint_lock", 9, 3.0))

    def test_overshoot_bounds_validated(self):
        with pytest.raises(ValueError):
            sm.FaultSpec("joint_lock", 0, 3.0, overshoot_deg=20.0)

    def test_ee_path_matches_fk_of_actual(self, arm, nominal):
        trace = sm.run_trial(arm, self.cfg, nominal)
        for tick in (0, 100, 299):
            np.testing.assert_allclose(
                trace.ee_path[tick], sm.forward_kinematics(arm, trace.actual[tick]), atol=1e-12
            )

    def test_csv_export(self, arm, nominal, tmp_path):
        trace = sm.run_trial(arm, self.cfg, nominal)
        path = tmp_path / "trace.csv"
        trace_to_csv(trace, path, low_rate=self.cfg.low_rate)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("tick,time_s,cmd_joint0")
        assert len(lines) == 1 + trace.commanded.shape[0]
