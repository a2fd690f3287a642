"""Redundant planar arm: forward/inverse kinematics, position servo, trials.

The arm is a chain of revolute joints in the plane. A high-rate position
servo tracks joint targets that are zero-order-held from the low-rate
command stream, and faults (permanent joint locks, transient pushes) can be
injected into a trial. Trials record commanded and actual joint angles per
servo tick plus a sensor stream sampled back at the command rate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sequences import CUE, SensorimotorSequence

JOINT_LOCK = "joint_lock"
TRANSIENT_PUSH = "transient_push"


class IkError(RuntimeError):
    """Inverse kinematics failed; carries the final position residual in meters."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e} m)")
        self.residual = residual


@dataclass
class ArmModel:
    """Planar chain: link lengths in meters, per-joint [lo, hi] limits in radians."""

    link_lengths: np.ndarray
    joint_limits: np.ndarray

    def __post_init__(self):
        self.link_lengths = np.asarray(self.link_lengths, dtype=np.float64)
        self.joint_limits = np.asarray(self.joint_limits, dtype=np.float64)
        if self.link_lengths.ndim != 1 or np.any(self.link_lengths <= 0):
            raise ValueError("link lengths must be positive")
        if self.joint_limits.shape != (self.n_joints, 2):
            raise ValueError("joint_limits must be (n_joints, 2)")
        if np.any(self.joint_limits[:, 0] >= self.joint_limits[:, 1]):
            raise ValueError("each joint limit must satisfy lo < hi")

    @property
    def n_joints(self) -> int:
        return self.link_lengths.shape[0]

    @property
    def reach(self) -> float:
        return float(self.link_lengths.sum())

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.joint_limits[:, 0], self.joint_limits[:, 1])


def default_arm(n_joints: int = 7) -> ArmModel:
    """Desk-scale redundant arm, ~1.4 m reach for the default 7 joints.

    Near-equal links keep distal joints active under damped-least-squares
    inverse kinematics, so demonstrations exercise every joint.
    """
    lengths = np.array([0.24, 0.23, 0.22, 0.21, 0.20, 0.17, 0.16])[:n_joints]
    if n_joints > 7:
        raise ValueError("default arm supports at most 7 joints")
    limits = np.tile([-2.7, 2.7], (n_joints, 1))
    return ArmModel(link_lengths=lengths, joint_limits=limits)


def forward_kinematics(arm: ArmModel, q: np.ndarray, check_limits: bool = False) -> np.ndarray:
    """End-effector (x, y) of the planar chain at joint angles q."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (arm.n_joints,):
        raise ValueError(f"expected {arm.n_joints} joint angles, got shape {q.shape}")
    if check_limits and (
        np.any(q < arm.joint_limits[:, 0]) or np.any(q > arm.joint_limits[:, 1])
    ):
        warnings.warn("joint angles outside limits", stacklevel=2)
    theta = np.cumsum(q)
    x = float(np.dot(arm.link_lengths, np.cos(theta)))
    y = float(np.dot(arm.link_lengths, np.sin(theta)))
    return np.array([x, y])


def jacobian(arm: ArmModel, q: np.ndarray) -> np.ndarray:
    """2 x J positional Jacobian of the end effector."""
    theta = np.cumsum(np.asarray(q, dtype=np.float64))
    lx = arm.link_lengths * np.cos(theta)
    ly = arm.link_lengths * np.sin(theta)
    # d(ee)/dq_i involves all links distal to joint i: reverse cumulative sums.
    jx = -np.cumsum(ly[::-1])[::-1]
    jy = np.cumsum(lx[::-1])[::-1]
    return np.vstack([jx, jy])


def ik_dls(
    arm: ArmModel,
    target,
    q_seed: np.ndarray,
    damping: float = 0.1,
    max_iters: int = 200,
    tol_m: float = 1e-4,
) -> np.ndarray:
    """Damped-least-squares inverse kinematics, clamped to joint limits.

    Raises IkError for targets outside the reachable annulus or when the
    residual does not drop below ``tol_m`` within ``max_iters``.
    """
    target = np.asarray(target, dtype=np.float64)
    r = float(np.hypot(target[0], target[1]))
    inner = max(0.0, 2.0 * float(arm.link_lengths.max()) - arm.reach)
    if r > arm.reach or r < inner:
        raise IkError(f"target {target} outside reachable annulus", residual=abs(r - arm.reach))
    q = arm.clamp(np.asarray(q_seed, dtype=np.float64))
    err = target - forward_kinematics(arm, q)
    for _ in range(max_iters):
        if float(np.hypot(err[0], err[1])) < tol_m:
            return q
        jac = jacobian(arm, q)
        a = jac @ jac.T + (damping ** 2) * np.eye(2)
        q = arm.clamp(q + jac.T @ np.linalg.solve(a, err))
        err = target - forward_kinematics(arm, q)
    residual = float(np.hypot(err[0], err[1]))
    if residual < tol_m:
        return q
    raise IkError("inverse kinematics did not converge", residual=residual)


@dataclass
class ControllerConfig:
    """Two-rate position control: commands at high_rate, servo at low_rate."""

    high_rate: int = 2     # command rate, Hz
    low_rate: int = 40     # servo rate, Hz
    max_joint_speed: float = 1.5  # rad/s
    gain: float = 1.0

    def __post_init__(self):
        if self.low_rate % self.high_rate != 0:
            raise ValueError("low_rate must be an integer multiple of high_rate")
        if self.max_joint_speed <= 0:
            raise ValueError("max_joint_speed must be positive")

    @property
    def ticks_per_step(self) -> int:
        return self.low_rate // self.high_rate

    @property
    def tick_budget(self) -> float:
        """Maximum joint travel per servo tick, radians."""
        return self.max_joint_speed / self.low_rate


def servo_step(q_actual: np.ndarray, q_desired: np.ndarray, cfg: ControllerConfig) -> np.ndarray:
    """One servo tick: move each joint toward its target, speed-limited.

    Joints within one tick's travel of the target converge exactly; farther
    joints move by gain*delta clipped to the per-tick budget.
    """
    q_actual = np.asarray(q_actual, dtype=np.float64)
    q_desired = np.asarray(q_desired, dtype=np.float64)
    delta = q_desired - q_actual
    budget = cfg.tick_budget
    step = np.clip(cfg.gain * delta, -budget, budget)
    q_new = q_actual + step
    snap = np.abs(delta) <= budget
    q_new[snap] = q_desired[snap]
    return q_new


@dataclass
class FaultSpec:
    """Injected fault: a permanent joint lock or a transient positional push."""

    kind: str
    joint: int
    time_s: float
    overshoot_deg: float = 0.0  # joint_lock only
    push_rad: float = 0.0       # transient_push only
    duration_s: float = 0.0     # transient_push only

    def __post_init__(self):
        if self.kind not in (JOINT_LOCK, TRANSIENT_PUSH):
            raise ValueError(f"unknown fault kind {self.kind!r}")
        if self.time_s < 0:
            raise ValueError("fault time must be nonnegative")
        if not -15.0 <= self.overshoot_deg <= 15.0:
            raise ValueError("overshoot must be within [-15, +15] degrees")
        if self.kind == TRANSIENT_PUSH and self.duration_s <= 0:
            raise ValueError("transient push needs a positive duration")


def fault_tick_index(time_s: float, low_rate: int) -> int:
    """First servo tick whose post-update state is at or past ``time_s``.

    Tick t advances the state to time (t+1)/low_rate, so a fault at t=3 s
    already shows in the tick (and sample) landing exactly on 3 s.
    """
    return max(0, math.ceil(time_s * low_rate) - 1)


def fault_sample_index(time_s: float, high_rate: int) -> int:
    """Index of the first command-rate sample that can show a fault at ``time_s``."""
    return max(0, math.ceil(time_s * high_rate) - 1)


@dataclass
class SensorModel:
    """Synthesized sensing for trials: grip force profile and observation noise."""

    grip_force: float = 1.0
    force_noise_std: float = 0.01
    proprio_noise_std: float = 0.005
    seed: int = 0


@dataclass
class TrialTrace:
    """Per-tick servo record plus the sensor stream sampled at command rate."""

    commanded: np.ndarray  # (ticks, J) radians
    actual: np.ndarray     # (ticks, J) radians
    ee_path: np.ndarray    # (ticks, 2) meters
    observed_seq: SensorimotorSequence
    fault: FaultSpec | None = None

    @property
    def final_ee(self) -> np.ndarray:
        return self.ee_path[-1]


def _channel_groups(seq: SensorimotorSequence, n_joints: int):
    joints = seq.joint_channels()
    if len(joints) != n_joints:
        raise ValueError(f"sequence has {len(joints)} joint channels, arm has {n_joints}")
    by_label = {label: i for i, label in enumerate(seq.channel_labels)}
    ee = [by_label[k] for k in ("ee_x", "ee_y") if k in by_label]
    force = [i for i, lbl in enumerate(seq.channel_labels) if lbl.startswith("grip_force")]
    toggle = by_label.get("grip_toggle")
    return [c for c, _ in joints], ee, force, toggle


def run_trial(
    arm: ArmModel,
    cfg: ControllerConfig,
    desired_seq: SensorimotorSequence,
    fault: FaultSpec | None = None,
    sensors: SensorModel | None = None,
) -> TrialTrace:
    """Servo through a raw-unit command sequence, optionally injecting a fault.

    The command sequence's joint channels are zero-order-held across servo
    ticks. A joint_lock freezes the joint at (target at fault time +
    overshoot) until the end; a transient_push holds the joint offset from
    its command for the push window, then releases it to the servo. The
    observed stream mirrors the command sequence's channel layout: measured
    joints and end-effector with sensor noise, synthesized grip forces, and
    cue/toggle channels copied from the commands.

    Noise draws are consumed in a fault-independent order so that, for a
    fixed sensor seed, observations before the fault time are bit-identical
    to the no-fault trial.
    """
    if desired_seq.normalized:
        raise ValueError("run_trial needs raw-unit commands")
    if sensors is None:
        sensors = SensorModel()
    n_joints = arm.n_joints
    joint_ch, ee_ch, force_ch, toggle_ch = _channel_groups(desired_seq, n_joints)
    targets = desired_seq.data[:, joint_ch]
    n_steps = desired_seq.n_steps
    tps = cfg.ticks_per_step
    n_ticks = n_steps * tps
    duration_s = n_steps / cfg.high_rate

    if fault is not None:
        if not 0 <= fault.joint < n_joints:
            raise ValueError(f"fault joint {fault.joint} out of range")
        if fault.time_s >= duration_s:
            raise ValueError("fault time beyond trial end")

    rng = np.random.default_rng(sensors.seed)
    joint_obs_noise = rng.normal(0.0, sensors.proprio_noise_std, size=(n_steps, n_joints))
    ee_obs_noise = rng.normal(0.0, sensors.proprio_noise_std, size=(n_steps, len(ee_ch)))
    force_obs_noise = rng.normal(0.0, sensors.force_noise_std, size=(n_steps, len(force_ch)))

    commanded = np.repeat(targets, tps, axis=0)
    actual = np.empty((n_ticks, n_joints))
    ee_path = np.empty((n_ticks, 2))

    lock_tick = push_tick = push_end = -1
    lock_value = 0.0
    if fault is not None:
        fault_tick = fault_tick_index(fault.time_s, cfg.low_rate)
        if fault.kind == JOINT_LOCK:
            lock_tick = fault_tick
            lock_value = commanded[fault_tick, fault.joint] + np.deg2rad(fault.overshoot_deg)
            lo, hi = arm.joint_limits[fault.joint]
            if not lo <= lock_value <= hi:
                warnings.warn("joint lock value outside joint limits", stacklevel=2)
        else:
            push_tick = fault_tick
            push_end = min(n_ticks, fault_tick + int(round(fault.duration_s * cfg.low_rate)))

    q = targets[0].copy()
    for tick in range(n_ticks):
        q = servo_step(q, commanded[tick], cfg)
        if fault is not None:
            if lock_tick >= 0 and tick >= lock_tick:
                q[fault.joint] = lock_value
            elif push_tick >= 0 and push_tick <= tick < push_end:
                q[fault.joint] = commanded[tick, fault.joint] + fault.push_rad
        actual[tick] = q
        ee_path[tick] = forward_kinematics(arm, q)

    observed = desired_seq.data.copy()
    sample_ticks = np.arange(1, n_steps + 1) * tps - 1
    observed[:, joint_ch] = actual[sample_ticks] + joint_obs_noise
    if ee_ch:
        observed[:, ee_ch] = ee_path[sample_ticks] + ee_obs_noise
    if force_ch:
        if toggle_ch is None:
            grasp = np.zeros(n_steps)
        else:
            grasp = (desired_seq.data[:, toggle_ch] > 0.5).astype(np.float64)
        observed[:, force_ch] = sensors.grip_force * grasp[:, None] + force_obs_noise
    # cue, toggle and any remaining channels stay as commanded
    cue_ch = desired_seq.channels_of_kind(CUE)
    observed[:, cue_ch] = desired_seq.data[:, cue_ch]

    observed_seq = SensorimotorSequence(
        data=observed,
        channel_labels=list(desired_seq.channel_labels),
        channel_kinds=list(desired_seq.channel_kinds),
        skill_id=desired_seq.skill_id,
        rep_id=f"{desired_seq.rep_id}-trial",
        rate_hz=float(cfg.high_rate),
    )
    return TrialTrace(
        commanded=commanded, actual=actual, ee_path=ee_path,
        observed_seq=observed_seq, fault=fault,
    )


def trace_to_csv(trace: TrialTrace, path, low_rate: int = 40) -> None:
    """One row per servo tick: tick, time_s, commanded joints, actual joints, ee."""
    n_joints = trace.commanded.shape[1]
    cols = (
        ["tick", "time_s"]
        + [f"cmd_joint{j}" for j in range(n_joints)]
        + [f"act_joint{j}" for j in range(n_joints)]
        + ["ee_x", "ee_y"]
    )
    lines = [",".join(cols)]
    for t in range(trace.commanded.shape[0]):
        row = [str(t), repr(t / low_rate)]
        row += [repr(v) for v in trace.commanded[t].tolist()]
        row += [repr(v) for v in trace.actual[t].tolist()]
        row += [repr(v) for v in trace.ee_path[t].tolist()]
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n")
