"""Synthetic demonstration generation for the planar arm.

Two families of tasks are generated as a stand-in for teleoperated
demonstrations:

* pick-and-place: up to four skills, each a 15-step end-effector path
  through start / object / place / retreat waypoints with a grasp window.
  Repetitions differ through small perturbations of the per-step
  end-effector targets, run through inverse kinematics (so joint-channel
  variability is heterogeneous, as it would be for a redundant arm), plus
  sensed-force noise.

* follow-through reaches: a start-to-target reach whose lateral curvature
  sign is tied to a binary visual cue, optionally continued to a secondary
  target. Cue channels switch on at step 0 (planning conditions) or at
  movement onset (execute-only), which is what the contextual-inference
  experiments manipulate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import ArmModel, default_arm, forward_kinematics, ik_dls
from .sequences import CUE, EXTERO, PROPRIO, SensorimotorSequence

GRIP_FORCE = 1.0

# pick-and-place: (start, object, place, retreat) end-effector waypoints.
# Objects sit close to the base (arm folds), places far out (arm extends),
# so every joint sweeps an appreciable range over a skill.
_PICK_PLACE_SKILLS = [
    ((0.66, 0.94), (0.55, 0.00), (-0.10, 1.20), (0.40, 0.69)),
    ((-0.66, 0.94), (-0.55, 0.00), (0.10, 1.20), (-0.40, 0.69)),
    ((1.10, 0.30), (0.45, 0.30), (0.55, 1.15), (0.75, 0.60)),
    ((-1.10, 0.30), (-0.45, 0.30), (-0.55, 1.15), (-0.75, 0.60)),
]
_PICK_PLACE_STEPS = 15
_GRASP_STEP = 4
_RELEASE_STEP = 11

PICK_PLACE_LABELS = (
    [f"joint{j}" for j in range(7)]
    + ["ee_x", "ee_y", "grip_toggle", "grip_force_l", "grip_force_r", "cue_a", "cue_b"]
)
PICK_PLACE_KINDS = [PROPRIO] * 10 + [EXTERO, EXTERO, CUE, CUE]


def _ik_seed(arm: ArmModel, first_target) -> np.ndarray:
    # curl the arm toward the target's side to keep DLS away from the fold
    angle = 0.2 if first_target[0] >= 0 else 0.5
    return np.full(arm.n_joints, angle)


def _interp_path(anchors: list[tuple[int, tuple[float, float]]], n_steps: int) -> np.ndarray:
    path = np.zeros((n_steps, 2))
    for (s0, p0), (s1, p1) in zip(anchors[:-1], anchors[1:]):
        for s in range(s0, s1 + 1):
            frac = 0.0 if s1 == s0 else (s - s0) / (s1 - s0)
            eased = 0.5 - 0.5 * np.cos(np.pi * frac)  # zero end velocities
            path[s] = (1 - eased) * np.asarray(p0) + eased * np.asarray(p1)
    return path


def _pick_place_targets(skill_idx: int) -> tuple[np.ndarray, np.ndarray]:
    start, obj, place, retreat = _PICK_PLACE_SKILLS[skill_idx]
    anchors = [(0, start), (_GRASP_STEP - 1, obj), (_GRASP_STEP + 1, obj),
               (_RELEASE_STEP - 1, place), (_RELEASE_STEP + 1, place),
               (_PICK_PLACE_STEPS - 1, retreat)]
    path = _interp_path(anchors, _PICK_PLACE_STEPS)
    # grasp/release mid-dwell, while the end effector is stationary
    toggle = np.zeros(_PICK_PLACE_STEPS)
    toggle[_GRASP_STEP:_RELEASE_STEP] = 1.0
    return path, toggle


def _solve_path(arm: ArmModel, path: np.ndarray) -> np.ndarray:
    q = _ik_seed(arm, path[0])
    joints = np.zeros((path.shape[0], arm.n_joints))
    for s in range(path.shape[0]):
        q = ik_dls(arm, path[s], q)
        joints[s] = q
    return joints


def _assemble_pick_place(arm, path, toggle, force_noise, skill_id, rep_id) -> SensorimotorSequence:
    joints = _solve_path(arm, path)
    ee = np.array([forward_kinematics(arm, q) for q in joints])
    data = np.zeros((_PICK_PLACE_STEPS, len(PICK_PLACE_LABELS)))
    data[:, :7] = joints
    data[:, 7:9] = ee
    data[:, 9] = toggle
    data[:, 10:12] = GRIP_FORCE * toggle[:, None] + force_noise
    # cue channels stay zero: pick-and-place skills are distinguished by pose
    return SensorimotorSequence(
        data=data,
        channel_labels=list(PICK_PLACE_LABELS),
        channel_kinds=list(PICK_PLACE_KINDS),
        skill_id=skill_id,
        rep_id=rep_id,
    )


def nominal_pick_place(arm: ArmModel | None, skill_idx: int) -> SensorimotorSequence:
    """Noise-free command trajectory of one pick-and-place skill."""
    arm = arm or default_arm()
    path, toggle = _pick_place_targets(skill_idx)
    zero_force = np.zeros((_PICK_PLACE_STEPS, 2))
    return _assemble_pick_place(arm, path, toggle, zero_force, f"pp{skill_idx}", "nominal")


def gen_pick_place(
    arm: ArmModel | None = None,
    n_reps: int = 10,
    n_skills: int = 2,
    noise: float = 0.01,
    seed: int = 0,
) -> list[SensorimotorSequence]:
    """Noisy repetitions of pick-and-place skills, 15 steps at 2 Hz each.

    Repetition-to-repetition variability comes from perturbing the per-step
    end-effector targets (std ``noise`` meters) before inverse kinematics,
    and from sensed-force noise; with noise=0 all repetitions of a skill
    are identical.
    """
    arm = arm or default_arm()
    if not 1 <= n_skills <= len(_PICK_PLACE_SKILLS):
        raise ValueError(f"n_skills must be in [1, {len(_PICK_PLACE_SKILLS)}]")
    out = []
    for skill_idx in range(n_skills):
        path, toggle = _pick_place_targets(skill_idx)
        for rep in range(n_reps):
            rng = np.random.default_rng((seed, skill_idx, rep))
            jitter = rng.normal(0.0, noise, size=path.shape) if noise > 0 else np.zeros_like(path)
            force_noise = rng.normal(0.0, noise, size=(_PICK_PLACE_STEPS, 2)) if noise > 0 \
                else np.zeros((_PICK_PLACE_STEPS, 2))
            out.append(
                _assemble_pick_place(
                    arm, path + jitter, toggle, force_noise, f"pp{skill_idx}", f"r{rep}"
                )
            )
    return out


# ---------------------------------------------------------------------------
# Follow-through task
# ---------------------------------------------------------------------------

PLAN_ONLY = "plan_only"
PLAN_AND_EXECUTE = "plan_and_execute"
EXECUTE_ONLY = "execute_only"
FOLLOWTHROUGH_CONDITIONS = (PLAN_ONLY, PLAN_AND_EXECUTE, EXECUTE_ONLY)

CUE_CW = "cw"
CUE_CCW = "ccw"

FT_PREP_STEPS = 2
FT_REACH_STEPS = 12
FT_FOLLOW_STEPS = 6
FT_TOTAL_STEPS = FT_PREP_STEPS + FT_REACH_STEPS + FT_FOLLOW_STEPS

FT_START = np.array([0.75, -0.15])
FT_TARGET = np.array([0.75, 0.60])
_FT_SECONDARY_OFFSET = np.array([0.20, 0.15])  # x sign follows the cue

FOLLOWTHROUGH_LABELS = [f"joint{j}" for j in range(7)] + ["ee_x", "ee_y", "cue_cw", "cue_ccw"]
FOLLOWTHROUGH_KINDS = [PROPRIO] * 9 + [CUE, CUE]


@dataclass(frozen=True)
class FollowThroughCondition:
    """Which parts of the follow-through are planned/executed, and when the cue shows."""

    name: str
    cue_onset_step: int
    executes_followthrough: bool

    def __post_init__(self):
        if self.name not in FOLLOWTHROUGH_CONDITIONS:
            raise ValueError(f"unknown condition {self.name!r}")
        if self.name in (PLAN_ONLY, PLAN_AND_EXECUTE) and self.cue_onset_step != 0:
            raise ValueError("planning conditions show the cue from step 0")
        if self.name == EXECUTE_ONLY and self.cue_onset_step != FT_PREP_STEPS:
            raise ValueError("execute-only shows the cue at movement onset")
        if self.name == PLAN_ONLY and self.executes_followthrough:
            raise ValueError("plan-only never executes the follow-through")


def followthrough_condition(name: str) -> FollowThroughCondition:
    if name == PLAN_ONLY:
        return FollowThroughCondition(name, 0, False)
    if name == PLAN_AND_EXECUTE:
        return FollowThroughCondition(name, 0, True)
    if name == EXECUTE_ONLY:
        return FollowThroughCondition(name, FT_PREP_STEPS, True)
    raise ValueError(f"unknown condition {name!r}")


def _followthrough_path(cue: str, amplitude: float, executes: bool) -> np.ndarray:
    """Per-step end-effector targets: hold, curved reach, follow-through or hold."""
    if cue not in (CUE_CW, CUE_CCW):
        raise ValueError(f"cue must be '{CUE_CW}' or '{CUE_CCW}'")
    sign = 1.0 if cue == CUE_CW else -1.0
    path = np.zeros((FT_TOTAL_STEPS, 2))
    path[:FT_PREP_STEPS] = FT_START
    for j in range(FT_REACH_STEPS):
        s = (j + 1) / FT_REACH_STEPS
        p = (1 - s) * FT_START + s * FT_TARGET
        p = p + sign * amplitude * 4.0 * s * (1.0 - s) * np.array([1.0, 0.0])
        path[FT_PREP_STEPS + j] = p
    secondary = FT_TARGET + _FT_SECONDARY_OFFSET * np.array([sign, 1.0])
    for j in range(FT_FOLLOW_STEPS):
        s = (j + 1) / FT_FOLLOW_STEPS
        idx = FT_PREP_STEPS + FT_REACH_STEPS + j
        path[idx] = (1 - s) * FT_TARGET + s * secondary if executes else FT_TARGET
    return path


def _assemble_followthrough(arm, path, cue, onset_step, skill_id, rep_id) -> SensorimotorSequence:
    joints = _solve_path(arm, path)
    ee = np.array([forward_kinematics(arm, q) for q in joints])
    data = np.zeros((FT_TOTAL_STEPS, len(FOLLOWTHROUGH_LABELS)))
    data[:, :7] = joints
    data[:, 7:9] = ee
    cue_col = 9 if cue == CUE_CW else 10
    data[onset_step:, cue_col] = 1.0
    return SensorimotorSequence(
        data=data,
        channel_labels=list(FOLLOWTHROUGH_LABELS),
        channel_kinds=list(FOLLOWTHROUGH_KINDS),
        skill_id=skill_id,
        rep_id=rep_id,
    )


def nominal_followthrough(
    cond: FollowThroughCondition,
    cue: str,
    amplitude: float = 0.12,
    arm: ArmModel | None = None,
) -> SensorimotorSequence:
    arm = arm or default_arm()
    path = _followthrough_path(cue, amplitude, cond.executes_followthrough)
    return _assemble_followthrough(arm, path, cue, cond.cue_onset_step,
                                   f"{cond.name}-{cue}", "nominal")


def gen_followthrough(
    cond: FollowThroughCondition,
    cue: str,
    n_reps: int,
    seed: int,
    noise: float = 0.01,
    amplitude: float = 0.12,
    arm: ArmModel | None = None,
) -> list[SensorimotorSequence]:
    """Noisy follow-through demonstrations for one cue class.

    The per-repetition target jitter is keyed by (seed, rep) only, so
    repetition k of the CW and CCW classes shares identical noise draws and
    pre-cue-onset steps match bit-exactly across classes.
    """
    arm = arm or default_arm()
    path = _followthrough_path(cue, amplitude, cond.executes_followthrough)
    out = []
    for rep in range(n_reps):
        rng = np.random.default_rng((seed, rep))
        jitter = rng.normal(0.0, noise, size=path.shape) if noise > 0 else np.zeros_like(path)
        out.append(
            _assemble_followthrough(
                arm, path + jitter, cue, cond.cue_onset_step,
                f"{cond.name}-{cue}", f"r{rep}",
            )
        )
    return out
