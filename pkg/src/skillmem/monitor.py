"""Energy-based fault detection, isolation, thresholds, and the fault grid.

A trained sequence memory watches a trial by recalling the whole trajectory
from the first observation and scoring each incoming step by the summed
squared observation error against the recalled plan. Thresholds are
calibrated as percentiles of those scores during normal operation, faults
are flagged on the first exceedance, and the faulted joint is isolated as
the joint channel with the largest absolute error. The same machinery
evaluates the statistics baseline side by side on a systematic grid of
joint-lock faults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import ZscoreDetector
from .kinematics import (
    ArmModel,
    ControllerConfig,
    FaultSpec,
    SensorModel,
    TrialTrace,
    fault_sample_index,
    run_trial,
)
from .sequences import (
    CUE,
    ChannelStats,
    SensorimotorSequence,
    denormalize_rows,
    normalize_rows,
)
from .tpc import InferenceConfig, RecallResult, TpcModel, recall_offline

TPC_METHOD = "tpc"
ZSCORE_METHOD = "zscore"


def fault_score(observed: np.ndarray, predicted: np.ndarray) -> float:
    """Sum of squared per-channel errors at one step (normalized units)."""
    observed = np.asarray(observed, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if observed.shape != predicted.shape:
        raise ValueError(f"shape mismatch {observed.shape} vs {predicted.shape}")
    diff = observed - predicted
    return float(diff @ diff)


def score_trace(x_hat: np.ndarray, observed: np.ndarray) -> np.ndarray:
    """Per-step fault scores of an observation stream against a recalled plan."""
    x_hat = np.asarray(x_hat, dtype=np.float64)
    observed = np.asarray(observed, dtype=np.float64)
    if x_hat.shape != observed.shape:
        raise ValueError(f"shape mismatch {x_hat.shape} vs {observed.shape}")
    diff = observed - x_hat
    return np.einsum("td,td->t", diff, diff)


@dataclass
class DetectionThreshold:
    """Nearest-rank percentile of the calibration score distribution."""

    value: float
    percentile_q: float
    calibration_n: int


def calibrate_threshold(normal_energies, q: float) -> DetectionThreshold:
    """Nearest-rank percentile: sorted ascending, element ceil(q*n) (1-based)."""
    energies = np.sort(np.asarray(list(normal_energies), dtype=np.float64))
    n = energies.shape[0]
    if n == 0:
        raise ValueError("calibration set is empty")
    if not 0.0 < q <= 1.0:
        raise ValueError("q must be in (0, 1]")
    rank = max(1, math.ceil(q * n))
    return DetectionThreshold(value=float(energies[rank - 1]), percentile_q=q, calibration_n=n)


@dataclass
class DetectionReport:
    """Verdict for one monitored trial."""

    energy_trace: np.ndarray
    detected: bool
    detect_step: int | None = None
    isolated_channel: int | None = None
    isolated_joint: int | None = None
    truth: FaultSpec | None = None


def detect_from_scores(
    scores: np.ndarray, threshold: DetectionThreshold, truth: FaultSpec | None = None
) -> DetectionReport:
    exceed = np.asarray(scores) > threshold.value
    detected = bool(exceed.any())
    return DetectionReport(
        energy_trace=np.asarray(scores, dtype=np.float64),
        detected=detected,
        detect_step=int(np.argmax(exceed)) if detected else None,
        truth=truth,
    )


def detect(
    recall: RecallResult,
    observed: SensorimotorSequence,
    threshold: DetectionThreshold,
    truth: FaultSpec | None = None,
) -> DetectionReport:
    """Flag the first step whose fault score exceeds the threshold."""
    if recall.x_hat.shape[0] != observed.n_steps:
        raise ValueError("recall and observation lengths differ")
    return detect_from_scores(score_trace(recall.x_hat, observed.data), threshold, truth)


def argmax_channel(
    deviations: np.ndarray, seq: SensorimotorSequence, channels=None
) -> tuple[int, int | None]:
    """Largest-deviation channel (lowest index wins ties) and its joint, if any."""
    joint_map = dict(seq.joint_channels())
    if channels is None:
        channels = sorted(joint_map)
    if not channels:
        raise ValueError("no channels to isolate over")
    deviations = np.asarray(deviations, dtype=np.float64)
    best = channels[int(np.argmax(deviations[list(channels)]))]
    return best, joint_map.get(best)


def isolate(
    recall: RecallResult,
    observed: SensorimotorSequence,
    step: int,
    channels=None,
) -> tuple[int, int | None]:
    """Attribute a fault to the channel with the largest absolute error at ``step``.

    By default only joint channels are ranked (effects are reported in
    configuration space); pass an explicit channel list to rank others.
    """
    if not 0 <= step < observed.n_steps:
        raise ValueError(f"step {step} out of range")
    deviations = np.abs(observed.data[step] - recall.x_hat[step])
    return argmax_channel(deviations, observed, channels)


# ---------------------------------------------------------------------------
# Recalled motor-plan deviation (contextual-inference metric)
# ---------------------------------------------------------------------------

@dataclass
class PeadResult:
    """Maximum perpendicular deviation from the start-to-target line, meters."""

    value: float
    signed: float


def pead(path: np.ndarray, start_pt, target_pt) -> PeadResult:
    """Peak absolute deviation of a path perpendicular to start->target.

    The path is truncated at its closest approach to the target so that any
    follow-through past the target does not count. The signed value keeps
    the side of the line (positive = left of the start->target direction).
    """
    path = np.atleast_2d(np.asarray(path, dtype=np.float64))
    s = np.asarray(start_pt, dtype=np.float64)
    t = np.asarray(target_pt, dtype=np.float64)
    span = t - s
    norm = float(np.hypot(span[0], span[1]))
    if norm == 0.0:
        raise ValueError("start and target coincide")
    u = span / norm
    cut = int(np.argmin(np.einsum("nd,nd->n", path - t, path - t)))
    rel = path[: cut + 1] - s
    perp = u[0] * rel[:, 1] - u[1] * rel[:, 0]
    i = int(np.argmax(np.abs(perp)))
    return PeadResult(value=float(abs(perp[i])), signed=float(perp[i]))


# ---------------------------------------------------------------------------
# Monitored execution: recalled commands and reactive correction
# ---------------------------------------------------------------------------

def recalled_commands(
    model: TpcModel,
    nominal_seq: SensorimotorSequence,
    stats: ChannelStats,
    inf_cfg: InferenceConfig,
    cue_len: int = 1,
) -> SensorimotorSequence:
    """Recall a full command sequence from the first observation(s) of a skill.

    The recalled rows are denormalized back to raw units; binary command
    channels (cues, gripper toggle) are rounded back onto {0, 1}.
    """
    norm_rows = normalize_rows(nominal_seq.data, stats)
    rec = recall_offline(model, norm_rows[:cue_len], nominal_seq.n_steps, inf_cfg)
    raw = denormalize_rows(rec.x_hat, stats)
    binary = list(nominal_seq.channels_of_kind(CUE))
    if "grip_toggle" in nominal_seq.channel_labels:
        binary.append(nominal_seq.channel_labels.index("grip_toggle"))
    for c in binary:
        raw[:, c] = np.clip(np.round(raw[:, c]), 0.0, 1.0)
    return SensorimotorSequence(
        data=raw,
        channel_labels=list(nominal_seq.channel_labels),
        channel_kinds=list(nominal_seq.channel_kinds),
        skill_id=nominal_seq.skill_id,
        rep_id="recalled",
        rate_hz=nominal_seq.rate_hz,
    )


def reactive_correct(
    model: TpcModel,
    arm: ArmModel,
    cfg: ControllerConfig,
    nominal_seq: SensorimotorSequence,
    stats: ChannelStats,
    inf_cfg: InferenceConfig,
    fault: FaultSpec | None = None,
    sensors: SensorModel | None = None,
) -> TrialTrace:
    """Execute the recalled plan under the position servo, with optional fault.

    The servo tracks the model's recalled joint targets at the servo rate,
    so a transient perturbation is pulled back toward the plan as soon as
    it releases; with no fault this is exactly run_trial on the recalled
    commands.
    """
    cmds = recalled_commands(model, nominal_seq, stats, inf_cfg)
    return run_trial(arm, cfg, cmds, fault=fault, sensors=sensors)


# ---------------------------------------------------------------------------
# Systematic fault grid
# ---------------------------------------------------------------------------

GRID_TIMES = tuple(1.0 + 0.5 * k for k in range(10))  # 1.0 .. 5.5 s
GRID_OVERSHOOTS = (-15.0, -10.0, -5.0, 0.0, 5.0, 10.0, 15.0)
THRESHOLD_QS = (0.95, 0.96, 0.97, 0.98, 0.99)


@dataclass
class GridTrial:
    skill_id: str
    fault: FaultSpec
    sensor_seed: int


def build_fault_grid(
    skill_ids,
    n_joints: int = 7,
    times=GRID_TIMES,
    overshoots=GRID_OVERSHOOTS,
    seed_base: int = 10_000,
) -> list[GridTrial]:
    """Joint-lock grid: skills x joints x fault times x overshoots, in that order."""
    trials = []
    idx = 0
    for skill_id in skill_ids:
        for joint in range(n_joints):
            for time_s in times:
                for overshoot in overshoots:
                    trials.append(
                        GridTrial(
                            skill_id=skill_id,
                            fault=FaultSpec("joint_lock", joint, time_s, overshoot_deg=overshoot),
                            sensor_seed=seed_base + idx,
                        )
                    )
                    idx += 1
    return trials


@dataclass
class SkillMonitor:
    """Everything needed to watch trials: model, stats, baselines, commands."""

    model: TpcModel
    stats: ChannelStats
    inf_cfg: InferenceConfig
    nominals: dict[str, SensorimotorSequence]
    detectors: dict[str, ZscoreDetector]

    def tpc_scores(self, observed: SensorimotorSequence) -> tuple[RecallResult, np.ndarray]:
        norm = normalize_rows(observed.data, self.stats)
        rec = recall_offline(self.model, norm[:1], observed.n_steps, self.inf_cfg)
        return rec, score_trace(rec.x_hat, norm)

    def baseline_scores(self, observed: SensorimotorSequence) -> np.ndarray:
        return self.detectors[observed.skill_id].score_trace(observed.data)

    def baseline_errors(self, observed: SensorimotorSequence, step: int) -> np.ndarray:
        return self.detectors[observed.skill_id].errors(observed.data[step], step)


def run_grid_trial(
    monitor: SkillMonitor,
    arm: ArmModel,
    cfg: ControllerConfig,
    trial: GridTrial,
    sensors_template: SensorModel,
) -> SensorimotorSequence:
    sensors = SensorModel(
        grip_force=sensors_template.grip_force,
        force_noise_std=sensors_template.force_noise_std,
        proprio_noise_std=sensors_template.proprio_noise_std,
        seed=trial.sensor_seed,
    )
    trace = run_trial(arm, cfg, monitor.nominals[trial.skill_id], fault=trial.fault, sensors=sensors)
    return trace.observed_seq


@dataclass
class GridResult:
    """Aggregate verdicts for one (method, percentile) operating point."""

    method: str
    percentile_q: float
    threshold_value: float
    reports: list[DetectionReport] = field(default_factory=list)
    detection_accuracy: float = 0.0
    fnr: float = 0.0
    fpr: float = float("nan")


@dataclass
class GridEvaluation:
    results: list[GridResult]
    isolation_accuracy: dict[str, float]
    n_trials: int


def eval_grid(
    monitor: SkillMonitor,
    arm: ArmModel,
    cfg: ControllerConfig,
    trials: list[GridTrial],
    thresholds: dict[str, dict[float, DetectionThreshold]],
    sensors_template: SensorModel | None = None,
) -> GridEvaluation:
    """Run every grid trial through both monitors at every threshold.

    Detection accuracy counts trials with any exceedance. Isolation is
    scored threshold-independently at the fault's own sample step, matching
    how isolation accuracy is defined for the grid; per-report fields also
    carry the channel isolated at the detect step.
    """
    sensors_template = sensors_template or SensorModel()
    isolation_hits = {TPC_METHOD: 0, ZSCORE_METHOD: 0}
    per_method_reports: dict[str, dict[float, list[DetectionReport]]] = {
        m: {q: [] for q in thresholds[m]} for m in isolation_hits
    }
    for trial in trials:
        observed = run_grid_trial(monitor, arm, cfg, trial, sensors_template)
        fault_step = fault_sample_index(trial.fault.time_s, int(observed.rate_hz))
        norm_seq = observed.with_data(normalize_rows(observed.data, monitor.stats), normalized=True)

        rec, tpc_trace = monitor.tpc_scores(observed)
        base_trace = monitor.baseline_scores(observed)
        tpc_dev = np.abs(norm_seq.data[fault_step] - rec.x_hat[fault_step])
        base_dev = np.abs(monitor.baseline_errors(observed, fault_step))
        iso = {
            TPC_METHOD: argmax_channel(tpc_dev, observed),
            ZSCORE_METHOD: argmax_channel(base_dev, observed),
        }
        for method, trace in ((TPC_METHOD, tpc_trace), (ZSCORE_METHOD, base_trace)):
            chan, joint = iso[method]
            if joint == trial.fault.joint:
                isolation_hits[method] += 1
            for q, thr in thresholds[method].items():
                report = detect_from_scores(trace, thr, truth=trial.fault)
                report.isolated_channel = chan
                report.isolated_joint = joint
                per_method_reports[method][q].append(report)

    results = []
    n = len(trials)
    for method in (TPC_METHOD, ZSCORE_METHOD):
        for q, thr in thresholds[method].items():
            reports = per_method_reports[method][q]
            acc = sum(r.detected for r in reports) / n if n else 0.0
            results.append(
                GridResult(
                    method=method,
                    percentile_q=q,
                    threshold_value=thr.value,
                    reports=reports,
                    detection_accuracy=acc,
                    fnr=1.0 - acc,
                )
            )
    isolation = {m: (isolation_hits[m] / n if n else 0.0) for m in isolation_hits}
    return GridEvaluation(results=results, isolation_accuracy=isolation, n_trials=n)


def calibrate_monitor(
    monitor: SkillMonitor,
    arm: ArmModel,
    cfg: ControllerConfig,
    n_trials_per_skill: int = 10,
    qs=THRESHOLD_QS,
    sensors_template: SensorModel | None = None,
    seed_base: int = 500,
) -> dict[str, dict[float, DetectionThreshold]]:
    """Percentile thresholds from pooled per-step scores of no-fault trials."""
    sensors_template = sensors_template or SensorModel()
    pools: dict[str, list[float]] = {TPC_METHOD: [], ZSCORE_METHOD: []}
    idx = 0
    for skill_id in sorted(monitor.nominals):
        for _ in range(n_trials_per_skill):
            sensors = SensorModel(
                grip_force=sensors_template.grip_force,
                force_noise_std=sensors_template.force_noise_std,
                proprio_noise_std=sensors_template.proprio_noise_std,
                seed=seed_base + idx,
            )
            idx += 1
            trace = run_trial(arm, cfg, monitor.nominals[skill_id], sensors=sensors)
            _, tpc_trace = monitor.tpc_scores(trace.observed_seq)
            pools[TPC_METHOD].extend(tpc_trace.tolist())
            pools[ZSCORE_METHOD].extend(monitor.baseline_scores(trace.observed_seq).tolist())
    return {
        method: {q: calibrate_threshold(pool, q) for q in qs}
        for method, pool in pools.items()
    }


def measure_fpr(
    monitor: SkillMonitor,
    arm: ArmModel,
    cfg: ControllerConfig,
    thresholds: dict[str, dict[float, DetectionThreshold]],
    n_trials_per_skill: int = 100,
    sensors_template: SensorModel | None = None,
    seed_base: int = 900_000,
) -> dict[str, dict[float, float]]:
    """Per-step false-positive rate on held-out no-fault trials."""
    sensors_template = sensors_template or SensorModel()
    counts = {m: {q: 0 for q in thresholds[m]} for m in thresholds}
    total_steps = 0
    idx = 0
    for skill_id in sorted(monitor.nominals):
        for _ in range(n_trials_per_skill):
            sensors = SensorModel(
                grip_force=sensors_template.grip_force,
                force_noise_std=sensors_template.force_noise_std,
                proprio_noise_std=sensors_template.proprio_noise_std,
                seed=seed_base + idx,
            )
            idx += 1
            trace = run_trial(arm, cfg, monitor.nominals[skill_id], sensors=sensors)
            _, tpc_trace = monitor.tpc_scores(trace.observed_seq)
            traces = {
                TPC_METHOD: tpc_trace,
                ZSCORE_METHOD: monitor.baseline_scores(trace.observed_seq),
            }
            total_steps += trace.observed_seq.n_steps
            for m, tr in traces.items():
                for q, thr in thresholds[m].items():
                    counts[m][q] += int(np.sum(tr > thr.value))
    return {
        m: {q: counts[m][q] / total_steps for q in counts[m]} for m in counts
    }
