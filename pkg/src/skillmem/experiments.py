"""Experiment orchestration: train, monitor, and report at desk scale.

Every experiment is a pure function of its effective configuration (defaults
overlaid with user keys): outputs carry a fingerprint of that configuration
plus the seed list, rerunning with identical inputs reproduces every output
file byte for byte, and all derived randomness comes from named offsets of
the experiment seeds.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import baselines, demos, kinematics, modelio, monitor, tpc
from .sequences import (
    SensorimotorSequence,
    denormalize_rows,
    normalize_rows,
    save_sequences,
    load_sequences,
    zscore_apply,
    zscore_fit,
)

SPEED_ACCURACY_ITERS = (1, 2, 5, 10, 20, 50, 100)

# seed offsets for derived random streams
_EVAL_SEED_OFFSET = 7_700
_CALIBRATION_SEED_OFFSET = 500
_HELDOUT_SEED_OFFSET = 900_000
_GRID_SEED_OFFSET = 10_000
_REACTIVE_SEED_OFFSET = 40_000


@dataclass
class RunConfig:
    """Effective experiment configuration: flat string key-value pairs."""

    values: dict[str, str]

    def get(self, key: str, default: str | None = None) -> str:
        if key in self.values:
            return self.values[key]
        if default is None:
            raise KeyError(f"missing config key {key!r}")
        return default

    def get_int(self, key: str, default: int | None = None) -> int:
        return int(self.get(key, None if default is None else str(default)))

    def get_float(self, key: str, default: float | None = None) -> float:
        return float(self.get(key, None if default is None else repr(default)))

    def get_bool(self, key: str, default: bool) -> bool:
        return self.get(key, "1" if default else "0") not in ("0", "false", "no")

    def seeds(self) -> list[int]:
        raw = self.get("seeds", "0")
        out = [int(s) for s in raw.replace(",", " ").split()]
        if not out:
            raise ValueError("seed list must be nonempty")
        return out

    def fingerprint(self) -> str:
        canon = "\n".join(f"{k}={self.values[k]}" for k in sorted(self.values))
        return hashlib.sha256(canon.encode()).hexdigest()


def merge_config(defaults: dict[str, str], *overlays: dict[str, str]) -> RunConfig:
    values = dict(defaults)
    for overlay in overlays:
        values.update(overlay)
    return RunConfig(values)


def write_summary(out_dir: Path, cfg: RunConfig, entries: dict[str, str]) -> Path:
    """Key-value summary: effective config block, fingerprint, then results."""
    lines = ["[config]"]
    lines += [f"{k} = {cfg.values[k]}" for k in sorted(cfg.values)]
    lines.append(f"config_fingerprint = {cfg.fingerprint()}")
    lines.append("[results]")
    lines += [f"{k} = {entries[k]}" for k in sorted(entries)]
    path = out_dir / "summary.txt"
    path.write_text("\n".join(lines) + "\n")
    return path


def write_csv(path: Path, description: str, header: list[str], rows) -> None:
    lines = [f"# {description}", ",".join(header)]
    for row in rows:
        lines.append(",".join(repr(v) if isinstance(v, float) else str(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _interleave_by_skill(seqs: list[SensorimotorSequence]) -> list[SensorimotorSequence]:
    by_skill: dict[str, list[SensorimotorSequence]] = {}
    for s in seqs:
        by_skill.setdefault(s.skill_id, []).append(s)
    groups = [by_skill[k] for k in sorted(by_skill)]
    n = max(len(g) for g in groups)
    out = []
    for i in range(n):
        for g in groups:
            if i < len(g):
                out.append(g[i])
    return out


def _train_configs(cfg: RunConfig) -> tuple[tpc.TrainConfig, tpc.InferenceConfig]:
    train_cfg = tpc.TrainConfig(
        weight_lr=cfg.get_float("weight_lr", 1e-4),
        epochs_per_skill=cfg.get_int("epochs", 1000),
        batch_size=cfg.get_int("batch_size", 1),
        update_cadence=cfg.get("update_cadence", "step"),
    )
    inf_cfg = tpc.InferenceConfig(
        inference_lr=cfg.get_float("inference_lr", 1e-2),
        n_iters=cfg.get_int("inference_iters", 100),
    )
    return train_cfg, inf_cfg


def train_pick_place(cfg: RunConfig, seed: int):
    """Generate demos, fit stats, memorize; returns (model, stats, curve, demos)."""
    arm = kinematics.default_arm()
    reps = demos.gen_pick_place(
        arm,
        n_reps=cfg.get_int("n_reps", 10),
        n_skills=cfg.get_int("n_skills", 2),
        noise=cfg.get_float("noise", 0.01),
        seed=seed,
    )
    stats = zscore_fit(reps)
    ordered = _interleave_by_skill([zscore_apply(r, stats) for r in reps])
    train_cfg, inf_cfg = _train_configs(cfg)
    model = tpc.init_model(cfg.get_int("hidden", 256), reps[0].n_channels, seed=seed)
    model, curve = tpc.memorize(model, ordered, train_cfg, inf_cfg)
    return model, stats, curve, reps


TRAIN_DEFAULTS = {
    "n_skills": "2",
    "n_reps": "10",
    "noise": "0.01",
    "epochs": "1000",
    "hidden": "256",
    "weight_lr": "0.0001",
    "inference_lr": "0.01",
    "inference_iters": "100",
    "batch_size": "1",
    "update_cadence": "step",
    "seeds": "0",
}


def run_train(cfg: RunConfig, out_dir: Path) -> dict[str, str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    entries: dict[str, str] = {}
    for seed in cfg.seeds():
        model, stats, curve, reps = train_pick_place(cfg, seed)
        modelio.save_model(out_dir / f"model_s{seed}.txt", model)
        save_sequences(out_dir / f"demos_s{seed}.txt", reps)
        write_csv(
            out_dir / f"learning_curve_s{seed}.csv",
            f"training energy per epoch, seed {seed}",
            ["epoch", "energy"],
            [(e, _fmt(v)) for e, v in enumerate(curve)],
        )
        entries[f"seed{seed}.epoch0_energy"] = _fmt(curve[0])
        entries[f"seed{seed}.final_energy"] = _fmt(curve[-1])
        entries[f"seed{seed}.energy_reduction"] = _fmt(1.0 - curve[-1] / curve[0])
        entries[f"seed{seed}.model_file"] = f"model_s{seed}.txt"
    write_summary(out_dir, cfg, entries)
    return entries


# ---------------------------------------------------------------------------
# Fault grid
# ---------------------------------------------------------------------------

FAULT_GRID_DEFAULTS = {
    "model_file": "",
    "demos_file": "",
    "seeds": "0",
    "inference_lr": "0.01",
    "inference_iters": "100",
    "calibration_trials_per_skill": "10",
    "heldout_trials_per_skill": "100",
    "grid_times": " ".join(repr(t) for t in monitor.GRID_TIMES),
    "grid_overshoots": " ".join(repr(o) for o in monitor.GRID_OVERSHOOTS),
    "grip_force": "1.0",
    "force_noise_std": "0.01",
    "proprio_noise_std": "0.005",
}


def build_monitor(model, demo_seqs, inf_cfg) -> monitor.SkillMonitor:
    arm = kinematics.default_arm()
    stats = zscore_fit(demo_seqs)
    by_skill: dict[str, list[SensorimotorSequence]] = {}
    for s in demo_seqs:
        by_skill.setdefault(s.skill_id, []).append(s)
    skill_indices = {sid: int(sid.removeprefix("pp")) for sid in by_skill}
    nominals = {sid: demos.nominal_pick_place(arm, idx) for sid, idx in skill_indices.items()}
    detectors = {sid: baselines.fit_zscore_detector(group) for sid, group in by_skill.items()}
    return monitor.SkillMonitor(
        model=model, stats=stats, inf_cfg=inf_cfg, nominals=nominals, detectors=detectors
    )


def run_fault_grid(cfg: RunConfig, out_dir: Path) -> dict[str, str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    model_file = cfg.get("model_file")
    demos_file = cfg.get("demos_file")
    if not model_file or not Path(model_file).exists():
        raise FileNotFoundError(f"model file {model_file!r} not found; run the train command first")
    if not demos_file or not Path(demos_file).exists():
        raise FileNotFoundError(f"demos file {demos_file!r} not found; run the train command first")
    model = modelio.load_model(model_file)
    demo_seqs = load_sequences(demos_file)
    inf_cfg = tpc.InferenceConfig(
        inference_lr=cfg.get_float("inference_lr", 1e-2),
        n_iters=cfg.get_int("inference_iters", 100),
    )
    mon = build_monitor(model, demo_seqs, inf_cfg)
    arm = kinematics.default_arm()
    ctrl = kinematics.ControllerConfig()
    sensors = kinematics.SensorModel(
        grip_force=cfg.get_float("grip_force", 1.0),
        force_noise_std=cfg.get_float("force_noise_std", 0.01),
        proprio_noise_std=cfg.get_float("proprio_noise_std", 0.005),
    )

    thresholds = monitor.calibrate_monitor(
        mon, arm, ctrl,
        n_trials_per_skill=cfg.get_int("calibration_trials_per_skill", 10),
        sensors_template=sensors,
        seed_base=_CALIBRATION_SEED_OFFSET,
    )
    fprs = monitor.measure_fpr(
        mon, arm, ctrl, thresholds,
        n_trials_per_skill=cfg.get_int("heldout_trials_per_skill", 100),
        sensors_template=sensors,
        seed_base=_HELDOUT_SEED_OFFSET,
    )
    times = tuple(float(t) for t in cfg.get("grid_times").split())
    overshoots = tuple(float(o) for o in cfg.get("grid_overshoots").split())
    trials = monitor.build_fault_grid(
        sorted(mon.nominals), n_joints=arm.n_joints, times=times,
        overshoots=overshoots, seed_base=_GRID_SEED_OFFSET,
    )
    evaluation = monitor.eval_grid(mon, arm, ctrl, trials, thresholds, sensors)

    rows = []
    entries: dict[str, str] = {"n_fault_trials": str(evaluation.n_trials)}
    for res in evaluation.results:
        res.fpr = fprs[res.method][res.percentile_q]
        rows.append(
            (res.method, _fmt(res.percentile_q), _fmt(res.threshold_value),
             _fmt(res.detection_accuracy), _fmt(res.fnr), _fmt(res.fpr),
             _fmt(evaluation.isolation_accuracy[res.method]))
        )
        key = f"{res.method}.q{res.percentile_q:.2f}"
        entries[f"{key}.detection_accuracy"] = _fmt(res.detection_accuracy)
        entries[f"{key}.fpr"] = _fmt(res.fpr)
    for method, acc in evaluation.isolation_accuracy.items():
        entries[f"{method}.isolation_accuracy"] = _fmt(acc)
    write_csv(
        out_dir / "grid_summary.csv",
        "fault-grid operating points: detection/isolation accuracy per method and percentile",
        ["method", "q", "threshold", "detection_accuracy", "fnr", "fpr", "isolation_accuracy"],
        rows,
    )
    trial_rows = []
    tpc_reports = next(
        r.reports for r in evaluation.results
        if r.method == monitor.TPC_METHOD and abs(r.percentile_q - 0.95) < 1e-9
    )
    for trial, report in zip(trials, tpc_reports):
        trial_rows.append(
            (trial.skill_id, trial.fault.joint, _fmt(trial.fault.time_s),
             _fmt(trial.fault.overshoot_deg), int(report.detected),
             -1 if report.detect_step is None else report.detect_step,
             -1 if report.isolated_joint is None else report.isolated_joint)
        )
    write_csv(
        out_dir / "grid_trials.csv",
        "per-trial verdicts at q=0.95 (prediction-error monitor)",
        ["skill", "joint", "time_s", "overshoot_deg", "detected", "detect_step", "isolated_joint"],
        trial_rows,
    )
    write_summary(out_dir, cfg, entries)
    return entries


# ---------------------------------------------------------------------------
# Follow-through / contextual inference
# ---------------------------------------------------------------------------

FOLLOWTHROUGH_DEFAULTS = {
    "seeds": "0 1 2 3 4 5",
    "conditions": "plan_only plan_and_execute execute_only",
    "reps_per_cue": "6",
    "recall_per_cue": "12",
    "epochs": "100",
    "hidden": "256",
    "weight_lr": "0.0001",
    "inference_lr": "0.01",
    "inference_iters": "100",
    "noise": "0.01",
    "amplitude": "0.12",
    "models": "tpc s2m sm2sm",
}


def _ft_dataset(cond, cfg: RunConfig, seed: int):
    """(training sequences interleaved by cue, eval sequences per cue)."""
    n_reps = cfg.get_int("reps_per_cue", 6)
    noise = cfg.get_float("noise", 0.01)
    amp = cfg.get_float("amplitude", 0.12)
    cw = demos.gen_followthrough(cond, demos.CUE_CW, n_reps, seed, noise=noise, amplitude=amp)
    ccw = demos.gen_followthrough(cond, demos.CUE_CCW, n_reps, seed, noise=noise, amplitude=amp)
    train = [s for pair in zip(cw, ccw) for s in pair]
    n_eval = cfg.get_int("recall_per_cue", 12)
    eval_seed = seed + _EVAL_SEED_OFFSET
    eval_cw = demos.gen_followthrough(cond, demos.CUE_CW, n_eval, eval_seed, noise=noise, amplitude=amp)
    eval_ccw = demos.gen_followthrough(cond, demos.CUE_CCW, n_eval, eval_seed, noise=noise, amplitude=amp)
    return train, {demos.CUE_CW: eval_cw, demos.CUE_CCW: eval_ccw}


def _rnn_channel_split(seq: SensorimotorSequence, variant: str):
    if variant == baselines.S2M:
        inputs = seq.channels_of_kind("cue") + seq.channels_of_kind("extero")
        outputs = seq.channels_of_kind("proprio")
    else:
        inputs = list(range(seq.n_channels))
        outputs = list(range(seq.n_channels))
    return inputs, outputs


def _train_ft_models(cfg: RunConfig, cond, seed: int):
    """Train requested models on one condition; returns dict of recall closures.

    Each closure maps a raw eval sequence to the recalled normalized
    trajectory (T, D-motor-or-full), aligned so row t predicts step t; row 0
    is the cue step itself.
    """
    train, eval_sets = _ft_dataset(cond, cfg, seed)
    stats = zscore_fit(train)
    norm_train = [zscore_apply(s, stats) for s in train]
    train_cfg, inf_cfg = _train_configs(cfg)
    hidden = cfg.get_int("hidden", 256)
    d = train[0].n_channels
    wanted = cfg.get("models", "tpc s2m sm2sm").split()

    recallers = {}
    if "tpc" in wanted:
        model = tpc.init_model(hidden, d, seed=seed)
        model, _ = tpc.memorize(model, norm_train, train_cfg, inf_cfg)

        def tpc_recall(seq, n_iters: int | None = None, _m=model):
            icfg = inf_cfg if n_iters is None else tpc.InferenceConfig(
                inference_lr=inf_cfg.inference_lr, n_iters=n_iters)
            rows = normalize_rows(seq.data, stats)
            rec = tpc.recall_offline(_m, rows[:1], seq.n_steps, icfg)
            out = rec.x_hat.copy()
            out[0] = rows[0]  # cue step is given, not recalled
            return out

        recallers["tpc"] = tpc_recall

    for variant in (baselines.S2M, baselines.SM2SM):
        if variant not in wanted:
            continue
        in_ch, out_ch = _rnn_channel_split(train[0], variant)
        dataset = []
        for s in norm_train:
            u = baselines.mask_after_first(s.data[:-1, in_ch])
            tgt = s.data[1:, out_ch]
            dataset.append((u, tgt))
        rnn = baselines.init_rnn(hidden, len(in_ch), len(out_ch), seed=seed, variant=variant)
        rnn, _ = baselines.rnn_train(rnn, dataset, train_cfg)

        def rnn_recall(seq, n_iters: int | None = None, _m=rnn, _in=in_ch, _out=out_ch):
            rows = normalize_rows(seq.data, stats)
            u = baselines.mask_after_first(rows[:-1, _in])
            outputs, _ = baselines.rnn_forward(_m, u)
            full = rows.copy()
            full[1:, _out] = outputs
            return full

        recallers[variant] = rnn_recall

    return recallers, stats, eval_sets


def _pead_of_trajectory(norm_traj: np.ndarray, stats, template: SensorimotorSequence) -> monitor.PeadResult:
    ee_idx = [template.channel_labels.index("ee_x"), template.channel_labels.index("ee_y")]
    raw = denormalize_rows(norm_traj, stats)
    return monitor.pead(raw[:, ee_idx], demos.FT_START, demos.FT_TARGET)


def run_followthrough(cfg: RunConfig, out_dir: Path) -> dict[str, str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    entries: dict[str, str] = {}
    separations: dict[tuple[str, str], list[float]] = {}
    for cond_name in cfg.get("conditions").split():
        cond = demos.followthrough_condition(cond_name)
        for seed in cfg.seeds():
            recallers, stats, eval_sets = _train_ft_models(cfg, cond, seed)
            for model_name, recall in recallers.items():
                means = {}
                for cue, eval_seqs in eval_sets.items():
                    signed = [
                        _pead_of_trajectory(recall(s), stats, s).signed for s in eval_seqs
                    ]
                    means[cue] = float(np.mean(signed))
                    rows.append((cond_name, seed, model_name, cue, _fmt(means[cue])))
                sep = means[demos.CUE_CW] - means[demos.CUE_CCW]
                separations.setdefault((cond_name, model_name), []).append(sep)
                key = f"{cond_name}.{model_name}.seed{seed}"
                entries[f"{key}.pead_cw"] = _fmt(means[demos.CUE_CW])
                entries[f"{key}.pead_ccw"] = _fmt(means[demos.CUE_CCW])
                entries[f"{key}.separation"] = _fmt(sep)
    for (cond_name, model_name), seps in separations.items():
        entries[f"{cond_name}.{model_name}.mean_separation"] = _fmt(float(np.mean(seps)))
    write_csv(
        out_dir / "pead.csv",
        "mean signed recalled-path deviation per condition, seed, model and cue class",
        ["condition", "seed", "model", "cue", "mean_signed_pead"],
        rows,
    )
    write_summary(out_dir, cfg, entries)
    return entries


# ---------------------------------------------------------------------------
# Speed-accuracy trade-off
# ---------------------------------------------------------------------------

SPEED_ACCURACY_DEFAULTS = dict(FOLLOWTHROUGH_DEFAULTS, condition="plan_and_execute")


def _recall_error(norm_traj: np.ndarray, nominal_norm: np.ndarray) -> float:
    """Mean squared error over the predicted (post-cue) steps."""
    return float(np.mean((norm_traj[1:] - nominal_norm[1:]) ** 2))


def run_speed_accuracy(cfg: RunConfig, out_dir: Path) -> dict[str, str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    cond = demos.followthrough_condition(cfg.get("condition", "plan_and_execute"))
    amp = cfg.get_float("amplitude", 0.12)
    rows = []
    entries: dict[str, str] = {}
    for seed in cfg.seeds():
        recallers, stats, eval_sets = _train_ft_models(cfg, cond, seed)
        nominal_norm = {
            cue: normalize_rows(demos.nominal_followthrough(cond, cue, amplitude=amp).data, stats)
            for cue in eval_sets
        }
        curve = []
        for n_iters in SPEED_ACCURACY_ITERS:
            errs = [
                _recall_error(recallers["tpc"](s, n_iters=n_iters), nominal_norm[cue])
                for cue, seqs in eval_sets.items()
                for s in seqs
            ]
            err = float(np.mean(errs))
            curve.append(err)
            rows.append((seed, "tpc", n_iters, _fmt(err)))
        entries[f"seed{seed}.tpc.err_first"] = _fmt(curve[0])
        entries[f"seed{seed}.tpc.err_last"] = _fmt(curve[-1])
        for variant in (baselines.S2M, baselines.SM2SM):
            if variant not in recallers:
                continue
            errs = [
                _recall_error(recallers[variant](s), nominal_norm[cue])
                for cue, seqs in eval_sets.items()
                for s in seqs
            ]
            err = float(np.mean(errs))
            entries[f"seed{seed}.{variant}.err"] = _fmt(err)
            for n_iters in SPEED_ACCURACY_ITERS:
                rows.append((seed, variant, n_iters, _fmt(err)))
    write_csv(
        out_dir / "speed_accuracy.csv",
        "recall error vs inference iterations (baseline rows are iteration-independent)",
        ["seed", "model", "n_iters", "error"],
        rows,
    )
    write_summary(out_dir, cfg, entries)
    return entries


# ---------------------------------------------------------------------------
# Capacity / learning-speed vs number of skills
# ---------------------------------------------------------------------------

CAPACITY_DEFAULTS = {
    "seeds": "0 1 2",
    "skill_counts": "1 2 4",
    "n_reps": "10",
    "noise": "0.01",
    "epochs": "300",
    "hidden": "256",
    "weight_lr": "0.0001",
    "inference_lr": "0.01",
    "inference_iters": "100",
    "batch_size": "1",
    "update_cadence": "step",
}


def epochs_to_fraction(curve: np.ndarray, fraction: float = 0.5) -> int:
    """First epoch whose energy is at or below fraction * epoch-0 energy (-1 if never)."""
    target = curve[0] * fraction
    hits = np.nonzero(curve <= target)[0]
    return int(hits[0]) if hits.size else -1


def run_capacity(cfg: RunConfig, out_dir: Path) -> dict[str, str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    counts = [int(c) for c in cfg.get("skill_counts", "1 2 4").split()]
    rows = []
    entries: dict[str, str] = {}
    for seed in cfg.seeds():
        for n_skills in counts:
            sub = merge_config(cfg.values, {"n_skills": str(n_skills)})
            model, stats, curve, _ = train_pick_place(sub, seed)
            half = epochs_to_fraction(curve)
            rows.append((seed, n_skills, half, _fmt(curve[0]), _fmt(curve[-1])))
            entries[f"seed{seed}.skills{n_skills}.epochs_to_half"] = str(half)
            write_csv(
                out_dir / f"curve_s{seed}_k{n_skills}.csv",
                f"normalized learning curve, seed {seed}, {n_skills} skills",
                ["epoch", "energy", "normalized"],
                [(e, _fmt(v), _fmt(v / curve[0])) for e, v in enumerate(curve)],
            )
    write_csv(
        out_dir / "capacity.csv",
        "epochs to reach half of the initial energy vs number of skills",
        ["seed", "n_skills", "epochs_to_half", "epoch0_energy", "final_energy"],
        rows,
    )
    write_summary(out_dir, cfg, entries)
    return entries


# ---------------------------------------------------------------------------
# Single recall / reactive trial
# ---------------------------------------------------------------------------

RECALL_DEFAULTS = {
    "model_file": "",
    "demos_file": "",
    "skill": "pp0",
    "inference_lr": "0.01",
    "inference_iters": "100",
    "threshold_q": "0.99",
    "calibration_trials_per_skill": "10",
    "track": "nominal",  # nominal: servo the demo commands; recalled: servo the recalled plan
    "fault_kind": "",    # '', joint_lock, transient_push
    "fault_joint": "0",
    "fault_time_s": "3.0",
    "fault_overshoot_deg": "10.0",
    "fault_push_rad": "0.2",
    "fault_duration_s": "0.5",
    "sensor_seed": "1234",
    "grip_force": "1.0",
    "force_noise_std": "0.01",
    "proprio_noise_std": "0.005",
}


def _fault_from_config(cfg: RunConfig) -> kinematics.FaultSpec | None:
    kind = cfg.get("fault_kind", "")
    if not kind:
        return None
    return kinematics.FaultSpec(
        kind=kind,
        joint=cfg.get_int("fault_joint", 0),
        time_s=cfg.get_float("fault_time_s", 3.0),
        overshoot_deg=cfg.get_float("fault_overshoot_deg", 0.0) if kind == kinematics.JOINT_LOCK else 0.0,
        push_rad=cfg.get_float("fault_push_rad", 0.0),
        duration_s=cfg.get_float("fault_duration_s", 0.0) if kind == kinematics.TRANSIENT_PUSH else 0.0,
    )


def run_recall_trial(cfg: RunConfig, out_dir: Path) -> dict[str, str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    model = modelio.load_model(cfg.get("model_file"))
    demo_seqs = load_sequences(cfg.get("demos_file"))
    inf_cfg = tpc.InferenceConfig(
        inference_lr=cfg.get_float("inference_lr", 1e-2),
        n_iters=cfg.get_int("inference_iters", 100),
    )
    mon = build_monitor(model, demo_seqs, inf_cfg)
    arm = kinematics.default_arm()
    ctrl = kinematics.ControllerConfig()
    sensors = kinematics.SensorModel(
        grip_force=cfg.get_float("grip_force", 1.0),
        force_noise_std=cfg.get_float("force_noise_std", 0.01),
        proprio_noise_std=cfg.get_float("proprio_noise_std", 0.005),
        seed=cfg.get_int("sensor_seed", 1234),
    )
    q = cfg.get_float("threshold_q", 0.99)
    thresholds = monitor.calibrate_monitor(
        mon, arm, ctrl,
        n_trials_per_skill=cfg.get_int("calibration_trials_per_skill", 10),
        qs=(q,), sensors_template=sensors, seed_base=_CALIBRATION_SEED_OFFSET,
    )
    threshold = thresholds[monitor.TPC_METHOD][q]

    skill = cfg.get("skill", "pp0")
    fault = _fault_from_config(cfg)
    if cfg.get("track", "nominal") == "recalled":
        trace = monitor.reactive_correct(
            model, arm, ctrl, mon.nominals[skill], mon.stats, inf_cfg,
            fault=fault, sensors=sensors,
        )
    else:
        trace = kinematics.run_trial(arm, ctrl, mon.nominals[skill], fault=fault, sensors=sensors)
    rec, scores = mon.tpc_scores(trace.observed_seq)
    report = monitor.detect_from_scores(scores, threshold, truth=fault)
    chan = joint = None
    if report.detected:
        chan, joint = monitor.isolate(
            rec, _normalized_view(trace.observed_seq, mon.stats), report.detect_step
        )
        report.isolated_channel = chan
        report.isolated_joint = joint
    kinematics.trace_to_csv(trace, out_dir / "trace.csv", low_rate=ctrl.low_rate)
    write_csv(
        out_dir / "scores.csv",
        "per-step fault scores against the recalled plan, with threshold",
        ["step", "score", "threshold"],
        [(t, _fmt(s), _fmt(threshold.value)) for t, s in enumerate(scores)],
    )
    norm_obs = normalize_rows(trace.observed_seq.data, mon.stats)
    err = np.abs(norm_obs - rec.x_hat)
    write_csv(
        out_dir / "channel_errors.csv",
        "per-step absolute prediction error per channel (normalized units)",
        ["step"] + trace.observed_seq.channel_labels,
        [tuple([t] + [_fmt(v) for v in err[t]]) for t in range(err.shape[0])],
    )
    entries = {
        "detected": str(int(report.detected)),
        "detect_step": "-1" if report.detect_step is None else str(report.detect_step),
        "threshold": _fmt(threshold.value),
    }
    if report.detected:
        entries["isolated_channel"] = str(chan)
        entries["isolated_joint"] = "-1" if joint is None else str(joint)
    write_summary(out_dir, cfg, entries)
    return entries


def _normalized_view(seq: SensorimotorSequence, stats) -> SensorimotorSequence:
    return seq.with_data(normalize_rows(seq.data, stats), normalized=True)
