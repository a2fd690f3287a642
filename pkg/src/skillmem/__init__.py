"""Sequential sensorimotor memory with local learning rules, on a planar-arm test bed."""

from .sequences import (
    ChannelStats,
    SensorimotorSequence,
    load_sequences,
    save_sequences,
    zscore_apply,
    zscore_fit,
    zscore_invert,
)
from .tpc import (
    InferenceConfig,
    RecallResult,
    TpcModel,
    TrainConfig,
    forward_predict,
    infer_hidden,
    init_model,
    memorize,
    recall_offline,
    recall_online,
    step_energy,
    update_weights,
)
from .kinematics import (
    ArmModel,
    ControllerConfig,
    FaultSpec,
    SensorModel,
    TrialTrace,
    default_arm,
    forward_kinematics,
    ik_dls,
    run_trial,
    servo_step,
)
from .monitor import (
    DetectionReport,
    DetectionThreshold,
    calibrate_threshold,
    detect,
    fault_score,
    isolate,
    pead,
    reactive_correct,
)
from .baselines import RnnModel, ZscoreDetector, fit_zscore_detector, init_rnn, rnn_bptt, rnn_forward, rnn_train
from .modelio import load_model, save_model

__version__ = "0.1.0"
