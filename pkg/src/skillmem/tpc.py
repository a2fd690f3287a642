"""Two-layer temporal predictive-coding network for sequential memory.

The generative model has hidden-Markov structure: a hidden state z predicts
its successor through W_H and the observation through W_F, both via an
elementwise activation f. At step mu the squared-error energy is

    F = ||z - W_H f(z_prev)||^2 + ||x - W_F f(z)||^2

Memorization alternates iterative inference of z (gradient flow on F with
both weight matrices frozen) with local, Hebbian-style weight updates
(rank-1 outer products of the step's errors and presynaptic activities).
After training the weights are frozen and sequences are recalled from
partial cues: cued inference sets the hidden state, then a pure forward
pass rolls the remaining steps out (offline recall), or inference repeats
at every incoming observation to predict one step ahead (online recall).

All state is float64; inference and recall are deterministic functions of
their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

TANH = "tanh"
LINEAR = "linear"

_ACT_IDS = {LINEAR: 0, TANH: 1}


class NumericDivergenceError(RuntimeError):
    """Inference produced a non-finite hidden state; carries the iteration index."""

    def __init__(self, iteration: int):
        super().__init__(f"hidden-state inference diverged at iteration {iteration}")
        self.iteration = iteration


def activation(v: np.ndarray, kind: str) -> np.ndarray:
    if kind == TANH:
        return np.tanh(v)
    if kind == LINEAR:
        return np.asarray(v, dtype=np.float64)
    raise ValueError(f"unknown activation {kind!r}")


def activation_deriv(v: np.ndarray, kind: str) -> np.ndarray:
    """f'(v); for tanh this is 1 - tanh(v)^2."""
    if kind == TANH:
        t = np.tanh(v)
        return 1.0 - t * t
    if kind == LINEAR:
        return np.ones_like(v, dtype=np.float64)
    raise ValueError(f"unknown activation {kind!r}")


@dataclass
class TpcModel:
    """Learned skill repertoire: hidden transition and observation weights.

    w_h is (H, H), w_f is (D, H). Instances are treated as immutable during
    recall; training returns updated copies.
    """

    w_h: np.ndarray
    w_f: np.ndarray
    activation: str = TANH

    def __post_init__(self):
        self.w_h = np.asarray(self.w_h, dtype=np.float64)
        self.w_f = np.asarray(self.w_f, dtype=np.float64)
        h = self.w_h.shape[0]
        if self.w_h.shape != (h, h):
            raise ValueError(f"w_h must be square, got {self.w_h.shape}")
        if self.w_f.ndim != 2 or self.w_f.shape[1] != h:
            raise ValueError(f"w_f must be (D, {h}), got {self.w_f.shape}")
        if self.activation not in _ACT_IDS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.w_h)) and np.all(np.isfinite(self.w_f))):
            raise ValueError("weights must be finite")

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[0]

    @property
    def obs_dim(self) -> int:
        return self.w_f.shape[0]

    def copy(self) -> "TpcModel":
        return TpcModel(self.w_h.copy(), self.w_f.copy(), self.activation)


def init_model(hidden_dim: int, obs_dim: int, seed: int, activation_kind: str = TANH) -> TpcModel:
    """Kaiming-uniform initialization: entries ~ U(-b, b), b = sqrt(6 / fan_in).

    Both matrices multiply f(z), so fan_in = hidden_dim for each. Deterministic
    in the seed; w_h is drawn before w_f.
    """
    if hidden_dim < 1 or obs_dim < 1:
        raise ValueError("dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    bound = np.sqrt(6.0 / hidden_dim)
    w_h = rng.uniform(-bound, bound, size=(hidden_dim, hidden_dim))
    w_f = rng.uniform(-bound, bound, size=(obs_dim, hidden_dim))
    return TpcModel(w_h=w_h, w_f=w_f, activation=activation_kind)


@dataclass
class InferenceConfig:
    """Iterative-inference schedule for the hidden state."""

    inference_lr: float = 1e-2
    n_iters: int = 100
    warm_start: bool = True  # start from the temporal prediction W_H f(z_prev)

    def __post_init__(self):
        if self.inference_lr <= 0:
            raise ValueError("inference_lr must be positive")
        if self.n_iters < 1:
            raise ValueError("n_iters must be >= 1")


@dataclass
class TrainConfig:
    """Weight-update schedule for memorization."""

    weight_lr: float = 1e-4
    epochs_per_skill: int = 1000
    batch_size: int = 1
    seed: int = 0
    update_cadence: str = "step"  # "step": after each step's inference;
    #                               "sequence": accumulated, applied per presentation

    def __post_init__(self):
        if self.weight_lr <= 0:
            raise ValueError("weight_lr must be positive")
        if self.epochs_per_skill < 1:
            raise ValueError("epochs_per_skill must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.update_cadence not in ("step", "sequence"):
            raise ValueError("update_cadence must be 'step' or 'sequence'")
        if self.batch_size > 1 and self.update_cadence == "step":
            raise ValueError("batch_size > 1 requires sequence-cadence updates")


# ---------------------------------------------------------------------------
# Energy and its exact gradients
# ---------------------------------------------------------------------------

def _check_dims(model: TpcModel, z=None, z_prev=None, x=None):
    h, d = model.hidden_dim, model.obs_dim
    for name, vec, dim in (("z", z, h), ("z_prev", z_prev, h), ("x", x, d)):
        if vec is not None and np.asarray(vec).shape != (dim,):
            raise ValueError(f"{name} must have shape ({dim},), got {np.asarray(vec).shape}")


def errors(z: np.ndarray, z_prev: np.ndarray, x: np.ndarray, model: TpcModel):
    """Hidden temporal error z - W_H f(z_prev) and observation error x - W_F f(z)."""
    _check_dims(model, z=z, z_prev=z_prev, x=x)
    eps_z = z - model.w_h @ activation(z_prev, model.activation)
    eps_x = x - model.w_f @ activation(z, model.activation)
    return eps_z, eps_x


def step_energy(z: np.ndarray, z_prev: np.ndarray, x: np.ndarray, model: TpcModel) -> float:
    """Squared-error energy ||eps_z||^2 + ||eps_x||^2 at one step."""
    eps_z, eps_x = errors(z, z_prev, x, model)
    return float(eps_z @ eps_z + eps_x @ eps_x)


def energy_grad_z(z, z_prev, x, model: TpcModel) -> np.ndarray:
    """Exact dF/dz = 2 eps_z - 2 f'(z) * (W_F^T eps_x)."""
    eps_z, eps_x = errors(z, z_prev, x, model)
    return 2.0 * eps_z - 2.0 * activation_deriv(z, model.activation) * (model.w_f.T @ eps_x)


def energy_grad_weights(z, z_prev, x, model: TpcModel):
    """Exact (dF/dW_H, dF/dW_F) = (-2 eps_z f(z_prev)^T, -2 eps_x f(z)^T)."""
    eps_z, eps_x = errors(z, z_prev, x, model)
    g_wh = -2.0 * np.outer(eps_z, activation(z_prev, model.activation))
    g_wf = -2.0 * np.outer(eps_x, activation(z, model.activation))
    return g_wh, g_wf


# ---------------------------------------------------------------------------
# Iterative inference
#
# The update direction is the half-gradient -eps_z + f'(z) * (W_F^T eps_x)
# = -dF/dz / 2, so one explicit-Euler step moves z by -inference_lr/2 * dF/dz.
# The temporal prediction W_H f(z_prev) is constant while z is inferred, so
# it is computed once and passed in.
# ---------------------------------------------------------------------------

@njit(cache=True)
def _infer_kernel(z0, pred_z, x, w_f, lr, n_iters, act_id):
    z = z0.copy()
    for it in range(n_iters):
        if act_id == 1:
            fz = np.tanh(z)
            fprime = 1.0 - fz * fz
        else:
            fz = z
            fprime = np.ones_like(z)
        eps_x = x - np.dot(w_f, fz)
        back = np.dot(w_f.T, eps_x)
        z = z + lr * ((pred_z - z) + fprime * back)
        if not np.isfinite(z.sum()):
            return z, it
    return z, -1


def infer_hidden(
    z_init: np.ndarray,
    z_prev: np.ndarray,
    x: np.ndarray,
    model: TpcModel,
    cfg: InferenceConfig,
) -> np.ndarray:
    """Infer the hidden state for a clamped observation x.

    Runs cfg.n_iters explicit-Euler steps of the energy gradient flow in z,
    recomputing both error populations from the current z each iteration.
    Raises NumericDivergenceError if an iterate goes non-finite.
    """
    _check_dims(model, z=z_init, z_prev=z_prev, x=x)
    pred_z = model.w_h @ activation(np.asarray(z_prev, dtype=np.float64), model.activation)
    z, bad_iter = _infer_kernel(
        np.ascontiguousarray(z_init, dtype=np.float64),
        np.ascontiguousarray(pred_z),
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(model.w_f),
        float(cfg.inference_lr),
        int(cfg.n_iters),
        _ACT_IDS[model.activation],
    )
    if bad_iter >= 0:
        raise NumericDivergenceError(bad_iter)
    return z


def update_weights(
    model: TpcModel, z_converged, z_prev, x, weight_lr: float
) -> TpcModel:
    """Local weight update from one step's errors.

    Both errors are computed before either matrix changes; each weight then
    moves by weight_lr * (postsynaptic error) * (presynaptic activity):

        W_H += weight_lr * eps_z f(z_prev)^T
        W_F += weight_lr * eps_x f(z)^T
    """
    eps_z, eps_x = errors(z_converged, z_prev, x, model)
    f_prev = activation(np.asarray(z_prev, dtype=np.float64), model.activation)
    f_z = activation(np.asarray(z_converged, dtype=np.float64), model.activation)
    return TpcModel(
        w_h=model.w_h + weight_lr * np.outer(eps_z, f_prev),
        w_f=model.w_f + weight_lr * np.outer(eps_x, f_z),
        activation=model.activation,
    )


def forward_predict(z_prev: np.ndarray, model: TpcModel):
    """Pure forward pass: z_next = W_H f(z_prev), x_hat = W_F f(z_next)."""
    _check_dims(model, z_prev=z_prev)
    z_next = model.w_h @ activation(np.asarray(z_prev, dtype=np.float64), model.activation)
    x_hat = model.w_f @ activation(z_next, model.activation)
    return z_next, x_hat


# ---------------------------------------------------------------------------
# Memorization
# ---------------------------------------------------------------------------

def _seq_data(seq) -> np.ndarray:
    data = seq.data if hasattr(seq, "data") else seq
    return np.ascontiguousarray(data, dtype=np.float64)


def memorize(model: TpcModel, sequences, train_cfg: TrainConfig, inf_cfg: InferenceConfig):
    """Store a set of sequences in the weights; returns (model, energy curve).

    Each epoch sweeps every sequence once in the given order. Within a
    sequence, the hidden state is inferred for each step with the
    observation clamped, the converged state is carried forward as the next
    step's predecessor (the state before the first step is the zero
    vector), and the weights move by the local update rule -- after every
    step ("step" cadence, the default) or accumulated over the presentation
    and applied at its end ("sequence" cadence). The returned curve holds
    each epoch's total post-convergence step energy.
    """
    datas = [_seq_data(s) for s in sequences]
    if not datas:
        raise ValueError("need at least one sequence to memorize")
    d = model.obs_dim
    for arr in datas:
        if arr.ndim != 2 or arr.shape[1] != d:
            raise ValueError(f"sequence with {arr.shape} does not match obs_dim {d}")
    h = model.hidden_dim
    act = model.activation
    act_id = _ACT_IDS[act]
    w_h = model.w_h.copy()
    w_f = model.w_f.copy()
    lr = float(inf_cfg.inference_lr)
    n_iters = int(inf_cfg.n_iters)
    wlr = float(train_cfg.weight_lr)
    per_step = train_cfg.update_cadence == "step"

    energy_curve = np.zeros(train_cfg.epochs_per_skill)
    for epoch in range(train_cfg.epochs_per_skill):
        total = 0.0
        batch_dwh = np.zeros_like(w_h)
        batch_dwf = np.zeros_like(w_f)
        pending = 0
        for data in datas:
            z_prev = np.zeros(h)
            f_prev = activation(z_prev, act)
            for mu in range(data.shape[0]):
                x = data[mu]
                pred_z = w_h @ f_prev
                z0 = pred_z if inf_cfg.warm_start else np.zeros(h)
                z, bad_iter = _infer_kernel(
                    np.ascontiguousarray(z0), pred_z, x, w_f, lr, n_iters, act_id
                )
                if bad_iter >= 0:
                    raise NumericDivergenceError(bad_iter)
                f_z = activation(z, act)
                eps_z = z - pred_z
                eps_x = x - w_f @ f_z
                total += float(eps_z @ eps_z + eps_x @ eps_x)
                if per_step:
                    w_h += wlr * np.outer(eps_z, f_prev)
                    w_f += wlr * np.outer(eps_x, f_z)
                else:
                    batch_dwh += wlr * np.outer(eps_z, f_prev)
                    batch_dwf += wlr * np.outer(eps_x, f_z)
                z_prev = z
                f_prev = f_z
            if not per_step:
                pending += 1
                if pending == train_cfg.batch_size:
                    w_h += batch_dwh
                    w_f += batch_dwf
                    batch_dwh[:] = 0.0
                    batch_dwf[:] = 0.0
                    pending = 0
        if pending:
            w_h += batch_dwh
            w_f += batch_dwf
        energy_curve[epoch] = total
    return TpcModel(w_h=w_h, w_f=w_f, activation=act), energy_curve


# ---------------------------------------------------------------------------
# Recall
# ---------------------------------------------------------------------------

@dataclass
class RecallResult:
    """Recalled observations with per-step observation errors and energies.

    Rows of eps_x_trace / energy_trace are zero for steps where no
    ground-truth observation was available to score against.
    """

    x_hat: np.ndarray       # (T, D)
    eps_x_trace: np.ndarray  # (T, D)
    energy_trace: np.ndarray  # (T,) sum of squared observation errors
    z_trace: np.ndarray     # (T, H)


def recall_offline(
    model: TpcModel, cue: np.ndarray, horizon: int, inf_cfg: InferenceConfig
) -> RecallResult:
    """Cue on a prefix of observations, then roll the rest out open loop.

    For the cued steps the hidden state is inferred with the observation
    clamped (converged states carry forward); every later step applies the
    pure forward pass with no further inference, so the recalled plan is
    fixed once the cue has been absorbed. x_hat rows are always the model's
    own predictions W_F f(z), also on cued steps.
    """
    cue = np.atleast_2d(np.asarray(cue, dtype=np.float64))
    t_n = cue.shape[0]
    if cue.shape[1] != model.obs_dim:
        raise ValueError(f"cue has {cue.shape[1]} channels, model expects {model.obs_dim}")
    if not 1 <= t_n < horizon:
        raise ValueError(f"need 1 <= cue length ({t_n}) < horizon ({horizon})")
    h, d = model.hidden_dim, model.obs_dim
    x_hat = np.zeros((horizon, d))
    eps_x = np.zeros((horizon, d))
    energy = np.zeros(horizon)
    z_trace = np.zeros((horizon, h))
    z_prev = np.zeros(h)
    for mu in range(t_n):
        z0 = model.w_h @ activation(z_prev, model.activation) if inf_cfg.warm_start else np.zeros(h)
        z = infer_hidden(z0, z_prev, cue[mu], model, inf_cfg)
        x_hat[mu] = model.w_f @ activation(z, model.activation)
        eps_x[mu] = cue[mu] - x_hat[mu]
        energy[mu] = eps_x[mu] @ eps_x[mu]
        z_trace[mu] = z
        z_prev = z
    for mu in range(t_n, horizon):
        z_prev, x_hat[mu] = forward_predict(z_prev, model)
        z_trace[mu] = z_prev
    return RecallResult(x_hat=x_hat, eps_x_trace=eps_x, energy_trace=energy, z_trace=z_trace)


def recall_online(model: TpcModel, observations: np.ndarray, inf_cfg: InferenceConfig) -> RecallResult:
    """Re-infer the hidden state at every observation, predicting one step ahead.

    x_hat[mu] is the prediction made before x[mu] is seen (from the
    previous inferred state, so row 0 scores the zero-history prior), and
    eps_x_trace[mu] = x[mu] - x_hat[mu]. z_trace holds the inferred states,
    which match recall_offline's cued prefix exactly for identical inputs.
    """
    obs = np.asarray(observations, dtype=np.float64)
    if obs.ndim != 2 or obs.shape[1] != model.obs_dim:
        raise ValueError(f"observations must be (T, {model.obs_dim})")
    t = obs.shape[0]
    if t < 2:
        raise ValueError("online recall needs at least 2 observations")
    h, d = model.hidden_dim, model.obs_dim
    x_hat = np.zeros((t, d))
    eps_x = np.zeros((t, d))
    energy = np.zeros(t)
    z_trace = np.zeros((t, h))
    z_prev = np.zeros(h)
    for mu in range(t):
        pred_z = model.w_h @ activation(z_prev, model.activation)
        x_hat[mu] = model.w_f @ activation(pred_z, model.activation)
        eps_x[mu] = obs[mu] - x_hat[mu]
        energy[mu] = eps_x[mu] @ eps_x[mu]
        z0 = pred_z if inf_cfg.warm_start else np.zeros(h)
        z = infer_hidden(z0, z_prev, obs[mu], model, inf_cfg)
        z_trace[mu] = z
        z_prev = z
    return RecallResult(x_hat=x_hat, eps_x_trace=eps_x, energy_trace=energy, z_trace=z_trace)
