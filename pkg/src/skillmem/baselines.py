"""Baselines: per-channel Z-score fault detector and BPTT-trained RNNs.

The Z-score detector stores per-channel signal statistics over the
demonstrations of one known skill and scores observations by summed squared
normalized error. The RNNs are minimal discrete-time networks (tanh hidden
layer, linear readout, zero initial state) trained by exact backpropagation
through time on summed squared error, either sensory-to-motor or full
sensorimotor-to-sensorimotor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tpc import TrainConfig

S2M = "s2m"
SM2SM = "sm2sm"
RNN_VARIANTS = (S2M, SM2SM)


class TrainingDivergenceError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss went non-finite at epoch {epoch}")
        self.epoch = epoch


# ---------------------------------------------------------------------------
# Z-score detector
# ---------------------------------------------------------------------------

def zscore_errors(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> np.ndarray:
    """Per-channel normalized errors (x - mean) / std."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != np.asarray(mean).shape:
        raise ValueError(f"shape mismatch: x {x.shape} vs mean {np.asarray(mean).shape}")
    return (x - mean) / std


@dataclass
class ZscoreDetector:
    """Signal statistics for one skill, per time step or pooled over steps."""

    mean: np.ndarray  # (T, D) for per_step mode, (D,) for pooled
    std: np.ndarray
    mode: str = "per_step"

    def errors(self, x: np.ndarray, step: int) -> np.ndarray:
        if self.mode == "per_step":
            return zscore_errors(x, self.mean[step], self.std[step])
        return zscore_errors(x, self.mean, self.std)

    def score(self, x: np.ndarray, step: int) -> float:
        e = self.errors(x, step)
        return float(e @ e)

    def score_trace(self, data: np.ndarray) -> np.ndarray:
        data = np.asarray(data, dtype=np.float64)
        return np.array([self.score(data[t], t) for t in range(data.shape[0])])


def fit_zscore_detector(sequences, mode: str = "per_step", std_floor: float = 1e-6) -> ZscoreDetector:
    """Fit mean/std over the repetitions of a single skill.

    per_step mode needs all repetitions to share the same length; stds are
    floored so constant channels cannot produce infinite scores.
    """
    if mode not in ("per_step", "pooled"):
        raise ValueError("mode must be 'per_step' or 'pooled'")
    arrs = [np.asarray(s.data if hasattr(s, "data") else s, dtype=np.float64) for s in sequences]
    if not arrs:
        raise ValueError("need at least one demonstration")
    if mode == "per_step":
        t = arrs[0].shape[0]
        if any(a.shape != arrs[0].shape for a in arrs):
            raise ValueError("per_step statistics need equal-shaped repetitions")
        stack = np.stack(arrs)  # (reps, T, D)
        mean = stack.mean(axis=0)
        std = np.maximum(stack.std(axis=0), std_floor)
    else:
        rows = np.concatenate(arrs, axis=0)
        mean = rows.mean(axis=0)
        std = np.maximum(rows.std(axis=0), std_floor)
    return ZscoreDetector(mean=mean, std=std, mode=mode)


# ---------------------------------------------------------------------------
# Sequence-to-sequence RNNs
# ---------------------------------------------------------------------------

@dataclass
class RnnModel:
    w_in: np.ndarray   # (H, D_in)
    w_rec: np.ndarray  # (H, H)
    w_out: np.ndarray  # (D_out, H)
    b_h: np.ndarray    # (H,)
    b_o: np.ndarray    # (D_out,)
    variant: str = SM2SM

    def __post_init__(self):
        h = self.w_rec.shape[0]
        if self.w_rec.shape != (h, h) or self.w_in.shape[0] != h:
            raise ValueError("inconsistent recurrent dimensions")
        if self.w_out.shape[1] != h or self.b_h.shape != (h,):
            raise ValueError("inconsistent readout dimensions")
        if self.b_o.shape != (self.w_out.shape[0],):
            raise ValueError("inconsistent output bias")
        if self.variant not in RNN_VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def hidden_dim(self) -> int:
        return self.w_rec.shape[0]

    @property
    def in_dim(self) -> int:
        return self.w_in.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w_out.shape[0]

    def copy(self) -> "RnnModel":
        return RnnModel(self.w_in.copy(), self.w_rec.copy(), self.w_out.copy(),
                        self.b_h.copy(), self.b_o.copy(), self.variant)


def init_rnn(hidden_dim: int, in_dim: int, out_dim: int, seed: int, variant: str = SM2SM) -> RnnModel:
    """Kaiming-uniform weights (bound sqrt(6/fan_in)), zero biases."""
    rng = np.random.default_rng(seed)

    def kaiming(rows, cols):
        bound = np.sqrt(6.0 / cols)
        return rng.uniform(-bound, bound, size=(rows, cols))

    return RnnModel(
        w_in=kaiming(hidden_dim, in_dim),
        w_rec=kaiming(hidden_dim, hidden_dim),
        w_out=kaiming(out_dim, hidden_dim),
        b_h=np.zeros(hidden_dim),
        b_o=np.zeros(out_dim),
        variant=variant,
    )


def rnn_forward(model: RnnModel, inputs: np.ndarray):
    """h_t = tanh(W_in u_t + W_rec h_{t-1} + b_h) with h_{-1} = 0; y_t = W_out h_t + b_o."""
    u = np.asarray(inputs, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] != model.in_dim:
        raise ValueError(f"inputs must be (T, {model.in_dim})")
    t_len = u.shape[0]
    hidden = np.zeros((t_len, model.hidden_dim))
    outputs = np.zeros((t_len, model.out_dim))
    h = np.zeros(model.hidden_dim)
    for t in range(t_len):
        h = np.tanh(model.w_in @ u[t] + model.w_rec @ h + model.b_h)
        hidden[t] = h
        outputs[t] = model.w_out @ h + model.b_o
    return outputs, hidden


def sse_loss(outputs: np.ndarray, targets: np.ndarray) -> float:
    """Summed squared error over all steps and output channels."""
    diff = np.asarray(outputs) - np.asarray(targets)
    return float(np.sum(diff * diff))


def rnn_bptt(model: RnnModel, inputs: np.ndarray, targets: np.ndarray) -> dict[str, np.ndarray]:
    """Exact full-length BPTT gradients of sse_loss for all five parameter groups."""
    u = np.asarray(inputs, dtype=np.float64)
    tgt = np.asarray(targets, dtype=np.float64)
    outputs, hidden = rnn_forward(model, u)
    if tgt.shape != outputs.shape:
        raise ValueError(f"targets must be {outputs.shape}, got {tgt.shape}")
    t_len = u.shape[0]
    e = 2.0 * (outputs - tgt)  # dL/dy_t

    g_w_out = e.T @ hidden
    g_b_o = e.sum(axis=0)
    g_w_in = np.zeros_like(model.w_in)
    g_w_rec = np.zeros_like(model.w_rec)
    g_b_h = np.zeros_like(model.b_h)

    delta_next = np.zeros(model.hidden_dim)  # dL/da_{t+1}, a = pre-activation
    for t in range(t_len - 1, -1, -1):
        g_h = model.w_out.T @ e[t] + model.w_rec.T @ delta_next
        delta = (1.0 - hidden[t] * hidden[t]) * g_h
        g_w_in += np.outer(delta, u[t])
        if t > 0:
            g_w_rec += np.outer(delta, hidden[t - 1])
        g_b_h += delta
        delta_next = delta
    return {"w_in": g_w_in, "w_rec": g_w_rec, "w_out": g_w_out, "b_h": g_b_h, "b_o": g_b_o}


def rnn_train(model: RnnModel, dataset, cfg: TrainConfig):
    """Plain gradient descent over (inputs, targets) pairs; returns (model, loss curve).

    One update per presentation (batch_size accumulates across pairs). The
    loss curve holds each epoch's total loss before that presentation's
    update. Raises TrainingDivergenceError if the loss goes non-finite.
    """
    pairs = [(np.asarray(u, dtype=np.float64), np.asarray(t, dtype=np.float64)) for u, t in dataset]
    if not pairs:
        raise ValueError("empty training set")
    m = model.copy()
    names = ("w_in", "w_rec", "w_out", "b_h", "b_o")
    curve = np.zeros(cfg.epochs_per_skill)
    for epoch in range(cfg.epochs_per_skill):
        total = 0.0
        acc = {n: np.zeros_like(getattr(m, n)) for n in names}
        pending = 0
        for u, tgt in pairs:
            outputs, _ = rnn_forward(m, u)
            total += sse_loss(outputs, tgt)
            grads = rnn_bptt(m, u, tgt)
            for n in names:
                acc[n] += grads[n]
            pending += 1
            if pending == cfg.batch_size:
                for n in names:
                    getattr(m, n)[...] -= cfg.weight_lr * acc[n]
                    acc[n][:] = 0.0
                pending = 0
        if pending:
            for n in names:
                getattr(m, n)[...] -= cfg.weight_lr * acc[n]
        if not np.isfinite(total):
            raise TrainingDivergenceError(epoch)
        curve[epoch] = total
    return m, curve


def mask_after_first(inputs: np.ndarray) -> np.ndarray:
    """Zero all rows after the first: the offline-recall-mimicking input stream."""
    u = np.array(inputs, dtype=np.float64)
    u[1:] = 0.0
    return u
