"""Sensorimotor sequence containers, per-channel statistics and dataset files.

A sequence is a (T, D) time series of labelled observation channels sampled
at a fixed rate. Channels are tagged by kind: proprioceptive (joint angles,
end-effector position, gripper state), exteroceptive (sensed forces) or cue
(binary context signals).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

PROPRIO = "proprio"
EXTERO = "extero"
CUE = "cue"
CHANNEL_KINDS = (PROPRIO, EXTERO, CUE)

JOINT_LABEL_PREFIX = "joint"


class SequenceParseError(ValueError):
    """Malformed dataset file; message carries the line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class SensorimotorSequence:
    """One repetition of one skill: a (T, D) matrix plus channel metadata."""

    data: np.ndarray
    channel_labels: list[str]
    channel_kinds: list[str]
    skill_id: str
    rep_id: str
    rate_hz: float = 2.0
    normalized: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"sequence data must be 2-D, got shape {self.data.shape}")
        t, d = self.data.shape
        if t < 1:
            raise ValueError("sequence must have at least one row")
        if len(self.channel_labels) != d or len(self.channel_kinds) != d:
            raise ValueError(
                f"channel metadata length mismatch: {len(self.channel_labels)} labels, "
                f"{len(self.channel_kinds)} kinds, {d} data columns"
            )
        for kind in self.channel_kinds:
            if kind not in CHANNEL_KINDS:
                raise ValueError(f"unknown channel kind {kind!r}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("sequence data contains non-finite entries")
        if not self.normalized:
            cue = self.channels_of_kind(CUE)
            vals = self.data[:, cue]
            if cue and not np.all((vals == 0.0) | (vals == 1.0)):
                raise ValueError("cue channels must be binary in raw units")

    @property
    def n_steps(self) -> int:
        return self.data.shape[0]

    @property
    def n_channels(self) -> int:
        return self.data.shape[1]

    def channels_of_kind(self, kind: str) -> list[int]:
        return [i for i, k in enumerate(self.channel_kinds) if k == kind]

    def joint_channels(self) -> list[tuple[int, int]]:
        """(channel index, joint index) pairs for joint-angle channels."""
        out = []
        for i, (label, kind) in enumerate(zip(self.channel_labels, self.channel_kinds)):
            if kind == PROPRIO and label.startswith(JOINT_LABEL_PREFIX):
                suffix = label[len(JOINT_LABEL_PREFIX):]
                if suffix.isdigit():
                    out.append((i, int(suffix)))
        return out

    def with_data(self, data: np.ndarray, normalized: bool | None = None) -> "SensorimotorSequence":
        return replace(
            self,
            data=np.array(data, dtype=np.float64),
            normalized=self.normalized if normalized is None else normalized,
        )


@dataclass
class ChannelStats:
    """Per-channel mean and (floored, population) standard deviation."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean/std must be matching 1-D vectors")
        if np.any(self.std <= 0.0):
            raise ValueError("std entries must be positive")


def zscore_fit(sequences, std_floor: float = 1e-6) -> ChannelStats:
    """Fit per-channel mean and population std over all rows of all sequences.

    Near-constant channels get their std floored at ``std_floor`` so that
    normalization never divides by ~0. Fit on training demonstrations only.
    """
    seqs = list(sequences)
    if not seqs:
        raise ValueError("need at least one sequence to fit channel stats")
    d = seqs[0].n_channels
    for s in seqs:
        if s.n_channels != d:
            raise ValueError("all sequences must share the channel layout")
    rows = np.concatenate([s.data for s in seqs], axis=0)
    mean = rows.mean(axis=0)
    std = rows.std(axis=0)  # population (ddof=0)
    std = np.maximum(std, std_floor)
    return ChannelStats(mean=mean, std=std)


def zscore_apply(seq: SensorimotorSequence, stats: ChannelStats) -> SensorimotorSequence:
    if seq.n_channels != stats.mean.shape[0]:
        raise ValueError(
            f"stats have {stats.mean.shape[0]} channels, sequence has {seq.n_channels}"
        )
    return seq.with_data((seq.data - stats.mean) / stats.std, normalized=True)


def zscore_invert(seq: SensorimotorSequence, stats: ChannelStats) -> SensorimotorSequence:
    if seq.n_channels != stats.mean.shape[0]:
        raise ValueError(
            f"stats have {stats.mean.shape[0]} channels, sequence has {seq.n_channels}"
        )
    return seq.with_data(seq.data * stats.std + stats.mean, normalized=False)


def normalize_rows(rows: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """Normalize a bare (T, D) array with fitted stats."""
    rows = np.asarray(rows, dtype=np.float64)
    return (rows - stats.mean) / stats.std


def denormalize_rows(rows: np.ndarray, stats: ChannelStats) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    return rows * stats.std + stats.mean


# ---------------------------------------------------------------------------
# Dataset files
#
# Self-describing text container. One file holds one or more sequence records:
#
#   sequences v1
#   sequence
#   skill <id>
#   rep <id>
#   rate_hz <float>
#   normalized <0|1>
#   channels <D>
#   channel <label> <kind>          (D lines; kind in {proprio, extero, cue})
#   rows <T>
#   <v>,<v>,...                     (T comma-separated rows, repr() floats)
#   end
#
# repr() of a Python float round-trips IEEE-754 doubles exactly, so
# write -> read -> write is byte-identical.
# ---------------------------------------------------------------------------

_MAGIC = "sequences v1"


def save_sequences(path, sequences) -> None:
    seqs = list(sequences)
    lines = [_MAGIC]
    for s in seqs:
        for ident in (s.skill_id, s.rep_id):
            if any(c.isspace() for c in ident):
                raise ValueError(f"identifier {ident!r} must not contain whitespace")
        lines.append("sequence")
        lines.append(f"skill {s.skill_id}")
        lines.append(f"rep {s.rep_id}")
        lines.append(f"rate_hz {s.rate_hz!r}")
        lines.append(f"normalized {1 if s.normalized else 0}")
        lines.append(f"channels {s.n_channels}")
        for label, kind in zip(s.channel_labels, s.channel_kinds):
            if any(c.isspace() for c in label):
                raise ValueError(f"channel label {label!r} must not contain whitespace")
            lines.append(f"channel {label} {kind}")
        lines.append(f"rows {s.n_steps}")
        for row in s.data:
            lines.append(",".join(repr(v) for v in row.tolist()))
        lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def load_sequences(path) -> list[SensorimotorSequence]:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != _MAGIC:
        raise SequenceParseError(1, f"expected header {_MAGIC!r}")
    out = []
    i = 1
    while i < len(lines):
        if lines[i].strip() == "":
            i += 1
            continue
        if lines[i].strip() != "sequence":
            raise SequenceParseError(i + 1, f"expected 'sequence', got {lines[i]!r}")
        i += 1
        header: dict[str, str] = {}
        channels: list[tuple[str, str]] = []
        for key in ("skill", "rep", "rate_hz", "normalized", "channels"):
            if i >= len(lines):
                raise SequenceParseError(i, f"truncated record, missing {key!r}")
            parts = lines[i].split()
            if len(parts) != 2 or parts[0] != key:
                raise SequenceParseError(i + 1, f"expected '{key} <value>', got {lines[i]!r}")
            header[key] = parts[1]
            i += 1
        try:
            n_chan = int(header["channels"])
        except ValueError:
            raise SequenceParseError(i, f"channel count {header['channels']!r} is not an integer")
        for _ in range(n_chan):
            if i >= len(lines):
                raise SequenceParseError(i, "truncated channel list")
            parts = lines[i].split()
            if len(parts) != 3 or parts[0] != "channel":
                raise SequenceParseError(i + 1, f"expected 'channel <label> <kind>', got {lines[i]!r}")
            if parts[2] not in CHANNEL_KINDS:
                raise SequenceParseError(i + 1, f"unknown channel kind {parts[2]!r}")
            channels.append((parts[1], parts[2]))
            i += 1
        parts = lines[i].split() if i < len(lines) else []
        if len(parts) != 2 or parts[0] != "rows":
            raise SequenceParseError(i + 1, "expected 'rows <count>'")
        n_rows = int(parts[1])
        if n_rows < 1:
            raise SequenceParseError(i + 1, "sequence must have at least one row")
        i += 1
        data = np.empty((n_rows, n_chan), dtype=np.float64)
        for r in range(n_rows):
            if i >= len(lines):
                raise SequenceParseError(i, "truncated data block")
            cells = lines[i].split(",")
            if len(cells) != n_chan:
                raise SequenceParseError(i + 1, f"expected {n_chan} cells, got {len(cells)}")
            try:
                data[r] = [float(c) for c in cells]
            except ValueError as exc:
                raise SequenceParseError(i + 1, str(exc))
            i += 1
        if i >= len(lines) or lines[i].strip() != "end":
            raise SequenceParseError(i + 1, "expected 'end'")
        i += 1
        try:
            rate = float(header["rate_hz"])
        except ValueError:
            raise SequenceParseError(i, f"bad rate_hz {header['rate_hz']!r}")
        out.append(
            SensorimotorSequence(
                data=data,
                channel_labels=[c[0] for c in channels],
                channel_kinds=[c[1] for c in channels],
                skill_id=header["skill"],
                rep_id=header["rep"],
                rate_hz=rate,
                normalized=header["normalized"] == "1",
            )
        )
    return out
