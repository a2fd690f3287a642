"""Versioned flat model files with bit-exact round trips.

Layout (text, one item per line):

    modelfile v1
    kind <tpc|rnn>
    activation tanh            (tpc)
    variant <s2m|sm2sm>        (rnn)
    dim <name> <int>           (tpc: hidden, obs; rnn: hidden, in, out)
    matrix <name> <rows> <cols>
    <row of cols C99-hex floats, space separated>   (x rows)
    ...
    end

Weights are written row-major as float.hex() strings, so save -> load ->
save reproduces the file byte for byte.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .baselines import RnnModel
from .tpc import TpcModel

_MAGIC = "modelfile v1"


class ModelFileError(ValueError):
    pass


def _write_matrix(lines: list[str], name: str, mat: np.ndarray) -> None:
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    lines.append(f"matrix {name} {mat.shape[0]} {mat.shape[1]}")
    for row in mat:
        lines.append(" ".join(v.hex() for v in row.tolist()))


def save_model(path, model) -> None:
    lines = [_MAGIC]
    if isinstance(model, TpcModel):
        lines.append("kind tpc")
        lines.append(f"activation {model.activation}")
        lines.append(f"dim hidden {model.hidden_dim}")
        lines.append(f"dim obs {model.obs_dim}")
        _write_matrix(lines, "w_h", model.w_h)
        _write_matrix(lines, "w_f", model.w_f)
    elif isinstance(model, RnnModel):
        lines.append("kind rnn")
        lines.append(f"variant {model.variant}")
        lines.append(f"dim hidden {model.hidden_dim}")
        lines.append(f"dim in {model.in_dim}")
        lines.append(f"dim out {model.out_dim}")
        for name in ("w_in", "w_rec", "w_out", "b_h", "b_o"):
            _write_matrix(lines, name, getattr(model, name))
    else:
        raise ModelFileError(f"cannot serialize {type(model).__name__}")
    lines.append("end")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse(path):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != _MAGIC:
        raise ModelFileError(f"not a model file (expected {_MAGIC!r} header)")
    fields: dict[str, str] = {}
    dims: dict[str, int] = {}
    matrices: dict[str, np.ndarray] = {}
    i = 1
    while i < len(lines):
        line = lines[i]
        if line == "end":
            return fields, dims, matrices
        parts = line.split()
        if parts[0] in ("kind", "activation", "variant"):
            fields[parts[0]] = parts[1]
            i += 1
        elif parts[0] == "dim":
            dims[parts[1]] = int(parts[2])
            i += 1
        elif parts[0] == "matrix":
            name, rows, cols = parts[1], int(parts[2]), int(parts[3])
            mat = np.empty((rows, cols), dtype=np.float64)
            for r in range(rows):
                i += 1
                cells = lines[i].split()
                if len(cells) != cols:
                    raise ModelFileError(f"matrix {name}: row {r} has {len(cells)} cells, expected {cols}")
                mat[r] = [float.fromhex(c) for c in cells]
            matrices[name] = mat
            i += 1
        else:
            raise ModelFileError(f"unexpected line {i + 1}: {line!r}")
    raise ModelFileError("missing 'end'")


def load_model(path):
    fields, dims, matrices = _parse(path)
    kind = fields.get("kind")
    if kind == "tpc":
        model = TpcModel(
            w_h=matrices["w_h"], w_f=matrices["w_f"], activation=fields["activation"]
        )
        if model.hidden_dim != dims.get("hidden") or model.obs_dim != dims.get("obs"):
            raise ModelFileError("declared dims do not match matrix shapes")
        return model
    if kind == "rnn":
        model = RnnModel(
            w_in=matrices["w_in"],
            w_rec=matrices["w_rec"],
            w_out=matrices["w_out"],
            b_h=matrices["b_h"].ravel(),
            b_o=matrices["b_o"].ravel(),
            variant=fields["variant"],
        )
        if (
            model.hidden_dim != dims.get("hidden")
            or model.in_dim != dims.get("in")
            or model.out_dim != dims.get("out")
        ):
            raise ModelFileError("declared dims do not match matrix shapes")
        return model
    raise ModelFileError(f"unknown model kind {kind!r}")
