"""Single-file checkpoint archive: plain-text header + named float32 blobs.

Layout: a UTF-8 header terminated by an ``end`` line, then the raw
little-endian float32 tensor payloads concatenated in header order. The
header carries the schema version, the training step count, a JSON config
line, and one ``tensor <name> <dim0> <dim1> ...`` line per payload.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np
import torch

from .errors import DataFormatError

__all__ = ["save_checkpoint", "load_checkpoint", "read_header"]

_MAGIC = "dva-checkpoint"
_SCHEMA = 1


def _named_tensors(model: torch.nn.Module):
    return [(name, t.detach().cpu()) for name, t in sorted(model.state_dict().items())]


def save_checkpoint(path, model: torch.nn.Module, config: dict, step: int = 0):
    """Write the model's state atomically; config must be JSON-serializable."""
    path = Path(path)
    tensors = _named_tensors(model)
    lines = [
        f"{_MAGIC} {_SCHEMA}",
        f"step {int(step)}",
        f"config {json.dumps(config, sort_keys=True)}",
    ]
    for name, tensor in tensors:
        dims = " ".join(str(d) for d in tensor.shape)
        lines.append(f"tensor {name} {dims}".rstrip())
    lines.append("end")
    header = ("\n".join(lines) + "\n").encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header)
            for _, tensor in tensors:
                fh.write(tensor.numpy().astype("<f4").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def read_header(path):
    """Parse header only: (step, config, [(name, shape), ...], payload_offset)."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError as exc:
        raise DataFormatError(f"{path}: checkpoint not found") from exc

    end_marker = b"\nend\n"
    cut = raw.find(end_marker)
    if cut < 0:
        raise DataFormatError(f"{path}: missing end-of-header marker")
    offset = cut + len(end_marker)
    lines = raw[:cut].decode("utf-8", errors="replace").splitlines()

    if not lines or not lines[0].startswith(_MAGIC):
        raise DataFormatError(f"{path}: not a checkpoint file (bad magic line)")
    schema = lines[0].split()[-1]
    if schema != str(_SCHEMA):
        raise DataFormatError(f"{path}: unsupported schema version {schema}")

    step, config, tensors = None, None, []
    for line in lines[1:]:
        kind, _, rest = line.partition(" ")
        if kind == "step":
            step = int(rest)
        elif kind == "config":
            try:
                config = json.loads(rest)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: malformed config line ({exc})") from exc
        elif kind == "tensor":
            parts = rest.split()
            tensors.append((parts[0], tuple(int(d) for d in parts[1:])))
        else:
            raise DataFormatError(f"{path}: unknown header line kind {kind!r}")
    if step is None or config is None:
        raise DataFormatError(f"{path}: header missing step or config")
    return step, config, tensors, offset


def load_checkpoint(path, model: torch.nn.Module):
    """Load tensors into an already-constructed model; returns (step, config)."""
    path = Path(path)
    step, config, tensors, offset = read_header(path)
    raw = path.read_bytes()
    state = {}
    pos = offset
    for name, shape in tensors:
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = 4 * count
        if pos + nbytes > len(raw):
            raise DataFormatError(f"{path}: truncated payload at tensor {name}")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=pos).reshape(shape)
        state[name] = torch.from_numpy(arr.copy())
        pos += nbytes
    if pos != len(raw):
        raise DataFormatError(f"{path}: {len(raw) - pos} trailing bytes after tensors")
    missing, unexpected = model.load_state_dict(state, strict=False)
    if missing or unexpected:
        raise DataFormatError(
            f"{path}: state mismatch (missing {sorted(missing)[:3]}, "
            f"unexpected {sorted(unexpected)[:3]})"
        )
    return step, config
