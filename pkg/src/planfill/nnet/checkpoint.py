"""Versioned checkpoint container.

Layout: a text header (format-version line, ModelConfig as key=value lines,
blank line), then per named parameter a name line, a shape line, and the
row-major 32-bit little-endian float payload.  The loader refuses unknown
versions and any mismatch against the config-implied parameter schema.
"""

import io
import os
import tempfile

import numpy as np
import torch

from .model import ModelConfig, build_model

FORMAT_VERSION = "planfill-checkpoint-v1"

_BOOL_KEYS = {"uses_segment_embeddings"}
_FLOAT_KEYS = {"dropout"}
_STR_KEYS = {"kind"}


def save_checkpoint(model, path):
    buf = io.BytesIO()
    buf.write((FORMAT_VERSION + "\n").encode())
    for key, val in model.cfg.to_dict().items():
        buf.write(f"{key}={val}\n".encode())
    buf.write(b"\n")
    for name, tensor in model.state_dict().items():
        arr = tensor.detach().cpu().to(torch.float32).numpy()
        buf.write((name + "\n").encode())
        buf.write((" ".join(str(d) for d in arr.shape) + "\n").encode())
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    # atomic write: temp file in the target directory, then rename
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(buf.getvalue())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def _parse_config(lines):
    d = {}
    for line in lines:
        key, _, val = line.partition("=")
        if key in _STR_KEYS:
            d[key] = val
        elif key in _BOOL_KEYS:
            d[key] = val == "True"
        elif key in _FLOAT_KEYS:
            d[key] = float(val)
        else:
            d[key] = int(val)
    return ModelConfig.from_dict(d)


def load_checkpoint(path):
    with open(path, "rb") as f:
        data = f.read()
    head_end = data.find(b"\n\n")
    if head_end < 0:
        raise ValueError("malformed checkpoint: no header terminator")
    header = data[:head_end].decode().split("\n")
    if header[0] != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version: {header[0]!r}")
    cfg = _parse_config(header[1:])
    model = build_model(cfg)
    schema = {name: tuple(t.shape) for name, t in model.state_dict().items()}

    pos = head_end + 2
    loaded = {}
    while pos < len(data):
        nl = data.find(b"\n", pos)
        name = data[pos:nl].decode()
        pos = nl + 1
        nl = data.find(b"\n", pos)
        shape_line = data[pos:nl].decode()
        pos = nl + 1
        shape = tuple(int(x) for x in shape_line.split()) if shape_line else ()
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).reshape(shape)
        pos += count * 4
        if name in loaded:
            raise ValueError(f"duplicate parameter in checkpoint: {name}")
        if name not in schema:
            raise ValueError(f"unexpected parameter in checkpoint: {name}")
        if shape != schema[name]:
            raise ValueError(f"shape mismatch for {name}: {shape} vs {schema[name]}")
        if not np.isfinite(arr).all():
            raise ValueError(f"non-finite values in parameter {name}")
        loaded[name] = torch.from_numpy(arr.copy())
    missing = set(schema) - set(loaded)
    if missing:
        raise ValueError(f"checkpoint missing parameters: {sorted(missing)}")
    model.load_state_dict(loaded)
    model.eval()
    return model
