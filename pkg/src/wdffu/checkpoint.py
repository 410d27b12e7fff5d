"""Binary checkpoint container.

Layout, all integers little-endian:

    magic   6 bytes  b"WDFFU\\0"
    version uint32
    config  uint64 length + utf-8 key = value lines
    params  uint64 count, then per parameter:
              uint16 name length + utf-8 name
              uint8 ndim, ndim x uint64 extents
              raw little-endian float64 payload
    opt     uint8 flag; if set: uint64 step count, then per parameter
            (same order) the first- and second-moment payloads

Write-then-read reproduces every float bitwise.
"""
import struct

import numpy as np

from .errors import DataError
from .network import ModelConfig, build_model

MAGIC = b"WDFFU\0"
VERSION = 1


def _write_array(fh, arr):
    fh.write(arr.astype("<f8", copy=False).tobytes())


def _read_exact(fh, n):
    buf = fh.read(n)
    if len(buf) != n:
        raise DataError(f"checkpoint truncated: wanted {n} bytes, got {len(buf)}")
    return buf


def _read_array(fh, shape):
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    buf = _read_exact(fh, 8 * count)
    return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)


def _open(path, mode):
    try:
        return open(path, mode)
    except OSError as exc:
        raise DataError(f"cannot open checkpoint {path}: {exc}") from exc


def save_checkpoint(path, model, opt_state=None):
    """Serialize a model and optionally (step, {name: (m, v)}) moments."""
    names = list(model.named_params())
    config_text = model.config.to_text().encode()
    with _open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(config_text)))
        fh.write(config_text)
        fh.write(struct.pack("<Q", len(names)))
        for name, tensor in names:
            encoded = name.encode()
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", tensor.data.ndim))
            for extent in tensor.data.shape:
                fh.write(struct.pack("<Q", extent))
            _write_array(fh, tensor.data)
        if opt_state is None:
            fh.write(struct.pack("<B", 0))
        else:
            step, moments = opt_state
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Q", step))
            for name, tensor in names:
                if name not in moments:
                    raise DataError(f"optimizer state missing moments for '{name}'")
                m, v = moments[name]
                _write_array(fh, np.asarray(m))
                _write_array(fh, np.asarray(v))


def load_checkpoint(path):
    """Rebuild the model from its stored config and restore every tensor."""
    with _open(path, "rb") as fh:
        if _read_exact(fh, len(MAGIC)) != MAGIC:
            raise DataError(f"{path} is not a checkpoint (bad magic)")
        version, = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise DataError(f"unsupported checkpoint version {version}")
        config_len, = struct.unpack("<Q", _read_exact(fh, 8))
        cfg = ModelConfig.from_text(_read_exact(fh, config_len).decode())
        count, = struct.unpack("<Q", _read_exact(fh, 8))
        state = {}
        shapes = []
        for _ in range(count):
            name_len, = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, name_len).decode()
            ndim, = struct.unpack("<B", _read_exact(fh, 1))
            shape = tuple(struct.unpack("<Q", _read_exact(fh, 8))[0] for _ in range(ndim))
            state[name] = _read_array(fh, shape)
            shapes.append((name, shape))
        flag, = struct.unpack("<B", _read_exact(fh, 1))
        opt_state = None
        if flag:
            step, = struct.unpack("<Q", _read_exact(fh, 8))
            moments = {}
            for name, shape in shapes:
                m = _read_array(fh, shape)
                v = _read_array(fh, shape)
                moments[name] = (m, v)
            opt_state = (step, moments)
        if fh.read(1):
            raise DataError(f"{path} has trailing bytes after checkpoint payload")
    model = build_model(cfg)
    model.load_state(state)
    return model, opt_state
