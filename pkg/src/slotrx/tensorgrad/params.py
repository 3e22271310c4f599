"""Named parameter sets and the binary named-tensor container.

The container is a flat file: magic string, format version, a JSON metadata
blob, then a list of (name, dtype, shape, little-endian payload) entries.
Checkpoints and debug grid dumps both use it.
"""

import json
import struct

import numpy as np

from ..errors import CheckpointError, ConfigError, DimensionError
from .autodiff import Tensor

MAGIC = b"SLOTRXNT"
FORMAT_VERSION = 1

_DTYPE_CODES = {0: "<f8", 1: "<f4"}
_DTYPE_TO_CODE = {np.dtype("float64"): 0, np.dtype("float32"): 1}


class ParamSet:
    """Ordered map from stable string names to trainable tensors."""

    def __init__(self):
        self._params = {}

    def add(self, name, value):
        if name in self._params:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value), requires_grad=True, name=name)
        self._params[name] = t
        return t

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self):
        return list(self._params.values())

    def n_scalars(self):
        return sum(t.value.size for t in self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.grad = None

    def state_dict(self):
        return {name: t.value.copy() for name, t in self._params.items()}

    def load_state_dict(self, arrays):
        """Replace all values; names and shapes must match exactly."""
        missing = set(self._params) - set(arrays)
        extra = set(arrays) - set(self._params)
        if missing or extra:
            raise CheckpointError(
                f"parameter names do not match (missing: {sorted(missing)}, "
                f"unknown: {sorted(extra)})")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name])
            if arr.shape != t.value.shape:
                raise DimensionError(
                    f"parameter {name!r} has shape {t.value.shape}, file has {arr.shape}")
            t.value = arr.astype(t.value.dtype, copy=True)
            t.grad = None


def save_tensors(path, tensors, metadata=None):
    """Write named real-valued arrays plus a JSON metadata dict."""
    meta = json.dumps(metadata or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<I", len(meta)))
        f.write(meta)
        f.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            if arr.dtype not in _DTYPE_TO_CODE:
                arr = arr.astype(np.float64)
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", _DTYPE_TO_CODE[arr.dtype]))
            f.write(struct.pack("<B", arr.ndim))
            for ext in arr.shape:
                f.write(struct.pack("<I", ext))
            f.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def _read_exact(f, n, what):
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated container while reading {what}")
    return data


def load_tensors(path):
    """Read a container written by :func:`save_tensors` -> (tensors, metadata)."""
    with open(path, "rb") as f:
        if _read_exact(f, len(MAGIC), "magic") != MAGIC:
            raise CheckpointError(f"{path}: not a slotrx tensor container (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: container format version {version} unsupported "
                f"(expected {FORMAT_VERSION})")
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4, "metadata length"))
        try:
            metadata = json.loads(_read_exact(f, meta_len, "metadata").decode("utf-8"))
        except ValueError as exc:
            raise CheckpointError(f"{path}: corrupt metadata block ({exc})") from exc
        (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            (code,) = struct.unpack("<B", _read_exact(f, 1, "dtype"))
            if code not in _DTYPE_CODES:
                raise CheckpointError(f"{path}: unknown dtype code {code} for {name!r}")
            dtype = np.dtype(_DTYPE_CODES[code])
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, "rank"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, "shape"))
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            payload = _read_exact(f, n_bytes, f"payload of {name!r}")
            tensors[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
        if f.read(1):
            raise CheckpointError(f"{path}: trailing bytes after last tensor")
    return tensors, metadata
