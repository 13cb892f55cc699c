"""Parameter checkpoint files.

Plain binary layout, little-endian throughout:

    8 bytes   magic b"GMIXCKPT"
    uint32    format version (currently 1)
    uint32    tensor count
    per tensor:
        uint32      name length in bytes
        bytes       name, utf-8
        uint32      number of dimensions
        uint64[nd]  extents
        float64[n]  payload, row-major

Tensors round-trip bit-exactly; readers reject unknown magic/version.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"GMIXCKPT"
VERSION = 1


def save_checkpoint(path, named_arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(named_arrays)))
        for name, arr in named_arrays.items():
            arr = np.ascontiguousarray(arr, dtype=np.float64)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"not a checkpoint file (bad magic {magic!r})")
        version, count = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", f.read(4))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{ndim}Q", f.read(8 * ndim)) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            payload = f.read(8 * n)
            if len(payload) != 8 * n:
                raise ValueError(f"truncated payload for tensor {name!r}")
            out[name] = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return out


def model_arrays(backbone, head) -> dict[str, np.ndarray]:
    """Named parameter values of a backbone + head pair, in stable order."""
    return {p.name: p.value for p in backbone.parameters() + head.parameters()}


def load_model(path, backbone, head) -> None:
    """Restore parameters in place, validating names and shapes."""
    arrays = load_checkpoint(path)
    params = {p.name: p for p in backbone.parameters() + head.parameters()}
    if set(arrays) != set(params):
        raise ValueError(
            f"checkpoint tensors {sorted(arrays)} do not match model "
            f"parameters {sorted(params)}"
        )
    for name, arr in arrays.items():
        p = params[name]
        if arr.shape != p.value.shape:
            raise ValueError(
                f"shape mismatch for {name!r}: checkpoint {arr.shape}, "
                f"model {p.value.shape}"
            )
        p.value[...] = arr
