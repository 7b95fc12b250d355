"""Little-endian checkpoint files.

Layout: 4-byte magic, u32 version, u32 array count, then per array
u32 name length, UTF-8 name, u32 ndim, ndim x u32 dims, f64 values
in row-major order.
"""

from __future__ import annotations

import hashlib
import struct
from pathlib import Path

import numpy as np

from .data import LatentCodec, TeacherEncoder

VERSION = 1
TEACHER_MAGIC = b"ERWT"
MODEL_MAGIC = b"ERWM"


class CheckpointError(ValueError):
    pass


def write_arrays(path: str | Path, magic: bytes, arrays: dict[str, np.ndarray]) -> None:
    chunks = [magic, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype="<f8")  # tobytes() is C-order; ascontiguousarray would promote 0-d to 1-d
        raw = name.encode()
        chunks.append(struct.pack("<I", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_arrays(path: str | Path, magic: bytes) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != magic:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}, expected {magic!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 12
    out = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos : pos + nlen].decode()
            pos += nlen
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).reshape(shape)
            pos += 8 * size
            out[name] = arr.astype(np.float64)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated or corrupt ({exc})") from exc
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def save_teacher_codec(path: str | Path, teacher: TeacherEncoder, codec: LatentCodec) -> None:
    arrays = {}
    for i, (w, b) in enumerate(teacher.weights):
        arrays[f"teacher.{i}.w"] = w
        arrays[f"teacher.{i}.b"] = b
    arrays["teacher.seed"] = np.array(float(teacher.seed))
    arrays["codec.encode"] = codec.encode_matrix
    arrays["codec.decode"] = codec.decode_matrix
    arrays["codec.mean"] = codec.mean
    write_arrays(path, TEACHER_MAGIC, arrays)


def load_teacher_codec(path: str | Path) -> tuple[TeacherEncoder, LatentCodec]:
    arrays = read_arrays(path, TEACHER_MAGIC)
    n_layers = sum(1 for k in arrays if k.startswith("teacher.") and k.endswith(".w"))
    weights = [(arrays[f"teacher.{i}.w"], arrays[f"teacher.{i}.b"]) for i in range(n_layers)]
    teacher = TeacherEncoder(weights, int(arrays["teacher.seed"]))
    codec = LatentCodec(arrays["codec.encode"], arrays["codec.decode"], arrays["codec.mean"])
    return teacher, codec


def save_model(path: str | Path, model) -> None:
    write_arrays(path, MODEL_MAGIC, model.state())


def load_model_state(path: str | Path) -> dict[str, np.ndarray]:
    return read_arrays(path, MODEL_MAGIC)
