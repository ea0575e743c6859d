"""Binary parameter store with bit-exact round trips.

Layout (all integers little-endian):

    magic    8 bytes  b"SRDRMCKP"
    version  u32      currently 1
    count    u32      number of entries
    entry*count:
        name_len  u16
        name      UTF-8 bytes (unique within a file)
        dtype     u8   (0 = float32, the only defined tag)
        rank      u8
        dims      rank x u32
        payload   prod(dims) x f32, little-endian, row-major
        checksum  u32  CRC-32 over name + dtype + rank + dims + payload bytes

Loads verify magic, version and every per-entry checksum; corruption never
yields a partially-filled model.
"""

from __future__ import annotations

import struct
import zlib

import numpy as np

from .errors import (
    CheckpointCorruptionError,
    CheckpointFormatError,
    CheckpointVersionError,
    ContractViolation,
)

__all__ = [
    "MAGIC",
    "VERSION",
    "save_arrays",
    "load_arrays",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC = b"SRDRMCKP"
VERSION = 1
_DTYPE_F32 = 0


def save_arrays(path, arrays: dict[str, np.ndarray]) -> None:
    """Write named float32 arrays; names must be unique (dict keys are)."""
    blobs = []
    for name, arr in arrays.items():
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ContractViolation(f"entry name too long: {name!r}")
        a = np.ascontiguousarray(arr, dtype="<f4")
        meta = struct.pack("<BB", _DTYPE_F32, a.ndim)
        dims = struct.pack(f"<{a.ndim}I", *a.shape)
        payload = a.tobytes()
        crc = zlib.crc32(nb + meta + dims + payload) & 0xFFFFFFFF
        blobs.append(
            struct.pack("<H", len(nb)) + nb + meta + dims + payload + struct.pack("<I", crc)
        )
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(arrays)))
        for blob in blobs:
            f.write(blob)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointCorruptionError(
                f"checkpoint truncated while reading {what} "
                f"(needed {n} bytes at offset {self.pos}, file has {len(self.data)})"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk


def load_arrays(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointFormatError(
            f"{path}: not a checkpoint file (bad magic {data[:8]!r})"
        )
    r = _Reader(data)
    r.pos = len(MAGIC)
    version, count = struct.unpack("<II", r.take(8, "header"))
    if version != VERSION:
        raise CheckpointVersionError(
            f"{path}: unsupported checkpoint version {version} (expected {VERSION})"
        )
    out: dict[str, np.ndarray] = {}
    for i in range(count):
        what = f"entry {i}"
        (name_len,) = struct.unpack("<H", r.take(2, f"{what} name length"))
        nb = r.take(name_len, f"{what} name")
        name = nb.decode("utf-8")
        what = f"entry {i} ({name!r})"
        meta = r.take(2, f"{what} dtype/rank")
        dtype_tag, rank = struct.unpack("<BB", meta)
        if dtype_tag != _DTYPE_F32:
            raise CheckpointFormatError(f"{path}: {what} has unknown dtype tag {dtype_tag}")
        dims_bytes = r.take(4 * rank, f"{what} dims")
        dims = struct.unpack(f"<{rank}I", dims_bytes)
        n_elem = int(np.prod(dims, dtype=np.int64)) if rank else 1
        payload = r.take(4 * n_elem, f"{what} payload")
        (crc_stored,) = struct.unpack("<I", r.take(4, f"{what} checksum"))
        crc = zlib.crc32(nb + meta + dims_bytes + payload) & 0xFFFFFFFF
        if crc != crc_stored:
            raise CheckpointCorruptionError(
                f"{path}: checksum mismatch on {what} "
                f"(stored {crc_stored:#010x}, computed {crc:#010x})"
            )
        if name in out:
            raise CheckpointFormatError(f"{path}: duplicate entry name {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return out


def save_checkpoint(model, path) -> None:
    """Serialize a model's config meta plus all parameters/running stats."""
    arrays = dict(model.config_meta())
    arrays.update(model.state_arrays())
    save_arrays(path, arrays)


def load_checkpoint(path, config=None):
    """Rebuild a model from a checkpoint.

    ``config``, when given, must match the stored architecture; when None
    the config is derived from the stored meta entries.
    """
    from .models import (  # local import to avoid a cycle
        Discriminator,
        DiscriminatorConfig,
        Generator,
        GeneratorConfig,
    )

    arrays = load_arrays(path)
    try:
        kind = float(arrays["meta.kind"][0])
    except KeyError:
        raise CheckpointFormatError(f"{path}: missing meta.kind entry") from None
    if kind == 1.0:
        stored = GeneratorConfig(
            scale_exp=int(arrays["meta.scale_exp"][0]),
            base_filters=int(arrays["meta.base_filters"][0]),
            residual_layers=int(arrays["meta.residual_layers"][0]),
            use_bn_in_drm=bool(arrays["meta.use_bn_in_drm"][0]),
            leaky_slope=float(arrays["meta.leaky_slope"][0]),
        )
        model = Generator(config or stored, seed=0)
    elif kind == 2.0:
        stored = DiscriminatorConfig(
            layers=int(arrays["meta.layers"][0]),
            stride_layout=tuple(int(s) for s in arrays["meta.stride_layout"]),
            base_filters=int(arrays["meta.base_filters"][0]),
            leaky_slope=float(arrays["meta.leaky_slope"][0]),
        )
        model = Discriminator(config or stored, seed=0)
    else:
        raise CheckpointFormatError(f"{path}: unknown model kind tag {kind}")

    expected = model.state_arrays()
    for name, target in expected.items():
        if name not in arrays:
            raise CheckpointFormatError(f"{path}: missing parameter entry {name!r}")
        stored_arr = arrays[name]
        if stored_arr.shape != target.shape:
            raise ContractViolation(
                f"{path}: entry {name!r} has shape {stored_arr.shape} but the "
                f"requested config needs {target.shape}"
            )
        model.set_state(name, stored_arr)
    return model
