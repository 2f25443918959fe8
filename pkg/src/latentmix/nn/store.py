"""Named parameter storage and the binary checkpoint format.

Checkpoint layout (all integers little-endian):

    magic    4 bytes  b"LMCK"
    version  u32      = 1
    width    u8       float byte width of every array in the file (4 or 8)
    count    u32      number of arrays
    then per array:
      name_len u16, name utf-8 bytes,
      rank u8, dims u32 * rank,
      data: prod(dims) * width bytes, little-endian floats

Round-trips are bit-exact.
"""

from __future__ import annotations

import struct
from typing import Iterator

import numpy as np

from .tensor import Tensor

MAGIC = b"LMCK"
VERSION = 1


class CheckpointError(IOError):
    pass


class ParameterStore:
    """Ordered name -> parameter Tensor map for one model."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype).type
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(array, dtype=self.dtype), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self) -> Iterator[tuple[str, Tensor]]:
        return iter(self._params.items())

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self):
        for p in self._params.values():
            p.grad = None

    def n_scalars(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], prefix: str = ""):
        for name, p in self._params.items():
            key = prefix + name
            if key not in arrays:
                raise CheckpointError(f"checkpoint is missing parameter {key!r}")
            a = arrays[key]
            if tuple(a.shape) != tuple(p.data.shape):
                raise CheckpointError(
                    f"shape mismatch for {key!r}: file {a.shape} vs model {p.data.shape}"
                )
            p.data = a.astype(self.dtype)


def save_checkpoint(path, arrays: dict[str, np.ndarray]):
    arrays = {n: np.asarray(a) for n, a in arrays.items()}
    widths = {a.dtype.itemsize for a in arrays.values()}
    if not widths <= {4, 8}:
        raise CheckpointError(f"only float32/float64 arrays are supported, got {widths}")
    width = max(widths) if widths else 4
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<IBI", VERSION, width, len(arrays)))
        dt = np.dtype("<f4" if width == 4 else "<f8")
        for name, a in arrays.items():
            if a.dtype.itemsize != width:
                # mixed widths are widened; exact because f4 embeds in f8
                a = a.astype(dt)
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", a.ndim))
            for d in a.shape:
                f.write(struct.pack("<I", d))
            f.write(np.ascontiguousarray(a, dtype=dt).tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint file")
        version, width, count = struct.unpack("<IBI", f.read(9))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        dt = np.dtype("<f4" if width == 4 else "<f8")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            raw = f.read(n * width)
            if len(raw) != n * width:
                raise CheckpointError(f"{path}: truncated array {name!r}")
            out[name] = np.frombuffer(raw, dtype=dt).reshape(dims).copy()
    return out
