"""Named parameter containers and the binary checkpoint format.

Checkpoint layout (all integers unsigned 64-bit little-endian)::

    b"NASESPK1"
    repeated until EOF:
        name_len, name (utf-8), rank, extents[rank], float64 data (little-endian)

Optimizer state is stored alongside the parameters as ``<name>@<slot>``
entries; the step counter is the rank-0 entry ``@step``.
"""
from __future__ import annotations

import copy
import hashlib
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NASESPK1"


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    pass


class CheckpointError(IOError):
    pass


def check_finite(x, what="tensor") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains NaN or Inf")
    return x


class ParamSet:
    """Ordered mapping of parameter name -> float64 array, plus optimizer state."""

    def __init__(self, params=None):
        self.params: dict[str, np.ndarray] = {}
        self.state: dict[str, dict[str, np.ndarray]] = {}
        self.step = 0
        for k, v in (params or {}).items():
            self[k] = v

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __setitem__(self, name: str, value) -> None:
        if "@" in name:
            raise KeyError("'@' is reserved for optimizer state")
        self.params[name] = check_finite(np.array(value, dtype=np.float64), name)

    def __contains__(self, name) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def items(self):
        return self.params.items()

    def keys(self):
        return self.params.keys()

    @property
    def size(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def copy(self) -> "ParamSet":
        return copy.deepcopy(self)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def check_grads(self, grads) -> None:
        for k, v in self.params.items():
            if k not in grads:
                raise ShapeError(f"missing gradient for {k}")
            g = np.asarray(grads[k])
            if g.shape != v.shape:
                raise ShapeError(f"gradient for {k} has shape {g.shape}, expected {v.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {k}")

    def flat(self) -> np.ndarray:
        return np.concatenate([v.ravel() for v in self.params.values()]) if self.params else np.zeros(0)

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in self.params.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return h.hexdigest()

    def equal(self, other: "ParamSet") -> bool:
        return list(self.params) == list(other.params) and all(
            np.array_equal(self.params[k], other.params[k]) for k in self.params
        )

    # -- serialization -----------------------------------------------------

    def entries(self):
        yield from self.params.items()
        for k, slots in self.state.items():
            for slot, arr in slots.items():
                yield f"{k}@{slot}", arr
        yield "@step", np.array(float(self.step))

    def to_bytes(self) -> bytes:
        out = [MAGIC]
        for name, arr in self.entries():
            raw = name.encode("utf-8")
            arr = np.asarray(arr, dtype="<f8")
            out.append(struct.pack("<Q", len(raw)) + raw)
            out.append(struct.pack("<Q", arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            out.append(np.ascontiguousarray(arr).tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParamSet":
        if data[:8] != MAGIC:
            raise CheckpointError("bad magic; not a parameter checkpoint")
        ps = cls()
        pos = 8
        try:
            while pos < len(data):
                (nlen,) = struct.unpack_from("<Q", data, pos)
                pos += 8
                name = data[pos : pos + nlen].decode("utf-8")
                pos += nlen
                (rank,) = struct.unpack_from("<Q", data, pos)
                pos += 8
                shape = struct.unpack_from(f"<{rank}Q", data, pos)
                pos += 8 * rank
                count = int(np.prod(shape, dtype=np.int64))
                if pos + 8 * count > len(data):
                    raise CheckpointError(f"truncated data for entry {name!r}")
                arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).reshape(shape)
                pos += 8 * count
                arr = arr.astype(np.float64)
                if name == "@step":
                    ps.step = int(arr)
                elif "@" in name:
                    key, slot = name.split("@", 1)
                    ps.state.setdefault(key, {})[slot] = arr
                else:
                    ps.params[name] = arr
        except (struct.error, UnicodeDecodeError, ValueError) as exc:
            raise CheckpointError(f"corrupt checkpoint: {exc}") from exc
        return ps

    def save(self, path) -> None:
        atomic_write(path, self.to_bytes())

    @classmethod
    def load(cls, path) -> "ParamSet":
        try:
            data = Path(path).read_bytes()
        except FileNotFoundError as exc:
            raise CheckpointError(f"missing checkpoint {path}") from exc
        return cls.from_bytes(data)


def atomic_write(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode) as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
