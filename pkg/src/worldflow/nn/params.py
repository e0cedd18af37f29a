"""Named parameter registry and checkpoint serialization.

Checkpoint layout: 6-byte magic, little-endian uint64 header length, a
canonical-JSON header (sorted keys, no whitespace) describing each tensor
(dtype, shape, byte offset, byte count) plus a free-form ``meta`` dict,
then the concatenated raw little-endian tensor blobs in name order.
Canonical ordering makes save -> load -> save byte-identical.
"""

from __future__ import annotations

import json
import struct
from typing import Iterator, Mapping

import numpy as np

from ..errors import InvalidArgumentError, PersistenceError
from .tensor import Tensor

CHECKPOINT_MAGIC = b"WFCK\x00\x01"

_DTYPE_TAGS = {
    "f4": np.dtype("<f4"),
    "f8": np.dtype("<f8"),
    "i8": np.dtype("<i8"),
    "i4": np.dtype("<i4"),
    "u1": np.dtype("<u1"),
}
_TAG_FOR_KIND = {np.dtype(v.str.lstrip("<|")).str.lstrip("<|=") : k for k, v in _DTYPE_TAGS.items()}


def _dtype_tag(dt: np.dtype) -> str:
    key = np.dtype(dt).str.lstrip("<>|=")
    if key not in _TAG_FOR_KIND:
        raise PersistenceError(f"unsupported checkpoint dtype: {dt}")
    return _TAG_FOR_KIND[key]


class ParameterStore:
    """Uniquely named trainable tensors; insertion order is preserved."""

    def __init__(self, dtype=np.float32):
        self.dtype = np.dtype(dtype)
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray, requires_grad: bool = True) -> Tensor:
        if name in self._params:
            raise InvalidArgumentError(f"duplicate parameter name: {name!r}")
        t = Tensor(np.asarray(array, dtype=self.dtype).copy(), requires_grad=requires_grad)
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

    def zero_grad(self) -> None:
        for t in self._params.values():
            t.grad = None

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self._params.items()}

    def load_state(self, arrays: Mapping[str, np.ndarray]) -> None:
        """Overwrite parameter values in place; shapes must match exactly."""
        missing = [n for n in self._params if n not in arrays]
        if missing:
            raise PersistenceError(f"checkpoint missing parameters: {missing[:4]}")
        for name, t in self._params.items():
            arr = np.asarray(arrays[name])
            if arr.shape != t.data.shape:
                raise PersistenceError(
                    f"shape mismatch for {name!r}: {arr.shape} vs {t.data.shape}")
            t.data = arr.astype(self.dtype, copy=True)


def checkpoint_bytes(arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> bytes:
    names = sorted(arrays)
    entries = {}
    blobs = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        tag = _dtype_tag(arr.dtype)
        raw = arr.astype(_DTYPE_TAGS[tag], copy=False).tobytes(order="C")
        entries[name] = {
            "dtype": tag,
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        blobs.append(raw)
        offset += len(raw)
    header = {"meta": meta or {}, "tensors": entries, "version": 1}
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return b"".join([CHECKPOINT_MAGIC, struct.pack("<Q", len(header_bytes)),
                     header_bytes, *blobs])


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: dict | None = None) -> None:
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(arrays, meta))


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise PersistenceError(f"bad checkpoint magic in {path}")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode("utf-8"))
        blob = f.read()
    arrays = {}
    for name, ent in header["tensors"].items():
        dt = _DTYPE_TAGS[ent["dtype"]]
        start, n = ent["offset"], ent["nbytes"]
        arr = np.frombuffer(blob[start:start + n], dtype=dt)
        arrays[name] = arr.reshape(ent["shape"]).copy()
    return arrays, header.get("meta", {})
