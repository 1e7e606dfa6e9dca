"""Shared container logic for the LEM and LSTM parameter dataclasses."""

from __future__ import annotations

import dataclasses
import io
import struct

import numpy as np

from .numerics import DTYPE


class CheckpointError(ValueError):
    """Bad header, truncated payload or mismatched model kind."""


class ParamSet:
    """Mixin for dataclasses whose trainable fields are float64 arrays.

    Subclasses list their array fields, in serialization order, in
    ``ARRAY_FIELDS`` and name their binary header in ``HEADER``.
    """

    ARRAY_FIELDS: tuple[str, ...] = ()
    HEADER: bytes = b""

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in self.ARRAY_FIELDS}

    def items(self):
        return ((k, getattr(self, k)) for k in self.ARRAY_FIELDS)

    def replace(self, **arrays):
        return dataclasses.replace(self, **arrays)

    def map(self, fn):
        return self.replace(**{k: fn(v) for k, v in self.items()})

    def copy(self):
        return self.map(np.copy)

    def zeros_like(self):
        return self.map(np.zeros_like)

    def n_params(self) -> int:
        return sum(v.size for _, v in self.items())

    def flatten(self) -> np.ndarray:
        return np.concatenate([v.ravel() for _, v in self.items()])

    def unflatten(self, flat: np.ndarray):
        out, pos = {}, 0
        dtype = flat.dtype if np.issubdtype(flat.dtype, np.floating) else DTYPE
        for k, v in self.items():
            out[k] = np.asarray(flat[pos:pos + v.size], dtype=dtype).reshape(v.shape).copy()
            pos += v.size
        if pos != flat.size:
            raise ValueError(f"flat vector has {flat.size} entries, expected {pos}")
        return self.replace(**out)

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for _, v in self.items())

    # binary layout: header, dims as int64, scalar extras as float64, arrays
    # row-major float64, all little-endian
    def _dims(self) -> tuple[int, ...]:
        raise NotImplementedError

    def _scalars(self) -> tuple[float, ...]:
        return ()

    @classmethod
    def _build(cls, dims, scalars, arrays):
        raise NotImplementedError

    @classmethod
    def _shapes(cls, dims) -> dict[str, tuple[int, ...]]:
        raise NotImplementedError

    N_SCALARS = 0

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(self.HEADER)
        dims = self._dims()
        buf.write(struct.pack(f"<{len(dims)}q", *dims))
        scalars = self._scalars()
        if scalars:
            buf.write(struct.pack(f"<{len(scalars)}d", *scalars))
        for _, v in self.items():
            buf.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return buf.getvalue()

    @classmethod
    def from_stream(cls, stream):
        head = stream.read(len(cls.HEADER))
        if head != cls.HEADER:
            raise CheckpointError(f"expected header {cls.HEADER!r}, found {head!r}")
        raw = stream.read(8 * 3)
        if len(raw) != 24:
            raise CheckpointError("truncated dims")
        dims = struct.unpack("<3q", raw)
        if min(dims) < 1:
            raise CheckpointError(f"invalid dims {dims}")
        scalars = ()
        if cls.N_SCALARS:
            raw = stream.read(8 * cls.N_SCALARS)
            if len(raw) != 8 * cls.N_SCALARS:
                raise CheckpointError("truncated scalars")
            scalars = struct.unpack(f"<{cls.N_SCALARS}d", raw)
        arrays = {}
        for name, shape in cls._shapes(dims).items():
            n = int(np.prod(shape))
            raw = stream.read(8 * n)
            if len(raw) != 8 * n:
                raise CheckpointError(f"truncated array {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f8").astype(DTYPE).reshape(shape)
        return cls._build(dims, scalars, arrays)

    @classmethod
    def from_bytes(cls, data: bytes):
        stream = io.BytesIO(data)
        out = cls.from_stream(stream)
        if stream.read(1):
            raise CheckpointError("trailing bytes after parameters")
        return out
