"""Little-endian binary plumbing shared by the CT?? file formats."""

from __future__ import annotations

import struct

import numpy as np

from .errors import (
    BadMagicError,
    LayoutError,
    NonFiniteValueError,
    TruncatedPayloadError,
    VersionError,
)


class Reader:
    """Cursor over an in-memory file image; every shortage is a typed error."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> bytes:
        if self.remaining < n:
            raise TruncatedPayloadError(
                f"need {n} bytes at offset {self.pos}, only {self.remaining} left"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def magic(self, expected: bytes) -> None:
        got = self.take(4)
        if got != expected:
            raise BadMagicError(f"expected magic {expected!r}, found {got!r}")

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u8(self) -> int:
        return self.take(1)[0]

    def version(self, expected: int = 1) -> None:
        got = self.u32()
        if got != expected:
            raise VersionError(f"unsupported version {got}, expected {expected}")

    def f32_array(self, count: int, what: str) -> np.ndarray:
        # byte budget is checked before any allocation so fuzzed huge counts
        # fail cleanly instead of attempting the allocation
        raw = self.take(count * 4)
        values = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise NonFiniteValueError(f"non-finite values in {what}")
        return values

    def f64_array(self, count: int, what: str) -> np.ndarray:
        raw = self.take(count * 8)
        values = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise NonFiniteValueError(f"non-finite values in {what}")
        return values

    def done(self) -> None:
        if self.remaining != 0:
            raise LayoutError(f"{self.remaining} trailing bytes after payload")


def u32(value: int) -> bytes:
    return struct.pack("<I", value)


def u8(value: int) -> bytes:
    return struct.pack("<B", value)


def f32_bytes(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f4").tobytes()


def f64_bytes(values: np.ndarray) -> bytes:
    return np.ascontiguousarray(values, dtype="<f8").tobytes()
