"""Counter-based random streams keyed by ``(seed, stream_id)``.

A stream is an immutable key. Every call to :meth:`RngStream.open` starts the
Philox4x64 counter from zero, so the same key always reproduces the same
draws, independent of process, worker count or call order. Normal variates are
produced with Box-Muller from 53-bit uniforms.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_TWO_PI = 2.0 * np.pi
_INV_2_53 = 2.0 ** -53


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= int(value) <= _MASK64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value!r}")

    def open(self) -> "Draws":
        key = int(self.seed) | (int(self.stream_id) << 64)
        return Draws(np.random.Philox(key=key))

    def derive(self, *parts: int) -> "RngStream":
        """Child stream whose id is a hash of this stream's id and ``parts``."""
        payload = struct.pack(f"<{len(parts) + 1}Q", self.stream_id, *(int(p) & _MASK64 for p in parts))
        digest = hashlib.sha256(b"allospec-stream" + payload).digest()
        return RngStream(self.seed, int.from_bytes(digest[:8], "little"))


class Draws:
    """Stateful reader over one stream."""

    def __init__(self, bitgen: np.random.Philox):
        self._bitgen = bitgen

    def raw(self, size: int) -> np.ndarray:
        return self._bitgen.random_raw(size)

    def uniform(self, size: int) -> np.ndarray:
        """Uniforms on [0, 1) with 53 random bits."""
        return (self.raw(size) >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def _open_uniform(self, size: int) -> np.ndarray:
        return ((self.raw(size) >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53

    def normal(self, shape) -> np.ndarray:
        shape = (shape,) if isinstance(shape, (int, np.integer)) else tuple(shape)
        count = int(np.prod(shape, dtype=np.int64))
        half = (count + 1) // 2
        u1 = self._open_uniform(half)
        u2 = self._open_uniform(half)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = _TWO_PI * u2
        out = np.empty(2 * half)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:count].reshape(shape)
