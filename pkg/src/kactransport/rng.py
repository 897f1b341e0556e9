"""Deterministic, splittable random streams.

Every stream is a pure function of ``(master_seed, stream_id)``. The pair is
hashed into the initial state of a PCG64 generator through numpy's
``SeedSequence`` (entropy = master seed, spawn key = stream id), so any
stream can be built in O(1) on any worker without skipping ahead.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

_U64 = 1 << 64


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_id: int

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= int(value) < _U64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer, got {value!r}")


def stream_id(tag: str, index: int = 0) -> int:
    """Compose a 64-bit stream id from a subsystem tag and an index.

    The upper 32 bits hold the CRC-32 of ``tag``, the lower 32 bits the index
    (path number, block number, ...).
    """
    if not 0 <= index < (1 << 32):
        raise ValueError(f"stream index out of range: {index}")
    return (zlib.crc32(tag.encode()) << 32) | index


class RandomStream:
    """Random variates drawn from one derived generator.

    A stream is owned by one worker at a time; it may be moved between
    threads or processes but is never shared concurrently.
    """

    def __init__(self, spec: SeedSpec):
        self.spec = spec
        seq = np.random.SeedSequence(entropy=int(spec.master_seed), spawn_key=(int(spec.stream_id),))
        self._gen = np.random.Generator(np.random.PCG64(seq))

    def __repr__(self):
        return f"RandomStream(master_seed={self.spec.master_seed}, stream_id={self.spec.stream_id})"

    def uniform(self, size=None):
        """Uniform draws on [0, 1)."""
        return self._gen.random(size)

    def exponential(self, rate: float, size=None):
        """Exponential draws by inversion, ``-log(1 - U) / rate``."""
        if not rate > 0 or not np.isfinite(rate):
            raise ValueError(f"exponential rate must be positive and finite, got {rate}")
        return -np.log1p(-self._gen.random(size)) / rate

    def bernoulli(self, p: float = 0.5, size=None):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"bernoulli p must lie in [0, 1], got {p}")
        return self._gen.random(size) < p

    def signs(self, size=None):
        """Fair +1/-1 coins as int8."""
        return np.where(self.bernoulli(0.5, size), 1, -1).astype(np.int8)

    def normal(self, size=None, scale: float = 1.0):
        return self._gen.standard_normal(size) * scale


def derive_stream(spec: SeedSpec) -> RandomStream:
    return RandomStream(spec)
