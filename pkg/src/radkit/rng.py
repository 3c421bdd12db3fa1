"""Deterministic, splittable random streams.

Every stochastic operation in this package takes an :class:`RngStream`
value instead of mutating a shared generator.  A stream is fully described
by ``(seed, stream_id, counter)``; the same triple always produces the same
draw sequence, on any platform, because draws come from the counter-based
Philox bit generator keyed by ``(seed, stream_id)``.

Streams split without coordination: :meth:`RngStream.child` derives a new
``stream_id`` by hashing the parent identity together with the given tags,
so workers can draw from per-item streams in any order (or in parallel)
and still produce byte-identical results.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

__all__ = ["RngStream"]

_U64 = np.uint64
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngStream:
    seed: int
    stream_id: int = 0
    counter: int = 0

    def __post_init__(self) -> None:
        for name in ("seed", "stream_id", "counter"):
            v = getattr(self, name)
            if not isinstance(v, int) or not 0 <= v <= _MASK64:
                raise ValueError(f"{name} must be an integer in [0, 2**64)")

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at this stream's counter.

        Each call returns an independent generator that replays the same
        sequence, so holding an ``RngStream`` never entangles callers.
        """
        bg = np.random.Philox(
            key=np.array([self.seed, self.stream_id], dtype=_U64),
            counter=np.array([self.counter, 0, 0, 0], dtype=_U64),
        )
        return np.random.Generator(bg)

    def child(self, *tags: int | str) -> "RngStream":
        """Derive an independent substream labeled by ``tags``.

        The child keeps the parent ``seed``; its ``stream_id`` is the
        64-bit BLAKE2b digest of (parent stream_id, tags), making distinct
        tag paths map to distinct streams with overwhelming probability.
        """
        if not tags:
            raise ValueError("child() requires at least one tag")
        h = hashlib.blake2b(digest_size=8)
        h.update(self.stream_id.to_bytes(8, "little"))
        for tag in tags:
            if isinstance(tag, int):
                h.update(b"i" + (tag & _MASK64).to_bytes(8, "little"))
            else:
                raw = tag.encode("utf-8")
                h.update(b"s" + len(raw).to_bytes(4, "little") + raw)
        return RngStream(self.seed, int.from_bytes(h.digest(), "little"), 0)

    def with_counter(self, counter: int) -> "RngStream":
        """Same stream advanced (or rewound) to an absolute counter."""
        return RngStream(self.seed, self.stream_id, counter)
