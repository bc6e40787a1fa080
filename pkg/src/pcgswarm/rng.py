"""Counter-based random streams with stable cross-platform output.

Every draw is a pure function of (key, counter), so streams can be split by
label without coordination and replayed bit-identically on any interpreter.
The mixing function is splitmix64; all arithmetic is plain Python ints, which
keeps the sequence independent of numpy versions and C library details.
"""

from __future__ import annotations

from dataclasses import dataclass, field

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15

# FNV-1a 64-bit, used only to fold string labels into the key space.
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _splitmix64(x: int) -> int:
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _hash_label(label: str | int) -> int:
    if isinstance(label, int):
        return label & _MASK64
    h = _FNV_OFFSET
    for b in label.encode("utf-8"):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


@dataclass
class RngStream:
    """A splittable random stream identified by a 64-bit key.

    ``split(label)`` derives a child whose output depends only on
    (key, label), never on how much the parent has already drawn, so
    components can carve out private streams in any order.
    """

    seed: int
    counter: int = 0
    _key: int = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._key = _splitmix64(self.seed & _MASK64)

    # -- core draws ---------------------------------------------------------

    def next_u64(self) -> int:
        """Return the next 64-bit unsigned integer in this stream."""
        value = _splitmix64(self._key ^ _splitmix64(self.counter ^ _GOLDEN))
        self.counter += 1
        return value

    def below(self, n: int) -> int:
        """Uniform integer in [0, n). Rejection-sampled, so exactly uniform."""
        if n <= 0:
            raise ValueError(f"below() needs a positive bound, got {n}")
        # largest multiple of n that fits in 64 bits
        limit = _MASK64 - ((_MASK64 + 1) % n)
        while True:
            u = self.next_u64()
            if u <= limit:
                return u % n

    def uniform(self) -> float:
        """Uniform float in [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * (1.0 / (1 << 53))

    def gauss_pair(self) -> tuple[float, float]:
        """Two independent standard normals via Box-Muller."""
        import math

        # u1 in (0, 1] so log() is finite
        u1 = 1.0 - self.uniform()
        u2 = self.uniform()
        r = math.sqrt(-2.0 * math.log(u1))
        return r * math.cos(2.0 * math.pi * u2), r * math.sin(2.0 * math.pi * u2)

    def normals(self, n: int) -> list[float]:
        """List of n independent standard normal draws."""
        out: list[float] = []
        while len(out) < n:
            a, b = self.gauss_pair()
            out.append(a)
            if len(out) < n:
                out.append(b)
        return out

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle driven by this stream."""
        for i in range(len(items) - 1, 0, -1):
            j = self.below(i + 1)
            items[i], items[j] = items[j], items[i]

    # -- splitting and state ------------------------------------------------

    def split(self, label: str | int) -> "RngStream":
        """Child stream keyed by (this stream's key, label) only."""
        child = RngStream.__new__(RngStream)
        child.seed = self.seed
        child.counter = 0
        child._key = _splitmix64(self._key ^ _splitmix64(_hash_label(label) ^ _GOLDEN))
        return child

    def state(self) -> tuple[int, int]:
        """Opaque resume token: (key, counter)."""
        return (self._key, self.counter)

    @classmethod
    def from_state(cls, state: tuple[int, int]) -> "RngStream":
        key, counter = state
        stream = cls.__new__(cls)
        stream.seed = 0
        stream.counter = int(counter)
        stream._key = int(key) & _MASK64
        return stream
