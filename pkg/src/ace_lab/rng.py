"""Deterministic random streams.

Every stream is a PCG64 generator keyed by (seed, label): the label is a
path-like string ("root/init/fc1") hashed together with the seed, so each
consumer gets an independent stream whose draws depend only on its own call
sequence. Two runs with the same seed produce identical streams no matter
what order unrelated components draw in.

Normal deviates use the Box-Muller transform over the stream's uniforms
rather than the generator's native method, so the exact sequence is pinned
by this module and not by the NumPy version.
"""

from __future__ import annotations

import hashlib

import numpy as np

ALGORITHM = "pcg64"


def _stream_seed(seed: int, label: str) -> int:
    digest = hashlib.sha256(f"{seed}//{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


class Rng:
    """A labelled random stream with spawnable children."""

    def __init__(self, seed: int, label: str = "root"):
        self.seed = int(seed)
        self.label = label
        self._gen = np.random.Generator(np.random.PCG64(_stream_seed(self.seed, label)))

    def child(self, label: str) -> "Rng":
        """Independent stream keyed by this stream's label plus `label`."""
        return Rng(self.seed, f"{self.label}/{label}")

    def random(self, size=None) -> np.ndarray:
        """Uniform draws in [0, 1)."""
        return self._gen.random(size)

    def uniform(self, low: float, high: float, size=None) -> np.ndarray:
        return low + (high - low) * self._gen.random(size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def gaussian(self, n: int) -> np.ndarray:
        """n i.i.d. standard normals via Box-Muller."""
        m = (n + 1) // 2
        u1 = self._gen.random(m)
        u2 = self._gen.random(m)
        # 1 - u1 lies in (0, 1], so the log is finite.
        r = np.sqrt(-2.0 * np.log(1.0 - u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])
        return z[:n]

    def normal(self, shape) -> np.ndarray:
        """Standard-normal array of the given shape (Box-Muller draws)."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = 1
        for s in shape:
            n *= s
        return self.gaussian(n).reshape(shape)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, label={self.label!r})"
