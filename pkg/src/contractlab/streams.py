"""Counter-based random streams, one per simulated path.

Every path owns a Philox generator keyed by (master_seed, path_index), so a
path's noise does not depend on how an ensemble is chunked across threads.
Each step consumes ``2 * dim + 1`` standard normals from the path's stream:
two Brownian increments of dimension ``dim`` and one normal that is mapped to
a uniform (for the bridge crossing test) through the normal CDF.
"""

from typing import Protocol, Sequence

import numpy as np
from scipy.special import ndtr

U64_MASK: int = (1 << 64) - 1
BLOCK_BUDGET: int = 1 << 22


def path_generator(master_seed: int, path_index: int) -> np.random.Generator:
    key = np.array([master_seed & U64_MASK, path_index & U64_MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(master_seed: int, *labels: int) -> int:
    """Deterministic 64-bit child seed for a labelled sub-experiment."""
    sequence = np.random.SeedSequence([master_seed & U64_MASK, *labels])
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


class NoiseSource(Protocol):
    def block(self, steps: int) -> np.ndarray:
        """Return raw normals of shape (steps, n_paths, 2 * dim + 1)."""
        ...


class PathNoise:
    """Independent per-path streams for the paths ``indices``."""

    def __init__(self, master_seed: int, indices: Sequence[int], dim: int):
        self.dim = dim
        self.width = 2 * dim + 1
        self._generators = [path_generator(master_seed, int(i)) for i in indices]

    def block(self, steps: int) -> np.ndarray:
        out = np.empty((steps, len(self._generators), self.width))
        for j, gen in enumerate(self._generators):
            out[:, j, :] = gen.standard_normal((steps, self.width))
        return out


class FrozenNoise:
    """Zero Brownian increments; the bridge uniform is pinned at 1 (never fires)."""

    def __init__(self, n_paths: int, dim: int):
        self.n_paths = n_paths
        self.dim = dim

    def block(self, steps: int) -> np.ndarray:
        out = np.zeros((steps, self.n_paths, 2 * self.dim + 1))
        out[..., -1] = np.inf
        return out


def block_steps(n_paths: int, dim: int, remaining: int) -> int:
    """Steps per noise block, keeping a block near BLOCK_BUDGET numbers."""
    per_step = max(1, n_paths * (2 * dim + 1))
    return int(max(1, min(remaining, 1024, BLOCK_BUDGET // per_step)))


def split_block(raw: np.ndarray, dim: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split one step of raw normals into (reflected, parallel, uniform)."""
    first = raw[:, :dim]
    second = raw[:, dim : 2 * dim]
    uniform = ndtr(raw[:, -1])
    return first, second, uniform
