"""Tests for per-path random streams."""

import numpy as np

from contractlab.streams import (
    BLOCK_BUDGET,
    FrozenNoise,
    PathNoise,
    block_steps,
    derive_seed,
    path_generator,
    split_block,
)


class TestPathGenerator:
    """Tests for counter-based stream keys."""

    def test_same_key_same_stream(self):
        a = path_generator(42, 3).standard_normal(5)
        b = path_generator(42, 3).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_distinct_paths_differ(self):
        a = path_generator(42, 3).standard_normal(5)
        b = path_generator(42, 4).standard_normal(5)
        assert not np.array_equal(a, b)

    def test_large_seeds_accepted(self):
        path_generator((1 << 64) - 1, 0).standard_normal(1)


class TestDeriveSeed:
    """Tests for labelled child seeds."""

    def test_deterministic(self):
        assert derive_seed(7, 1, 2) == derive_seed(7, 1, 2)

    def test_labels_matter(self):
        assert derive_seed(7, 1) != derive_seed(7, 2)


class TestPathNoise:
    """Tests for per-path noise blocks."""

    def test_block_shape(self):
        noise = PathNoise(0, range(4), dim=2)
        assert noise.block(3).shape == (3, 4, 5)

    def test_independent_of_chunking(self):
        whole = PathNoise(9, range(6), dim=1).block(10)
        left = PathNoise(9, range(3), dim=1).block(10)
        right = PathNoise(9, range(3, 6), dim=1).block(10)
        np.testing.assert_array_equal(whole, np.concatenate([left, right], axis=1))

    def test_consecutive_blocks_continue_the_stream(self):
        single = PathNoise(1, [0], dim=1).block(8)
        split = PathNoise(1, [0], dim=1)
        np.testing.assert_array_equal(single, np.concatenate([split.block(5), split.block(3)]))


class TestFrozenNoise:
    """Tests for the zero-increment source."""

    def test_increments_are_zero_and_bridge_never_fires(self):
        raw = FrozenNoise(2, 1).block(4)
        assert np.all(raw[..., :2] == 0)
        _, _, uniform = split_block(raw[0], 1)
        np.testing.assert_array_equal(uniform, [1.0, 1.0])


class TestBlocks:
    """Tests for block sizing and splitting."""

    def test_block_steps_bounded(self):
        assert block_steps(10, 1, 5) == 5
        assert block_steps(10, 1, 10_000) == 1024
        assert block_steps(BLOCK_BUDGET, 1, 100) == 1

    def test_split_widths(self):
        raw = np.zeros((3, 7))
        first, second, uniform = split_block(raw, 3)
        assert first.shape == (3, 3)
        assert second.shape == (3, 3)
        np.testing.assert_allclose(uniform, 0.5)
