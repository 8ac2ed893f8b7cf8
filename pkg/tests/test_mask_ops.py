"""
Mask morphology and the boundary-preserving denoiser.
"""

import numpy as np
import pytest

import mask_ops as mo
from conftest import random_mask
from errors import ConfigError, ShapeError

SE3 = mo.StructuringElement(3)


def ones(h, w):
    return mo.BinaryMask.ones(h, w)


def zeros(h, w):
    return mo.BinaryMask.zeros(h, w)


class TestBinaryMask:

    def test_rejects_non_binary(self):
        with pytest.raises(ShapeError):
            mo.BinaryMask(np.array([[0, 2]]))

    def test_rejects_non_2d(self):
        with pytest.raises(ShapeError):
            mo.BinaryMask(np.zeros((2, 2, 2)))

    def test_structuring_element_odd(self):
        with pytest.raises(ConfigError):
            mo.StructuringElement(4)
        with pytest.raises(ConfigError):
            mo.StructuringElement(1)

    def test_png_round_trip(self, tmp_path, rng):
        m = random_mask(rng, 9, 13)
        m.save(tmp_path / "m.png")
        assert mo.BinaryMask.load(tmp_path / "m.png") == m
        path = mo.save_mask(m.complement(), tmp_path / "sub" / "c.png")
        assert mo.load_mask(path) == m.complement()


class TestErodeDilate:

    def test_erode_all_ones_loses_border(self):
        out = mo.erode(ones(10, 10), SE3).bits
        expected = np.zeros((10, 10), dtype=np.uint8)
        expected[1:-1, 1:-1] = 1
        np.testing.assert_array_equal(out, expected)

    def test_erode_zero_and_isolated(self):
        assert mo.erode(zeros(6, 6), SE3) == zeros(6, 6)
        bits = np.zeros((7, 7), dtype=np.uint8)
        bits[3, 3] = 1
        assert mo.erode(mo.BinaryMask(bits), SE3) == zeros(7, 7)

    def test_dilate_single_pixel(self):
        bits = np.zeros((7, 7), dtype=np.uint8)
        bits[3, 3] = 1
        expected = np.zeros((7, 7), dtype=np.uint8)
        expected[2:5, 2:5] = 1
        np.testing.assert_array_equal(mo.dilate(mo.BinaryMask(bits), SE3).bits, expected)
        assert mo.dilate(zeros(5, 5), SE3) == zeros(5, 5)

    def test_opening_restores_solid_field(self):
        assert mo.dilate(mo.erode(ones(10, 10), SE3), SE3) == ones(10, 10)

    @pytest.mark.parametrize("seed", range(20))
    def test_duality(self, seed):
        m = random_mask(np.random.default_rng(seed), 12, 15)
        assert mo.dilate(m, SE3) == mo.erode(m.complement(), SE3, border=1).complement()
        assert mo.erode(m, SE3) == mo.dilate(m.complement(), SE3, border=1).complement()

    def test_larger_element(self):
        bits = np.zeros((9, 9), dtype=np.uint8)
        bits[4, 4] = 1
        assert mo.dilate(mo.BinaryMask(bits), mo.StructuringElement(5)).count() == 25


class TestOpeningClosing:

    def test_opening_removes_small_components(self, rng):
        for _ in range(10):
            bits = np.zeros((16, 16), dtype=np.uint8)
            for _ in range(2):
                y, x = rng.integers(1, 14, size=2)
                h, w = rng.integers(1, 3, size=2)
                bits[y:y + h, x:x + w] = 1
            assert mo.opening(mo.BinaryMask(bits), SE3) == zeros(16, 16)

    def test_closing_fills_one_pixel_hole(self):
        bits = np.zeros((16, 16), dtype=np.uint8)
        bits[4:12, 4:12] = 1
        bits[7, 7] = 0
        expected = bits.copy()
        expected[7, 7] = 1
        np.testing.assert_array_equal(mo.closing(mo.BinaryMask(bits), SE3).bits, expected)

    @pytest.mark.parametrize("seed", range(20))
    def test_opening_idempotent(self, seed):
        m = random_mask(np.random.default_rng(seed), 16, 16, p=0.6)
        once = mo.opening(m, SE3)
        assert mo.opening(once, SE3) == once


class TestDenoise:

    def test_trivial_masks(self):
        assert mo.denoise_mask(zeros(12, 12), SE3, 5) == zeros(12, 12)
        assert mo.denoise_mask(ones(12, 12), SE3, 5) == ones(12, 12)

    def test_radius_must_be_positive(self):
        with pytest.raises(ConfigError):
            mo.denoise_mask(zeros(4, 4), SE3, 0)

    def test_block_plus_noise_fixture(self, noise_fixture):
        noisy, clean, noise = noise_fixture
        assert len(noise) == 12
        out = mo.denoise_mask(noisy, SE3, 5)
        assert out == clean
        for y, x in noise:
            assert out.bits[y, x] == 0

    @pytest.mark.parametrize("seed", range(10))
    def test_fixture_family(self, seed):
        rng = np.random.default_rng(seed)
        blobs = []
        for i in range(2):
            h, w = rng.integers(15, 22, size=2)
            blobs.append((int(4 + 44 * i), int(rng.integers(4, 20)), int(h), int(w)))
        noisy, clean, noise = mo.noise_fixture(
            size=96, blobs=tuple(blobs), n_noise=int(rng.integers(1, 31)), min_distance=9, seed=seed
        )
        out = mo.denoise_mask(noisy, SE3, 5)
        assert out == clean
        assert all(out.bits[y, x] == 0 for y, x in noise)

    def test_shrinking_on_random_masks(self, rng):
        for _ in range(1000):
            h, w = rng.integers(3, 24, size=2)
            m = random_mask(rng, h, w, p=rng.uniform(0.05, 0.95))
            assert mo.denoise_mask(m, SE3, 2) <= m

    def test_boundary_preserved_for_surviving_component(self):
        bits = np.zeros((40, 40), dtype=np.uint8)
        bits[5:20, 8:30] = 1
        bits[20:26, 8:12] = 1          # L-shaped tail
        bits[0, 39] = 1                # far speck
        m = mo.BinaryMask(bits)
        out = mo.denoise_mask(m, SE3, 5)
        np.testing.assert_array_equal(out.bits[:30, :32], bits[:30, :32])
        assert out.bits[0, 39] == 0


class TestDownsample:

    def test_trivial(self):
        any1, all1 = mo.downsample_region(zeros(8, 8), 4)
        assert any1 == zeros(2, 2) and all1 == zeros(2, 2)
        any1, all1 = mo.downsample_region(ones(8, 8), 2)
        assert any1 == ones(4, 4) and all1 == ones(4, 4)

    def test_checkerboard(self):
        bits = (np.indices((4, 4)).sum(axis=0) % 2).astype(np.uint8)
        any1, all1 = mo.downsample_region(mo.BinaryMask(bits), 2)
        assert any1 == ones(2, 2)
        assert all1 == zeros(2, 2)

    def test_block_checkerboard(self):
        blocks = np.kron(np.array([[1, 0], [0, 1]]), np.ones((2, 2))).astype(np.uint8)
        any1, all1 = mo.downsample_region(mo.BinaryMask(blocks), 2)
        np.testing.assert_array_equal(all1.bits, [[1, 0], [0, 1]])
        np.testing.assert_array_equal(any1.bits, [[1, 0], [0, 1]])

    def test_divisibility(self):
        with pytest.raises(ShapeError):
            mo.downsample_region(zeros(6, 8), 4)

    def test_factor_power_of_two(self):
        with pytest.raises(ConfigError):
            mo.downsample_region(zeros(6, 6), 3)

    def test_maxpool_is_any1(self, rng):
        m = random_mask(rng, 16, 16, p=0.1)
        assert mo.maxpool_mask(m, 4) == mo.downsample_region(m, 4)[0]

    def test_components(self):
        bits = np.zeros((6, 6), dtype=np.uint8)
        bits[0, 0] = bits[5, 5] = bits[4, 4] = 1
        _, n = mo.connected_components(mo.BinaryMask(bits))
        assert n == 2
