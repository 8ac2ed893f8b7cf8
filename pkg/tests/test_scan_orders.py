"""
Scan permutations, window classification and intra-category distances.
"""

import numpy as np
import pytest

import mask_ops
import scan_orders as so
from config import SCAN_CONFIG
from conftest import blob_mask, random_mask
from errors import DataError, ShapeError, UsageError
from tensor_core import ComputationTape, Tensor, backward, parameter, sum as tsum

H_ = so.Direction.HORIZONTAL
V_ = so.Direction.VERTICAL
HR = so.Direction.HORIZONTAL_REVERSE
VR = so.Direction.VERTICAL_REVERSE

HAND_GRID = so.WindowClassGrid(np.array([[2, 0], [1, 0]]), 2)


def random_layout(seed):
    """Window in {2, 4, 8}, map sides up to 64 and divisible by the window, blob mask."""
    rng = np.random.default_rng(seed)
    window = int(rng.choice([2, 4, 8]))
    H = window * int(rng.integers(1, 64 // window + 1))
    W = window * int(rng.integers(1, 64 // window + 1))
    m = blob_mask(rng, H, W, window)
    return H, W, window, m, so.classify_windows(m, window)


def all_orders(strategy, H, W, window, m, grid):
    return so.build_orders(strategy, H, W, window=window, classes=grid, region_labels=m.bits)


def window_positions(order):
    """Sequence position of every window id."""
    seq = so.window_sequence(order)
    pos = np.empty(seq.size, dtype=np.int64)
    pos[seq] = np.arange(seq.size)
    return pos


class TestDirection:

    def test_parse(self):
        assert so.Direction.parse("vertical_reverse") is VR
        assert VR.is_reverse and VR.forward is V_
        assert H_.forward is H_

    def test_parse_bad(self):
        with pytest.raises(UsageError):
            so.Direction.parse("diagonal")


# =============================================================================
# Classification
# =============================================================================

class TestClassify:

    def test_three_cases(self):
        bits = np.zeros((2, 6), dtype=np.uint8)
        bits[0, 2] = 1
        bits[:, 4:] = 1
        grid = so.classify_windows(mask_ops.BinaryMask(bits), 2)
        np.testing.assert_array_equal(grid.labels, [[0, 1, 2]])
        assert grid.counts() == {0: 1, 1: 1, 2: 1}

    @pytest.mark.parametrize("seed", range(200))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        window = int(rng.choice([1, 2, 4, 8]))
        rows, cols = rng.integers(1, 7, size=2)
        m = random_mask(rng, window * rows, window * cols, p=rng.uniform(0.05, 0.95))
        grid = so.classify_windows(m, window)
        assert (grid.rows, grid.cols) == (rows, cols)
        for r in range(rows):
            for c in range(cols):
                block = m.bits[window * r:window * (r + 1), window * c:window * (c + 1)]
                expected = 2 if block.all() else (0 if not block.any() else 1)
                assert grid.labels[r, c] == expected

    def test_not_divisible(self):
        with pytest.raises(ShapeError):
            so.classify_windows(mask_ops.BinaryMask.zeros(6, 8), 4)

    def test_bad_labels(self):
        with pytest.raises(ShapeError):
            so.WindowClassGrid(np.array([[3]]), 1)

    def test_receptive_level_zero_is_plain(self, rng):
        m = blob_mask(rng, 16, 16, 4)
        assert so.classify_windows_receptive(m, 0, 4) == so.classify_windows(m, 4)

    @pytest.mark.parametrize("seed", range(5))
    def test_receptive_covers_full_resolution_region(self, seed):
        m = blob_mask(np.random.default_rng(seed), 32, 32, 4)
        deep = so.classify_windows_receptive(m, 1, 4)
        full = so.classify_windows(m, 8)
        np.testing.assert_array_equal(deep.labels, full.labels)

    def test_receptive_pads_to_window(self):
        m = mask_ops.BinaryMask.zeros(24, 24)
        grid = so.classify_windows_receptive(m, 1, 8)
        assert (grid.rows, grid.cols) == (2, 2)

    def test_maxpool_marks_isolated_pixel_as_shadow(self):
        bits = np.zeros((16, 16), dtype=np.uint8)
        bits[0, 0] = 1
        m = mask_ops.BinaryMask(bits)
        assert so.classify_windows_maxpool(m, 2, 1).labels[0, 0] == so.SHADOW
        assert so.classify_windows_receptive(m, 2, 1).labels[0, 0] == so.BOUNDARY

    def test_reflect_index(self):
        np.testing.assert_array_equal(so.reflect_index(3, 5), [0, 1, 2, 1, 0])
        np.testing.assert_array_equal(so.reflect_index(1, 3), [0, 0, 0])
        np.testing.assert_array_equal(so.reflect_index(2, 5), [0, 1, 0, 1, 0])


# =============================================================================
# Construction
# =============================================================================

class TestBuild:

    def test_local_hand_enumeration(self):
        order = so.build_local_order(4, 4, 2, H_)
        assert order.perm.tolist() == [0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15]

    def test_local_vertical(self):
        order = so.build_local_order(4, 4, 2, V_)
        assert order.perm.tolist() == [0, 4, 1, 5, 8, 12, 9, 13, 2, 6, 3, 7, 10, 14, 11, 15]

    def test_single_window_is_raster(self):
        assert so.build_local_order(4, 4, 4, H_).perm.tolist() == list(range(16))

    def test_cross_examples(self):
        assert so.build_cross_order(2, 3, H_).perm.tolist() == [0, 1, 2, 3, 4, 5]
        assert so.build_cross_order(2, 3, V_).perm.tolist() == [0, 3, 1, 4, 2, 5]
        assert so.build_cross_order(2, 3, HR).perm.tolist() == [5, 4, 3, 2, 1, 0]
        assert so.build_cross_order(2, 3, VR).perm.tolist() == [5, 2, 4, 1, 3, 0]

    def test_boundary_region_hand_example(self):
        order = so.build_boundary_region_order(HAND_GRID, 4, 4, 2, H_)
        assert so.window_sequence(order).tolist() == [1, 3, 2, 0]
        assert order.perm.tolist() == [2, 3, 6, 7, 10, 11, 14, 15, 8, 9, 12, 13, 0, 1, 4, 5]

    def test_boundary_region_uniform_equals_local(self):
        grid = so.classify_windows(mask_ops.BinaryMask.ones(8, 8), 4)
        for d in so.ALL_DIRECTIONS:
            br = so.build_boundary_region_order(grid, 8, 8, 4, d)
            np.testing.assert_array_equal(br.perm, so.build_local_order(8, 8, 4, d).perm)

    def test_boundary_region_grid_mismatch(self):
        with pytest.raises(ShapeError):
            so.build_boundary_region_order(HAND_GRID, 8, 8, 2, H_)

    def test_region_order(self):
        labels = np.array([[1, 0], [0, 1]])
        assert so.build_region_order(labels, 2, 2, H_).perm.tolist() == [1, 2, 0, 3]
        assert so.build_region_order(labels, 2, 2, HR).perm.tolist() == [3, 0, 2, 1]

    def test_not_a_permutation(self):
        with pytest.raises(ShapeError):
            so.ScanOrder([0, 0, 1, 2], 2, 2, "local", H_)

    def test_build_orders_errors(self):
        with pytest.raises(UsageError):
            so.build_orders("boundary_region", 4, 4, window=2)
        with pytest.raises(UsageError):
            so.build_orders("zigzag", 4, 4)
        with pytest.raises(UsageError):
            so.build_orders("region", 4, 4)

    @pytest.mark.parametrize("seed", range(500))
    def test_every_order_is_bijective_and_reverses(self, seed):
        H, W, window, m, grid = random_layout(seed)
        for strategy in SCAN_CONFIG["strategies"]:
            orders = dict(zip(so.ALL_DIRECTIONS, all_orders(strategy, H, W, window, m, grid)))
            for order in orders.values():
                assert so.validate_perm(order.perm, H * W)
                np.testing.assert_array_equal(order.perm[order.inv], np.arange(H * W))
            np.testing.assert_array_equal(orders[HR].perm, orders[H_].perm[::-1])
            np.testing.assert_array_equal(orders[VR].perm, orders[V_].perm[::-1])

    @pytest.mark.parametrize("seed", range(10))
    def test_grouping_is_stable(self, seed):
        rng = np.random.default_rng(seed)
        m = blob_mask(rng, 16, 16, 4)
        grid = so.classify_windows(m, 4)
        for d in (H_, V_):
            seq = so.window_sequence(so.build_boundary_region_order(grid, 16, 16, 4, d))
            labels = grid.labels.reshape(-1)[seq]
            assert np.all(np.diff(labels) >= 0)
            raster = so.raster(4, 4, d).tolist()
            for c in so.CATEGORIES:
                ids = seq[labels == c].tolist()
                assert ids == [w for w in raster if w in ids]


# =============================================================================
# Apply / unapply
# =============================================================================

class TestApply:

    @pytest.mark.parametrize("seed", range(500))
    def test_round_trip(self, seed):
        H, W, window, m, grid = random_layout(seed)
        x = np.random.default_rng(seed).standard_normal((2, H, W))
        for strategy in SCAN_CONFIG["strategies"]:
            for order in all_orders(strategy, H, W, window, m, grid):
                back = so.unapply(order, so.apply(order, Tensor(x)))
                np.testing.assert_array_equal(back.data, x)

    def test_identity_perm_flattens(self, rng):
        x = rng.standard_normal((3, 2, 5))
        order = so.build_cross_order(2, 5, H_)
        np.testing.assert_array_equal(so.apply(order, Tensor(x)).data, x.reshape(3, 10))

    def test_gradient_of_sum_is_ones(self, rng):
        x = parameter(rng.standard_normal((2, 4, 4)))
        order = so.build_local_order(4, 4, 2, V_)
        with ComputationTape():
            loss = tsum(so.apply(order, x))
        backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones((2, 4, 4)))

    def test_shape_mismatch(self):
        order = so.build_cross_order(2, 2, H_)
        with pytest.raises(ShapeError):
            so.apply(order, Tensor(np.zeros((1, 3, 2))))
        with pytest.raises(ShapeError):
            so.unapply(order, Tensor(np.zeros((1, 5))))


# =============================================================================
# Distances
# =============================================================================

class TestDistances:

    def test_hand_example(self):
        local = so.intra_category_distance_stats(so.build_local_order(4, 4, 2, H_), HAND_GRID)
        br = so.intra_category_distance_stats(so.build_boundary_region_order(HAND_GRID, 4, 4, 2, H_), HAND_GRID)
        assert br[0]["max"] == 4.0
        assert local[0]["max"] == 8.0
        assert br[1]["count"] == 1 and br[1]["pairs"] == 0

    def test_pair_summary_matches_brute_force(self, rng):
        pos = rng.choice(200, size=17, replace=False)
        summary = so._pair_distance_summary(pos)
        pairs = [abs(int(a) - int(b)) for i, a in enumerate(pos) for b in pos[i + 1:]]
        assert summary["pairs"] == len(pairs)
        assert summary["mean"] == pytest.approx(np.mean(pairs))
        assert summary["max"] == max(pairs)

    @pytest.mark.parametrize("seed", range(100))
    def test_boundary_region_never_worse_per_pair(self, seed):
        H, W, window, _, grid = random_layout(seed)
        labels = grid.labels.reshape(-1)
        for d in so.ALL_DIRECTIONS:
            local = window_positions(so.build_local_order(H, W, window, d))
            br = window_positions(so.build_boundary_region_order(grid, H, W, window, d))
            for c in so.CATEGORIES:
                ids = np.flatnonzero(labels == c)
                d_local = np.abs(local[ids][:, None] - local[ids][None, :])
                d_br = np.abs(br[ids][:, None] - br[ids][None, :])
                assert np.all(d_br <= d_local)

    @pytest.mark.parametrize("seed", range(50))
    def test_interleaved_categories_get_closer(self, seed):
        H, W, window, m, grid = random_layout(seed)
        seq = so.window_sequence(so.build_local_order(H, W, window, H_))
        in_order = grid.labels.reshape(-1)[seq]
        interleaved = {
            c for c in so.CATEGORIES
            if (in_order == c).sum() >= 2
            and np.ptp(np.flatnonzero(in_order == c)) + 1 > (in_order == c).sum()
        }
        result = so.distance_benchmark(m, window, H_)
        ratios = {row["category"]: row["ratio"] for row in result["rows"]}
        for c in so.CATEGORIES:
            if c in interleaved:
                assert ratios[so.CATEGORY_NAMES[c]] < 1.0
            else:
                assert ratios[so.CATEGORY_NAMES[c]] == pytest.approx(1.0)
        assert (result["pooled_ratio"] < 1.0) == bool(interleaved)

    def test_benchmark_uniform_ratio_is_one(self):
        result = so.distance_benchmark(mask_ops.BinaryMask.zeros(16, 16), 4)
        assert result["pooled_ratio"] == 1.0
        assert all(row["ratio"] == 1.0 for row in result["rows"])
        assert result["categories"] == [0]

    def test_window_sequence_needs_windows(self):
        with pytest.raises(UsageError):
            so.window_sequence(so.build_cross_order(2, 2, H_))


# =============================================================================
# Export
# =============================================================================

class TestExport:

    def test_json_round_trip(self, tmp_path):
        order = so.build_boundary_region_order(HAND_GRID, 4, 4, 2, VR)
        path = tmp_path / "order.json"
        so.save_order_json(order, path)
        back = so.load_order_json(path)
        np.testing.assert_array_equal(back.perm, order.perm)
        assert back.direction is VR and back.strategy == "boundary_region" and back.window == 2

    def test_corrupt_perm(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"height": 1, "width": 2, "perm": [0, 0]}')
        with pytest.raises(DataError):
            so.load_order_json(path)

    def test_heatmap_is_inverse(self):
        order = so.build_cross_order(2, 3, V_)
        np.testing.assert_array_equal(so.position_heatmap(order), [[0, 2, 4], [1, 3, 5]])
