"""Sparsity synthesis: sampling, FAST corners, masks, outliers, composition."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from depthbench import (DepthMap, GrayImage, SparsitySpec, detect_fast,
                        inject_outliers, mask_distance, mask_polygon,
                        sample_features, sample_uniform, synthesize)
from depthbench.sparsity import nearest_rank_percentile


def grid_depth(h=10, w=10, base=1.0):
    return DepthMap(np.arange(1, h * w + 1, dtype=np.float64).reshape(h, w) * base)


class TestSampleUniform:
    def test_determinism(self):
        gt = grid_depth()
        a = sample_uniform(gt, 5, seed=77)
        b = sample_uniform(gt, 5, seed=77)
        assert np.array_equal(a.values, b.values)
        assert a.valid_count() == 5

    def test_subset_of_gt_with_equal_values(self):
        gt = grid_depth()
        s = sample_uniform(gt, 20, seed=3)
        kept = s.values > 0
        assert np.array_equal(s.values[kept], gt.values[kept])
        assert s.valid_count() == 20

    def test_respects_existing_holes(self):
        vals = np.arange(25, dtype=np.float64).reshape(5, 5)  # one zero pixel
        gt = DepthMap(vals)
        s = sample_uniform(gt, 24, seed=0)
        assert s.values[0, 0] == 0.0
        assert s.valid_count() == 24

    def test_too_many_points_rejected(self):
        with pytest.raises(ValueError, match="valid"):
            sample_uniform(grid_depth(4, 4), 17, seed=0)

    def test_zero_points(self):
        assert sample_uniform(grid_depth(), 0, seed=0).valid_count() == 0

    def test_single_point_frequencies_are_uniform(self):
        gt = DepthMap(np.array([[1.0, 2.0], [3.0, 4.0]]))
        counts = np.zeros(4)
        for seed in range(10_000):
            s = sample_uniform(gt, 1, seed=seed)
            counts[np.flatnonzero(s.values.ravel())[0]] += 1
        freqs = counts / 10_000
        assert np.all(freqs >= 0.23) and np.all(freqs <= 0.27), freqs


def random_gray(seed, h=64, w=64):
    rng = np.random.default_rng(seed)
    return GrayImage(rng.integers(0, 256, size=(h, w), dtype=np.uint8))


class TestDetectFast:
    def test_matches_brute_force_oracle_on_random_images(self):
        for seed in range(5):
            img = random_gray(seed)
            expected = oracles.brute_fast(img.pixels, 20.0)
            got = {(kp.u, kp.v): kp.score for kp in detect_fast(img, 20.0, nms=False)}
            assert got == expected, f"pre-NMS mismatch for seed {seed}"
            expected_nms = oracles.brute_nms(expected, img.width)
            got_nms = {(kp.u, kp.v): kp.score
                       for kp in detect_fast(img, 20.0, nms=True)}
            assert got_nms == expected_nms, f"post-NMS mismatch for seed {seed}"

    def test_flat_image_has_no_corners(self):
        img = GrayImage(np.full((32, 32), 128, dtype=np.uint8))
        assert detect_fast(img) == []

    def test_synthetic_corner_with_known_score(self):
        px = np.full((7, 7), 50, dtype=np.uint8)
        from depthbench.sparsity import FAST_CIRCLE
        for du, dv in FAST_CIRCLE[:9]:  # exactly 9 contiguous bright pixels
            px[3 + dv, 3 + du] = 200
        kps = detect_fast(GrayImage(px), 20.0)
        assert len(kps) == 1
        kp = kps[0]
        assert (kp.u, kp.v) == (3, 3)
        assert kp.score == pytest.approx(9 * (150 - 20))

    def test_eight_pixel_arc_is_not_a_corner(self):
        px = np.full((7, 7), 50, dtype=np.uint8)
        from depthbench.sparsity import FAST_CIRCLE
        for du, dv in FAST_CIRCLE[:8]:
            px[3 + dv, 3 + du] = 200
        assert detect_fast(GrayImage(px), 20.0, nms=False) == []

    def test_dark_arc_detected(self):
        px = np.full((7, 7), 200, dtype=np.uint8)
        from depthbench.sparsity import FAST_CIRCLE
        for du, dv in FAST_CIRCLE[4:14]:  # 10 contiguous dark pixels
            px[3 + dv, 3 + du] = 10
        kps = detect_fast(GrayImage(px), 20.0, nms=False)
        assert [(kp.u, kp.v) for kp in kps] == [(3, 3)]
        assert kps[0].score == pytest.approx(10 * (190 - 20))

    def test_nms_tie_keeps_smaller_row_major_index(self):
        px = np.full((16, 16), 255, dtype=np.uint8)
        px[5, 10] = 0
        px[5, 11] = 0
        pre = detect_fast(GrayImage(px), 20.0, nms=False)
        assert {(kp.u, kp.v) for kp in pre} == {(10, 5), (11, 5)}
        assert pre[0].score == pre[1].score
        post = detect_fast(GrayImage(px), 20.0, nms=True)
        assert [(kp.u, kp.v) for kp in post] == [(10, 5)]

    def test_keypoints_keep_border_margin_and_row_major_order(self):
        img = random_gray(9, 40, 52)
        kps = detect_fast(img, 10.0, nms=False)
        assert kps, "expected some corners in a noisy image"
        for kp in kps:
            assert 3 <= kp.u < img.width - 3
            assert 3 <= kp.v < img.height - 3
        flat = [kp.v * img.width + kp.u for kp in kps]
        assert flat == sorted(flat)

    def test_higher_threshold_never_adds_corners(self):
        img = random_gray(4)
        low = {(kp.u, kp.v) for kp in detect_fast(img, 10.0, nms=False)}
        high = {(kp.u, kp.v) for kp in detect_fast(img, 40.0, nms=False)}
        assert high <= low

    def test_too_small_image(self):
        with pytest.raises(ValueError, match="too small"):
            detect_fast(GrayImage(np.zeros((6, 9), dtype=np.uint8)))


class TestSampleFeatures:
    def test_corners_without_depth_are_dropped(self):
        px = np.full((16, 16), 255, dtype=np.uint8)
        px[5, 10] = 0
        vals = np.full((16, 16), 2.0)
        vals[5, 10] = 0.0  # the corner pixel has no ground truth
        out = sample_features(DepthMap(vals), GrayImage(px), 20.0)
        assert out.valid_count() == 0

    def test_max_points_keeps_highest_scores(self):
        rng = np.random.default_rng(11)
        img = GrayImage(rng.integers(0, 256, size=(64, 64), dtype=np.uint8))
        gt = DepthMap(np.full((64, 64), 3.0))
        all_kps = detect_fast(img, 15.0, nms=True)
        assert len(all_kps) >= 6
        cap = len(all_kps) // 2
        out = sample_features(gt, img, 15.0, max_points=cap)
        assert out.valid_count() == cap
        kept = {(u, v) for v, u in zip(*np.nonzero(out.values))}
        ranked = sorted(all_kps, key=lambda kp: (-kp.score, kp.v * 64 + kp.u))[:cap]
        assert kept == {(kp.u, kp.v) for kp in ranked}

    def test_values_copied_from_gt(self):
        rng = np.random.default_rng(2)
        img = GrayImage(rng.integers(0, 256, size=(32, 32), dtype=np.uint8))
        gt = DepthMap(rng.uniform(1, 5, size=(32, 32)))
        out = sample_features(gt, img, 20.0)
        kept = out.values > 0
        assert np.array_equal(out.values[kept], gt.values[kept])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="match"):
            sample_features(DepthMap(np.ones((8, 8))),
                            GrayImage(np.zeros((9, 9), dtype=np.uint8)))


class TestMaskPolygon:
    def test_axis_aligned_square_boundary_inclusive(self):
        gt = DepthMap(np.ones((30, 30)))
        square = np.array([[10.0, 10.0], [20.0, 10.0], [20.0, 20.0], [10.0, 20.0]])
        out = mask_polygon(gt, square, "remove_inside")
        uu, vv = np.meshgrid(np.arange(30), np.arange(30))
        inside = (uu >= 10) & (uu <= 20) & (vv >= 10) & (vv <= 20)
        assert np.array_equal(out.values == 0.0, inside)

    def test_keep_inside_is_the_complement(self):
        gt = DepthMap(np.arange(1, 901, dtype=np.float64).reshape(30, 30))
        poly = np.array([[3.0, 4.0], [25.0, 7.0], [18.0, 27.0], [5.0, 22.0]])
        removed = mask_polygon(gt, poly, "remove_inside")
        kept = mask_polygon(gt, poly, "keep_inside")
        assert np.array_equal((removed.values > 0) ^ (kept.values > 0),
                              gt.values > 0)

    def test_degenerate_triangle_zeros_only_the_segment(self):
        gt = DepthMap(np.ones((12, 12)))
        tri = np.array([[5.0, 5.0], [10.0, 5.0], [7.0, 5.0]])
        out = mask_polygon(gt, tri, "remove_inside")
        expected = np.ones((12, 12))
        expected[5, 5:11] = 0.0
        assert np.array_equal(out.values, expected)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_point_in_polygon_oracle(self, seed):
        rng = np.random.default_rng(seed)
        k = int(rng.integers(3, 8))
        pts = np.column_stack([rng.uniform(0, 19, k), rng.uniform(0, 14, k)])
        centroid = pts.mean(axis=0)
        order = np.argsort(np.arctan2(pts[:, 1] - centroid[1], pts[:, 0] - centroid[0]))
        poly = pts[order]
        gt = DepthMap(np.ones((15, 20)))
        out = mask_polygon(gt, poly, "remove_inside")
        for v in range(15):
            for u in range(20):
                expect_zero = oracles.point_in_polygon(float(u), float(v), poly)
                assert (out.values[v, u] == 0.0) == expect_zero, (u, v)

    def test_validation(self):
        gt = DepthMap(np.ones((5, 5)))
        with pytest.raises(ValueError, match="mode"):
            mask_polygon(gt, np.zeros((3, 2)), "explode")
        with pytest.raises(ValueError, match="shape"):
            mask_polygon(gt, np.zeros((2, 2)), "remove_inside")
        with pytest.raises(ValueError, match="finite"):
            mask_polygon(gt, np.array([[0, 0], [1, np.nan], [1, 1]]), "remove_inside")


class TestMaskDistance:
    def test_nearest_rank_median_example(self):
        gt = DepthMap(np.array([[1.0, 2.0], [3.0, 4.0]]))
        out = mask_distance(gt, 50.0, "percentile")
        assert out.values.tolist() == [[1.0, 2.0], [0.0, 0.0]]

    def test_percentile_100_is_identity(self):
        gt = DepthMap(np.array([[1.0, 2.0], [3.0, 4.0]]))
        out = mask_distance(gt, 100.0, "percentile")
        assert np.array_equal(out.values, gt.values)

    def test_absolute_mode(self):
        gt = DepthMap(np.array([[0.5, 2.5, 2.0]]))
        out = mask_distance(gt, 2.0, "absolute")
        assert out.values.tolist() == [[0.5, 0.0, 2.0]]

    def test_invalid_pixels_ignored_by_percentile(self):
        gt = DepthMap(np.array([[0.0, 1.0, 10.0, 0.0]]))
        out = mask_distance(gt, 50.0, "percentile")
        assert out.values.tolist() == [[0.0, 1.0, 0.0, 0.0]]

    def test_errors(self):
        with pytest.raises(ValueError, match="no valid"):
            mask_distance(DepthMap(np.zeros((3, 3))), 50.0, "percentile")
        with pytest.raises(ValueError, match="cutoff"):
            mask_distance(DepthMap(np.ones((2, 2))), 0.0, "percentile")
        with pytest.raises(ValueError, match="mode"):
            mask_distance(DepthMap(np.ones((2, 2))), 1.0, "sideways")

    @given(st.lists(st.floats(0.01, 100, allow_nan=False), min_size=1, max_size=40),
           st.floats(0.1, 100))
    def test_nearest_rank_matches_oracle(self, values, pct):
        got = nearest_rank_percentile(np.array(values), pct)
        assert got == oracles.nearest_rank_percentile(values, pct)


class TestInjectOutliers:
    def test_exact_count_and_factor_range(self):
        gt = grid_depth(50, 50)  # 2500 valid
        out = inject_outliers(gt, 0.1, (0.1, 2.0), seed=5)
        changed = out.values != gt.values
        assert changed.sum() == 250
        ratios = out.values[changed] / gt.values[changed]
        assert np.all((ratios >= 0.1) & (ratios <= 2.0))
        assert out.valid_count() == gt.valid_count()

    def test_count_rounds_half_away_from_zero(self):
        gt = DepthMap(np.arange(1.0, 6.0).reshape(1, 5))  # 5 valid
        out = inject_outliers(gt, 0.1, (0.5, 0.5), seed=1)  # round(0.5) -> 1
        assert (out.values != gt.values).sum() == 1
        out = inject_outliers(gt, 0.3, (0.5, 0.5), seed=1)  # round(1.5) -> 2
        assert (out.values != gt.values).sum() == 2

    def test_zero_ratio_is_identity(self):
        gt = grid_depth(5, 5)
        out = inject_outliers(gt, 0.0, seed=9)
        assert np.array_equal(out.values, gt.values)

    def test_determinism(self):
        gt = grid_depth(20, 20)
        a = inject_outliers(gt, 0.2, (0.1, 2.0), seed=42)
        b = inject_outliers(gt, 0.2, (0.1, 2.0), seed=42)
        assert np.array_equal(a.values, b.values)

    def test_validation(self):
        gt = grid_depth(5, 5)
        with pytest.raises(ValueError, match="ratio"):
            inject_outliers(gt, 1.0, seed=0)
        with pytest.raises(ValueError, match="factor"):
            inject_outliers(gt, 0.1, (0.0, 2.0), seed=0)
        with pytest.raises(ValueError, match="factor"):
            inject_outliers(gt, 0.1, (2.0, 1.0), seed=0)


class TestSparsitySpecValidation:
    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            SparsitySpec("bogus")

    def test_composite_needs_children(self):
        with pytest.raises(ValueError, match="child"):
            SparsitySpec("composite")

    def test_composite_children_must_be_leaves(self):
        inner = SparsitySpec("composite", children=(SparsitySpec("uniform"),))
        with pytest.raises(ValueError, match="leaf"):
            SparsitySpec("composite", children=(inner,))

    def test_leaf_takes_no_children(self):
        with pytest.raises(ValueError, match="children"):
            SparsitySpec("uniform", children=(SparsitySpec("uniform"),))

    def test_range_orientation(self):
        with pytest.raises(ValueError):
            SparsitySpec("uniform", point_count_range=(10, 5))
        with pytest.raises(ValueError):
            SparsitySpec("hole_distance", distance_percentile_range=(0.0, 50.0))
        with pytest.raises(ValueError):
            SparsitySpec("hole_polygon", polygon_vertex_range=(2, 5))
        with pytest.raises(ValueError):
            SparsitySpec("hole_polygon", polygon_area_fraction_range=(0.5, 1.5))
        with pytest.raises(ValueError):
            SparsitySpec("uniform", outlier_ratio=-0.1)

    def test_defaults_fill_in(self):
        spec = SparsitySpec("uniform")
        assert spec.point_count_range == (2500, 2500)
        assert spec.outlier_factor_range == (0.1, 2.0)


class TestSynthesize:
    def test_determinism_and_seed_sensitivity(self):
        gt = grid_depth(20, 20)
        spec = SparsitySpec("uniform", point_count_range=(50, 150))
        a = synthesize(gt, spec, seed=123)
        b = synthesize(gt, spec, seed=123)
        c = synthesize(gt, spec, seed=124)
        assert np.array_equal(a.values, b.values)
        assert not np.array_equal(a.values, c.values)

    def test_uniform_fixed_count(self):
        out = synthesize(grid_depth(20, 20), SparsitySpec("uniform", (50, 50)), seed=1)
        assert out.valid_count() == 50

    def test_composite_points_then_mask(self):
        gt = grid_depth(30, 30)
        spec = SparsitySpec("composite", children=(
            SparsitySpec("uniform", (100, 100)),
            SparsitySpec("hole_distance", distance_percentile_range=(50.0, 50.0)),
        ))
        out = synthesize(gt, spec, seed=7)
        assert 0 < out.valid_count() <= 100
        kept = out.values > 0
        assert np.array_equal(out.values[kept], gt.values[kept])

    def test_composite_union_of_point_children(self):
        gt = grid_depth(20, 20)
        spec = SparsitySpec("composite", children=(
            SparsitySpec("uniform", (30, 30)),
            SparsitySpec("uniform", (30, 30)),
        ))
        out = synthesize(gt, spec, seed=5)
        assert 30 <= out.valid_count() <= 60

    def test_mask_only_spec_starts_from_dense_gt(self):
        gt = grid_depth(10, 10)
        spec = SparsitySpec("hole_distance", distance_percentile_range=(50.0, 50.0))
        out = synthesize(gt, spec, seed=3)
        expected = mask_distance(gt, 50.0, "percentile")
        assert np.array_equal(out.values, expected.values)

    def test_polygon_hole_removes_region(self):
        gt = grid_depth(40, 40)
        spec = SparsitySpec("hole_polygon",
                            polygon_vertex_range=(4, 6),
                            polygon_area_fraction_range=(0.1, 0.3))
        out = synthesize(gt, spec, seed=11)
        assert 0 < out.valid_count() < gt.valid_count()

    def test_keep_polygon_keeps_region(self):
        gt = grid_depth(40, 40)
        spec = SparsitySpec("keep_polygon",
                            polygon_vertex_range=(4, 6),
                            polygon_area_fraction_range=(0.1, 0.3))
        out = synthesize(gt, spec, seed=11)
        assert 0 < out.valid_count() < gt.valid_count()

    def test_features_requires_image(self):
        with pytest.raises(ValueError, match="intensity image"):
            synthesize(grid_depth(), SparsitySpec("features", (10, 10)), seed=0)

    def test_outliers_applied_after_composition(self):
        gt = grid_depth(30, 30)
        clean_spec = SparsitySpec("uniform", (200, 200))
        dirty_spec = SparsitySpec("uniform", (200, 200), outlier_ratio=0.1)
        clean = synthesize(gt, clean_spec, seed=21)
        dirty = synthesize(gt, dirty_spec, seed=21)
        assert np.array_equal(clean.values > 0, dirty.values > 0)
        changed = clean.values != dirty.values
        assert changed.sum() == 20  # round(0.1 * 200)
        ratios = dirty.values[changed] / clean.values[changed]
        assert np.all((ratios >= 0.1) & (ratios <= 2.0))

    def test_features_spec_end_to_end(self):
        rng = np.random.default_rng(8)
        img = GrayImage(rng.integers(0, 256, size=(48, 48), dtype=np.uint8))
        gt = DepthMap(rng.uniform(1, 5, size=(48, 48)))
        spec = SparsitySpec("features", point_count_range=(5, 5),
                            fast_threshold_range=(10.0, 10.0))
        out = synthesize(gt, spec, seed=2, img=img)
        assert out.valid_count() == 5
        kept = out.values > 0
        assert np.array_equal(out.values[kept], gt.values[kept])
