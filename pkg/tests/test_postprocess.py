from __future__ import annotations

import csv

import numpy as np
import pytest

from dermseg.errors import DimensionError, ValidationError
from dermseg.metrics import confusion, metrics_from_confusion
from dermseg.postprocess import (
    GridSearchSpec,
    T_HIGH_GRID_DEFAULT,
    T_LOW_GRID_DEFAULT,
    attribute_postprocess,
    grid_search,
    largest_component,
    lesion_postprocess,
    morphological_reconstruct,
    write_gridsearch_csv,
)
from dermseg.rasters import BinaryMask, ProbabilityMap, ThresholdPair, threshold


def bm(values) -> BinaryMask:
    return BinaryMask(np.asarray(values, dtype=np.uint8))


def pmap(values) -> ProbabilityMap:
    return ProbabilityMap(np.asarray(values, dtype=np.float32))


def neighbors(y: int, x: int, connectivity: int):
    steps = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    if connectivity == 8:
        steps += [(-1, -1), (-1, 1), (1, -1), (1, 1)]
    for dy, dx in steps:
        yield y + dy, x + dx


def oracle_label(mask: np.ndarray, connectivity: int) -> np.ndarray:
    """Flood-fill labeling in raster-scan order."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    current = 0
    for sy in range(h):
        for sx in range(w):
            if mask[sy, sx] and not labels[sy, sx]:
                current += 1
                stack = [(sy, sx)]
                labels[sy, sx] = current
                while stack:
                    y, x = stack.pop()
                    for ny, nx in neighbors(y, x, connectivity):
                        if 0 <= ny < h and 0 <= nx < w and mask[ny, nx] and not labels[ny, nx]:
                            labels[ny, nx] = current
                            stack.append((ny, nx))
    return labels


def oracle_dilate(a: np.ndarray, connectivity: int) -> np.ndarray:
    h, w = a.shape
    out = a.copy()
    for y in range(h):
        for x in range(w):
            if a[y, x]:
                for ny, nx in neighbors(y, x, connectivity):
                    if 0 <= ny < h and 0 <= nx < w:
                        out[ny, nx] = True
    return out


def oracle_reconstruct(marker: np.ndarray, mask: np.ndarray, connectivity: int) -> np.ndarray:
    """Naive fixpoint: dilate the whole current set, intersect, repeat."""
    cur = (marker.astype(bool)) & (mask.astype(bool))
    while True:
        nxt = oracle_dilate(cur, connectivity) & mask.astype(bool)
        if np.array_equal(nxt, cur):
            return cur
        cur = nxt


def random_mask(rng, shape=(16, 16), density=0.4) -> np.ndarray:
    return (rng.random(shape) < density).astype(np.uint8)


class TestLargestComponent:
    def test_empty_mask(self):
        m = bm(np.zeros((4, 4)))
        assert not largest_component(m).data.any()

    def test_single_component_unchanged(self):
        m = bm([[0, 1, 1], [0, 1, 0], [0, 0, 0]])
        assert np.array_equal(largest_component(m).data, m.data)

    def test_keeps_bigger_of_two(self):
        grid = np.zeros((7, 7), dtype=np.uint8)
        grid[0:1, 0:5] = 1  # area 5
        grid[4:5, 3:6] = 1  # area 3
        out = largest_component(bm(grid), connectivity=8)
        labels = oracle_label(grid, 8)
        areas = [(labels == i).sum() for i in range(1, labels.max() + 1)]
        expected = labels == (int(np.argmax(areas)) + 1)
        assert np.array_equal(out.data.astype(bool), expected)
        assert out.data.sum() == 5

    @pytest.mark.parametrize("connectivity", [4, 8])
    def test_random_masks_against_flood_fill(self, connectivity):
        rng = np.random.default_rng(11)
        for _ in range(30):
            grid = random_mask(rng, density=0.35)
            out = largest_component(bm(grid), connectivity).data.astype(bool)
            labels = oracle_label(grid, connectivity)
            if labels.max() == 0:
                assert not out.any()
                continue
            areas = np.bincount(labels.ravel())[1:]
            # result must be one full component of maximal area
            assert out.sum() == areas.max()
            hit = np.unique(labels[out])
            assert len(hit) == 1 and hit[0] >= 1
            assert np.array_equal(out, labels == hit[0])

    def test_connectivity_distinguishes_diagonal_bridge(self):
        grid = np.array([[1, 0, 0], [0, 1, 1], [0, 1, 1]], dtype=np.uint8)
        assert largest_component(bm(grid), 8).data.sum() == 5  # all one component
        assert largest_component(bm(grid), 4).data.sum() == 4  # corner pixel drops

    def test_bad_connectivity(self):
        with pytest.raises(ValidationError):
            largest_component(bm([[1]]), connectivity=6)


class TestReconstruct:
    def test_empty_marker(self):
        mask = bm([[1, 1], [1, 1]])
        out = morphological_reconstruct(bm(np.zeros((2, 2))), mask)
        assert not out.data.any()

    def test_marker_equals_mask_is_fixpoint(self):
        rng = np.random.default_rng(0)
        m = bm(random_mask(rng))
        assert np.array_equal(morphological_reconstruct(m, m).data, m.data)

    def test_single_seed_selects_one_blob(self):
        mask = np.zeros((7, 7), dtype=np.uint8)
        mask[1:3, 1:4] = 1  # blob A
        mask[5:7, 4:7] = 1  # blob B
        marker = np.zeros((7, 7), dtype=np.uint8)
        marker[1, 2] = 1  # inside A
        out = morphological_reconstruct(bm(marker), bm(mask), 8)
        expected = np.zeros((7, 7), dtype=bool)
        expected[1:3, 1:4] = True
        assert np.array_equal(out.data.astype(bool), expected)
        assert np.array_equal(out.data.astype(bool), oracle_reconstruct(marker, mask, 8))

    @pytest.mark.parametrize("connectivity", [4, 8])
    def test_matches_fixpoint_oracle_on_random_pairs(self, connectivity):
        rng = np.random.default_rng(21)
        for _ in range(100):
            marker = random_mask(rng, density=0.1)
            mask = random_mask(rng, density=0.5)
            got = morphological_reconstruct(bm(marker), bm(mask), connectivity).data.astype(bool)
            assert np.array_equal(got, oracle_reconstruct(marker, mask, connectivity))

    def test_marker_outside_mask_is_clipped(self):
        marker = bm([[1, 0], [0, 0]])
        mask = bm([[0, 0], [0, 1]])
        assert not morphological_reconstruct(marker, mask).data.any()

    def test_idempotent(self):
        rng = np.random.default_rng(5)
        marker, mask = bm(random_mask(rng, density=0.15)), bm(random_mask(rng, density=0.5))
        once = morphological_reconstruct(marker, mask)
        again = morphological_reconstruct(once, mask)
        assert np.array_equal(once.data, again.data)

    def test_output_bounds(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            marker, mask = random_mask(rng, density=0.2), random_mask(rng, density=0.5)
            out = morphological_reconstruct(bm(marker), bm(mask)).data
            assert np.all(out <= mask)  # subset of mask
            assert np.all((marker & mask) <= out)  # contains the seeded area

    def test_monotone_in_marker_and_mask(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            marker_small = random_mask(rng, density=0.1)
            marker_big = (marker_small | random_mask(rng, density=0.1)).astype(np.uint8)
            mask_small = random_mask(rng, density=0.4)
            mask_big = (mask_small | random_mask(rng, density=0.2)).astype(np.uint8)
            rec = lambda a, b: morphological_reconstruct(bm(a), bm(b)).data
            assert np.all(rec(marker_small, mask_small) <= rec(marker_big, mask_small))
            assert np.all(rec(marker_small, mask_small) <= rec(marker_small, mask_big))

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            morphological_reconstruct(bm([[1]]), bm([[1, 0]]))


def two_peak_map(h=12, w=16) -> tuple[ProbabilityMap, np.ndarray, np.ndarray]:
    """Peak A exceeds 0.95, peak B only 0.9; both well above typical T_L."""
    grid = np.full((h, w), 0.2, dtype=np.float32)
    a = np.zeros((h, w), dtype=bool)
    b = np.zeros((h, w), dtype=bool)
    a[2:5, 2:6] = True
    b[7:10, 9:14] = True
    grid[a] = 0.97
    grid[b] = 0.9
    return pmap(grid), a, b


class TestLesionPostprocess:
    def test_single_blob_above_t_high(self):
        grid = np.full((8, 8), 0.1, dtype=np.float32)
        grid[2:6, 2:6] = 0.95
        out = lesion_postprocess(pmap(grid), ThresholdPair(0.9, 0.5))
        assert np.array_equal(out.data.astype(bool), grid >= 0.5)

    def test_nothing_above_t_high(self):
        grid = np.full((6, 6), 0.6, dtype=np.float32)
        out = lesion_postprocess(pmap(grid), ThresholdPair(0.9, 0.5))
        assert not out.data.any()

    def test_two_peaks_keeps_marker_component_only(self):
        prob, peak_a, peak_b = two_peak_map()
        out = lesion_postprocess(prob, ThresholdPair(0.95, 0.5))
        # oracle composition: threshold -> largest component -> reconstruct
        marker = largest_component(threshold(prob, 0.95), 8).data
        expected = oracle_reconstruct(marker, (prob.data >= 0.5), 8)
        assert np.array_equal(out.data.astype(bool), expected)
        assert np.array_equal(out.data.astype(bool), peak_a)
        assert not out.data[peak_b].any()

    def test_raising_t_low_shrinks_output(self):
        rng = np.random.default_rng(9)
        smooth = rng.random((16, 16)).astype(np.float32)
        prob = pmap(smooth)
        prev = None
        for tl in (0.3, 0.45, 0.6, 0.75):
            out = lesion_postprocess(prob, ThresholdPair(0.8, tl)).data
            if prev is not None:
                assert np.all(out <= prev)
            prev = out

    def test_raising_t_high_never_grows_single_blob_output(self):
        # with one blob the marker shrinks to a subset as T_H rises, so the
        # reconstructed area is non-increasing
        grid = np.full((14, 14), 0.2, dtype=np.float32)
        ys, xs = np.mgrid[0:14, 0:14]
        r = np.hypot(ys - 7, xs - 7)
        grid = np.maximum(grid, np.clip(1.0 - r / 9.0, 0, 1)).astype(np.float32)
        prob = pmap(grid)
        prev_count = None
        for th in (0.7, 0.8, 0.9, 0.95):
            count = int(lesion_postprocess(prob, ThresholdPair(th, 0.5)).data.sum())
            if prev_count is not None:
                assert count <= prev_count
            prev_count = count


class TestAttributePostprocess:
    def test_empty_lesion_annihilates(self):
        grid = np.full((6, 6), 0.9, dtype=np.float32)
        out = attribute_postprocess(pmap(grid), bm(np.zeros((6, 6))), ThresholdPair(0.8, 0.4))
        assert not out.data.any()

    def test_all_ones_lesion_keeps_every_marker_object(self):
        prob, peak_a, peak_b = two_peak_map()
        ones = bm(np.ones(prob.data.shape))
        out = attribute_postprocess(prob, ones, ThresholdPair(0.85, 0.5))
        # both blobs exceed 0.85; unlike the lesion path, both are retained
        assert out.data[peak_a].all()
        assert out.data[peak_b].all()
        lesion_out = lesion_postprocess(prob, ThresholdPair(0.85, 0.5))
        assert lesion_out.data.sum() < out.data.sum()

    def test_matches_reconstruct_without_largest_component(self):
        prob, _, _ = two_peak_map()
        ones = bm(np.ones(prob.data.shape))
        out = attribute_postprocess(prob, ones, ThresholdPair(0.85, 0.5))
        expected = oracle_reconstruct((prob.data >= 0.85), (prob.data >= 0.5), 8)
        assert np.array_equal(out.data.astype(bool), expected)

    def test_restriction_multiplies_first(self):
        prob, peak_a, peak_b = two_peak_map()
        lesion = bm(peak_a.astype(np.uint8))
        out = attribute_postprocess(prob, lesion, ThresholdPair(0.85, 0.5))
        assert out.data[peak_a].all()
        assert not out.data[peak_b].any()

    def test_none_lesion_skips_restriction(self):
        prob, peak_a, peak_b = two_peak_map()
        out = attribute_postprocess(prob, None, ThresholdPair(0.85, 0.5))
        assert out.data[peak_a].all() and out.data[peak_b].all()

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            attribute_postprocess(pmap([[0.5]]), bm([[1, 0]]), ThresholdPair(0.8, 0.4))


def planted_fixture(n=3):
    """Maps valued 0.9 inside the ground-truth blob and 0.4 outside."""
    probs, gts = [], []
    for i in range(n):
        gt = np.zeros((12, 16), dtype=np.uint8)
        gt[2 + i : 7 + i, 3:10] = 1
        grid = np.where(gt, 0.9, 0.4).astype(np.float32)
        probs.append(pmap(grid))
        gts.append(bm(gt))
    return probs, gts


def oracle_grid_search(probs, gts, t_highs, t_lows, cutoff=0.65):
    """Second implementation: explicit loops, per-pair objective, explicit tie-break."""
    best = None
    for th in t_highs:
        for tl in t_lows:
            if th < tl:
                continue
            scores = []
            for prob, gt in zip(probs, gts):
                pred = lesion_postprocess(prob, ThresholdPair(th, tl))
                r = metrics_from_confusion(confusion(pred, gt), cutoff)
                scores.append(r.thresholded_jaccard)
            value = sum(scores) / len(scores)
            if best is None or (value, th, tl) > best:
                best = (value, th, tl)
    return best


class TestGridSearch:
    def test_single_candidate_pair(self):
        probs, gts = planted_fixture(1)
        spec = GridSearchSpec(t_high_candidates=(0.8,), t_low_candidates=(0.5,))
        result = grid_search(probs, gts, spec)
        assert result.best == ThresholdPair(0.8, 0.5)

    def test_planted_fixture_matches_exhaustive_oracle(self):
        probs, gts = planted_fixture()
        spec = GridSearchSpec(t_high_candidates=(0.8,), t_low_candidates=T_LOW_GRID_DEFAULT)
        result = grid_search(probs, gts, spec)
        value, th, tl = oracle_grid_search(probs, gts, (0.8,), T_LOW_GRID_DEFAULT)
        assert (result.best.t_high, result.best.t_low) == (th, tl)
        assert result.objective_value == pytest.approx(value)
        # any T_L in (0.4, 0.8] scores 1.0; the skip rule removes (0.8, 0.85),
        # so the tie-break lands on T_L = 0.8
        assert result.best == ThresholdPair(0.8, 0.8)
        assert result.objective_value == pytest.approx(1.0)
        assert result.skipped == ((0.8, 0.85),)

    def test_default_grids_enumerate_7_by_12_minus_skip(self):
        assert len(T_HIGH_GRID_DEFAULT) == 7
        assert len(T_LOW_GRID_DEFAULT) == 12
        assert T_LOW_GRID_DEFAULT == (0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85)
        probs, gts = planted_fixture(1)
        result = grid_search(probs, gts, GridSearchSpec())
        assert len(result.evaluated) == 7 * 12 - 1
        assert result.skipped == ((0.8, 0.85),)

    def test_full_default_grid_against_oracle(self):
        rng = np.random.default_rng(17)
        probs, gts = [], []
        for _ in range(2):
            gt = np.zeros((10, 10), dtype=np.uint8)
            gt[2:7, 2:7] = 1
            noise = rng.uniform(-0.15, 0.15, (10, 10))
            grid = np.clip(np.where(gt, 0.85, 0.35) + noise, 0, 1).astype(np.float32)
            probs.append(pmap(grid))
            gts.append(bm(gt))
        result = grid_search(probs, gts, GridSearchSpec())
        value, th, tl = oracle_grid_search(probs, gts, T_HIGH_GRID_DEFAULT, T_LOW_GRID_DEFAULT)
        assert (result.best.t_high, result.best.t_low) == (th, tl)
        assert result.objective_value == pytest.approx(value)

    def test_pooled_objective_for_attributes(self):
        probs, gts = planted_fixture(2)
        spec = GridSearchSpec(
            t_high_candidates=(0.8,), t_low_candidates=(0.5,), objective="pooled_jaccard"
        )
        result = grid_search(probs, gts, spec, postproc="attribute")
        assert result.objective_value == pytest.approx(1.0)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValidationError):
            grid_search([], [], GridSearchSpec())

    def test_all_pairs_invalid_rejected(self):
        probs, gts = planted_fixture(1)
        spec = GridSearchSpec(t_high_candidates=(0.3,), t_low_candidates=(0.8,))
        with pytest.raises(ValidationError):
            grid_search(probs, gts, spec)

    def test_grid_candidates_validated(self):
        with pytest.raises(ValidationError):
            GridSearchSpec(t_high_candidates=(1.0,))

    def test_csv_report(self, tmp_path):
        probs, gts = planted_fixture(1)
        spec = GridSearchSpec(t_high_candidates=(0.8, 0.9), t_low_candidates=(0.4, 0.5))
        result = grid_search(probs, gts, spec)
        write_gridsearch_csv(result, tmp_path / "gridsearch.csv")
        with (tmp_path / "gridsearch.csv").open() as f:
            lines = list(csv.reader(f))
        assert lines[0] == ["t_high", "t_low", "mean_thresholded_jaccard", "selected"]
        assert len(lines) == 1 + len(result.evaluated)
        assert sum(int(ln[3]) for ln in lines[1:]) == 1
