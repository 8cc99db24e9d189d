from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from dermseg.errors import ValidationError
from dermseg.preprocess import (
    NormalizationConstants,
    denormalize,
    normalize,
    resize,
    task_resize_target,
)
from dermseg.rasters import BinaryMask, Image, ProbabilityMap

from conftest import make_image


def oracle_bilinear(arr: np.ndarray, h: int, w: int) -> np.ndarray:
    """Reference bilinear resample: scalar loop, half-pixel centers, edge clamp."""
    src_h, src_w = arr.shape
    out = np.empty((h, w), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            sy = min(max((i + 0.5) * src_h / h - 0.5, 0.0), src_h - 1)
            sx = min(max((j + 0.5) * src_w / w - 0.5, 0.0), src_w - 1)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, src_h - 1), min(x0 + 1, src_w - 1)
            fy, fx = sy - y0, sx - x0
            top = arr[y0, x0] * (1 - fx) + arr[y0, x1] * fx
            bot = arr[y1, x0] * (1 - fx) + arr[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


class TestResize:
    def test_identity_dims_is_exact(self):
        img = make_image(6, 7, seed=1)
        assert np.array_equal(resize(img, 6, 7).data, img.data)
        m = ProbabilityMap(np.random.default_rng(0).random((6, 7)).astype(np.float32))
        assert np.array_equal(resize(m, 6, 7).data, m.data)

    def test_constant_stays_constant(self):
        m = ProbabilityMap(np.full((4, 4), 0.37, dtype=np.float32))
        out = resize(m, 9, 13)
        assert np.all(out.data == np.float32(0.37))

    def test_hand_bilinear_row(self):
        # 2x2 map [[0,1],[0,1]] widened to 2x4; half-pixel centers sample the
        # row at x = -0.25, 0.25, 0.75, 1.25 -> clamped lerp [0, 0.25, 0.75, 1]
        m = ProbabilityMap(np.array([[0, 1], [0, 1]], dtype=np.float32))
        out = resize(m, 2, 4)
        expected = oracle_bilinear(m.data.astype(np.float64), 2, 4)
        np.testing.assert_allclose(out.data, expected, atol=1e-7)
        np.testing.assert_allclose(out.data[0], [0.0, 0.25, 0.75, 1.0], atol=1e-7)

    def test_matches_oracle_on_random_maps(self):
        rng = np.random.default_rng(5)
        for src, dst in [((5, 9), (8, 4)), ((3, 3), (11, 6)), ((12, 7), (5, 5))]:
            arr = rng.random(src)
            got = resize(ProbabilityMap(arr.astype(np.float32)), *dst)
            np.testing.assert_allclose(
                got.data, oracle_bilinear(arr.astype(np.float32), *dst), atol=1e-6
            )

    def test_masks_resize_nearest_and_stay_binary(self):
        m = BinaryMask((np.arange(36).reshape(6, 6) % 2).astype(np.uint8))
        out = resize(m, 13, 5)
        assert set(np.unique(out.data)) <= {0, 1}

    def test_bilinear_on_mask_rejected(self):
        m = BinaryMask(np.zeros((4, 4), dtype=np.uint8))
        with pytest.raises(ValidationError):
            resize(m, 8, 8, mode="bilinear")

    def test_bad_mode_rejected(self):
        with pytest.raises(ValidationError):
            resize(make_image(4, 4), 8, 8, mode="cubic")

    @given(
        data=hnp.arrays(np.float32, (6, 5), elements=st.floats(0, 1, width=32)),
        h=st.integers(1, 12),
        w=st.integers(1, 12),
    )
    def test_bounds_preserved(self, data, h, w):
        out = resize(ProbabilityMap(data), h, w)
        assert float(out.data.min()) >= 0.0
        assert float(out.data.max()) <= 1.0


class TestNormalize:
    def test_unit_endpoint(self):
        out = normalize(make_image(2, 2, value=255), "unit")
        assert np.all(out.data == 1.0)

    def test_symmetric_unit_endpoint(self):
        out = normalize(make_image(2, 2, value=0), "symmetric_unit")
        assert np.all(out.data == -1.0)

    def test_channel_mean_subtract_zeroes_the_mean(self):
        img = Image(np.full((2, 2, 3), (124, 117, 104), dtype=np.uint8))
        out = normalize(img, "channel_mean_subtract")
        # red 124 sits 0.32 above the configured 123.68 mean
        assert out.data[0, 0, 0] == pytest.approx(0.32, abs=1e-5)
        assert np.all(np.abs(out.data) < 0.5)

    def test_mean_std_formula(self):
        img = Image(np.full((1, 1, 3), (255, 0, 128), dtype=np.uint8))
        out = normalize(img, "mean_std")
        c = NormalizationConstants()
        assert out.data[0, 0, 0] == pytest.approx((1.0 - c.unit_mean[0]) / c.unit_std[0], rel=1e-6)
        assert out.data[0, 0, 1] == pytest.approx((0.0 - c.unit_mean[1]) / c.unit_std[1], rel=1e-6)

    def test_unknown_scheme_rejected(self):
        with pytest.raises(ValidationError):
            normalize(make_image(2, 2), "zscore")

    @pytest.mark.parametrize("scheme", ["channel_mean_subtract", "mean_std", "symmetric_unit", "unit"])
    def test_round_trip_within_1e5(self, scheme):
        img = make_image(16, 16, seed=7)
        back = denormalize(normalize(img, scheme))
        assert np.abs(back - img.data.astype(np.float64)).max() < 1e-5

    def test_constants_are_overridable(self):
        c = NormalizationConstants(channel_mean=(100.0, 100.0, 100.0))
        out = normalize(make_image(1, 1, value=100), "channel_mean_subtract", c)
        assert np.all(out.data == 0.0)


class TestTaskTargets:
    def test_lesion_target(self):
        assert task_resize_target("lesion") == (192, 256)

    def test_attribute_target(self):
        assert task_resize_target("attribute") == (384, 576)

    def test_unknown_task_rejected(self):
        with pytest.raises(ValidationError):
            task_resize_target("classification")
