import numpy as np
import pytest

from foamqc.data import ExampleGroup, RawLabel, ViewKind
from foamqc.preprocess import (
    Circle,
    CircleSearchError,
    CircleSearchParams,
    GrayImage,
    PreprocessError,
    bound_circle,
    center_profile,
    find_circle,
    mask_outside,
    preprocess_group,
    preprocess_groups,
    quantize,
    quantize_level,
    resize,
    to_grayscale,
)
from oracles import brute_force_circle, luma_reference, quantize_reference


def disc_image(size=64, cy=None, cx=None, r=None, disc=20, bg=220):
    cy = size // 2 if cy is None else cy
    cx = size // 2 if cx is None else cx
    r = int(0.38 * size) if r is None else r
    img = np.full((size, size), bg, dtype=np.uint8)
    ys, xs = np.mgrid[0:size, 0:size]
    img[(ys - cy) ** 2 + (xs - cx) ** 2 <= r * r] = disc
    return img, Circle(cx=cx, cy=cy, r=r)


class TestToGrayscale:
    def test_equal_channels_fixed_point(self):
        rgb = np.full((5, 7, 3), 93, dtype=np.uint8)
        assert (to_grayscale(rgb).pixels == 93).all()

    def test_white(self):
        rgb = np.full((2, 2, 3), 255, dtype=np.uint8)
        assert (to_grayscale(rgb).pixels == 255).all()

    def test_hand_computed_luma(self):
        rgb = np.zeros((1, 1, 3), dtype=np.uint8)
        rgb[0, 0] = (100, 150, 50)
        assert to_grayscale(rgb).pixels[0, 0] == 124

    def test_matches_exact_rational_reference(self, rng):
        rgb = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        got = to_grayscale(rgb).pixels
        for y in range(16):
            for x in range(16):
                assert got[y, x] == luma_reference(*rgb[y, x])

    def test_gray_passthrough(self):
        arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
        assert (to_grayscale(arr).pixels == arr).all()


class TestQuantize:
    def test_spec_endpoints(self):
        assert quantize_level(0, 10) == 12
        assert quantize_level(255, 10) == 243

    def test_exhaustive_against_reference(self):
        for bins in (2, 3, 7, 10, 16, 255):
            for v in range(256):
                assert quantize_level(v, bins) == quantize_reference(v, bins), (v, bins)

    def test_idempotent_for_all_256_inputs(self):
        for bins in (2, 5, 10, 13):
            img = GrayImage(np.arange(256, dtype=np.uint8).reshape(16, 16))
            once = quantize(img, bins)
            twice = quantize(once, bins)
            assert (once.pixels == twice.pixels).all()

    def test_alphabet_size(self, rng):
        img = GrayImage(rng.integers(0, 256, size=(64, 64), dtype=np.uint8))
        out = quantize(img, bins=10)
        assert len(np.unique(out.pixels)) <= 10

    def test_too_few_bins_rejected(self):
        with pytest.raises(PreprocessError):
            quantize(GrayImage(np.zeros((2, 2), dtype=np.uint8)), bins=1)


class TestFindCircle:
    def test_centered_disc_recovered(self):
        img, truth = disc_image(size=224, cy=112, cx=112, r=80)
        found, _ = find_circle(GrayImage(img, view=ViewKind.TOP))
        assert abs(found.cy - 112) <= 2 and abs(found.cx - 112) <= 2
        assert abs(found.r - 80) <= 2

    def test_offset_disc_recovered(self):
        img, truth = disc_image(size=224, cy=118, cx=108, r=75)
        found, _ = find_circle(GrayImage(img, view=ViewKind.BOTTOM))
        assert abs(found.cy - 118) <= 2 and abs(found.cx - 108) <= 2
        assert abs(found.r - 75) <= 2

    def test_all_dark_image_takes_max_radius_at_center(self):
        img = GrayImage(np.zeros((64, 64), dtype=np.uint8), view=ViewKind.TOP)
        found, score = find_circle(img)
        # every candidate is all-dark; the most dark pixels sit in the largest
        # admissible radius (here 20..30 step 2 -> 30), centered
        assert (found.cy, found.cx, found.r) == (32, 32, 30)
        d2 = (np.arange(64)[:, None] - 32) ** 2 + (np.arange(64)[None, :] - 32) ** 2
        assert score == int((d2 <= 900).sum())

    def test_matches_bruteforce_oracle_exactly(self, rng):
        params = CircleSearchParams(step=1)
        for trial in range(25):
            size = int(rng.integers(32, 65))
            r = int(rng.integers(max(2, int(0.31 * size)), int(0.44 * size)))
            jit = max(1, int(0.04 * size))
            cy = size // 2 + int(rng.integers(-jit, jit + 1))
            cx = size // 2 + int(rng.integers(-jit, jit + 1))
            img, _ = disc_image(size=size, cy=cy, cx=cx, r=r,
                                disc=int(rng.integers(0, 90)),
                                bg=int(rng.integers(170, 250)))
            noisy = np.clip(
                img.astype(np.int64) + rng.integers(-20, 21, img.shape), 0, 255
            ).astype(np.uint8)
            found, score = find_circle(GrayImage(noisy), params)
            (ocy, ocx, orad), oscore = brute_force_circle(noisy, step=1)
            assert (found.cy, found.cx, found.r) == (ocy, ocx, orad)
            assert score == oscore

    def test_wrong_view_kind_rejected(self):
        img, _ = disc_image(size=64)
        with pytest.raises(PreprocessError):
            find_circle(GrayImage(img, view=ViewKind.PROFILE_1))

    def test_degenerate_grid_rejected(self):
        img = GrayImage(np.zeros((8, 8), dtype=np.uint8))
        with pytest.raises(CircleSearchError):
            find_circle(img, CircleSearchParams(radius_lo=0.45, radius_hi=0.5, step=7))


class TestMaskOutside:
    def test_corner_zeroed_center_kept(self):
        img, c = disc_image(size=64)
        out = mask_outside(GrayImage(img), c)
        assert out.pixels[0, 0] == 0
        assert out.pixels[c.cy, c.cx] == img[c.cy, c.cx]

    def test_idempotent(self):
        img, c = disc_image(size=48)
        once = mask_outside(GrayImage(img), c)
        twice = mask_outside(once, c)
        assert (once.pixels == twice.pixels).all()

    def test_nonzero_count_close_to_disc_area(self, rng):
        for _ in range(10):
            size = int(rng.integers(48, 128))
            r = int(rng.integers(5, size // 2 - 1))
            cy = int(rng.integers(r, size - r))
            cx = int(rng.integers(r, size - r))
            img = GrayImage(np.full((size, size), 200, dtype=np.uint8))
            out = mask_outside(img, Circle(cx=cx, cy=cy, r=r))
            count = int((out.pixels > 0).sum())
            area = np.pi * r * r
            assert count <= np.ceil(area) + 2 * np.pi * r + 8
            assert count >= area - 2 * np.pi * r - 8


class TestBoundCircle:
    def test_unclipped_crop_size(self):
        img, c = disc_image(size=224, r=80)
        out = bound_circle(GrayImage(img), c)
        assert out.shape == (161, 161)

    def test_center_maps_to_crop_center(self):
        img, c = disc_image(size=224, cy=100, cx=130, r=60)
        marked = img.copy()
        marked[c.cy, c.cx] = 7
        out = bound_circle(GrayImage(marked), c)
        assert out.pixels[60, 60] == 7

    def test_tangent_circle_clips_without_error(self):
        img, _ = disc_image(size=64)
        c = Circle(cx=10, cy=32, r=10)
        out = bound_circle(GrayImage(img), c)
        assert out.shape == (21, 21)
        c_edge = Circle(cx=5, cy=32, r=10)  # extends past the left edge
        out = bound_circle(GrayImage(img), c_edge)
        assert out.shape == (21, 16)


class TestCenterProfile:
    def test_identity_when_centered(self):
        canvas = np.zeros((64, 64), dtype=np.uint8)
        canvas[16:48, 16:48] = 180
        out = center_profile(GrayImage(canvas, view=ViewKind.PROFILE_1), (64, 64))
        assert (out.pixels == canvas).all()

    def test_foreground_lands_at_target_center(self):
        canvas = np.zeros((300, 300), dtype=np.uint8)
        canvas[10:110, 40:100] = 200  # 100 x 60 block
        out = center_profile(GrayImage(canvas, view=ViewKind.PROFILE_2), (224, 224))
        assert out.shape == (224, 224)
        fg = np.argwhere(out.pixels > 0)
        center = (fg.min(axis=0) + fg.max(axis=0)) / 2.0
        assert abs(center[0] - 111.5) <= 1.0
        assert abs(center[1] - 111.5) <= 1.0

    def test_oversized_foreground_center_cropped(self):
        canvas = np.zeros((300, 300), dtype=np.uint8)
        canvas[20:270, 30:270] = 150  # 250 x 240
        out = center_profile(GrayImage(canvas, view=ViewKind.PROFILE_3), (224, 224))
        assert out.shape == (224, 224)
        assert (np.unique(out.pixels) == [150]).all()

    def test_all_black_rejected(self):
        with pytest.raises(PreprocessError, match="foreground"):
            center_profile(GrayImage(np.zeros((32, 32), dtype=np.uint8)), (32, 32))

    def test_quantized_background_needs_threshold(self):
        # after quantization the darkest bin is 12, not 0
        canvas = np.full((64, 64), 12, dtype=np.uint8)
        canvas[20:40, 20:40] = 192
        out = center_profile(GrayImage(canvas), (64, 64), fg_threshold=12)
        fg = np.argwhere(out.pixels > 12)
        assert fg.min(axis=0)[0] == 22  # 20 x 20 block centered at 32


class TestResize:
    def test_constant_preserved_both_directions(self):
        const = GrayImage(np.full((100, 100), 77, dtype=np.uint8))
        assert (resize(const, (50, 50)).pixels == 77).all()
        assert (resize(const, (224, 224)).pixels == 77).all()

    def test_target_shape(self):
        img = GrayImage(np.arange(64, dtype=np.uint8).reshape(8, 8))
        assert resize(img, (19, 31)).shape == (19, 31)


class TestPreprocessGroup:
    def _group(self, seed=0):
        from foamqc.synthgen import SynthParams, generate

        return generate(SynthParams(n_groups=1, seed=seed))[0][0]

    def test_outputs_five_target_sized_views(self):
        out = preprocess_group(self._group())
        assert set(out.images) == set(ViewKind)
        assert all(arr.shape == (224, 224) for arr in out.images.values())
        assert all(arr.dtype == np.uint8 for arr in out.images.values())

    def test_deterministic(self):
        a = preprocess_group(self._group(3))
        b = preprocess_group(self._group(3))
        for kind in ViewKind:
            assert (a.images[kind] == b.images[kind]).all()

    def test_error_names_the_view(self):
        g = self._group()
        g.images[ViewKind.TOP] = np.full((224, 224), 255, dtype=np.uint8)  # no disc
        with pytest.raises(PreprocessError, match="view top"):
            preprocess_group(g)

    def test_parallel_map_preserves_order(self):
        from foamqc.synthgen import SynthParams, generate

        groups = [g for g, _ in generate(SynthParams(n_groups=4, seed=2))]
        seq = preprocess_groups(groups, jobs=1)
        par = preprocess_groups(groups, jobs=2)
        assert [g.id for g in par] == [g.id for g in seq]
        for a, b in zip(seq, par):
            for kind in ViewKind:
                assert (a.images[kind] == b.images[kind]).all()
