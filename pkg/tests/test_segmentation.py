"""Grid partitions, mask application, and label-map round trips."""

import numpy as np
import pytest

from cemmaf import netpbm
from cemmaf.segmentation import (
    SegmentationError,
    SuperpixelPartition,
    apply_mask,
    export_label_map,
    grid_segment,
    import_label_map,
)


class TestGridSegment:
    def test_quadrants(self):
        part = grid_segment(8, 8, 4)
        assert part.n_superpixels == 4
        np.testing.assert_array_equal(np.unique(part.labels), [0, 1, 2, 3])
        np.testing.assert_array_equal(part.sizes(), [16, 16, 16, 16])
        assert part.labels[0, 0] == 0 and part.labels[0, 7] == 1
        assert part.labels[7, 0] == 2 and part.labels[7, 7] == 3

    def test_single_superpixel(self):
        part = grid_segment(8, 8, 1)
        assert part.n_superpixels == 1
        assert (part.labels == 0).all()
        assert part.sizes()[0] == 64

    def test_28x28_with_196_target(self):
        part = grid_segment(28, 28, 196)
        assert part.n_superpixels == 196
        np.testing.assert_array_equal(part.sizes(), np.full(196, 4))

    def test_overask_degrades_to_pixels(self):
        part = grid_segment(8, 8, 200)
        assert part.n_superpixels == 64
        np.testing.assert_array_equal(part.sizes(), np.ones(64))

    def test_non_square_counts(self):
        part = grid_segment(6, 12, 8)
        # rows = round(sqrt(8*6/12)) = 2, cols = ceil(8/2) = 4
        assert part.n_superpixels == 8
        assert part.sizes().sum() == 72

    def test_target_below_one_rejected(self):
        with pytest.raises(SegmentationError, match=">= 1"):
            grid_segment(8, 8, 0)

    def test_coverage_sums_to_pixel_count(self):
        for h, w, t in ((5, 9, 7), (16, 16, 50), (3, 4, 12), (10, 7, 1)):
            part = grid_segment(h, w, t)
            assert part.sizes().sum() == h * w
            assert (part.sizes() > 0).all()


class TestApplyMask:
    @pytest.fixture()
    def setup(self):
        rng = np.random.default_rng(0)
        image = rng.uniform(0, 1, size=(8, 8, 1))
        part = grid_segment(8, 8, 4)
        return image, part

    def test_all_ones_is_identity(self, setup):
        image, part = setup
        out = apply_mask(image, part, np.ones(4), 0.0)
        np.testing.assert_array_equal(out, image)

    def test_all_zeros_black_background(self, setup):
        image, part = setup
        out = apply_mask(image, part, np.zeros(4), 0.0)
        np.testing.assert_array_equal(out, np.zeros_like(image))

    def test_single_quadrant_keeps_only_that_region(self, setup):
        image, part = setup
        mask = np.array([0.0, 1.0, 0.0, 0.0])
        out = apply_mask(image, part, mask, 0.0)
        keep = part.labels == 1
        np.testing.assert_array_equal(out[keep], image[keep])
        assert (out[~keep] == 0.0).all()

    def test_background_fill(self, setup):
        image, part = setup
        out = apply_mask(image, part, np.zeros(4), 0.25)
        np.testing.assert_array_equal(out, np.full_like(image, 0.25))

    def test_linearity_exact_for_power_of_two_alpha(self, setup):
        image, part = setup
        rng = np.random.default_rng(1)
        mask = rng.uniform(0, 1, size=4)
        for alpha in (0.5, 0.25):
            left = apply_mask(image, part, alpha * mask, 0.0)
            right = alpha * apply_mask(image, part, mask, 0.0)
            np.testing.assert_array_equal(left, right)

    def test_linearity_general_alpha(self, setup):
        image, part = setup
        rng = np.random.default_rng(2)
        mask = rng.uniform(0, 1, size=4)
        alpha = 0.3
        np.testing.assert_allclose(
            apply_mask(image, part, alpha * mask, 0.0),
            alpha * apply_mask(image, part, mask, 0.0),
            rtol=0, atol=1e-15,
        )

    def test_binary_idempotence(self, setup):
        image, part = setup
        mask = np.array([1.0, 0.0, 1.0, 0.0])
        once = apply_mask(image, part, mask, 0.0)
        twice = apply_mask(once, part, mask, 0.0)
        np.testing.assert_array_equal(once, twice)

    def test_multichannel(self):
        rng = np.random.default_rng(3)
        image = rng.uniform(0, 1, size=(4, 4, 3))
        part = grid_segment(4, 4, 4)
        out = apply_mask(image, part, np.array([1.0, 0.0, 0.0, 0.0]), 0.0)
        keep = part.labels == 0
        np.testing.assert_array_equal(out[keep], image[keep])
        assert (out[~keep] == 0.0).all()

    def test_errors(self, setup):
        image, part = setup
        with pytest.raises(SegmentationError, match="length"):
            apply_mask(image, part, np.ones(5), 0.0)
        with pytest.raises(SegmentationError, match="0, 1"):
            apply_mask(image, part, np.array([0.5, 1.5, 0.0, 0.0]), 0.0)
        with pytest.raises(SegmentationError, match="background"):
            apply_mask(image, part, np.ones(4), 1.5)
        with pytest.raises(SegmentationError, match="partition"):
            apply_mask(np.zeros((4, 4, 1)), part, np.ones(4), 0.0)


class TestLabelMaps:
    def test_roundtrip_binary(self, tmp_path):
        part = grid_segment(8, 8, 16)
        export_label_map(tmp_path / "l.pgm", part)
        back = import_label_map(tmp_path / "l.pgm")
        np.testing.assert_array_equal(back.labels, part.labels)
        assert back.n_superpixels == 16

    def test_roundtrip_ascii(self, tmp_path):
        part = grid_segment(5, 7, 6)
        export_label_map(tmp_path / "l.pgm", part, ascii_format=True)
        assert (tmp_path / "l.pgm").read_bytes().startswith(b"P2")
        back = import_label_map(tmp_path / "l.pgm")
        np.testing.assert_array_equal(back.labels, part.labels)

    def test_roundtrip_wide_ids(self, tmp_path):
        part = grid_segment(20, 20, 400)  # 400 ids needs two-byte samples
        export_label_map(tmp_path / "l.pgm", part)
        back = import_label_map(tmp_path / "l.pgm")
        np.testing.assert_array_equal(back.labels, part.labels)
        assert back.n_superpixels == 400

    def test_import_rejects_gaps(self, tmp_path):
        netpbm.write_pgm(tmp_path / "g.pgm", np.array([[0, 2], [2, 2]]), 2)
        with pytest.raises(SegmentationError, match="gaps"):
            import_label_map(tmp_path / "g.pgm")


class TestPartitionValidation:
    def test_rejects_negative_ids(self):
        with pytest.raises(SegmentationError):
            SuperpixelPartition(labels=np.array([[-1, 0]]), n_superpixels=1)

    def test_rejects_out_of_range_ids(self):
        with pytest.raises(SegmentationError):
            SuperpixelPartition(labels=np.array([[0, 3]]), n_superpixels=2)

    def test_rejects_float_labels(self):
        with pytest.raises(SegmentationError, match="integer"):
            SuperpixelPartition(labels=np.array([[0.0, 1.0]]), n_superpixels=2)

    def test_labels_are_frozen(self):
        part = grid_segment(4, 4, 4)
        with pytest.raises(ValueError):
            part.labels[0, 0] = 3
