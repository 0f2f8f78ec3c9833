"""Fixture trainer quality, determinism, and spec parsing."""

import filecmp
from pathlib import Path

import numpy as np
import pytest

from cemmaf import netpbm
from cemmaf.bundle import load_bundle
from cemmaf.fixtures import (
    FixtureError,
    FixtureSpec,
    generate_fixture_set,
    parse_fixture_spec,
    train_fixture,
)

# keeps determinism/separability runs well under a second
FAST = dict(classes=2, samples_per_class=8, images=2, classifier_steps=200,
            ae_steps=250, ae_hidden=16, classifier_hidden=8)


class TestSpecParsing:
    def test_defaults(self):
        spec = parse_fixture_spec("")
        assert spec == FixtureSpec()

    def test_parse_values(self):
        spec = parse_fixture_spec("classes=4\nheight=10\nnoise=0.05\n# comment\n")
        assert spec.classes == 4 and spec.height == 10 and spec.noise == 0.05

    def test_unknown_key(self):
        with pytest.raises(FixtureError, match="blobs"):
            parse_fixture_spec("blobs=3\n")

    def test_zero_classes_unsatisfiable(self):
        with pytest.raises(FixtureError, match="classes"):
            parse_fixture_spec("classes=0\n")

    def test_bad_value(self):
        with pytest.raises(FixtureError, match="height"):
            parse_fixture_spec("height=tall\n")


class TestTraining:
    def test_three_class_train_accuracy(self, fixture_set):
        assert fixture_set.manifest["train_accuracy"] >= 0.95

    def test_reconstruction_error_bound(self, fixture_set):
        assert fixture_set.manifest["reconstruction_mae"] < 0.1

    def test_fixture_image_reconstruction(self, fixture_set):
        bundle = fixture_set.bundle
        img = fixture_set.images[0].image
        recon = bundle.decode(bundle.infer_latent(img))
        assert np.abs(recon - img).mean() < 0.1

    def test_separable_two_class_spec_hits_full_accuracy(self, tmp_path):
        spec = FixtureSpec(noise=0.0, **FAST)
        _, info = train_fixture(spec, 3, tmp_path / "b")
        assert info["train_accuracy"] == 1.0

    def test_deterministic_bundles(self, tmp_path):
        spec = FixtureSpec(**FAST)
        train_fixture(spec, 5, tmp_path / "b1")
        train_fixture(spec, 5, tmp_path / "b2")
        files1 = sorted(p.name for p in (tmp_path / "b1").iterdir())
        files2 = sorted(p.name for p in (tmp_path / "b2").iterdir())
        assert files1 == files2
        for name in files1:
            assert (tmp_path / "b1" / name).read_bytes() == (tmp_path / "b2" / name).read_bytes(), name

    def test_deterministic_fixture_sets(self, tmp_path):
        spec = FixtureSpec(**FAST)
        generate_fixture_set(spec, 5, tmp_path / "s1")
        generate_fixture_set(spec, 5, tmp_path / "s2")
        for p1 in sorted((tmp_path / "s1").rglob("*")):
            if p1.is_file():
                p2 = tmp_path / "s2" / p1.relative_to(tmp_path / "s1")
                assert p1.read_bytes() == p2.read_bytes(), p1.name


class TestFixtureSet:
    def test_manifest_predictions_match_bundle(self, fixture_set):
        bundle = fixture_set.bundle
        for fx in fixture_set.images:
            assert bundle.predict(fx.image) == fx.predicted

    def test_manifest_attribute_values_match_bundle(self, fixture_set):
        bundle = fixture_set.bundle
        for fx in fixture_set.images:
            values = bundle.eval_attributes(fx.image)
            for name, value in zip(bundle.attribute_names, values):
                assert fx.attributes[name] == pytest.approx(float(value), abs=0)

    def test_requested_image_count(self, fixture_set):
        assert len(fixture_set.images) == 10

    def test_images_cover_all_classes(self, fixture_set):
        assert set(fx.label for fx in fixture_set.images) == {0, 1, 2}

    def test_reloadable(self, fixture_set):
        bundle = load_bundle(Path(fixture_set.dir) / "bundle")
        assert bundle.n_classes == 3
        assert bundle.latent_dim == 4

    def test_images_are_8bit_files(self, fixture_set):
        img = netpbm.read_image(fixture_set.images[0].path)
        np.testing.assert_array_equal(img, netpbm.quantize(img) / 255.0)
