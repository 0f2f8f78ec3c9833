"""Run configuration defaults/parsing and canonical report serialization."""

import numpy as np
import pytest

from cemmaf.config import ConfigError, RunConfig, parse_config
from cemmaf.csearch import NotFound
from cemmaf.report import bundle_sha256, canonical_dumps, pn_entry, pp_entry, read_json, write_json

from test_bundle import small_bundle


class TestDefaults:
    def test_literal_snapshot(self):
        config = RunConfig()
        assert config.kappa == 5.0
        assert config.gamma == 100.0
        assert config.beta_pn == 100.0
        assert config.eta == 1.0
        assert config.nu == 1.0
        assert config.beta_pp == 0.1
        assert config.c0 == 1.0
        assert config.rounds == 9
        assert config.iters_pn == 1000
        assert config.iters_pp == 100
        assert config.step == 0.01
        assert config.n_superpixels == 200
        assert config.background == 0.0
        assert config.seed == 0

    def test_text_snapshot(self):
        assert RunConfig().to_text() == (
            "kappa=5.0\n"
            "gamma=100.0\n"
            "beta_pn=100.0\n"
            "eta=1.0\n"
            "nu=1.0\n"
            "beta_pp=0.1\n"
            "c0=1.0\n"
            "rounds=9\n"
            "iters_pn=1000\n"
            "iters_pp=100\n"
            "step=0.01\n"
            "n_superpixels=200\n"
            "background=0.0\n"
            "seed=0\n"
        )

    def test_hyperparam_views(self):
        config = RunConfig()
        pn = config.pn_params()
        assert (pn.kappa, pn.gamma, pn.beta, pn.eta, pn.nu) == (5.0, 100.0, 100.0, 1.0, 1.0)
        assert (pn.c0, pn.rounds, pn.iters, pn.step) == (1.0, 9, 1000, 0.01)
        pp = config.pp_params()
        assert (pp.kappa, pp.gamma, pp.beta, pp.background) == (5.0, 100.0, 0.1, 0.0)
        assert (pp.rounds, pp.iters, pp.step) == (9, 100, 0.01)


class TestParsing:
    def test_roundtrip(self):
        config = RunConfig(kappa=0.5, rounds=3, n_superpixels=16)
        assert parse_config(config.to_text()) == config

    def test_comments_and_blanks(self):
        assert parse_config("# hi\n\nkappa=2.0\n") == RunConfig(kappa=2.0)

    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="kapa"):
            parse_config("kapa=5.0\n")

    def test_duplicate_key(self):
        with pytest.raises(ConfigError, match="duplicate"):
            parse_config("kappa=1.0\nkappa=2.0\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError, match="rounds"):
            parse_config("rounds=many\n")

    def test_missing_equals(self):
        with pytest.raises(ConfigError, match="key=value"):
            parse_config("kappa 5\n")

    @pytest.mark.parametrize(
        "text", ["kappa=-1.0\n", "rounds=0\n", "step=0\n", "background=1.5\n", "seed=-3\n"]
    )
    def test_invariants_enforced(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)


class TestCanonicalJson:
    def test_write_read_write_is_byte_identical(self, tmp_path):
        obj = {
            "b": [1.0, 0.25, 3],
            "a": {"nested": np.array([0.1, 0.2]), "n": np.int64(4)},
            "c": None,
            "f": np.float64(0.30000000000000004),
        }
        write_json(tmp_path / "r.json", obj)
        first = (tmp_path / "r.json").read_bytes()
        write_json(tmp_path / "r.json", read_json(tmp_path / "r.json"))
        assert (tmp_path / "r.json").read_bytes() == first

    def test_key_order_is_canonical(self):
        assert canonical_dumps({"b": 1, "a": 2}) == canonical_dumps({"a": 2, "b": 1})

    def test_numpy_scalars_serialize(self):
        text = canonical_dumps({"x": np.float64(1.5), "y": np.int32(2), "z": np.arange(3)})
        assert '"x": 1.5' in text and '"y": 2' in text


class TestBundleHash:
    def test_stable_for_identical_content(self, tmp_path):
        small_bundle().save(tmp_path / "b1")
        small_bundle().save(tmp_path / "b2")
        assert bundle_sha256(tmp_path / "b1") == bundle_sha256(tmp_path / "b2")

    def test_changes_when_weights_change(self, tmp_path):
        small_bundle().save(tmp_path / "b")
        before = bundle_sha256(tmp_path / "b")
        payload = bytearray((tmp_path / "b" / "decoder.cmaf").read_bytes())
        payload[-1] ^= 0xFF
        (tmp_path / "b" / "decoder.cmaf").write_bytes(bytes(payload))
        assert bundle_sha256(tmp_path / "b") != before


class TestEntries:
    def test_not_found_entries(self):
        nf = NotFound(reason="no luck", c_schedule=(1.0, 10.0), diverged_rounds=(1,))
        entry = pn_entry(nf)
        assert entry["status"] == "not_found"
        assert entry["c_schedule"] == [1.0, 10.0]
        assert pp_entry(nf)["status"] == "not_found"

    def test_entries_are_json_ready(self, tmp_path):
        nf = NotFound(reason="r", c_schedule=(1.0,))
        write_json(tmp_path / "e.json", {"pn": pn_entry(nf), "pp": pp_entry(nf)})
        assert read_json(tmp_path / "e.json")["pn"]["reason"] == "r"
