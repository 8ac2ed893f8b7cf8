"""
Ablation sweep plumbing; the seed-level scan comparison is a slow run.
"""

import pytest

import ablation
import cli
import reports
from config import ABLATION_CONFIG, ARRANGEMENTS
from errors import EXIT_OK, UsageError
from model import ShadowMamba


class TestVariants:

    def test_axes(self):
        assert set(ablation.variants("arrangement")) == set(ARRANGEMENTS)
        assert set(ablation.variants("scan")) == set(ABLATION_CONFIG["strategies"])
        assert set(ablation.variants("mask")) == {"maxpool", "no_denoise", "denoise"}
        assert len(ablation.variants("window")) == len(ABLATION_CONFIG["windows"])
        assert set(ablation.variants("module")) == {"full", "no_sffn", "no_brssm", "no_gssm"}

    def test_unknown_axis(self):
        with pytest.raises(UsageError):
            ablation.variants("depth")

    def test_every_variant_is_a_valid_config(self):
        for axis in ablation.AXES:
            for changes in ablation.variants(axis).values():
                cfg = ablation.ablation_config(0, **changes)
                assert cfg.base_width == ABLATION_CONFIG["width"]


    def test_module_variants_remove_their_module(self):
        table = ablation.variants("module")
        blocks = lambda name: ShadowMamba(ablation.ablation_config(0, **table[name])).blocks()  # noqa: E731
        assert all(b.sffn is None for b in blocks("no_sffn"))
        assert all(b.br_mixer is None and b.g_mixer is not None for b in blocks("no_brssm"))
        assert all(b.g_mixer is None and b.br_mixer is not None for b in blocks("no_gssm"))
        full = blocks("full")
        assert any(b.br_mixer is not None for b in full) and any(b.g_mixer is not None for b in full)
        assert all(b.sffn is not None for b in full)


class TestRun:

    def test_single_variant_row(self):
        rows = ablation.run_axis("scan", seeds=[0], steps=1, size=16, count=1, only=("boundary_region",))
        assert len(rows) == 1
        row = rows[0]
        assert row["axis"] == "scan" and row["variant"] == "boundary_region" and row["seed"] == 0
        assert row["final_loss"] > 0 and row["psnr_all"] > 0

    def test_mask_axis_scores_against_clean_mask(self):
        rows = ablation.run_axis("mask", seeds=[1], steps=1, size=16, count=1, only=("denoise",))
        assert rows[0]["psnr_s"] is not None or rows[0]["psnr_ns"] is not None

    def test_module_axis_row(self):
        rows = ablation.run_axis("module", seeds=[0], steps=1, size=16, count=1, only=("no_sffn",))
        assert [(r["axis"], r["variant"]) for r in rows] == [("module", "no_sffn")]
        assert rows[0]["final_loss"] > 0

    def test_cli_module_axis(self, tmp_path):
        out = tmp_path / "module.csv"
        args = ["ablate", "--axis", "module", "--out", str(out), "--seeds", "1", "--steps", "1",
                "--size", "16", "--count", "1"]
        assert cli.main(args) == EXIT_OK
        assert [r["variant"] for r in reports.read_csv(out)] == ["full", "no_sffn", "no_brssm", "no_gssm"]

    def test_unknown_variant(self):
        with pytest.raises(UsageError):
            ablation.run_axis("scan", seeds=[0], steps=1, only=("zigzag",))


@pytest.mark.slow
def test_boundary_region_beats_local_on_most_seeds():
    result = ablation.scan_mechanism_echo()
    assert result["seeds"] == ABLATION_CONFIG["seeds"]
    assert result["wins"] >= 7
