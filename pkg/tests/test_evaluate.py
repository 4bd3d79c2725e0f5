import csv
import math

import numpy as np
import pytest
import torch

from vigas.dataset import load_split
from vigas.errors import InvalidInput
from vigas.evaluate import (ClipMetrics, EvalConfig, EvalReport, canonical_method, evaluate, format_table,
                            score_clip, write_reports)
from vigas.net import ViGASNet, save_checkpoint, tiny_config


@pytest.fixture(scope="module")
def checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpt")
    save_checkpoint(root / "full.ckpt", ViGASNet(tiny_config(), seed=1))
    save_checkpoint(root / "ablated.ckpt", ViGASNet(tiny_config(use_visual=False, use_bbox=False), seed=1))
    return root


class TestMethods:
    @pytest.mark.parametrize("alias,name", [("input", "input-copy"), ("TF", "tf-estimator"),
                                            ("vigas-checkpoint", "vigas"), ("gt", "oracle")])
    def test_aliases(self, alias, name):
        assert canonical_method(alias) == name

    def test_unknown_method(self):
        with pytest.raises(InvalidInput):
            canonical_method("magic")

    def test_oracle_scores_zero(self, small_dataset):
        report = evaluate("oracle", small_dataset)
        assert report.mag == 0.0 and report.lre == 0.0
        assert report.clip_count == len(small_dataset.split("test"))

    def test_input_copy_is_strictly_worse_than_oracle(self, small_dataset):
        report = evaluate("input", small_dataset)
        assert all(r.mag > 0 for r in report.rows)
        assert all(math.isfinite(r.lre) and r.lre >= 0 for r in report.rows)

    def test_input_copy_rte_is_small_in_one_room(self, small_dataset):
        report = evaluate("input", small_dataset)
        gt = [c.gt_rt60 for c in load_split(small_dataset, "test")]
        assert report.rte < 0.5 * np.mean(gt)

    def test_all_baselines_finite(self, small_dataset):
        for method in ("tf", "dsp"):
            report = evaluate(method, small_dataset)
            assert report.clip_count == len(small_dataset.split("test"))
            assert math.isfinite(report.mag) and report.mag >= 0 and report.lre >= 0

    def test_checkpoint_methods(self, small_dataset, checkpoints):
        full = evaluate("vigas", small_dataset, EvalConfig(checkpoint=str(checkpoints / "full.ckpt")))
        again = evaluate("vigas", small_dataset, EvalConfig(checkpoint=str(checkpoints / "full.ckpt")))
        assert [r.mag for r in full.rows] == [r.mag for r in again.rows]
        ablated = evaluate("vigas-no-visual", small_dataset,
                           EvalConfig(checkpoint=str(checkpoints / "ablated.ckpt")))
        assert ablated.clip_count == full.clip_count

    def test_no_visual_needs_ablated_checkpoint(self, small_dataset, checkpoints):
        with pytest.raises(InvalidInput):
            evaluate("vigas-no-visual", small_dataset, EvalConfig(checkpoint=str(checkpoints / "full.ckpt")))

    def test_missing_checkpoint(self, small_dataset, tmp_path):
        with pytest.raises(InvalidInput):
            evaluate("vigas", small_dataset, EvalConfig(checkpoint=str(tmp_path / "none.ckpt")))
        with pytest.raises(InvalidInput):
            evaluate("vigas", small_dataset)

    def test_enhancement_scores_against_clean_track(self, small_dataset):
        cfg = EvalConfig(enhancement=True)
        clip = load_split(small_dataset, "test")[0]
        m = score_clip(clip, clip.clean_emitter_audio.to_stereo(), cfg)
        assert m.mag == 0.0 and math.isnan(m.rte)


class TestReports:
    def report(self):
        rows = [ClipMetrics("a", "s0", 0.1, 1.0, 0.05), ClipMetrics("b", "s0", 0.3, 3.0, math.nan),
                ClipMetrics("c", "s1", 0.2, 2.0, 0.15)]
        return EvalReport("input-copy", "test", rows)

    def test_means_skip_missing(self):
        r = self.report()
        assert r.mag == pytest.approx(0.2) and r.lre == pytest.approx(2.0) and r.rte == pytest.approx(0.1)

    def test_per_scene(self):
        scenes = self.report().per_scene()
        assert list(scenes) == ["s0", "s1"]
        assert scenes["s0"].clip_count == 2 and scenes["s0"].mag == pytest.approx(0.2)

    def test_files(self, tmp_path):
        write_reports([self.report()], tmp_path)
        with open(tmp_path / "report.csv") as f:
            rows = list(csv.DictReader(f))
        assert list(rows[0]) == ["method", "split", "clip_id", "mag", "lre", "rte"]
        assert len(rows) == 3
        text = (tmp_path / "report.txt").read_text()
        assert text == format_table([self.report()])
        assert "Mag" in text and "input-copy" in text
        assert (tmp_path / "per_scene.csv").read_text().count("\n") == 3
