import struct

import numpy as np
import pytest
from helpers import random_bundle

from cuetrack.bundle_io import read_token_grid, write_bundle, write_token_grid
from cuetrack.cli import main
from cuetrack.cue_mapping import (
    attention_map,
    map_textual_cue,
    normalize,
    read_heatmap,
    write_heatmap,
)
from cuetrack.guidance import fuse, init_weights, save_weights
from cuetrack.metrics import parse_report
from cuetrack.synthetic import (
    STRATEGY_NAIVE,
    SyntheticSpec,
    generate_bundle,
    init_strategy_weights,
    run_tracker,
    write_strategy_weights,
)


@pytest.fixture
def bundle_file(tmp_path):
    rng = np.random.default_rng(0)
    b = random_bundle(rng, sizes=((6, 5), (3, 2)), dim_g=8, n_text=3)
    path = tmp_path / "b.ctfb"
    write_bundle(b, path)
    return path


class TestMapCommand:
    def test_writes_heatmap_with_scale1_dims(self, bundle_file, tmp_path):
        out = tmp_path / "h.cthm"
        assert main(["map", "--bundle", str(bundle_file), "--out", str(out),
                     "--quiet"]) == 0
        hm = read_heatmap(out)
        assert (hm.w, hm.h) == (6, 5)
        assert hm.normalized

    def test_scale_out_of_range_exits_4(self, bundle_file, tmp_path):
        code = main(["map", "--bundle", str(bundle_file), "--out",
                     str(tmp_path / "h.cthm"), "--scale", "9", "--quiet"])
        assert code == 4

    def test_missing_bundle_exits_3(self, tmp_path):
        code = main(["map", "--bundle", str(tmp_path / "nope.ctfb"), "--out",
                     str(tmp_path / "h.cthm"), "--quiet"])
        assert code == 3

    def test_bad_magic_exits_4(self, tmp_path):
        bad = tmp_path / "bad.ctfb"
        bad.write_bytes(b"JUNKJUNKJUNK")
        code = main(["map", "--bundle", str(bad), "--out",
                     str(tmp_path / "h.cthm"), "--quiet"])
        assert code == 4

    def test_no_refine_matches_library_attention_path(self, bundle_file, tmp_path):
        from cuetrack.bundle_io import read_bundle

        out = tmp_path / "h.cthm"
        assert main(["map", "--bundle", str(bundle_file), "--out", str(out),
                     "--no-refine", "--quiet"]) == 0
        got = read_heatmap(out)
        b = read_bundle(bundle_file)
        expect = normalize(attention_map(b, 1))
        np.testing.assert_array_equal(
            got.values, expect.values.astype(np.float32).astype(np.float64)
        )

    def test_pgm_and_survey_outputs(self, bundle_file, tmp_path):
        out = tmp_path / "h.cthm"
        pgm = tmp_path / "h.pgm"
        survey = tmp_path / "survey"
        assert main(["map", "--bundle", str(bundle_file), "--out", str(out),
                     "--pgm", str(pgm), "--survey", str(survey), "--quiet"]) == 0
        assert pgm.read_bytes().startswith(b"P5\n6 5\n255\n")
        assert sorted(p.name for p in survey.glob("*.cthm")) == [
            "scale_1.cthm", "scale_2.cthm"]
        assert (survey / "scale_2.pgm").exists()

    def test_f32_precision_mode(self, bundle_file, tmp_path):
        out64 = tmp_path / "h64.cthm"
        out32 = tmp_path / "h32.cthm"
        assert main(["map", "--bundle", str(bundle_file), "--out", str(out64),
                     "--quiet"]) == 0
        assert main(["map", "--bundle", str(bundle_file), "--out", str(out32),
                     "--precision", "f32", "--quiet"]) == 0
        a, b = read_heatmap(out64), read_heatmap(out32)
        assert a.argmax_cell() == b.argmax_cell()
        np.testing.assert_allclose(a.values, b.values, atol=1e-5)


class TestFuseCommand:
    def test_matches_library_fuse(self, tmp_path):
        rng = np.random.default_rng(1)
        weights = init_weights(8, 5)
        wpath = tmp_path / "w.ctgw"
        save_weights(weights, wpath)
        heat = normalize_random(rng, 6, 6)
        hpath = tmp_path / "h.cthm"
        write_heatmap(heat, hpath)
        from cuetrack.bundle_io import TokenGrid

        grid = TokenGrid(
            rng.standard_normal((16, 8)).astype(np.float32).astype(np.float64), 4, 4
        )
        gpath = tmp_path / "g.cttg"
        write_token_grid(grid, gpath)
        out = tmp_path / "out.cttg"
        assert main(["fuse", "--heatmap", str(hpath), "--tokens", str(gpath),
                     "--weights", str(wpath), "--out", str(out), "--quiet"]) == 0
        got = read_token_grid(out)
        assert (got.grid_w, got.grid_h, got.dim) == (4, 4, 8)
        expect = fuse(weights, read_heatmap(hpath), grid)
        library = tmp_path / "lib.cttg"
        write_token_grid(expect, library)
        assert out.read_bytes() == library.read_bytes()

    def test_dim_mismatch_exits_4(self, tmp_path):
        rng = np.random.default_rng(2)
        weights = init_weights(8, 5)
        wpath = tmp_path / "w.ctgw"
        save_weights(weights, wpath)
        hpath = tmp_path / "h.cthm"
        write_heatmap(normalize_random(rng, 4, 4), hpath)
        from cuetrack.bundle_io import TokenGrid

        gpath = tmp_path / "g.cttg"
        write_token_grid(TokenGrid(rng.standard_normal((16, 12)), 4, 4), gpath)
        code = main(["fuse", "--heatmap", str(hpath), "--tokens", str(gpath),
                     "--weights", str(wpath), "--out", str(tmp_path / "o.cttg"),
                     "--quiet"])
        assert code == 4


def normalize_random(rng, w, h):
    from cuetrack.cue_mapping import Heatmap

    return Heatmap(rng.uniform(0.0, 1.0, (h, w)), normalized=True)


class TestSynthCommand:
    def test_dataset_layout(self, tmp_path):
        out = tmp_path / "data"
        assert main(["synth", "--out", str(out), "--sequences", "2",
                     "--frames", "3", "--seed", "11", "--quiet"]) == 0
        import json

        manifest = json.loads((out / "manifest.json").read_text())
        assert len(manifest["sequences"]) == 2
        assert manifest["spec"]["seed"] == 11
        seq = out / "seq_000"
        assert sorted(p.name for p in seq.glob("*.ctfb")) == [
            "frame_000.ctfb", "frame_001.ctfb", "frame_002.ctfb"]
        assert (seq / "groundtruth.txt").exists()
        from cuetrack.bundle_io import read_bundle

        read_bundle(seq / "frame_000.ctfb")  # validates

    def test_deterministic_output(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["synth", "--out", str(out), "--sequences", "1",
                         "--frames", "2", "--quiet"]) == 0
        assert (a / "seq_000" / "frame_001.ctfb").read_bytes() == (
            b / "seq_000" / "frame_001.ctfb").read_bytes()


class TestTrackEvalCommands:
    def test_track_cadence1_matches_library_per_frame(self, tmp_path):
        spec = SyntheticSpec(frames=3)
        weights = init_strategy_weights(spec, STRATEGY_NAIVE, 0)
        wpath = tmp_path / "w.ctsw"
        write_strategy_weights(weights, wpath, dim_g=spec.dim_g)
        out = tmp_path / "run"
        assert main(["track", "--strategy", "naive_map", "--weights", str(wpath),
                     "--out", str(out), "--sequences", "2", "--frames", "3",
                     "--cadence", "1", "--quiet"]) == 0
        out2 = tmp_path / "run2"
        assert main(["track", "--strategy", "naive_map", "--weights", str(wpath),
                     "--out", str(out2), "--sequences", "2", "--frames", "3",
                     "--quiet"]) == 0
        for name in ("pred_000.txt", "gt_000.txt", "pred_001.txt", "gt_001.txt"):
            assert (out / name).read_bytes() == (out2 / name).read_bytes()
        # library reference for the first suite sequence
        from dataclasses import replace

        from cuetrack.synthetic import EVAL_SUITE_SEED

        rec = run_tracker(replace(spec, seed=EVAL_SUITE_SEED), "naive_map", weights)
        ref = tmp_path / "ref.txt"
        from cuetrack.bundle_io import write_boxes

        write_boxes(ref, zip(rec.frames, rec.pred))
        assert ref.read_bytes() == (out / "pred_000.txt").read_bytes()

    def test_eval_perfect_predictions_auc_20_21(self, tmp_path):
        from cuetrack.bundle_io import write_boxes

        d = tmp_path / "run"
        d.mkdir()
        boxes = [(f, (8.0 * f, 16.0, 64.0, 64.0)) for f in range(4)]
        write_boxes(d / "pred_000.txt", boxes)
        write_boxes(d / "gt_000.txt", boxes)
        report_path = tmp_path / "report.txt"
        assert main(["eval", "--dir", str(d), "--out", str(report_path),
                     "--quiet"]) == 0
        report = parse_report(report_path)
        assert report.auc == pytest.approx(20.0 / 21.0)
        assert report.precision == 1.0

    def test_eval_single_pair_mode(self, tmp_path):
        from cuetrack.bundle_io import write_boxes

        pred = tmp_path / "p.txt"
        gt = tmp_path / "g.txt"
        write_boxes(pred, [(0, (0.0, 0.0, 10.0, 10.0))])
        write_boxes(gt, [(0, (100.0, 100.0, 10.0, 10.0))])
        out = tmp_path / "r.txt"
        assert main(["eval", "--pred", str(pred), "--gt", str(gt), "--out",
                     str(out), "--quiet"]) == 0
        assert parse_report(out).precision == 0.0

    def test_usage_error_exits_2(self):
        assert main(["track"]) == 2
        assert main(["no-such-command"]) == 2


class TestCheckGradCommand:
    def test_passes_at_default_tolerance(self, capsys):
        assert main(["check-grad", "--seeds", "3", "--quiet"]) == 0
        out = capsys.readouterr().out
        assert "max_rel_error" in out
        assert float(out.split()[-1]) < 1e-6

    def test_impossible_tolerance_exits_5(self):
        assert main(["check-grad", "--seeds", "1", "--tol", "1e-30",
                     "--quiet"]) == 5
