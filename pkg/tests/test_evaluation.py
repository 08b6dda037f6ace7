import json

import numpy as np
import pytest

from spectrack import evaluation as ev
from spectrack.errors import ContractError, ValidationError
from spectrack.simulate import SimConfig, synth_sequence


def random_boxes(rng, n):
    boxes = []
    for _ in range(n):
        a = (rng.uniform(0, 80), rng.uniform(0, 80), rng.uniform(1, 30), rng.uniform(1, 30))
        b = (rng.uniform(0, 80), rng.uniform(0, 80), rng.uniform(1, 30), rng.uniform(1, 30))
        boxes.append((a, b))
    return boxes


class TestBoxMetrics:
    def test_iou_hand_cases(self):
        assert ev.iou((5.0, 7.0, 3.0, 4.0), (5.0, 7.0, 3.0, 4.0)) == 1.0
        assert abs(ev.iou((1.0, 1.0, 2.0, 2.0), (2.0, 2.0, 2.0, 2.0)) - 1.0 / 7.0) < 1e-15
        assert ev.iou((0.0, 0.0, 2.0, 2.0), (10.0, 0.0, 2.0, 2.0)) == 0.0
        # contained box: 4x4 inside 8x8 sharing the centre
        assert abs(ev.iou((0.0, 0.0, 4.0, 4.0), (0.0, 0.0, 8.0, 8.0)) - 0.25) < 1e-15
        with pytest.raises(ValidationError):
            ev.iou((0.0, 0.0, 0.0, 2.0), (0.0, 0.0, 2.0, 2.0))

    def test_touching_boxes_have_zero_overlap(self):
        assert ev.iou((0.0, 0.0, 2.0, 2.0), (2.0, 0.0, 2.0, 2.0)) == 0.0

    def test_center_distance_is_euclidean(self):
        assert ev.center_distance((0.0, 0.0, 1.0, 1.0), (3.0, 4.0, 9.0, 9.0)) == 5.0

    def test_rates_match_brute_force_exactly(self):
        rng = np.random.default_rng(101)
        pairs = random_boxes(rng, 1000)
        ious = [ev.iou(a, b) for a, b in pairs]
        dists = [ev.center_distance(a, b) for a, b in pairs]
        iou_arr = np.array(ious)
        dist_arr = np.array(dists)
        for t in ev.IOU_THRESHOLDS:
            assert ev.success_rate(ious, t) == float(np.count_nonzero(iou_arr >= t)) / 1000
        for r in ev.DIST_THRESHOLDS:
            assert ev.precision_rate(dists, r) == float(np.count_nonzero(dist_arr <= r)) / 1000

    def test_comparisons_are_inclusive(self):
        assert ev.success_rate([0.5], 0.5) == 1.0
        assert ev.precision_rate([20.0], 20.0) == 1.0

    def test_constant_overlap_auc_counts_thresholds(self):
        # every threshold at or below 0.437 succeeds: 44 of the 101 points
        assert ev.auc([0.437] * 5) == 44 / 101

    def test_empty_inputs_raise(self):
        with pytest.raises(ContractError):
            ev.success_rate([], 0.5)
        with pytest.raises(ContractError):
            ev.precision_rate([], 20.0)

    def test_threshold_grids(self):
        assert len(ev.IOU_THRESHOLDS) == 101
        assert ev.IOU_THRESHOLDS[0] == 0.0 and ev.IOU_THRESHOLDS[-1] == 1.0
        assert len(ev.DIST_THRESHOLDS) == 51
        assert ev.DIST_THRESHOLDS[20] == 20.0


class TestSequenceMetrics:
    def test_compute_metrics_skips_unlabelled_frames(self):
        preds = [(5.0, 5.0, 4.0, 4.0)] * 3
        gts = [(5.0, 5.0, 4.0, 4.0), None, (50.0, 50.0, 4.0, 4.0)]
        result = ev.compute_metrics(preds, gts)
        assert len(result.ious) == 2
        assert result.ious[0] == 1.0 and result.ious[1] == 0.0
        assert result.sr_auc == sum(result.sr) / 101

    def test_compute_metrics_contracts(self):
        with pytest.raises(ContractError):
            ev.compute_metrics([(1.0, 1.0, 2.0, 2.0)], [])
        with pytest.raises(ContractError):
            ev.compute_metrics([(1.0, 1.0, 2.0, 2.0)], [None])

    def test_result_curves_must_be_monotone(self):
        with pytest.raises(ContractError):
            ev.SequenceResult(ious=[0.5], distances=[1.0], sr=[0.2, 0.8], pr=[1.0] * 2)
        with pytest.raises(ContractError):
            ev.SequenceResult(ious=[0.5], distances=[1.0], sr=[0.8, 0.2], pr=[1.0, 0.5])

    def test_headline_numbers_index_the_curves(self):
        ious = [0.3, 0.6, 0.9]
        dists = [5.0, 15.0, 40.0]
        result = ev.compute_metrics(
            [(0.0, 0.0, 1.0, 1.0)] * 3, [(0.0, 0.0, 1.0, 1.0)] * 3
        )
        result = ev.SequenceResult(ious=ious, distances=dists, sr=ev.sr_curve(ious), pr=ev.pr_curve(dists))
        assert result.sr_at_05 == ev.success_rate(ious, ev.IOU_THRESHOLDS[50])
        assert result.pr_at_20 == ev.precision_rate(dists, 20.0)


class GroundTruthOracle:
    """Reads the forwarded geometry and frame id instead of the pixels."""

    def __init__(self, seq, config):
        self.config = config
        self.gt = {f.frame_id: f.bbox for f in seq.frames}

    def track_step(self, t_rgb, t_ev, s_rgb, s_ev, geometry=None, frame_id=None):
        return geometry.box_to_patch(self.gt[frame_id]), 1.0


class TestTrackingLoop:
    def test_patch_cutting_shapes(self):
        seq = synth_sequence(seed=0)
        config = ev.tiny_track_config()
        t_rgb, t_ev = ev.template_patches(seq, config)
        assert t_rgb.data.shape == (3, 32, 32)
        assert t_ev.data.shape == (2, 8, 8)
        s_rgb, s_ev, geom = ev.search_patches(seq, 3, seq.frames[3].bbox, config)
        assert s_rgb.data.shape == (3, 64, 64)
        assert s_ev.data.shape == (2, 16, 16)
        assert geom.out_side == 64

    def test_template_needs_the_first_label(self):
        seq = synth_sequence(seed=0)
        seq.frames[0].bbox = None
        with pytest.raises(ContractError):
            ev.template_patches(seq, ev.tiny_track_config())

    def test_oracle_tracker_scores_perfectly(self):
        # dyadic geometry: zoom 1.0 crops, so patch->image round trips are
        # exact and the oracle's boxes coincide bitwise with ground truth
        seq = synth_sequence(seed=0)
        config = ev.tiny_track_config()
        result, rows = ev.track_sequence(GroundTruthOracle(seq, config), seq, config)
        assert len(rows) == len(seq)
        assert rows[0].box == seq.frames[0].bbox and rows[0].score == 1.0
        assert all(v == 1.0 for v in result.ious)
        assert all(d == 0.0 for d in result.distances)
        assert result.sr_auc == 1.0
        assert result.pr[0] == 1.0


class TestGradientSuite:
    def test_selected_module_passes(self):
        results = ev.gradient_checks(module="dwf")
        assert results
        for name, report in results:
            assert name.startswith("dwf")
            assert report.passed, (name, report)

    def test_unknown_module_is_rejected(self):
        with pytest.raises(ContractError):
            ev.gradient_checks(module="everything")


class TestReportsAndCsv:
    def test_report_payload_and_files(self, tmp_path):
        ious = [0.9, 0.4, 0.75]
        dists = [2.0, 30.0, 11.0]
        result = ev.SequenceResult(ious=ious, distances=dists, sr=ev.sr_curve(ious), pr=ev.pr_curve(dists))
        payload = ev.report_payload(result)
        assert set(payload) == {"sr_auc", "sr@0.5", "pr@20", "curves"}
        path = ev.write_report(result, tmp_path / "report.json")
        loaded = json.loads(path.read_text())
        assert loaded["sr_auc"] == result.sr_auc
        assert loaded["curves"]["sr"] == result.sr

        csv_path = ev.write_curves_csv(loaded, tmp_path / "curves.csv")
        lines = csv_path.read_text().strip().splitlines()
        assert lines[0] == "curve,threshold,value"
        assert len(lines) == 1 + 101 + 51

    def test_prediction_rows_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        rows = [
            ev.PredictionRow(frame_id=i, box=tuple(rng.uniform(0, 100, size=4)), score=float(rng.uniform()))
            for i in range(12)
        ]
        path = ev.write_predictions(rows, tmp_path / "pred.csv")
        back = ev.read_predictions(path)
        assert back == rows

    def test_history_csv_layout(self, tmp_path):
        history = [
            {"step": 0.0, "total": 3.0, "focal": 1.0, "l1": 0.1, "giou": 0.6},
            {"step": 1.0, "total": 2.5, "focal": 0.9, "l1": 0.08, "giou": 0.5},
        ]
        path = ev.write_history_csv(history, tmp_path / "history.csv")
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "step,total,focal,l1,giou"
        assert len(lines) == 3
        assert lines[1].startswith("0,3.0,")
