"""Tests for threshold calibration and the binary detector."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from energy_ood.detector import (
    Decision,
    DetectorConfig,
    achieved_tpr,
    calibrate_threshold,
    classify,
    filter_and_predict,
)
from energy_ood.errors import InputError


def calibrate_oracle(in_scores, q):
    """Largest tau in {scores} U {-inf} with achieved TPR >= q."""
    s = np.asarray(in_scores, dtype=float)
    best = -math.inf
    for t in np.unique(s):
        if (s > t).mean() >= q and t > best:
            best = float(t)
    return best


class TestCalibrateThreshold:
    def test_twenty_distinct_scores(self):
        scores = list(range(1, 21))
        cfg = calibrate_threshold(scores, 0.95)
        assert cfg.tau == 1.0
        assert achieved_tpr(scores, cfg) == pytest.approx(0.95)

    def test_too_few_samples_accepts_all(self):
        cfg = calibrate_threshold([3.0, 1.0, 2.0, 9.0], 0.95)
        assert cfg.tau == -math.inf
        assert achieved_tpr([3.0, 1.0, 2.0, 9.0], cfg) == 1.0

    def test_full_tie_falls_back_to_minus_inf(self):
        scores = [5.0] * 20
        cfg = calibrate_threshold(scores, 0.95)
        assert cfg.tau == -math.inf
        assert achieved_tpr(scores, cfg) == 1.0

    def test_rejects_empty_input(self):
        with pytest.raises(InputError):
            calibrate_threshold([], 0.95)

    def test_rejects_non_finite_scores(self):
        with pytest.raises(InputError):
            calibrate_threshold([1.0, float("nan")], 0.95)

    def test_rejects_bad_target(self):
        for q in (0.0, -0.1, 1.2):
            with pytest.raises(InputError):
                calibrate_threshold([1.0, 2.0], q)

    def test_target_one_accepts_everything(self):
        cfg = calibrate_threshold([1.0, 2.0, 3.0], 1.0)
        assert cfg.tau == -math.inf

    def test_matches_oracle_on_random_sets(self):
        """Calibration equals the brute-force 'largest feasible tau' rule."""
        rng = np.random.default_rng(101)
        for _ in range(500):
            n = int(rng.integers(1, 120))
            # duplicate-heavy draws exercise the tie rule
            s = rng.integers(-5, 6, size=n).astype(float)
            q = float(rng.uniform(0.05, 1.0))
            cfg = calibrate_threshold(s, q)
            assert cfg.tau == calibrate_oracle(s, q)
            assert achieved_tpr(s, cfg) >= q

    @given(
        st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200),
        st.floats(0.01, 1.0),
    )
    @settings(max_examples=300, deadline=None)
    def test_soundness_achieved_tpr_at_least_target(self, scores, q):
        cfg = calibrate_threshold(scores, q)
        tpr = achieved_tpr(scores, cfg)
        assert tpr >= q
        assert tpr <= 1.0


class TestClassify:
    def test_above_threshold_is_in(self):
        cfg = DetectorConfig(tau=2.0, target_tpr=0.95)
        assert classify(3.0, cfg) == Decision(label=1, score=3.0)

    def test_boundary_goes_to_ood(self):
        cfg = DetectorConfig(tau=2.0, target_tpr=0.95)
        assert classify(2.0, cfg).label == 0

    def test_sentinel_accepts_everything(self):
        cfg = DetectorConfig(tau=-math.inf, target_tpr=0.95)
        assert classify(-100.0, cfg).label == 1

    def test_nan_score_rejected(self):
        cfg = DetectorConfig(tau=0.0, target_tpr=0.95)
        with pytest.raises(InputError):
            classify(float("nan"), cfg)

    def test_raising_tau_never_accepts_more(self):
        rng = np.random.default_rng(23)
        scores = rng.normal(size=200)
        taus = np.sort(rng.normal(size=20))
        for s in scores[:50]:
            labels = [classify(float(s), DetectorConfig(float(t), 0.9)).label for t in taus]
            # labels must be non-increasing as tau rises
            assert all(a >= b for a, b in zip(labels, labels[1:]))


class TestFilterAndPredict:
    def test_accept_then_argmax(self):
        cfg = DetectorConfig(tau=-math.inf, target_tpr=0.95, score_kind="neg_energy")
        assert filter_and_predict([5.0, 1.0, 1.0], cfg) == 0

    def test_rejection(self):
        # neg-energy of [0,0,0] is ln(3) ~= 1.0986 <= 10 -> rejected
        cfg = DetectorConfig(tau=10.0, target_tpr=0.95, score_kind="neg_energy")
        assert filter_and_predict([0.0, 0.0, 0.0], cfg) is None

    def test_argmax_tie_breaks_to_lowest_index(self):
        cfg = DetectorConfig(tau=-math.inf, target_tpr=0.95, score_kind="neg_energy")
        assert filter_and_predict([2.0, 2.0], cfg) == 0

    def test_msp_kind(self):
        cfg = DetectorConfig(tau=0.9, target_tpr=0.95, score_kind="msp")
        # msp of [0, 0] is 0.5 <= 0.9 -> rejected
        assert filter_and_predict([0.0, 0.0], cfg) is None
        # msp of [10, 0] ~= 1.0 > 0.9 -> class 0
        assert filter_and_predict([10.0, 0.0], cfg) == 0

    def test_gda_kinds_rejected(self):
        cfg = DetectorConfig(tau=0.0, target_tpr=0.95, score_kind="mahalanobis")
        with pytest.raises(InputError):
            filter_and_predict([1.0, 2.0], cfg)

    def test_class_invariant_to_shift_and_temperature(self):
        cfg = DetectorConfig(tau=-math.inf, target_tpr=0.95, score_kind="neg_energy")
        rng = np.random.default_rng(29)
        for _ in range(100):
            f = rng.normal(size=int(rng.integers(2, 8)))
            base = filter_and_predict(f, cfg)
            assert filter_and_predict(f + 37.5, cfg) == base
            assert filter_and_predict(f, cfg, temp=13.0) == base


class TestDetectorConfigJson:
    def test_round_trip_finite_tau(self, tmp_path):
        cfg = DetectorConfig(tau=1.25, target_tpr=0.95, score_kind="msp")
        p = tmp_path / "det.json"
        cfg.save(p)
        assert DetectorConfig.load(p) == cfg

    def test_round_trip_minus_inf(self, tmp_path):
        cfg = DetectorConfig(tau=-math.inf, target_tpr=0.99)
        p = tmp_path / "det.json"
        cfg.save(p)
        doc = json.loads(p.read_text())
        assert doc["tau"] == "-inf"
        assert DetectorConfig.load(p) == cfg

    def test_rejects_unknown_score_kind(self):
        with pytest.raises(InputError):
            DetectorConfig(tau=0.0, target_tpr=0.95, score_kind="banana")

    def test_rejects_nan_tau(self):
        with pytest.raises(InputError):
            DetectorConfig(tau=float("nan"), target_tpr=0.95)

    def test_rejects_plus_inf_tau(self):
        with pytest.raises(InputError):
            DetectorConfig(tau=math.inf, target_tpr=0.95)
