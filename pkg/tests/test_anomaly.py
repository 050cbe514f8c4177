import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crowdwatch.anomaly import (AnomalyEvent, Detector, DetectorConfig, NormalizationMismatch,
                                Scope, anomaly_score, classify_scope, scores_from_arrays)
from crowdwatch.behavior import FeatureVector

vec7 = st.lists(st.floats(-1e3, 1e3), min_size=7, max_size=7).map(np.array)


def fv(values, epoch=0):
    return FeatureVector(np.asarray(values, float), epoch)


def test_score_examples():
    z = np.zeros(7)
    assert anomaly_score(fv(z), fv(z)) == 0.0
    assert anomaly_score(fv([2, 2, 0, 0, 0, 0, 0]), fv(z)) == pytest.approx(2.8284271247, abs=1e-9)


def test_score_requires_same_epoch():
    with pytest.raises(NormalizationMismatch):
        anomaly_score(fv(np.zeros(7), 1), fv(np.zeros(7), 2))


@settings(max_examples=100, deadline=None)
@given(vec7, vec7, vec7)
def test_score_is_a_metric(a, b, c):
    ab = anomaly_score(fv(a), fv(b))
    assert ab >= 0
    assert ab == anomaly_score(fv(b), fv(a))
    assert anomaly_score(fv(a), fv(a)) == 0
    assert ab <= anomaly_score(fv(a), fv(c)) + anomaly_score(fv(c), fv(b)) + 1e-9 * (1 + ab)


def test_scores_from_arrays_matches_scalar():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(5, 7)), rng.normal(size=(5, 7))
    ref = [anomaly_score(fv(x), fv(y)) for x, y in zip(a, b)]
    assert scores_from_arrays(a, b) == pytest.approx(ref)


def test_config_validation():
    with pytest.raises(ValueError):
        DetectorConfig(threshold=0)
    with pytest.raises(ValueError):
        DetectorConfig(hysteresis_m=4, hysteresis_n=3)
    with pytest.raises(ValueError):
        DetectorConfig(global_fraction=0)


def test_event_requires_exceedance():
    with pytest.raises(ValueError):
        AnomalyEvent(0, "a", 1.0, 1.0)


def test_pure_thresholding_with_one_of_one():
    det = Detector(DetectorConfig(threshold=1.0, hysteresis_m=1, hysteresis_n=1,
                                  global_fraction=1.0))
    ev = det.step(0, ["a", "b", "c"], [0.5, 1.0, 1.5])
    assert [(e.agent_id, e.score) for e in ev] == [("c", 1.5)]


def test_hysteresis_needs_m_of_n():
    det = Detector(DetectorConfig(threshold=1.0, hysteresis_m=3, hysteresis_n=5))
    seq = [2, 2, 0, 2, 2, 0, 0, 0, 2]
    flagged = [bool(det.step(t, ["a", "b"], [s, 0.0])) for t, s in enumerate(seq)]
    assert flagged == [False, False, False, True, True, False, False, False, False]


def test_forget_resets_memory():
    det = Detector(DetectorConfig(hysteresis_m=2, hysteresis_n=2))
    det.step(0, ["a"], [5.0], crowd_size=10)
    det.forget(["a"])
    assert det.step(1, ["a"], [5.0], crowd_size=10) == []


def test_scope_boundary_is_inclusive():
    cfg = DetectorConfig(global_fraction=0.5)
    events = [AnomalyEvent(0, a, 2.0, 1.0) for a in ("a", "b")]
    assert {e.scope for e in classify_scope(events, 4, cfg)} == {Scope.GLOBAL}
    assert {e.scope for e in classify_scope(events, 5, cfg)} == {Scope.LOCAL}
    det = Detector(DetectorConfig(hysteresis_m=1, hysteresis_n=1, global_fraction=0.5))
    assert {e.scope for e in det.step(0, list("abcd"), [2, 2, 0, 0])} == {Scope.GLOBAL}
    assert {e.scope for e in det.step(1, list("abcde"), [2, 2, 0, 0, 0])} == {Scope.LOCAL}


def test_homogeneous_scores_produce_no_events():
    det = Detector()
    for t in range(20):
        assert det.step(t, [str(i) for i in range(10)], np.zeros(10)) == []


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 5.0), st.floats(0.1, 5.0))
def test_events_monotone_in_threshold(seed, t1, t2):
    lo, hi = sorted((t1, t2))
    rng = np.random.default_rng(seed)
    ids = [str(i) for i in range(6)]
    scores = rng.exponential(1.5, (25, 6))
    runs = {}
    for th in (lo, hi):
        det = Detector(DetectorConfig(threshold=th))
        runs[th] = {(e.frame, e.agent_id) for t in range(25)
                    for e in det.step(t, ids, scores[t])}
    assert runs[hi] <= runs[lo]
    assert all(scores[f, int(a)] > hi for f, a in runs[hi])
