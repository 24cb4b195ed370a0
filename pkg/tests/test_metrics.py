import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cleavetrack.core import BBox, Tracklet, TrackNode, iou
from cleavetrack.metrics import DuplicateIdError, evaluate, match_frame, mota
from cleavetrack.synth import SceneSpec, generate_scene

W = 40.0


def box(x, y=100.0):
    return BBox(x, y, W, 100.0)


def track(tid, frames, x0=100.0, dx=0.0, y=100.0):
    return Tracklet(tid, [TrackNode(f, tid, box(x0 + dx * (f - frames[0]), y)) for f in frames])


def gt_from_scene(sc):
    return [Tracklet(k, nodes) for k, nodes in sorted(sc.gt_tracks().items())]


def test_mota_identity():
    assert mota(1, 2, 1, 10) == 0.6
    assert math.isnan(mota(0, 0, 0, 0))


def test_match_frame_examples():
    g = [(1, box(100)), (2, box(300))]
    assert match_frame(g, [(7, box(100)), (8, box(300))]) == [(1, 7), (2, 8)]
    assert match_frame([], [(7, box(100))]) == []
    with pytest.raises(ValueError):
        match_frame(g, g, iou_min=0.0)


def _shift(target_iou):
    # equal boxes shifted horizontally by s: IOU = (W - s) / (W + s)
    return W * (1 - target_iou) / (1 + target_iou)


def test_carryover_keeps_a_weaker_pair():
    g = [(1, box(100))]
    h = [(5, box(100 + _shift(0.55))), (6, box(100 - _shift(0.6)))]
    assert iou(g[0][1], h[0][1]) == pytest.approx(0.55)
    assert iou(g[0][1], h[1][1]) == pytest.approx(0.6)
    assert match_frame(g, h) == [(1, 6)]
    assert match_frame(g, h, carryover={1: 5}) == [(1, 5)]
    # below the threshold the carried pair is dropped
    far = [(5, box(100 + _shift(0.4))), (6, box(100 - _shift(0.6)))]
    assert match_frame(g, far, carryover={1: 5}) == [(1, 6)]


def test_perfect_run():
    gt = [track(1, range(1, 11)), track(2, range(3, 9), x0=400)]
    rep = evaluate(gt, gt)
    assert (rep.MOTA, rep.IDF1, rep.IDSw, rep.FP, rep.FN, rep.Frag) == (1.0, 1.0, 0, 0, 0, 0)
    assert rep.MT == 2 and rep.ML == 0


def test_hand_computed_report():
    gt = [track(1, range(1, 6)), track(2, range(1, 6), x0=500)]
    hyp = [
        track(5, [1, 2]),
        track(6, [3, 4, 5]),
        track(7, [1, 2, 3], x0=500),
        track(9, [1], x0=900),
    ]
    rep = evaluate(gt, hyp)
    assert (rep.total_gt, rep.FP, rep.FN, rep.IDSw) == (10, 1, 2, 1)
    assert rep.MOTA == 0.6
    assert f"{rep.MOTA:.6f}" == "0.600000"
    # identity matches: 1<->6 (3 frames) and 2<->7 (3 frames)
    assert rep.IDTP == 6
    assert rep.IDF1 == pytest.approx(2 * 6 / (10 + 9))


def test_switch_and_fragmentation():
    gt = [track(1, range(1, 11))]
    rep = evaluate(gt, [track(5, range(1, 6)), track(6, range(6, 11))])
    assert (rep.IDSw, rep.Frag, rep.FN) == (1, 0, 0)
    rep = evaluate(gt, [track(5, range(1, 6)), track(6, range(7, 11))])
    assert (rep.IDSw, rep.Frag, rep.FN) == (1, 1, 1)
    rep = evaluate(gt, [track(5, [1, 2, 3, 6, 7, 8, 9, 10])])
    assert (rep.IDSw, rep.Frag) == (0, 1)


def test_mt_ml_and_duplicates():
    gt = [track(1, range(1, 11)), track(2, range(1, 11), x0=500)]
    rep = evaluate(gt, [track(5, range(1, 9)), track(6, range(1, 3), x0=500)])
    assert (rep.MT, rep.ML) == (1, 1)
    assert rep.MT_frac == 0.5
    dup = {1: [(3, box(1)), (3, box(200))]}
    with pytest.raises(DuplicateIdError):
        evaluate(dup, dup)


@given(st.integers(0, 50))
def test_gt_against_itself_is_perfect(seed):
    sc = generate_scene(SceneSpec(n_identities=6, n_frames=60, n_random_crossings=1, seed=seed))
    gt = gt_from_scene(sc)
    rep = evaluate(gt, gt)
    assert (rep.MOTA, rep.IDF1, rep.IDSw, rep.FP, rep.FN) == (1.0, 1.0, 0, 0, 0)


@given(st.integers(0, 50), st.integers(1, 60))
def test_spurious_box_costs_exactly_one_over_total(seed, frame):
    sc = generate_scene(SceneSpec(n_identities=5, n_frames=60, seed=seed))
    gt = gt_from_scene(sc)
    # a box far outside the image overlaps nothing
    extra = Tracklet(999, [TrackNode(frame, 999, BBox(-500.0, -500.0, 10.0, 10.0))])
    rep = evaluate(gt, gt + [extra])
    assert rep.FP == 1
    assert rep.MOTA == 1.0 - 1 / rep.total_gt
    assert rep.MOTA == mota(rep.FP, rep.FN, rep.IDSw, rep.total_gt)


@given(st.integers(0, 2**16))
def test_report_invariants_on_random_hypotheses(seed):
    rng = np.random.default_rng(seed)
    gt = [track(k, range(1, 15), x0=150.0 * k, dx=1.0) for k in range(1, 4)]
    hyp = []
    for tid in range(1, int(rng.integers(1, 7))):
        f0 = int(rng.integers(1, 14))
        f1 = int(rng.integers(f0, 15))
        hyp.append(track(tid + 10, range(f0, f1 + 1), x0=150.0 * int(rng.integers(1, 4)) + f0 - 1, dx=1.0))
    try:
        rep = evaluate(gt, hyp)
    except DuplicateIdError:
        return
    assert min(rep.FP, rep.FN, rep.IDSw, rep.Frag) >= 0
    assert 0.0 <= rep.IDF1 <= 1.0
    assert rep.MOTA == 1.0 - (rep.FP + rep.FN + rep.IDSw) / rep.total_gt
    assert rep.IDTP <= min(rep.total_gt, rep.total_hyp)


def test_idf1_one_iff_bijection():
    gt = [track(1, range(1, 6)), track(2, range(1, 6), x0=500)]
    relabelled = [track(8, range(1, 6)), track(3, range(1, 6), x0=500)]
    assert evaluate(gt, relabelled).IDF1 == 1.0
    swapped = [
        Tracklet(8, [TrackNode(f, 8, box(100 if f <= 3 else 500)) for f in range(1, 6)]),
        Tracklet(3, [TrackNode(f, 3, box(500 if f <= 3 else 100)) for f in range(1, 6)]),
    ]
    assert evaluate(gt, swapped).IDF1 < 1.0


def test_report_serialisation():
    gt = [track(1, range(1, 4))]
    rep = evaluate(gt, gt)
    head, row = rep.to_csv().splitlines()
    assert head.split(",")[0] == "MOTA" and row.split(",")[0] == "1.000000"
    assert "IDF1" in rep.to_text()
