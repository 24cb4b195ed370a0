import numpy as np
import pytest
from hypothesis import given, strategies as st

from cleavetrack.core import BBox, NodeState, Tracklet, TrackNode
from cleavetrack.reconnect import (
    GateConfig,
    associate,
    finalize,
    gap_fill,
    gate,
    merge,
    smooth,
    tracklet_feature,
)
from cleavetrack.seqnet import GruWeights, HeadWeights, SeqModel
from cleavetrack.synth import noisy, random_anchors


def _tr(tid, frames, xs, ys=None, size=(2.0, 2.0), state=NodeState.TRACKED, expired=False, det0=0):
    ys = ys if ys is not None else [0.0] * len(frames)
    nodes = [TrackNode(f, tid, BBox(float(x), float(y), *size), det_index=det0) for f, x, y in zip(frames, xs, ys)]
    nodes[-1] = TrackNode(nodes[-1].t, tid, nodes[-1].box, state, det_index=det0)
    return Tracklet(tid, nodes, expired)


def test_gate_examples():
    tail = _tr(1, [9, 10], [-1, 0])
    assert gate(tail, _tr(2, [12, 13], [2, 3]))
    assert not gate(tail, _tr(2, [12], [50], [50]))
    assert not gate(tail, _tr(2, [10, 11], [1, 2]))
    assert not gate(tail, _tr(2, [5, 6], [0, 0]))


def test_gate_horizon_and_slack():
    tail = _tr(1, [9, 10], [0, 0])
    far = _tr(2, [140], [0])
    assert gate(tail, _tr(2, [130], [0]))
    assert not gate(tail, far)
    assert gate(tail, far, GateConfig(max_gap=200))
    off = _tr(2, [20], [5])  # 5 px away, boxes 2 px wide
    assert not gate(tail, off)
    assert gate(tail, off, GateConfig(mu=0.5))


def test_gate_gives_up_exited_but_not_expired():
    ended = _tr(1, [1, 2], [0, 0], state=NodeState.QUITTED)
    head = _tr(2, [4, 5], [0, 0])
    assert not gate(ended, head)
    assert gate(_tr(1, [1, 2], [0, 0], state=NodeState.QUITTED, expired=True), head)


boxes = st.tuples(st.integers(1, 30), st.floats(-50, 50), st.floats(-50, 50))


@given(boxes, boxes, boxes, boxes, st.floats(0, 3))
def test_gate_antisymmetric(a0, a1, b0, b1, mu):
    def mk(tid, p, q):
        f0, f1 = sorted((p[0], q[0]))
        if f0 == f1:
            return _tr(tid, [f0], [p[1]], [p[2]])
        return _tr(tid, [f0, f1], [p[1], q[1]], [p[2], q[2]])

    a, b = mk(1, a0, a1), mk(2, b0, b1)
    cfg = GateConfig(mu=mu)
    assert not (gate(a, b, cfg) and gate(b, a, cfg))


def _zero_model(bias):
    d = len(bias)
    return SeqModel(GruWeights.zeros(1, 3, 4), HeadWeights(np.zeros((d, 4)), np.asarray(bias, float), np.zeros((2, d)), np.zeros(2)))


def _table(*tracks, rng=None, vec=None):
    out = {}
    for tau in tracks:
        for n in tau.nodes:
            out[(n.t, n.det_index)] = vec(tau) if vec else rng.normal(size=3)
    return out


def test_tracklet_feature_examples(rng):
    tau = _tr(1, [1, 2, 3], [0, 1, 2])
    emb = _table(tau, vec=lambda _: np.ones(3))
    f = tracklet_feature(tau, emb, _zero_model([3.0, -1.0, 4.0]), normalize=False)
    np.testing.assert_array_equal(f, [3.0, 0.0, 4.0])
    np.testing.assert_allclose(tracklet_feature(tau, emb, _zero_model([3.0, -1.0, 4.0])), [0.6, 0.0, 0.8])
    model = SeqModel.init(3, 4, 2, 5, 2, rng=rng)
    emb = _table(tau, rng=rng)
    np.testing.assert_array_equal(tracklet_feature(tau, emb, model), tracklet_feature(tau, emb, model))


def _features(mapping):
    return lambda tau: np.asarray(mapping[tau.tracklet_id], dtype=float)


def test_associate_examples():
    a = _tr(1, [1, 2, 3], [0, 1, 2])
    b = _tr(2, [5, 6], [4, 5])
    out = associate([b, a], None, None, feature_fn=_features({1: [1, 0], 2: [0.99, 0.01]}))
    assert len(out) == 1 and out[0].tracklet_id == 1 and out[0].frames == [1, 2, 3, 5, 6]
    assert all(n.id == 1 for n in out[0].nodes)

    out = associate([a, b], None, None, feature_fn=_features({1: [1, 0], 2: [0, 1]}))
    assert len(out) == 2  # squared distance 2 exceeds the threshold

    gone = _tr(1, [1, 2, 3], [0, 1, 2], state=NodeState.QUITTED)
    out = associate([gone, b], None, None, feature_fn=_features({1: [1, 0], 2: [1, 0]}))
    assert len(out) == 2


def test_associate_chains_and_prefers_closer_feature():
    a = _tr(1, [1, 2], [0, 1])
    b = _tr(2, [4, 5], [3, 4])
    c = _tr(3, [7, 8], [6, 7])
    decoy = _tr(4, [4, 5], [3, 4], det0=1)
    feats = {1: [1, 0, 0], 2: [0.9, 0.1, 0], 3: [0.95, 0.05, 0], 4: [0.6, 0.4, 0]}
    out = associate([a, b, c, decoy], None, None, feature_fn=_features(feats))
    ids = {tau.tracklet_id: tau.frames for tau in out}
    assert ids[1] == [1, 2, 4, 5, 7, 8]
    assert ids[4] == [4, 5]


def _random_pool(seed):
    rng = np.random.default_rng(seed)
    pool, feats = [], {}
    for tid in range(1, 9):
        f0 = int(rng.integers(1, 40))
        L = int(rng.integers(1, 6))
        x0 = float(rng.uniform(0, 20))
        pool.append(_tr(tid, list(range(f0, f0 + L)), [x0 + k * 0.5 for k in range(L)], size=(20.0, 20.0)))
        feats[tid] = rng.normal(size=4) * 0.3
    return pool, feats


@given(st.integers(0, 2**16))
def test_associate_output_is_consistent(seed):
    pool, feats = _random_pool(seed)
    out = associate(pool, None, None, feature_fn=_features(feats), sim_thresh=0.5)
    before = sorted((n.t, n.det_index, n.box.tlwh()) for tau in pool for n in tau.nodes)
    after = sorted((n.t, n.det_index, n.box.tlwh()) for tau in out for n in tau.nodes)
    assert before == after
    for tau in out:
        assert all(a < b for a, b in zip(tau.frames, tau.frames[1:]))


@given(st.integers(0, 2**16), st.sampled_from([0.25, 0.5, 2.0, 4.0, 16.0]))
def test_associate_scale_invariance(seed, c):
    pool, feats = _random_pool(seed)
    base = associate(pool, None, None, feature_fn=_features(feats), sim_thresh=0.5)
    scaled = {k: np.asarray(v) * c for k, v in feats.items()}
    again = associate(pool, None, None, feature_fn=_features(scaled), sim_thresh=0.5 * c * c)
    assert [(t.tracklet_id, t.frames) for t in base] == [(t.tracklet_id, t.frames) for t in again]


def test_merge_rejects_overlap():
    with pytest.raises(ValueError):
        merge(_tr(1, [1, 3], [0, 0]), _tr(2, [3, 4], [0, 0]))


def test_gap_fill_examples():
    tau = Tracklet(1, [TrackNode(10, 1, BBox(0, 0, 2, 2), det_index=0), TrackNode(13, 1, BBox(3, 0, 2, 2), det_index=0)])
    g = gap_fill(tau)
    assert g.frames == [10, 11, 12, 13]
    assert [n.box.cx for n in g.nodes] == [0, 1, 2, 3]
    assert [n.interpolated for n in g.nodes] == [False, True, True, False]
    assert g.nodes[1].det_index == -1

    dense = _tr(1, [1, 2, 3], [0, 5, 1])
    assert gap_fill(dense) is dense

    quad = _tr(1, [1, 2, 4, 5], [1, 4, 16, 25])
    assert gap_fill(quad).nodes[2].box.cx == pytest.approx(9.0, abs=1e-9)


def test_gap_fill_keeps_sizes_positive():
    # a steep quadratic in height would dip below zero across the gap
    tau = Tracklet(
        1,
        [TrackNode(t, 1, BBox(0, 0, 5, h), det_index=0) for t, h in [(1, 40), (2, 10), (3, 1), (30, 1), (31, 10), (32, 40)]],
    )
    assert all(n.box.h > 0 for n in gap_fill(tau).nodes)


@given(st.lists(st.tuples(st.integers(1, 6), st.floats(-100, 100), st.floats(1, 50)), min_size=1, max_size=12))
def test_gap_fill_invariants(steps):
    frames, t = [], 0
    for dt, _, _ in steps:
        t += dt
        frames.append(t)
    tau = Tracklet(1, [TrackNode(f, 1, BBox(x, 0, w, w), det_index=0) for f, (_, x, w) in zip(frames, steps)])
    g = gap_fill(tau)
    assert g.frames == list(range(frames[0], frames[-1] + 1))
    assert [n for n in g.nodes if not n.interpolated] == list(tau.nodes)


def test_smooth_examples():
    tau = _tr(1, [1, 2, 3], [0, 3, 0])
    assert smooth(tau, 1) is tau
    assert [n.box.cx for n in smooth(tau, 3).nodes] == [1.5, 1.0, 1.5]
    const = _tr(1, list(range(1, 9)), [7.3] * 8, [-2.1] * 8)
    for w in (1, 3, 5, 7, 9):
        assert [n.box for n in smooth(const, w).nodes] == [n.box for n in const.nodes]
    for w in (0, 2, 4, -1):
        with pytest.raises(ValueError):
            smooth(tau, w)


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=30), st.sampled_from([1, 3, 5, 7]))
def test_smooth_invariants(xs, w):
    tau = _tr(1, list(range(1, len(xs) + 1)), xs)
    s = smooth(tau, w)
    assert s.frames == tau.frames and [n.id for n in s.nodes] == [n.id for n in tau.nodes]
    half = w // 2
    # the mean can only move through the truncated end windows
    if len(xs) > 2 * half:
        inner = slice(half, len(xs) - half)
        raw = np.convolve(xs, np.ones(w) / w, mode="valid")
        np.testing.assert_allclose([n.box.cx for n in s.nodes][inner], raw, atol=1e-9)
    if w == 1:
        assert s is tau


def test_finalize_fills_then_smooths():
    tau = _tr(1, [1, 2, 5, 6], [0, 1, 4, 5])
    (out,) = finalize([tau], 3)
    assert out.frames == [1, 2, 3, 4, 5, 6]
    np.testing.assert_allclose([n.box.cx for n in out.nodes], [0.5, 1, 2, 3, 4, 4.5], atol=1e-12)


def test_trained_features_separate_identities(trained_model):
    model, _ = trained_model
    rng = np.random.default_rng(777)
    anchors = random_anchors(10, 128, rng)

    def piece(k, tid):
        L = int(rng.integers(10, 40))
        tau = Tracklet(tid, [TrackNode(t + 1, tid, BBox(100, 100, 40, 100), det_index=tid) for t in range(L)])
        emb = {(n.t, n.det_index): noisy(anchors[k], 0.1, rng) for n in tau.nodes}
        return tracklet_feature(tau, emb, model)

    good = 0
    for trial in range(50):
        a, b = rng.choice(10, 2, replace=False)
        fa, fa2, fb = piece(a, 1), piece(a, 2), piece(b, 3)
        good += np.sum((fa - fa2) ** 2) < np.sum((fa - fb) ** 2)
    assert good >= 45
