import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cleavetrack.cleave import (
    CleaveConfig,
    Reliability,
    best_threshold,
    cleave_all,
    cleave_tracklet,
    distance_vector,
    find_split,
    label_reliability,
)
from cleavetrack.core import BBox, Tracklet, TrackNode
from cleavetrack.generation import MissingEmbeddingError
from cleavetrack.seqnet import SeqModel, SeqOutputs
from cleavetrack.synth import noisy, random_anchors

dvs = arrays(np.float64, st.integers(0, 30), elements=st.floats(0, 10, allow_nan=False))


def _tracklet(ids, tid=1):
    return Tracklet(tid, [TrackNode(k + 1, i, BBox(50.0 + k, 60.0, 20.0, 40.0), det_index=0) for k, i in enumerate(ids)])


def _table(tau, E):
    return {(n.t, n.det_index): E[k] for k, n in enumerate(tau.nodes)}


def _key(n):
    return (n.t, n.det_index, n.box)


def test_distance_vector_examples(rng):
    v = rng.normal(size=(1, 5))
    same = np.tile(v, (10, 1))
    dv = distance_vector(SeqOutputs(same, same.copy()))
    assert dv.shape == (9,) and not dv.any()
    assert distance_vector(SeqOutputs(v, v)).shape == (0,)

    # prefix summaries a up to boundary 4 drifting to b later, suffix summaries b from 4 drifting to a before
    a, b = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    L = 10
    lam = lambda i: min(1.0, abs(i - 4) / 6)
    prefix = np.array([a + lam(i) * (b - a) if i > 4 else a for i in range(1, L)])
    suffix = np.array([b + lam(i) * (a - b) if i < 4 else b for i in range(1, L)])
    fwd = np.vstack([prefix, np.zeros(2)])
    bwd = np.vstack([suffix[::-1], np.zeros(2)])  # backward[L-i-1] = suffix(i)
    dv = distance_vector(SeqOutputs(fwd, bwd))
    brute = [float(((prefix[i - 1] - suffix[i - 1]) ** 2).sum()) for i in range(1, L)]
    np.testing.assert_allclose(dv, brute, rtol=0, atol=1e-15)
    assert int(np.argmax(dv)) + 1 == 4


def test_find_split_examples():
    cfg = CleaveConfig(split_thresh=0.5)
    assert find_split(np.full(9, 0.3), cfg) is None
    # the peak after element 4 in a length-10 tracklet
    assert find_split(np.array([0.1, 0.3, 0.9, 1.7, 0.8, 0.2, 0.1, 0.1, 0.0]), cfg) == 4
    assert find_split(np.zeros(0), cfg) is None
    # ties go low; a peak at the edge is not admissible
    assert find_split(np.array([0.0, 2.0, 0.0, 2.0, 0.0]), cfg) == 2
    assert find_split(np.array([5.0, 0.6, 0.0, 0.0]), cfg) == 2
    assert find_split(np.array([0.0, 0.0, 0.0, 9.0]), cfg) is None


@given(dvs, st.integers(2, 6), st.floats(0.01, 5))
def test_find_split_respects_min_segment(dv, m, thr):
    k = find_split(dv, CleaveConfig(split_thresh=thr, min_segment=m))
    if k is not None:
        L = dv.shape[0] + 1
        assert k >= m and L - k >= m
        assert dv[k - 1] > thr


@given(dvs, st.floats(0.01, 5), st.floats(0, 5))
def test_raising_threshold_never_adds_a_split(dv, thr, bump):
    lo = find_split(dv, CleaveConfig(split_thresh=thr))
    hi = find_split(dv, CleaveConfig(split_thresh=thr + bump))
    if lo is None:
        assert hi is None
    if hi is not None:
        assert hi == lo


def test_label_reliability():
    assert label_reliability(_tracklet([3, 3, 3])) is Reliability.RELIABLE
    assert label_reliability(_tracklet([3, 3, 5])) is Reliability.UNRELIABLE
    assert label_reliability(_tracklet([4])) is Reliability.RELIABLE
    with pytest.raises(ValueError):
        label_reliability(_tracklet([3, -1]))


def test_best_threshold():
    assert best_threshold([2.0, 3.0], [0.5, 1.0]) == 1.5
    t = best_threshold([0.4, 2.0, 3.0], [0.1, 1.0])
    assert 1.0 <= t < 2.0
    with pytest.raises(ValueError):
        best_threshold([], [1.0])


def test_missing_embedding_is_an_error(rng):
    tau = _tracklet([1] * 5)
    with pytest.raises(MissingEmbeddingError):
        cleave_tracklet(tau, {}, SeqModel.init(4, 4, 1, 4, 2, rng=rng))


@given(st.integers(4, 40), st.integers(0, 2**16), st.floats(1e-4, 0.05))
def test_cleave_preserves_nodes_and_order(L, seed, thr):
    rng = np.random.default_rng(seed)
    model = SeqModel.init(4, 6, 2, 4, 2, rng=rng)
    tau = _tracklet([1] * L)
    E = rng.normal(size=(L, 4))
    parts = cleave_all([tau], _table(tau, E), model, CleaveConfig(split_thresh=thr))
    assert [_key(n) for p in parts for n in p.nodes] == [_key(n) for n in tau.nodes]
    assert all(len(p) >= 2 for p in parts)
    if len(parts) > 1:
        assert len({p.tracklet_id for p in parts}) == len(parts)
        assert tau.tracklet_id not in {p.tracklet_id for p in parts}


def _merge(anchors, runs, rng, sigma=0.1):
    ids = [i for i, n in runs for _ in range(n)]
    E = np.array([noisy(anchors[i], sigma, rng) for i in ids])
    return _tracklet([i + 1 for i in ids]), E


def test_trained_model_splits_merge_at_switch(trained_model, calibrated):
    model, _ = trained_model
    cfg = CleaveConfig(split_thresh=calibrated)
    rng = np.random.default_rng(4242)
    anchors = random_anchors(6, 128, rng)
    hits = 0
    for trial in range(10):
        a, b = rng.choice(6, 2, replace=False)
        tau, E = _merge(anchors, [(a, 7), (b, 8)], rng)
        parts = cleave_tracklet(tau, _table(tau, E), model, cfg)
        hits += len(parts) == 2 and abs(len(parts[0]) - 7) <= 1
    assert hits >= 9


def test_trained_model_leaves_pure_tracklet(trained_model, calibrated):
    model, _ = trained_model
    rng = np.random.default_rng(4343)
    anchors = random_anchors(6, 128, rng)
    kept = 0
    for trial in range(10):
        tau, E = _merge(anchors, [(int(rng.integers(6)), int(rng.integers(10, 60)))], rng)
        kept += len(cleave_tracklet(tau, _table(tau, E), model, CleaveConfig(split_thresh=calibrated))) == 1
    assert kept >= 9


def test_three_identities_give_three_pieces(trained_model, calibrated):
    model, _ = trained_model
    rng = np.random.default_rng(4444)
    anchors = random_anchors(6, 128, rng)
    tau, E = _merge(anchors, [(0, 12), (3, 10), (5, 14)], rng)
    parts = cleave_tracklet(tau, _table(tau, E), model, CleaveConfig(split_thresh=calibrated))
    assert [len(p) for p in parts] == [12, 10, 14]
    flat = cleave_tracklet(tau, _table(tau, E), model, CleaveConfig(split_thresh=calibrated, recursive=False))
    assert len(flat) == 2
