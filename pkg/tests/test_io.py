import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cleavetrack.core import BBox, Detection, NodeState, Tracklet, TrackNode
from cleavetrack.io import (
    DataError,
    format_tracks,
    parse_tracks,
    quantize_box,
    quantize_tracks,
    read_detections,
    read_embeddings,
    read_tracks,
    write_detections,
    write_embeddings,
    write_results,
)


def random_dets(rng, n_frames=6, per=4):
    out = []
    for f in range(1, n_frames + 1):
        for k in range(int(rng.integers(0, per + 1))):
            box = BBox(*rng.uniform(-50, 1300, 2), *rng.uniform(1, 200, 2))
            out.append(Detection(f, box, float(rng.uniform(0, 1)), k))
    return out


def random_tracks(rng, n=4):
    out = []
    for tid in range(1, n + 1):
        f = int(rng.integers(1, 20))
        nodes = []
        for k in range(int(rng.integers(1, 8))):
            interp = bool(rng.random() < 0.2)
            nodes.append(
                TrackNode(
                    f,
                    tid,
                    BBox(*rng.uniform(0, 1000, 2), *rng.uniform(5, 100, 2)),
                    NodeState(int(rng.integers(0, 2))),
                    det_index=-1 if interp else int(rng.integers(0, 9)),
                    confidence=float(rng.uniform(0, 1)),
                    interpolated=interp,
                )
            )
            f += int(rng.integers(1, 4))
        out.append(Tracklet(tid, nodes, bool(rng.random() < 0.3)))
    return out


def test_detection_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    p = tmp_path / "det.txt"
    for _ in range(100):
        dets = random_dets(rng)
        write_detections(dets, p)
        back = read_detections(p)
        assert [(d.frame, d.det_index) for d in back] == sorted((d.frame, d.det_index) for d in dets)
        ref = {(d.frame, d.det_index): d for d in dets}
        for d in back:
            src = ref[(d.frame, d.det_index)]
            assert d.box == quantize_box(src.box)
            assert d.confidence == float(f"{src.confidence:.6f}")
        text = p.read_text()
        write_detections(back, p)
        assert p.read_text() == text


def test_results_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    p = tmp_path / "res.txt"
    for _ in range(100):
        tracks = random_tracks(rng)
        write_results(tracks, p)
        back = read_tracks(p)
        assert back == quantize_tracks(tracks)
        assert format_tracks(back) == p.read_text()
        assert [t.expired for t in back] == [t.expired for t in tracks]
        for a, b in zip(tracks, back):
            assert [n.interpolated for n in a.nodes] == [n.interpolated for n in b.nodes]
            assert [n.det_index for n in a.nodes] == [n.det_index for n in b.nodes]


def test_results_sorted_by_frame_then_id():
    rows = format_tracks(random_tracks(np.random.default_rng(2), n=6)).splitlines()
    keys = [tuple(int(v) for v in r.split(",")[:2]) for r in rows]
    assert keys == sorted(keys)


def test_embedding_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    p = tmp_path / "emb.txt"
    for _ in range(100):
        d = int(rng.integers(1, 9))
        table = {(int(f), int(k)): rng.normal(size=d) * 10.0 ** rng.integers(-8, 8) for f, k in rng.integers(1, 50, (5, 2))}
        write_embeddings(table, p)
        back = read_embeddings(p)
        assert back.keys() == table.keys()
        assert all(np.array_equal(back[k], table[k]) for k in table)


@pytest.mark.parametrize(
    "text,line,msg",
    [
        ("1,-1,0,0,10,10,0.9\n1,-1,0,0,10\n", 2, "fields"),
        ("1,-1,0,0,10,10,0.9\n\nx,-1,0,0,10,10,0.9\n", 3, "non-numeric"),
        ("1.5,-1,0,0,10,10,0.9\n", 1, "integer"),
        ("0,-1,0,0,10,10,0.9\n", 1, "frame"),
        ("1,-1,0,0,10,10,1.5\n", 1, "confidence"),
        ("1,-1,0,0,0,10,0.5\n", 1, "positive"),
        ("1,-1,0,0,nan,10,0.5\n", 1, "non-finite"),
    ],
)
def test_detection_errors_name_the_line(tmp_path, text, line, msg):
    p = tmp_path / "bad.txt"
    p.write_text(text)
    with pytest.raises(DataError, match=msg) as e:
        read_detections(p)
    assert e.value.line == line
    assert f"{p}:{line}" in str(e.value)


def test_track_errors(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("1,3,0,0,10,10,1,-1,0,-1\n1,3,5,5,10,10,1,-1,0,-1\n")
    with pytest.raises(DataError) as e:
        read_tracks(p)
    assert e.value.line == 2


def test_foreign_ground_truth_columns():
    # MOT ground truth puts class and visibility in the trailing columns
    (tau,) = parse_tracks("1,4,10,20,30,40,1,1,0.83\n2,4,11,20,30,40,1,1,1.0\n")
    assert tau.frames == [1, 2] and tau.nodes[0].box == BBox.from_tlwh(10, 20, 30, 40)
    assert tau.tail.state is NodeState.LOST and not tau.expired


@pytest.mark.parametrize(
    "text,line",
    [
        ("", None),
        ("dims 3\n", 1),
        ("dim 2\n1,0,0.5 0.5\n1,1,0.5\n", 3),
        ("dim 2\n1,0,0.5 0.5\n1,0,0.1 0.2\n", 3),
        ("dim 2\n1;0;0.5 0.5\n", 2),
        ("dim 1\n1,0,abc\n", 2),
    ],
)
def test_embedding_errors(tmp_path, text, line):
    p = tmp_path / "e.txt"
    p.write_text(text)
    with pytest.raises(DataError) as e:
        read_embeddings(p)
    assert e.value.line == line


def test_mixed_embedding_shapes_refused(tmp_path):
    with pytest.raises(ValueError):
        write_embeddings({(1, 0): np.zeros(2), (1, 1): np.zeros(3)}, tmp_path / "e.txt")


@settings(max_examples=100)
@given(st.floats(-1e5, 1e5), st.floats(-1e5, 1e5), st.floats(0.01, 1e4), st.floats(0.01, 1e4))
def test_quantize_box_is_idempotent(cx, cy, w, h):
    q = quantize_box(BBox(cx, cy, w, h))
    assert quantize_box(q) == q
