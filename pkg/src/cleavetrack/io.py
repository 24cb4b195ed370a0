"""Text formats: MOT-style detection/track CSV and per-detection embeddings.

Track and result files use the detection schema
``frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`` with this column
policy for the trailing fields:

* ``x`` -- index of the source detection within its frame, ``-1`` for nodes
  synthesised by gap filling (these are written with ``conf`` 1);
* ``y`` -- lifecycle code of the node: 0 tracked, 1 lost, 2 quitted after
  leaving the image, 3 quitted after staying lost too long;
* ``z`` -- always ``-1``.

Coordinates are written with two decimals, confidences with six. Readers of
ground truth from other sources accept any numeric ``x``/``y`` and fall back
to tracked nodes.
"""
from __future__ import annotations

import math
import os
from typing import Iterable, Mapping, Sequence

import numpy as np

from .core import BBox, Detection, NodeState, Tracklet, TrackNode

COORD_DECIMALS = 2
CONF_DECIMALS = 6
EXPIRED_CODE = 3


class DataError(ValueError):
    """Malformed input file; carries the path and 1-based line number."""

    def __init__(self, path, line: int | None, msg: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {msg}")
        self.path = path
        self.line = line


def _lines(path):
    with open(path, "r", encoding="utf-8") as fh:
        for no, raw in enumerate(fh, 1):
            s = raw.strip()
            if s and not s.startswith("#"):
                yield no, s


def _fields(path, no, s, n_min=7, n_max=10) -> list[float]:
    parts = [p.strip() for p in s.split(",")]
    if not n_min <= len(parts) <= n_max:
        raise DataError(path, no, f"expected {n_min}-{n_max} comma-separated fields, got {len(parts)}")
    try:
        vals = [float(p) for p in parts]
    except ValueError as e:
        raise DataError(path, no, f"non-numeric field ({e})") from None
    if not all(math.isfinite(v) for v in vals):
        raise DataError(path, no, "non-finite field")
    return vals + [-1.0] * (10 - len(vals))


def _int(path, no, v: float, what: str) -> int:
    if v != int(v):
        raise DataError(path, no, f"{what} must be an integer, got {v}")
    return int(v)


def _box(path, no, vals) -> BBox:
    try:
        return BBox.from_tlwh(vals[2], vals[3], vals[4], vals[5])
    except ValueError as e:
        raise DataError(path, no, str(e)) from None


# --------------------------------------------------------------------------
# detections
# --------------------------------------------------------------------------


def read_detections(path) -> list[Detection]:
    """Detections sorted by frame; ``det_index`` is the order within the frame."""
    rows = []
    for no, s in _lines(path):
        vals = _fields(path, no, s)
        frame = _int(path, no, vals[0], "frame")
        if frame < 1:
            raise DataError(path, no, f"frame must be >= 1, got {frame}")
        conf = vals[6]
        if not 0.0 <= conf <= 1.0:
            raise DataError(path, no, f"confidence {conf} outside [0, 1]")
        rows.append((frame, _box(path, no, vals), conf))
    rows.sort(key=lambda r: r[0])  # stable: file order within a frame
    out, counts = [], {}
    for frame, box, conf in rows:
        k = counts.get(frame, 0)
        counts[frame] = k + 1
        out.append(Detection(frame, box, conf, k))
    return out


def _coord(v: float) -> str:
    s = f"{v:.{COORD_DECIMALS}f}"
    return "0.00" if s == "-0.00" else s


def write_detections(dets: Iterable[Detection], path) -> None:
    """Write in frame, then ``det_index`` order so indices survive a re-read."""
    dets = sorted(dets, key=lambda d: (d.frame, d.det_index))
    with open(path, "w", encoding="utf-8") as fh:
        for d in dets:
            l, t, w, h = d.box.tlwh()
            fh.write(f"{d.frame},-1,{_coord(l)},{_coord(t)},{_coord(w)},{_coord(h)},{d.confidence:.{CONF_DECIMALS}f},-1,-1,-1\n")


def quantize_box(b: BBox) -> BBox:
    """The box as it reads back from a written file."""
    l, t, w, h = (float(_coord(v)) for v in b.tlwh())
    return BBox.from_tlwh(l, t, w, h)


# --------------------------------------------------------------------------
# tracks / results
# --------------------------------------------------------------------------


def format_tracks(tracks: Iterable[Tracklet]) -> str:
    rows = []
    for tau in tracks:
        last = len(tau) - 1
        for k, n in enumerate(tau.nodes):
            code = int(n.state)
            if k == last and tau.expired:
                code = EXPIRED_CODE
            conf = 1.0 if n.interpolated else n.confidence
            det = -1 if n.interpolated else n.det_index
            rows.append((n.t, tau.tracklet_id, n.box.tlwh(), conf, det, code))
    rows.sort(key=lambda r: (r[0], r[1]))
    lines = []
    for t, tid, (l, top, w, h), conf, det, code in rows:
        lines.append(f"{t},{tid},{_coord(l)},{_coord(top)},{_coord(w)},{_coord(h)},{conf:.{CONF_DECIMALS}f},{det},{code},-1\n")
    return "".join(lines)


def write_results(tracks: Iterable[Tracklet], path) -> None:
    """Write tracks sorted by ``(frame, id)``; see the module docstring for columns."""
    text = format_tracks(tracks)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _parse_tracks(lines, path) -> list[Tracklet]:
    by_id: dict[int, list[tuple[int, TrackNode, bool, int]]] = {}
    for no, s in lines:
        vals = _fields(path, no, s)
        frame = _int(path, no, vals[0], "frame")
        tid = _int(path, no, vals[1], "id")
        box = _box(path, no, vals)
        conf = vals[6]
        x, y = vals[7], vals[8]
        det = int(x) if x == int(x) else -1
        code = int(y) if y == int(y) and 0 <= y <= EXPIRED_CODE else 0
        state = NodeState.QUITTED if code == EXPIRED_CODE else NodeState(code)
        node = TrackNode(frame, tid, box, state, det_index=det, confidence=conf, interpolated=det < 0)
        by_id.setdefault(tid, []).append((frame, node, code == EXPIRED_CODE, no))
    out = []
    for tid in sorted(by_id):
        items = sorted(by_id[tid], key=lambda r: r[0])
        for a, b in zip(items, items[1:]):
            if a[0] == b[0]:
                raise DataError(path, b[3], f"id {tid} appears twice in frame {b[0]}")
        out.append(Tracklet(tid, [r[1] for r in items], items[-1][2]))
    return out


def read_tracks(path) -> list[Tracklet]:
    """Tracks grouped by id (ascending), nodes ordered by frame."""
    return _parse_tracks(_lines(path), path)


# ground truth and results share one schema
read_gt = read_tracks


def parse_tracks(text: str, name: str = "<memory>") -> list[Tracklet]:
    def gen():
        for no, raw in enumerate(text.splitlines(), 1):
            s = raw.strip()
            if s and not s.startswith("#"):
                yield no, s

    return _parse_tracks(gen(), name)


def quantize_tracks(tracks: Sequence[Tracklet]) -> list[Tracklet]:
    """Tracks exactly as a write/read cycle returns them."""
    return parse_tracks(format_tracks(tracks))


# --------------------------------------------------------------------------
# embeddings
# --------------------------------------------------------------------------


def write_embeddings(table: Mapping[tuple[int, int], np.ndarray], path) -> None:
    """``dim d`` header, then ``frame,det_index,v1 v2 ...`` with round-trip precision."""
    keys = sorted(table)
    dims = {np.asarray(table[k]).shape for k in keys}
    if len(dims) > 1:
        raise ValueError(f"embeddings of mixed shapes {sorted(dims)}")
    d = dims.pop()[0] if dims else 0
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim {d}\n")
        for f, k in keys:
            vec = " ".join(repr(float(v)) for v in np.asarray(table[(f, k)], dtype=np.float64))
            fh.write(f"{f},{k},{vec}\n")


def read_embeddings(path) -> dict[tuple[int, int], np.ndarray]:
    it = _lines(path)
    head = next(it, None)
    if head is None:
        raise DataError(path, None, "missing 'dim d' header")
    no, s = head
    parts = s.split()
    if len(parts) != 2 or parts[0] != "dim" or not parts[1].isdigit() or int(parts[1]) < 1:
        raise DataError(path, no, "first line must be the header 'dim d'")
    d = int(parts[1])
    table: dict[tuple[int, int], np.ndarray] = {}
    for no, s in it:
        bits = s.split(",", 2)
        if len(bits) != 3:
            raise DataError(path, no, "expected 'frame,det_index,v1 v2 ...'")
        try:
            key = (int(bits[0]), int(bits[1]))
            vec = np.array([float(v) for v in bits[2].split()], dtype=np.float64)
        except ValueError as e:
            raise DataError(path, no, f"non-numeric field ({e})") from None
        if vec.shape[0] != d:
            raise DataError(path, no, f"vector has {vec.shape[0]} entries, header declares {d}")
        if not np.isfinite(vec).all():
            raise DataError(path, no, "non-finite embedding entry")
        if key in table:
            raise DataError(path, no, f"duplicate embedding key {key}")
        table[key] = vec
    return table


def ensure_parent(path) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
