"""Domain records, box geometry and the tracklet lifecycle."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .kernels import iou_matrix

MAX_LOST_AGE = 30


class StateError(ValueError):
    """Illegal lifecycle transition."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in center form, pixels."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box size must be positive, got w={self.w}, h={self.h}")
        if not all(math.isfinite(v) for v in (self.cx, self.cy, self.w, self.h)):
            raise ValueError("box coordinates must be finite")

    @classmethod
    def from_tlwh(cls, left: float, top: float, w: float, h: float) -> "BBox":
        return cls(left + w / 2, top + h / 2, w, h)

    def tlwh(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.w, self.h)

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)

    @property
    def diagonal(self) -> float:
        return math.hypot(self.w, self.h)

    def translated(self, dx: float, dy: float) -> "BBox":
        return BBox(self.cx + dx, self.cy + dy, self.w, self.h)

    def inflated(self, pad: float) -> "BBox":
        return BBox(self.cx, self.cy, self.w + 2 * pad, self.h + 2 * pad)


@dataclass(frozen=True)
class Detection:
    frame: int
    box: BBox
    confidence: float = 1.0
    det_index: int = 0


class NodeState(enum.IntEnum):
    TRACKED = 0
    LOST = 1
    QUITTED = 2


_ALLOWED = {
    (NodeState.TRACKED, NodeState.TRACKED),
    (NodeState.TRACKED, NodeState.LOST),
    (NodeState.TRACKED, NodeState.QUITTED),
    (NodeState.LOST, NodeState.LOST),
    (NodeState.LOST, NodeState.TRACKED),
    (NodeState.LOST, NodeState.QUITTED),
}


def transition_allowed(src: NodeState, dst: NodeState) -> bool:
    return (src, dst) in _ALLOWED


@dataclass(frozen=True)
class TrackNode:
    """One observation ``[t, id, x, y, w, h, s]`` of a tracklet.

    ``det_index`` links the node back to its detection (and embedding); it is
    -1 for nodes synthesised by gap filling, which also set ``interpolated``.
    """

    t: int
    id: int
    box: BBox
    state: NodeState = NodeState.TRACKED
    det_index: int = -1
    confidence: float = 1.0
    interpolated: bool = False

    def as_row(self) -> list[float]:
        return [self.t, self.id, self.box.cx, self.box.cy, self.box.w, self.box.h, int(self.state)]


@dataclass(frozen=True)
class Tracklet:
    """Time-ordered node sequence. Its state is the state of its last node.

    ``expired`` marks a tracklet quitted because it stayed lost too long
    rather than because it left the image; re-connection may still extend it.
    """

    tracklet_id: int
    nodes: tuple[TrackNode, ...] = field(default_factory=tuple)
    expired: bool = False

    def __post_init__(self):
        nodes = tuple(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if not nodes:
            raise ValueError("tracklet needs at least one node")
        for a, b in zip(nodes, nodes[1:]):
            if b.t <= a.t:
                raise ValueError(f"tracklet {self.tracklet_id}: frames not increasing ({a.t} -> {b.t})")

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def state(self) -> NodeState:
        return self.nodes[-1].state

    @property
    def head(self) -> TrackNode:
        return self.nodes[0]

    @property
    def tail(self) -> TrackNode:
        return self.nodes[-1]

    @property
    def frames(self) -> list[int]:
        return [n.t for n in self.nodes]

    def with_state(self, state: NodeState) -> "Tracklet":
        return replace(self, nodes=self.nodes[:-1] + (replace(self.nodes[-1], state=state),))

    def relabel(self, tracklet_id: int) -> "Tracklet":
        nodes = tuple(replace(n, id=tracklet_id) for n in self.nodes)
        return Tracklet(tracklet_id, nodes, self.expired)

    @property
    def exited(self) -> bool:
        """Quitted by leaving the image (terminal for re-connection)."""
        return self.state is NodeState.QUITTED and not self.expired


# alias: trajectories are gap-filled, smoothed tracklets
Trajectory = Tracklet


def boxes_array(boxes: Iterable[BBox]) -> np.ndarray:
    arr = np.array([[b.cx, b.cy, b.w, b.h] for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes."""
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter)


def nms(dets: Sequence[Detection], thresh: float = 0.6) -> list[Detection]:
    """Greedy non-maximum suppression within one frame.

    Keeps a detection iff its IOU with every already kept (higher-confidence)
    detection is at most ``thresh``. Kept detections come back in input order.
    """
    if not 0 < thresh < 1:
        raise ValueError("nms threshold must lie in (0, 1)")
    if not dets:
        return []
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].confidence, i))
    ious = iou_matrix(boxes_array(d.box for d in dets), boxes_array(d.box for d in dets))
    kept: list[int] = []
    for i in order:
        if all(ious[i, k] <= thresh for k in kept):
            kept.append(i)
    return [dets[i] for i in sorted(kept)]


def advance_state(
    tracklet: Tracklet,
    matched: bool,
    exits_boundary: bool,
    lost_frames: int = 0,
    max_lost_age: int = MAX_LOST_AGE,
) -> NodeState:
    """Next lifecycle state of ``tracklet`` after one frame.

    ``lost_frames`` counts consecutive unmatched frames including this one.
    """
    if tracklet.state is NodeState.QUITTED:
        raise StateError(f"tracklet {tracklet.tracklet_id} already quitted")
    if exits_boundary:
        return NodeState.QUITTED
    if matched:
        return NodeState.TRACKED
    if lost_frames > max_lost_age:
        return NodeState.QUITTED
    return NodeState.LOST


def outside_image(box: BBox, width: float, height: float) -> bool:
    return not (0.0 <= box.cx <= width and 0.0 <= box.cy <= height)
