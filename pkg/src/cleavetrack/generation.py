"""Frame-by-frame tracklet generation by bipartite assignment."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import (
    MAX_LOST_AGE,
    BBox,
    Detection,
    NodeState,
    Tracklet,
    TrackNode,
    advance_state,
    nms,
    outside_image,
)
from .kernels import solve_square
from .motion import MAX_HISTORY, predict

log = logging.getLogger(__name__)

EmbeddingTable = Mapping[tuple[int, int], np.ndarray]


class MissingEmbeddingError(KeyError):
    def __init__(self, frame: int, det_index: int):
        super().__init__(f"no embedding for detection (frame={frame}, det_index={det_index})")
        self.frame = frame
        self.det_index = det_index


@dataclass(frozen=True)
class GenConfig:
    alpha: float = 1.0
    beta: float = 1.0
    match_cost_max: float = 1.5
    nms_thresh: float = 0.6
    image_width: int = 1920
    image_height: int = 1080
    max_lost_age: int = MAX_LOST_AGE
    conf_floor: float = 0.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise ValueError("alpha and beta must be non-negative with a positive sum")


@dataclass
class CostMatrix:
    """Candidate x detection costs; ``mask`` False marks a forbidden edge."""

    entries: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.entries = np.asarray(self.entries, dtype=np.float64)
        if self.entries.ndim != 2:
            raise ValueError("cost matrix must be two-dimensional")
        if self.mask is None:
            self.mask = np.isfinite(self.entries)
        else:
            self.mask = np.asarray(self.mask, dtype=bool) & np.isfinite(self.entries)

    @property
    def shape(self):
        return self.entries.shape


# --------------------------------------------------------------------------
# costs
# --------------------------------------------------------------------------


def appearance_cost(f1, f2) -> float:
    """Squared Euclidean distance of two (unit) embeddings."""
    f1 = np.asarray(f1, dtype=np.float64)
    f2 = np.asarray(f2, dtype=np.float64)
    if f1.shape != f2.shape:
        raise ValueError(f"embedding dimensions differ: {f1.shape} vs {f2.shape}")
    d = f1 - f2
    return float(d @ d)


def motion_cost(pred: BBox, det: BBox, norm: float) -> float:
    """Squared distance of ``(cx, cy, w, h)`` divided by ``norm**2``."""
    d = pred.as_array() - det.as_array()
    return float(d @ d) / (norm * norm)


def pair_cost(f_a: float, f_m: float, cfg: GenConfig) -> float:
    return cfg.alpha * f_a + cfg.beta * f_m


# --------------------------------------------------------------------------
# assignment
# --------------------------------------------------------------------------


def hungarian(m, max_cost: float | None = None) -> tuple[list[tuple[int, int]], float]:
    """Minimum-cost assignment over the allowed edges of ``m``.

    Among assignments using the largest possible number of allowed edges,
    returns one of minimum total cost, as sorted ``(row, col)`` pairs plus
    that cost. Forbidden edges (masked, non-finite, or above ``max_cost``) and
    the padding of rectangular inputs share one penalty tier, large enough
    that trading any number of real edges can never offset one extra
    forbidden edge.
    """
    if not isinstance(m, CostMatrix):
        m = CostMatrix(m)
    C = m.entries
    allowed = m.mask.copy()
    if max_cost is not None:
        allowed &= C <= max_cost
    rows, cols = C.shape
    if rows == 0 or cols == 0 or not allowed.any():
        return [], 0.0
    finite = C[allowed]
    lo = float(finite.min())
    n = max(rows, cols)
    shifted = np.where(allowed, C - lo, 0.0)
    big = n * float(shifted.max()) + 1.0
    sq = np.full((n, n), big)
    sq[:rows, :cols] = np.where(allowed, shifted, big)
    assign = solve_square(sq)
    pairs = [(i, int(assign[i])) for i in range(rows) if assign[i] < cols and allowed[i, assign[i]]]
    total = float(sum(C[i, j] for i, j in pairs))
    return pairs, total


# --------------------------------------------------------------------------
# generation loop
# --------------------------------------------------------------------------


@dataclass
class _Candidate:
    tracklet_id: int
    nodes: list[TrackNode]
    embedding: np.ndarray
    lost_frames: int = 0
    state: NodeState = NodeState.TRACKED
    expired: bool = False

    def tracklet(self) -> Tracklet:
        return Tracklet(self.tracklet_id, self.nodes, self.expired)

    def history(self):
        return [(n.t, n.box) for n in self.nodes[-MAX_HISTORY:]]


def _finish(c: _Candidate) -> Tracklet:
    last = c.nodes[-1]
    if last.state != c.state:
        c.nodes[-1] = TrackNode(last.t, last.id, last.box, c.state, last.det_index, last.confidence)
    return c.tracklet()


def generate_tracklets(
    detections_by_frame: Mapping[int, Sequence[Detection]],
    embeddings: EmbeddingTable,
    cfg: GenConfig = GenConfig(),
    motion_weights=None,
    frames: Sequence[int] | None = None,
) -> list[Tracklet]:
    """Link per-frame detections into tracklets.

    Per frame: confidence floor, NMS, fused appearance+motion costs between
    live candidates (tracked or lost) and detections, Hungarian assignment
    gated by ``cfg.match_cost_max``; unmatched detections start new
    tracklets. Returns every tracklet with its final lifecycle state stamped
    on its last node, ordered by tracklet id.
    """
    if frames is None:
        frames = range(min(detections_by_frame, default=1), max(detections_by_frame, default=0) + 1)
    live: list[_Candidate] = []
    done: list[Tracklet] = []
    next_id = 1
    for t in frames:
        raw = [d for d in detections_by_frame.get(t, ()) if d.confidence >= cfg.conf_floor]
        dets = nms(raw, cfg.nms_thresh)
        feats = []
        for d in dets:
            key = (d.frame, d.det_index)
            if key not in embeddings:
                raise MissingEmbeddingError(*key)
            feats.append(np.asarray(embeddings[key], dtype=np.float64))

        preds = [predict(c.history(), t, motion_weights) for c in live]
        pairs: list[tuple[int, int]] = []
        if live and dets:
            cost = _cost_matrix(live, preds, dets, feats, cfg)
            pairs, _ = hungarian(CostMatrix(cost), max_cost=cfg.match_cost_max)
        matched_c = {i: j for i, j in pairs}
        matched_d = set(matched_c.values())

        survivors = []
        for i, c in enumerate(live):
            exits = outside_image(preds[i], cfg.image_width, cfg.image_height)
            j = matched_c.get(i)
            c.lost_frames = 0 if j is not None else c.lost_frames + 1
            state = advance_state(
                c.tracklet().with_state(c.state), j is not None, exits and j is None, c.lost_frames, cfg.max_lost_age
            )
            c.state = state
            c.expired = state is NodeState.QUITTED and not exits
            if j is not None:
                d = dets[j]
                c.nodes.append(TrackNode(t, c.tracklet_id, d.box, NodeState.TRACKED, d.det_index, d.confidence))
                c.embedding = feats[j]
            if state is NodeState.QUITTED:
                done.append(_finish(c))
            else:
                survivors.append(c)
        for j, d in enumerate(dets):
            if j in matched_d:
                continue
            node = TrackNode(t, next_id, d.box, NodeState.TRACKED, d.det_index, d.confidence)
            survivors.append(_Candidate(next_id, [node], feats[j]))
            next_id += 1
        live = survivors
    done.extend(_finish(c) for c in live)
    done.sort(key=lambda tr: tr.tracklet_id)
    return done


def _cost_matrix(live, preds, dets, feats, cfg: GenConfig) -> np.ndarray:
    E_c = np.array([c.embedding for c in live])
    E_d = np.array(feats)
    F_a = ((E_c[:, None, :] - E_d[None, :, :]) ** 2).sum(axis=2)
    P = np.array([p.as_array() for p in preds])
    D = np.array([d.box.as_array() for d in dets])
    norm2 = (P[:, 2] ** 2 + P[:, 3] ** 2)[:, None]
    F_m = ((P[:, None, :] - D[None, :, :]) ** 2).sum(axis=2) / norm2
    return cfg.alpha * F_a + cfg.beta * F_m


def detections_by_frame(dets: Sequence[Detection]) -> dict[int, list[Detection]]:
    out: dict[int, list[Detection]] = {}
    for d in dets:
        out.setdefault(d.frame, []).append(d)
    return out
