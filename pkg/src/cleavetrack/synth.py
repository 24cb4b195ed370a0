"""Synthetic scenes with ground truth and oracle appearance embeddings."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import BBox, Detection, NodeState, Tracklet, TrackNode
from .kernels import iou_matrix


@dataclass(frozen=True)
class SceneSpec:
    n_identities: int = 20
    n_frames: int = 500
    width: int = 1280
    height: int = 720
    speed: tuple[float, float] = (1.0, 2.5)
    box_width: tuple[float, float] = (30.0, 50.0)
    aspect: tuple[float, float] = (2.2, 2.8)
    turn_prob: float = 0.02
    miss_rate: float = 0.0
    jitter: float = 0.0
    # explicit (id_a, id_b, first_frame, last_frame); ids are 1-based
    crossings: tuple[tuple[int, int, int, int], ...] = ()
    n_random_crossings: int = 0
    crossing_halfwidth: int = 40
    seed: int = 0


@dataclass
class Scene:
    spec: SceneSpec
    gt: list[TrackNode]
    detections: list[Detection]
    det_identity: dict[tuple[int, int], int]
    crossings: list[tuple[int, int, int, int]]
    # (frame, id) -> id of the person in front, for overlapping boxes
    occluder: dict[tuple[int, int], int] = field(default_factory=dict)

    def gt_tracks(self) -> dict[int, list[TrackNode]]:
        out: dict[int, list[TrackNode]] = {}
        for n in self.gt:
            out.setdefault(n.id, []).append(n)
        return out

    def gt_by_frame(self) -> dict[int, list[TrackNode]]:
        out: dict[int, list[TrackNode]] = {}
        for n in self.gt:
            out.setdefault(n.t, []).append(n)
        return out

    def detections_by_frame(self) -> dict[int, list[Detection]]:
        out: dict[int, list[Detection]] = {}
        for d in self.detections:
            out.setdefault(d.frame, []).append(d)
        return out


def _walks(spec: SceneSpec, rng, margin_x: np.ndarray, margin_y: np.ndarray) -> np.ndarray:
    """Reflective piecewise-linear walks, (n_identities, n_frames, 2) centers."""
    n, T = spec.n_identities, spec.n_frames
    pos = np.zeros((n, T, 2))
    for k in range(n):
        lo = np.array([margin_x[k], margin_y[k]])
        hi = np.array([spec.width - margin_x[k], spec.height - margin_y[k]])
        p = rng.uniform(lo, hi)
        v = _heading(rng, spec.speed)
        for t in range(T):
            if t > 0:
                if rng.random() < spec.turn_prob:
                    v = _heading(rng, spec.speed)
                p = p + v
                for a in range(2):
                    if p[a] < lo[a]:
                        p[a] = 2 * lo[a] - p[a]
                        v[a] = -v[a]
                    elif p[a] > hi[a]:
                        p[a] = 2 * hi[a] - p[a]
                        v[a] = -v[a]
            pos[k, t] = p
    return pos


def _heading(rng, speed) -> np.ndarray:
    ang = rng.uniform(0, 2 * np.pi)
    s = rng.uniform(*speed)
    return np.array([np.cos(ang), np.sin(ang)]) * s


def _pull_together(pos, a, b, c, half, offset, clip_lo, clip_hi):
    """Deform walk ``b`` with a triangular bump so it meets ``a`` at frame ``c``."""
    T = pos.shape[1]
    target = pos[a, c] + offset
    delta = target - pos[b, c]
    t = np.arange(T)
    wgt = np.clip(1.0 - np.abs(t - c) / half, 0.0, 1.0)[:, None]
    pos[b] = np.clip(pos[b] + wgt * delta, clip_lo, clip_hi)


def generate_scene(spec: SceneSpec) -> Scene:
    """Ground-truth walks, forced crossings and jittered/missed detections."""
    rng = np.random.default_rng(spec.seed)
    n, T = spec.n_identities, spec.n_frames
    if n < 1 or T < 1:
        raise ValueError("scene needs at least one identity and one frame")
    bw = rng.uniform(*spec.box_width, n)
    bh = bw * rng.uniform(*spec.aspect, n)
    if float((bw * bh).sum()) > 0.5 * spec.width * spec.height or bh.max() >= spec.height or bw.max() >= spec.width:
        raise ValueError("infeasible scene: identities do not fit in the image")
    mx, my = bw / 2 + 1, bh / 2 + 1
    pos = _walks(spec, rng, mx, my)

    events = [tuple(int(v) for v in e) for e in spec.crossings]
    for a, b, f0, f1 in events:
        if not (1 <= a <= n and 1 <= b <= n and a != b and 1 <= f0 <= f1 <= T):
            raise ValueError(f"bad crossing event {(a, b, f0, f1)}")
    busy: list[tuple[int, int, int]] = [(a - 1, b - 1, (f0 + f1) // 2 - 1) for a, b, f0, f1 in events]
    half = spec.crossing_halfwidth
    if spec.n_random_crossings:
        if n < 2:
            raise ValueError("random crossings need at least two identities")
        lo_c, hi_c = min(half, T // 2), max(T - half - 1, T // 2)
        attempts, target = 0, len(busy) + spec.n_random_crossings
        while len(busy) < target:
            attempts += 1
            if attempts > 10000:
                raise ValueError("could not place the requested crossings")
            c = int(rng.integers(lo_c, hi_c + 1))
            free = [k for k in range(n) if all(abs(c - cc) > 2 * half or k not in (a, b) for a, b, cc in busy)]
            if len(free) < 2:
                continue
            d = np.linalg.norm(pos[free, c][:, None] - pos[free, c][None], axis=2)
            np.fill_diagonal(d, np.inf)
            i, j = np.unravel_index(np.argmin(d), d.shape)
            busy.append((free[i], free[j], c))
            events.append((free[i] + 1, free[j] + 1, max(c + 1 - 5, 1), min(c + 1 + 5, T)))
    for a, b, c in busy:
        offset = np.array([rng.uniform(-0.15, 0.15) * bw[b], rng.uniform(-0.1, 0.1) * bh[b]])
        _pull_together(pos, a, b, c, half, offset, np.array([mx[b], my[b]]), np.array([spec.width - mx[b], spec.height - my[b]]))

    gt: list[TrackNode] = []
    dets: list[Detection] = []
    det_identity: dict[tuple[int, int], int] = {}
    occluder: dict[tuple[int, int], int] = {}
    for t in range(T):
        frame = t + 1
        boxes = [BBox(float(pos[k, t, 0]), float(pos[k, t, 1]), float(bw[k]), float(bh[k])) for k in range(n)]
        for k in range(n):
            gt.append(TrackNode(frame, k + 1, boxes[k], NodeState.TRACKED))
        arr = np.array([[b.cx, b.cy, b.w, b.h] for b in boxes])
        ov = iou_matrix(arr, arr)
        np.fill_diagonal(ov, 0.0)
        bottoms = arr[:, 1] + arr[:, 3] / 2
        for k in range(n):
            overlapping = np.flatnonzero(ov[k] > 0)
            front = [j for j in overlapping if bottoms[j] > bottoms[k]]
            if front:
                occluder[(frame, k + 1)] = int(max(front, key=lambda j: ov[k, j])) + 1
        order = rng.permutation(n)
        idx = 0
        for k in order:
            if spec.miss_rate > 0 and rng.random() < spec.miss_rate:
                continue
            b = boxes[k]
            if spec.jitter > 0:
                j = rng.normal(0.0, spec.jitter, 4)
                b = BBox(b.cx + j[0], b.cy + j[1], max(b.w + j[2], 1.0), max(b.h + j[3], 1.0))
            conf = float(rng.uniform(0.5, 1.0))
            dets.append(Detection(frame, b, conf, idx))
            det_identity[(frame, idx)] = int(k) + 1
            idx += 1
    return Scene(spec, gt, dets, det_identity, sorted(events, key=lambda e: e[2]), occluder)


# --------------------------------------------------------------------------
# embeddings
# --------------------------------------------------------------------------


def random_anchors(n: int, d: int, rng) -> np.ndarray:
    a = rng.normal(size=(n, d))
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def noisy(anchor: np.ndarray, sigma_e: float, rng) -> np.ndarray:
    """Anchor plus isotropic noise of total RMS norm ``sigma_e``, re-normalised."""
    d = anchor.shape[0]
    v = anchor + rng.normal(0.0, sigma_e / np.sqrt(d), d)
    return v / np.linalg.norm(v)


def oracle_embeddings(
    scene: Scene,
    d: int = 128,
    sigma_e: float = 0.1,
    seed: int = 0,
    occlusion: bool = True,
    occlusion_weight: float = 0.5,
    anchors: np.ndarray | None = None,
) -> dict[tuple[int, int], np.ndarray]:
    """Unit embedding per detection keyed ``(frame, det_index)``.

    With ``occlusion`` an occluded person's anchor is blended toward the
    occluder's anchor with ``occlusion_weight`` before the noise is added.
    """
    if d < 2:
        raise ValueError("embedding dimension must be at least 2")
    rng = np.random.default_rng(seed)
    if anchors is None:
        anchors = random_anchors(scene.spec.n_identities, d, rng)
    table = {}
    for det in scene.detections:
        key = (det.frame, det.det_index)
        k = scene.det_identity[key]
        a = anchors[k - 1]
        if occlusion and (det.frame, k) in scene.occluder:
            o = anchors[scene.occluder[(det.frame, k)] - 1]
            a = (1 - occlusion_weight) * a + occlusion_weight * o
            a = a / np.linalg.norm(a)
        table[key] = noisy(a, sigma_e, rng)
    return table


# --------------------------------------------------------------------------
# labelled tracklet sets
# --------------------------------------------------------------------------


@dataclass
class LabeledTracklet:
    tracklet: Tracklet
    embeddings: np.ndarray  # (L, d), row k for node k
    identities: list[int]
    switch: int | None = None  # boundary index: nodes 1..switch belong to the first identity

    @property
    def table(self) -> dict[tuple[int, int], np.ndarray]:
        return {(n.t, n.det_index): self.embeddings[k] for k, n in enumerate(self.tracklet.nodes)}


def _tracklet(ids: Sequence[int], tracklet_id: int, start: int = 1) -> Tracklet:
    nodes = [
        TrackNode(start + k, int(i), BBox(100.0 + k, 100.0, 40.0, 100.0), NodeState.TRACKED, det_index=0)
        for k, i in enumerate(ids)
    ]
    return Tracklet(tracklet_id, nodes)


def make_pure_tracklets(anchors, n, length_range=(10, 120), sigma_e=0.1, seed=0) -> list[LabeledTracklet]:
    rng = np.random.default_rng(seed)
    out = []
    for m in range(n):
        L = int(rng.integers(length_range[0], length_range[1] + 1))
        k = int(rng.integers(len(anchors)))
        emb = np.array([noisy(anchors[k], sigma_e, rng) for _ in range(L)])
        out.append(LabeledTracklet(_tracklet([k + 1] * L, m + 1), emb, [k + 1] * L))
    return out


def make_unreliable_tracklets(
    anchors, n, length_range=(10, 120), sigma_e=0.1, seed=0, min_segment: int = 2
) -> list[LabeledTracklet]:
    """Tracklets made of one identity's run followed by another's."""
    if len(anchors) < 2:
        raise ValueError("need at least two identities")
    rng = np.random.default_rng(seed)
    out = []
    for m in range(n):
        L = int(rng.integers(max(length_range[0], 2 * min_segment), length_range[1] + 1))
        s = int(rng.integers(min_segment, L - min_segment + 1))
        a, b = rng.choice(len(anchors), 2, replace=False)
        ids = [int(a) + 1] * s + [int(b) + 1] * (L - s)
        emb = np.array([noisy(anchors[i - 1], sigma_e, rng) for i in ids])
        out.append(LabeledTracklet(_tracklet(ids, m + 1), emb, ids, s))
    return out


def make_training_set(
    n_identities=10, per_identity=20, length_range=(8, 24), d=128, sigma_e=0.1, seed=0
) -> tuple[list[tuple[np.ndarray, int]], np.ndarray]:
    """Labelled pure embedding sequences for :func:`cleavetrack.learn.train_toy`.

    Returns ``(dataset, anchors)`` with 0-based class labels.
    """
    rng = np.random.default_rng(seed)
    anchors = random_anchors(n_identities, d, rng)
    data = []
    for k in range(n_identities):
        for _ in range(per_identity):
            L = int(rng.integers(length_range[0], length_range[1] + 1))
            data.append((np.array([noisy(anchors[k], sigma_e, rng) for _ in range(L)]), k))
    order = rng.permutation(len(data))
    return [data[i] for i in order], anchors
