"""Re-connection of cleaved tracklets: temporal-spatial gating, Siamese
feature matching, iterated one-to-one merging, gap filling and smoothing."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .cleave import tracklet_embeddings
from .core import BBox, NodeState, Tracklet, TrackNode, iou
from .generation import CostMatrix, hungarian
from .motion import mean_velocity
from .seqnet import SeqModel, bigru_encode, temporal_pool

log = logging.getLogger(__name__)

GAP_FIT_POINTS = 5
GAP_FIT_DEGREE = 2


@dataclass(frozen=True)
class GateConfig:
    mu: float = 0.0
    max_gap: int = 120
    image_width: float | None = None
    image_height: float | None = None

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.max_gap < 1:
            raise ValueError("max_gap must be at least 1")


def predicted_box(tau: Tracklet, t: int, cfg: GateConfig) -> BBox:
    """Tail box moved by the mean velocity to frame ``t``, padded by ``mu`` per frame."""
    dt = t - tau.tail.t
    vx, vy, _ = mean_velocity(tau)
    tail = tau.tail.box
    cx, cy = tail.cx + vx * dt, tail.cy + vy * dt
    # a target still in the scene cannot be predicted off-image
    if cfg.image_width is not None:
        cx = min(max(cx, 0.0), cfg.image_width)
    if cfg.image_height is not None:
        cy = min(max(cy, 0.0), cfg.image_height)
    return BBox(cx, cy, tail.w, tail.h).inflated(cfg.mu * abs(dt))


def gate(tau_i: Tracklet, tau_j: Tracklet, cfg: GateConfig = GateConfig()) -> bool:
    """May ``tau_j`` continue ``tau_i``?"""
    if tau_i.exited or tau_j.exited:
        return False
    dt = tau_j.head.t - tau_i.tail.t
    if dt <= 0 or dt > cfg.max_gap:
        return False
    return iou(predicted_box(tau_i, tau_j.head.t, cfg), tau_j.head.box) > 0


def tracklet_feature(tau: Tracklet, embeddings, model: SeqModel, normalize: bool = True) -> np.ndarray:
    """Temporal-pooled head features of ``tau`` (unit norm when ``normalize``)."""
    o = bigru_encode(tracklet_embeddings(tau, embeddings), model.gru, model.head)
    f = temporal_pool(o, headed=True)
    if normalize:
        n = float(np.linalg.norm(f))
        if n > 0:
            f = f / n
    return f


def merge(a: Tracklet, b: Tracklet) -> Tracklet:
    """Concatenate ``b`` after ``a`` under ``a``'s id."""
    if b.head.t <= a.tail.t:
        raise ValueError(f"tracklets {a.tracklet_id} and {b.tracklet_id} overlap in time")
    nodes = a.nodes[:-1] + (replace(a.tail, state=NodeState.TRACKED),) + b.nodes
    return Tracklet(a.tracklet_id, nodes, b.expired).relabel(a.tracklet_id)


FeatureFn = Callable[[Tracklet], np.ndarray]


def associate(
    tracklets: Sequence[Tracklet],
    embeddings: Mapping[tuple[int, int], np.ndarray] | None,
    model: SeqModel | None,
    gate_cfg: GateConfig = GateConfig(),
    sim_thresh: float = 1.0,
    feature_fn: FeatureFn | None = None,
    max_rounds: int = 100,
) -> list[Tracklet]:
    """Merge gated tracklet pairs with close features until nothing changes.

    Each round solves one assignment of tails to heads over gated pairs, cost
    the squared feature distance, pairs above ``sim_thresh`` forbidden. Chains
    found in one round collapse into the earliest tracklet's id. Tracklets
    that left the image pass through untouched.
    """
    if feature_fn is None:
        if model is None or embeddings is None:
            raise ValueError("associate needs a model and embeddings or a feature function")

        def feature_fn(tau):
            return tracklet_feature(tau, embeddings, model)

    cache: dict[int, tuple[Tracklet, np.ndarray]] = {}

    def feat(tau: Tracklet) -> np.ndarray:
        hit = cache.get(tau.tracklet_id)
        if hit is None or hit[0] is not tau:
            hit = (tau, np.asarray(feature_fn(tau), dtype=np.float64))
            cache[tau.tracklet_id] = hit
        return hit[1]

    pool = sorted(tracklets, key=lambda tr: (tr.head.t, tr.tracklet_id))
    for rnd in range(max_rounds):
        n = len(pool)
        cost = np.full((n, n), np.inf)
        for i, a in enumerate(pool):
            for j, b in enumerate(pool):
                if i != j and gate(a, b, gate_cfg):
                    d = feat(a) - feat(b)
                    cost[i, j] = float(d @ d)
        pairs, _ = hungarian(CostMatrix(cost), max_cost=sim_thresh)
        if not pairs:
            break
        log.debug("association round %d: %d merges", rnd, len(pairs))
        pool = _merge_chains(pool, dict(pairs))
    return sorted(pool, key=lambda tr: tr.tracklet_id)


def _merge_chains(pool: list[Tracklet], nxt: dict[int, int]) -> list[Tracklet]:
    has_prev = set(nxt.values())
    out = []
    for i, tau in enumerate(pool):
        if i in has_prev:
            continue
        cur, k = tau, i
        while k in nxt:
            k = nxt[k]
            cur = merge(cur, pool[k])
        out.append(cur)
    return sorted(out, key=lambda tr: (tr.head.t, tr.tracklet_id))


# --------------------------------------------------------------------------
# gap filling and smoothing
# --------------------------------------------------------------------------


def _fit_eval(t_known: np.ndarray, v_known: np.ndarray, t_query: np.ndarray, degree: int) -> np.ndarray:
    if degree == 1 and len(t_known) == 2:
        # exact two-point interpolation, no least squares round-off
        t0, t1 = t_known
        v0, v1 = v_known
        return v0 + (v1 - v0) * (t_query - t0) / (t1 - t0)
    c = float(t_known.mean())
    coef = np.polyfit(t_known - c, v_known, degree)
    return np.polyval(coef, t_query - c)


def gap_fill(tau: Tracklet, points: int = GAP_FIT_POINTS, max_degree: int = GAP_FIT_DEGREE) -> Tracklet:
    """Insert interpolated nodes into every internal frame gap.

    Each gap is bridged by per-coordinate least-squares polynomials of degree
    at most ``max_degree`` through up to ``points`` known nodes on each side.
    """
    nodes = list(tau.nodes)
    out: list[TrackNode] = []
    for k, node in enumerate(nodes):
        out.append(node)
        if k + 1 == len(nodes) or nodes[k + 1].t - node.t <= 1:
            continue
        left = nodes[max(0, k + 1 - points) : k + 1]
        known = left + nodes[k + 1 : k + 1 + points]
        t_known = np.array([n.t for n in known], dtype=np.float64)
        V = np.array([n.box.as_array() for n in known])
        t_query = np.arange(node.t + 1, nodes[k + 1].t, dtype=np.float64)
        degree = min(max_degree, len(known) - 1)
        fill = np.column_stack([_fit_eval(t_known, V[:, c], t_query, degree) for c in range(4)])
        if (fill[:, 2:] <= 0).any():
            # a curved size fit went non-physical: fall back to the bracketing line
            pair = [len(left) - 1, len(left)]
            fill = np.column_stack([_fit_eval(t_known[pair], V[pair, c], t_query, 1) for c in range(4)])
        for t, row in zip(t_query, fill):
            out.append(
                TrackNode(
                    int(t),
                    tau.tracklet_id,
                    BBox(*(float(v) for v in row)),
                    NodeState.TRACKED,
                    det_index=-1,
                    confidence=1.0,
                    interpolated=True,
                )
            )
    if len(out) == len(nodes):
        return tau
    return Tracklet(tau.tracklet_id, out, tau.expired)


def smooth(tau: Tracklet, window: int = 5) -> Tracklet:
    """Centered moving average of ``(cx, cy, w, h)``; end windows are truncated."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"smoothing window must be odd and positive, got {window}")
    if window == 1 or len(tau) == 1:
        return tau
    V = np.array([n.box.as_array() for n in tau.nodes])
    half = window // 2
    S = np.empty_like(V)
    for k in range(len(V)):
        win = V[max(0, k - half) : k + half + 1]
        # offset by the window's first row so constant runs stay bit-exact
        S[k] = win[0] + (win - win[0]).mean(axis=0)
    nodes = tuple(replace(n, box=BBox(*(float(v) for v in S[k]))) for k, n in enumerate(tau.nodes))
    return Tracklet(tau.tracklet_id, nodes, tau.expired)


def finalize(tracklets: Sequence[Tracklet], window: int = 5) -> list[Tracklet]:
    """Gap-fill then smooth every trajectory."""
    return [smooth(gap_fill(tau), window) for tau in tracklets]
