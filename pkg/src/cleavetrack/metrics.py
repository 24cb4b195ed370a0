"""CLEAR-MOT accuracy and identity (IDF1) metrics."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import BBox, Tracklet, boxes_array
from .generation import CostMatrix, hungarian
from .kernels import iou_matrix

MT_RATIO = 0.8
ML_RATIO = 0.2

FrameBoxes = Mapping[int, Sequence[tuple[int, BBox]]]


class DuplicateIdError(ValueError):
    def __init__(self, which: str, frame: int, track_id: int):
        super().__init__(f"{which}: id {track_id} appears twice in frame {frame}")
        self.frame = frame
        self.track_id = track_id


@dataclass
class FrameResult:
    frame: int
    matches: list[tuple[int, int]]  # (gt id, hyp id)
    fp: int
    fn: int
    idsw: int


@dataclass
class EvalReport:
    total_gt: int
    total_hyp: int
    FP: int
    FN: int
    IDSw: int
    Frag: int
    MT: int
    ML: int
    n_gt_tracks: int
    IDTP: int
    trace: list[FrameResult] = field(default_factory=list, repr=False)

    @property
    def MOTA(self) -> float:
        return mota(self.FP, self.FN, self.IDSw, self.total_gt)

    @property
    def IDF1(self) -> float:
        denom = self.total_gt + self.total_hyp
        return 1.0 if denom == 0 else 2 * self.IDTP / denom

    @property
    def IDP(self) -> float:
        return 1.0 if self.total_hyp == 0 else self.IDTP / self.total_hyp

    @property
    def IDR(self) -> float:
        return 1.0 if self.total_gt == 0 else self.IDTP / self.total_gt

    @property
    def MT_frac(self) -> float:
        return self.MT / self.n_gt_tracks if self.n_gt_tracks else 0.0

    @property
    def ML_frac(self) -> float:
        return self.ML / self.n_gt_tracks if self.n_gt_tracks else 0.0

    def summary(self) -> dict[str, float]:
        return {
            "MOTA": self.MOTA,
            "IDF1": self.IDF1,
            "MT": self.MT,
            "ML": self.ML,
            "MT_frac": self.MT_frac,
            "ML_frac": self.ML_frac,
            "FP": self.FP,
            "FN": self.FN,
            "IDSw": self.IDSw,
            "Frag": self.Frag,
            "total_gt": self.total_gt,
            "total_hyp": self.total_hyp,
            "IDTP": self.IDTP,
        }

    def to_csv(self) -> str:
        s = self.summary()
        return ",".join(s) + "\n" + ",".join(_fmt(v) for v in s.values()) + "\n"

    def to_text(self) -> str:
        s = self.summary()
        buf = io.StringIO()
        for k, v in s.items():
            buf.write(f"{k:>9}  {_fmt(v)}\n")
        return buf.getvalue()


def _fmt(v) -> str:
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def mota(fp: int, fn: int, idsw: int, total_gt: int) -> float:
    """``1 - (FP + FN + IDSw) / total_gt`` (NaN without ground truth)."""
    if total_gt == 0:
        return math.nan
    return 1.0 - (fp + fn + idsw) / total_gt


def frame_table(tracks: Sequence[Tracklet] | FrameBoxes, which: str = "tracks") -> dict[int, list[tuple[int, BBox]]]:
    """``frame -> [(id, box)]``; duplicate ids in one frame are an error."""
    out: dict[int, list[tuple[int, BBox]]] = {}
    if isinstance(tracks, Mapping):
        items = ((f, tid, b) for f, rows in tracks.items() for tid, b in rows)
    else:
        items = ((n.t, tau.tracklet_id, n.box) for tau in tracks for n in tau.nodes)
    seen = set()
    for f, tid, b in items:
        if (f, tid) in seen:
            raise DuplicateIdError(which, f, tid)
        seen.add((f, tid))
        out.setdefault(f, []).append((tid, b))
    return out


def match_frame(
    gt: Sequence[tuple[int, BBox]],
    hyp: Sequence[tuple[int, BBox]],
    iou_min: float = 0.5,
    carryover: Mapping[int, int] | None = None,
) -> list[tuple[int, int]]:
    """Match gt and hypothesis boxes of one frame, returning ``(gt id, hyp id)``.

    Pairs from ``carryover`` (gt id -> hyp id of the previous frame) survive
    while their IOU stays at least ``iou_min``; the rest are matched by
    assignment on ``1 - IOU``.
    """
    if not 0 < iou_min <= 1:
        raise ValueError("iou_min must lie in (0, 1]")
    if not gt or not hyp:
        return []
    G = boxes_array(b for _, b in gt)
    H = boxes_array(b for _, b in hyp)
    ious = iou_matrix(G, H)
    g_idx = {gid: k for k, (gid, _) in enumerate(gt)}
    h_idx = {hid: k for k, (hid, _) in enumerate(hyp)}
    matches = []
    used_g, used_h = set(), set()
    for gid, hid in (carryover or {}).items():
        i, j = g_idx.get(gid), h_idx.get(hid)
        if i is None or j is None or ious[i, j] < iou_min:
            continue
        matches.append((gid, hid))
        used_g.add(i)
        used_h.add(j)
    rows = [i for i in range(len(gt)) if i not in used_g]
    cols = [j for j in range(len(hyp)) if j not in used_h]
    if rows and cols:
        sub = ious[np.ix_(rows, cols)]
        pairs, _ = hungarian(CostMatrix(1.0 - sub, sub >= iou_min))
        matches.extend((gt[rows[a]][0], hyp[cols[b]][0]) for a, b in pairs)
    return sorted(matches)


def _runs(flags: Sequence[bool]) -> int:
    n, prev = 0, False
    for f in flags:
        if f and not prev:
            n += 1
        prev = f
    return n


def evaluate(
    gt: Sequence[Tracklet] | FrameBoxes,
    hyp: Sequence[Tracklet] | FrameBoxes,
    iou_min: float = 0.5,
) -> EvalReport:
    """CLEAR-MOT counts, MT/ML, fragmentation and IDF1 of ``hyp`` against ``gt``."""
    G = frame_table(gt, "gt")
    H = frame_table(hyp, "hyp")
    frames = sorted(set(G) | set(H))
    prev: dict[int, int] = {}
    last_hyp: dict[int, int] = {}
    matched_flags: dict[int, list[bool]] = {}
    trace = []
    fp = fn = idsw = 0
    for f in frames:
        g_rows, h_rows = G.get(f, []), H.get(f, [])
        m = match_frame(g_rows, h_rows, iou_min, prev)
        sw = 0
        for gid, hid in m:
            if gid in last_hyp and last_hyp[gid] != hid:
                sw += 1
            last_hyp[gid] = hid
        mg = {gid for gid, _ in m}
        for gid, _ in g_rows:
            matched_flags.setdefault(gid, []).append(gid in mg)
        f_fp, f_fn = len(h_rows) - len(m), len(g_rows) - len(m)
        fp, fn, idsw = fp + f_fp, fn + f_fn, idsw + sw
        trace.append(FrameResult(f, m, f_fp, f_fn, sw))
        prev = dict(m)

    mt = ml = frag = 0
    for flags in matched_flags.values():
        ratio = sum(flags) / len(flags)
        mt += ratio >= MT_RATIO
        ml += ratio <= ML_RATIO
        frag += max(_runs(flags) - 1, 0)

    total_gt = sum(len(v) for v in G.values())
    total_hyp = sum(len(v) for v in H.values())
    return EvalReport(
        total_gt=total_gt,
        total_hyp=total_hyp,
        FP=fp,
        FN=fn,
        IDSw=idsw,
        Frag=frag,
        MT=mt,
        ML=ml,
        n_gt_tracks=len(matched_flags),
        IDTP=_idtp(G, H, iou_min),
        trace=trace,
    )


def _idtp(G, H, iou_min: float) -> int:
    """Identity true positives under the best one-to-one gt/hyp id mapping."""
    g_ids = sorted({gid for rows in G.values() for gid, _ in rows})
    h_ids = sorted({hid for rows in H.values() for hid, _ in rows})
    if not g_ids or not h_ids:
        return 0
    gi = {g: k for k, g in enumerate(g_ids)}
    hi = {h: k for k, h in enumerate(h_ids)}
    counts = np.zeros((len(g_ids), len(h_ids)), dtype=np.int64)
    for f in set(G) & set(H):
        g_rows, h_rows = G[f], H[f]
        ious = iou_matrix(boxes_array(b for _, b in g_rows), boxes_array(b for _, b in h_rows))
        a, b = np.nonzero(ious >= iou_min)
        for i, j in zip(a, b):
            counts[gi[g_rows[i][0]], hi[h_rows[j][0]]] += 1
    # every edge allowed: zero-count pairs are harmless, and forbidding them
    # would turn the cardinality-first solver away from the best total
    pairs, _ = hungarian(CostMatrix(-counts.astype(np.float64)))
    return int(sum(counts[i, j] for i, j in pairs))
