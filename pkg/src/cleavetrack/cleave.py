"""Split identity-impure tracklets where the prefix and suffix summaries of
the bi-GRU disagree the most."""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from .core import Tracklet
from .generation import MissingEmbeddingError
from .seqnet import MAX_SEQ_LEN, SeqModel, SeqOutputs, bigru_encode


@dataclass(frozen=True)
class CleaveConfig:
    split_thresh: float = 0.5
    min_segment: int = 2
    recursive: bool = True
    window_stride: int = MAX_SEQ_LEN // 2

    def __post_init__(self):
        if self.split_thresh <= 0:
            raise ValueError("split_thresh must be positive")
        if self.min_segment < 2:
            raise ValueError("min_segment must be at least 2")


class Reliability(enum.Enum):
    RELIABLE = "reliable"
    UNRELIABLE = "unreliable"


def unit_rows(a: np.ndarray) -> np.ndarray:
    """Scale each row to unit L2 norm (zero rows stay zero)."""
    n = np.linalg.norm(a, axis=-1, keepdims=True)
    return np.divide(a, n, out=np.zeros_like(a), where=n > 0)


def distance_vector(o: SeqOutputs, normalize: bool = False) -> np.ndarray:
    """Squared distance between prefix and suffix summaries at every boundary.

    Entry ``i - 1`` compares the forward output after elements ``1..i`` with
    the backward output covering ``i+1..L``.
    """
    L = len(o)
    if L < 2:
        return np.zeros(0)
    f, b = o.forward, o.backward
    if normalize:
        f, b = unit_rows(f), unit_rows(b)
    prefix = f[: L - 1]
    suffix = b[L - 2 :: -1]  # suffix[i-1] = backward[L-i-1]
    d = prefix - suffix
    return (d * d).sum(axis=1)


def find_split(dv: np.ndarray, cfg: CleaveConfig = CleaveConfig()) -> int | None:
    """Boundary index of the highest admissible peak above the threshold.

    Boundary ``i`` splits after element ``i``; both parts keep at least
    ``cfg.min_segment`` elements. Ties go to the lowest index.
    """
    dv = np.asarray(dv, dtype=np.float64)
    L = dv.shape[0] + 1
    lo, hi = cfg.min_segment, L - cfg.min_segment
    if dv.shape[0] == 0 or hi < lo:
        return None
    window = dv[lo - 1 : hi]
    k = int(np.argmax(window))
    if window[k] <= cfg.split_thresh:
        return None
    return lo + k


def label_reliability(tau: Tracklet) -> Reliability:
    """Reliable iff every node carries the same ground-truth identity."""
    ids = [n.id for n in tau.nodes]
    if any(i < 0 for i in ids):
        raise ValueError(f"tracklet {tau.tracklet_id} has nodes without identity")
    return Reliability.RELIABLE if len(set(ids)) == 1 else Reliability.UNRELIABLE


def tracklet_embeddings(tau: Tracklet, embeddings: Mapping[tuple[int, int], np.ndarray]) -> np.ndarray:
    rows = []
    for n in tau.nodes:
        key = (n.t, n.det_index)
        if key not in embeddings:
            raise MissingEmbeddingError(*key)
        rows.append(embeddings[key])
    return np.asarray(rows, dtype=np.float64)


def _best_split(E: np.ndarray, model: SeqModel, cfg: CleaveConfig) -> tuple[int | None, float]:
    L = E.shape[0]
    if L <= MAX_SEQ_LEN:
        starts = [0]
    else:
        starts = list(range(0, L - MAX_SEQ_LEN + 1, cfg.window_stride))
        if starts[-1] != L - MAX_SEQ_LEN:
            starts.append(L - MAX_SEQ_LEN)
    best, best_val = None, -np.inf
    for s in starts:
        dv = distance_vector(bigru_encode(E[s : s + MAX_SEQ_LEN], model.gru), normalize=True)
        k = find_split(dv, cfg)
        if k is None:
            continue
        # a window split must also leave admissible segments in the whole tracklet
        pos = s + k
        if pos < cfg.min_segment or L - pos < cfg.min_segment:
            continue
        if dv[k - 1] > best_val:
            best, best_val = pos, float(dv[k - 1])
    return best, best_val


def cleave_tracklet(
    tau: Tracklet,
    embeddings: Mapping[tuple[int, int], np.ndarray],
    model: SeqModel,
    cfg: CleaveConfig = CleaveConfig(),
    ids: Iterator[int] | None = None,
) -> list[Tracklet]:
    """Split ``tau`` at its feature-distance peak, recursively when configured.

    Sub-tracklets draw fresh ids from ``ids``; an unsplit tracklet is returned
    as is. Tracklets longer than the encoder window are scanned with
    overlapping windows and split at the strongest peak.
    """
    E = tracklet_embeddings(tau, embeddings)
    if ids is None:
        ids = itertools.count(tau.tracklet_id * 1000 + 1)
    parts = _split_rec(E, 0, len(tau), model, cfg)
    if len(parts) == 1:
        return [tau]
    out = []
    for a, b in parts:
        # only the final piece inherits the end-of-life flag
        out.append(Tracklet(0, tau.nodes[a:b], tau.expired and b == len(tau)).relabel(next(ids)))
    return out


def _split_rec(E, a, b, model, cfg) -> list[tuple[int, int]]:
    if b - a < 2 * cfg.min_segment:
        return [(a, b)]
    k, _ = _best_split(E[a:b], model, cfg)
    if k is None:
        return [(a, b)]
    if not cfg.recursive:
        return [(a, a + k), (a + k, b)]
    return _split_rec(E, a, a + k, model, cfg) + _split_rec(E, a + k, b, model, cfg)


def cleave_all(
    tracklets: Sequence[Tracklet],
    embeddings: Mapping[tuple[int, int], np.ndarray],
    model: SeqModel,
    cfg: CleaveConfig = CleaveConfig(),
) -> list[Tracklet]:
    """Cleave every tracklet; new pieces get ids above the current maximum."""
    ids = itertools.count(max((t.tracklet_id for t in tracklets), default=0) + 1)
    out = []
    for tau in tracklets:
        out.extend(cleave_tracklet(tau, embeddings, model, cfg, ids))
    return out


def best_threshold(positives: Sequence[float], negatives: Sequence[float]) -> float:
    """Threshold minimising misclassified scores (positives must exceed it).

    Among equally good cut points the middle of the widest optimal gap wins.
    """
    pos = np.sort(np.asarray(positives, dtype=np.float64))
    neg = np.sort(np.asarray(negatives, dtype=np.float64))
    if pos.size == 0 or neg.size == 0:
        raise ValueError("need both positive and negative scores")
    cuts = np.unique(np.concatenate([pos, neg, [0.0]]))
    # errors when the threshold sits in [cuts[k], cuts[k+1])
    fn = np.searchsorted(pos, cuts, side="right")
    fp = neg.size - np.searchsorted(neg, cuts, side="right")
    err = fn + fp
    best = err.min()
    hi_edge = np.append(cuts[1:], cuts[-1] * 2 + 1.0)
    widths = np.where(err == best, hi_edge - cuts, -1.0)
    k = int(np.argmax(widths))
    return float((cuts[k] + hi_edge[k]) / 2)


def calibrate_split_thresh(
    model: SeqModel,
    n: int = 100,
    n_identities: int = 20,
    d: int | None = None,
    sigma_e: float = 0.1,
    length_range=(10, 120),
    seed: int = 1000,
    min_segment: int = 2,
) -> float:
    """Pick ``split_thresh`` on a held-out synthetic validation set.

    Positives are the peak values of merged two-identity tracklets whose peak
    lands within one frame of the true switch; negatives are the peak values of
    pure tracklets. Identities are fresh anchors, unseen in training.
    """
    from .synth import make_pure_tracklets, make_unreliable_tracklets, random_anchors

    d = d or model.gru.layers[0].Wx.shape[1]
    rng = np.random.default_rng(seed)
    anchors = random_anchors(n_identities, d, rng)
    merged = make_unreliable_tracklets(anchors, n, length_range, sigma_e, seed + 1, min_segment)
    pure = make_pure_tracklets(anchors, n, length_range, sigma_e, seed + 2)
    cfg = CleaveConfig(split_thresh=1e-300, min_segment=min_segment)

    def peak(emb):
        dv = distance_vector(bigru_encode(emb, model.gru), normalize=True)
        k = find_split(dv, cfg)
        return (None, 0.0) if k is None else (k, float(dv[k - 1]))

    pos = []
    for lt in merged:
        k, v = peak(lt.embeddings)
        # a misplaced peak is a miss whatever the threshold
        if k is not None and abs(k - lt.switch) <= 1:
            pos.append(v)
    neg = [peak(lt.embeddings)[1] for lt in pure]
    return best_threshold(pos, neg)
