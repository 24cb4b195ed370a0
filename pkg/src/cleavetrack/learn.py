"""Siamese training objective for the bi-GRU, its hand-derived gradient,
Adam, finite-difference checking and a small deterministic trainer."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kernels import gru_layer_backward
from .seqnet import MAX_SEQ_LEN, SeqModel, run_stack


@dataclass(frozen=True)
class LossWeights:
    lambda_v: float = 1.0
    lambda_id: float = 1.0
    lambda_loc_v: float = 0.1
    lambda_loc_id: float = 0.1
    eta: float = 1.0
    delta: float = 0.5

    def __post_init__(self):
        lams = (self.lambda_v, self.lambda_id, self.lambda_loc_v, self.lambda_loc_id)
        if any(l < 0 for l in lams) or self.delta < 0:
            raise ValueError("loss weights and delta must be non-negative")
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    def only(self, term: str) -> "LossWeights":
        """Copy with every lambda except ``term`` set to zero."""
        vals = {k: 0.0 for k in ("lambda_v", "lambda_id", "lambda_loc_v", "lambda_loc_id")}
        vals[term] = 1.0
        return LossWeights(**vals, eta=self.eta, delta=self.delta)


@dataclass
class TrainPair:
    seq1: np.ndarray
    seq2: np.ndarray
    label1: int
    label2: int

    @property
    def y(self) -> int:
        return int(self.label1 == self.label2)


# --------------------------------------------------------------------------
# loss terms on features
# --------------------------------------------------------------------------


def sqdist(a, b) -> float:
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    return float(d @ d)


def contrastive(f1, f2, y: int, eta: float) -> float:
    """``y * d + (1 - y) * max(0, eta - d)`` with ``d`` the squared distance."""
    if y not in (0, 1):
        raise ValueError(f"pair label must be 0 or 1, got {y}")
    d = sqdist(f1, f2)
    return y * d + (1 - y) * max(0.0, eta - d)


def contrastive_grad(f1, f2, y: int, eta: float) -> tuple[np.ndarray, np.ndarray]:
    diff = np.asarray(f1, dtype=np.float64) - np.asarray(f2, dtype=np.float64)
    if y == 1:
        g = 2 * diff
    elif eta - float(diff @ diff) > 0:
        g = -2 * diff
    else:
        g = np.zeros_like(diff)
    return g, -g


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, true_class: int) -> float:
    """``-log softmax(logits)[true_class]`` with max-shift stabilisation."""
    logits = np.asarray(logits, dtype=np.float64)
    K = logits.shape[-1]
    if K < 2:
        raise ValueError("need at least two classes")
    if not 0 <= true_class < K:
        raise IndexError(f"class {true_class} out of range for {K} logits")
    return float(-_log_softmax(logits)[true_class])


def global_loss(pool1, pool2, y, logits1, logits2, labels, w: LossWeights) -> float:
    e = contrastive(pool1, pool2, y, w.eta)
    f = cross_entropy(logits1, labels[0]) + cross_entropy(logits2, labels[1])
    return w.lambda_v * e + w.lambda_id * f


def local_verif_arg(h1, t1, h2, t2, delta: float) -> float:
    return sqdist(h1, t1) + sqdist(h2, t2) - sqdist(h1, h2) - sqdist(t1, t2) + delta


def local_verif(h1, t1, h2, t2, delta: float) -> float:
    """Head/tail margin loss, clamped at zero like a triplet loss."""
    return max(0.0, local_verif_arg(h1, t1, h2, t2, delta))


def local_id(logits_per_position: Sequence[np.ndarray], labels: Sequence[int]) -> float:
    """Sum of position-wise cross entropies; ``logits_per_position[k]`` is (2L_k, K)."""
    total = 0.0
    for logits, c in zip(logits_per_position, labels):
        logits = np.asarray(logits, dtype=np.float64)
        if not 0 <= c < logits.shape[1]:
            raise IndexError(f"class {c} out of range")
        total += float(-_log_softmax(logits)[:, c].sum())
    return total


# --------------------------------------------------------------------------
# model forward pass shared by loss and gradient
# --------------------------------------------------------------------------


@dataclass
class _Encoded:
    X: np.ndarray
    caches_f: list
    caches_b: list
    G: np.ndarray  # (2L, d_h) forward rows then backward rows
    P: np.ndarray  # pre-ReLU head activations
    F: np.ndarray  # headed features
    L: int


def _encode(seq, model: SeqModel) -> _Encoded:
    X = np.asarray(seq, dtype=np.float64)[-MAX_SEQ_LEN:]
    gf, cf = run_stack(X, model.gru)
    gb, cb = run_stack(X[::-1], model.gru)
    G = np.vstack([gf, gb])
    P = G @ model.head.W_fc.T + model.head.b_fc
    return _Encoded(X, cf, cb, G, P, np.maximum(P, 0.0), X.shape[0])


@dataclass
class _Forward:
    enc: tuple[_Encoded, _Encoded]
    pools: tuple[np.ndarray, np.ndarray]
    pool_logits: tuple[np.ndarray, np.ndarray]
    pos_logits: tuple[np.ndarray, np.ndarray]
    terms: dict[str, float]


def _forward(pair: TrainPair, model: SeqModel, w: LossWeights) -> _Forward:
    head = model.head
    enc = (_encode(pair.seq1, model), _encode(pair.seq2, model))
    pools = tuple(e.F.mean(axis=0) for e in enc)
    pool_logits = tuple(head.W_cls @ p + head.b_cls for p in pools)
    pos_logits = tuple(e.F @ head.W_cls.T + head.b_cls for e in enc)
    labels = (pair.label1, pair.label2)
    h1, t1 = enc[0].F[0], enc[0].F[enc[0].L - 1]
    h2, t2 = enc[1].F[0], enc[1].F[enc[1].L - 1]
    terms = {
        "L_v": contrastive(pools[0], pools[1], pair.y, w.eta),
        "L_id": cross_entropy(pool_logits[0], labels[0]) + cross_entropy(pool_logits[1], labels[1]),
        "L_loc_v": local_verif(h1, t1, h2, t2, w.delta),
        "L_loc_id": local_id(pos_logits, labels),
    }
    return _Forward(enc, pools, pool_logits, pos_logits, terms)


def combine(terms: dict[str, float], w: LossWeights) -> float:
    glo = w.lambda_v * terms["L_v"] + w.lambda_id * terms["L_id"]
    loc = w.lambda_loc_v * terms["L_loc_v"] + w.lambda_loc_id * terms["L_loc_id"]
    return glo + loc


def loss_terms(pair: TrainPair, model: SeqModel, w: LossWeights) -> dict[str, float]:
    """Unweighted ``L_v, L_id, L_loc_v, L_loc_id`` for one pair."""
    return _forward(pair, model, w).terms


def total_loss(pair: TrainPair, model: SeqModel, w: LossWeights) -> float:
    return combine(_forward(pair, model, w).terms, w)


def _softmax(logits):
    return np.exp(_log_softmax(logits))


def grad_total_loss(pair: TrainPair, model: SeqModel, w: LossWeights) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and its gradient for every entry of :meth:`SeqModel.params`."""
    fw = _forward(pair, model, w)
    head = model.head
    labels = (pair.label1, pair.label2)
    grads = {k: np.zeros_like(v) for k, v in model.params().items()}
    dF = [np.zeros_like(e.F) for e in fw.enc]

    # global verification + identification on pooled features
    g1, g2 = contrastive_grad(fw.pools[0], fw.pools[1], pair.y, w.eta)
    dpools = [w.lambda_v * g1, w.lambda_v * g2]
    for k in range(2):
        dlog = _softmax(fw.pool_logits[k])
        dlog[labels[k]] -= 1.0
        dlog *= w.lambda_id
        grads["head.W_cls"] += np.outer(dlog, fw.pools[k])
        grads["head.b_cls"] += dlog
        dpools[k] = dpools[k] + head.W_cls.T @ dlog
        dF[k] += dpools[k] / fw.enc[k].F.shape[0]

    # local verification on head/tail features
    e1, e2 = fw.enc
    h1, t1 = e1.F[0], e1.F[e1.L - 1]
    h2, t2 = e2.F[0], e2.F[e2.L - 1]
    if w.lambda_loc_v > 0 and local_verif_arg(h1, t1, h2, t2, w.delta) > 0:
        s = w.lambda_loc_v
        dF[0][0] += s * (2 * (h1 - t1) - 2 * (h1 - h2))
        dF[0][e1.L - 1] += s * (-2 * (h1 - t1) - 2 * (t1 - t2))
        dF[1][0] += s * (2 * (h2 - t2) + 2 * (h1 - h2))
        dF[1][e2.L - 1] += s * (-2 * (h2 - t2) + 2 * (t1 - t2))

    # local identification at every position
    for k in range(2):
        if w.lambda_loc_id == 0:
            break
        dlog = _softmax(fw.pos_logits[k])
        dlog[:, labels[k]] -= 1.0
        dlog *= w.lambda_loc_id
        grads["head.W_cls"] += dlog.T @ fw.enc[k].F
        grads["head.b_cls"] += dlog.sum(axis=0)
        dF[k] += dlog @ head.W_cls

    # head, then both directions of the shared stack
    for k, e in enumerate(fw.enc):
        dP = dF[k] * (e.P > 0)
        grads["head.W_fc"] += dP.T @ e.G
        grads["head.b_fc"] += dP.sum(axis=0)
        dG = dP @ head.W_fc
        for caches, dtop in ((e.caches_f, dG[: e.L]), (e.caches_b, dG[e.L :])):
            _stack_backward(model, caches, dtop, grads)
    return combine(fw.terms, w), grads


def _stack_backward(model: SeqModel, caches, dtop, grads) -> None:
    dH = dtop
    for l in range(len(caches) - 1, -1, -1):
        layer = model.gru.layers[l]
        inp, H, Z, R, C = caches[l]
        dX, dWx, dU, db = gru_layer_backward(inp, layer.Wx, layer.U, H, Z, R, C, dH)
        grads[f"gru.{l}.Wx"] += dWx
        grads[f"gru.{l}.U"] += dU
        grads[f"gru.{l}.b"] += db
        dH = dX


# --------------------------------------------------------------------------
# optimiser
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], **kw) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()}, **kw)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**state.step
    c2 = 1 - b2**state.step
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {k} {p.shape}")
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# --------------------------------------------------------------------------
# finite-difference verification
# --------------------------------------------------------------------------


def rel_error(a: float, b: float, floor: float = 1e-10) -> float:
    scale = max(abs(a), abs(b))
    if scale < floor:
        return abs(a - b)
    return abs(a - b) / scale


def vector_rel_error(a, b, floor: float = 1e-10) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)))
    diff = float(np.linalg.norm(a - b))
    return diff if scale < floor else diff / scale


def _kink_margin(pair: TrainPair, model: SeqModel, w: LossWeights) -> float:
    """Distance of the current point from the nearest non-differentiable surface."""
    fw = _forward(pair, model, w)
    m = min(float(np.abs(e.P).min()) for e in fw.enc)
    if pair.y == 0:
        m = min(m, abs(w.eta - sqdist(*fw.pools)))
    e1, e2 = fw.enc
    arg = local_verif_arg(e1.F[0], e1.F[e1.L - 1], e2.F[0], e2.F[e2.L - 1], w.delta)
    return min(m, abs(arg))


@dataclass
class GradCheckResult:
    max_rel_error: float
    per_term: dict[str, float] = field(default_factory=dict)
    n_points: int = 0


TERMS = ("lambda_v", "lambda_id", "lambda_loc_v", "lambda_loc_id")


def random_check_problem(rng, d_in=6, d_h=5, n_layers=4, d_feat=5, n_classes=3, length=(2, 6)):
    model = SeqModel.init(d_in, d_h, n_layers, d_feat, n_classes, rng)
    # wider than the training init so every gate is exercised
    for p in model.params().values():
        p += rng.normal(0.0, 0.3, p.shape)
    pair = TrainPair(
        rng.normal(0, 1, (int(rng.integers(length[0], length[1] + 1)), d_in)),
        rng.normal(0, 1, (int(rng.integers(length[0], length[1] + 1)), d_in)),
        int(rng.integers(n_classes)),
        int(rng.integers(n_classes)),
    )
    return model, pair


def gradcheck(
    n_points: int = 100,
    seed: int = 0,
    step: float = 1e-5,
    n_directions: int = 2,
    n_coords: int = 12,
    weights: LossWeights | None = None,
    margin: float = 1e-3,
) -> GradCheckResult:
    """Compare :func:`grad_total_loss` with central differences.

    At each random point, every loss term alone and the weighted total are
    checked along random unit directions (relative error each) and on a
    block of random single coordinates (relative error of the block vector).
    Points closer than ``margin`` to a ReLU or hinge kink are redrawn.
    """
    rng = np.random.default_rng(seed)
    base = weights or LossWeights()
    configs = {t: base.only(t) for t in TERMS}
    configs["total"] = base
    per_term = {k: 0.0 for k in configs}
    done = 0
    while done < n_points:
        model, pair = random_check_problem(rng)
        if rng.random() < 0.5:
            pair.label2 = pair.label1
        if _kink_margin(pair, model, base) < margin:
            continue
        params = model.params()
        names = list(params)
        for term, w in configs.items():
            _, grads = grad_total_loss(pair, model, w)
            flat_g = np.concatenate([grads[k].ravel() for k in names])
            for _ in range(n_directions):
                d = rng.normal(size=flat_g.size)
                d /= np.linalg.norm(d)
                numeric = _directional_fd(pair, model, w, names, params, d, step)
                per_term[term] = max(per_term[term], rel_error(float(flat_g @ d), numeric))
            # single coordinates can be tiny; compare them as one vector
            coords = rng.choice(flat_g.size, size=min(n_coords, flat_g.size), replace=False)
            num = np.empty(len(coords))
            for n, c in enumerate(coords):
                d = np.zeros(flat_g.size)
                d[c] = 1.0
                num[n] = _directional_fd(pair, model, w, names, params, d, step)
            per_term[term] = max(per_term[term], vector_rel_error(flat_g[coords], num))
        done += 1
    return GradCheckResult(max(per_term.values()), per_term, done)


def _directional_fd(pair, model, w, names, params, d, step) -> float:
    offsets = []
    pos = 0
    for k in names:
        n = params[k].size
        offsets.append(d[pos : pos + n].reshape(params[k].shape))
        pos += n

    def shifted(sign):
        for k, o in zip(names, offsets):
            params[k] += sign * step * o
        val = total_loss(pair, model, w)
        for k, o in zip(names, offsets):
            params[k] -= sign * step * o
        return val

    fp = shifted(1.0)
    fm = shifted(-1.0)
    return (fp - fm) / (2 * step)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


def sample_pairs(labels: Sequence[int], n_pairs: int, rng) -> list[tuple[int, int]]:
    """Balanced positive/negative index pairs."""
    labels = np.asarray(labels)
    by_label: dict[int, np.ndarray] = {int(c): np.flatnonzero(labels == c) for c in np.unique(labels)}
    pos_ok = [c for c, idx in by_label.items() if len(idx) >= 2]
    pairs = []
    for k in range(n_pairs):
        if k % 2 == 0 and pos_ok:
            c = pos_ok[rng.integers(len(pos_ok))]
            i, j = rng.choice(by_label[c], 2, replace=False)
        else:
            i = int(rng.integers(len(labels)))
            others = np.flatnonzero(labels != labels[i])
            if len(others) == 0:
                j = int(rng.integers(len(labels)))
            else:
                j = int(others[rng.integers(len(others))])
        pairs.append((int(i), int(j)))
    order = rng.permutation(len(pairs))
    return [pairs[k] for k in order]


def train_toy(
    dataset: Sequence[tuple[np.ndarray, int]],
    model: SeqModel,
    w: LossWeights | None = None,
    epochs: int = 50,
    seed: int = 0,
    lr: float = 1e-3,
    pairs_per_epoch: int = 32,
    batch: int = 4,
    clip: float = 5.0,
    probe_pairs: int = 16,
    progress: Callable[[int, float], None] | None = None,
) -> tuple[SeqModel, list[float]]:
    """Train ``model`` in place on labelled sequences.

    Each epoch draws fresh balanced pairs. The returned curve holds, per
    epoch, the mean loss over one fixed probe set of pairs evaluated after
    that epoch's updates, so it moves only when the weights do.
    """
    if not dataset:
        raise ValueError("empty training dataset")
    w = w or LossWeights()
    rng = np.random.default_rng(seed)
    labels = [int(c) for _, c in dataset]
    if max(labels) >= model.head.n_classes:
        raise ValueError(f"label {max(labels)} exceeds classifier size {model.head.n_classes}")
    probe = [
        TrainPair(dataset[i][0], dataset[j][0], labels[i], labels[j])
        for i, j in sample_pairs(labels, probe_pairs, np.random.default_rng([seed, 1]))
    ]
    params = model.params()
    state = AdamState.for_params(params, lr=lr)
    curve = []
    for epoch in range(epochs):
        pairs = sample_pairs(labels, pairs_per_epoch, rng)
        for b0 in range(0, len(pairs), batch):
            acc = {k: np.zeros_like(p) for k, p in params.items()}
            chunk = pairs[b0 : b0 + batch]
            for i, j in chunk:
                pair = TrainPair(dataset[i][0], dataset[j][0], labels[i], labels[j])
                _, grads = grad_total_loss(pair, model, w)
                for k in acc:
                    acc[k] += grads[k]
            for k in acc:
                acc[k] /= len(chunk)
            if clip:
                norm = math.sqrt(sum(float((g * g).sum()) for g in acc.values()))
                if norm > clip:
                    for g in acc.values():
                        g *= clip / norm
            adam_step(params, acc, state)
        curve.append(math.fsum(total_loss(p, model, w) for p in probe) / len(probe))
        if progress is not None:
            progress(epoch, curve[-1])
    return model, curve
