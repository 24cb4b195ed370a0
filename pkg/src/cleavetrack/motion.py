"""Position prediction for the motion cue and mean tracklet velocity."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import BBox, Tracklet
from .seqnet import LstmWeights, lstm_forward, lstm_backward

MAX_HISTORY = 10
MIN_RECURRENT_HISTORY = 3

# (frame, box) pairs, strictly increasing frames
MotionHistory = Sequence[tuple[int, BBox]]


def history_of(tau: Tracklet, length: int = MAX_HISTORY) -> list[tuple[int, BBox]]:
    return [(n.t, n.box) for n in tau.nodes[-length:]]


def _check_history(h: MotionHistory) -> None:
    if len(h) == 0:
        raise ValueError("empty motion history")
    frames = [f for f, _ in h]
    if any(b <= a for a, b in zip(frames, frames[1:])):
        raise ValueError("motion history frames must be strictly increasing")


def _ls_velocity(frames: np.ndarray, values: np.ndarray) -> np.ndarray:
    # slope of the least-squares line through (frame, value) per column
    t = frames - frames.mean()
    denom = float(t @ t)
    if denom == 0.0:
        return np.zeros(values.shape[1])
    return t @ (values - values.mean(axis=0)) / denom


def predict_const_velocity(h: MotionHistory, target_frame: int) -> BBox:
    """Extrapolate the center along the least-squares velocity; keep the last size."""
    _check_history(h)
    last_t, last = h[-1]
    if target_frame <= last_t:
        raise ValueError(f"target frame {target_frame} not after last history frame {last_t}")
    if len(h) == 1:
        return last
    frames = np.array([f for f, _ in h], dtype=np.float64)
    centers = np.array([[b.cx, b.cy] for _, b in h], dtype=np.float64)
    v = _ls_velocity(frames, centers)
    # anchor on the fitted line rather than the last (possibly jittered) point
    fit = centers.mean(axis=0) + v * (target_frame - frames.mean())
    return BBox(float(fit[0]), float(fit[1]), last.w, last.h)


def mean_velocity(tau: Tracklet) -> tuple[float, float, bool]:
    """Endpoint velocity ``(vx, vy, degenerate)`` in pixels per frame."""
    if len(tau) < 2:
        return 0.0, 0.0, True
    a, b = tau.head, tau.tail
    dt = b.t - a.t
    return (b.box.cx - a.box.cx) / dt, (b.box.cy - a.box.cy) / dt, False


# --------------------------------------------------------------------------
# recurrent predictor
# --------------------------------------------------------------------------


def motion_normalizer(width: float, height: float, mean_w: float, mean_h: float):
    """Mean/scale pair: centers relative to the image middle, sizes to the data mean, all over image size."""
    mean = np.array([width / 2, height / 2, mean_w, mean_h], dtype=np.float64)
    scale = np.array([width, height, width, height], dtype=np.float64)
    return mean, scale


_MIN_SIZE = 1.0


def predict_recurrent(h: MotionHistory, weights: LstmWeights) -> BBox:
    """Next-frame box from the LSTM read-out of the normalised history."""
    _check_history(h)
    if len(h) < MIN_RECURRENT_HISTORY:
        raise ValueError(f"recurrent prediction needs at least {MIN_RECURRENT_HISTORY} history nodes")
    X = (np.array([b.as_array() for _, b in h[-MAX_HISTORY:]]) - weights.norm_mean) / weights.norm_scale
    top, _ = lstm_forward(X, weights)
    y = weights.W_out @ top[-1] + weights.b_out
    box = y * weights.norm_scale + weights.norm_mean
    return BBox(float(box[0]), float(box[1]), max(float(box[2]), _MIN_SIZE), max(float(box[3]), _MIN_SIZE))


def predict(h: MotionHistory, target_frame: int, weights: LstmWeights | None = None) -> BBox:
    """Recurrent prediction chained one frame at a time when weights are given,
    otherwise (or for short histories) constant velocity."""
    if weights is None or len(h) < MIN_RECURRENT_HISTORY:
        return predict_const_velocity(h, target_frame)
    hist = list(h)
    box = None
    for f in range(hist[-1][0] + 1, target_frame + 1):
        box = predict_recurrent(hist, weights)
        hist = hist[1:] + [(f, box)] if len(hist) >= MAX_HISTORY else hist + [(f, box)]
    return box


def _motion_loss_grad(X, target, w: LstmWeights):
    top, caches = lstm_forward(X, w)
    y = w.W_out @ top[-1] + w.b_out
    err = y - target
    loss = float(err @ err)
    dy = 2 * err
    dtop = np.zeros_like(top)
    dtop[-1] = w.W_out.T @ dy
    layer_grads = lstm_backward(w, caches, dtop)
    grads = {"W_out": np.outer(dy, top[-1]), "b_out": dy}
    for l, (dWx, dU, db) in enumerate(layer_grads):
        grads[f"{l}.Wx"] = dWx
        grads[f"{l}.U"] = dU
        grads[f"{l}.b"] = db
    return loss, grads


def _lstm_params(w: LstmWeights) -> dict[str, np.ndarray]:
    p = {"W_out": w.W_out, "b_out": w.b_out}
    for l, layer in enumerate(w.layers):
        p[f"{l}.Wx"] = layer.Wx
        p[f"{l}.U"] = layer.U
        p[f"{l}.b"] = layer.b
    return p


def train_motion_lstm(
    tracks: Sequence[np.ndarray],
    width: float,
    height: float,
    d_h: int = 32,
    steps: int = 3000,
    lr: float = 3e-3,
    history: tuple[int, int] = (MIN_RECURRENT_HISTORY, MAX_HISTORY),
    seed: int = 0,
) -> tuple[LstmWeights, list[float]]:
    """Fit the next-box predictor on ground-truth box sequences (each (T, 4)).

    Samples a random window of ``history`` length per step and regresses the
    following box. Returns weights and the per-step squared error in
    normalised space.
    """
    from .learn import AdamState, adam_step

    rng = np.random.default_rng(seed)
    tracks = [np.asarray(t, dtype=np.float64) for t in tracks if len(t) > history[0]]
    if not tracks:
        raise ValueError("no track long enough for motion training")
    sizes = np.concatenate([t[:, 2:] for t in tracks])
    w = LstmWeights.init(1, 4, d_h, rng)
    w.norm_mean, w.norm_scale = motion_normalizer(width, height, *sizes.mean(axis=0))
    params = _lstm_params(w)
    state = AdamState.for_params(params, lr=lr)
    curve = []
    for _ in range(steps):
        tr = tracks[rng.integers(len(tracks))]
        L = int(rng.integers(history[0], min(history[1], len(tr) - 1) + 1))
        s = int(rng.integers(0, len(tr) - L))
        X = (tr[s : s + L] - w.norm_mean) / w.norm_scale
        target = (tr[s + L] - w.norm_mean) / w.norm_scale
        loss, grads = _motion_loss_grad(X, target, w)
        adam_step(params, grads, state)
        curve.append(loss)
    return w, curve
