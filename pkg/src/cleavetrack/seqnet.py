"""Recurrent sequence encoders: GRU/LSTM cells, the shared-weight bi-GRU,
temporal pooling, the FC+ReLU head and the plain-text weight format.

Weight file grammar (one or more blocks per file)::

    block   := header section+
    header  := "seqnet-weights v1" kind n_layers d_in d_h
    kind    := "gru" | "lstm" | "head"
    section := name "[" layer "]" rows cols NEWLINE (row NEWLINE)*rows
             | name rows cols NEWLINE (row NEWLINE)*rows
    row     := real (" " real)*          # exactly ``cols`` values

Reals are written with ``repr`` so a save/load cycle is bit exact. Blank lines
and lines starting with ``#`` are ignored.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .kernels import gru_layer_forward

MAX_SEQ_LEN = 120
FEATURE_DIM = 128

GRU_GATES = ("z", "r", "h")
LSTM_GATES = ("i", "f", "o", "g")


class WeightFormatError(ValueError):
    """Malformed or inconsistent weight file."""


def sigmoid(x):
    # exp overflow only ever drives the result to its exact limit 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


# --------------------------------------------------------------------------
# parameter containers
# --------------------------------------------------------------------------


@dataclass
class GruLayer:
    """Gate blocks stacked as ``[z; r; h]`` along axis 0."""

    Wx: np.ndarray  # (3*d_h, d_in)
    U: np.ndarray  # (3*d_h, d_h)
    b: np.ndarray  # (3*d_h,)

    @property
    def d_h(self) -> int:
        return self.U.shape[1]

    @property
    def d_in(self) -> int:
        return self.Wx.shape[1]

    def gate(self, name: str, kind: str) -> np.ndarray:
        k = GRU_GATES.index(name)
        sl = slice(k * self.d_h, (k + 1) * self.d_h)
        return {"W": self.Wx, "U": self.U, "b": self.b}[kind][sl]

    @property
    def W_z(self):
        return self.gate("z", "W")

    @property
    def W_r(self):
        return self.gate("r", "W")

    @property
    def W_h(self):
        return self.gate("h", "W")

    @property
    def U_z(self):
        return self.gate("z", "U")

    @property
    def U_r(self):
        return self.gate("r", "U")

    @property
    def U_h(self):
        return self.gate("h", "U")

    @property
    def b_z(self):
        return self.gate("z", "b")

    @property
    def b_r(self):
        return self.gate("r", "b")

    @property
    def b_h(self):
        return self.gate("h", "b")


@dataclass
class GruWeights:
    layers: list[GruLayer]

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_h(self) -> int:
        return self.layers[0].d_h

    @classmethod
    def init(cls, n_layers: int = 4, d_in: int = 128, d_h: int = 128, rng=None) -> "GruWeights":
        """Uniform in +-sqrt(1/d_h)."""
        rng = np.random.default_rng(rng)
        s = np.sqrt(1.0 / d_h)
        layers = []
        for l in range(n_layers):
            din = d_in if l == 0 else d_h
            layers.append(
                GruLayer(
                    rng.uniform(-s, s, (3 * d_h, din)),
                    rng.uniform(-s, s, (3 * d_h, d_h)),
                    rng.uniform(-s, s, 3 * d_h),
                )
            )
        return cls(layers)

    @classmethod
    def zeros(cls, n_layers: int, d_in: int, d_h: int) -> "GruWeights":
        return cls(
            [
                GruLayer(np.zeros((3 * d_h, d_in if l == 0 else d_h)), np.zeros((3 * d_h, d_h)), np.zeros(3 * d_h))
                for l in range(n_layers)
            ]
        )


@dataclass
class LstmLayer:
    """Gate blocks stacked as ``[i; f; o; g]`` along axis 0."""

    Wx: np.ndarray  # (4*d_h, d_in)
    U: np.ndarray  # (4*d_h, d_h)
    b: np.ndarray  # (4*d_h,)

    @property
    def d_h(self) -> int:
        return self.U.shape[1]

    @property
    def d_in(self) -> int:
        return self.Wx.shape[1]


@dataclass
class LstmWeights:
    """Stacked LSTM plus the linear read-out used by the motion predictor.

    ``norm_mean``/``norm_scale`` map a box ``[cx, cy, w, h]`` to network space
    as ``(box - mean) / scale``.
    """

    layers: list[LstmLayer]
    W_out: np.ndarray  # (4, d_h)
    b_out: np.ndarray  # (4,)
    norm_mean: np.ndarray = field(default_factory=lambda: np.zeros(4))
    norm_scale: np.ndarray = field(default_factory=lambda: np.ones(4))

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def d_in(self) -> int:
        return self.layers[0].d_in

    @property
    def d_h(self) -> int:
        return self.layers[0].d_h

    @classmethod
    def init(cls, n_layers: int = 1, d_in: int = 4, d_h: int = 32, rng=None) -> "LstmWeights":
        rng = np.random.default_rng(rng)
        s = np.sqrt(1.0 / d_h)
        layers = []
        for l in range(n_layers):
            din = d_in if l == 0 else d_h
            b = rng.uniform(-s, s, 4 * d_h)
            b[d_h : 2 * d_h] += 1.0  # forget-gate bias
            layers.append(LstmLayer(rng.uniform(-s, s, (4 * d_h, din)), rng.uniform(-s, s, (4 * d_h, d_h)), b))
        return cls(layers, rng.uniform(-s, s, (4, d_h)), np.zeros(4))

    @classmethod
    def zeros(cls, n_layers: int = 1, d_in: int = 4, d_h: int = 32) -> "LstmWeights":
        layers = [
            LstmLayer(np.zeros((4 * d_h, d_in if l == 0 else d_h)), np.zeros((4 * d_h, d_h)), np.zeros(4 * d_h))
            for l in range(n_layers)
        ]
        return cls(layers, np.zeros((4, d_h)), np.zeros(4))


@dataclass
class HeadWeights:
    W_fc: np.ndarray  # (d_f, d_h)
    b_fc: np.ndarray  # (d_f,)
    W_cls: np.ndarray  # (K, d_f)
    b_cls: np.ndarray  # (K,)

    @property
    def d_in(self) -> int:
        return self.W_fc.shape[1]

    @property
    def d_feat(self) -> int:
        return self.W_fc.shape[0]

    @property
    def n_classes(self) -> int:
        return self.W_cls.shape[0]

    @classmethod
    def init(cls, d_in: int = 128, d_feat: int = FEATURE_DIM, n_classes: int = 10, rng=None) -> "HeadWeights":
        rng = np.random.default_rng(rng)
        s = np.sqrt(1.0 / d_in)
        sf = np.sqrt(1.0 / d_feat)
        return cls(
            rng.uniform(-s, s, (d_feat, d_in)),
            rng.uniform(0.0, s, d_feat),
            rng.uniform(-sf, sf, (n_classes, d_feat)),
            np.zeros(n_classes),
        )


@dataclass
class SeqModel:
    gru: GruWeights
    head: HeadWeights

    def params(self) -> dict[str, np.ndarray]:
        """Flat name -> array view of every trainable parameter."""
        out = {}
        for l, layer in enumerate(self.gru.layers):
            out[f"gru.{l}.Wx"] = layer.Wx
            out[f"gru.{l}.U"] = layer.U
            out[f"gru.{l}.b"] = layer.b
        out["head.W_fc"] = self.head.W_fc
        out["head.b_fc"] = self.head.b_fc
        out["head.W_cls"] = self.head.W_cls
        out["head.b_cls"] = self.head.b_cls
        return out

    def copy(self) -> "SeqModel":
        layers = [GruLayer(l.Wx.copy(), l.U.copy(), l.b.copy()) for l in self.gru.layers]
        h = self.head
        return SeqModel(GruWeights(layers), HeadWeights(h.W_fc.copy(), h.b_fc.copy(), h.W_cls.copy(), h.b_cls.copy()))

    @classmethod
    def init(cls, d_in=128, d_h=128, n_layers=4, d_feat=FEATURE_DIM, n_classes=10, rng=None) -> "SeqModel":
        rng = np.random.default_rng(rng)
        return cls(GruWeights.init(n_layers, d_in, d_h, rng), HeadWeights.init(d_h, d_feat, n_classes, rng))


# --------------------------------------------------------------------------
# cells
# --------------------------------------------------------------------------


def gru_cell_step(h, x, w: GruLayer) -> np.ndarray:
    """One GRU update ``h' = (1 - z) * h + z * tanh(W_h x + U_h (r * h) + b_h)``."""
    h = np.atleast_1d(np.asarray(h, dtype=np.float64))
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if h.shape != (w.d_h,) or x.shape != (w.d_in,):
        raise ValueError(f"gru step expects h of size {w.d_h} and x of size {w.d_in}, got {h.shape} and {x.shape}")
    z = sigmoid(w.W_z @ x + w.U_z @ h + w.b_z)
    r = sigmoid(w.W_r @ x + w.U_r @ h + w.b_r)
    c = np.tanh(w.W_h @ x + w.U_h @ (r * h) + w.b_h)
    return (1.0 - z) * h + z * c


def lstm_cell_step(h, c, x, w: LstmLayer) -> tuple[np.ndarray, np.ndarray]:
    h = np.atleast_1d(np.asarray(h, dtype=np.float64))
    c = np.atleast_1d(np.asarray(c, dtype=np.float64))
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    d = w.d_h
    if h.shape != (d,) or c.shape != (d,) or x.shape != (w.d_in,):
        raise ValueError(f"lstm step expects h, c of size {d} and x of size {w.d_in}")
    a = w.Wx @ x + w.U @ h + w.b
    i, f, o = sigmoid(a[:d]), sigmoid(a[d : 2 * d]), sigmoid(a[2 * d : 3 * d])
    g = np.tanh(a[3 * d :])
    c2 = f * c + i * g
    return o * np.tanh(c2), c2


def lstm_step_backward(h, c, x, w: LstmLayer, dh2, dc2):
    """Vector-Jacobian product of :func:`lstm_cell_step`.

    Returns ``(dh, dc, dx, dWx, dU, db)`` for upstream gradients on ``(h', c')``.
    """
    d = w.d_h
    a = w.Wx @ x + w.U @ h + w.b
    i, f, o = sigmoid(a[:d]), sigmoid(a[d : 2 * d]), sigmoid(a[2 * d : 3 * d])
    g = np.tanh(a[3 * d :])
    c2 = f * c + i * g
    tc = np.tanh(c2)
    do = dh2 * tc
    dc = dc2 + dh2 * o * (1.0 - tc * tc)
    da = np.concatenate([dc * g * i * (1 - i), dc * c * f * (1 - f), do * o * (1 - o), dc * i * (1 - g * g)])
    return w.U.T @ da, dc * f, w.Wx.T @ da, np.outer(da, x), np.outer(da, h), da


def lstm_forward(X, w: LstmWeights):
    """Run the stacked LSTM over ``X`` (T, d_in); returns top states and caches."""
    caches = []
    inp = np.asarray(X, dtype=np.float64)
    for layer in w.layers:
        T = inp.shape[0]
        hs = np.zeros((T + 1, layer.d_h))
        cs = np.zeros((T + 1, layer.d_h))
        for t in range(T):
            hs[t + 1], cs[t + 1] = lstm_cell_step(hs[t], cs[t], inp[t], layer)
        caches.append((inp, hs, cs))
        inp = hs[1:]
    return inp, caches


def lstm_backward(w: LstmWeights, caches, dtop):
    """Backpropagate ``dtop`` (T, d_h) on the top-layer outputs; returns per-layer grads."""
    grads = [None] * len(w.layers)
    dout = dtop
    for l in range(len(w.layers) - 1, -1, -1):
        layer = w.layers[l]
        inp, hs, cs = caches[l]
        T = inp.shape[0]
        dWx = np.zeros_like(layer.Wx)
        dU = np.zeros_like(layer.U)
        db = np.zeros_like(layer.b)
        dinp = np.zeros_like(inp)
        dh = np.zeros(layer.d_h)
        dc = np.zeros(layer.d_h)
        for t in range(T - 1, -1, -1):
            dh_prev, dc, dx, gW, gU, gb = lstm_step_backward(hs[t], cs[t], inp[t], layer, dh + dout[t], dc)
            dh = dh_prev
            dinp[t] = dx
            dWx += gW
            dU += gU
            db += gb
        grads[l] = (dWx, dU, db)
        dout = dinp
    return grads


# --------------------------------------------------------------------------
# bidirectional encoder
# --------------------------------------------------------------------------


@dataclass
class SeqOutputs:
    """Per-position outputs of the shared-weight bi-GRU.

    ``forward[i-1]`` is the summary of elements ``1..i``; ``backward[j-1]`` is
    the summary after the reverse pass consumed ``L..L-j+1`` (position ``-j``).
    Boundary ``i`` therefore pairs ``forward[i-1]`` (prefix) with
    ``backward[L-i-1]`` (suffix ``i+1..L``).
    """

    forward: np.ndarray  # (L, d_h) raw
    backward: np.ndarray  # (L, d_h) raw
    forward_headed: np.ndarray | None = None  # (L, d_f)
    backward_headed: np.ndarray | None = None

    def __len__(self) -> int:
        return self.forward.shape[0]


def run_stack(X: np.ndarray, gru: GruWeights):
    """Forward one direction through all layers; returns top output and caches."""
    caches = []
    inp = np.ascontiguousarray(X, dtype=np.float64)
    for layer in gru.layers:
        H, Z, R, C = gru_layer_forward(inp, layer.Wx, layer.U, layer.b)
        caches.append((inp, H, Z, R, C))
        inp = H
    return inp, caches


def apply_head(G: np.ndarray, head: HeadWeights) -> np.ndarray:
    return np.maximum(G @ head.W_fc.T + head.b_fc, 0.0)


def _as_sequence(seq) -> np.ndarray:
    X = np.asarray(seq, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("sequence must be a non-empty (L, d) array")
    if X.shape[0] > MAX_SEQ_LEN:
        X = X[-MAX_SEQ_LEN:]
    return X


def bigru_encode(seq, gru: GruWeights, head: HeadWeights | None = None) -> SeqOutputs:
    """Encode ``seq`` forward and reversed with the same weights.

    Only the most recent 120 elements are used for longer inputs.
    """
    X = _as_sequence(seq)
    if X.shape[1] != gru.d_in:
        raise ValueError(f"input dimension {X.shape[1]} does not match model input {gru.d_in}")
    fwd, _ = run_stack(X, gru)
    bwd, _ = run_stack(X[::-1], gru)
    out = SeqOutputs(fwd, bwd)
    if head is not None:
        out.forward_headed = apply_head(fwd, head)
        out.backward_headed = apply_head(bwd, head)
    return out


def temporal_pool(o: SeqOutputs, headed: bool = True) -> np.ndarray:
    """Mean over all 2L outputs."""
    if headed:
        f, b = o.forward_headed, o.backward_headed
        if f is None:
            raise ValueError("outputs carry no headed features")
    else:
        f, b = o.forward, o.backward
    L = f.shape[0]
    # offset by the elementwise minimum (order-free) so constants pool to themselves bit for bit
    base = np.minimum(f.min(axis=0), b.min(axis=0))
    return base + ((f - base).sum(axis=0) + (b - base).sum(axis=0)) / (2 * L)


# --------------------------------------------------------------------------
# weight files
# --------------------------------------------------------------------------

HEADER = "seqnet-weights v1"


def _fmt_row(row) -> str:
    return " ".join(repr(float(v)) for v in row)


def _sections(w) -> tuple[str, int, int, int, list[tuple[str, np.ndarray]]]:
    if isinstance(w, GruWeights):
        secs = []
        for l, layer in enumerate(w.layers, start=1):
            for kind in ("W", "U", "b"):
                for g in GRU_GATES:
                    secs.append((f"{kind}_{g}[{l}]", np.atleast_2d(layer.gate(g, kind))))
        return "gru", w.n_layers, w.d_in, w.d_h, secs
    if isinstance(w, LstmWeights):
        secs = []
        for l, layer in enumerate(w.layers, start=1):
            d = layer.d_h
            for kind, arr in (("W", layer.Wx), ("U", layer.U), ("b", layer.b)):
                for k, g in enumerate(LSTM_GATES):
                    secs.append((f"{kind}_{g}[{l}]", np.atleast_2d(arr[k * d : (k + 1) * d])))
        secs += [
            ("W_out", w.W_out),
            ("b_out", np.atleast_2d(w.b_out)),
            ("norm_mean", np.atleast_2d(w.norm_mean)),
            ("norm_scale", np.atleast_2d(w.norm_scale)),
        ]
        return "lstm", w.n_layers, w.d_in, w.d_h, secs
    if isinstance(w, HeadWeights):
        secs = [
            ("W_fc", w.W_fc),
            ("b_fc", np.atleast_2d(w.b_fc)),
            ("W_cls", w.W_cls),
            ("b_cls", np.atleast_2d(w.b_cls)),
        ]
        return "head", 1, w.d_in, w.d_feat, secs
    raise TypeError(f"cannot serialise {type(w).__name__}")


def dumps_weights(*blocks) -> str:
    lines = []
    for w in blocks:
        kind, n, d_in, d_h, secs = _sections(w)
        lines.append(f"{HEADER} {kind} {n} {d_in} {d_h}")
        for name, arr in secs:
            arr = np.asarray(arr, dtype=np.float64)
            lines.append(f"{name} {arr.shape[0]} {arr.shape[1]}")
            lines.extend(_fmt_row(r) for r in arr)
    return "\n".join(lines) + "\n"


def save_weights(w, path) -> None:
    Path(path).write_text(dumps_weights(w))


def save_model(model: SeqModel, path) -> None:
    Path(path).write_text(dumps_weights(model.gru, model.head))


def _parse_blocks(text: str):
    lines = [(n, ln.strip()) for n, ln in enumerate(text.splitlines(), start=1)]
    lines = [(n, ln) for n, ln in lines if ln and not ln.startswith("#")]
    blocks = []
    pos = 0
    while pos < len(lines):
        n, ln = lines[pos]
        if not ln.startswith(HEADER):
            raise WeightFormatError(f"line {n}: expected '{HEADER}' header, got {ln[:40]!r}")
        parts = ln[len(HEADER) :].split()
        if len(parts) != 4 or parts[0] not in ("gru", "lstm", "head"):
            raise WeightFormatError(f"line {n}: bad header {ln!r}")
        try:
            kind, dims = parts[0], tuple(int(p) for p in parts[1:])
        except ValueError:
            raise WeightFormatError(f"line {n}: non-integer dimensions in header") from None
        pos += 1
        secs: dict[str, np.ndarray] = {}
        while pos < len(lines) and not lines[pos][1].startswith(HEADER):
            n, ln = lines[pos]
            head = ln.split()
            if len(head) != 3:
                raise WeightFormatError(f"line {n}: expected section header '<name> <rows> <cols>'")
            name = head[0]
            try:
                rows, cols = int(head[1]), int(head[2])
            except ValueError:
                raise WeightFormatError(f"section {name}: non-integer shape") from None
            body = lines[pos + 1 : pos + 1 + rows]
            if len(body) < rows or any(b[1].startswith(HEADER) for b in body):
                raise WeightFormatError(f"section {name}: truncated, expected {rows} rows")
            try:
                arr = np.array([[float(v) for v in b[1].split()] for b in body], dtype=np.float64)
            except ValueError:
                raise WeightFormatError(f"section {name}: non-numeric entry") from None
            if arr.shape != (rows, cols):
                raise WeightFormatError(f"section {name}: expected {rows}x{cols} values")
            secs[name] = arr
            pos += 1 + rows
        blocks.append(_build(kind, dims, secs))
    return blocks


def _take(secs, name, shape):
    if name not in secs:
        raise WeightFormatError(f"missing section {name}")
    arr = secs[name]
    if arr.shape != shape:
        raise WeightFormatError(f"section {name}: shape {arr.shape} does not match header, expected {shape}")
    return arr


def _build(kind, dims, secs):
    n, d_in, d_h = dims
    if kind == "gru":
        layers = []
        for l in range(1, n + 1):
            din = d_in if l == 1 else d_h
            W = np.vstack([_take(secs, f"W_{g}[{l}]", (d_h, din)) for g in GRU_GATES])
            U = np.vstack([_take(secs, f"U_{g}[{l}]", (d_h, d_h)) for g in GRU_GATES])
            b = np.concatenate([_take(secs, f"b_{g}[{l}]", (1, d_h))[0] for g in GRU_GATES])
            layers.append(GruLayer(W, U, b))
        return GruWeights(layers)
    if kind == "lstm":
        layers = []
        for l in range(1, n + 1):
            din = d_in if l == 1 else d_h
            W = np.vstack([_take(secs, f"W_{g}[{l}]", (d_h, din)) for g in LSTM_GATES])
            U = np.vstack([_take(secs, f"U_{g}[{l}]", (d_h, d_h)) for g in LSTM_GATES])
            b = np.concatenate([_take(secs, f"b_{g}[{l}]", (1, d_h))[0] for g in LSTM_GATES])
            layers.append(LstmLayer(W, U, b))
        return LstmWeights(
            layers,
            _take(secs, "W_out", (4, d_h)),
            _take(secs, "b_out", (1, 4))[0],
            _take(secs, "norm_mean", (1, 4))[0],
            _take(secs, "norm_scale", (1, 4))[0],
        )
    W_fc = _take(secs, "W_fc", (d_h, d_in))
    b_fc = _take(secs, "b_fc", (1, d_h))[0]
    if "W_cls" not in secs:
        raise WeightFormatError("missing section W_cls")
    K = secs["W_cls"].shape[0]
    return HeadWeights(W_fc, b_fc, _take(secs, "W_cls", (K, d_h)), _take(secs, "b_cls", (1, K))[0])


def load_weights(path):
    """Load a single-block weight file (GRU, LSTM or head)."""
    blocks = _parse_blocks(Path(path).read_text())
    if len(blocks) != 1:
        raise WeightFormatError(f"expected one weight block, found {len(blocks)}")
    return blocks[0]


def load_model(path) -> SeqModel:
    """Load a GRU block followed by a head block."""
    blocks = _parse_blocks(Path(path).read_text())
    gru = [b for b in blocks if isinstance(b, GruWeights)]
    head = [b for b in blocks if isinstance(b, HeadWeights)]
    if len(gru) != 1:
        raise WeightFormatError("model file needs exactly one gru block")
    if len(head) != 1:
        raise WeightFormatError("model file needs exactly one head block")
    if head[0].d_in != gru[0].d_h:
        raise WeightFormatError(f"head input {head[0].d_in} does not match gru hidden size {gru[0].d_h}")
    return SeqModel(gru[0], head[0])
