"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat N] [--pipeline]

Both variants are called directly, so the CLEAVETRACK_DISABLE_NUMBA flag does
not matter here. ``--pipeline`` additionally times a synthetic track+cleave
run in two subprocesses, one per backend.
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import textwrap
import timeit

import numpy as np

from cleavetrack.kernels import geometry, gru, hungarian


def _boxes(rng, n):
    return np.column_stack([rng.uniform(0, 1000, (n, 2)), rng.uniform(20, 80, (n, 2))])


def cases(rng):
    a, b = _boxes(rng, 40), _boxes(rng, 40)
    yield "iou 40x40", lambda: geometry._iou_matrix_numba(a, b), lambda: geometry._iou_matrix_numpy(a, b)

    for n in (8, 32, 128):
        c = rng.uniform(0, 10, (n, n))
        yield f"hungarian {n}x{n}", lambda c=c: hungarian._solve_numba(c), lambda c=c: hungarian._solve_numpy(c)

    d, L = 128, 60
    X = rng.normal(size=(L, d))
    s = 1 / np.sqrt(d)
    Wx, U, bb = rng.uniform(-s, s, (3 * d, d)), rng.uniform(-s, s, (3 * d, d)), rng.uniform(-s, s, 3 * d)
    H, Z, R, C = gru._forward_body(X, Wx, U, bb)
    dH = rng.normal(size=H.shape)
    yield (
        f"gru forward L={L} d={d}",
        lambda: gru._forward_numba(X, Wx, U, bb),
        lambda: gru._forward_body(X, Wx, U, bb),
    )
    yield (
        f"gru backward L={L} d={d}",
        lambda: gru._backward_numba(X, Wx, U, H, Z, R, C, dH),
        lambda: gru._backward_body(X, Wx, U, H, Z, R, C, dH),
    )


def bench(repeat: int) -> None:
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, fast, ref in cases(rng):
        fast()  # compile
        t_fast = min(timeit.repeat(fast, number=1, repeat=repeat)) * 1e3
        t_ref = min(timeit.repeat(ref, number=1, repeat=repeat)) * 1e3
        print(f"{name:<26}{t_fast:>10.3f}{t_ref:>10.3f}{t_ref / t_fast:>8.1f}x")


_PIPELINE = textwrap.dedent(
    """
    import time
    from cleavetrack import kernels
    from cleavetrack.cleave import CleaveConfig, cleave_all
    from cleavetrack.generation import GenConfig, generate_tracklets
    from cleavetrack.seqnet import SeqModel
    from cleavetrack.synth import SceneSpec, generate_scene, oracle_embeddings
    spec = SceneSpec(n_identities=10, n_frames=200, miss_rate=0.05, jitter=1.0, n_random_crossings=4)
    sc = generate_scene(spec)
    emb = oracle_embeddings(sc)
    model = SeqModel.init(rng=0)
    cfg = GenConfig(image_width=spec.width, image_height=spec.height)
    generate_tracklets(sc.detections_by_frame(), emb, cfg)  # warm-up and compile
    t0 = time.perf_counter()
    tr = generate_tracklets(sc.detections_by_frame(), emb, cfg)
    t1 = time.perf_counter()
    cleave_all(tr, emb, model, CleaveConfig())
    t2 = time.perf_counter()
    print(f"{kernels.backend():<8}track {t1 - t0:7.3f} s   cleave {t2 - t1:7.3f} s")
    """
)


def bench_pipeline() -> None:
    sys.stdout.flush()
    for flag in ("0", "1"):
        env = dict(os.environ, CLEAVETRACK_DISABLE_NUMBA=flag)
        subprocess.run([sys.executable, "-c", _PIPELINE], env=env, check=True)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--pipeline", action="store_true")
    args = ap.parse_args()
    bench(args.repeat)
    if args.pipeline:
        bench_pipeline()


if __name__ == "__main__":
    main()
