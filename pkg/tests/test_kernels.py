"""Both kernel backends against each other and against brute force."""
import itertools
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from cleavetrack import kernels
from cleavetrack.core import BBox, iou
from cleavetrack.kernels import geometry, gru, hungarian

SOLVERS = {"numba": hungarian._solve_numba, "numpy": hungarian._solve_numpy}


def brute_min(c):
    n = c.shape[0]
    return min(sum(c[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


@pytest.mark.parametrize("backend", SOLVERS)
def test_square_solver_matches_brute_force(backend, rng):
    solve = SOLVERS[backend]
    for _ in range(200):
        n = int(rng.integers(1, 7))
        c = rng.integers(0, 20, (n, n)).astype(float)
        perm = solve(c)
        assert sorted(perm) == list(range(n))
        assert c[np.arange(n), perm].sum() == brute_min(c)


@pytest.mark.parametrize("backend", SOLVERS)
def test_square_solver_real_valued(backend, rng):
    solve = SOLVERS[backend]
    for _ in range(100):
        n = int(rng.integers(1, 7))
        c = rng.normal(size=(n, n)) * 10
        assert c[np.arange(n), solve(c)].sum() == pytest.approx(brute_min(c), abs=1e-9)


def test_backends_agree_on_larger_problems(rng):
    for n in (20, 60):
        c = rng.uniform(0, 1, (n, n))
        a, b = hungarian._solve_numba(c), hungarian._solve_numpy(c)
        assert c[np.arange(n), a].sum() == pytest.approx(c[np.arange(n), b].sum(), abs=1e-12)


box_rows = arrays(np.float64, st.tuples(st.integers(0, 6), st.just(4)), elements=st.floats(1, 100))


@given(box_rows, box_rows)
def test_iou_backends_agree_with_scalar_iou(a, b):
    m1 = geometry._iou_matrix_numba(a, b)
    m2 = geometry._iou_matrix_numpy(a, b)
    assert m1.shape == (len(a), len(b))
    np.testing.assert_allclose(m1, m2, rtol=0, atol=1e-15)
    for i in range(len(a)):
        for j in range(len(b)):
            assert m1[i, j] == pytest.approx(iou(BBox(*a[i]), BBox(*b[j])), abs=1e-15)


def _gru_problem(rng, L=7, d_in=4, d_h=3):
    X = rng.normal(size=(L, d_in))
    Wx, U, b = rng.normal(size=(3 * d_h, d_in)), rng.normal(size=(3 * d_h, d_h)), rng.normal(size=3 * d_h)
    return X, Wx, U, b


def test_gru_backends_agree(rng):
    X, Wx, U, b = _gru_problem(rng)
    f1 = gru._forward_numba(X, Wx, U, b)
    f2 = gru._forward_body(X, Wx, U, b)
    for p, q in zip(f1, f2):
        np.testing.assert_allclose(p, q, rtol=1e-13, atol=1e-14)
    dH = rng.normal(size=f1[0].shape)
    b1 = gru._backward_numba(X, Wx, U, *f1, dH)
    b2 = gru._backward_body(X, Wx, U, *f2, dH)
    for p, q in zip(b1, b2):
        np.testing.assert_allclose(p, q, rtol=1e-12, atol=1e-13)


def test_gru_layer_backward_matches_finite_differences(rng):
    X, Wx, U, b = _gru_problem(rng)
    dH = rng.normal(size=(X.shape[0], U.shape[1]))

    def loss(X, Wx, U, b):
        return float((gru.gru_layer_forward(X, Wx, U, b)[0] * dH).sum())

    H, Z, R, C = gru.gru_layer_forward(X, Wx, U, b)
    grads = gru.gru_layer_backward(X, Wx, U, H, Z, R, C, dH)
    args = [X, Wx, U, b]
    for k, g in enumerate(grads):
        num = np.zeros_like(args[k])
        for idx in np.ndindex(args[k].shape):
            orig = args[k][idx]
            args[k][idx] = orig + 1e-6
            up = loss(*args)
            args[k][idx] = orig - 1e-6
            down = loss(*args)
            args[k][idx] = orig
            num[idx] = (up - down) / 2e-6
        np.testing.assert_allclose(g, num, rtol=1e-6, atol=1e-8)


def test_env_flag_selects_numpy_backend():
    code = "from cleavetrack import kernels; print(kernels.backend())"
    for flag, expected in (("1", "numpy"), ("0", "numba" if kernels.numba is not None else "numpy")):
        env = dict(os.environ, CLEAVETRACK_DISABLE_NUMBA=flag)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == expected
