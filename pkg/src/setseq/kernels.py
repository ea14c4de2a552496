"""Hot numeric kernels: numba-jitted implementations with pure numpy twins.

Every public function dispatches on :mod:`setseq.backend`. The numpy twins
follow the same accumulation order as the jitted loops wherever that is
achievable, so the two backends agree to floating-point round-off (and
bit-exactly for the simulator and the convolution forward/input-gradient
paths, where the element-wise operation order is identical).
"""

from __future__ import annotations

import numpy as np

from .backend import use_numba

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def deco(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return deco


# ---------------------------------------------------------------------------
# Causal depthwise convolution along the time axis.
# Input u has shape (N, T, C), kernel (C, K):
#   y[n, t, c] = sum_{j=0}^{min(K, t+1)-1} ker[c, j] * u[n, t - j, c]
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nb_conv_forward_cm(u, ker, y):
    # channel-major blocks (N, C, T): the inner time loop is contiguous.
    # scratch is a local allocation, which lets the compiler prove no
    # aliasing with the inputs and vectorize the shifted accumulation
    n_rows, n_c, n_t = u.shape
    k_len = ker.shape[1]
    scratch = np.empty(n_t, u.dtype)
    for n in range(n_rows):
        for c in range(n_c):
            k0 = ker[c, 0]
            for t in range(n_t):
                scratch[t] = k0 * u[n, c, t]
            for j in range(1, min(k_len, n_t)):
                kj = ker[c, j]
                for t in range(n_t - j):
                    scratch[t + j] = scratch[t + j] + kj * u[n, c, t]
            for t in range(n_t):
                y[n, c, t] = scratch[t]


def _np_conv_forward_cm(u, ker, y):
    n_t = u.shape[2]
    k_len = ker.shape[1]
    np.multiply(u, ker[:, 0][:, None], out=y)
    for j in range(1, min(k_len, n_t)):
        y[:, :, j:] += ker[:, j][:, None] * u[:, :, : n_t - j]


@njit(cache=True)
def _nb_conv_backward_input_cm(g, ker, du):
    n_rows, n_c, n_t = g.shape
    k_len = ker.shape[1]
    for n in range(n_rows):
        for c in range(n_c):
            k0 = ker[c, 0]
            for t in range(n_t):
                du[n, c, t] = k0 * g[n, c, t]
            for j in range(1, min(k_len, n_t)):
                kj = ker[c, j]
                for t in range(n_t - j):
                    du[n, c, t] = du[n, c, t] + kj * g[n, c, t + j]


def _np_conv_backward_input_cm(g, ker, du):
    n_t = g.shape[2]
    k_len = ker.shape[1]
    np.multiply(g, ker[:, 0][:, None], out=du)
    for j in range(1, min(k_len, n_t)):
        du[:, :, : n_t - j] += ker[:, j][:, None] * g[:, :, j:]


@njit(cache=True)
def _nb_conv_backward_kernel_cm(g, u, dk):
    # eight independent accumulator lanes vectorize the reduction while
    # keeping a fixed, machine-independent summation order
    n_rows, n_c, n_t = g.shape
    k_len = dk.shape[1]
    lanes = np.empty(8, u.dtype)
    for n in range(n_rows):
        for c in range(n_c):
            for j in range(min(k_len, n_t)):
                span = n_t - j
                for l in range(8):
                    lanes[l] = 0.0
                full = span - (span % 8)
                for t0 in range(0, full, 8):
                    for l in range(8):
                        lanes[l] += g[n, c, j + t0 + l] * u[n, c, t0 + l]
                acc = ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + (
                    (lanes[4] + lanes[5]) + (lanes[6] + lanes[7]))
                for t in range(full, span):
                    acc += g[n, c, j + t] * u[n, c, t]
                dk[c, j] += acc


def _np_conv_backward_kernel_cm(g, u, dk):
    n_t = g.shape[2]
    k_len = dk.shape[1]
    for j in range(min(k_len, n_t)):
        dk[:, j] += np.einsum("nct,nct->c", g[:, :, j:], u[:, :, : n_t - j])


def conv_forward_cm_into(u_cm: np.ndarray, ker: np.ndarray, y_cm: np.ndarray):
    """Channel-major causal depthwise convolution: blocks are (N, C, T)."""
    if use_numba() and HAVE_NUMBA:
        _nb_conv_forward_cm(u_cm, ker, y_cm)
    else:
        _np_conv_forward_cm(u_cm, ker, y_cm)


def conv_backward_input_cm_into(g_cm: np.ndarray, ker: np.ndarray, du_cm: np.ndarray):
    if use_numba() and HAVE_NUMBA:
        _nb_conv_backward_input_cm(g_cm, ker, du_cm)
    else:
        _np_conv_backward_input_cm(g_cm, ker, du_cm)


def conv_backward_kernel_cm(g_cm: np.ndarray, u_cm: np.ndarray, k_len: int) -> np.ndarray:
    # the einsum reduction beats the jitted loop at panel sizes (see
    # benchmarks/bench_kernels.py), so this one is numpy on both backends
    dk = np.zeros((u_cm.shape[1], k_len), dtype=u_cm.dtype)
    _np_conv_backward_kernel_cm(g_cm, u_cm, dk)
    return dk


def causal_conv_forward(u: np.ndarray, ker: np.ndarray) -> np.ndarray:
    """y[n,t,c] = sum_j ker[c,j] * u[n,t-j,c], zero-padded before t=0."""
    u_cm = np.ascontiguousarray(u.transpose(0, 2, 1))
    y_cm = np.empty_like(u_cm)
    conv_forward_cm_into(u_cm, ker, y_cm)
    return np.ascontiguousarray(y_cm.transpose(0, 2, 1))


def causal_conv_backward_input(g: np.ndarray, ker: np.ndarray) -> np.ndarray:
    g_cm = np.ascontiguousarray(g.transpose(0, 2, 1))
    du_cm = np.empty_like(g_cm)
    conv_backward_input_cm_into(g_cm, ker, du_cm)
    return np.ascontiguousarray(du_cm.transpose(0, 2, 1))


def causal_conv_backward_kernel(g: np.ndarray, u: np.ndarray, k_len: int) -> np.ndarray:
    g_cm = np.ascontiguousarray(g.transpose(0, 2, 1))
    u_cm = np.ascontiguousarray(u.transpose(0, 2, 1))
    return conv_backward_kernel_cm(g_cm, u_cm, k_len)


# ---------------------------------------------------------------------------
# Contagion panel sampling.
#
# Three states, state 3 absorbing. A unit in state s in {1, 2} with feature
# x and group intensity lam moves according to the row-normalized weights
#   stay-ish block: (1 + x) on the diagonal of the 2x2 active block, 1 off it,
#   absorbing column: (lam + mu) * (1 + 0.1 x).
# Group intensity updates as lam[g, t+1] = beta * lam[g, t] + alpha * frac[g, t]
# where frac is the realized defaulting fraction of group g at step t.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nb_sim_paths(x, init_states, uniforms, mu, alpha, beta, lam0, denom_active,
                  states, lam, frac, true_probs):
    n_units, n_t = states.shape
    for i in range(n_units):
        states[i, 0] = init_states[i]
    lam[0, 0] = lam0
    lam[1, 0] = lam0
    for t in range(n_t - 1):
        nd0 = 0
        nd1 = 0
        na0 = 0
        na1 = 0
        lam_t0 = lam[0, t]
        lam_t1 = lam[1, t]
        for i in range(n_units):
            s = states[i, t]
            if s == 3:
                true_probs[i, t, 0] = 0.0
                true_probs[i, t, 1] = 0.0
                true_probs[i, t, 2] = 1.0
                states[i, t + 1] = 3
                continue
            xi = x[i]
            lam_x = lam_t1 if xi == 1 else lam_t0
            pd = (lam_x + mu) * (1.0 + 0.1 * xi)
            z = 2.0 + xi + pd
            if s == 1:
                p1 = (1.0 + xi) / z
                p2 = 1.0 / z
            else:
                p1 = 1.0 / z
                p2 = (1.0 + xi) / z
            true_probs[i, t, 0] = p1
            true_probs[i, t, 1] = p2
            true_probs[i, t, 2] = pd / z
            if xi == 1:
                na1 += 1
            else:
                na0 += 1
            ui = uniforms[t, i]
            if ui < p1:
                ns = 1
            elif ui < p1 + p2:
                ns = 2
            else:
                ns = 3
                if xi == 1:
                    nd1 += 1
                else:
                    nd0 += 1
            states[i, t + 1] = ns
        if denom_active:
            den0 = na0
            den1 = na1
        else:
            den0 = n_units // 2
            den1 = n_units // 2
        f0 = nd0 / den0 if den0 > 0 else 0.0
        f1 = nd1 / den1 if den1 > 0 else 0.0
        frac[0, t] = f0
        frac[1, t] = f1
        lam[0, t + 1] = beta * lam[0, t] + alpha * f0
        lam[1, t + 1] = beta * lam[1, t] + alpha * f1
    # final column: transition law out of the last recorded state
    t = n_t - 1
    lam_t0 = lam[0, t]
    lam_t1 = lam[1, t]
    for i in range(n_units):
        s = states[i, t]
        if s == 3:
            true_probs[i, t, 0] = 0.0
            true_probs[i, t, 1] = 0.0
            true_probs[i, t, 2] = 1.0
            continue
        xi = x[i]
        lam_x = lam_t1 if xi == 1 else lam_t0
        pd = (lam_x + mu) * (1.0 + 0.1 * xi)
        z = 2.0 + xi + pd
        if s == 1:
            true_probs[i, t, 0] = (1.0 + xi) / z
            true_probs[i, t, 1] = 1.0 / z
        else:
            true_probs[i, t, 0] = 1.0 / z
            true_probs[i, t, 1] = (1.0 + xi) / z
        true_probs[i, t, 2] = pd / z
    frac[0, t] = 0.0
    frac[1, t] = 0.0


def _np_sim_paths(x, init_states, uniforms, mu, alpha, beta, lam0, denom_active,
                  states, lam, frac, true_probs):
    n_units, n_t = states.shape
    states[:, 0] = init_states
    lam[:, 0] = lam0
    xf = x.astype(np.float64)
    is1 = x == 1
    half = n_units // 2

    def fill_rows(t):
        s_t = states[:, t]
        lam_x = np.where(is1, lam[1, t], lam[0, t])
        pd = (lam_x + mu) * (1.0 + 0.1 * xf)
        z = 2.0 + xf + pd
        diag = (1.0 + xf) / z
        off = 1.0 / z
        in1 = s_t == 1
        in2 = s_t == 2
        absorbed = s_t == 3
        true_probs[in1, t, 0] = diag[in1]
        true_probs[in1, t, 1] = off[in1]
        true_probs[in2, t, 0] = off[in2]
        true_probs[in2, t, 1] = diag[in2]
        active = ~absorbed
        true_probs[active, t, 2] = (pd / z)[active]
        true_probs[absorbed, t, 0] = 0.0
        true_probs[absorbed, t, 1] = 0.0
        true_probs[absorbed, t, 2] = 1.0
        return active

    for t in range(n_t - 1):
        active = fill_rows(t)
        p1 = true_probs[:, t, 0]
        p2 = true_probs[:, t, 1]
        u_t = uniforms[t]
        nxt = np.where(u_t < p1, 1, np.where(u_t < p1 + p2, 2, 3)).astype(np.uint8)
        nxt[~active] = 3
        states[:, t + 1] = nxt
        defaulted = active & (nxt == 3)
        for g, mask in ((0, ~is1), (1, is1)):
            nd = int(np.count_nonzero(defaulted & mask))
            den = int(np.count_nonzero(active & mask)) if denom_active else half
            f = nd / den if den > 0 else 0.0
            frac[g, t] = f
            lam[g, t + 1] = beta * lam[g, t] + alpha * f
    fill_rows(n_t - 1)
    frac[:, n_t - 1] = 0.0


def simulate_paths(x, init_states, uniforms, mu, alpha, beta, lam0, denom_active):
    """Run the full contagion panel given pre-drawn transition uniforms.

    Returns (states, lam, frac, true_probs); ``uniforms`` has shape (T-1, M).
    """
    n_units = x.shape[0]
    n_t = uniforms.shape[0] + 1
    states = np.empty((n_units, n_t), dtype=np.uint8)
    lam = np.empty((2, n_t), dtype=np.float64)
    frac = np.empty((2, n_t), dtype=np.float64)
    true_probs = np.empty((n_units, n_t, 3), dtype=np.float64)
    args = (x, init_states, uniforms, float(mu), float(alpha), float(beta),
            float(lam0), bool(denom_active), states, lam, frac, true_probs)
    if use_numba() and HAVE_NUMBA:
        _nb_sim_paths(*args)
    else:
        _np_sim_paths(*args)
    return states, lam, frac, true_probs


# ---------------------------------------------------------------------------
# Outer-shaped products used by unit-to-unit attention: (M, d) x (M, d) -> (M, M)
# with a small inner dimension d. BLAS handles this shape poorly, hence the
# jitted loop; the numpy twin is a per-slice matmul.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _nb_outer_scores(a, bt, out):
    n_a, d = a.shape
    n_b = bt.shape[1]
    for i in range(n_a):
        for j in range(n_b):
            acc = a[i, 0] * bt[0, j]
            for h in range(1, d):
                acc = acc + a[i, h] * bt[h, j]
            out[i, j] = acc


def outer_scores(a: np.ndarray, b: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """out[i, j] = sum_h a[i, h] * b[j, h] for a (Ma, d), b (Mb, d).

    BLAS with a preallocated output wins over the jitted loop here (the
    loop twin survives for the benchmark comparison).
    """
    if out is None:
        out = np.empty((a.shape[0], b.shape[0]), dtype=a.dtype)
    np.matmul(a, b.T, out=out)
    return out


def outer_scores_jit(a: np.ndarray, b: np.ndarray, out: np.ndarray) -> np.ndarray:
    bt = np.ascontiguousarray(b.T)
    _nb_outer_scores(a, bt, out)
    return out


def warmup():
    """Compile the jitted kernels on tiny inputs (no-op for the numpy backend)."""
    if not (use_numba() and HAVE_NUMBA):
        return
    u = np.zeros((2, 4, 3))
    k = np.zeros((3, 2))
    causal_conv_forward(u, k)
    causal_conv_backward_input(u, k)
    causal_conv_backward_kernel(u, u, 2)
    f32 = np.float32
    causal_conv_forward(u.astype(f32), k.astype(f32))
    causal_conv_backward_input(u.astype(f32), k.astype(f32))
    causal_conv_backward_kernel(u.astype(f32), u.astype(f32), 2)
    x = np.zeros(4, np.uint8)
    init = np.ones(4, np.uint8)
    uni = np.full((3, 4), 0.5)
    simulate_paths(x, init, uni, 0.001, 4.0, 0.5, 0.0, True)
    a = np.zeros((3, 2))
    outer_scores(a, a)
    outer_scores(a.astype(f32), a.astype(f32))
