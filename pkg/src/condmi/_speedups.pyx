# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""BLAS-backed training and inference kernels (compiled backend).

Same entry points and formulas as ``condmi._python_kernels``; see that
module for the conventions. Matrices are row-major, so every dgemm call
below works on the transposed (column-major) view of its operands.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, log1p, pow, sqrt
from scipy.linalg.cython_blas cimport dgemm

from ._python_kernels import IDENTITY, RELU, SIGMOID

cnp.import_array()

NAME = "compiled"

cdef int ACT_IDENTITY = IDENTITY, ACT_RELU = RELU, ACT_SIGMOID = SIGMOID
cdef int MAX_LAYERS = 32


cdef inline double _sig(double v) noexcept nogil:
    cdef double e
    if v >= 0.0:
        e = exp(-v)
        return 1.0 / (1.0 + e)
    e = exp(v)
    return e / (1.0 + e)


cdef void _layer_forward(const double* H, int M, int din,
                         const double* W, const double* b, int dout,
                         int code, double* Z) noexcept nogil:
    # Z(M, dout) = H(M, din) @ W(dout, din)^T, then bias + activation.
    cdef double one = 1.0, zero = 0.0
    cdef char ct = b'T', cn = b'N'
    cdef int i, j
    cdef double v
    dgemm(&ct, &cn, &dout, &M, &din, &one, W, &din, H, &din, &zero, Z, &dout)
    for i in range(M):
        for j in range(dout):
            v = Z[i * dout + j] + b[j]
            if code == 1:
                Z[i * dout + j] = v if v > 0.0 else 0.0
            elif code == 2:
                Z[i * dout + j] = _sig(v)
            else:
                Z[i * dout + j] = v


cdef void _grad_weights(const double* D, const double* H, int M, int dout, int din,
                        double* gW) noexcept nogil:
    # gW(dout, din) = D(M, dout)^T @ H(M, din)
    cdef double one = 1.0, zero = 0.0
    cdef char cn = b'N', ct = b'T'
    dgemm(&cn, &ct, &din, &dout, &M, &one, H, &din, D, &dout, &zero, gW, &din)


cdef void _backprop_delta(const double* D, const double* W, int M, int dout, int din,
                          double* Dh) noexcept nogil:
    # Dh(M, din) = D(M, dout) @ W(dout, din)
    cdef double one = 1.0, zero = 0.0
    cdef char cn = b'N'
    dgemm(&cn, &cn, &din, &M, &dout, &one, W, &din, D, &dout, &zero, Dh, &din)


cdef void _apply_act_grad(double* Dh, const double* H, int M, int d, int code) noexcept nogil:
    cdef int i
    cdef double h
    if code == 1:
        for i in range(M * d):
            if H[i] <= 0.0:
                Dh[i] = 0.0
    elif code == 2:
        for i in range(M * d):
            h = H[i]
            Dh[i] *= h * (1.0 - h)


cdef void _adam(double* p, const double* g, double* m, double* v, int size,
                double lr, double b1, double b2, double c1, double c2,
                double eps) noexcept nogil:
    cdef int i
    for i in range(size):
        m[i] = b1 * m[i] + (1.0 - b1) * g[i]
        v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i]
        p[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)


def forward_batch(list weights, list biases, act_codes, X):
    """Activations of the final layer for every row of X."""
    cdef cnp.ndarray Xa = np.ascontiguousarray(X, dtype=np.float64)
    cdef const double[:, ::1] Xv = Xa
    cdef const cnp.int32_t[::1] codes = np.ascontiguousarray(act_codes, dtype=np.int32)
    cdef int L = len(weights)
    cdef int n = Xv.shape[0]
    if L > MAX_LAYERS:
        raise ValueError(f"at most {MAX_LAYERS} layers supported")
    outputs = []
    cdef const double* Hprev
    cdef double[:, ::1] out_view
    cdef const double[:, ::1] Wv
    cdef const double[::1] bv
    cdef int l, din, dout
    if n == 0:
        return np.empty((0, weights[L - 1].shape[0]))
    Hprev = &Xv[0, 0]
    for l in range(L):
        Wv = weights[l]
        bv = biases[l]
        dout = Wv.shape[0]
        din = Wv.shape[1]
        out = np.empty((n, dout))
        outputs.append(out)
        out_view = out
        _layer_forward(Hprev, n, din, &Wv[0, 0], &bv[0], dout, codes[l], &out_view[0, 0])
        Hprev = &out_view[0, 0]
    return outputs[L - 1]


def train_epoch(list weights, list biases, act_codes, X, labels, order,
                int minibatch_size, list m_w, list v_w, list m_b, list v_b,
                long step_count, double lr, double beta1, double beta2,
                double adam_eps, double omega_clip):
    """One pass over `order` in consecutive minibatch_size chunks; mutates
    parameters and Adam moments in place. Returns (step_count, mean loss)."""
    cdef const double[:, ::1] Xv = X
    cdef const double[::1] yv = labels
    cdef const cnp.int64_t[::1] orderv = order
    cdef const cnp.int32_t[::1] codes = np.ascontiguousarray(act_codes, dtype=np.int32)
    cdef int L = len(weights)
    if L > MAX_LAYERS:
        raise ValueError(f"at most {MAX_LAYERS} layers supported")

    cdef double* Wp[32]
    cdef double* bp[32]
    cdef double* mWp[32]
    cdef double* vWp[32]
    cdef double* mbp[32]
    cdef double* vbp[32]
    cdef double* Hp[33]
    cdef double* Dp[32]
    cdef double* gWp[32]
    cdef double* gbp[32]
    cdef int din[32]
    cdef int dout[32]

    cdef double[:, ::1] view2
    cdef double[::1] view1
    cdef int l
    keep = []  # holds buffer references so the pointers stay valid
    for l in range(L):
        view2 = weights[l]
        Wp[l] = &view2[0, 0]
        dout[l] = view2.shape[0]
        din[l] = view2.shape[1]
        view1 = biases[l]
        bp[l] = &view1[0]
        view2 = m_w[l]
        mWp[l] = &view2[0, 0]
        view2 = v_w[l]
        vWp[l] = &view2[0, 0]
        view1 = m_b[l]
        mbp[l] = &view1[0]
        view1 = v_b[l]
        vbp[l] = &view1[0]
    if dout[L - 1] != 1:
        raise ValueError("the output layer must have a single unit")

    cdef int cap = minibatch_size
    buf = np.empty((cap, din[0]))
    keep.append(buf)
    view2 = buf
    Hp[0] = &view2[0, 0]
    for l in range(L):
        buf = np.empty((cap, dout[l]))
        keep.append(buf)
        view2 = buf
        Hp[l + 1] = &view2[0, 0]
        buf = np.empty((cap, dout[l]))
        keep.append(buf)
        view2 = buf
        Dp[l] = &view2[0, 0]
        buf = np.empty((dout[l], din[l]))
        keep.append(buf)
        view2 = buf
        gWp[l] = &view2[0, 0]
        buf = np.empty(dout[l])
        keep.append(buf)
        view1 = buf
        gbp[l] = &view1[0]
    ybuf = np.empty(cap)
    keep.append(ybuf)
    view1 = ybuf
    cdef double* yb = &view1[0]

    cdef long n = orderv.shape[0]
    cdef int d0 = din[0]
    cdef long start, row
    cdef int M, i, j
    cdef long step = step_count
    cdef double total = 0.0, acc, w, wc, lab, c1, c2
    cdef const double* outp

    with nogil:
        start = 0
        while start < n:
            M = <int> (minibatch_size if n - start >= minibatch_size else n - start)
            for i in range(M):
                row = orderv[start + i]
                for j in range(d0):
                    Hp[0][i * d0 + j] = Xv[row, j]
                yb[i] = yv[row]

            for l in range(L):
                _layer_forward(Hp[l], M, din[l], Wp[l], bp[l], dout[l], codes[l], Hp[l + 1])

            # clamped cross-entropy of the sigmoid head plus its delta
            acc = 0.0
            outp = Hp[L]
            for i in range(M):
                w = outp[i]
                lab = yb[i]
                wc = w
                if wc < omega_clip:
                    wc = omega_clip
                elif wc > 1.0 - omega_clip:
                    wc = 1.0 - omega_clip
                acc += -(lab * log(wc) + (1.0 - lab) * log1p(-wc))
                if w == wc:
                    Dp[L - 1][i] = (wc - lab) / M
                else:
                    Dp[L - 1][i] = 0.0
            total += (acc / M) * M

            for l in range(L - 1, -1, -1):
                _grad_weights(Dp[l], Hp[l], M, dout[l], din[l], gWp[l])
                for j in range(dout[l]):
                    acc = 0.0
                    for i in range(M):
                        acc += Dp[l][i * dout[l] + j]
                    gbp[l][j] = acc
                if l:
                    _backprop_delta(Dp[l], Wp[l], M, dout[l], din[l], Dp[l - 1])
                    _apply_act_grad(Dp[l - 1], Hp[l], M, din[l], codes[l - 1])

            step += 1
            c1 = 1.0 - pow(beta1, <double> step)
            c2 = 1.0 - pow(beta2, <double> step)
            for l in range(L):
                _adam(Wp[l], gWp[l], mWp[l], vWp[l], dout[l] * din[l],
                      lr, beta1, beta2, c1, c2, adam_eps)
                _adam(bp[l], gbp[l], mbp[l], vbp[l], dout[l],
                      lr, beta1, beta2, c1, c2, adam_eps)

            start += minibatch_size

    return step, total / n
