# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False, language_level=3
"""Compiled fused score-loss kernel; mirrors ``_kernels_py.score_loss_batch``.

Weights are packed into one flat row-major buffer (plus a transposed copy)
and every sample is processed with plain C loops.  Every inner loop is a
contiguous ``y += a * x`` update so the compiler can vectorize it without
reassociating floating-point sums.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline void axpy(double a, const double* x, double* y, Py_ssize_t n) noexcept nogil:
    cdef Py_ssize_t k
    for k in range(n):
        y[k] += a * x[k]


def score_loss_batch_packed(
    cnp.int64_t[::1] dims,
    double[::1] Wf,
    double[::1] bf,
    double slope,
    bint out_relu,
    int mode,
    double[:, ::1] G,
    double[:, ::1] X,
    double[:, ::1] T,
):
    cdef Py_ssize_t L = dims.shape[0] - 1
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t d0 = dims[0]
    cdef Py_ssize_t dL = dims[L]
    cdef Py_ssize_t l, i, r, c, k, din, dout, maxd = 0
    cdef Py_ssize_t total_act = 0, total_hidden = 0

    wo_np = np.zeros(L + 1, dtype=np.int64)
    ao_np = np.zeros(L + 2, dtype=np.int64)
    mo_np = np.zeros(L + 1, dtype=np.int64)
    cdef cnp.int64_t[::1] wo = wo_np
    cdef cnp.int64_t[::1] ao = ao_np
    cdef cnp.int64_t[::1] mo = mo_np
    for l in range(L + 1):
        ao[l + 1] = ao[l] + dims[l]
        if dims[l] > maxd:
            maxd = dims[l]
    for l in range(L):
        wo[l + 1] = wo[l] + dims[l + 1] * dims[l]
        mo[l + 1] = mo[l] + dims[l + 1]
    total_act = ao[L + 1]
    total_hidden = mo[L]

    # transposed copy: Wt[l] has shape (din, dout)
    Wt_np = np.empty(Wf.shape[0])
    cdef double[::1] Wt = Wt_np
    for l in range(L):
        din = dims[l]
        dout = dims[l + 1]
        for r in range(dout):
            for c in range(din):
                Wt[wo[l] + c * dout + r] = Wf[wo[l] + r * din + c]

    gW_np = np.zeros(Wf.shape[0])
    gb_np = np.zeros(bf.shape[0])
    gG_np = np.zeros((n, G.shape[1]))
    act_np = np.zeros(total_act)
    pre_np = np.zeros(total_hidden)
    mask_np = np.zeros(total_hidden)
    delta_np = np.zeros(total_hidden)
    ua_np = np.zeros(maxd)
    ub_np = np.zeros(maxd)
    fg_np = np.zeros(dL)
    cdef double[::1] gW = gW_np
    cdef double[::1] gb = gb_np
    cdef double[:, ::1] gG = gG_np
    cdef double[::1] act = act_np
    cdef double[::1] pre = pre_np
    cdef double[::1] mask = mask_np
    cdef double[::1] delta = delta_np
    cdef double[::1] fg = fg_np
    cdef double[::1] ua_v = ua_np
    cdef double[::1] ub_v = ub_np
    cdef double* ua = &ua_v[0]
    cdef double* ub = &ub_v[0]
    cdef double* tmp
    cdef double alpha, acc, diff, loss = 0.0, fxk, vg, z

    with nogil:
        for i in range(n):
            # forward pass: pre = b + W a, recording masks
            for c in range(d0):
                act[c] = X[i, c]
            for l in range(L):
                din = dims[l]
                dout = dims[l + 1]
                if l < L - 1:
                    alpha = slope
                elif out_relu:
                    alpha = 0.0
                else:
                    alpha = 1.0
                for r in range(dout):
                    pre[mo[l] + r] = bf[mo[l] + r]
                for c in range(din):
                    axpy(act[ao[l] + c], &Wt[wo[l] + c * dout], &pre[mo[l]], dout)
                for r in range(dout):
                    z = pre[mo[l] + r]
                    if z >= 0.0:
                        mask[mo[l] + r] = 1.0
                    else:
                        mask[mo[l] + r] = alpha
                    act[ao[l + 1] + r] = z * mask[mo[l] + r]

            # effective condition vector, written into the top delta slot
            for k in range(dL):
                fxk = act[ao[L] + k]
                if mode == 0:
                    acc = G[i, k]
                elif mode == 1:
                    acc = G[i, k] if fxk > 0.0 else 0.0
                else:
                    acc = G[i, 2 * k] + 2.0 * fxk * G[i, 2 * k + 1]
                delta[mo[L - 1] + k] = acc * mask[mo[L - 1] + k]

            # reverse sweep: delta_l = D_l W_{l+1}^T delta_{l+1}
            for l in range(L - 1, 0, -1):
                din = dims[l]
                dout = dims[l + 1]
                for c in range(din):
                    delta[mo[l - 1] + c] = 0.0
                for r in range(dout):
                    axpy(delta[mo[l] + r], &Wf[wo[l] + r * din], &delta[mo[l - 1]], din)
                for c in range(din):
                    delta[mo[l - 1] + c] *= mask[mo[l - 1] + c]

            # score s = -W_1^T delta_1, residual r = 2 (s - t) into ua
            dout = dims[1]
            for c in range(d0):
                ub[c] = 0.0
            for r in range(dout):
                axpy(delta[r], &Wf[r * d0], ub, d0)
            for c in range(d0):
                diff = -ub[c] - T[i, c]
                loss += diff * diff
                ua[c] = 2.0 * diff

            # forward push of the residual with rank-one weight gradients
            for l in range(L):
                din = dims[l]
                dout = dims[l + 1]
                for r in range(dout):
                    axpy(-delta[mo[l] + r], ua, &gW[wo[l] + r * din], din)
                    ub[r] = 0.0
                for c in range(din):
                    axpy(ua[c], &Wt[wo[l] + c * dout], ub, dout)
                for r in range(dout):
                    ub[r] *= mask[mo[l] + r]
                tmp = ua
                ua = ub
                ub = tmp

            # ua now holds J r; d loss / d v = -J r
            for k in range(dL):
                vg = -ua[k]
                fxk = act[ao[L] + k]
                if mode == 0:
                    gG[i, k] = vg
                elif mode == 1:
                    gG[i, k] = vg if fxk > 0.0 else 0.0
                else:
                    gG[i, 2 * k] = vg
                    gG[i, 2 * k + 1] = 2.0 * fxk * vg
                    fg[k] = 2.0 * G[i, 2 * k + 1] * vg

            if mode == 2:
                # ordinary backprop of fg through f
                for k in range(dL):
                    ua[k] = fg[k] * mask[mo[L - 1] + k]
                for l in range(L - 1, -1, -1):
                    din = dims[l]
                    dout = dims[l + 1]
                    for r in range(dout):
                        gb[mo[l] + r] += ua[r]
                        axpy(ua[r], &act[ao[l]], &gW[wo[l] + r * din], din)
                    if l > 0:
                        for c in range(din):
                            ub[c] = 0.0
                        for r in range(dout):
                            axpy(ua[r], &Wf[wo[l] + r * din], ub, din)
                        for c in range(din):
                            ub[c] *= mask[mo[l - 1] + c]
                        tmp = ua
                        ua = ub
                        ub = tmp

    return loss, gW_np, gb_np, gG_np
