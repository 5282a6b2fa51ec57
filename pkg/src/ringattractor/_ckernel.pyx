# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled LIF kernel.  Mirrors ``_pykernel.advance`` operation for operation."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def advance(
    double[::1] v_mem,
    cnp.int64_t[::1] refrac,
    double[:, ::1] acc,
    double[:, ::1] traces,
    double[:, :, ::1] weights,
    double[::1] decay_syn,
    double[::1] decay_mem,
    double[::1] drive,
    double[:, ::1] coef,
    double[::1] ext,
    Py_ssize_t ext_steps,
    double[:, ::1] noise,
    double v_th,
    double v_reset,
    cnp.int64_t ref_steps,
    double inc,
):
    cdef Py_ssize_t n_steps = coef.shape[0]
    cdef Py_ssize_t n_chan = coef.shape[1]
    cdef Py_ssize_t n = v_mem.shape[0]
    cdef bint use_noise = noise.shape[0] > 0
    cdef Py_ssize_t s, i, k, q, m, p, cap, total = 0
    cdef double cur, rec, tmp, d

    cap = 4096
    out_step = np.empty(cap, dtype=np.int64)
    out_idx = np.empty(cap, dtype=np.int64)
    cdef cnp.int64_t[::1] o_step = out_step
    cdef cnp.int64_t[::1] o_idx = out_idx
    spk_buf = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] spk = spk_buf

    for s in range(n_steps):
        with nogil:
            for k in range(n_chan):
                d = decay_syn[k]
                for i in range(n):
                    acc[k, i] = acc[k, i] * d
                    traces[k, i] = traces[k, i] * d

            m = 0
            for i in range(n):
                cur = drive[i]
                if s < ext_steps:
                    cur = cur + ext[i]
                if use_noise:
                    cur = cur + noise[s, i]
                rec = coef[s, 0] * acc[0, i]
                for k in range(1, n_chan):
                    rec = rec + coef[s, k] * acc[k, i]
                cur = cur + rec

                if refrac[i] > 0:
                    v_mem[i] = v_reset
                    refrac[i] -= 1
                    continue
                v_mem[i] = cur + (v_mem[i] - cur) * decay_mem[i]
                if v_mem[i] >= v_th:
                    v_mem[i] = v_reset
                    refrac[i] = ref_steps
                    spk[m] = i
                    m += 1

        if m == 0:
            continue
        if total + m > cap:
            while total + m > cap:
                cap *= 2
            out_step = np.resize(out_step, cap)
            out_idx = np.resize(out_idx, cap)
            o_step = out_step
            o_idx = out_idx
        for q in range(m):
            o_step[total + q] = s
            o_idx[total + q] = spk[q]
        total += m

        with nogil:
            for k in range(n_chan):
                for q in range(m):
                    traces[k, spk[q]] += inc
                if m == 1:
                    for i in range(n):
                        acc[k, i] += inc * weights[k, spk[0], i]
                    continue
                p = 0
                for i in range(n):
                    # first spiking index >= i; spk is ascending
                    while p < m and spk[p] < i:
                        p += 1
                    tmp = weights[k, spk[p % m], i]
                    for q in range(1, m):
                        tmp = tmp + weights[k, spk[(p + q) % m], i]
                    acc[k, i] += inc * tmp

    return out_step[:total].copy(), out_idx[:total].copy()
