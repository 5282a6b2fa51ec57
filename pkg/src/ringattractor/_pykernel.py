"""Pure-numpy LIF kernel; the fallback when the compiled core is missing.

Floating-point operations are ordered exactly as in ``_ckernel.pyx`` so the
two backends produce bit-identical rasters.
"""

import numpy as np


def _ordered_column_sums(rows, spk):
    """Sum ``rows[q, post]`` over q for each post, in the order q_start(post), ...

    The starting spike for each postsynaptic neuron is the first spiking
    index >= post, wrapping around.  Summation runs sequentially, which keeps
    the result invariant under rotation of neuron indices.
    """
    m, n = rows.shape
    start = np.searchsorted(spk, np.arange(n))
    order = (start[None, :] + np.arange(m)[:, None]) % m
    ordered = np.take_along_axis(rows, order, axis=0)
    return np.cumsum(ordered, axis=0)[-1]


def advance(
    v_mem,
    refrac,
    acc,
    traces,
    weights,
    decay_syn,
    decay_mem,
    drive,
    coef,
    ext,
    ext_steps,
    noise,
    v_th,
    v_reset,
    ref_steps,
    inc,
):
    """Advance the network ``coef.shape[0]`` steps in place.

    Returns ``(steps, neurons)`` int64 arrays of spike events, ordered by
    step then neuron.
    """
    n_steps, n_chan = coef.shape
    use_noise = noise.shape[0] > 0
    out_step = []
    out_idx = []
    for s in range(n_steps):
        acc *= decay_syn[:, None]
        traces *= decay_syn[:, None]

        cur = drive
        if s < ext_steps:
            cur = cur + ext
        if use_noise:
            cur = cur + noise[s]
        rec = coef[s, 0] * acc[0]
        for k in range(1, n_chan):
            rec = rec + coef[s, k] * acc[k]
        cur = cur + rec

        blocked = refrac > 0
        v_new = cur + (v_mem - cur) * decay_mem
        v_mem[:] = np.where(blocked, v_reset, v_new)
        refrac[blocked] -= 1

        fired = (~blocked) & (v_mem >= v_th)
        if not fired.any():
            continue
        spk = np.flatnonzero(fired)
        v_mem[spk] = v_reset
        refrac[spk] = ref_steps
        out_step.append(np.full(len(spk), s, dtype=np.int64))
        out_idx.append(spk.astype(np.int64))
        for k in range(n_chan):
            traces[k, spk] += inc
            if len(spk) == 1:
                acc[k] += inc * weights[k, spk[0]]
            else:
                acc[k] += inc * _ordered_column_sums(weights[k, spk], spk)

    if out_step:
        return np.concatenate(out_step), np.concatenate(out_idx)
    empty = np.zeros(0, dtype=np.int64)
    return empty, empty.copy()
