"""Pure-numpy fallback for the delay-accumulation kernels.

Mirrors the compiled extension's semantics exactly: same distances,
same 1-based sample-bin interpolation, same truncation bookkeeping,
same singular-distance guard. Used automatically when the compiled
module is unavailable, and kept as an independent check of it.
"""

import numpy as np


def spread(values, vox, chan, inv_step, amp_scale, min_dist, p_count):
    """Accumulate per-channel delay profiles s[q, p] from voxel values.

    Parameters
    ----------
    values : (n,) float array
        Voxel values in flattened grid order.
    vox : (n, 3) float array
        Voxel center positions.
    chan : (q, 3) float array
        Channel (transducer element) positions.
    inv_step : float
        1 / (c0 * dt): converts distance to a fractional sample index.
    amp_scale : float
        Voxel volume ds**3.
    min_dist : float
        Distances below this flag singular geometry; such pairs are
        skipped entirely.
    p_count : int
        Number of fast-time samples per channel.

    Returns
    -------
    (s, kept_weight, dropped_weight, singular_flag)
    """
    q_count = chan.shape[0]
    s = np.zeros((q_count, p_count))
    kept = 0.0
    dropped = 0.0
    singular = False
    for q in range(q_count):
        diff = vox - chan[q]
        d = np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2 + diff[:, 2] ** 2)
        ok = d >= min_dist
        if not ok.all():
            singular = True
        d_ok = d[ok]
        u = d_ok * inv_step
        b = np.floor(u).astype(np.int64)
        w = u - b
        amp = values[ok] * amp_scale / d_ok
        aw = np.abs(amp)
        lo_in = (b >= 1) & (b <= p_count)
        hi_in = (b + 1 >= 1) & (b + 1 <= p_count)
        np.add.at(s[q], b[lo_in] - 1, (amp * (1.0 - w))[lo_in])
        np.add.at(s[q], b[hi_in], (amp * w)[hi_in])
        kept += (aw * (1.0 - w))[lo_in].sum() + (aw * w)[hi_in].sum()
        dropped += (aw * (1.0 - w))[~lo_in].sum() + (aw * w)[~hi_in].sum()
    return s, float(kept), float(dropped), singular


def gather(h, vox, chan, inv_step, amp_scale, min_dist, weighted):
    """Transposed accumulation: pull h[q, :] back onto voxels.

    weighted=1 applies the adjoint weight amp_scale / d (exact
    transpose of spread); weighted=0 uses unit weights. Returns
    (f, singular_flag).
    """
    n_count = vox.shape[0]
    p_count = h.shape[1]
    f = np.zeros(n_count)
    singular = False
    for q in range(chan.shape[0]):
        diff = vox - chan[q]
        d = np.sqrt(diff[:, 0] ** 2 + diff[:, 1] ** 2 + diff[:, 2] ** 2)
        ok = d >= min_dist
        if not ok.all():
            singular = True
        # Safe distances for the masked-out pairs; their contribution is
        # zeroed below.
        d_safe = np.where(ok, d, 1.0)
        u = d_safe * inv_step
        b = np.floor(u).astype(np.int64)
        w = u - b
        lo_in = (b >= 1) & (b <= p_count)
        hi_in = (b + 1 >= 1) & (b + 1 <= p_count)
        row = h[q]
        val = np.zeros(n_count)
        val[lo_in] = row[b[lo_in] - 1] * (1.0 - w[lo_in])
        val[hi_in] += row[b[hi_in]] * w[hi_in]
        if weighted:
            contrib = np.where(ok, val * amp_scale / d_safe, 0.0)
        else:
            contrib = np.where(ok, val, 0.0)
        f += contrib
    return f, singular
