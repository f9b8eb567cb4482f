# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled spherical-delay accumulation kernels.

These are the hot inner loops: every (channel, voxel) pair costs a
distance, a linear interpolation onto fast-time sample bins, and an
accumulate. Loop partitioning is fixed (spread: channel-major; gather:
voxel-major) so repeated runs are bit-identical.

Sample bins are 1-based: bin p covers fast time p * dt, so a delay of
u = d / (c0 * dt) samples interpolates between bins floor(u) and
floor(u) + 1; parts falling outside [1, p_count] are dropped and their
absolute weight is returned so callers can report the truncated energy.
"""

from libc.math cimport fabs, floor, sqrt

import numpy as np


def spread(const double[::1] values, const double[:, ::1] vox, const double[:, ::1] chan,
           double inv_step, double amp_scale, double min_dist, Py_ssize_t p_count):
    """Accumulate per-channel delay profiles s[q, p] from voxel values.

    inv_step is 1 / (c0 * dt); amp_scale is the voxel volume ds**3.
    Returns (s, kept_weight, dropped_weight, singular_flag).
    """
    cdef Py_ssize_t q_count = chan.shape[0]
    cdef Py_ssize_t n_count = vox.shape[0]
    out = np.zeros((q_count, p_count))
    cdef double[:, ::1] s = out
    cdef Py_ssize_t q, n, b
    cdef double cx, cy, cz, dx, dy, dz, d, u, w, amp, aw
    cdef double kept = 0.0, dropped = 0.0
    cdef int singular = 0

    for q in range(q_count):
        cx = chan[q, 0]
        cy = chan[q, 1]
        cz = chan[q, 2]
        for n in range(n_count):
            dx = vox[n, 0] - cx
            dy = vox[n, 1] - cy
            dz = vox[n, 2] - cz
            d = sqrt(dx * dx + dy * dy + dz * dz)
            if d < min_dist:
                singular = 1
                continue
            u = d * inv_step
            b = <Py_ssize_t>floor(u)
            w = u - b
            amp = values[n] * amp_scale / d
            aw = fabs(amp)
            if 1 <= b <= p_count:
                s[q, b - 1] += amp * (1.0 - w)
                kept += aw * (1.0 - w)
            else:
                dropped += aw * (1.0 - w)
            if 1 <= b + 1 <= p_count:
                s[q, b] += amp * w
                kept += aw * w
            else:
                dropped += aw * w
    return out, kept, dropped, singular


def gather(const double[:, ::1] h, const double[:, ::1] vox, const double[:, ::1] chan,
           double inv_step, double amp_scale, double min_dist, int weighted):
    """Transposed accumulation: pull h[q, :] back onto voxels.

    weighted=1 applies the adjoint weight amp_scale / d (exact transpose
    of spread); weighted=0 uses unit weights (back-projection).
    Returns (f, singular_flag).
    """
    cdef Py_ssize_t q_count = chan.shape[0]
    cdef Py_ssize_t n_count = vox.shape[0]
    cdef Py_ssize_t p_count = h.shape[1]
    out = np.zeros(n_count)
    cdef double[::1] f = out
    cdef Py_ssize_t q, n, b
    cdef double vx, vy, vz, dx, dy, dz, d, u, w, val, acc
    cdef int singular = 0

    for n in range(n_count):
        vx = vox[n, 0]
        vy = vox[n, 1]
        vz = vox[n, 2]
        acc = 0.0
        for q in range(q_count):
            dx = vx - chan[q, 0]
            dy = vy - chan[q, 1]
            dz = vz - chan[q, 2]
            d = sqrt(dx * dx + dy * dy + dz * dz)
            if d < min_dist:
                singular = 1
                continue
            u = d * inv_step
            b = <Py_ssize_t>floor(u)
            w = u - b
            val = 0.0
            if 1 <= b <= p_count:
                val = h[q, b - 1] * (1.0 - w)
            if 1 <= b + 1 <= p_count:
                val += h[q, b] * w
            if weighted:
                acc += val * amp_scale / d
            else:
                acc += val
        f[n] = acc
    return out, singular
