"""Compiled inner loops for the windowed interlacement sampler.

A replica is simulated entirely inside the window: walks step uniformly while
in W, and on exiting to an adjacent site z the excursion outside W is resolved
in one draw from the precomputed entrance law (escape forever with probability
1 - h(z), otherwise re-enter at a site distributed as the exact first-entrance
measure). Trajectory labels are tracked per site as the minimum label of any
visiting trajectory, so the field can be thinned to any lower level exactly.

Draw order per replica stream (shared with the Python reference engine):
Poisson count; then per trajectory: label uniform, start categorical, one
direction draw per step, one uniform per window exit.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .rng import categorical_from_cdf, make_state, next_double, poisson, randbelow


@njit(cache=True, nogil=True)
def _pad_flat(coords, pad_lo, pad_strides):
    idx = 0
    for i in range(coords.shape[0]):
        idx += (coords[i] - pad_lo[i]) * pad_strides[i]
    return idx


@njit(cache=True, nogil=True)
def _entry_search(cdf, lo_idx, v):
    lo = 0
    hi = cdf.shape[1] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[lo_idx, mid] <= v:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, nogil=True)
def sample_replicas_exact(seed, stream0, n_replicas, u_max, mean,
                          lo, extents, strides,
                          pad_lo, pad_strides, out_row_of,
                          bnd_flat, bnd_coords, eq_cdf, ent_h, ent_cdf,
                          max_steps, minlabel):
    """Fill minlabel[(replica, window flat index)] for n_replicas replicas.

    minlabel must come in as +inf. Returns a status array: 0 ok, 1 if some
    trajectory exceeded max_steps (that replica's field is then invalid).
    """
    d = lo.shape[0]
    status = np.zeros(n_replicas, dtype=np.int64)
    coords = np.zeros(d, dtype=np.int64)
    for r in range(n_replicas):
        st = make_state(np.uint64(seed), np.uint64(stream0 + r))
        n_traj = poisson(st, mean)
        for _ in range(n_traj):
            label = u_max * next_double(st)
            b = categorical_from_cdf(st, eq_cdf)
            flat = bnd_flat[b]
            for i in range(d):
                coords[i] = bnd_coords[b, i]
            steps = 0
            alive = True
            while alive:
                if label < minlabel[r, flat]:
                    minlabel[r, flat] = label
                steps += 1
                if steps > max_steps:
                    status[r] = 1
                    alive = False
                    break
                k = randbelow(st, 2 * d)
                axis = k >> 1
                sign = 1 - 2 * (k & 1)
                coords[axis] += sign
                off = coords[axis] - lo[axis]
                if 0 <= off < extents[axis]:
                    flat += sign * strides[axis]
                    continue
                # stepped out of the window: resolve the excursion exactly
                row = out_row_of[_pad_flat(coords, pad_lo, pad_strides)]
                v = next_double(st)
                if v >= ent_h[row]:
                    alive = False
                else:
                    b2 = _entry_search(ent_cdf, row, v)
                    flat = bnd_flat[b2]
                    for i in range(d):
                        coords[i] = bnd_coords[b2, i]
    return status


@njit(cache=True, nogil=True)
def sample_replicas_truncate(seed, stream0, n_replicas, u_max, mean,
                             lo, extents, strides,
                             bnd_flat, bnd_coords, eq_cdf, radius2,
                             max_steps, minlabel):
    """Truncated-mode replicas: walks are killed on leaving |x|_2 <= radius.

    Excursions outside the window are stepped explicitly (they stay inside the
    killing ball), so vacancy is biased upward by the killed returns.
    """
    d = lo.shape[0]
    status = np.zeros(n_replicas, dtype=np.int64)
    coords = np.zeros(d, dtype=np.int64)
    for r in range(n_replicas):
        st = make_state(np.uint64(seed), np.uint64(stream0 + r))
        n_traj = poisson(st, mean)
        for _ in range(n_traj):
            label = u_max * next_double(st)
            b = categorical_from_cdf(st, eq_cdf)
            for i in range(d):
                coords[i] = bnd_coords[b, i]
            steps = 0
            while True:
                inside = True
                flat = 0
                for i in range(d):
                    off = coords[i] - lo[i]
                    if 0 <= off < extents[i]:
                        flat += off * strides[i]
                    else:
                        inside = False
                        break
                if inside:
                    if label < minlabel[r, flat]:
                        minlabel[r, flat] = label
                else:
                    r2 = 0
                    for i in range(d):
                        r2 += coords[i] * coords[i]
                    if r2 > radius2:
                        break
                steps += 1
                if steps > max_steps:
                    status[r] = 1
                    break
                k = randbelow(st, 2 * d)
                axis = k >> 1
                coords[axis] += 1 - 2 * (k & 1)
    return status
