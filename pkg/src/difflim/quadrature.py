"""Vectorized adaptive Simpson quadrature over many intervals at once."""

import numpy as np

_MAX_LEVELS = 60


def integrate_intervals(func, lo, hi, tol_density, min_width=1e-13):
    """Integrate ``func`` over every interval ``[lo[k], hi[k]]``.

    Each interval is handled by adaptive Simpson with Richardson correction.
    An interval is accepted once its error estimate is below
    ``tol_density * width``, so the total error over a union of intervals is
    bounded by ``tol_density`` times its length.  Intervals narrower than
    ``min_width`` are accepted unconditionally; this bounds the work spent
    around jump discontinuities.

    ``hi < lo`` is allowed and yields the negated integral.  ``func`` must be
    vectorized over a 1-D array of abscissae.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    lo, hi = np.broadcast_arrays(lo, hi)
    shape = lo.shape
    lo = lo.ravel().copy()
    hi = hi.ravel().copy()
    out = np.zeros(lo.size)

    idx = np.flatnonzero(hi != lo)
    lo, hi = lo[idx], hi[idx]
    mid = 0.5 * (lo + hi)
    f_lo, f_mid, f_hi = (np.asarray(func(v), dtype=float) * np.ones_like(v) for v in (lo, mid, hi))
    whole = (hi - lo) / 6.0 * (f_lo + 4.0 * f_mid + f_hi)

    for _ in range(_MAX_LEVELS):
        if idx.size == 0:
            break
        w = hi - lo
        q1 = lo + 0.25 * w
        q3 = lo + 0.75 * w
        f_q1 = np.asarray(func(q1), dtype=float) * np.ones_like(q1)
        f_q3 = np.asarray(func(q3), dtype=float) * np.ones_like(q3)
        left = w / 12.0 * (f_lo + 4.0 * f_q1 + f_mid)
        right = w / 12.0 * (f_mid + 4.0 * f_q3 + f_hi)
        err = (left + right - whole) / 15.0
        aw = np.abs(w)
        done = (np.abs(err) <= tol_density * aw) | (aw <= min_width)
        np.add.at(out, idx[done], (left + right + err)[done])

        keep = ~done
        if not keep.any():
            idx = idx[:0]
            break
        # children: [lo, mid] and [mid, hi]
        idx = np.concatenate([idx[keep], idx[keep]])
        new_lo = np.concatenate([lo[keep], mid[keep]])
        new_hi = np.concatenate([mid[keep], hi[keep]])
        f_lo = np.concatenate([f_lo[keep], f_mid[keep]])
        f_hi = np.concatenate([f_mid[keep], f_hi[keep]])
        f_mid = np.concatenate([f_q1[keep], f_q3[keep]])
        whole = np.concatenate([left[keep], right[keep]])
        lo, hi = new_lo, new_hi
        mid = 0.5 * (lo + hi)
    else:
        # level cap reached; accept the current Richardson estimates
        w = hi - lo
        q1 = lo + 0.25 * w
        q3 = lo + 0.75 * w
        left = w / 12.0 * (f_lo + 4.0 * func(q1) + f_mid)
        right = w / 12.0 * (f_mid + 4.0 * func(q3) + f_hi)
        np.add.at(out, idx, left + right + (left + right - whole) / 15.0)

    return out.reshape(shape)


def cumulative(func, nodes, tol_density, anchor=None):
    """Antiderivative of ``func`` at every node of a strictly increasing grid.

    The value at ``nodes[anchor]`` is exactly zero (``anchor`` defaults to the
    first node).
    """
    nodes = np.asarray(nodes, dtype=float)
    cells = integrate_intervals(func, nodes[:-1], nodes[1:], tol_density)
    k = 0 if anchor is None else int(anchor)
    acc = np.zeros(nodes.size)
    # accumulate outward from the anchor so its value is exactly zero
    acc[k + 1:] = np.cumsum(cells[k:])
    acc[:k] = -np.cumsum(cells[:k][::-1])[::-1]
    return acc
