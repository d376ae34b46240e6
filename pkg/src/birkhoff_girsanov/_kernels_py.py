"""NumPy implementations of the compiled kernels in ``_kernels.pyx``.

Same signatures, same results up to floating-point summation order.
"""
import numpy as np

NORM_ABS = 0
NORM_EUCLID = 1
NORM_SUP = 2
NORM_MEANABS = 3


def group_moments(labels, scale, values, n_groups):
    labels = np.asarray(labels, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    n, d = values.shape
    if labels.shape[0] != n or len(scale) != n:
        raise ValueError("labels, scale and values must share their first axis")
    if n and (labels.min() < 0 or labels.max() >= n_groups):
        raise IndexError("group label out of range")
    counts = np.bincount(labels, minlength=n_groups).astype(np.int64)
    sums = np.zeros((n_groups, d))
    sq = np.zeros((n_groups, d))
    if n == 0:
        return counts, sums, sq
    # sort once, then segment-reduce; stable sort keeps atom order inside groups
    order = np.argsort(labels, kind="stable")
    u = values[order] * np.asarray(scale, dtype=np.float64)[order, None]
    present = np.flatnonzero(counts)
    starts = np.concatenate(([0], np.cumsum(counts[present])[:-1]))
    sums[present] = np.add.reduceat(u, starts, axis=0)
    sq[present] = np.add.reduceat(u * u, starts, axis=0)
    return counts, sums, sq


def _pairwise(values, members, norm_code):
    v = np.asarray(values)[np.asarray(members, dtype=np.int64)]
    diff = v[:, None, :] - v[None, :, :]
    if norm_code in (NORM_SUP, NORM_ABS):
        return np.abs(diff).max(axis=2)
    if norm_code == NORM_EUCLID:
        return np.sqrt((diff * diff).sum(axis=2))
    return np.abs(diff).mean(axis=2)


def cell_diameter(values, members, norm_code):
    if len(members) < 2:
        return 0.0
    if norm_code in (NORM_SUP, NORM_ABS):
        v = np.asarray(values)[np.asarray(members, dtype=np.int64)]
        return float((v.max(axis=0) - v.min(axis=0)).max())
    return float(_pairwise(values, members, norm_code).max())


def farthest_pair(values, members, norm_code):
    members = np.asarray(members, dtype=np.int64)
    if len(members) == 0:
        return 0.0, -1, -1
    dist = _pairwise(values, members, norm_code)
    p, q = np.unravel_index(np.argmax(np.triu(dist + 1.0) - 1.0), dist.shape)
    return float(dist[p, q]), int(members[p]), int(members[q])


def cumulative_trapezoid(paths, integrand, steps):
    paths = np.asarray(paths, dtype=np.float64)
    integrand = np.asarray(integrand, dtype=np.float64)
    steps = np.asarray(steps, dtype=np.float64)
    M, K1 = paths.shape
    if integrand.shape[0] != K1 or steps.shape[0] != K1 - 1:
        raise ValueError("grid lengths of paths, integrand and steps disagree")
    prod = paths[:, :, None] * integrand[None, :, :]
    incr = (0.5 * steps)[None, :, None] * (prod[:, :-1, :] + prod[:, 1:, :])
    out = np.zeros((M, K1, integrand.shape[1]))
    np.cumsum(incr, axis=1, out=out[:, 1:, :])
    return out
