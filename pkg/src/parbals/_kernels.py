"""Numeric inner loops, each with a numba and a numpy implementation.

The public names at the bottom of the module dispatch to one of the two
according to :data:`parbals._backend.USE_NUMBA`.  Tests and the benchmark
script call the ``_nb`` / ``_np`` variants directly.
"""

import numpy as np

from ._backend import USE_NUMBA, njit, HAS_NUMBA

if HAS_NUMBA:
    from numba import prange
else:  # pragma: no cover
    prange = range

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_TWO53 = 1.0 / 9007199254740992.0


# ---------------------------------------------------------------------------
# pairwise mutual information from a stack of 2-D joint tables


def mi_from_joint_np(joint):
    """MI of every joint table in ``joint`` (shape ``(c, c, *batch)``).

    Marginals are taken from the table itself, so a valid table always gives
    a non-negative result (negatives from rounding are clipped to zero).
    """
    joint = np.asarray(joint, dtype=np.float64)
    row = joint.sum(axis=1, keepdims=True)
    col = joint.sum(axis=0, keepdims=True)
    denom = row * col
    positive = joint > 0
    ratio = np.ones_like(joint)
    np.divide(joint, denom, out=ratio, where=positive)
    terms = np.where(positive, joint * np.log(ratio), 0.0)
    return np.maximum(terms.sum(axis=(0, 1)), 0.0)


@njit(parallel=True, cache=True)
def _mi_from_joint_2d_nb(joint):
    c1, c2, nv, n = joint.shape
    out = np.empty((nv, n))
    for i in prange(n):
        row = np.empty(c1)
        col = np.empty(c2)
        for v in range(nv):
            for a in range(c1):
                row[a] = 0.0
            for b in range(c2):
                col[b] = 0.0
            for a in range(c1):
                for b in range(c2):
                    p = joint[a, b, v, i]
                    row[a] += p
                    col[b] += p
            acc = 0.0
            for a in range(c1):
                for b in range(c2):
                    p = joint[a, b, v, i]
                    if p > 0.0:
                        acc += p * np.log(p / (row[a] * col[b]))
            out[v, i] = acc if acc > 0.0 else 0.0
    return out


def mi_from_joint_nb(joint):
    joint = np.asarray(joint, dtype=np.float64)
    batch = joint.shape[2:]
    flat = np.ascontiguousarray(joint.reshape(joint.shape[0], joint.shape[1], 1, -1))
    return _mi_from_joint_2d_nb(flat).reshape(batch)


# ---------------------------------------------------------------------------
# pairwise MI from the leading (c-1) x (c-1) block of each joint table
#
# For a joint with known marginals only the leading block is free; the last
# row and column follow from the marginals.  Completing the table inside the
# kernel avoids (2c - 1) of the c^2 matrix products per table.


def complete_joint_np(block, row, col):
    """Full ``(c, c, nv, n)`` joints from the leading block and the marginals.

    ``block``: ``(c-1, c-1, nv, n)``; ``row``: ``(nv, c)``; ``col``: ``(n, c)``.
    Entries that come out negative through rounding are clipped to zero.
    """
    cm, _, nv, n = block.shape
    c = cm + 1
    joint = np.empty((c, c, nv, n))
    joint[:cm, :cm] = block
    joint[:cm, cm] = row[:, :cm].T[:, :, None] - block.sum(axis=1)
    joint[cm, :cm] = col[:, :cm].T[:, None, :] - block.sum(axis=0)
    joint[cm, cm] = row[:, cm][:, None] - joint[cm, :cm].sum(axis=0)
    return np.maximum(joint, 0.0)


def mi_from_block_np(block, row, col):
    return mi_from_joint_np(complete_joint_np(block, row, col))


@njit(parallel=True, cache=True)
def _mi_from_block_nb(block, row, col):
    cm, _, nv, n = block.shape
    c = cm + 1
    out = np.empty((nv, n))
    for v in prange(nv):
        J = np.empty((c, c))
        r = np.empty(c)
        q = np.empty(c)
        for i in range(n):
            for a in range(cm):
                acc = 0.0
                for b in range(cm):
                    J[a, b] = block[a, b, v, i]
                    acc += J[a, b]
                J[a, cm] = row[v, a] - acc
            last = 0.0
            for b in range(cm):
                acc = 0.0
                for a in range(cm):
                    acc += J[a, b]
                J[cm, b] = col[i, b] - acc
                last += J[cm, b]
            J[cm, cm] = row[v, cm] - last
            for a in range(c):
                r[a] = 0.0
                q[a] = 0.0
            for a in range(c):
                for b in range(c):
                    if J[a, b] < 0.0:
                        J[a, b] = 0.0
                    r[a] += J[a, b]
                    q[b] += J[a, b]
            acc = 0.0
            for a in range(c):
                for b in range(c):
                    p = J[a, b]
                    if p > 0.0:
                        acc += p * np.log(p / (r[a] * q[b]))
            out[v, i] = acc if acc > 0.0 else 0.0
    return out


@njit(parallel=True, cache=True)
def _mi_binary_nb(G, row, col):
    nv, n = G.shape
    out = np.empty((nv, n))
    for v in prange(nv):
        r0 = row[v, 0]
        r1 = row[v, 1]
        for i in range(n):
            c0 = col[i, 0]
            c1 = col[i, 1]
            j00 = max(G[v, i], 0.0)
            j01 = max(r0 - j00, 0.0)
            j10 = max(c0 - j00, 0.0)
            j11 = max(r1 - j10, 0.0)
            r0s = j00 + j01
            r1s = j10 + j11
            c0s = j00 + j10
            c1s = j01 + j11
            acc = 0.0
            if j00 > 0.0:
                acc += j00 * np.log(j00 / (r0s * c0s))
            if j01 > 0.0:
                acc += j01 * np.log(j01 / (r0s * c1s))
            if j10 > 0.0:
                acc += j10 * np.log(j10 / (r1s * c0s))
            if j11 > 0.0:
                acc += j11 * np.log(j11 / (r1s * c1s))
            out[v, i] = acc if acc > 0.0 else 0.0
    return out


def mi_from_block_nb(block, row, col):
    if block.shape[0] == 1:
        return _mi_binary_nb(
            np.ascontiguousarray(block[0, 0], dtype=np.float64),
            np.ascontiguousarray(row, dtype=np.float64),
            np.ascontiguousarray(col, dtype=np.float64),
        )
    return _mi_from_block_nb(
        np.ascontiguousarray(block, dtype=np.float64),
        np.ascontiguousarray(row, dtype=np.float64),
        np.ascontiguousarray(col, dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# entropy of distributions stored along one axis


def entropy_np(p, axis=-1):
    p = np.asarray(p, dtype=np.float64)
    logs = np.log(np.where(p > 0, p, 1.0))
    return -(p * logs).sum(axis=axis)


@njit(parallel=True, cache=True)
def _entropy_rows_nb(p):
    n, c = p.shape
    out = np.empty(n)
    for i in prange(n):
        acc = 0.0
        for a in range(c):
            q = p[i, a]
            if q > 0.0:
                acc -= q * np.log(q)
        out[i] = acc
    return out


def entropy_nb(p, axis=-1):
    p = np.moveaxis(np.asarray(p, dtype=np.float64), axis, -1)
    shape = p.shape[:-1]
    flat = np.ascontiguousarray(p.reshape(-1, p.shape[-1]))
    return _entropy_rows_nb(flat).reshape(shape)


# ---------------------------------------------------------------------------
# counter-based uniforms: splitmix64 over (seed, stream, index)


def _mix_np(z):
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def uniform_stream_np(seed, stream, index):
    """Open-interval uniforms, one per entry of ``index``, fixed by the triple.

    Each value depends only on ``(seed, stream, index[i])`` so draws do not
    depend on how many other points are evaluated or in what order.
    """
    index = np.asarray(index, dtype=np.uint64)
    with np.errstate(over="ignore"):
        key = _mix_np(np.uint64(seed) * _GOLDEN + np.uint64(1))
        key = _mix_np(key ^ (np.uint64(stream) * _GOLDEN + np.uint64(2)))
        z = _mix_np(key ^ ((index + np.uint64(1)) * _GOLDEN))
    bits = (z >> np.uint64(11)).astype(np.float64)
    return (bits + 0.5) * _TWO53


@njit(cache=True)
def _mix_nb(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@njit(cache=True)
def _uniform_stream_nb(seed, stream, index):
    golden = np.uint64(0x9E3779B97F4A7C15)
    key = _mix_nb(seed * golden + np.uint64(1))
    key = _mix_nb(key ^ (stream * golden + np.uint64(2)))
    out = np.empty(index.shape[0])
    for i in range(index.shape[0]):
        z = _mix_nb(key ^ ((index[i] + np.uint64(1)) * golden))
        out[i] = (np.float64(z >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)
    return out


def uniform_stream_nb(seed, stream, index):
    index = np.ascontiguousarray(np.asarray(index, dtype=np.uint64).ravel())
    return _uniform_stream_nb(np.uint64(seed), np.uint64(stream), index)


if USE_NUMBA:
    mi_from_joint = mi_from_joint_nb
    mi_from_block = mi_from_block_nb
    entropy = entropy_nb
    uniform_stream = uniform_stream_nb
else:
    mi_from_joint = mi_from_joint_np
    mi_from_block = mi_from_block_np
    entropy = entropy_np
    uniform_stream = uniform_stream_np

BACKEND = "numba" if USE_NUMBA else "numpy"
