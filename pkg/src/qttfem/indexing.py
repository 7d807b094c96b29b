"""Canonical and Z-order (Morton) enumerations of grid nodes and DOFs.

A subdomain grid has 2^d x 2^d nodes addressed by the pair (i, j) with
0 <= i, j < 2^d.  The canonical label is L = i + 2^d * j; the Z-order label
interleaves the bits of i and j, least significant first, so that
Z = i1 + 2*j1 + 4*i2 + 8*j2 + ...  All indices here are 0-based; the
1-based x/y DOF pairs (2L+1, 2L+2) and (2Z+1, 2Z+2) used in the docs map
to the internal 0-based pairs (2L, 2L+1) and (2Z, 2Z+1).
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "canonical_index",
    "z_index",
    "deinterleave",
    "dof_indices",
    "zorder_permutation",
    "zorder_dof_permutation",
    "permutation_matrix",
]


def _check_range(i, j, d: int) -> None:
    n = 1 << d
    i = np.asarray(i)
    j = np.asarray(j)
    if np.any(i < 0) or np.any(i >= n) or np.any(j < 0) or np.any(j >= n):
        raise ValueError(f"grid index out of range for d={d}: i={i}, j={j}")


def canonical_index(i, j, d: int):
    """Row-major node label L = i + 2^d * j."""
    _check_range(i, j, d)
    return i + (1 << d) * j


def _spread_bits(x, d: int):
    """Insert a zero bit after each of the d low bits of x."""
    x = np.asarray(x, dtype=np.int64)
    out = np.zeros_like(x)
    for k in range(d):
        out |= ((x >> k) & 1) << (2 * k)
    return out


def _squeeze_bits(x, d: int):
    """Inverse of _spread_bits: keep every other bit."""
    x = np.asarray(x, dtype=np.int64)
    out = np.zeros_like(x)
    for k in range(d):
        out |= ((x >> (2 * k)) & 1) << k
    return out


def z_index(i, j, d: int):
    """Morton label obtained by interleaving the bits of i and j.

    Bit 0 of the result is bit 0 of i, bit 1 is bit 0 of j, and so on.
    """
    _check_range(i, j, d)
    return _spread_bits(i, d) | (_spread_bits(j, d) << 1)


def deinterleave(z, d: int):
    """Recover (i, j) from a Z-order label."""
    z = np.asarray(z, dtype=np.int64)
    if np.any(z < 0) or np.any(z >= 1 << (2 * d)):
        raise ValueError(f"z index out of range for d={d}")
    return _squeeze_bits(z, d), _squeeze_bits(z >> 1, d)


def dof_indices(node_index, one_based: bool = False):
    """x/y DOF pair of a node label (canonical or Z-order alike).

    Internally DOFs are 0-based, (2n, 2n+1); with ``one_based=True`` the
    documented (2n+1, 2n+2) pair is returned instead.
    """
    n = np.asarray(node_index, dtype=np.int64)
    if one_based:
        return 2 * n + 1, 2 * n + 2
    return 2 * n, 2 * n + 1


def zorder_permutation(d: int) -> np.ndarray:
    """Array ``perm`` of length 4^d with ``perm[Z_ij] = L_ij``.

    For a canonically ordered vector v, ``v[perm]`` is the same data in
    Z-order; operators map as ``Mz = Mc[np.ix_(perm, perm)]``.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    n = 1 << d
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    perm = np.empty(n * n, dtype=np.int64)
    perm[z_index(i, j, d).ravel()] = canonical_index(i, j, d).ravel()
    return perm


def zorder_dof_permutation(d: int) -> np.ndarray:
    """DOF variant of :func:`zorder_permutation`, size 2*4^d.

    The x/y pair follows the node it belongs to (component varies
    fastest): entry 2Z+c maps to 2L+c.
    """
    node = zorder_permutation(d)
    perm = np.empty(2 * node.size, dtype=np.int64)
    perm[0::2] = 2 * node
    perm[1::2] = 2 * node + 1
    return perm


def permutation_matrix(perm: np.ndarray):
    """Sparse 0/1 matrix P with ``P @ v == v[perm]``."""
    from scipy import sparse

    n = perm.size
    return sparse.csr_matrix(
        (np.ones(n), (np.arange(n), perm)), shape=(n, n)
    )
