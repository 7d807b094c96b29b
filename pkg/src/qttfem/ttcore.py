"""Tensor-train vectors and matrices over small modes (binary for QTT).

Conventions
-----------
Mode 1 is the least significant index: a vector of length prod(n_l) is
identified with the tensor ``v.reshape(mode_sizes, order='F')``, so for
binary modes core ``l`` carries bit ``l-1`` of the flat index.  Matrix
cores pair a row bit with the matching column bit.  With this layout the
Z-order of :mod:`qttfem.indexing` corresponds to interleaving the cores
of per-direction 1D factors (see :func:`tt_zkron`).

All objects are immutable; operations return new objects and never round
implicitly.  Call :func:`tt_round` explicitly to compress.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "TTVector",
    "TTMatrix",
    "RankProfile",
    "tt_decompose",
    "tt_contract",
    "tt_round",
    "tt_add",
    "tt_scale",
    "tt_hadamard",
    "tt_matvec",
    "tt_matmat",
    "tt_kron",
    "tt_zkron",
    "tt_transpose",
    "tt_diag",
    "tt_dot",
    "tt_norm",
    "tt_ones",
    "tt_identity",
    "tt_rank1_vector",
    "tt_rank1_matrix",
    "tt_slice_mode",
    "rank_profile",
]

_CONTRACT_GUARD_BITS = 24


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


class TTVector:
    """Tensor train with order-3 cores of shape (r_{l-1}, n_l, r_l)."""

    __slots__ = ("cores",)

    def __init__(self, cores):
        cores = [_freeze(np.asarray(c)) for c in cores]
        if not cores:
            raise ValueError("need at least one core")
        if any(c.ndim != 3 for c in cores):
            raise ValueError("vector cores must be order-3 arrays")
        if cores[0].shape[0] != 1 or cores[-1].shape[-1] != 1:
            raise ValueError("boundary ranks must be 1")
        for a, b in zip(cores[:-1], cores[1:]):
            if a.shape[-1] != b.shape[0]:
                raise ValueError("adjacent core ranks do not match")
        self.cores = tuple(cores)

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def mode_sizes(self) -> tuple:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def ranks(self) -> tuple:
        return (1,) + tuple(c.shape[-1] for c in self.cores)

    @property
    def size(self) -> int:
        return int(np.prod(self.mode_sizes, dtype=np.int64))

    def __repr__(self):
        return f"TTVector(modes={self.mode_sizes}, ranks={self.ranks})"


class TTMatrix:
    """Tensor train operator with order-4 cores (r_{l-1}, n_l, m_l, r_l)."""

    __slots__ = ("cores",)

    def __init__(self, cores):
        cores = [_freeze(np.asarray(c)) for c in cores]
        if not cores:
            raise ValueError("need at least one core")
        if any(c.ndim != 4 for c in cores):
            raise ValueError("matrix cores must be order-4 arrays")
        if cores[0].shape[0] != 1 or cores[-1].shape[-1] != 1:
            raise ValueError("boundary ranks must be 1")
        for a, b in zip(cores[:-1], cores[1:]):
            if a.shape[-1] != b.shape[0]:
                raise ValueError("adjacent core ranks do not match")
        self.cores = tuple(cores)

    @property
    def d(self) -> int:
        return len(self.cores)

    @property
    def row_mode_sizes(self) -> tuple:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def col_mode_sizes(self) -> tuple:
        return tuple(c.shape[2] for c in self.cores)

    @property
    def ranks(self) -> tuple:
        return (1,) + tuple(c.shape[-1] for c in self.cores)

    @property
    def shape(self) -> tuple:
        return (
            int(np.prod(self.row_mode_sizes, dtype=np.int64)),
            int(np.prod(self.col_mode_sizes, dtype=np.int64)),
        )

    def __repr__(self):
        return (
            f"TTMatrix(rows={self.row_mode_sizes}, cols={self.col_mode_sizes},"
            f" ranks={self.ranks})"
        )


class RankProfile:
    """Rank and storage statistics of one TT object."""

    __slots__ = ("max_rank", "param_count", "storage_count", "effective_rank")

    def __init__(self, max_rank, param_count, storage_count, effective_rank):
        self.max_rank = int(max_rank)
        self.param_count = int(param_count)
        self.storage_count = int(storage_count)
        self.effective_rank = float(effective_rank)

    def __repr__(self):
        return (
            f"RankProfile(R={self.max_rank}, N={self.param_count}, "
            f"storage={self.storage_count}, erank={self.effective_rank:.3f})"
        )


def _merged_cores(t) -> list:
    """Order-3 views of a TT object (matrix pairs merged, j slow / i fast)."""
    if isinstance(t, TTVector):
        return list(t.cores)
    out = []
    for c in t.cores:
        r, n, m, r2 = c.shape
        out.append(c.transpose(0, 2, 1, 3).reshape(r, m * n, r2))
    return out


def _split_core(core: np.ndarray, n: int, m: int) -> np.ndarray:
    r, nm, r2 = core.shape
    return core.reshape(r, m, n, r2).transpose(0, 2, 1, 3)


def _chop(s: np.ndarray, delta: float) -> int:
    """Smallest kept rank with discarded tail energy <= delta."""
    if s.size == 0:
        return 1
    floor = s[0] * max(s.size, 2) * np.finfo(np.float64).eps
    delta = max(float(delta), float(floor))
    # tail[k] is the energy of s[k:]; keep the smallest r with tail[r] <= delta
    tail = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]
    r = s.size
    for k in range(s.size, 0, -1):
        if tail[k - 1] > delta:
            r = k
            break
    else:
        r = 1
    return max(r, 1)


def _tt_svd(tensor: np.ndarray, delta: float) -> list:
    """TT-SVD sweep; ``tensor`` axes are the modes in core order."""
    sizes = tensor.shape
    d = len(sizes)
    cores = []
    c = tensor
    r_prev = 1
    for l in range(d - 1):
        c = c.reshape(r_prev * sizes[l], -1)
        u, s, vt = np.linalg.svd(c, full_matrices=False)
        r = _chop(s, delta)
        cores.append(u[:, :r].reshape(r_prev, sizes[l], r))
        c = s[:r, None] * vt[:r]
        r_prev = r
    cores.append(c.reshape(r_prev, sizes[-1], 1))
    return cores


def tt_decompose(dense: np.ndarray, epsilon: float, mode_sizes=None):
    """TT-SVD a dense vector (1D) or square matrix (2D) at tolerance epsilon.

    The relative reconstruction error is at most ``epsilon``; each
    unfolding is truncated at ``epsilon/sqrt(d-1) * ||dense||``.  Sizes
    default to binary modes and must then be powers of two.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    dense = np.asarray(dense, dtype=np.float64)
    if dense.ndim == 1:
        n = dense.size
        if mode_sizes is None:
            d = int(n).bit_length() - 1
            if n != (1 << d) or n < 2:
                raise ValueError(f"vector length {n} is not a power of two")
            mode_sizes = (2,) * d
        if int(np.prod(mode_sizes)) != n:
            raise ValueError("mode sizes do not match vector length")
        d = len(mode_sizes)
        nrm = np.linalg.norm(dense)
        if nrm == 0.0:
            return TTVector([np.zeros((1, m, 1)) for m in mode_sizes])
        delta = epsilon / np.sqrt(max(d - 1, 1)) * nrm
        tensor = dense.reshape(mode_sizes, order="F")
        return TTVector(_tt_svd(tensor, delta))
    if dense.ndim == 2:
        nr, nc = dense.shape
        if mode_sizes is None:
            d = int(nr).bit_length() - 1
            if nr != (1 << d) or nc != nr or nr < 2:
                raise ValueError(
                    f"matrix shape {dense.shape} is not square power-of-two"
                )
            rows = cols = (2,) * d
        else:
            rows, cols = mode_sizes
        if int(np.prod(rows)) != nr or int(np.prod(cols)) != nc:
            raise ValueError("mode sizes do not match matrix shape")
        d = len(rows)
        delta = epsilon / np.sqrt(max(d - 1, 1)) * np.linalg.norm(dense)
        tensor = dense.reshape(tuple(rows) + tuple(cols), order="F")
        # pair row bit l with column bit l: axes (j_l slow, i_l fast) merged
        order = []
        for l in range(d):
            order += [l, d + l]
        tensor = tensor.transpose(order).reshape(
            [rows[l] * cols[l] for l in range(d)], order="F"
        )
        merged = _tt_svd(tensor, delta)
        return TTMatrix(
            [_split_core(c, rows[l], cols[l]) for l, c in enumerate(merged)]
        )
    raise ValueError("dense input must be 1D or 2D")


def tt_contract(t):
    """Dense realization; guarded against exponential materialization."""
    if isinstance(t, TTVector):
        bits = sum(int(n).bit_length() - 1 if n > 1 else 1 for n in t.mode_sizes)
        if t.d > _CONTRACT_GUARD_BITS or bits > _CONTRACT_GUARD_BITS:
            raise ValueError(f"refusing to materialize vector with d={t.d}")
        full = np.ones((1, 1))
        for c in t.cores:
            full = np.tensordot(full, c, axes=([-1], [0]))
        full = full.reshape(full.shape[1:-1])
        return full.ravel(order="F")
    if isinstance(t, TTMatrix):
        if t.d > _CONTRACT_GUARD_BITS // 2:
            raise ValueError(f"refusing to materialize matrix with d={t.d}")
        rows, cols = t.row_mode_sizes, t.col_mode_sizes
        full = np.ones((1, 1))
        for c in _merged_cores(t):
            full = np.tensordot(full, c, axes=([-1], [0]))
        full = full.reshape(full.shape[1:-1])
        # split each merged axis back into (i_l fast, j_l slow)
        split = []
        for l in range(t.d):
            split += [rows[l], cols[l]]
        full = full.reshape(split, order="F")
        order = list(range(0, 2 * t.d, 2)) + list(range(1, 2 * t.d, 2))
        return full.transpose(order).reshape(t.shape, order="F")
    raise TypeError(f"not a TT object: {type(t)}")


def _right_orthogonalize(cores: list) -> list:
    """RQ sweep from the last core; returns new list, norm carried to core 0."""
    cores = [c.copy() for c in cores]
    for k in range(len(cores) - 1, 0, -1):
        r, n, r2 = cores[k].shape
        mat = cores[k].reshape(r, n * r2)
        q, rr = np.linalg.qr(mat.T)
        rnew = q.shape[1]
        cores[k] = q.T.reshape(rnew, n, r2)
        cores[k - 1] = np.tensordot(cores[k - 1], rr.T, axes=([-1], [0]))
    return cores


def _round_cores(cores: list, delta: float) -> list:
    cores = _right_orthogonalize(cores)
    for k in range(len(cores) - 1):
        r, n, r2 = cores[k].shape
        mat = cores[k].reshape(r * n, r2)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        rk = min(_chop(s, delta), cores[k + 1].shape[0])
        cores[k] = u[:, :rk].reshape(r, n, rk)
        carry = s[:rk, None] * vt[:rk]
        cores[k + 1] = np.tensordot(carry, cores[k + 1], axes=([1], [0]))
    return cores


def tt_round(t, epsilon: float):
    """Compress at relative tolerance epsilon; ranks never increase."""
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    merged = _merged_cores(t)
    d = len(merged)
    norm = _orthogonal_norm(merged)
    delta = epsilon / np.sqrt(max(d - 1, 1)) * norm
    out = _round_cores(merged, delta)
    if isinstance(t, TTVector):
        return TTVector(out)
    return TTMatrix(
        [
            _split_core(c, t.row_mode_sizes[l], t.col_mode_sizes[l])
            for l, c in enumerate(out)
        ]
    )


def _orthogonal_norm(merged: list) -> float:
    """Frobenius norm via a gram accumulation (no truncation)."""
    g = np.ones((1, 1))
    for c in merged:
        t = np.tensordot(g, c, axes=([1], [0]))
        g = np.tensordot(c, t, axes=([0, 1], [0, 1]))
    return float(np.sqrt(max(g[0, 0], 0.0)))


def tt_norm(t) -> float:
    """Frobenius/Euclidean norm of the represented object."""
    return _orthogonal_norm(_merged_cores(t))


def tt_dot(a: TTVector, b: TTVector) -> float:
    """Inner product <a, b>."""
    if a.mode_sizes != b.mode_sizes:
        raise ValueError("mode-size mismatch in dot product")
    g = np.ones((1, 1))
    for ca, cb in zip(a.cores, b.cores):
        t = np.tensordot(g, cb, axes=([1], [0]))
        g = np.tensordot(ca, t, axes=([0, 1], [0, 1]))
    return float(g[0, 0])


def _check_same_modes(a, b):
    if isinstance(a, TTVector) != isinstance(b, TTVector):
        raise ValueError("cannot mix vectors and matrices")
    if isinstance(a, TTVector):
        if a.mode_sizes != b.mode_sizes:
            raise ValueError("mode-size mismatch")
    else:
        if (
            a.row_mode_sizes != b.row_mode_sizes
            or a.col_mode_sizes != b.col_mode_sizes
        ):
            raise ValueError("mode-size mismatch")


def tt_add(a, b):
    """Elementwise sum; ranks add (round explicitly afterwards)."""
    _check_same_modes(a, b)
    ca, cb = _merged_cores(a), _merged_cores(b)
    d = len(ca)
    out = []
    for k in range(d):
        ra1, n, ra2 = ca[k].shape
        rb1, _, rb2 = cb[k].shape
        left = 1 if k == 0 else ra1 + rb1
        right = 1 if k == d - 1 else ra2 + rb2
        core = np.zeros((left, n, right))
        if d == 1:
            core = ca[k] + cb[k]
        elif k == 0:
            core[:, :, :ra2] = ca[k]
            core[:, :, ra2:] = cb[k]
        elif k == d - 1:
            core[:ra1] = ca[k]
            core[ra1:] = cb[k]
        else:
            core[:ra1, :, :ra2] = ca[k]
            core[ra1:, :, ra2:] = cb[k]
        out.append(core)
    if isinstance(a, TTVector):
        return TTVector(out)
    return TTMatrix(
        [
            _split_core(c, a.row_mode_sizes[l], a.col_mode_sizes[l])
            for l, c in enumerate(out)
        ]
    )


def tt_scale(a, s: float):
    """Scalar multiple."""
    cores = list(a.cores)
    cores[0] = cores[0] * float(s)
    return TTVector(cores) if isinstance(a, TTVector) else TTMatrix(cores)


def tt_hadamard(a, b):
    """Elementwise product; ranks multiply."""
    _check_same_modes(a, b)
    ca, cb = _merged_cores(a), _merged_cores(b)
    out = []
    for x, y in zip(ca, cb):
        rx1, n, rx2 = x.shape
        ry1, _, ry2 = y.shape
        core = np.einsum("anb,cnd->acnbd", x, y).reshape(
            rx1 * ry1, n, rx2 * ry2
        )
        out.append(core)
    if isinstance(a, TTVector):
        return TTVector(out)
    return TTMatrix(
        [
            _split_core(c, a.row_mode_sizes[l], a.col_mode_sizes[l])
            for l, c in enumerate(out)
        ]
    )


def tt_matvec(A: TTMatrix, x: TTVector) -> TTVector:
    """Exact product A @ x; result ranks are rank(A)*rank(x)."""
    if A.col_mode_sizes != x.mode_sizes:
        raise ValueError("mode-size mismatch in matvec")
    out = []
    for ca, cx in zip(A.cores, x.cores):
        ra1, n, m, ra2 = ca.shape
        rx1, _, rx2 = cx.shape
        core = np.einsum("aijb,cjd->acibd", ca, cx).reshape(
            ra1 * rx1, n, ra2 * rx2
        )
        out.append(core)
    return TTVector(out)


def tt_matmat(A: TTMatrix, B: TTMatrix) -> TTMatrix:
    """Exact product A @ B; result ranks are rank(A)*rank(B)."""
    if A.col_mode_sizes != B.row_mode_sizes:
        raise ValueError("mode-size mismatch in matmat")
    out = []
    for ca, cb in zip(A.cores, B.cores):
        ra1, n, m, ra2 = ca.shape
        rb1, _, k, rb2 = cb.shape
        core = np.einsum("aijb,cjkd->acikbd", ca, cb).reshape(
            ra1 * rb1, n, k, ra2 * rb2
        )
        out.append(core)
    return TTMatrix(out)


def tt_transpose(A: TTMatrix) -> TTMatrix:
    return TTMatrix([c.transpose(0, 2, 1, 3) for c in A.cores])


def tt_diag(v: TTVector) -> TTMatrix:
    """Diagonal operator with the entries of v."""
    out = []
    for c in v.cores:
        r, n, r2 = c.shape
        core = np.zeros((r, n, n, r2))
        idx = np.arange(n)
        core[:, idx, idx, :] = c
        out.append(core)
    return TTMatrix(out)


def tt_kron(A, B):
    """Kronecker product: dense(tt_kron(A, B)) == np.kron(dense(A), dense(B)).

    Pure core concatenation (B's cores first: the second factor varies
    fastest in the combined index).
    """
    if isinstance(A, TTVector) != isinstance(B, TTVector):
        raise ValueError("cannot mix vectors and matrices")
    cores = list(B.cores) + list(A.cores)
    return TTVector(cores) if isinstance(A, TTVector) else TTMatrix(cores)


def tt_zkron(A, B):
    """Bit-interleaved Kronecker product.

    The factors must have the same number of modes d; the result has 2d
    modes alternating B's (fast direction) and A's (slow direction), so
    that dense(tt_zkron(A, B)) equals np.kron(dense(A), dense(B)) with
    rows/columns relabeled by the Z-order permutation.
    """
    if isinstance(A, TTVector) != isinstance(B, TTVector):
        raise ValueError("cannot mix vectors and matrices")
    if A.d != B.d:
        raise ValueError("z-kron factors must have matching depth")
    is_vec = isinstance(A, TTVector)
    ca = _merged_cores(A)
    cb = _merged_cores(B)
    out = []
    rows, cols = [], []
    for k in range(A.d):
        ra_prev = ca[k].shape[0]
        ra_next = ca[k].shape[-1]
        rb_prev, nb, rb_next = cb[k].shape
        na = ca[k].shape[1]
        # fast-direction core: B_k acting, A's rank passes through
        cfast = np.einsum("bnc,ad->bancd", cb[k], np.eye(ra_prev)).reshape(
            rb_prev * ra_prev, nb, rb_next * ra_prev
        )
        # slow-direction core: A_k acting, B's new rank passes through
        cslow = np.einsum("anb,cd->candb", ca[k], np.eye(rb_next)).reshape(
            rb_next * ra_prev, na, rb_next * ra_next
        )
        out += [cfast, cslow]
        if not is_vec:
            rows += [B.row_mode_sizes[k], A.row_mode_sizes[k]]
            cols += [B.col_mode_sizes[k], A.col_mode_sizes[k]]
    if is_vec:
        return TTVector(out)
    return TTMatrix(
        [_split_core(c, rows[l], cols[l]) for l, c in enumerate(out)]
    )


def tt_ones(mode_sizes) -> TTVector:
    return TTVector([np.ones((1, n, 1)) for n in mode_sizes])


def tt_identity(mode_sizes) -> TTMatrix:
    return TTMatrix(
        [np.eye(n).reshape(1, n, n, 1) for n in mode_sizes]
    )


def tt_rank1_vector(factors) -> TTVector:
    """Rank-1 TT from per-mode 1D factors (first factor varies fastest)."""
    return TTVector([np.asarray(f, float).reshape(1, -1, 1) for f in factors])


def tt_rank1_matrix(factors) -> TTMatrix:
    """Rank-1 TT operator from per-mode small matrices."""
    out = []
    for f in factors:
        f = np.asarray(f, float)
        out.append(f.reshape(1, f.shape[0], f.shape[1], 1))
    return TTMatrix(out)


def tt_slice_mode(t, mode: int, index: int):
    """Fix one mode at a given index and contract it away.

    The sliced factor is absorbed into the neighboring core, keeping the
    surrounding bond dimensions; no rounding is applied.
    """
    if isinstance(t, TTMatrix):
        raise TypeError("mode slicing is defined for vectors")
    merged = _merged_cores(t)
    if not 0 <= mode < len(merged):
        raise ValueError("mode out of range")
    sl = merged[mode][:, index, :]
    cores = list(merged)
    del cores[mode]
    if not cores:
        raise ValueError("cannot slice away the only mode")
    if mode == 0:
        cores[0] = np.tensordot(sl, cores[0], axes=([1], [0]))
    else:
        cores[mode - 1] = np.tensordot(cores[mode - 1], sl, axes=([2], [0]))
    return TTVector(cores)


def _erank(mode_sizes, storage: int) -> float:
    d = len(mode_sizes)
    if d == 1:
        return storage / mode_sizes[0]
    a = float(sum(mode_sizes[1:-1]))
    b = float(mode_sizes[0] + mode_sizes[-1])
    if a == 0.0:
        return storage / b
    return (-b + np.sqrt(b * b + 4.0 * a * storage)) / (2.0 * a)


def rank_profile(t) -> RankProfile:
    """Max rank, stored-scalar count and effective rank of a TT object.

    The storage count is r1*n1 + sum_{l=2..d-1} r_{l-1}*n_l*r_l +
    r_{d-1}*n_d scalars (matrix modes count n_l*m_l entries); the
    effective rank is the positive root of the same expression with all
    ranks replaced by r_e.
    """
    merged = _merged_cores(t)
    sizes = [c.shape[1] for c in merged]
    storage = sum(int(np.prod(c.shape)) for c in merged)
    ranks = [c.shape[-1] for c in merged[:-1]]
    max_rank = max(ranks) if ranks else 1
    return RankProfile(max_rank, storage, storage, _erank(sizes, storage))
