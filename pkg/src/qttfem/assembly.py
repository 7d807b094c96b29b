"""Subdomain stiffness and load assembly directly in QTT format.

Every per-element quantity lives on the (2^d - 1)^2 element grid, zero
padded to 2^d x 2^d for QTT addressing.  Corner shift operators scatter
elemental values to nodal positions; the stiffness blocks accumulate the
sixteen corner pairs as V_c1^T diag(values) V_c2 with rounding after
each accumulation.  1D building blocks are constructed densely (length
2^d only) and decomposed exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .element import (
    CORNERS,
    element_load_block,
    element_stiffness_block,
    quadrature_rule,
    shape_functions,
)
from .material import MaterialModel
from .mesh import SubdomainMesh
from .ttcore import (
    TTMatrix,
    TTVector,
    tt_add,
    tt_decompose,
    tt_diag,
    tt_kron,
    tt_matmat,
    tt_matvec,
    tt_round,
    tt_scale,
    tt_transpose,
    tt_zkron,
)

__all__ = [
    "ShiftOperator",
    "SubdomainSystem",
    "qtt1d_vector",
    "qtt1d_matrix",
    "compose2d",
    "grid_to_qtt",
    "diag_tt",
    "build_shift_operator",
    "assemble_subdomain",
    "traction_qtt",
]

ORDERINGS = ("canonical", "zorder")


def _check_ordering(ordering: str):
    if ordering not in ORDERINGS:
        raise ValueError(f"unknown ordering {ordering!r}")


def qtt1d_vector(values: np.ndarray) -> TTVector:
    """Exact QTT of a length-2^d vector (cheap: 1D factors stay small)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 2:
        return TTVector([values.reshape(1, 2, 1)])
    return tt_decompose(values, 0.0)


def qtt1d_ones(d: int) -> TTVector:
    return TTVector([np.ones((1, 2, 1))] * d)


def qtt1d_unit(d: int, pos: int) -> TTVector:
    """Exact rank-1 unit vector e_pos (bit-product cores)."""
    bits = np.unravel_index(pos % (1 << d), (2,) * d, order="F")
    cores = []
    for b in bits:
        c = np.zeros((1, 2, 1))
        c[0, b, 0] = 1.0
        cores.append(c)
    return TTVector(cores)


def qtt1d_interval(d: int, lo: int, hi: int) -> TTVector:
    """Exact indicator of lo <= k <= hi as a sum of aligned dyadic blocks.

    Each maximal aligned block has a rank-1 bit-product indicator
    (fixed high bits, free low bits); the sum stays integer-exact with
    rank at most ~2d.
    """
    n = 1 << d
    if lo > hi or lo < 0 or hi >= n:
        if lo > hi:
            return TTVector([np.zeros((1, 2, 1))] * d)
        raise ValueError(f"interval [{lo}, {hi}] out of range for d={d}")

    def block(start: int, level: int) -> TTVector:
        # indicator of [start, start + 2^level): low bits free
        bits = np.unravel_index(start, (2,) * d, order="F")
        cores = []
        for k in range(d):
            if k < level:
                cores.append(np.ones((1, 2, 1)))
            else:
                c = np.zeros((1, 2, 1))
                c[0, bits[k], 0] = 1.0
                cores.append(c)
        return TTVector(cores)

    out = None
    a, b = lo, hi + 1  # half-open [a, b)
    while a < b:
        level = 0
        while a % (1 << (level + 1)) == 0 and a + (1 << (level + 1)) <= b:
            level += 1
        term = block(a, level)
        out = term if out is None else tt_add(out, term)
        a += 1 << level
    return out


def qtt1d_matrix(dense: np.ndarray) -> TTMatrix:
    """Exact QTT of a 2^d x 2^d operator acting along one grid direction."""
    dense = np.asarray(dense, dtype=np.float64)
    if dense.shape == (2, 2):
        return TTMatrix([dense.reshape(1, 2, 2, 1)])
    return tt_decompose(dense, 0.0)


def compose2d(op_j, op_i, ordering: str):
    """Combine per-direction factors into a grid operator/vector.

    ``op_i`` acts on the first grid index (fast direction), ``op_j`` on
    the second.  Canonical ordering concatenates the factors (plain
    Kronecker product), Z-ordering interleaves their cores.
    """
    _check_ordering(ordering)
    if ordering == "canonical":
        return tt_kron(op_j, op_i)
    return tt_zkron(op_j, op_i)


def grid_to_qtt(grid: np.ndarray, ordering: str, epsilon: float = 0.0) -> TTVector:
    """QTT vector of a (2^d, 2^d) nodal/element grid indexed by (i, j)."""
    _check_ordering(ordering)
    n = grid.shape[0]
    d = int(n).bit_length() - 1
    if grid.shape != (n, n) or n != 1 << d:
        raise ValueError(f"grid shape {grid.shape} is not (2^d, 2^d)")
    tensor = grid.reshape((2,) * d + (2,) * d, order="F")
    if ordering == "zorder":
        order = []
        for k in range(d):
            order += [k, d + k]
        tensor = tensor.transpose(order)
    flat = tensor.ravel(order="F")
    return tt_decompose(flat, epsilon, mode_sizes=(2,) * (2 * d))


def qtt_to_grid(vec: TTVector, ordering: str) -> np.ndarray:
    """Inverse of :func:`grid_to_qtt` (oracle/test helper)."""
    from .ttcore import tt_contract

    _check_ordering(ordering)
    d = vec.d // 2
    flat = tt_contract(vec)
    tensor = flat.reshape((2,) * (2 * d), order="F")
    if ordering == "zorder":
        order = list(range(0, 2 * d, 2)) + list(range(1, 2 * d, 2))
        tensor = tensor.transpose(order)
    return tensor.reshape((1 << d, 1 << d), order="F")


def _padded_ones(d: int) -> np.ndarray:
    v = np.ones(1 << d)
    v[-1] = 0.0
    return v


@dataclass(frozen=True)
class ShiftOperator:
    """0/1 operator scattering element-grid values to node positions."""

    corner: tuple
    d: int
    ordering: str
    op: TTMatrix

    @property
    def transpose(self) -> TTMatrix:
        return tt_transpose(self.op)


def _shift1d(d: int, offset: int) -> np.ndarray:
    """Dense 1D factor: element k maps to node k + offset, padded row zero."""
    n = 1 << d
    m = np.zeros((n, n))
    idx = np.arange(n - 1)
    m[idx, idx + offset] = 1.0
    return m


def qtt1d_shift(d: int, offset: int) -> TTMatrix:
    """Exact rank-2 QTT of the 1D element-to-node map (carry automaton).

    ``offset=1`` is the superdiagonal k -> k+1 (bit-increment with carry
    injected at the least significant mode); ``offset=0`` the identity
    with the padded last row removed.
    """
    if d == 1:
        return TTMatrix([_shift1d(1, offset).reshape(1, 2, 2, 1)])
    eye = np.eye(2)
    if offset == 1:
        flip_set = np.array([[0.0, 1.0], [0.0, 0.0]])  # k=0 -> j=1, carry ends
        flip_carry = np.array([[0.0, 0.0], [1.0, 0.0]])  # k=1 -> j=0, carry on
        first = np.stack([flip_set, flip_carry], axis=-1).reshape(1, 2, 2, 2)
        mid = np.zeros((2, 2, 2, 2))
        mid[0, :, :, 0] = eye
        mid[1, :, :, 0] = flip_set
        mid[1, :, :, 1] = flip_carry
        last = np.zeros((2, 2, 2, 1))
        last[0, :, :, 0] = eye
        last[1, :, :, 0] = flip_set
    elif offset == 0:
        hi = np.diag([0.0, 1.0])
        first = np.stack([eye, hi], axis=-1).reshape(1, 2, 2, 2)
        mid = np.zeros((2, 2, 2, 2))
        mid[0, :, :, 0] = eye
        mid[1, :, :, 1] = hi
        last = np.zeros((2, 2, 2, 1))
        last[0, :, :, 0] = eye
        last[1, :, :, 0] = -hi
    else:
        raise ValueError("offset must be 0 or 1")
    return TTMatrix([first] + [mid] * (d - 2) + [last])


def build_shift_operator(corner, d: int, ordering: str = "zorder") -> ShiftOperator:
    """Shift matrix V_c of one reference corner.

    Rows are (padded) element-grid positions, columns node positions:
    element (i, j) maps to node (i + a, j + b) with (a, b) the corner
    offsets.  Each 1D factor has QTT rank 2; the composed operator has
    rank at most 4.
    """
    corner = tuple(corner)
    if corner not in CORNERS:
        raise ValueError(f"unknown reference corner {corner!r}")
    a = (corner[0] + 1) // 2
    b = (corner[1] + 1) // 2
    vi = qtt1d_shift(d, a)
    vj = qtt1d_shift(d, b)
    return ShiftOperator(corner, d, ordering, compose2d(vj, vi, ordering))


def diag_tt(values_grid: np.ndarray, ordering: str, epsilon: float = 0.0) -> TTMatrix:
    """Diagonal QTT operator of a (possibly padded) element-value grid."""
    n = values_grid.shape[0]
    d = int(n).bit_length() - 1
    if n != 1 << d:
        # zero-pad an (2^d - 1)^2 element grid to 2^d x 2^d
        d = int(n).bit_length()
        padded = np.zeros((1 << d, 1 << d))
        padded[:n, :n] = values_grid
        values_grid = padded
    return tt_diag(grid_to_qtt(values_grid, ordering, epsilon))


@dataclass(frozen=True)
class SubdomainSystem:
    """Z-ordered (or canonical) QTT stiffness blocks and load vectors."""

    mesh: SubdomainMesh
    ordering: str
    kxx: TTMatrix
    kxy: TTMatrix
    kyx: TTMatrix
    kyy: TTMatrix
    fx: TTVector
    fy: TTVector

    def block(self, alpha: int, beta: int) -> TTMatrix:
        return (
            (self.kxx, self.kxy),
            (self.kyx, self.kyy),
        )[alpha][beta]

    def load(self, alpha: int) -> TTVector:
        return (self.fx, self.fy)[alpha]


_DENSE_GRID_LIMIT = 10  # max d for materializing per-element value grids

_assembly_cache: dict = {}


def _geometry_key(mesh, material, ordering, epsilon, quadrature, body_force,
                  paper_determinant):
    rel = np.round(mesh.corners - mesh.corners[0], 12)
    return (
        rel.tobytes(),
        mesh.d,
        material.youngs_modulus,
        material.poisson_ratio,
        material.mode,
        ordering,
        float(epsilon),
        quadrature,
        tuple(np.round(body_force, 15)),
        paper_determinant,
    )


def _zero_system(d: int) -> tuple:
    kz = TTMatrix([np.zeros((1, 2, 2, 1))] * (2 * d))
    fz = TTVector([np.zeros((1, 2, 1))] * (2 * d))
    return kz, fz


def assemble_subdomain(
    mesh: SubdomainMesh,
    material: MaterialModel,
    ordering: str = "zorder",
    epsilon: float = 1e-12,
    quadrature: str = "gauss2",
    body_force=(0.0, 0.0),
    paper_determinant: bool = False,
    cache: bool = True,
) -> SubdomainSystem:
    """K_ab = sum over the 16 corner pairs of V_c1^T diag(values) V_c2.

    The accumulated blocks are rounded at epsilon/16 after each pair;
    the loads use the same shift machinery on the G grids times the
    constant body-force intensity.  Side tractions are added afterwards
    (they are not part of the cached, translation-invariant system).
    """
    _check_ordering(ordering)
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    key = _geometry_key(
        mesh, material, ordering, epsilon, quadrature, body_force,
        paper_determinant,
    )
    if cache and key in _assembly_cache:
        base = _assembly_cache[key]
        return _with_tractions(base, mesh, ordering)

    d = mesh.d
    ne = mesh.n_elem
    eps_acc = epsilon / 16.0
    shifts = [build_shift_operator(c, d, ordering) for c in CORNERS]
    const_elements = mesh.is_parallelogram()
    if not const_elements and d > _DENSE_GRID_LIMIT:
        raise ValueError(
            f"general quadrilateral value grids need d <= {_DENSE_GRID_LIMIT}"
        )
    ones_pad = qtt1d_vector(_padded_ones(d))
    elem_indicator = tt_diag(compose2d(ones_pad, ones_pad, ordering))

    kz, fz = _zero_system(d)
    kblocks = [[kz, kz], [kz, kz]]
    floads = [fz, fz]
    body = np.asarray(body_force, dtype=np.float64)
    ones_nodes = TTVector([np.ones((1, 2, 1))] * (2 * d))
    for a in range(4):
        for b in range(4):
            c1, c2 = CORNERS[a], CORNERS[b]
            v1t = shifts[a].transpose
            v2 = shifts[b].op
            if const_elements:
                # identical elements: evaluate once on the d=1 mesh; the
                # stiffness integrand is invariant under the affine 1/ne
                # element shrink while |J| scales the load by 1/ne^2
                kvals = element_stiffness_block(
                    SubdomainMesh(mesh.corners, 1), material, c1, c2,
                    quadrature, paper_determinant,
                )[0, 0]
                gval = element_load_block(
                    SubdomainMesh(mesh.corners, 1), c1, c2, quadrature,
                    paper_determinant,
                )[0, 0] / ne**2
                kdiags = {
                    (al, be): tt_scale(elem_indicator, kvals[al, be])
                    for al in range(2)
                    for be in range(2)
                }
                gdiag = tt_scale(elem_indicator, gval)
            else:
                kgrid = element_stiffness_block(
                    mesh, material, c1, c2, quadrature, paper_determinant
                )
                ggrid = element_load_block(
                    mesh, c1, c2, quadrature, paper_determinant
                )
                kdiags = {
                    (al, be): diag_tt(kgrid[:, :, al, be], ordering)
                    for al in range(2)
                    for be in range(2)
                }
                gdiag = diag_tt(ggrid, ordering)
            for al in range(2):
                for be in range(2):
                    term = tt_matmat(tt_matmat(v1t, kdiags[(al, be)]), v2)
                    kblocks[al][be] = tt_round(
                        tt_add(kblocks[al][be], term), eps_acc
                    )
            if np.any(body != 0.0):
                gop = tt_matmat(tt_matmat(v1t, gdiag), v2)
                gvec = tt_matvec(gop, ones_nodes)
                for al in range(2):
                    if body[al] != 0.0:
                        floads[al] = tt_round(
                            tt_add(floads[al], tt_scale(gvec, body[al])),
                            eps_acc,
                        )
    base = SubdomainSystem(
        mesh,
        ordering,
        kblocks[0][0],
        kblocks[0][1],
        kblocks[1][0],
        kblocks[1][1],
        floads[0],
        floads[1],
    )
    if cache:
        _assembly_cache[key] = base
    return _with_tractions(base, mesh, ordering)


def traction_qtt(mesh: SubdomainMesh, side: str, traction, ordering: str):
    """Per-component QTT load vectors of a constant side traction.

    The nodal weights factor into a 1D edge-weight vector along the side
    and a unit selector across it, so the QTT rank stays at most 3.
    """
    _check_ordering(ordering)
    tvec = np.asarray(
        mesh.tractions[side] if traction is None else traction, dtype=np.float64
    )
    d = mesh.d
    n = 1 << d
    h = mesh.side_length(side) / mesh.n_elem
    weights = np.full(n, h)
    weights[0] = weights[-1] = h / 2
    along = qtt1d_vector(weights)
    if side in ("left", "right"):
        sel = np.zeros(n)
        sel[0 if side == "left" else n - 1] = 1.0
        vec = compose2d(along, qtt1d_vector(sel), ordering)
    else:
        sel = np.zeros(n)
        sel[0 if side == "bottom" else n - 1] = 1.0
        vec = compose2d(qtt1d_vector(sel), along, ordering)
    return tt_scale(vec, tvec[0]), tt_scale(vec, tvec[1])


def _with_tractions(base: SubdomainSystem, mesh: SubdomainMesh, ordering: str):
    if not mesh.tractions:
        return SubdomainSystem(
            mesh, ordering, base.kxx, base.kxy, base.kyx, base.kyy,
            base.fx, base.fy,
        )
    fx, fy = base.fx, base.fy
    for side in sorted(mesh.tractions):
        tx, ty = traction_qtt(mesh, side, None, ordering)
        fx = tt_round(tt_add(fx, tx), 1e-14)
        fy = tt_round(tt_add(fy, ty), 1e-14)
    return SubdomainSystem(
        mesh, ordering, base.kxx, base.kxy, base.kyx, base.kyy, fx, fy
    )
