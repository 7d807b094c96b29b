"""Glue subdomain systems into one global QTT system.

Global objects carry the modes (least significant first): the 2d node
modes of one subdomain grid, then ceil(log2 q) subdomain-axis bits
(padded to a power of two), then one component mode — so the dense
realization is the 2x2 component block matrix of subdomain blocks.

Duplicated interface nodes are reconciled with connectivity operators:
the diagonal blocks gain +gamma * multiplicity at tied nodes and the
off-diagonal ones Pi K^(p) - gamma Pi, so that a continuous field
satisfies the summed equilibrium of every duplicate exactly (the
Lagrange-multiplier form; the resulting matrix is mildly nonsymmetric).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assembly import (
    SubdomainSystem,
    compose2d,
    qtt1d_interval,
    qtt1d_ones,
    qtt1d_unit,
    qtt1d_vector,
    qtt_to_grid,
)
from .topology import DomainTopology, PointInterface, SideInterface
from .ttcore import (
    TTMatrix,
    TTVector,
    tt_add,
    tt_decompose,
    tt_diag,
    tt_hadamard,
    tt_matmat,
    tt_matvec,
    tt_rank1_matrix,
    tt_round,
    tt_scale,
    tt_slice_mode,
    tt_transpose,
)

__all__ = [
    "GlobalSystem",
    "build_connectivity",
    "interface_multiplicity",
    "accumulate_interface_forces",
    "build_boundary_mask",
    "apply_dirichlet",
    "stack_components",
    "concat_blocks",
    "default_gamma",
]

_SIDE_AXIS = {"left": 0, "right": 0, "bottom": 1, "top": 1}
_SIDE_POS = {"left": 0, "bottom": 0, "right": -1, "top": -1}

_EXACT_EPS = 1e-13  # rounding for exactly representable 0/1 structures


def _selector1d(d: int, pos_row: int, pos_col: int) -> TTMatrix:
    """Rank-1 e_row e_col^T over one grid direction."""
    n = 1 << d
    row = np.unravel_index(pos_row % n, (2,) * d, order="F")
    col = np.unravel_index(pos_col % n, (2,) * d, order="F")
    mats = []
    for rb, cb in zip(row, col):
        m = np.zeros((2, 2))
        m[rb, cb] = 1.0
        mats.append(m)
    return tt_rank1_matrix(mats)


def _flip1d(d: int) -> TTMatrix:
    """Index reversal k -> 2^d - 1 - k (bitwise complement, rank 1)."""
    return tt_rank1_matrix([np.array([[0.0, 1.0], [1.0, 0.0]])] * d)


def _tie_bounds(d: int, lo: float, hi: float) -> tuple:
    last = (1 << d) - 1
    ka = int(np.ceil(last * lo - 1e-9))
    kb = int(np.floor(last * hi + 1e-9))
    return max(ka, 0), min(kb, last)


def _identity1d(d: int) -> TTMatrix:
    return tt_rank1_matrix([np.eye(2)] * d)


def build_connectivity(
    topology: DomainTopology, m: int, p: int, ordering: str = "zorder"
) -> TTMatrix:
    """Connectivity operator Pi^(mp): 1 at (i, j) iff node i of subdomain
    m is tied to node j of subdomain p.  Rank O(1) by construction."""
    d = topology.d
    if m == p:
        raise ValueError("use interface_multiplicity for the diagonal marker")
    terms = []
    for kind, rec, flipped in topology.partner_records(m):
        if kind == "side":
            other = rec.p if not flipped else rec.m
            if other != p:
                continue
            terms.append(_side_connectivity(topology, rec, flipped, ordering))
        else:
            other = rec.p if not flipped else rec.m
            if other != p:
                continue
            nm, np_ = (rec.node_m, rec.node_p)
            if flipped:
                nm, np_ = np_, nm
            ci = _selector1d(d, nm[0], np_[0])
            cj = _selector1d(d, nm[1], np_[1])
            terms.append(compose2d(cj, ci, ordering))
    if not terms:
        return TTMatrix([np.zeros((1, 2, 2, 1))] * (2 * d))
    out = terms[0]
    for t in terms[1:]:
        out = tt_add(out, t)
    return out


def _tie_rows(d: int, rec: SideInterface, flipped: bool) -> TTVector:
    """Exact 0/1 indicator of the tied nodes along the row side."""
    ka, kb = _tie_bounds(d, rec.tie_lo, rec.tie_hi)
    last = (1 << d) - 1
    if flipped and rec.reversed:
        ka, kb = last - kb, last - ka
    return qtt1d_interval(d, ka, kb)


def _side_connectivity(topology, rec: SideInterface, flipped, ordering):
    """Pi restricted to one side interface, built from 1D factors."""
    d = topology.d
    sm, sp = rec.side_m, rec.side_p
    if flipped:
        sm, sp = sp, sm
    if _SIDE_AXIS[sm] != _SIDE_AXIS[sp]:
        raise NotImplementedError(
            "rotated interfaces (mixed side axes) are not supported"
        )
    along = tt_matmat(
        tt_diag(_tie_rows(d, rec, flipped)),
        _flip1d(d) if rec.reversed else _identity1d(d),
    )
    cross = _selector1d(d, _SIDE_POS[sm], _SIDE_POS[sp])
    if _SIDE_AXIS[sm] == 0:  # left/right: selector on i, tie along j
        return compose2d(along, cross, ordering)
    return compose2d(cross, along, ordering)


def interface_multiplicity(
    topology: DomainTopology, m: int, ordering: str = "zorder"
) -> TTVector:
    """Diagonal marker of subdomain m: tied-partner count per node."""
    d = topology.d
    acc = TTVector([np.zeros((1, 2, 1))] * (2 * d))
    for kind, rec, flipped in topology.partner_records(m):
        if kind == "side":
            sm = rec.side_p if flipped else rec.side_m
            tie = _tie_rows(d, rec, flipped)
            sel = qtt1d_unit(d, _SIDE_POS[sm])
            if _SIDE_AXIS[sm] == 0:
                term = compose2d(tie, sel, ordering)
            else:
                term = compose2d(sel, tie, ordering)
        else:
            node = rec.node_p if flipped else rec.node_m
            term = compose2d(
                qtt1d_unit(d, node[1]), qtt1d_unit(d, node[0]), ordering
            )
        acc = tt_add(acc, term)
    return acc


def accumulate_interface_forces(systems, topology, ordering: str = "zorder"):
    """g^(m) = f^(m) + sum_p Pi^(mp) f^(p), per component."""
    out = []
    for m in range(topology.q):
        gx, gy = systems[m].fx, systems[m].fy
        for kind, rec, flipped in topology.partner_records(m):
            p = (rec.p if not flipped else rec.m)
            pi = build_connectivity(topology, m, p, ordering)
            gx = tt_round(tt_add(gx, tt_matvec(pi, systems[p].fx)), _EXACT_EPS)
            gy = tt_round(tt_add(gy, tt_matvec(pi, systems[p].fy)), _EXACT_EPS)
        out.append((gx, gy))
    return out


# ---------------------------------------------------------------- masks


def _free_line(d: int, side_pos: int) -> TTVector:
    """1D generator [0,1,...,1] / [1,...,1,0]: zero at the constrained end."""
    return tt_add(qtt1d_ones(d), tt_scale(qtt1d_unit(d, side_pos), -1.0))


def build_boundary_mask(mesh, d: int, ordering: str = "zorder"):
    """Per-component 0/1 node masks: zero exactly at constrained DOFs.

    Built from the 1D generator vectors through (z-)Kronecker products,
    one factor per constrained side, intersected by Hadamard products;
    every step is integer-exact.
    """
    masks = []
    for comp in range(2):
        acc = TTVector([np.ones((1, 2, 1))] * (2 * d))
        for side in ("left", "right", "bottom", "top"):
            tag = mesh.tag(side)
            if tag == "free" or (tag == "roller-x" and comp != 0) or (
                tag == "roller-y" and comp != 1
            ):
                continue
            line = _free_line(d, _SIDE_POS[side])
            ones = qtt1d_ones(d)
            if _SIDE_AXIS[side] == 0:
                term = compose2d(ones, line, ordering)
            else:
                term = compose2d(line, ones, ordering)
            acc = tt_hadamard(acc, term)
        masks.append(acc)
    return masks


# ------------------------------------------------------------- global system


@dataclass(frozen=True)
class GlobalSystem:
    """Coupled QTT operator/load over [node modes][subdomain bits][component]."""

    topology: DomainTopology
    ordering: str
    K: TTMatrix
    f: TTVector
    mask: TTVector
    gamma: float

    @property
    def d(self) -> int:
        return self.topology.d

    @property
    def sub_bits(self) -> int:
        q = self.topology.q
        return 0 if q == 1 else int(np.ceil(np.log2(q)))

    @property
    def q_padded(self) -> int:
        return 1 << self.sub_bits

    @property
    def n_dofs(self) -> int:
        return 2 * self.topology.q * 4**self.d

    def subdomain_field(self, u: TTVector, m: int) -> np.ndarray:
        """(n, n, 2) nodal displacement grid of subdomain m."""
        nm = 2 * self.d
        out = []
        for comp in range(2):
            v = tt_slice_mode(u, nm + self.sub_bits, comp)
            for b in reversed(range(self.sub_bits)):
                v = tt_slice_mode(v, nm + b, (m >> b) & 1)
            out.append(qtt_to_grid(v, self.ordering))
        return np.stack(out, axis=-1)

    def fields(self, u: TTVector):
        return [self.subdomain_field(u, m) for m in range(self.topology.q)]


def _sub_axis_qtt(coeff: np.ndarray, s: int):
    """QTT of a q_padded x q_padded subdomain-coupling pattern."""
    if s == 0:
        return None
    return tt_decompose(coeff, 0.0, mode_sizes=((2,) * s, (2,) * s))


def _lift(block: TTMatrix, sub_qtt, comp: np.ndarray) -> TTMatrix:
    """Attach subdomain-axis and component cores above the node modes."""
    cores = list(block.cores)
    if sub_qtt is not None:
        cores += list(sub_qtt.cores)
    cores.append(comp.reshape(1, 2, 2, 1))
    return TTMatrix(cores)


def _lift_vec(vec: TTVector, sub_vec, comp: np.ndarray) -> TTVector:
    cores = list(vec.cores)
    if sub_vec is not None:
        cores += list(sub_vec.cores)
    cores.append(comp.reshape(1, 2, 1))
    return TTVector(cores)


def default_gamma(systems) -> float:
    """Mean diagonal entry of the subdomain K_aa blocks."""
    tot, cnt = 0.0, 0
    for sys_ in systems:
        for blk in (sys_.kxx, sys_.kyy):
            g = np.ones((1, 1))
            for c in blk.cores:
                g = g @ c[:, 0, 0, :] + g @ c[:, 1, 1, :]
            tot += float(g[0, 0])
            cnt += 4**sys_.mesh.d
    return tot / cnt


_COMP = {
    (0, 0): np.array([[1.0, 0.0], [0.0, 0.0]]),
    (0, 1): np.array([[0.0, 1.0], [0.0, 0.0]]),
    (1, 0): np.array([[0.0, 0.0], [1.0, 0.0]]),
    (1, 1): np.array([[0.0, 0.0], [0.0, 1.0]]),
}


def stack_components(kxx, kxy, kyx, kyy, fx, fy, epsilon: float = _EXACT_EPS):
    """One added leading component core: dense([[Kxx, Kxy], [Kyx, Kyy]])."""
    k = None
    for (a, b), blk in (((0, 0), kxx), ((0, 1), kxy), ((1, 0), kyx), ((1, 1), kyy)):
        term = _lift(blk, None, _COMP[(a, b)])
        k = term if k is None else tt_round(tt_add(k, term), epsilon)
    f = tt_add(
        _lift_vec(fx, None, np.array([1.0, 0.0])),
        _lift_vec(fy, None, np.array([0.0, 1.0])),
    )
    return k, tt_round(f, epsilon)


def concat_blocks(
    systems,
    topology: DomainTopology,
    gamma: float | None = None,
    ordering: str = "zorder",
    epsilon: float = 1e-12,
) -> GlobalSystem:
    """Assemble the coupled global K and f.

    Diagonal blocks: K^(m) + gamma * diag(multiplicity); off-diagonal
    (adjacent only): Pi^(mp) K^(p) - gamma Pi^(mp); padded subdomain
    slots carry gamma * I.  Loads accumulate partner contributions
    through the same connectivity operators.
    """
    q = topology.q
    if len(systems) != q:
        raise ValueError("one assembled system per subdomain required")
    if any(s.mesh.d != topology.d for s in systems):
        raise ValueError("mismatched level d across subdomain systems")
    if gamma is None:
        gamma = default_gamma(systems)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    d = topology.d
    s = 0 if q == 1 else int(np.ceil(np.log2(q)))
    qp = 1 << s

    def unit_pattern(m, p):
        e = np.zeros((qp, qp))
        e[m, p] = 1.0
        return e

    terms = []  # (node TT, sub pattern, comp 2x2)
    ident_nodes = _identity1d(2 * d)

    # group identical K blocks (the assembly cache shares translates)
    kgroups: dict = {}
    for m, sys_ in enumerate(systems):
        for (a, b) in ((0, 0), (0, 1), (1, 0), (1, 1)):
            blk = sys_.block(a, b)
            key = (id(blk), a, b)
            kgroups.setdefault(key, [np.zeros((qp, qp)), blk, a, b])
            kgroups[key][0][m, m] = 1.0
    for pattern, blk, a, b in kgroups.values():
        terms.append((blk, pattern, _COMP[(a, b)]))

    # penalty diagonal: +gamma * multiplicity marker, both components
    mult_groups: dict = {}
    for m in range(q):
        marker = interface_multiplicity(topology, m, ordering)
        key = tuple(
            (c.tobytes(), c.shape) for c in marker.cores
        )
        mult_groups.setdefault(key, [np.zeros((qp, qp)), marker])
        mult_groups[key][0][m, m] = 1.0
    for pattern, marker in mult_groups.values():
        terms.append((tt_scale(tt_diag(marker), gamma), pattern, np.eye(2)))

    # off-diagonal coupling per adjacent ordered pair
    prod_cache: dict = {}
    for m in range(q):
        partners = sorted(
            {
                (rec.p if not flipped else rec.m)
                for _, rec, flipped in topology.partner_records(m)
            }
        )
        for p in partners:
            pi = build_connectivity(topology, m, p, ordering)
            terms.append((tt_scale(pi, -gamma), unit_pattern(m, p), np.eye(2)))
            for (a, b) in ((0, 0), (0, 1), (1, 0), (1, 1)):
                blk = systems[p].block(a, b)
                key = (id(pi), id(blk))
                if key not in prod_cache:
                    prod_cache[key] = tt_round(tt_matmat(pi, blk), epsilon)
                terms.append(
                    (prod_cache[key], unit_pattern(m, p), _COMP[(a, b)])
                )

    # padded subdomain slots: gamma * identity
    if qp > q:
        pad = np.zeros((qp, qp))
        pad[np.arange(q, qp), np.arange(q, qp)] = 1.0
        terms.append((tt_scale(ident_nodes, gamma), pad, np.eye(2)))

    k_glob = None
    eps_acc = epsilon / max(len(terms), 1)
    for blk, pattern, comp in terms:
        lifted = _lift(blk, _sub_axis_qtt(pattern, s), comp)
        k_glob = (
            lifted if k_glob is None else tt_round(tt_add(k_glob, lifted), eps_acc)
        )

    # loads with interface accumulation
    loads = accumulate_interface_forces(systems, topology, ordering)
    f_glob = None
    for m, (gx, gy) in enumerate(loads):
        sub = qtt1d_unit(s, m) if s > 0 else None
        for comp, g in ((np.array([1.0, 0.0]), gx), (np.array([0.0, 1.0]), gy)):
            lifted = _lift_vec(g, sub, comp)
            f_glob = (
                lifted
                if f_glob is None
                else tt_round(tt_add(f_glob, lifted), eps_acc)
            )

    # global 0/1 mask vector (padded slots constrained)
    mask_groups: dict = {}
    for m, sys_ in enumerate(systems):
        mx, my = build_boundary_mask(sys_.mesh, d, ordering)
        for comp_idx, mv in enumerate((mx, my)):
            key = (comp_idx,) + tuple(c.tobytes() for c in mv.cores)
            mask_groups.setdefault(key, [np.zeros(qp), mv, comp_idx])
            mask_groups[key][0][m] = 1.0
    tau = None
    for pattern, mv, comp_idx in mask_groups.values():
        sub = None
        if s > 0:
            # exact unit sum keeps the global mask integer-valued
            for m in np.flatnonzero(pattern):
                term = qtt1d_unit(s, int(m))
                sub = term if sub is None else tt_add(sub, term)
        comp = np.zeros(2)
        comp[comp_idx] = 1.0
        lifted = _lift_vec(mv, sub, comp)
        tau = lifted if tau is None else tt_add(tau, lifted)

    return GlobalSystem(topology, ordering, k_glob, f_glob, tau, gamma)


def apply_dirichlet(
    system: GlobalSystem, gamma_bc: float | None = None,
    epsilon: float = 1e-12,
) -> GlobalSystem:
    """Replace constrained rows/columns by gamma_bc * identity, zero RHS.

    K' = D K D + gamma_bc (I - D) with D = diag(mask); masks are exact
    0/1 objects so the conjugation is exact up to rounding noise.
    """
    if gamma_bc is None:
        gamma_bc = system.gamma
    dmask = tt_diag(system.mask)
    k = tt_matmat(dmask, tt_matmat(system.K, dmask))
    k = tt_round(k, epsilon)
    ones = TTVector([np.ones((1, 2, 1))] * len(system.mask.cores))
    complement = tt_add(ones, tt_scale(system.mask, -1.0))
    k = tt_round(
        tt_add(k, tt_scale(tt_diag(complement), gamma_bc)), epsilon
    )
    f = tt_round(tt_hadamard(system.mask, system.f), epsilon)
    return GlobalSystem(
        system.topology, system.ordering, k, f, system.mask, system.gamma
    )
