"""Conforming sparse FEM on the same geometries: the in-repo reference.

Assembly here is deliberately independent of the structured QTT path:
each element's Jacobian is differentiated directly from its own corner
coordinates (no index expansion), and contributions are scattered into
scipy sparse matrices over a merged conforming node set.  DOFs are
interleaved per node (2*node + component).
"""

from __future__ import annotations

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .element import CORNERS, quadrature_rule, shape_functions
from .material import MaterialModel
from .topology import DomainTopology

__all__ = [
    "ConformingSystem",
    "conforming_solve",
    "energy_error",
    "l2_error",
    "interpolate_field",
]

_DIRECT_SOLVE_LIMIT = 700_000  # DOFs; larger systems go to AMG/CG


def _merge_node_ids(topology: DomainTopology):
    """Global ids per (subdomain, i, j); tied nodes share one id."""
    q = topology.q
    n = topology.subdomains[0].n_side
    ids = np.arange(q * n * n, dtype=np.int64).reshape(q, n, n)
    parent = np.arange(q * n * n, dtype=np.int64)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for (m, im, jm), (p, ip, jp) in topology.all_tied_pairs():
        ra, rb = find(ids[m, im, jm]), find(ids[p, ip, jp])
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    roots = np.array([find(a) for a in range(q * n * n)], dtype=np.int64)
    uniq, compact = np.unique(roots, return_inverse=True)
    return compact.reshape(q, n, n), uniq.size


def _element_matrices(mesh, material, quadrature):
    """Per-element 8x8 stiffness and 4x4 mass grids, direct Jacobians.

    Returns (K, M, det_sum) with K of shape (ne, ne, 4, 4, 2, 2) indexed
    by (i, j, corner_a, corner_b, comp_a, comp_b) and M of shape
    (ne, ne, 4, 4).
    """
    coords = mesh.node_coords()
    # element corner coordinates, CCW, shape (ne, ne, 4, 2)
    ec = np.stack(
        [
            coords[:-1, :-1],
            coords[1:, :-1],
            coords[1:, 1:],
            coords[:-1, 1:],
        ],
        axis=2,
    )
    ne = mesh.n_elem
    cmat = material.C
    pts, wts = quadrature_rule(quadrature)
    ke = np.zeros((ne, ne, 4, 4, 2, 2))
    me = np.zeros((ne, ne, 4, 4))
    for gx, wx in zip(pts, wts):
        for gy, wy in zip(pts, wts):
            vals, grads = shape_functions(gx, gy)
            # J rows: (d/dxi, d/deta) of (x, y), per element
            jac = np.einsum("kr,ijkc->ijrc", grads, ec)
            det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
            if np.any(det <= 0):
                raise ValueError("degenerate element in oracle assembly")
            # physical gradients of the four shape functions
            gxs = (
                grads[:, 0][:, None, None] * jac[None, :, :, 1, 1]
                - grads[:, 1][:, None, None] * jac[None, :, :, 0, 1]
            ) / det
            gys = (
                -grads[:, 0][:, None, None] * jac[None, :, :, 1, 0]
                + grads[:, 1][:, None, None] * jac[None, :, :, 0, 0]
            ) / det
            w = wx * wy * det
            c11, c12, c22, c33 = cmat[0, 0], cmat[0, 1], cmat[1, 1], cmat[2, 2]
            ke[..., 0, 0] += np.einsum(
                "aij,bij,ij->ijab", gxs, gxs, c11 * w
            ) + np.einsum("aij,bij,ij->ijab", gys, gys, c33 * w)
            ke[..., 0, 1] += np.einsum(
                "aij,bij,ij->ijab", gxs, gys, c12 * w
            ) + np.einsum("aij,bij,ij->ijab", gys, gxs, c33 * w)
            ke[..., 1, 0] += np.einsum(
                "aij,bij,ij->ijab", gys, gxs, c12 * w
            ) + np.einsum("aij,bij,ij->ijab", gxs, gys, c33 * w)
            ke[..., 1, 1] += np.einsum(
                "aij,bij,ij->ijab", gys, gys, c22 * w
            ) + np.einsum("aij,bij,ij->ijab", gxs, gxs, c33 * w)
            me += np.einsum("a,b,ij->ijab", vals, vals, w)
    return ke, me


def _single_element_matrices(mesh, material, quadrature):
    """8x8 stiffness / 4x4 mass of element (0, 0), direct Jacobian."""
    coords = mesh.node_coords()
    ec = np.array(
        [coords[0, 0], coords[1, 0], coords[1, 1], coords[0, 1]]
    )
    cmat = material.C
    pts, wts = quadrature_rule(quadrature)
    ke = np.zeros((4, 4, 2, 2))
    me = np.zeros((4, 4))
    for gx, wx in zip(pts, wts):
        for gy, wy in zip(pts, wts):
            vals, grads = shape_functions(gx, gy)
            jac = grads.T @ ec
            det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
            if det <= 0:
                raise ValueError("degenerate element in oracle assembly")
            gxs = (grads[:, 0] * jac[1, 1] - grads[:, 1] * jac[0, 1]) / det
            gys = (-grads[:, 0] * jac[1, 0] + grads[:, 1] * jac[0, 0]) / det
            w = wx * wy * det
            c11, c12, c22, c33 = cmat[0, 0], cmat[0, 1], cmat[1, 1], cmat[2, 2]
            ke[..., 0, 0] += w * (
                c11 * np.outer(gxs, gxs) + c33 * np.outer(gys, gys)
            )
            ke[..., 0, 1] += w * (
                c12 * np.outer(gxs, gys) + c33 * np.outer(gys, gxs)
            )
            ke[..., 1, 0] += w * (
                c12 * np.outer(gys, gxs) + c33 * np.outer(gxs, gys)
            )
            ke[..., 1, 1] += w * (
                c22 * np.outer(gys, gys) + c33 * np.outer(gxs, gxs)
            )
            me += w * np.outer(vals, vals)
    return ke, me


class ConformingSystem:
    """Merged conforming assembly of a partitioned domain."""

    def __init__(
        self,
        topology: DomainTopology,
        material: MaterialModel,
        body_force=(0.0, 0.0),
        quadrature: str = "gauss2",
    ):
        self.topology = topology
        self.material = material
        self.quadrature = quadrature
        self.node_ids, self.n_nodes = _merge_node_ids(topology)
        self.n_dofs = 2 * self.n_nodes
        self._assemble(np.asarray(body_force, dtype=np.float64))

    def _assemble(self, body_force):
        topo = self.topology
        nd = self.n_dofs
        kmats, mmats = [], []
        f = np.zeros(nd)
        coords = np.zeros((self.n_nodes, 2))
        itype = np.int32 if nd < 2**31 else np.int64
        for m, mesh in enumerate(topo.subdomains):
            ne2 = mesh.n_elem**2
            if mesh.is_parallelogram():
                # identical elements: one 8x8/4x4 matrix serves the grid
                ke1, me1 = _single_element_matrices(
                    mesh, self.material, self.quadrature
                )
                blk_val = lambda a, b, ca, sb: np.full(ne2, ke1[a, b, ca, sb])
                m_val = lambda a, b: np.full(ne2, me1[a, b])
            else:
                ke, me = _element_matrices(mesh, self.material, self.quadrature)
                blk_val = lambda a, b, ca, sb: ke[:, :, a, b, ca, sb].ravel()
                m_val = lambda a, b: me[:, :, a, b].ravel()
            ids = self.node_ids[m]
            coords[ids.ravel()] = mesh.node_coords().reshape(-1, 2)
            # global node of each element corner, shape (ne, ne, 4)
            corner_nodes = np.stack(
                [ids[:-1, :-1], ids[1:, :-1], ids[1:, 1:], ids[:-1, 1:]],
                axis=2,
            )
            cn = corner_nodes.reshape(ne2, 4).astype(itype)
            rows, cols, vals = [], [], []
            mrows, mcols, mvals = [], [], []
            for a in range(4):
                for b in range(4):
                    ra = 2 * cn[:, a]
                    cb = 2 * cn[:, b]
                    for ca in range(2):
                        for sb in range(2):
                            rows.append(ra + ca)
                            cols.append(cb + sb)
                            vals.append(blk_val(a, b, ca, sb))
                    mrows.append(cn[:, a])
                    mcols.append(cn[:, b])
                    mvals.append(m_val(a, b))
            kmats.append(
                sparse.coo_matrix(
                    (
                        np.concatenate(vals),
                        (np.concatenate(rows), np.concatenate(cols)),
                    ),
                    shape=(nd, nd),
                ).tocsr()
            )
            mmats.append(
                sparse.coo_matrix(
                    (
                        np.concatenate(mvals),
                        (np.concatenate(mrows), np.concatenate(mcols)),
                    ),
                    shape=(self.n_nodes, self.n_nodes),
                ).tocsr()
            )
            # consistent body-force load: rows of the mass matrix
            if np.any(body_force != 0.0):
                row_sums = np.asarray(mmats[-1].sum(axis=1)).ravel()
                f[0::2] += row_sums * body_force[0]
                f[1::2] += row_sums * body_force[1]
            for side, tvec in mesh.tractions.items():
                from .element import traction_load

                grid = traction_load(mesh, side, tvec)
                nodes = ids.ravel()
                np.add.at(f, 2 * nodes, grid[..., 0].ravel())
                np.add.at(f, 2 * nodes + 1, grid[..., 1].ravel())
        self.K = sum(kmats[1:], start=kmats[0])
        self.M_scalar = sum(mmats[1:], start=mmats[0])
        self.f = f
        self.coords = coords
        self.constrained = self._constraint_mask()

    def _constraint_mask(self) -> np.ndarray:
        topo = self.topology
        mask = np.zeros(self.n_dofs, dtype=bool)
        for m, mesh in enumerate(topo.subdomains):
            for side in ("left", "right", "bottom", "top"):
                tag = mesh.tag(side)
                if tag == "free":
                    continue
                si, sj = mesh.side_node_indices(side)
                nodes = self.node_ids[m][si, sj]
                if tag in ("roller-x", "clamped"):
                    mask[2 * nodes] = True
                if tag in ("roller-y", "clamped"):
                    mask[2 * nodes + 1] = True
        return mask

    def solve(self, rtol: float = 1e-10) -> np.ndarray:
        """Displacements with homogeneous Dirichlet rows eliminated."""
        free = ~self.constrained
        if not np.any(self.constrained):
            raise ValueError(
                "system has no Dirichlet constraints; rigid motions are free"
            )
        kff = self.K[free][:, free].tocsc()
        ff = self.f[free]
        if kff.shape[0] <= _DIRECT_SOLVE_LIMIT:
            uf = spla.splu(kff).solve(ff)
        else:
            uf = self._amg_solve(kff.tocsr(), ff, free, rtol)
        res = np.linalg.norm(kff @ uf - ff)
        scale = max(np.linalg.norm(ff), 1e-300)
        if res > 1e-8 * scale:
            raise RuntimeError(f"reference solve residual too large: {res/scale}")
        u = np.zeros(self.n_dofs)
        u[free] = uf
        return u

    def _amg_solve(self, kff, ff, free, rtol):
        import pyamg

        coords = self.coords
        nn = self.n_nodes
        b = np.zeros((self.n_dofs, 3))
        b[0::2, 0] = 1.0
        b[1::2, 1] = 1.0
        b[0::2, 2] = -coords[:, 1]
        b[1::2, 2] = coords[:, 0]
        ml = pyamg.smoothed_aggregation_solver(
            kff, B=b[free], max_coarse=500, symmetry="symmetric"
        )
        tol = max(rtol, 1e-12)
        return ml.solve(ff, tol=tol, accel="cg", maxiter=400)

    # -- norms -------------------------------------------------------------

    def energy_seminorm(self, e: np.ndarray) -> float:
        return float(np.sqrt(max(e @ (self.K @ e), 0.0)))

    def l2_norm(self, e: np.ndarray) -> float:
        ex, ey = e[0::2], e[1::2]
        val = ex @ (self.M_scalar @ ex) + ey @ (self.M_scalar @ ey)
        return float(np.sqrt(max(val, 0.0)))

    # -- field conversion ----------------------------------------------------

    def field_to_vector(self, fields) -> np.ndarray:
        """Average per-subdomain (n, n, 2) grids into a merged DOF vector."""
        acc = np.zeros(self.n_dofs)
        cnt = np.zeros(self.n_dofs)
        for m, grid in enumerate(fields):
            nodes = self.node_ids[m].ravel()
            for c in range(2):
                np.add.at(acc, 2 * nodes + c, grid[..., c].ravel())
                np.add.at(cnt, 2 * nodes + c, 1.0)
        return acc / np.maximum(cnt, 1.0)

    def vector_to_fields(self, u: np.ndarray):
        out = []
        for m in range(self.topology.q):
            ids = self.node_ids[m]
            grid = np.stack([u[2 * ids], u[2 * ids + 1]], axis=-1)
            out.append(grid)
        return out


def interpolate_field(grid: np.ndarray, d_fine: int) -> np.ndarray:
    """Bilinear interpolation of an (n, n, ...) nodal grid to level d_fine.

    Both grids live on the uniform parametric lattice of the same
    subdomain, so interpolation is exact in parameter space.
    """
    n_c = grid.shape[0]
    n_f = 1 << d_fine
    if n_f == n_c:
        return grid.copy()
    u = np.linspace(0.0, 1.0, n_f) * (n_c - 1)
    k = np.minimum(u.astype(int), n_c - 2)
    w = u - k
    # interpolate along axis 0 then axis 1
    a = grid[k] * (1 - w)[:, None, None] + grid[k + 1] * w[:, None, None]
    a = (
        a[:, k] * (1 - w)[None, :, None]
        + a[:, k + 1] * w[None, :, None]
    )
    return a


def conforming_solve(
    topology: DomainTopology,
    material: MaterialModel,
    body_force=(0.0, 0.0),
    quadrature: str = "gauss2",
    rtol: float = 1e-10,
):
    """Assemble, solve and return (system, u)."""
    system = ConformingSystem(topology, material, body_force, quadrature)
    return system, system.solve(rtol)


def energy_error(u_test_fields, system: ConformingSystem, u_ref: np.ndarray):
    """Energy seminorm of (interpolated test field - reference)."""
    d_ref = system.topology.d
    fine = [interpolate_field(g, d_ref) for g in u_test_fields]
    e = system.field_to_vector(fine) - u_ref
    return system.energy_seminorm(e)


def l2_error(u_test_fields, system: ConformingSystem, u_ref: np.ndarray):
    d_ref = system.topology.d
    fine = [interpolate_field(g, d_ref) for g in u_test_fields]
    e = system.field_to_vector(fine) - u_ref
    return system.l2_norm(e)
