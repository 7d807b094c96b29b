"""Bilinear element kernels on the reference square [-1,1]^2.

The element stiffness and load contributions are evaluated for one
corner pair (c1, c2) at a time, vectorized over the whole element grid
of a subdomain through the affine expansion of the Jacobian in the
element indices (i, j).  For a bilinear subdomain map that expansion is
exact: dx/dxi is affine in j and dx/deta is affine in i.
"""

from __future__ import annotations

import numpy as np

from .material import MaterialModel
from .mesh import SubdomainMesh

__all__ = [
    "CORNERS",
    "shape_functions",
    "quadrature_rule",
    "jacobian_expansion",
    "element_stiffness_block",
    "element_load_block",
    "stiffness_value_grids",
    "load_value_grid",
    "traction_load",
]

# reference corners in the order used everywhere downstream
CORNERS = ((-1, -1), (1, -1), (1, 1), (-1, 1))


def shape_functions(xi, eta):
    """Values (4,) and gradients (4, 2) of the corner shape functions."""
    xi = np.asarray(xi, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    vals = np.stack(
        [
            (1 - xi) * (1 - eta) / 4,
            (1 + xi) * (1 - eta) / 4,
            (1 + xi) * (1 + eta) / 4,
            (1 - xi) * (1 + eta) / 4,
        ]
    )
    grads = np.stack(
        [
            np.stack([-(1 - eta) / 4, -(1 - xi) / 4]),
            np.stack([(1 - eta) / 4, -(1 + xi) / 4]),
            np.stack([(1 + eta) / 4, (1 + xi) / 4]),
            np.stack([-(1 + eta) / 4, (1 - xi) / 4]),
        ]
    )
    return vals, grads


def quadrature_rule(name: str):
    """1D tensor-product factors: points and weights on [-1, 1]."""
    if name == "gauss2":
        g = 1.0 / np.sqrt(3.0)
        return np.array([-g, g]), np.array([1.0, 1.0])
    if name == "midpoint":
        return np.array([0.0]), np.array([2.0])
    raise ValueError(f"unknown quadrature rule {name!r}")


def _element_jacobian(corner_coords: np.ndarray, xi: float, eta: float):
    """J = [[x_xi, y_xi], [x_eta, y_eta]] of one element's bilinear map."""
    _, grads = shape_functions(xi, eta)
    # grads: (4, 2); corner_coords: (4, 2)
    return grads.T @ corner_coords  # (2, 2): rows d/dxi, d/deta


def jacobian_expansion(mesh: SubdomainMesh, element, xi: float, eta: float,
                       paper_determinant: bool = False):
    """J^(i,j), Jhat entries and |J| for one element at a Gauss point.

    The Jacobian is expanded from the three elements (0,0), (1,0), (0,1);
    the determinant is computed from the expanded entries (the additive
    determinant shortcut is available with ``paper_determinant=True`` but
    is exact only for translated element families).
    Returns (J, jhat_rows, det) where jhat_rows = (dxi/dx, deta/dx,
    dxi/dy, deta/dy).
    """
    i, j = element
    ne = mesh.n_elem
    if not (0 <= i < ne and 0 <= j < ne):
        raise ValueError(f"element ({i},{j}) out of range")
    j00 = _element_jacobian(mesh.element_corners(0, 0), xi, eta)
    if ne > 1:
        j10 = _element_jacobian(mesh.element_corners(1, 0), xi, eta)
        j01 = _element_jacobian(mesh.element_corners(0, 1), xi, eta)
    else:
        j10 = j01 = j00
    jac = j00 + i * (j10 - j00) + j * (j01 - j00)
    if paper_determinant:
        det = (
            np.linalg.det(j00)
            + i * np.linalg.det(j10 - j00)
            + j * np.linalg.det(j01 - j00)
        )
    else:
        det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    if det <= 0:
        raise ValueError(f"degenerate element ({i},{j}): |J| = {det}")
    x_xi, y_xi = jac[0]
    x_eta, y_eta = jac[1]
    jhat = (y_eta / det, -y_xi / det, -x_eta / det, x_xi / det)
    return jac, jhat, det


def _expansion_coefficients(mesh: SubdomainMesh, xi: float, eta: float):
    """J00, (J10-J00), (J01-J00) at a fixed reference point."""
    j00 = _element_jacobian(mesh.element_corners(0, 0), xi, eta)
    if mesh.n_elem > 1:
        dj10 = _element_jacobian(mesh.element_corners(1, 0), xi, eta) - j00
        dj01 = _element_jacobian(mesh.element_corners(0, 1), xi, eta) - j00
    else:
        dj10 = dj01 = np.zeros((2, 2))
    return j00, dj10, dj01


def _grid_jacobians(mesh, xi, eta, paper_determinant=False):
    """Jacobian entries over the whole element grid at one Gauss point.

    Returns (x_xi, y_xi, x_eta, y_eta, det), each of shape (ne, ne)
    indexed by (i, j).
    """
    ne = mesh.n_elem
    j00, dj10, dj01 = _expansion_coefficients(mesh, xi, eta)
    ii, jj = np.meshgrid(
        np.arange(ne, dtype=np.float64),
        np.arange(ne, dtype=np.float64),
        indexing="ij",
    )
    ent = [
        j00[a, b] + ii * dj10[a, b] + jj * dj01[a, b]
        for a, b in ((0, 0), (0, 1), (1, 0), (1, 1))
    ]
    x_xi, y_xi, x_eta, y_eta = ent
    if paper_determinant:
        det = (
            np.linalg.det(j00)
            + ii * np.linalg.det(dj10)
            + jj * np.linalg.det(dj01)
        )
    else:
        det = x_xi * y_eta - y_xi * x_eta
    if np.any(det <= 0):
        raise ValueError("degenerate element in subdomain grid")
    return x_xi, y_xi, x_eta, y_eta, det


def _corner_index(c) -> int:
    try:
        return CORNERS.index(tuple(c))
    except ValueError:
        raise ValueError(f"unknown reference corner {c!r}") from None


def element_stiffness_block(
    mesh: SubdomainMesh,
    material: MaterialModel,
    c1,
    c2,
    quadrature: str = "gauss2",
    paper_determinant: bool = False,
) -> np.ndarray:
    """Grid of 2x2 stiffness couplings K_{c1,c2} over all elements.

    Entry [i, j] couples the c1-corner DOFs with the c2-corner DOFs of
    element (i, j):  sum_g W_g B_c1^T C B_c2 |J|.
    """
    k1, k2 = _corner_index(c1), _corner_index(c2)
    cmat = material.C
    pts, wts = quadrature_rule(quadrature)
    ne = mesh.n_elem
    out = np.zeros((ne, ne, 2, 2))
    for gx, wx in zip(pts, wts):
        for gy, wy in zip(pts, wts):
            _, grads = shape_functions(gx, gy)
            x_xi, y_xi, x_eta, y_eta, det = _grid_jacobians(
                mesh, gx, gy, paper_determinant
            )
            w = wx * wy
            gxs, gys = [], []
            for k in (k1, k2):
                dxi, deta = grads[k]
                gxs.append((dxi * y_eta - deta * y_xi) / det)
                gys.append((-dxi * x_eta + deta * x_xi) / det)
            c11, c12, c22, c33 = cmat[0, 0], cmat[0, 1], cmat[1, 1], cmat[2, 2]
            out[:, :, 0, 0] += w * det * (c11 * gxs[0] * gxs[1] + c33 * gys[0] * gys[1])
            out[:, :, 0, 1] += w * det * (c12 * gxs[0] * gys[1] + c33 * gys[0] * gxs[1])
            out[:, :, 1, 0] += w * det * (c12 * gys[0] * gxs[1] + c33 * gxs[0] * gys[1])
            out[:, :, 1, 1] += w * det * (c22 * gys[0] * gys[1] + c33 * gxs[0] * gxs[1])
    return out


def element_load_block(
    mesh: SubdomainMesh, c1, c2, quadrature: str = "gauss2",
    paper_determinant: bool = False,
) -> np.ndarray:
    """Grid of scalar load weights G_{c1,c2} = sum_g W_g Phi_c1 Phi_c2 |J|."""
    k1, k2 = _corner_index(c1), _corner_index(c2)
    pts, wts = quadrature_rule(quadrature)
    ne = mesh.n_elem
    out = np.zeros((ne, ne))
    for gx, wx in zip(pts, wts):
        for gy, wy in zip(pts, wts):
            vals, _ = shape_functions(gx, gy)
            det = _grid_jacobians(mesh, gx, gy, paper_determinant)[4]
            out += wx * wy * vals[k1] * vals[k2] * det
    return out


def stiffness_value_grids(
    mesh: SubdomainMesh,
    material: MaterialModel,
    quadrature: str = "gauss2",
    paper_determinant: bool = False,
) -> dict:
    """All sixteen (c1, c2) stiffness grids keyed by corner index pair."""
    return {
        (a, b): element_stiffness_block(
            mesh, material, CORNERS[a], CORNERS[b], quadrature, paper_determinant
        )
        for a in range(4)
        for b in range(4)
    }


def load_value_grid(
    mesh: SubdomainMesh, quadrature: str = "gauss2",
    paper_determinant: bool = False,
) -> dict:
    return {
        (a, b): element_load_block(
            mesh, CORNERS[a], CORNERS[b], quadrature, paper_determinant
        )
        for a in range(4)
        for b in range(4)
    }


def traction_load(mesh: SubdomainMesh, side: str, traction) -> np.ndarray:
    """Consistent nodal forces of a constant traction on one side.

    Linear edge shape functions give t*h per interior node and t*h/2 at
    the two side ends.  Returns an (n, n, 2) grid over nodes (i, j).
    """
    if side not in mesh.tractions and traction is None:
        raise ValueError(f"side {side!r} carries no traction")
    tvec = np.asarray(
        mesh.tractions[side] if traction is None else traction, dtype=np.float64
    )
    n = mesh.n_side
    h = mesh.side_length(side) / mesh.n_elem
    weights = np.full(n, h)
    weights[0] = weights[-1] = h / 2
    out = np.zeros((n, n, 2))
    si, sj = mesh.side_node_indices(side)
    out[si, sj, 0] = weights * tvec[0]
    out[si, sj, 1] = weights * tvec[1]
    return out
