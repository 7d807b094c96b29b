"""Bilinear quadrilateral subdomains with structured 2^d x 2^d node grids.

A subdomain is defined by four corner points in counterclockwise order
(bottom-left, bottom-right, top-right, top-left in the local frame) and
a level d.  Nodes sit on the uniform (2^d x 2^d) parametric lattice of
the bilinear corner map, giving (2^d - 1)^2 elements.  Sides are named
"left" (first grid direction = 0), "right", "bottom", "top" and carry a
constraint tag plus an optional traction vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["SubdomainMesh", "SIDES", "CONSTRAINT_TAGS"]

SIDES = ("left", "right", "bottom", "top")
CONSTRAINT_TAGS = ("free", "roller-x", "roller-y", "clamped")


@dataclass(frozen=True)
class SubdomainMesh:
    corners: np.ndarray  # (4, 2), CCW from bottom-left
    d: int
    tags: dict = field(default_factory=dict)  # side -> constraint tag
    tractions: dict = field(default_factory=dict)  # side -> (tx, ty)

    def __post_init__(self):
        corners = np.asarray(self.corners, dtype=np.float64)
        if corners.shape != (4, 2):
            raise ValueError("need four corner points")
        object.__setattr__(self, "corners", corners)
        if self.d < 1:
            raise ValueError("level d must be >= 1")
        for side, tag in self.tags.items():
            if side not in SIDES:
                raise ValueError(f"unknown side {side!r}")
            if tag not in CONSTRAINT_TAGS:
                raise ValueError(f"unknown constraint tag {tag!r}")
        for side in self.tractions:
            if side not in SIDES:
                raise ValueError(f"unknown side {side!r}")
        x, y = corners[:, 0], corners[:, 1]
        area2 = np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
        if area2 <= 0:
            raise ValueError("corners must be in counterclockwise order")

    @property
    def n_side(self) -> int:
        """Nodes per side."""
        return 1 << self.d

    @property
    def n_elem(self) -> int:
        """Elements per side."""
        return (1 << self.d) - 1

    def tag(self, side: str) -> str:
        return self.tags.get(side, "free")

    def map_point(self, s, t):
        """Bilinear map from the unit parameter square to physical space."""
        s = np.asarray(s, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        w = [
            (1 - s) * (1 - t),
            s * (1 - t),
            s * t,
            (1 - s) * t,
        ]
        x = sum(wk * ck for wk, ck in zip(w, self.corners[:, 0]))
        y = sum(wk * ck for wk, ck in zip(w, self.corners[:, 1]))
        return np.stack(np.broadcast_arrays(x, y), axis=-1)

    def node_coords(self) -> np.ndarray:
        """(n, n, 2) array of node positions indexed by (i, j)."""
        n = self.n_side
        u = np.arange(n) / self.n_elem
        s, t = np.meshgrid(u, u, indexing="ij")
        return self.map_point(s, t)

    def element_corners(self, i: int, j: int) -> np.ndarray:
        """Physical corner coordinates of element (i, j), CCW."""
        ne = self.n_elem
        if not (0 <= i < ne and 0 <= j < ne):
            raise ValueError(f"element ({i},{j}) out of range for d={self.d}")
        h = 1.0 / ne
        params = [
            (i * h, j * h),
            ((i + 1) * h, j * h),
            ((i + 1) * h, (j + 1) * h),
            (i * h, (j + 1) * h),
        ]
        return np.array([self.map_point(s, t) for s, t in params])

    def side_node_indices(self, side: str):
        """(i, j) index arrays of the nodes along one side, in side order."""
        n = self.n_side
        k = np.arange(n)
        last = n - 1
        if side == "left":
            return np.zeros(n, dtype=int), k
        if side == "right":
            return np.full(n, last), k
        if side == "bottom":
            return k, np.zeros(n, dtype=int)
        if side == "top":
            return k, np.full(n, last)
        raise ValueError(f"unknown side {side!r}")

    def side_endpoints(self, side: str) -> np.ndarray:
        c = self.corners
        ends = {
            "left": (c[0], c[3]),
            "right": (c[1], c[2]),
            "bottom": (c[0], c[1]),
            "top": (c[3], c[2]),
        }
        return np.array(ends[side])

    def side_length(self, side: str) -> float:
        a, b = self.side_endpoints(side)
        return float(np.linalg.norm(b - a))

    def is_parallelogram(self, tol: float = 1e-12) -> bool:
        """True when the corner map is affine (constant Jacobian)."""
        c = self.corners
        scale = max(np.abs(c).max(), 1.0)
        return np.allclose(c[0] + c[2], c[1] + c[3], atol=tol * scale)

    def diameter(self) -> float:
        c = self.corners
        return float(
            max(np.linalg.norm(c[i] - c[j]) for i in range(4) for j in range(i))
        )
