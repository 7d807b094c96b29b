"""Subdomain adjacency: which nodes of which subdomains coincide.

Interfaces are detected from physical corner coordinates, never from
index conventions: two straight sides coincide when their endpoints
match (possibly reversed).  A side interface may be restricted to a
fraction of the side (a partially tied interface models a notch or
crack: the untied duplicated nodes become free crack faces).  Pairs of
subdomains that share only a corner point are tied through point
interfaces.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mesh import SubdomainMesh

__all__ = ["SideInterface", "PointInterface", "DomainTopology"]


@dataclass(frozen=True)
class SideInterface:
    m: int
    side_m: str
    p: int
    side_p: str
    reversed: bool = False
    tie_lo: float = 0.0  # tied fraction range along side_m
    tie_hi: float = 1.0


@dataclass(frozen=True)
class PointInterface:
    m: int
    node_m: tuple  # (i, j) in subdomain m
    p: int
    node_p: tuple


@dataclass
class DomainTopology:
    subdomains: list
    interfaces: list = field(default_factory=list)
    point_interfaces: list = field(default_factory=list)

    @property
    def q(self) -> int:
        return len(self.subdomains)

    @property
    def d(self) -> int:
        return self.subdomains[0].d

    def diameter(self) -> float:
        return max(s.diameter() for s in self.subdomains)

    @classmethod
    def from_subdomains(cls, subdomains, tie_overrides=None, tol=1e-12):
        """Detect side and corner coincidences from corner coordinates.

        ``tie_overrides`` maps a pair (m, p) with m < p to a (lo, hi)
        fraction range along the shared side of subdomain m; node pairs
        outside the range stay duplicated (crack faces).
        """
        subdomains = list(subdomains)
        if len({s.d for s in subdomains}) > 1:
            raise ValueError("all subdomains must share the same level d")
        tie_overrides = dict(tie_overrides or {})
        scale = max(s.diameter() for s in subdomains)
        atol = tol * scale
        interfaces = []
        points = []
        for m in range(len(subdomains)):
            for p in range(m + 1, len(subdomains)):
                rec = cls._match_sides(subdomains, m, p, atol)
                if rec is not None:
                    lo, hi = tie_overrides.pop((m, p), (0.0, 1.0))
                    interfaces.append(
                        SideInterface(
                            rec[0], rec[1], rec[2], rec[3], rec[4], lo, hi
                        )
                    )
                    continue
                pt = cls._match_corner(subdomains, m, p, atol)
                if pt is not None:
                    points.append(pt)
        if tie_overrides:
            raise ValueError(
                f"tie override given for non-adjacent pair(s): "
                f"{sorted(tie_overrides)}"
            )
        return cls(subdomains, interfaces, points)

    @staticmethod
    def _match_sides(subdomains, m, p, atol):
        sm, sp = subdomains[m], subdomains[p]
        for side_m in ("left", "right", "bottom", "top"):
            a, b = sm.side_endpoints(side_m)
            for side_p in ("left", "right", "bottom", "top"):
                c, e = sp.side_endpoints(side_p)
                if np.allclose(a, c, atol=atol) and np.allclose(b, e, atol=atol):
                    return (m, side_m, p, side_p, False)
                if np.allclose(a, e, atol=atol) and np.allclose(b, c, atol=atol):
                    return (m, side_m, p, side_p, True)
        return None

    @staticmethod
    def _match_corner(subdomains, m, p, atol):
        sm, sp = subdomains[m], subdomains[p]
        n = sm.n_side
        corner_nodes = ((0, 0), (n - 1, 0), (n - 1, n - 1), (0, n - 1))
        for km, cm in enumerate(sm.corners):
            for kp, cp in enumerate(sp.corners):
                if np.allclose(cm, cp, atol=atol):
                    return PointInterface(
                        m, corner_nodes[km], p, corner_nodes[kp]
                    )
        return None

    def _check_conforming(self, rec: SideInterface, tol=1e-12):
        sm = self.subdomains[rec.m]
        sp = self.subdomains[rec.p]
        im, jm = sm.side_node_indices(rec.side_m)
        ip, jp = sp.side_node_indices(rec.side_p)
        if rec.reversed:
            ip, jp = ip[::-1], jp[::-1]
        cm = sm.node_coords()[im, jm]
        cp = sp.node_coords()[ip, jp]
        if not np.allclose(cm, cp, atol=tol * self.diameter()):
            raise ValueError(
                f"non-conforming interface between subdomains {rec.m} and "
                f"{rec.p}: node coordinates mismatch"
            )

    def tied_side_pairs(self, rec: SideInterface):
        """Index arrays ((i,j) of m, (i,j) of p) of the tied node pairs."""
        self._check_conforming(rec)
        sm = self.subdomains[rec.m]
        n = sm.n_side
        im, jm = sm.side_node_indices(rec.side_m)
        ip, jp = self.subdomains[rec.p].side_node_indices(rec.side_p)
        if rec.reversed:
            ip, jp = ip[::-1].copy(), jp[::-1].copy()
        u = np.arange(n) / (n - 1)
        tied = (u >= rec.tie_lo - 1e-12) & (u <= rec.tie_hi + 1e-12)
        return (im[tied], jm[tied]), (ip[tied], jp[tied])

    def all_tied_pairs(self):
        """Every tied ((m, i, j), (p, i, j)) node pair, points included."""
        out = []
        for rec in self.interfaces:
            (im, jm), (ip, jp) = self.tied_side_pairs(rec)
            for a, b, c, e in zip(im, jm, ip, jp):
                out.append(((rec.m, int(a), int(b)), (rec.p, int(c), int(e))))
        for rec in self.point_interfaces:
            out.append(
                ((rec.m, rec.node_m[0], rec.node_m[1]),
                 (rec.p, rec.node_p[0], rec.node_p[1]))
            )
        return out

    def partner_records(self, m: int):
        """Interface records involving subdomain m, both orientations."""
        out = []
        for rec in self.interfaces:
            if rec.m == m:
                out.append(("side", rec, False))
            elif rec.p == m:
                out.append(("side", rec, True))
        for rec in self.point_interfaces:
            if rec.m == m:
                out.append(("point", rec, False))
            elif rec.p == m:
                out.append(("point", rec, True))
        return out
