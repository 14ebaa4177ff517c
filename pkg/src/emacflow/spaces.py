"""Continuous Lagrange spaces on triangles and the Taylor-Hood pair.

Velocity uses order k >= 2, pressure order k-1, and one scalar Lagrange
multiplier enforces the zero-mean pressure constraint. The global layout
of a mixed coefficient vector is [u_x | u_y | p | lambda].
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class SpaceError(Exception):
    pass


@lru_cache(maxsize=None)
def reference_nodes(k):
    """Lattice nodes of P_k on the reference triangle in canonical order:
    vertices, then edge nodes per edge (0,1), (1,2), (2,0) walking from the
    first to the second vertex, then interior nodes lexicographically.

    Returns (nodes_xy, kinds) where kinds[i] is ('v', vertex), ('e', edge,
    position 1..k-1) or ('i', counter).
    """
    verts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    nodes = [np.array(v) for v in verts]
    kinds = [("v", 0), ("v", 1), ("v", 2)]
    edges = [(0, 1), (1, 2), (2, 0)]
    for e, (p, q) in enumerate(edges):
        for m in range(1, k):
            t = m / k
            nodes.append((1 - t) * np.array(verts[p]) + t * np.array(verts[q]))
            kinds.append(("e", e, m))
    count = 0
    for i1 in range(1, k):
        for i2 in range(1, k - i1):
            nodes.append(np.array([i1 / k, i2 / k]))
            kinds.append(("i", count))
            count += 1
    return np.array(nodes), kinds


def _monomial_exponents(k):
    return [(a, bb) for deg in range(k + 1) for a in range(deg, -1, -1) for bb in [deg - a]]


@lru_cache(maxsize=None)
def _basis_coefficients(k):
    nodes, _ = reference_nodes(k)
    expo = _monomial_exponents(k)
    V = np.empty((len(nodes), len(expo)))
    for m, (a, bb) in enumerate(expo):
        V[:, m] = nodes[:, 0] ** a * nodes[:, 1] ** bb
    return np.linalg.inv(V)


def tabulate_basis(k, points_xy):
    """Values and reference gradients of the P_k basis at given points.

    Returns (phi [nq, nbf], dphi [nq, nbf, 2]).
    """
    C = _basis_coefficients(k)
    expo = _monomial_exponents(k)
    pts = np.atleast_2d(points_xy)
    x, y = pts[:, 0], pts[:, 1]
    P = np.empty((len(pts), len(expo)))
    Dx = np.zeros_like(P)
    Dy = np.zeros_like(P)
    for m, (a, bb) in enumerate(expo):
        P[:, m] = x ** a * y ** bb
        if a > 0:
            Dx[:, m] = a * x ** (a - 1) * y ** bb
        if bb > 0:
            Dy[:, m] = bb * x ** a * y ** (bb - 1)
    phi = P @ C
    dphi = np.stack([Dx @ C, Dy @ C], axis=-1)
    return phi, dphi


def mesh_geometry(mesh):
    """Affine geometry per triangle: (invJT [nt,2,2], detJ [nt])."""
    v = mesh.vertices
    t = mesh.triangles
    J = np.empty((len(t), 2, 2))
    J[:, :, 0] = v[t[:, 1]] - v[t[:, 0]]
    J[:, :, 1] = v[t[:, 2]] - v[t[:, 0]]
    detJ = J[:, 0, 0] * J[:, 1, 1] - J[:, 0, 1] * J[:, 1, 0]
    invJT = np.empty_like(J)
    invJT[:, 0, 0] = J[:, 1, 1] / detJ
    invJT[:, 0, 1] = -J[:, 1, 0] / detJ
    invJT[:, 1, 0] = -J[:, 0, 1] / detJ
    invJT[:, 1, 1] = J[:, 0, 0] / detJ
    return invJT, detJ


class ScalarSpace:
    """Continuous P_k space with a global dof map.

    Dof numbering: vertex dofs first, then k-1 dofs per mesh edge (ordered
    from the lower-index vertex), then interior dofs per triangle.
    """

    def __init__(self, mesh, k):
        if k < 1:
            raise SpaceError("polynomial order must be >= 1")
        self.mesh = mesh
        self.k = k
        self.nbf = (k + 1) * (k + 2) // 2

        edges = mesh.edges()
        edge_index = {(int(a), int(b)): i for i, (a, b) in enumerate(edges)}
        nv = mesh.num_vertices
        ne = len(edges)
        nt = mesh.num_triangles
        n_int = (k - 1) * (k - 2) // 2
        self.ndof = nv + (k - 1) * ne + n_int * nt

        ref_nodes, kinds = reference_nodes(k)
        tri = mesh.triangles
        cell_dofs = np.empty((nt, self.nbf), dtype=np.int64)
        local_edges = [(0, 1), (1, 2), (2, 0)]
        for t in range(nt):
            g = tri[t]
            for li, kind in enumerate(kinds):
                if kind[0] == "v":
                    cell_dofs[t, li] = g[kind[1]]
                elif kind[0] == "e":
                    p, q = local_edges[kind[1]]
                    gp, gq = int(g[p]), int(g[q])
                    m = kind[2]
                    if gp < gq:
                        e = edge_index[(gp, gq)]
                        pos = m
                    else:
                        e = edge_index[(gq, gp)]
                        pos = k - m
                    cell_dofs[t, li] = nv + e * (k - 1) + (pos - 1)
                else:
                    cell_dofs[t, li] = nv + ne * (k - 1) + t * n_int + kind[1]
        self.cell_dofs = cell_dofs

        # nodal coordinates per dof (identical from every adjacent triangle)
        coords = np.empty((self.ndof, 2))
        v = mesh.vertices
        for t in range(nt):
            g = tri[t]
            a = v[g[0]]
            J = np.column_stack([v[g[1]] - a, v[g[2]] - a])
            phys = ref_nodes @ J.T + a
            coords[cell_dofs[t]] = phys
        self.dof_coords = coords

        # boundary dofs per tag
        self.boundary_dofs = {}
        for (a, bb), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
            a, bb = int(min(a, bb)), int(max(a, bb))
            dofs = self.boundary_dofs.setdefault(tag, set())
            dofs.add(a)
            dofs.add(bb)
            e = edge_index[(a, bb)]
            for m in range(k - 1):
                dofs.add(nv + e * (k - 1) + m)
        self.boundary_dofs = {
            tag: np.array(sorted(d), dtype=np.int64) for tag, d in self.boundary_dofs.items()
        }

    def tabulate(self, points_xy):
        return tabulate_basis(self.k, points_xy)

    def interpolate(self, fn):
        """Nodal Lagrange interpolation of fn(x, y)."""
        x, y = self.dof_coords[:, 0], self.dof_coords[:, 1]
        vals = np.asarray(fn(x, y), dtype=float)
        if vals.shape != x.shape:
            vals = np.array([fn(xi, yi) for xi, yi in self.dof_coords], dtype=float)
        if not np.all(np.isfinite(vals)):
            raise SpaceError("interpolated function not finite at all nodes")
        return vals


class MixedSpace:
    """Taylor-Hood pair plus the scalar pressure-mean multiplier."""

    def __init__(self, mesh, k):
        if k < 2:
            raise SpaceError(
                f"Taylor-Hood requires velocity order k >= 2, got k={k} "
                "(pressure order k-1 must remain continuous)"
            )
        self.mesh = mesh
        self.k = k
        self.velocity = ScalarSpace(mesh, k)
        self.pressure = ScalarSpace(mesh, k - 1)
        self.n_u = self.velocity.ndof
        self.n_p = self.pressure.ndof
        self.total = 2 * self.n_u + self.n_p + 1
        self.ux = slice(0, self.n_u)
        self.uy = slice(self.n_u, 2 * self.n_u)
        self.p = slice(2 * self.n_u, 2 * self.n_u + self.n_p)
        self.lam = self.total - 1

    def velocity_part(self, vec):
        return vec[: 2 * self.n_u]

    def pressure_part(self, vec):
        return vec[self.p]

    def interpolate_velocity(self, fx, fy):
        out = np.zeros(self.total)
        out[self.ux] = self.velocity.interpolate(fx)
        out[self.uy] = self.velocity.interpolate(fy)
        return out


def make_mixed_space(mesh, k):
    if k not in (2, 3, 4):
        raise SpaceError(f"supported velocity orders are 2, 3, 4; got {k}")
    return MixedSpace(mesh, k)


def interpolate(space, fn):
    return space.interpolate(fn)


@dataclass
class DirichletData:
    """Velocity boundary data per tag: tag -> g(x, y) returning (gx, gy)."""

    values: dict

    def constraints(self, space: MixedSpace):
        """Constrained mixed-layout dof indices and their values."""
        present = set(space.mesh.boundary_tags)
        idx = []
        vals = []
        for tag, g in self.values.items():
            if tag not in present:
                raise SpaceError(f"boundary tag {tag!r} not present in mesh "
                                 f"(available: {sorted(present)})")
            dofs = space.velocity.boundary_dofs[tag]
            xy = space.velocity.dof_coords[dofs]
            gx, gy = _eval_bc(g, xy)
            idx.append(dofs)
            vals.append(gx)
            idx.append(dofs + space.n_u)
            vals.append(gy)
        if not idx:
            return np.empty(0, dtype=np.int64), np.empty(0)
        idx = np.concatenate(idx)
        vals = np.concatenate(vals)
        order = np.argsort(idx, kind="stable")
        idx = idx[order]
        vals = vals[order]
        # a dof shared by two tags must get one value; last write wins is
        # ambiguous, keep the first and require consistency
        keep = np.concatenate([[True], np.diff(idx) > 0])
        return idx[keep], vals[keep]


def _eval_bc(g, xy):
    x, y = xy[:, 0], xy[:, 1]
    try:
        gx, gy = g(x, y)
        gx = np.broadcast_to(np.asarray(gx, dtype=float), x.shape).copy()
        gy = np.broadcast_to(np.asarray(gy, dtype=float), x.shape).copy()
    except Exception:
        vals = np.array([g(xi, yi) for xi, yi in xy], dtype=float)
        gx, gy = vals[:, 0], vals[:, 1]
    return gx, gy
