"""Nested uniform triangulations of the unit square and node-centred patches.

Each square cell is split along its lower-left -> upper-right diagonal, so a
grid of level ``L`` has ``(2**L + 1)**2`` nodes and ``2 * 4**L`` triangles.
Nodes are numbered row-major, ``index = j * (n + 1) + i`` for ``(x, y) =
(i / n, j / n)``.

Linear systems only carry interior (free) nodes. Their unknowns are stacked
as all ``(u_x, u_y)`` pairs first, interleaved per free node, followed by
all temperatures::

    [ux_0, uy_0, ux_1, uy_1, ..., theta_0, theta_1, ...]

The same layout is used on the coarse grid for multiscale coefficients.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

MAX_LEVEL = 10


@dataclass(frozen=True, eq=False)
class TriMesh:
    level: int
    nodes: np.ndarray
    triangles: np.ndarray
    interior: np.ndarray

    @property
    def n(self) -> int:
        return 2 ** self.level

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def mesh_size(self) -> float:
        return np.sqrt(2.0) * 2.0 ** (-self.level)

    @cached_property
    def free_nodes(self) -> np.ndarray:
        """Global indices of interior nodes, in increasing order."""
        return np.flatnonzero(self.interior)

    @cached_property
    def free_position(self) -> np.ndarray:
        """Map global node index -> position among free nodes (-1 on the boundary)."""
        pos = np.full(self.n_nodes, -1, dtype=np.int64)
        pos[self.free_nodes] = np.arange(self.free_nodes.size)
        return pos

    @property
    def n_free(self) -> int:
        return self.free_nodes.size

    @property
    def n_u(self) -> int:
        return 2 * self.n_free

    @property
    def n_dofs(self) -> int:
        return 3 * self.n_free

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.triangles].mean(axis=1)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Boolean triangle-by-node incidence matrix."""
        rows = np.repeat(np.arange(self.n_triangles), 3)
        data = np.ones(rows.size, dtype=np.int8)
        return sp.csr_matrix((data, (rows, self.triangles.ravel())),
                             shape=(self.n_triangles, self.n_nodes))

    def system_dofs(self, free_pos: np.ndarray, components=(0, 1, 2)) -> np.ndarray:
        """System indices of the requested components for free nodes ``free_pos``.

        Returned in block order: all u_x/u_y (interleaved) first, then theta.
        """
        free_pos = np.asarray(free_pos, dtype=np.int64)
        out = []
        u_comps = [c for c in components if c < 2]
        if u_comps:
            u = np.stack([2 * free_pos + c for c in u_comps], axis=1).ravel()
            out.append(u)
        if 2 in components:
            out.append(self.n_u + free_pos)
        return np.concatenate(out) if out else np.empty(0, dtype=np.int64)

    def dof_component(self) -> np.ndarray:
        """Component label (0=u_x, 1=u_y, 2=theta) of every system dof."""
        comp = np.empty(self.n_dofs, dtype=np.int8)
        comp[0:self.n_u:2] = 0
        comp[1:self.n_u:2] = 1
        comp[self.n_u:] = 2
        return comp

    def dof_node(self) -> np.ndarray:
        """Free-node position owning every system dof."""
        free = np.arange(self.n_free)
        return np.concatenate([np.repeat(free, 2), free])


def unit_square_mesh(level: int) -> TriMesh:
    n = 2 ** level
    xs = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(xs, xs)
    nodes = np.column_stack([X.ravel(), Y.ravel()])

    i, j = np.meshgrid(np.arange(n), np.arange(n))
    i, j = i.ravel(), j.ravel()
    ll = j * (n + 1) + i
    lr = ll + 1
    ul = ll + (n + 1)
    ur = ul + 1
    # cell-major: lower-right triangle then upper-left triangle
    tri = np.empty((2 * n * n, 3), dtype=np.int64)
    tri[0::2] = np.column_stack([ll, lr, ur])
    tri[1::2] = np.column_stack([ll, ur, ul])

    ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1))
    interior = ((ii > 0) & (ii < n) & (jj > 0) & (jj < n)).ravel()
    return TriMesh(level=level, nodes=nodes, triangles=tri, interior=interior)


def _locate_triangle(level: int, points: np.ndarray) -> np.ndarray:
    """Index of the triangle containing each point strictly inside a triangle."""
    n = 2 ** level
    s = points * n
    ci = np.clip(np.floor(s[:, 0]).astype(np.int64), 0, n - 1)
    cj = np.clip(np.floor(s[:, 1]).astype(np.int64), 0, n - 1)
    lx = s[:, 0] - ci
    ly = s[:, 1] - cj
    upper = (ly > lx).astype(np.int64)
    return 2 * (cj * n + ci) + upper


@dataclass(frozen=True, eq=False)
class NestedGrid:
    fine: TriMesh
    coarse: TriMesh
    fine_to_coarse: np.ndarray
    coarse_to_fine: np.ndarray = field(repr=False)

    @property
    def fine_level(self) -> int:
        return self.fine.level

    @property
    def coarse_level(self) -> int:
        return self.coarse.level

    @property
    def h(self) -> float:
        return self.fine.mesh_size

    @property
    def H(self) -> float:
        return self.coarse.mesh_size

    @cached_property
    def prolongation(self) -> sp.csr_matrix:
        """Values of every coarse hat function at every fine node (fine x coarse)."""
        fine, coarse = self.fine, self.coarse
        rows, cols, vals = [], [], []
        for ct in range(coarse.n_triangles):
            verts = coarse.nodes[coarse.triangles[ct]]
            fnodes = np.unique(fine.triangles[self.coarse_to_fine[ct]])
            bary = _barycentric(verts, fine.nodes[fnodes])
            for a in range(3):
                rows.append(fnodes)
                cols.append(np.full(fnodes.size, coarse.triangles[ct, a]))
                vals.append(bary[:, a])
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        # shared fine nodes are visited once per adjacent coarse triangle; keep one copy
        key = rows * coarse.n_nodes + cols
        _, first = np.unique(key, return_index=True)
        keep = first[np.abs(vals[first]) > 1e-14]
        return sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                             shape=(fine.n_nodes, coarse.n_nodes))

    def dof_map(self) -> np.ndarray:
        """Node-major global dof numbering ``3 * node + component`` for the fine grid.

        Returns an ``(n_nodes, 3)`` array of system indices, ``-1`` for Dirichlet dofs.
        """
        pos = self.fine.free_position
        out = np.full((self.fine.n_nodes, 3), -1, dtype=np.int64)
        free = pos >= 0
        out[free, 0] = 2 * pos[free]
        out[free, 1] = 2 * pos[free] + 1
        out[free, 2] = self.fine.n_u + pos[free]
        return out


def _barycentric(verts: np.ndarray, pts: np.ndarray) -> np.ndarray:
    T = np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])
    lam12 = np.linalg.solve(T, (pts - verts[0]).T).T
    bary = np.column_stack([1.0 - lam12.sum(axis=1), lam12])
    bary[np.abs(bary) < 1e-14] = 0.0
    return bary


def build_nested_grid(fine_level: int, coarse_level: int) -> NestedGrid:
    if not (1 <= coarse_level <= fine_level <= MAX_LEVEL):
        raise ValueError(
            f"need 1 <= coarse_level <= fine_level <= {MAX_LEVEL}, "
            f"got coarse_level={coarse_level}, fine_level={fine_level}")
    fine = unit_square_mesh(fine_level)
    coarse = unit_square_mesh(coarse_level)
    f2c = _locate_triangle(coarse_level, fine.centroids)
    order = np.argsort(f2c, kind="stable")
    per = 4 ** (fine_level - coarse_level)
    c2f = order.reshape(coarse.n_triangles, per)
    return NestedGrid(fine=fine, coarse=coarse, fine_to_coarse=f2c, coarse_to_fine=c2f)


@dataclass(frozen=True, eq=False)
class Patch:
    """Node-centred patch ``k`` layers around coarse node ``center_node``.

    ``fine_nodes`` are free-node positions on the fine grid lying strictly inside
    the patch; ``constrained_nodes`` are free coarse-node positions whose hat
    function support meets the patch.
    """
    center_node: int
    k: int
    coarse_elements: np.ndarray
    fine_nodes: np.ndarray
    constrained_nodes: np.ndarray
    fine_dofs: np.ndarray
    constrained_coarse_dofs: np.ndarray


def patch_elements(coarse: TriMesh, m: int, k: int) -> np.ndarray:
    inc = coarse.incidence
    elems = inc[:, m].toarray().ravel() > 0
    for _ in range(k):
        touched = (inc.T @ elems.astype(np.int64)) > 0
        elems = (inc @ touched.astype(np.int64)) > 0
    return np.flatnonzero(elems)


def node_patch(grid: NestedGrid, m: int, k: int) -> Patch:
    """Patch around global coarse node ``m`` after ``k`` dilations of its hat support."""
    coarse, fine = grid.coarse, grid.fine
    if not (0 <= m < coarse.n_nodes and coarse.interior[m]):
        raise ValueError(f"coarse node {m} is not an interior node")
    if k < 0:
        raise ValueError("k must be non-negative")
    elems = patch_elements(coarse, m, k)

    in_patch = np.zeros(coarse.n_triangles, dtype=bool)
    in_patch[elems] = True
    fine_mask = in_patch[grid.fine_to_coarse].astype(np.int64)
    inc = fine.incidence
    n_inside = inc.T @ fine_mask
    n_total = np.asarray(inc.sum(axis=0)).ravel()
    strict = (n_inside == n_total) & fine.interior
    fine_nodes = fine.free_position[np.flatnonzero(strict)]

    cnodes = np.unique(coarse.triangles[elems])
    cnodes = cnodes[coarse.interior[cnodes]]
    constrained = coarse.free_position[cnodes]

    return Patch(center_node=m, k=k, coarse_elements=elems,
                 fine_nodes=fine_nodes, constrained_nodes=constrained,
                 fine_dofs=fine.system_dofs(fine_nodes),
                 constrained_coarse_dofs=coarse.system_dofs(constrained))
