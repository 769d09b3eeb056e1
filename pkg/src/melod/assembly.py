"""P1 assembly of the thermoelastic block operators and loads.

All coefficients are constant per element, so every integral below is exact:
gradients are constant, ``int phi_i = |K| / 3`` and
``int phi_i phi_j = |K| (1 + delta_ij) / 12``.

Local displacement dofs of a triangle are ordered ``(ux0, uy0, ux1, uy1, ux2, uy2)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .coeffs import CoefficientField
from .grid import NestedGrid, TriMesh


def p1_gradients(mesh: TriMesh):
    """Constant gradients of the three barycentric functions, shape ``(T, 3, 2)``, and areas."""
    p = mesh.nodes[mesh.triangles]
    area = mesh.areas
    # grad lambda_i = rot(p_{i+2} - p_{i+1}) / (2 |K|)
    e = np.roll(p, -2, axis=1) - np.roll(p, -1, axis=1)
    grads = np.stack([-e[..., 1], e[..., 0]], axis=-1) / (2.0 * area[:, None, None])
    return grads, area


def strain_matrix(grads: np.ndarray) -> np.ndarray:
    """Voigt strain-displacement matrices ``(T, 3, 6)`` with engineering shear."""
    T = grads.shape[0]
    Bm = np.zeros((T, 3, 6))
    gx, gy = grads[..., 0], grads[..., 1]
    Bm[:, 0, 0::2] = gx
    Bm[:, 1, 1::2] = gy
    Bm[:, 2, 0::2] = gy
    Bm[:, 2, 1::2] = gx
    return Bm


def elasticity_elements(grads, area, lam, mu) -> np.ndarray:
    Bm = strain_matrix(grads)
    D = np.zeros((lam.size, 3, 3))
    D[:, 0, 0] = D[:, 1, 1] = lam + 2 * mu
    D[:, 0, 1] = D[:, 1, 0] = lam
    D[:, 2, 2] = mu
    return area[:, None, None] * np.einsum("tai,tab,tbj->tij", Bm, D, Bm)


def coupling_elements(grads, area, alpha) -> np.ndarray:
    """``int alpha * phi_theta_j * div(phi_u_i)`` as ``(T, 6, 3)``."""
    div = grads.reshape(grads.shape[0], 6)  # d/dx for ux dofs, d/dy for uy dofs
    return (alpha * area / 3.0)[:, None, None] * np.repeat(div[:, :, None], 3, axis=2)


def diffusion_elements(grads, area, kappa) -> np.ndarray:
    return (kappa * area)[:, None, None] * np.einsum("tid,tjd->tij", grads, grads)


_LOCAL_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


def mass_elements(area, weight=None) -> np.ndarray:
    w = area if weight is None else weight * area
    return w[:, None, None] * _LOCAL_MASS


def _scatter(local, rows, cols, shape) -> sp.csr_matrix:
    r = np.broadcast_to(rows[:, :, None], local.shape).ravel()
    c = np.broadcast_to(cols[:, None, :], local.shape).ravel()
    # coo -> csr sums duplicates in a fixed order
    return sp.coo_matrix((local.ravel(), (r, c)), shape=shape).tocsr()


def _u_local_dofs(tri):
    return np.stack([2 * tri[:, 0], 2 * tri[:, 0] + 1, 2 * tri[:, 1], 2 * tri[:, 1] + 1,
                     2 * tri[:, 2], 2 * tri[:, 2] + 1], axis=1)


@dataclass(frozen=True, eq=False)
class FullOperators:
    """Operators on all nodes, before Dirichlet elimination (u dofs interleaved)."""
    A1: sp.csr_matrix
    A2: sp.csr_matrix
    A4: sp.csr_matrix
    Mprime: sp.csr_matrix
    M: sp.csr_matrix


def assemble_full(mesh: TriMesh, cf: CoefficientField) -> FullOperators:
    grads, area = p1_gradients(mesh)
    tri = mesh.triangles
    nn = mesh.n_nodes
    udofs = _u_local_dofs(tri)
    A1 = _scatter(elasticity_elements(grads, area, cf.lam, cf.mu), udofs, udofs, (2 * nn, 2 * nn))
    A2 = _scatter(coupling_elements(grads, area, cf.alpha), udofs, tri, (2 * nn, nn))
    A4 = _scatter(diffusion_elements(grads, area, cf.kappa), tri, tri, (nn, nn))
    Mp = _scatter(mass_elements(area, cf.alpha), tri, tri, (nn, nn))
    M = _scatter(mass_elements(area), tri, tri, (nn, nn))
    return FullOperators(A1, A2, A4, Mp, M)


@dataclass(frozen=True, eq=False)
class BlockSystem:
    """Interior-dof operators.

    ``A1`` elasticity, ``A2`` coupling (u x theta) with ``A3 = A2.T``, ``A4``
    conduction, ``Mprime`` the alpha-weighted temperature mass and ``M`` the
    unweighted one (used for L2 norms).
    """
    A1: sp.csr_matrix
    A2: sp.csr_matrix
    A3: sp.csr_matrix
    A4: sp.csr_matrix
    Mprime: sp.csr_matrix
    M: sp.csr_matrix
    u_dofs: np.ndarray
    theta_dofs: np.ndarray

    @property
    def n_u(self) -> int:
        return self.A1.shape[0]

    @property
    def n_theta(self) -> int:
        return self.A4.shape[0]

    @property
    def n_dofs(self) -> int:
        return self.n_u + self.n_theta


def assemble_block_system(grid: NestedGrid | TriMesh, cf: CoefficientField) -> BlockSystem:
    """Assemble the fine-grid block operators with homogeneous Dirichlet dofs removed."""
    mesh = grid.fine if isinstance(grid, NestedGrid) else grid
    if cf.n_elements != mesh.n_triangles:
        raise ValueError(
            f"coefficient field has {cf.n_elements} elements, mesh has {mesh.n_triangles}")
    cf.check_positive(allow_zero_alpha=True)
    full = assemble_full(mesh, cf)
    free = mesh.free_nodes
    ufree = np.stack([2 * free, 2 * free + 1], axis=1).ravel()
    A1 = full.A1[ufree][:, ufree].tocsr()
    A2 = full.A2[ufree][:, free].tocsr()
    return BlockSystem(
        A1=A1, A2=A2, A3=A2.T.tocsr(),
        A4=full.A4[free][:, free].tocsr(),
        Mprime=full.Mprime[free][:, free].tocsr(),
        M=full.M[free][:, free].tocsr(),
        u_dofs=np.arange(2 * free.size),
        theta_dofs=2 * free.size + np.arange(free.size),
    )


@dataclass(frozen=True, eq=False)
class LoadVectors:
    F: np.ndarray
    G: np.ndarray


def nodal_weights(mesh: TriMesh) -> np.ndarray:
    """``int phi_i`` for every node: one third of the area of its support."""
    w = np.zeros(mesh.n_nodes)
    np.add.at(w, mesh.triangles.ravel(), np.repeat(mesh.areas / 3.0, 3))
    return w


def assemble_loads(grid: NestedGrid | TriMesh, f, g, t: float) -> LoadVectors:
    """Vertex-quadrature loads ``F_i = f(x_i) |supp phi_i| / 3`` on interior dofs.

    ``f(x, y, t)`` returns a pair ``(fx, fy)`` and ``g(x, y, t)`` an array, both
    evaluated at node coordinates.
    """
    mesh = grid.fine if isinstance(grid, NestedGrid) else grid
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    w = nodal_weights(mesh)
    free = mesh.free_nodes
    fx, fy = f(x, y, t)
    fx = np.broadcast_to(np.asarray(fx, dtype=float), x.shape)
    fy = np.broadcast_to(np.asarray(fy, dtype=float), x.shape)
    gv = np.broadcast_to(np.asarray(g(x, y, t), dtype=float), x.shape)
    F = np.empty(2 * free.size)
    F[0::2] = (w * fx)[free]
    F[1::2] = (w * fy)[free]
    return LoadVectors(F=F, G=(w * gv)[free])


def compose_time_operators(bs: BlockSystem, tau: float):
    """Backward-Euler matrices ``A = [[A1, -A2], [A3, M' + tau A4]]`` and ``B = [[0, 0], [A3, M']]``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    A = sp.bmat([[bs.A1, -bs.A2], [bs.A3, bs.Mprime + tau * bs.A4]], format="csc")
    Z_uu = sp.csr_matrix((bs.n_u, bs.n_u))
    Z_ut = sp.csr_matrix((bs.n_u, bs.n_theta))
    B = sp.bmat([[Z_uu, Z_ut], [bs.A3, bs.Mprime]], format="csr")
    return A, B


def total_load(loads: LoadVectors, tau: float) -> np.ndarray:
    return np.concatenate([loads.F, tau * loads.G])


def write_coo(path, mat) -> None:
    """Write ``row col value`` triplets, one per line, zero-based."""
    coo = sp.coo_matrix(mat)
    order = np.lexsort((coo.col, coo.row))
    with open(Path(path), "w") as fh:
        fh.write(f"% {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{r} {c} {float(v)!r}\n")
