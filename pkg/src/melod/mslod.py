"""Multiscale bases from patch-local saddle-point problems.

For each interior coarse node ``m`` and each component of that node, the
basis function ``psi`` solves, on the patch around ``m``::

    [ K    C ] [psi   ]   [ 0   ]
    [ C^T  0 ] [lambda] = [ e_j ]

where ``K`` is the operator restricted to fine dofs strictly inside the patch
and the columns of ``C`` are the functionals ``q_j(v) = (lambda_j, v_c)``
(the coarse hat ``lambda_j`` against the matching component ``c`` of ``v``)
for every coarse dof ``j`` whose hat support meets the patch.

Two flavours:

* ``lod``: displacement and temperature are corrected separately, with the
  elasticity form (``A1``) and the conduction form (``A4``).
* ``melod``: all three components are corrected together with the coupled
  operator ``K = [[A1, -g1 A2], [g2 A3, A4]]``, so every basis function is a
  full ``(u_x, u_y, theta)`` field.

``R`` stores one basis function per row (rows: coarse dofs, columns: fine dofs).
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import BlockSystem, mass_elements, _scatter
from .grid import NestedGrid, Patch, node_patch

log = logging.getLogger(__name__)

METHODS = ("lod", "melod")
NORMALIZATIONS = ("delta", "hat")

# constraint residual above which a patch solve is treated as broken
CONSTRAINT_FAIL_TOL = 1e-6


class CorrectorError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class CoupledOperator:
    gamma1: float
    gamma2: float
    K: sp.csr_matrix
    coupled: bool = True


def build_coupled_operator(bs: BlockSystem, gamma1: float = 1.0, gamma2: float = 1.0) -> CoupledOperator:
    """``K = [[A1, -gamma1 A2], [gamma2 A3, A4]]`` on interior fine dofs.

    The temperature row couples through ``gamma2 * b(u, v_theta)``.
    """
    for name, g in (("gamma1", gamma1), ("gamma2", gamma2)):
        if not 0 < g <= 1:
            raise ValueError(f"{name} must lie in (0, 1], got {g}")
    K = sp.bmat([[bs.A1, -gamma1 * bs.A2], [gamma2 * bs.A3, bs.A4]], format="csr")
    return CoupledOperator(gamma1, gamma2, K, coupled=True)


def build_decoupled_operator(bs: BlockSystem) -> CoupledOperator:
    """Block-diagonal ``[[A1, 0], [0, A4]]``; patch problems are split per field."""
    K = sp.block_diag([bs.A1, bs.A4], format="csr")
    return CoupledOperator(0.0, 0.0, K, coupled=False)


def hat_mass_matrix(grid: NestedGrid) -> sp.csr_matrix:
    """``P[j, i] = (lambda_j, phi_i)`` over free coarse nodes ``j`` and free fine nodes ``i``."""
    fine = grid.fine
    M = _scatter(mass_elements(fine.areas), fine.triangles, fine.triangles,
                 (fine.n_nodes, fine.n_nodes))
    P = (grid.prolongation.T @ M).tocsr()
    return P[grid.coarse.free_nodes][:, fine.free_nodes].tocsr()


def constraint_matrix(grid: NestedGrid) -> sp.csr_matrix:
    """All functionals ``q_j`` as rows over fine system dofs (coarse dofs x fine dofs)."""
    P = hat_mass_matrix(grid)
    return sp.block_diag([sp.kron(P, sp.eye(2)), P], format="csr")


def _patch_factors(K, Q, fdofs, cdofs, patch_desc, cache):
    """``Y = K_p^{-1} C`` and the LU of ``S = C^T Y`` for one patch.

    ``cache`` keeps the most recent patch: saturated patches share their dofs,
    so consecutive nodes reuse one factorization.
    """
    key = (fdofs.tobytes(), cdofs.tobytes())
    if cache is not None and cache.get("key") == key:
        return cache["val"]
    Kp = K[fdofs][:, fdofs].tocsc()
    C = Q[cdofs][:, fdofs].T.tocsc()
    nf, nc = C.shape
    if nf == 0:
        raise CorrectorError(f"patch {patch_desc} has no interior fine dofs")
    try:
        lu = spla.splu(Kp)
    except RuntimeError as exc:
        raise CorrectorError(f"singular patch operator on patch {patch_desc}") from exc
    Y = lu.solve(C.toarray())
    S = C.T @ Y
    sv = np.linalg.svd(S, compute_uv=False) if nc else np.ones(1)
    if nc and (not np.all(np.isfinite(sv)) or sv[-1] <= 1e-13 * sv[0]):
        raise CorrectorError(
            f"singular saddle-point system on patch {patch_desc} "
            f"({nf} fine dofs, {nc} constraints)")
    val = (C, Y, sla.lu_factor(S) if nc else None)
    if cache is not None:
        cache["key"], cache["val"] = key, val
    return val


def _solve_kkt(K, Q, fdofs, cdofs, targets, patch_desc="", QH=None, cache=None):
    """Solve the bordered system for each coarse dof in ``targets``.

    The constraint values are ``delta_jm`` or, when the coarse Gram matrix
    ``QH[j, m] = q_j(lambda_m)`` is given, ``q_j(lambda_m)``. The system is
    eliminated onto the multipliers: with ``Y = K_p^{-1} C`` and the small
    Schur complement ``S = C^T Y``, ``psi = Y S^{-1} r``. Returns the fine-dof
    values ``(len(targets), len(fdofs))`` and the largest constraint residual.
    """
    fdofs, cdofs = np.asarray(fdofs), np.asarray(cdofs)
    C, Y, S_lu = _patch_factors(K, Q, fdofs, cdofs, patch_desc, cache)
    nc = C.shape[1]
    if QH is None:
        where = {int(d): i for i, d in enumerate(cdofs)}
        r = np.zeros((nc, len(targets)))
        for col, t in enumerate(targets):
            r[where[int(t)], col] = 1.0
    else:
        r = QH[cdofs][:, targets].toarray()
    psi = (Y @ sla.lu_solve(S_lu, r)).T if nc else np.zeros((len(targets), Y.shape[0]))
    resid = C.T @ psi.T - r
    err = float(np.abs(resid).max()) if resid.size else 0.0
    if not np.all(np.isfinite(psi)) or err > CONSTRAINT_FAIL_TOL:
        raise CorrectorError(
            f"rank-deficient constraints on patch {patch_desc}: residual {err:.3e}")
    return psi, err


def _split(dofs, n_u):
    dofs = np.asarray(dofs)
    return dofs[dofs < n_u], dofs[dofs >= n_u]


def node_rows(op: CoupledOperator, Q, patch: Patch, targets, n_u_fine: int, n_u_coarse: int,
              QH=None, cache=None):
    """Basis functions for the coarse dofs ``targets`` of the patch's centre node.

    Returns a list of ``(target, fine_dofs, values)`` and the largest constraint residual.
    """
    desc = f"(centre node {patch.center_node}, k={patch.k})"
    out = []
    worst = 0.0
    if op.coupled:
        psi, err = _solve_kkt(op.K, Q, patch.fine_dofs, patch.constrained_coarse_dofs,
                              targets, desc, QH, cache)
        worst = max(worst, err)
        for t, row in zip(targets, psi):
            out.append((int(t), patch.fine_dofs, row))
        return out, worst
    cu_cache = ct_cache = None
    if cache is not None:
        cu_cache, ct_cache = cache.setdefault("u", {}), cache.setdefault("t", {})
    fu, ft = _split(patch.fine_dofs, n_u_fine)
    cu, ct = _split(patch.constrained_coarse_dofs, n_u_coarse)
    tu = [t for t in targets if t < n_u_coarse]
    tt = [t for t in targets if t >= n_u_coarse]
    if tu:
        psi, err = _solve_kkt(op.K, Q, fu, cu, tu, desc, QH, cu_cache)
        worst = max(worst, err)
        out.extend((int(t), fu, row) for t, row in zip(tu, psi))
    if tt:
        psi, err = _solve_kkt(op.K, Q, ft, ct, tt, desc, QH, ct_cache)
        worst = max(worst, err)
        out.extend((int(t), ft, row) for t, row in zip(tt, psi))
    out.sort(key=lambda item: item[0])
    return out, worst


def solve_corrector(op: CoupledOperator, patch: Patch, target_coarse_dof: int,
                    grid: NestedGrid, Q=None, QH=None) -> sp.csr_matrix:
    """Basis function of one coarse dof on ``patch`` as a sparse column over fine dofs."""
    if target_coarse_dof not in set(patch.constrained_coarse_dofs.tolist()):
        raise ValueError("target dof's hat support does not meet the patch")
    if Q is None:
        Q = constraint_matrix(grid)
    rows, _ = node_rows(op, Q, patch, [target_coarse_dof], grid.fine.n_u, grid.coarse.n_u, QH)
    _, dofs, vals = rows[0]
    return sp.csr_matrix((vals, (dofs, np.zeros(dofs.size, dtype=np.int64))),
                         shape=(grid.fine.n_dofs, 1))


@dataclass(frozen=True, eq=False)
class MultiscaleBasis:
    method: str
    k: int
    R: sp.csr_matrix
    gamma1: float = 1.0
    gamma2: float = 1.0
    row_centers: np.ndarray = field(default=None, repr=False)
    max_constraint_residual: float = 0.0
    normalization: str = "delta"

    @property
    def n_coarse(self) -> int:
        return self.R.shape[0]

    @property
    def n_fine(self) -> int:
        return self.R.shape[1]


# per-process state for the parallel map
_WORKER = {}


def _init_worker(grid, op, Q, k, QH):
    _WORKER.update(grid=grid, op=op, Q=Q, k=k, QH=QH, cache={})


def _node_task(pos: int):
    grid, op, Q, k = _WORKER["grid"], _WORKER["op"], _WORKER["Q"], _WORKER["k"]
    coarse = grid.coarse
    m = int(coarse.free_nodes[pos])
    patch = node_patch(grid, m, k)
    targets = coarse.system_dofs([pos])
    rows, err = node_rows(op, Q, patch, targets, grid.fine.n_u, coarse.n_u, _WORKER["QH"],
                          _WORKER["cache"])
    return m, rows, err


def parallel_map(fn, items, workers: int = 1, initializer=None, initargs=()):
    """Ordered map; ``workers > 1`` uses forked processes."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        if initializer is not None:
            initializer(*initargs)
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("fork"),
                             initializer=initializer, initargs=initargs) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def coarse_gram_matrix(grid: NestedGrid) -> sp.csr_matrix:
    """``QH[j, m] = q_j(lambda_m)`` over coarse system dofs (coarse mass per component)."""
    Pi = grid.prolongation.tocsr()[grid.fine.free_nodes][:, grid.coarse.free_nodes]
    MH = (hat_mass_matrix(grid) @ Pi).tocsr()
    return sp.block_diag([sp.kron(MH, sp.eye(2)), MH], format="csr")


def build_basis(grid: NestedGrid, bs: BlockSystem, method: str, k: int,
                gamma1: float = 1.0, gamma2: float = 1.0, workers: int = 1,
                normalization: str = "delta") -> MultiscaleBasis:
    """Assemble ``R`` row by row from independent per-node patch problems.

    ``normalization="delta"`` imposes ``q_j(psi_m) = delta_jm``; ``"hat"``
    imposes ``q_j(psi_m) = q_j(lambda_m)`` so each basis function keeps the
    constraint values of its coarse hat.
    """
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}, got {normalization!r}")
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    if k < 0:
        raise ValueError("k must be non-negative")
    if method == "melod":
        op = build_coupled_operator(bs, gamma1, gamma2)
    else:
        op = build_decoupled_operator(bs)
    Q = constraint_matrix(grid)
    QH = coarse_gram_matrix(grid) if normalization == "hat" else None
    coarse = grid.coarse
    results = parallel_map(_node_task, range(coarse.n_free), workers,
                           initializer=_init_worker, initargs=(grid, op, Q, k, QH))
    rows, cols, vals = [], [], []
    centers = np.empty(coarse.n_dofs, dtype=np.int64)
    worst = 0.0
    for m, node_out, err in results:
        worst = max(worst, err)
        for t, dofs, v in node_out:
            rows.append(np.full(dofs.size, t, dtype=np.int64))
            cols.append(dofs)
            vals.append(v)
            centers[t] = m
    R = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(coarse.n_dofs, grid.fine.n_dofs))
    log.info("%s basis k=%d: %d rows, nnz=%d, max constraint residual %.2e",
             method, k, R.shape[0], R.nnz, worst)
    return MultiscaleBasis(method=method, k=k, R=R,
                           gamma1=gamma1 if method == "melod" else 1.0,
                           gamma2=gamma2 if method == "melod" else 1.0,
                           row_centers=centers, max_constraint_residual=worst,
                           normalization=normalization)


def write_basis_rows_csv(path, grid: NestedGrid, basis: MultiscaleBasis, rows) -> None:
    """Dump selected basis rows as ``(x, y, u_x, u_y, theta)`` over fine nodes."""
    import csv
    fine = grid.fine
    free = fine.free_nodes
    nf = free.size
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "node", "x", "y", "u_x", "u_y", "theta"])
        for r in rows:
            v = basis.R.getrow(r).toarray().ravel()
            for p, node in enumerate(free):
                x, y = fine.nodes[node]
                w.writerow([r, int(node), repr(float(x)), repr(float(y)),
                            repr(float(v[2 * p])), repr(float(v[2 * p + 1])),
                            repr(float(v[2 * nf + p]))])
