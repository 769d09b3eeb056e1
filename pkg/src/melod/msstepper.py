"""Galerkin reduction of the time-stepping system onto a multiscale basis."""
from __future__ import annotations

from dataclasses import dataclass

import warnings

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import BlockSystem, assemble_loads, compose_time_operators, total_load
from .fem_reference import StateVector, Trajectory, interpolate_theta0, SolverError
from .grid import NestedGrid
from .mslod import MultiscaleBasis
from .problems import Sources

# coarse systems up to this size are factorized densely
DENSE_LIMIT = 5000


class _DenseLU:
    def __init__(self, M):
        # singularity is reported by _factor from the pivots
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", sla.LinAlgWarning)
            self.factor = sla.lu_factor(M, check_finite=True)

    def solve(self, b):
        return sla.lu_solve(self.factor, b)


def _factor(M):
    if M.shape[0] <= DENSE_LIMIT:
        Md = M.toarray() if sp.issparse(M) else np.asarray(M)
        if not np.all(np.isfinite(Md)):
            raise SolverError("reduced matrix has non-finite entries")
        lu = _DenseLU(Md)
        piv = np.abs(np.diag(lu.factor[0]))
        if piv.min() <= 1e-14 * piv.max():
            raise SolverError("reduced matrix is singular: degenerate multiscale basis")
        return lu
    try:
        return spla.splu(sp.csc_matrix(M))
    except RuntimeError as exc:
        raise SolverError("reduced matrix is singular: degenerate multiscale basis") from exc


@dataclass(frozen=True, eq=False)
class ReducedSystem:
    A_c: np.ndarray
    B_c: np.ndarray
    R: sp.csr_matrix
    lu: object

    @property
    def n(self) -> int:
        return self.R.shape[0]

    def lift(self, w_c: np.ndarray) -> np.ndarray:
        return self.R.T @ w_c

    def project(self, w: np.ndarray) -> np.ndarray:
        """Euclidean least-squares coefficients ``(R R^T)^{-1} R w``."""
        G = (self.R @ self.R.T).toarray()
        return sla.solve(G, self.R @ w, assume_a="sym")


def galerkin(R: sp.csr_matrix, A) -> np.ndarray:
    """``R A R^T`` as a dense array."""
    P = (R @ sp.csr_matrix(A) @ R.T)
    return P.toarray()


def reduce(basis: MultiscaleBasis | sp.spmatrix, A, B) -> ReducedSystem:
    R = basis.R if isinstance(basis, MultiscaleBasis) else sp.csr_matrix(basis)
    if R.shape[1] != A.shape[0] or A.shape != B.shape:
        raise ValueError(f"incompatible shapes R {R.shape}, A {A.shape}, B {B.shape}")
    A_c = galerkin(R, A)
    B_c = galerkin(R, B)
    return ReducedSystem(A_c=A_c, B_c=B_c, R=R, lu=_factor(A_c))


def initial_operator(bs: BlockSystem):
    """``[[A1, -A2], [0, I]]``: the static displacement row plus identity on temperature."""
    Z = sp.csr_matrix((bs.n_theta, bs.n_u))
    return sp.bmat([[bs.A1, -bs.A2], [Z, sp.eye(bs.n_theta)]], format="csr")


def ms_initial_state(rs: ReducedSystem, bs: BlockSystem, theta0_values: np.ndarray,
                     F0: np.ndarray, tau: float = 1.0) -> StateVector:
    """Coarse initial coefficients from the Galerkin-projected static problem.

    Solves ``R [[A1, -A2], [0, I]] R^T w_c = R [F0; theta0]``. For a block
    diagonal basis this is the Euclidean projection of ``theta0`` followed by
    the reduced displacement solve ``a(u, v) - b(v, theta) = (f, v)``.
    """
    R = rs.R
    A0 = galerkin(R, initial_operator(bs))
    rhs = R @ np.concatenate([F0, theta0_values])
    w_c = _factor(A0).solve(rhs)
    return StateVector(w_c, n=0, tau=tau)


def ms_run(rs: ReducedSystem, basis: MultiscaleBasis | None, bs: BlockSystem,
           grid: NestedGrid, sources: Sources, tau: float, N: int) -> Trajectory:
    """March the reduced system and lift every level back to fine dofs."""
    mesh = grid.fine
    loads0 = assemble_loads(mesh, sources.f, sources.g, 0.0)
    theta0 = interpolate_theta0(mesh, sources.theta0)
    wc = ms_initial_state(rs, bs, theta0, loads0.F, tau)
    coarse_states = [wc]
    for n in range(1, N + 1):
        loads = assemble_loads(mesh, sources.f, sources.g, n * tau)
        F_c = rs.R @ total_load(loads, tau)
        w = rs.lu.solve(rs.B_c @ coarse_states[-1].values + F_c)
        coarse_states.append(StateVector(w, n=n, tau=tau))
    states = [StateVector(rs.lift(s.values), n=s.n, tau=tau) for s in coarse_states]
    meta = {"method": basis.method if basis is not None else "custom",
            "k": basis.k if basis is not None else None,
            "fine_level": grid.fine_level, "coarse_level": grid.coarse_level,
            "tau": tau, "N": N, "sources": sources.name,
            "coarse_states": coarse_states}
    return Trajectory(states, meta)


def run_multiscale(grid: NestedGrid, bs: BlockSystem, basis: MultiscaleBasis,
                   sources: Sources, tau: float, N: int) -> Trajectory:
    A, B = compose_time_operators(bs, tau)
    rs = reduce(basis, A, B)
    return ms_run(rs, basis, bs, grid, sources, tau, N)
