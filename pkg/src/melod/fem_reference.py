"""Fine-grid backward-Euler reference solver."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (BlockSystem, assemble_block_system, assemble_loads,
                       compose_time_operators, total_load)
from .coeffs import CoefficientField
from .grid import NestedGrid, TriMesh
from .problems import Sources


@dataclass(frozen=True, eq=False)
class StateVector:
    values: np.ndarray
    n: int
    tau: float

    def split(self, n_u: int):
        return self.values[:n_u], self.values[n_u:]


@dataclass(eq=False)
class Trajectory:
    states: list
    meta: dict = field(default_factory=dict)

    @property
    def tau(self) -> float:
        return self.states[0].tau

    def __len__(self) -> int:
        return len(self.states)

    def __getitem__(self, n) -> StateVector:
        return self.states[n]

    def array(self) -> np.ndarray:
        return np.stack([s.values for s in self.states])


class SolverError(RuntimeError):
    pass


def interpolate_theta0(mesh: TriMesh, theta0) -> np.ndarray:
    x = mesh.nodes[mesh.free_nodes]
    return np.asarray(theta0(x[:, 0], x[:, 1]), dtype=float)


def initial_state(bs: BlockSystem, theta0_values: np.ndarray, F0: np.ndarray,
                  tau: float = 1.0) -> StateVector:
    """Nodal temperature plus the displacement solving ``A1 u = F0 + A2 theta0``."""
    theta = np.asarray(theta0_values, dtype=float)
    try:
        lu = spla.splu(bs.A1.tocsc())
    except RuntimeError as exc:
        raise SolverError("A1 is singular; check the Dirichlet elimination") from exc
    u = lu.solve(F0 + bs.A2 @ theta)
    return StateVector(np.concatenate([u, theta]), n=0, tau=tau)


def factorize(A, n_u: int | None = None):
    """Sparse LU of the (nonsymmetric) time-step matrix."""
    try:
        return spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        msg = "factorization of the time-step matrix failed"
        if n_u is not None:
            for name, blk in (("A1 (u-u)", A[:n_u, :n_u]), ("M'+tau*A4 (theta-theta)", A[n_u:, n_u:])):
                try:
                    spla.splu(sp.csc_matrix(blk))
                except RuntimeError:
                    msg += f"; block {name} is singular"
        raise SolverError(msg) from exc


def step(lu, B, state: StateVector, F_total: np.ndarray) -> StateVector:
    """One backward-Euler step ``A w^n = B w^{n-1} + F^n`` with a factorized ``A``."""
    w = lu.solve(B @ state.values + F_total)
    return StateVector(w, n=state.n + 1, tau=state.tau)


def run(grid: NestedGrid | TriMesh, coeffs: CoefficientField, sources: Sources,
        tau: float, N: int, bs: BlockSystem | None = None) -> Trajectory:
    mesh = grid.fine if isinstance(grid, NestedGrid) else grid
    if bs is None:
        bs = assemble_block_system(mesh, coeffs)
    loads0 = assemble_loads(mesh, sources.f, sources.g, 0.0)
    theta0 = interpolate_theta0(mesh, sources.theta0)
    states = [initial_state(bs, theta0, loads0.F, tau)]
    if N > 0:
        A, B = compose_time_operators(bs, tau)
        lu = factorize(A, bs.n_u)
        for n in range(1, N + 1):
            loads = assemble_loads(mesh, sources.f, sources.g, n * tau)
            states.append(step(lu, B, states[-1], total_load(loads, tau)))
    meta = {"method": "fem", "fine_level": mesh.level, "tau": tau, "N": N,
            "sources": sources.name, "coefficients": coeffs.provenance}
    return Trajectory(states, meta)


def write_trajectory_csv(outdir, mesh: TriMesh, traj: Trajectory, prefix: str = "traj") -> list:
    """One CSV per time level with all fine nodes (boundary values are zero)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    free = mesh.free_nodes
    n_free = free.size
    paths = []
    for st in traj.states:
        ux = np.zeros(mesh.n_nodes)
        uy = np.zeros(mesh.n_nodes)
        th = np.zeros(mesh.n_nodes)
        ux[free] = st.values[0:2 * n_free:2]
        uy[free] = st.values[1:2 * n_free:2]
        th[free] = st.values[2 * n_free:]
        path = outdir / f"{prefix}_{st.n:04d}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "x", "y", "u_x", "u_y", "theta"])
            for i in range(mesh.n_nodes):
                w.writerow([i, repr(float(mesh.nodes[i, 0])), repr(float(mesh.nodes[i, 1])),
                            repr(float(ux[i])), repr(float(uy[i])), repr(float(th[i]))])
        paths.append(path)
    return paths
