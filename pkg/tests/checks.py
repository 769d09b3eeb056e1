"""Per-patch invariants of a multiscale basis, computed independently of the solver."""
import numpy as np
import scipy.sparse as sp

from melod.grid import node_patch
from melod.mslod import build_coupled_operator, build_decoupled_operator, constraint_matrix


def patch_invariants(grid, bs, basis, QH=None):
    """Largest constraint residual and largest relative stationarity defect over all rows.

    Stationarity: ``l(psi, v) = 0`` for every ``v`` on the patch with ``q_j(v) = 0``,
    i.e. ``K_p psi`` lies in the span of the constraint columns. The defect is the
    norm of what is left after projecting that span out, divided by ``||psi||``.
    """
    if basis.method == "melod":
        K = build_coupled_operator(bs, basis.gamma1, basis.gamma2).K
    else:
        K = build_decoupled_operator(bs).K
    Q = constraint_matrix(grid)
    R = basis.R.tocsr()
    nuf, nuc = grid.fine.n_u, grid.coarse.n_u
    worst_c, worst_s = 0.0, 0.0
    for t in range(R.shape[0]):
        m = int(basis.row_centers[t])
        patch = node_patch(grid, m, basis.k)
        fd = patch.fine_dofs
        cd = patch.constrained_coarse_dofs
        if basis.method == "lod":
            # each field is solved on its own dofs
            if t < nuc:
                fd, cd = fd[fd < nuf], cd[cd < nuc]
            else:
                fd, cd = fd[fd >= nuf], cd[cd >= nuc]
        row = R.getrow(t).toarray().ravel()
        # support stays on the patch's interior dofs
        off = np.ones(R.shape[1], dtype=bool)
        off[fd] = False
        assert not np.any(row[off]), f"row {t} leaks outside its patch"
        psi = row[fd]
        C = Q[cd][:, fd].toarray()
        target = np.zeros(len(cd)) if QH is None else QH[cd][:, [t]].toarray().ravel()
        if QH is None:
            target[list(cd).index(t)] = 1.0
        worst_c = max(worst_c, float(np.abs(C @ psi - target).max()))
        r = K[fd][:, fd] @ psi
        y, *_ = np.linalg.lstsq(C.T, r, rcond=None)
        defect = np.linalg.norm(r - C.T @ y) / np.linalg.norm(psi)
        worst_s = max(worst_s, float(defect))
    return worst_c, worst_s
