import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from melod import coeffs as C
from melod.assembly import assemble_block_system
from melod.fem_reference import StateVector, Trajectory
from melod.grid import build_nested_grid
from melod.metrics import ERRORS_HEADER, ErrorReport, energy_errors, state_errors, write_errors_csv

from oracles import oracle_assemble


@pytest.fixture(scope="module")
def setup():
    g = build_nested_grid(2, 1)
    rng = np.random.default_rng(4)
    n = g.fine.n_triangles
    cf = C.CoefficientField(*(rng.uniform(0.5, 2.0, n) for _ in range(4)))
    return g, cf, assemble_block_system(g, cf)


def _traj(vals, tau=0.1):
    return Trajectory([StateVector(v, n=i, tau=tau) for i, v in enumerate(vals)], {})


def test_identical_is_zero(setup):
    _, _, bs = setup
    w = np.random.default_rng(0).standard_normal(bs.n_dofs)
    assert state_errors(w, w, bs) == (0.0, 0.0, 0.0, 0.0)


def test_zero_solution_is_one(setup):
    _, _, bs = setup
    w = np.random.default_rng(1).standard_normal(bs.n_dofs)
    assert np.allclose(state_errors(np.zeros_like(w), w, bs), 1.0)


def test_zero_reference_is_nan(setup):
    _, _, bs = setup
    w = np.random.default_rng(2).standard_normal(bs.n_dofs)
    errs = state_errors(w, np.zeros_like(w), bs)
    assert all(math.isnan(e) for e in errs)
    rep = ErrorReport(*errs, meta={"method": "lod", "k": 1, "contrast": "", "seed": 0})
    assert rep.row()[4:] == ["nan"] * 4


def test_energy_matches_element_oracle(setup):
    g, cf, bs = setup
    mesh = g.fine
    A1, _, A4, _, M = oracle_assemble(mesh.nodes, mesh.triangles, cf.lam, cf.mu,
                                      cf.kappa, cf.alpha, mesh.n)
    rng = np.random.default_rng(3)
    sol = rng.standard_normal(bs.n_dofs)
    ref = rng.standard_normal(bs.n_dofs)
    nn, free, nu = mesh.n_nodes, mesh.free_nodes, bs.n_u

    def full(w):
        u = np.zeros(2 * nn)
        u[2 * free], u[2 * free + 1] = w[0:nu:2], w[1:nu:2]
        t = np.zeros(nn)
        t[free] = w[nu:]
        return u, t

    (ue, te), (ur, tr) = full(sol - ref), full(ref)
    eu, er = ue @ A1 @ ue, ur @ A1 @ ur
    te_, tr_ = te @ A4 @ te, tr @ A4 @ tr
    l2e = ue[0::2] @ M @ ue[0::2] + ue[1::2] @ M @ ue[1::2] + te @ M @ te
    l2r = ur[0::2] @ M @ ur[0::2] + ur[1::2] @ M @ ur[1::2] + tr @ M @ tr
    want = (np.sqrt(eu / er), np.sqrt(te_ / tr_), np.sqrt((eu + te_) / (er + tr_)),
            np.sqrt(l2e / l2r))
    assert np.allclose(state_errors(sol, ref, bs), want, rtol=1e-12)


@given(st.floats(1e-3, 1e3), st.integers(0, 10**6))
@settings(max_examples=25, deadline=None)
def test_scale_invariance(c, seed):
    g = build_nested_grid(2, 1)
    bs = assemble_block_system(g, C.CoefficientField.constant(g.fine.n_triangles))
    rng = np.random.default_rng(seed)
    sol, ref = rng.standard_normal((2, bs.n_dofs))
    assert np.allclose(state_errors(c * sol, c * ref, bs), state_errors(sol, ref, bs), rtol=1e-9)


def test_trajectory_errors_and_series(setup):
    _, _, bs = setup
    rng = np.random.default_rng(6)
    ref = [rng.standard_normal(bs.n_dofs) for _ in range(3)]
    sol = [r + 0.1 * rng.standard_normal(bs.n_dofs) for r in ref]
    rep = energy_errors(_traj(sol), _traj(ref), bs, meta={"method": "melod"})
    assert rep.series["E_u"].shape == (3,)
    assert rep.E_w_L2 == rep.series["E_w_L2"][-1]
    assert rep.meta["method"] == "melod"
    with pytest.raises(ValueError):
        energy_errors(_traj(sol[:2]), _traj(ref), bs)
    with pytest.raises(ValueError):
        energy_errors(_traj(sol, 0.2), _traj(ref), bs)


def test_csv_format(tmp_path):
    reps = [ErrorReport(0.5, 0.25, 1 / 3, 2.0, meta={"method": "melod", "k": 2,
                                                     "contrast": "1000", "seed": 7})]
    path = tmp_path / "errors.csv"
    write_errors_csv(path, reps)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(ERRORS_HEADER)
    assert lines[1] == ("melod,2,1000,7,5.0000000000e-01,2.5000000000e-01,"
                        "3.3333333333e-01,2.0000000000e+00")
    write_errors_csv(path, [])
    assert path.read_text() == ",".join(ERRORS_HEADER) + "\n"
