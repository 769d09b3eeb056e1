import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from melod import coeffs as C
from melod.assembly import (assemble_block_system, assemble_full, assemble_loads,
                            compose_time_operators, nodal_weights, total_load, write_coo)
from melod.coeffs import CoefficientField
from melod.grid import build_nested_grid, unit_square_mesh
from melod.problems import TEST1, TEST3, ZERO

from oracles import element_matrices, oracle_assemble


def random_field(mesh, seed):
    rng = np.random.default_rng(seed)
    n = mesh.n_triangles
    return CoefficientField(*(rng.uniform(0.5, 5.0, n) for _ in range(4)), provenance={})


def rel_max(a, b):
    return np.abs(a - b).max() / np.abs(b).max()


@pytest.fixture(scope="module")
def oracle_4x4():
    mesh = unit_square_mesh(2)
    cf = random_field(mesh, 0)
    dense = oracle_assemble(mesh.nodes, mesh.triangles, cf.lam, cf.mu, cf.kappa, cf.alpha, 4)
    return mesh, cf, dense


def test_full_matrices_match_symbolic_oracle(oracle_4x4):
    mesh, cf, (A1, A2, A4, Mp, M) = oracle_4x4
    full = assemble_full(mesh, cf)
    for ours, ref in ((full.A1, A1), (full.A2, A2), (full.A4, A4), (full.Mprime, Mp), (full.M, M)):
        assert rel_max(ours.toarray(), ref) <= 1e-12


def test_reference_triangle_elasticity_matrix():
    # standard P1 plane-strain matrix for lam = mu = 1 on the unit right triangle
    f1 = element_matrices(((0, 0), (1, 0), (0, 1)))[0]
    K = np.asarray(f1(1.0, 1.0, 1.0, 1.0), dtype=float)
    mesh = unit_square_mesh(1)
    from melod.assembly import elasticity_elements, p1_gradients
    tri = np.array([[0, 1, 3]])
    sub = type(mesh)(level=0, nodes=mesh.nodes * 2, triangles=tri, interior=np.zeros(9, bool))
    grads, area = p1_gradients(sub)
    ours = elasticity_elements(grads, area, np.ones(1), np.ones(1))[0]
    np.testing.assert_allclose(ours, K, atol=1e-14)
    # hand-derived first row: sigma:eps of (phi_0, 0)
    np.testing.assert_allclose(K[0], [2.0, 1.0, -1.5, -0.5, -0.5, -0.5], atol=1e-14)


def test_block_system_properties(oracle_4x4):
    mesh, cf, _ = oracle_4x4
    bs = assemble_block_system(mesh, cf)
    for M in (bs.A1, bs.A4, bs.Mprime):
        d = M.toarray()
        assert np.abs(d - d.T).max() <= 1e-12 * np.abs(d).max()
        assert np.linalg.eigvalsh(d).min() > 0
    assert (bs.A3 != bs.A2.T).nnz == 0


def test_alpha_zero_kills_coupling():
    g = build_nested_grid(3, 1)
    n = g.fine.n_triangles
    cf = CoefficientField(np.ones(n), np.ones(n), np.ones(n), np.zeros(n), provenance={})
    bs = assemble_block_system(g, cf)
    assert bs.A2.count_nonzero() == 0 and bs.A3.count_nonzero() == 0
    assert bs.Mprime.count_nonzero() == 0


def test_rigid_translation_in_kernel():
    mesh = unit_square_mesh(3)
    cf = random_field(mesh, 1)
    full = assemble_full(mesh, cf)
    u = np.ones(2 * mesh.n_nodes)
    r = full.A1 @ u
    # rows of nodes whose whole support is interior see a constant field
    inner = [i for i in range(mesh.n_nodes)
             if 0 < mesh.nodes[i, 0] < 1 and 0 < mesh.nodes[i, 1] < 1]
    rows = np.array([[2 * i, 2 * i + 1] for i in inner]).ravel()
    assert np.abs(r[rows]).max() < 1e-12


def test_rejects_nonpositive():
    mesh = unit_square_mesh(2)
    n = mesh.n_triangles
    cf = CoefficientField(np.ones(n), -np.ones(n), np.ones(n), np.ones(n), provenance={})
    with pytest.raises(ValueError):
        assemble_block_system(mesh, cf)


def test_rejects_size_mismatch():
    with pytest.raises(ValueError):
        assemble_block_system(unit_square_mesh(2), CoefficientField.constant(5))


def test_constant_source_loads():
    g = build_nested_grid(4, 2)
    loads = assemble_loads(g, TEST1.f, TEST1.g, 0.0)
    assert np.all(loads.F == 0)
    w = nodal_weights(g.fine)
    np.testing.assert_allclose(loads.G, 10 * w[g.fine.free_nodes])
    # over all nodes, including boundary, the weights integrate g = 10 exactly
    assert (10 * w).sum() == pytest.approx(10.0)
    assert np.all(assemble_loads(g, ZERO.f, ZERO.g, 0.0).G == 0)


def test_gaussian_source_peak():
    g = build_nested_grid(5, 2)
    G = assemble_loads(g, TEST3.f, TEST3.g, 0.3).G
    assert np.all(G >= 0)
    x = g.fine.nodes[g.fine.free_nodes[np.argmax(G)]]
    assert np.hypot(x[0] - 0.2, x[1] - 0.8) < 0.05


def test_time_operators():
    g = build_nested_grid(3, 1)
    bs = assemble_block_system(g, C.build_field(g, {n: C.Constant(1.0) for n in C.NAMES}))
    A, B = compose_time_operators(bs, 0.1)
    nu = bs.n_u
    Ad, Bd = A.toarray(), B.toarray()
    np.testing.assert_allclose(Ad[:nu, nu:], -bs.A2.toarray())
    np.testing.assert_allclose(Ad[nu:, :nu], bs.A3.toarray())
    np.testing.assert_allclose(Ad[nu:, nu:], (bs.Mprime + 0.1 * bs.A4).toarray())
    assert np.all(Bd[:nu] == 0)
    np.testing.assert_allclose(Bd[nu:, nu:], bs.Mprime.toarray())
    with pytest.raises(ValueError):
        compose_time_operators(bs, 0.0)
    loads = assemble_loads(g, TEST1.f, TEST1.g, 0.0)
    np.testing.assert_allclose(total_load(loads, 0.1)[nu:], 0.1 * loads.G)


def test_write_coo_roundtrip(tmp_path):
    M = sp.random(7, 5, density=0.4, random_state=3, format="csr")
    write_coo(tmp_path / "m.txt", M)
    lines = (tmp_path / "m.txt").read_text().splitlines()
    assert lines[0] == f"% 7 5 {M.nnz}"
    r, c, v = zip(*(ln.split() for ln in lines[1:]))
    back = sp.coo_matrix((np.array(v, float), (np.array(r, int), np.array(c, int))), shape=(7, 5))
    assert (back.tocsr() != M).nnz == 0


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_energy_positive_random_coefficients(seed):
    mesh = unit_square_mesh(2)
    bs = assemble_block_system(mesh, random_field(mesh, seed))
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(bs.n_u)
    t = rng.standard_normal(bs.n_theta)
    assert u @ (bs.A1 @ u) > 0 and t @ (bs.A4 @ t) > 0 and t @ (bs.Mprime @ t) > 0
