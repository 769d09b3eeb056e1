"""Independent reference implementations used only by the tests.

Nothing here imports the package's assembly: element integrals come from
sympy on the physical triangle, and the heat solver assembles its own
matrices with plain loops.
"""
from functools import lru_cache

import numpy as np
import sympy as sy

X, Y = sy.symbols("x y", real=True)
LAM, MU, KAP, ALP = sy.symbols("lam mu kappa alpha", positive=True)


def _hat_functions(verts):
    """Linear functions equal to 1 at one vertex and 0 at the others."""
    out = []
    for i in range(3):
        a, b, c = sy.symbols("a b c")
        eqs = [a + b * vx + c * vy - (1 if j == i else 0) for j, (vx, vy) in enumerate(verts)]
        sol = sy.solve(eqs, (a, b, c))
        out.append(sol[a] + sol[b] * X + sol[c] * Y)
    return out


def _integrate(expr, verts):
    # map the reference triangle onto verts and integrate exactly
    s, t = sy.symbols("s t", nonnegative=True)
    (x0, y0), (x1, y1), (x2, y2) = verts
    xs = x0 + (x1 - x0) * s + (x2 - x0) * t
    ys = y0 + (y1 - y0) * s + (y2 - y0) * t
    jac = abs((x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0))
    e = sy.expand(expr.subs({X: xs, Y: ys}, simultaneous=True))
    return sy.integrate(sy.integrate(e, (t, 0, 1 - s)), (s, 0, 1)) * jac


@lru_cache(maxsize=None)
def element_matrices(verts):
    """Symbolic element matrices on a triangle with rational vertex coordinates.

    Returns lambdified callables ``(lam, mu, kappa, alpha) -> array`` for the
    elasticity (6x6, dofs ux0,uy0,ux1,...), coupling (6x3), conduction (3x3),
    weighted mass (3x3) and plain mass (3x3) matrices.
    """
    verts = tuple((sy.Rational(x), sy.Rational(y)) for x, y in verts)
    phi = _hat_functions(verts)
    # vector basis: (phi_i, 0) and (0, phi_i)
    vec = []
    for p in phi:
        vec.append((p, sy.Integer(0)))
        vec.append((sy.Integer(0), p))

    def eps(v):
        ux, uy = v
        exy = (sy.diff(ux, Y) + sy.diff(uy, X)) / 2
        return sy.Matrix([[sy.diff(ux, X), exy], [exy, sy.diff(uy, Y)]])

    def sigma(v):
        e = eps(v)
        return 2 * MU * e + LAM * e.trace() * sy.eye(2)

    def ddot(a, b):
        return sum(a[i, j] * b[i, j] for i in range(2) for j in range(2))

    A1 = sy.Matrix(6, 6, lambda i, j: _integrate(ddot(sigma(vec[j]), eps(vec[i])), verts))
    A2 = sy.Matrix(6, 3, lambda i, j: _integrate(
        ALP * phi[j] * (sy.diff(vec[i][0], X) + sy.diff(vec[i][1], Y)), verts))
    A4 = sy.Matrix(3, 3, lambda i, j: _integrate(
        KAP * (sy.diff(phi[i], X) * sy.diff(phi[j], X) + sy.diff(phi[i], Y) * sy.diff(phi[j], Y)),
        verts))
    Mp = sy.Matrix(3, 3, lambda i, j: _integrate(ALP * phi[i] * phi[j], verts))
    M = sy.Matrix(3, 3, lambda i, j: _integrate(phi[i] * phi[j], verts))
    args = (LAM, MU, KAP, ALP)
    return tuple(sy.lambdify(args, m, "numpy") for m in (A1, A2, A4, Mp, M))


def oracle_assemble(nodes, triangles, lam, mu, kappa, alpha, n_cells):
    """Dense global matrices on all nodes (u interleaved per node)."""
    nn = nodes.shape[0]
    A1 = np.zeros((2 * nn, 2 * nn))
    A2 = np.zeros((2 * nn, nn))
    A4 = np.zeros((nn, nn))
    Mp = np.zeros((nn, nn))
    M = np.zeros((nn, nn))
    for t, tri in enumerate(triangles):
        # translate to the origin so only two element shapes are integrated symbolically
        base = nodes[tri[0]]
        rel = tuple((sy.Rational(round((nodes[v][0] - base[0]) * n_cells), n_cells),
                     sy.Rational(round((nodes[v][1] - base[1]) * n_cells), n_cells)) for v in tri)
        f1, f2, f4, fmp, fm = element_matrices(rel)
        c = (lam[t], mu[t], kappa[t], alpha[t])
        ud = [d for v in tri for d in (2 * v, 2 * v + 1)]
        A1[np.ix_(ud, ud)] += np.asarray(f1(*c), dtype=float)
        A2[np.ix_(ud, list(tri))] += np.asarray(f2(*c), dtype=float)
        A4[np.ix_(tri, tri)] += np.asarray(f4(*c), dtype=float)
        Mp[np.ix_(tri, tri)] += np.asarray(fmp(*c), dtype=float)
        M[np.ix_(tri, tri)] += np.asarray(fm(*c), dtype=float)
    return A1, A2, A4, Mp, M


def heat_backward_euler(nodes, triangles, interior, kappa, capacity, g, theta0, tau, n_steps):
    """Scalar ``capacity * theta_t - div(kappa grad theta) = g`` with zero Dirichlet data.

    Plain-loop P1 assembly with vertex-quadrature loads; returns the list of
    interior nodal vectors for ``n = 0..n_steps``.
    """
    nn = nodes.shape[0]
    K = np.zeros((nn, nn))
    C = np.zeros((nn, nn))
    w = np.zeros(nn)
    for t, tri in enumerate(triangles):
        p = nodes[tri]
        area = 0.5 * abs((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1])
                         - (p[2, 0] - p[0, 0]) * (p[1, 1] - p[0, 1]))
        Bm = np.array([[1, *p[0]], [1, *p[1]], [1, *p[2]]], dtype=float)
        grads = np.linalg.inv(Bm)[1:, :].T  # row i: gradient of hat i
        for a in range(3):
            w[tri[a]] += area / 3
            for b in range(3):
                K[tri[a], tri[b]] += kappa[t] * area * grads[a] @ grads[b]
                C[tri[a], tri[b]] += capacity[t] * area * (2 if a == b else 1) / 12
    free = np.flatnonzero(interior)
    K, C = K[np.ix_(free, free)], C[np.ix_(free, free)]
    x, y = nodes[free, 0], nodes[free, 1]
    theta = theta0(x, y)
    out = [theta.copy()]
    for n in range(1, n_steps + 1):
        rhs = C @ theta + tau * w[free] * g(x, y, n * tau)
        theta = np.linalg.solve(C + tau * K, rhs)
        out.append(theta.copy())
    return out
