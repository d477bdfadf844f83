import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import eigh_tridiagonal

from hscs import csf
from hscs import kinematics as kin
from hscs.coupling import build_grid, gram
from hscs.errors import OutOfDomain, StepTooLarge


# --- independent oracles ---------------------------------------------------


def fd_sturm(lo, hi, n, flux, potential, k):
    """Lowest ``k`` eigenvalues of ``-(f y')' + V y`` by cell-centred differences.

    Faces at ``lo`` and ``hi`` carry ``f`` as given; a vanishing ``f`` at an
    end is the natural regular condition, otherwise the end is Dirichlet.
    """
    h = (hi - lo) / n
    x = lo + h * (np.arange(n) + 0.5)
    faces = lo + h * np.arange(n + 1)
    f = flux(faces)
    diag = (f[:-1] + f[1:]) / h**2 + potential(x)
    if f[0] != 0.0:
        diag[0] += f[0] / h**2  # ghost cell y_{-1} = -y_0
    if f[-1] != 0.0:
        diag[-1] += f[-1] / h**2
    off = -f[1:-1] / h**2
    return eigh_tridiagonal(diag, off, select="i", select_range=(0, k - 1), eigvals_only=True)


def fd_angular(p2, b, k=3, n=10_000):
    # -[(1-eta^2) Y']' + p^2 (1-eta^2) Y - b eta Y = lam Y
    return fd_sturm(-1.0, 1.0, n, lambda e: 1.0 - e * e, lambda e: p2 * (1.0 - e * e) - b * e, k)


def fd_radial(a, p, k=3, xi_max=31.0, n=20_000):
    # [(xi^2-1) X']' + (a xi - p^2 (xi^2-1)) X = lam X, largest lam first
    vals = fd_sturm(1.0, xi_max, n, lambda x: x * x - 1.0, lambda x: -(a * x - p * p * (x * x - 1.0)), k)
    return -vals


def fd_hydrogen_s(Z, k=2, L=80.0, n=40_000):
    """``-u'' - Z u / r = E u`` with ``u(0) = 0``."""
    h = L / (n + 1)
    r = h * np.arange(1, n + 1)
    return eigh_tridiagonal(2.0 / h**2 - Z / r, -np.ones(n - 1) / h**2, select="i", select_range=(0, k - 1),
                            eigvals_only=True)


# --- angular problem -------------------------------------------------------


@pytest.mark.parametrize("m", range(0, 11))
def test_legendre_limit(m):
    for n_eta in range(0, 11 - m):
        l = m + n_eta
        assert csf.angular_eigenvalue(0.0, 0.0, m, n_eta).lam == pytest.approx(l * (l + 1), abs=1e-10)


def test_legendre_limit_shape():
    from scipy.special import lpmv

    eta = np.linspace(-0.95, 0.95, 9)
    for m, n_eta in ((0, 3), (2, 1), (1, 4)):
        Y = csf.angular_eigenvalue(0.0, 0.0, m, n_eta)(eta)
        ref = lpmv(m, m + n_eta, eta)
        c = Y @ ref / (ref @ ref)
        np.testing.assert_allclose(Y, c * ref, atol=1e-10)


@given(st.floats(0.0, 40.0), st.floats(0.0, 20.0), st.integers(0, 3), st.integers(0, 4))
def test_lambda_even_in_b(p2, b, m, n_eta):
    a = csf.angular_eigenvalue(p2, b, m, n_eta).lam
    c = csf.angular_eigenvalue(p2, -b, m, n_eta).lam
    assert a == pytest.approx(c, rel=1e-11, abs=1e-11)


def test_angular_fd_oracle():
    lam = csf.angular_eigenvalue(1.0, 0.5, 0, 0).lam
    assert lam == pytest.approx(fd_angular(1.0, 0.5)[0], abs=1e-6)


def test_angular_nodes_follow_rank():
    for n_eta in range(5):
        sol = csf.angular_eigenvalue(9.0, 3.0, 1, n_eta)
        assert csf.count_nodes(sol(np.linspace(-0.999, 0.999, 4001))) == n_eta


# --- radial problem --------------------------------------------------------


def test_radial_fd_oracle():
    ref = fd_radial(6.0, 1.3)
    for n_xi in range(3):
        assert csf.radial_eigenvalue(6.0, 1.3, 0, n_xi).lam == pytest.approx(ref[n_xi], abs=1e-4)


def test_radial_node_count_monotone():
    # with the separation constant entering the radial equation as -lam,
    # raising lam removes nodes
    ref = fd_radial(6.0, 1.3, k=4)
    lams = np.linspace(ref[3] - 2.0, ref[0] + 2.0, 60)
    counts = [csf.radial_mismatch(6.0, 1.3, 0, lam)[1] for lam in lams]
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    for k in range(3):
        mid = 0.5 * (ref[k] + ref[k + 1])
        assert csf.radial_mismatch(6.0, 1.3, 0, mid)[1] == k + 1
    assert csf.radial_mismatch(6.0, 1.3, 0, ref[0] + 1.0)[1] == 0


def test_radial_mismatch_changes_sign_at_eigenvalue():
    for m, n_xi in ((0, 0), (1, 0), (1, 1)):
        lam = csf.radial_eigenvalue(6.0, 1.3, m, n_xi).lam
        lo = csf.radial_mismatch(6.0, 1.3, m, lam - 1e-3)[0]
        hi = csf.radial_mismatch(6.0, 1.3, m, lam + 1e-3)[0]
        assert lo * hi < 0


def _resolved_tail(sol, floor=1e-9):
    x = np.linspace(1.0, sol.xi_max, 4000)
    X = np.abs(sol(x))
    return x[np.nonzero(X > floor * X.max())[0][-1]]


def test_radial_frobenius_start():
    sol = csf.radial_eigenvalue(8.0, 1.5, 2, 1)
    X = sol(np.array([1.0 + 1e-6, 1.0 + 2e-6]))
    # X ~ (xi^2 - 1)^{m/2}
    assert X[1] / X[0] == pytest.approx(2.0, rel=1e-4)
    assert csf.count_nodes(sol(np.linspace(1.0, sol.xi_max, 4000))) == 1


def test_radial_decay_rate():
    # sigma = a/(2p) - m - 1 = 0: the tail is a pure exponential
    sol = csf.radial_eigenvalue(3.0, 1.5, 0, 0)
    x = _resolved_tail(sol)
    slope = np.log(abs(sol(x) / sol(0.95 * x))) / (0.05 * x)
    assert slope == pytest.approx(-sol.p, rel=0.05)


def test_radial_tail_asymptotic_form():
    sol = csf.radial_eigenvalue(8.0, 1.5, 2, 1)
    end = _resolved_tail(sol)
    rest = []
    for x in (0.6 * end, 0.8 * end, end):
        local = np.log(abs(sol(x + 1e-4) / sol(x))) / 1e-4
        asym = -sol.p + sol.sigma / (x + 1) + sol.m * x / (x * x - 1)
        rest.append((local - asym) * x * x)
    # what remains is the next, 1/xi^2 term of the series
    assert max(rest) / min(rest) < 1.1


# --- the two-centre state --------------------------------------------------


def test_hydrogen_fd_oracle_for_closed_form():
    # the closed form -Z^2/(4N^2) of -Laplacian - Z/r, checked independently
    for Z in (1.0, 2.5):
        ev = fd_hydrogen_s(Z, L=80.0 / Z)
        for N, e in zip((1, 2), ev):
            assert e == pytest.approx(-Z * Z / (4 * N * N), rel=1e-4)


@pytest.mark.parametrize("rho", [2.0, 10.0])
def test_one_centre_closed_form(one_centre, rho):
    z1, _ = kin.effective_charges(one_centre, rho)
    for m, n_xi, n_eta in ((0, 0, 0), (0, 1, 0), (0, 0, 1), (1, 0, 1), (2, 0, 1)):
        N = m + n_xi + n_eta + 1
        s = csf.solve_state(one_centre, rho, m, n_xi, n_eta)
        assert s.eps == pytest.approx(-z1 * z1 / (4 * N * N), rel=1e-8)


def test_one_centre_mismatch_zero(one_centre):
    s = csf.solve_state(one_centre, 6.0, 0, 1, 0)
    lam = s.radial.lam
    mis, nodes = csf.radial_mismatch(s.a, s.p, 0, lam)
    scale = abs(csf.radial_mismatch(s.a, s.p, 0, lam + 0.01)[0])
    assert abs(mis) < 1e-5 * scale
    assert nodes == 1


def test_state_norm_and_sign(model):
    s = csf.solve_state(model, 5.0, 1, 1, 2)
    assert s.norm() == pytest.approx(1.0, abs=1e-10)
    assert s.radial.endpoint() > 0
    assert csf.count_nodes(s.X(np.linspace(1.0, s.radial.xi_max, 3000))) == 1
    assert csf.count_nodes(s.Y(np.linspace(-0.999, 0.999, 3000))) == 2


def test_gram_lowest_states(model):
    rho = 3.0
    states = [csf.solve_state(model, rho, 0, *q) for q in ((0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0))]
    G = gram(states, build_grid(model, states))
    np.testing.assert_allclose(G, np.eye(6), atol=1e-8)


def test_eigenvalue_ordering(model):
    # energies increase with total node count in the one-centre-like regime
    rho = 0.5
    eps = {q: csf.solve_state(model, rho, 0, *q).eps for q in ((0, 0), (0, 1), (1, 0), (0, 2), (1, 1), (2, 0))}
    assert eps[(0, 0)] < min(eps[(0, 1)], eps[(1, 0)])
    assert max(eps[(0, 1)], eps[(1, 0)]) < min(eps[(0, 2)], eps[(1, 1)], eps[(2, 0)])


def test_evaluate_zero_on_axis_for_m_positive(model):
    s = csf.solve_state(model, 4.0, 1, 0, 0)
    assert np.all(s.evaluate(1.0, np.linspace(-1, 1, 7)) == 0.0)
    with pytest.raises(OutOfDomain):
        s.evaluate(0.5, 0.0)
    with pytest.raises(OutOfDomain):
        s.evaluate(2.0, 1.5)


def test_evaluate_parity_for_equal_effective_charges():
    rm = kin.reduced_masses_from(1.0, 2.0, 1.0)
    sym = kin.ParticleSystem(1.0, 2.0, 1.0, (rm.mu2 / rm.mu1) ** 1.5, 1.0)
    xi = np.array([1.3, 2.0, 3.7])
    eta = np.array([0.2, 0.55, 0.9])
    for n_eta in (0, 1, 2):
        s = csf.solve_state(sym, 6.0, 0, 0, n_eta)
        assert abs(s.b) < 1e-12
        np.testing.assert_allclose(s.evaluate(xi, -eta), (-1) ** n_eta * s.evaluate(xi, eta), atol=1e-12)


def _reintegrate(state):
    """Re-solve both separated equations (m = 0) from their regular ends."""
    a, b, p = state.a, state.b, state.p
    lx, ly = state.radial.lam, state.angular.lam
    d = 1e-7

    def fx(x, y):
        X, dX = y
        return [dX, -(2 * x * dX + (a * x - lx - p * p * (x * x - 1)) * X) / (x * x - 1)]

    def fy(e, y):
        Y, dY = y
        return [dY, (2 * e * dY - (ly - p * p * (1 - e * e) + b * e) * Y) / (1 - e * e)]

    # regular ends: 2 X'(1) = (lam - a) X(1), 2 Y'(-1) = (b - lam) Y(-1)
    sx = solve_ivp(fx, (1 + d, 8.0), [1.0, 0.5 * (lx - a)], rtol=1e-12, atol=1e-14, dense_output=True)
    sy = solve_ivp(fy, (-1 + d, 1 - d), [1.0, 0.5 * (b - ly)], rtol=1e-12, atol=1e-14, dense_output=True)
    return lambda xi, eta: sx.sol(xi)[0] * sy.sol(eta)[0]


def test_evaluate_against_reintegration(model):
    s = csf.solve_state(model, 3.0, 0, 1, 1)
    ode = _reintegrate(s)
    rng = np.random.default_rng(5)
    xi = rng.uniform(1.05, 4.0, 10)
    eta = rng.uniform(-0.95, 0.95, 10)
    ours = s.evaluate(xi, eta)
    ref = np.array([ode(x, e) for x, e in zip(xi, eta)])
    c = ours @ ref / (ref @ ref)
    np.testing.assert_allclose(ours, c * ref, atol=1e-6 * np.max(np.abs(ours)))


# --- rho dependence and labels ---------------------------------------------


def test_d_rho_properties(model):
    s = csf.solve_state(model, 4.0, 0, 1, 0)
    grid = build_grid(model, [s])
    phi = np.outer(*[f for f in s.tabulate(grid.u, grid.theta)[::2]])
    dphi = csf.d_rho_grid(model, s, grid.u, grid.theta)
    assert abs(np.sum(phi * dphi * grid.measure)) < 1e-6 * np.sqrt(np.sum(dphi**2 * grid.measure))
    flipped = csf.d_rho_grid(model, s.flipped(), grid.u, grid.theta)
    np.testing.assert_array_equal(flipped, -dphi)
    half = csf.d_rho_grid(model, s, grid.u, grid.theta, step=0.5 * csf.default_step(4.0))
    assert np.max(np.abs(half - dphi)) < 1e-6 * np.max(np.abs(dphi))


def test_d_rho_step_guard(model):
    s = csf.solve_state(model, 0.5, 0, 0, 0)
    with pytest.raises(StepTooLarge):
        csf.d_rho(model, s, np.array([1.5]), np.array([0.1]), step=0.6)


def test_hydrogenic_limit_ladder(model):
    ladder = [25.0, 50.0, 100.0, 200.0]
    fam = csf.track(model, ladder, 0, 0, 0)
    lab = csf.classify(model, fam)
    ref = kin.scaled_threshold(model, lab.alpha, lab.n)
    dev = [abs(s.eps / s.rho**2 - ref) / abs(ref) for s in fam]
    assert all(b < a for a, b in zip(dev, dev[1:]))
    assert dev[-1] < 1e-2


def test_classify_one_centre(one_centre):
    for q in ((0, 0, 0), (0, 1, 0), (1, 0, 0)):
        fam = csf.track(one_centre, [40.0, 80.0, 160.0, 320.0], *q)
        assert csf.classify(one_centre, fam).alpha == 1


def test_classify_degeneracy_counts(model):
    # the six lowest m = 0 states at rho = 150, below the first sharp crossing
    states = ((0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 0, 2), (0, 1, 1), (0, 2, 0))
    labels = [csf.classify(model, csf.track(model, [40.0, 80.0, 150.0], *q)) for q in states]
    assert labels[0].as_tuple()[:2] == (2, 1)  # the deeper scaled threshold
    counts = Counter((lab.alpha, lab.n) for lab in labels)
    assert counts[(2, 1)] == 1 and counts[(1, 1)] == 1
    assert all(c <= n for (alpha, n), c in counts.items())
    assert all(not lab.s_verified for lab in labels)
    assert all(0 <= lab.s <= lab.n - lab.m - 1 for lab in labels)
