import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hscs import kinematics as kin
from hscs.errors import (
    ContinuumState,
    DegenerateCharges,
    GeometryViolation,
    IdenticalParticles,
    NonPositiveInput,
)

masses = st.floats(0.05, 50.0)
charges = st.floats(0.1, 5.0)


def jacobi_rho(m1, m2, m3, r1, r2, R):
    """rho from the Jacobi pair, with r from Apollonius' theorem."""
    M = m1 * m2 / (m1 + m2)
    mu = m3 * (m1 + m2) / (m1 + m2 + m3)
    r2_cm = (m1 * r1**2 + m2 * r2**2) / (m1 + m2) - m1 * m2 * R**2 / (m1 + m2) ** 2
    return math.sqrt(2.0 * (M * R**2 + mu * r2_cm))


@st.composite
def triangles(draw):
    R = draw(st.floats(0.05, 20.0))
    xi = draw(st.floats(1.0, 10.0))
    eta = draw(st.floats(-1.0, 1.0))
    r1, r2 = R * (xi + eta) / 2, R * (xi - eta) / 2
    return r1, r2, R


def test_reduced_masses_identity():
    s = kin.build_system(1, 2, 1, 1, 2)
    rm = s.masses
    assert rm.M == pytest.approx(2 / 3)
    assert rm.mu == pytest.approx(3 / 4)
    assert rm.mu1 == pytest.approx(1 / 2)
    assert rm.mu2 == pytest.approx(2 / 3)


@given(masses, masses, masses)
def test_t_sum(m1, m2, m3):
    s = kin.ParticleSystem(m1, m2, m3, 1.0, 1.0)
    rm = s.masses
    assert s.geometry.t1 + s.geometry.t2 == pytest.approx(math.sqrt(rm.mu / rm.M), rel=1e-14)


def test_spheroidal_example():
    assert kin.to_spheroidal(2, 1, 1.5) == pytest.approx((2.0, 2 / 3), rel=1e-15)


@given(triangles())
def test_spheroidal_round_trip(tri):
    r1, r2, R = tri
    xi, eta = kin.to_spheroidal(r1, r2, R)
    b1, b2 = kin.from_spheroidal(xi, eta, R)
    assert b1 == pytest.approx(r1, rel=1e-12, abs=1e-12 * R)
    assert b2 == pytest.approx(r2, rel=1e-12, abs=1e-12 * R)


def test_geometry_violation():
    with pytest.raises(GeometryViolation):
        kin.to_spheroidal(1.0, 1.0, 3.0)
    with pytest.raises(GeometryViolation):
        kin.hyperradius(kin.build_system(1, 2, 1, 1, 2), 1.0, 1.0, 0.0)


def test_hyperradius_example():
    s = kin.build_system(1, 2, 1, 1, 2)
    ref = jacobi_rho(1, 2, 1, 1, 1, 1)
    assert kin.hyperradius(s, 1, 1, 1) == pytest.approx(ref, rel=1e-10)
    assert kin.hyperradius_jacobi(s, 1, 1, 1) == pytest.approx(ref, rel=1e-10)


def test_hyperradius_random_geometries():
    rng = np.random.default_rng(11)
    for _ in range(1000):
        m = rng.uniform(0.05, 50, 3)
        R = rng.uniform(0.01, 30)
        xi, eta = rng.uniform(1, 12), rng.uniform(-1, 1)
        r1, r2 = R * (xi + eta) / 2, R * (xi - eta) / 2
        s = kin.ParticleSystem(*m, 1.0, 1.0)
        ref = jacobi_rho(*m, r1, r2, R)
        assert kin.hyperradius(s, r1, r2, R) == pytest.approx(ref, rel=1e-10)
        assert kin.hyperradius_jacobi(s, r1, r2, R) == pytest.approx(ref, rel=1e-10)
        assert kin.hyperradius_positions(s, r1, r2, R) == pytest.approx(ref, rel=1e-10)


@given(triangles(), st.floats(0.1, 10.0))
def test_rho_dilation(tri, k):
    s = kin.build_system(1, 2, 1, 1, 2)
    r1, r2, R = tri
    assert kin.hyperradius(s, k * r1, k * r2, k * R) == pytest.approx(k * kin.hyperradius(s, r1, r2, R), rel=1e-12)


# powers of two scale the inputs exactly; otherwise re-rounding a needle
# triangle moves its angles by O(sqrt(eps))
@given(triangles(), st.integers(-6, 6))
def test_shape_invariant_under_dilation(tri, j):
    s = kin.build_system(1, 2, 1, 1, 2)
    k = 2.0**j
    r1, r2, R = tri
    a = kin.internal_point(s, r1, r2, R)
    b = kin.internal_point(s, k * r1, k * r2, k * R)
    assert b.rho == pytest.approx(k * a.rho, rel=1e-12)
    for name in ("xi", "eta", "t", "chi", "theta"):
        assert getattr(b, name) == pytest.approx(getattr(a, name), rel=1e-12, abs=1e-12)


def test_hyperradius_collapse():
    s = kin.build_system(1, 2, 1, 1, 2)
    assert kin.hyperradius(s, 1e-9, 1e-9, 1e-9) < 1e-8


def test_effective_charges_example():
    s = kin.build_system(1, 2, 1, 1, 2)
    z1, z2 = kin.effective_charges(s, 10.0)
    assert z1 == pytest.approx(10 * math.sqrt(2) * 0.5**1.5 / 0.75, rel=1e-14)
    assert z2 == pytest.approx(10 * 2 * math.sqrt(2) * (2 / 3) ** 1.5 / 0.75, rel=1e-14)
    assert kin.effective_charges(s, 0.0) == (0.0, 0.0)


@given(st.floats(0.0, 1e3))
def test_effective_charges_linear(rho):
    s = kin.build_system(1, 2, 1, 1, 2)
    a, b = kin.effective_charges(s, rho)
    a2, b2 = kin.effective_charges(s, 2 * rho)
    assert a2 == pytest.approx(2 * a, rel=1e-14, abs=1e-300)
    assert b2 == pytest.approx(2 * b, rel=1e-14, abs=1e-300)


def test_csf_parameters_two_routes():
    s = kin.build_system(1, 2, 1, 1, 2)
    prm = kin.csf_parameters(s, 5.0, -2.0)
    z1, z2 = kin.effective_charges(s, 5.0)
    d = s.geometry.t1 + s.geometry.t2
    assert prm.a == pytest.approx((z1 + z2) * d / 2, rel=1e-12)
    assert prm.b == pytest.approx((z2 - z1) * d / 2, rel=1e-12)


def test_csf_parameters_limits():
    s = kin.build_system(1, 2, 1, 1, 2)
    rm = s.masses
    prm = kin.csf_parameters(s, 0.0, -1.0)
    assert prm.a == 0.0 and prm.b == 0.0
    assert prm.p == pytest.approx(0.5 * math.sqrt(rm.mu / rm.M), rel=1e-14)
    assert kin.csf_parameters(s, 1.0, -1e-20).p < 1e-9
    with pytest.raises(ContinuumState):
        kin.csf_parameters(s, 1.0, 0.0)


@given(masses, masses, masses, charges, charges, st.floats(0.0, 500.0))
def test_a_dominates_b(m1, m2, m3, z1, z2, rho):
    s = kin.ParticleSystem(m1, m2, m3, z1, z2)
    a, b = kin.charge_parameters(s, rho)
    assert a >= abs(b)


def test_channel_kinematics_example():
    s = kin.build_system(1, 2, 1, 1, 2)
    ch = kin.channel_kinematics(s, -1.0, 2, 1)
    assert ch.threshold == pytest.approx(-4 / 3, rel=1e-15)
    assert ch.is_open
    assert ch.q == pytest.approx(math.sqrt(1 / 3), rel=1e-14)
    closed = kin.channel_kinematics(s, -1.0, 1, 1)
    assert not closed.is_open
    assert closed.q == pytest.approx(math.sqrt(1.0 - 0.25), rel=1e-14)


def test_gamma_bar_vanishes_for_unit_charge():
    s = kin.build_system(1, 2, 1, 1, 2)
    ch = kin.channel_kinematics(s, -0.1, 1, 1)
    assert all(ch.gamma_bar(r) == 0.0 for r in (1.0, 10.0, 1e4))
    ch2 = kin.channel_kinematics(s, -0.1, 2, 1)
    rm = s.masses
    k = math.sqrt(2 * rm.M2) * ch2.q
    assert ch2.gamma_bar(7.0) == pytest.approx(1.0 * 1.0 * rm.M2 / k * math.log(2 * ch2.q * 7.0), rel=1e-14)


def test_threshold_channel():
    s = kin.build_system(1, 2, 1, 1, 2)
    E = kin.threshold(s, 1, 2)
    ch = kin.channel_kinematics(s, E, 1, 2)
    assert ch.q == 0.0 and ch.at_threshold


def test_validation_errors():
    with pytest.raises(NonPositiveInput):
        kin.build_system(1, -2, 1, 1, 2)
    with pytest.raises(NonPositiveInput):
        kin.build_system(1, 2, 1, 1, 0)
    with pytest.raises(IdenticalParticles):
        kin.build_system(1, 1, 1, 1, 1)
    rm = kin.reduced_masses_from(1.0, 2.0, 1.0)
    with pytest.raises(DegenerateCharges):
        kin.build_system(1, 2, 1, (rm.mu2 / rm.mu1) ** 1.5, 1.0)
    assert kin.build_system(1, 2, 1, 1, 0, allow_zero_charge=True).Z2 == 0.0
