import numpy as np
import pytest

from isolandau.coulomb import CoulombOperator
from isolandau.diagnostics import (
    AUDIT_NAMES,
    DiagnosticsEngine,
    dissipation,
    entropy,
    fisher_weighted,
    moments,
)
from isolandau.errors import GridTooLarge, ZeroMassError
from isolandau.grid import Grid3, ScalarField
from isolandau.initial import gaussian
from isolandau.scheme import SchemeParams, implicit_step, initial_state


def test_moments_gaussian():
    # unit-mass isotropic Gaussian: int u = 1, int |x|^2 u = 3 sigma^2
    g = Grid3(49, 12.0 / 48)
    u = gaussian(g, 1.0, 1.0)
    m, E, R = moments(u)
    assert m == pytest.approx(1.0, rel=1e-8)
    assert E == pytest.approx(3.0, rel=1e-6)
    assert R == pytest.approx(np.sqrt(6.0), rel=1e-6)


def test_moments_concentration_radius_capped():
    # R never exceeds the box half-extent
    g = Grid3(9, 0.5)
    u = ScalarField(g, np.ones(g.shape))
    _, _, R = moments(u)
    assert R == g.half_extent


def test_zero_mass_rejected():
    g = Grid3(5, 0.5)
    with pytest.raises(ZeroMassError):
        moments(ScalarField(g, np.zeros(g.shape)))


def test_entropy_gaussian():
    # int u log u = -3/2 log(2 pi e sigma^2) for a unit-mass Gaussian
    g = Grid3(49, 12.0 / 48)
    u = gaussian(g, 1.0, 1.0)
    H, Hp = entropy(u)
    exact = -1.5 * np.log(2 * np.pi * np.e)
    assert Hp == pytest.approx(exact, rel=1e-6)
    assert H == pytest.approx(exact - 1.0, rel=1e-6)


def test_entropy_zero_cells_ignored():
    g = Grid3(5, 0.5)
    v = np.zeros(g.shape)
    v[2, 2, 2] = 1.0
    H, Hp = entropy(ScalarField(g, v))
    assert np.isfinite(H) and np.isfinite(Hp)
    assert Hp == pytest.approx(np.log(1.0) * 1.0 * g.cell_volume, abs=1e-15)


def test_fisher_weighted_constant_field_zero():
    g = Grid3(7, 0.3)
    assert fisher_weighted(ScalarField(g, np.full(g.shape, 2.0))) == pytest.approx(0.0, abs=1e-20)


def test_dissipation_routes_agree():
    rng = np.random.default_rng(30)
    g = Grid3(11, 0.3)
    u = ScalarField(g, 0.2 + rng.random(g.shape))
    op = CoulombOperator(g)
    d1 = dissipation(u, op, "convolution")
    d2 = dissipation(u, op, "double_sum")
    assert d1 == pytest.approx(d2, rel=1e-12)
    assert d2 > 0


def test_dissipation_log_affine_zero():
    # u = exp(linear) has constant grad(log u): the double integrand vanishes
    g = Grid3(9, 0.25)
    X, Y, Z = g.coords()
    u = ScalarField(g, np.exp(0.3 * X - 0.2 * Y + 0.1 * Z))
    op = CoulombOperator(g)
    d = dissipation(u, op, "double_sum")
    assert abs(d) < 1e-20


def test_dissipation_cap():
    g = Grid3(19, 0.2)
    u = ScalarField(g, np.ones(g.shape))
    with pytest.raises(GridTooLarge):
        dissipation(u, CoulombOperator(g), "double_sum")
    with pytest.raises(ValueError):
        dissipation(u, CoulombOperator(g), "nope")


@pytest.fixture(scope="module")
def two_states():
    g = Grid3(11, 0.3)
    u0 = gaussian(g, 20.0, 1.0)
    op = CoulombOperator(g)
    params = SchemeParams(tau=1.0 / 64, t_final=1.0 / 64, u_floor=1e-12)
    s0 = initial_state(u0, op, params.u_floor)
    s1 = implicit_step(s0, params, op)
    return op, s0, s1


def test_engine_initial_record(two_states):
    op, s0, _ = two_states
    eng = DiagnosticsEngine(s0, op)
    rec = eng.record(s0)
    assert set(rec.inequality_audits) == set(AUDIT_NAMES)
    assert all(r.passed for r in rec.inequality_audits.values())
    assert rec.odd_integral_norm < 1e-12
    from isolandau.grid import weighted_integral

    assert rec.mass == pytest.approx(weighted_integral(s0.u), rel=1e-14)


def test_engine_step_audits_pass(two_states):
    op, s0, s1 = two_states
    eng = DiagnosticsEngine(s0, op)
    eng.record(s0)
    rec = eng.record(s1, s0)
    for name, res in rec.inequality_audits.items():
        assert res.passed, f"{name}: slack={res.slack}"
    # running integrals accumulate
    assert rec.weighted_l1l3_running > 0
    assert rec.weighted_l53_running > 0


def test_engine_state_roundtrip(two_states):
    op, s0, s1 = two_states
    eng = DiagnosticsEngine(s0, op)
    eng.record(s0)
    eng.record(s1, s0)
    saved = eng.get_state()
    eng2 = DiagnosticsEngine(s0, op)
    eng2.set_state(saved)
    assert eng2.get_state() == saved


def test_entropy_lower_bound_is_exact_inequality(two_states):
    # the (d) audit rhs dominates -H for any density, not just the run's:
    # try several shapes
    op, s0, _ = two_states
    g = s0.u.grid
    eng = DiagnosticsEngine(s0, op)
    rng = np.random.default_rng(31)
    for _ in range(5):
        u = ScalarField(g, 1e-6 + rng.random(g.shape) * rng.uniform(0.1, 50.0))
        st = initial_state(u, op, 1e-14)
        rec = eng.record(st)
        assert rec.inequality_audits["entropy_lower"].passed
