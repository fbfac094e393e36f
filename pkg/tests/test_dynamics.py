import numpy as np
import pytest

import recurflow as rf
from recurflow.errors import ConfigurationError, InputError, IntegrationError

import oracles
from conftest import circle_field


def test_flow_zero_field_fixed_point():
    z = rf.VectorField.constant([0.0, 0.0])
    x0 = np.array([2.0, -1.0])
    assert np.array_equal(rf.flow_map(z, x0, 5.0), x0)


def test_flow_constant_exact():
    c = rf.VectorField.constant([1.0, -2.0])
    end = rf.flow_map(c, np.zeros(2), 3.0)
    assert np.allclose(end, [3.0, -6.0], atol=1e-13)


def test_flow_shear_decoupled(shear):
    end = rf.flow_map(shear, np.array([np.pi / 2, 0.0]), 1.0)
    assert np.abs(end - [np.pi / 2, 1.0]).max() <= 1e-10


def test_flow_backward_forward(shear, tg):
    for f in (shear, tg):
        x0 = np.array([0.3, 1.1])
        fwd = rf.flow_map(f, x0, 10.0)
        back = rf.flow_map(f, fwd, -10.0)
        assert np.linalg.norm(back - x0) <= 1e-6


def test_rk4_order_on_linear_field():
    A = np.array([[0.0, 1.0], [-1.0, 0.0]])
    f = rf.VectorField.from_callable(lambda x: x @ A.T, 2, sup_bound=50.0,
                                     lip_bound=1.0, name="linear")
    x0 = np.array([1.0, 0.0])
    t = 2.0
    exact = np.array([np.cos(t), -np.sin(t)])

    def err(h):
        end = rf.flow_map(f, x0, t, rf.FlowConfig(step=h))
        return np.linalg.norm(end - exact)

    e1, e2 = err(0.05), err(0.025)
    assert e1 / e2 >= 12.0       # effective order >= ~3.58


def test_trajectory_growth_bound(shear):
    traj = rf.flow_map(shear, np.array([0.2, 0.4]), 20.0, record=True)
    assert traj.growth_violation(1e-6) == 0.0
    assert traj.times[-1] == pytest.approx(20.0)
    assert len(traj.times) == len(traj.states)


def test_flow_config_validation():
    with pytest.raises(InputError):
        rf.FlowConfig(step=0.0)
    with pytest.raises(InputError):
        rf.FlowConfig(method="euler")


def test_integration_failure_reported():
    # the state overflows to inf after ~1800 steps; never silent
    f = rf.VectorField.constant([1e307, 0.0])
    with pytest.raises(IntegrationError):
        rf.flow_map(f, np.array([1.0, 1.0]), 30.0)


def test_runaway_custom_field_reported():
    f = rf.VectorField.from_callable(lambda x: 1e8 * x, 2, sup_bound=1e300,
                                     name="explosive")
    with pytest.raises((IntegrationError, ConfigurationError)):
        rf.flow_map(f, np.array([1.0, 1.0]), 10.0)


# -- grid-backed corrected field ------------------------------------------------

def test_corrected_field_interpolation_budget(G_shear_a2):
    err, allowed = G_shear_a2.validate_interpolation(100, seed=0, budget=1e-3)
    assert err <= allowed


def test_corrected_field_taper(G_shear_a2, shear):
    far = np.array([[40.0, 40.0]])
    # far outside the window the corrector is tapered away entirely
    assert np.array_equal(G_shear_a2.eval(far), shear.eval(far))
    assert not G_shear_a2.in_core(far)[0]
    assert G_shear_a2.in_core(np.array([[0.0, 0.0]]))[0]


def test_corrected_field_matches_direct_inside(G_shear_a2, C_shear_a2_light):
    pts = np.array([[0.5, -0.5], [2.0, 3.0]])
    direct = C_shear_a2_light.eval(pts)
    interp = G_shear_a2.eval_corrector(pts)
    assert np.abs(direct - interp).max() <= 1e-3 * G_shear_a2.sup_w


def test_corrected_field_requires_2d(tg, C_shear_a1):
    f3 = rf.VectorField.constant([0.0, 0.0, 0.0])
    with pytest.raises(InputError):
        rf.CorrectedField(f3, C_shear_a1, ((-1, 1), (-1, 1)))


def test_corrected_field_x_max_guard(shear, C_shear_a1):
    # C_shear_a1 has x_max=8; a window needing more must be refused
    with pytest.raises(ConfigurationError):
        rf.CorrectedField(shear, C_shear_a1, ((-20, 20), (-20, 20)))


# -- invariance residual ----------------------------------------------------------

def test_invariance_zero_field(light_quad):
    z = rf.VectorField.constant([0.0, 0.0])
    C = rf.CorrectorField(z, rf.PsiParams(0.75, 1.0, 2), light_quad)
    rep = rf.invariance_residual(z, C, np.array([0.7, -0.2]))
    assert rep.residual == pytest.approx(0.0, abs=1e-15)


def test_invariance_shear_pointwise(shear, C_shear_a1):
    g = np.linspace(-5, 5, 9)
    G = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    div, ref = rf.invariance_residual(shear, C_shear_a1, G, h=1e-3)
    scale = np.abs(ref).max()
    rep = rf.invariance_residual(shear, C_shear_a1, np.array([1.0, 0.0]), h=1e-3)
    assert abs(rep.residual) <= 0.05 * scale


def test_invariance_constant_field_oracle(light_quad):
    cf = rf.VectorField.constant([1.0, 0.0])
    C = rf.CorrectorField(cf, rf.PsiParams(0.75, 1.0, 2))
    rep = rf.invariance_residual(cf, C, np.zeros(2), h=1e-3)
    assert abs(rep.residual - oracles.INVARIANCE_CONST_ORIGIN_ORACLE) <= 1e-9
    assert abs(rep.residual) <= 1e-9


def test_invariance_h_validation(shear, C_shear_a1):
    with pytest.raises(InputError):
        rf.invariance_residual(shear, C_shear_a1, np.zeros(2), h=-1.0)


# -- pushforward -------------------------------------------------------------------

def test_pushforward_identity_flow():
    z = rf.VectorField.constant([0.0, 0.0])
    psi = rf.PsiParams(0.75, 2.0, 2)
    rep = rf.pushforward_test(z, psi, ((-5, 5), (-5, 5)), n_particles=20000,
                              t=1.0, seed=1)
    assert rep.max_ratio <= 1.5
    assert rep.acceptance_rate >= 0.01


def test_pushforward_corrected_invariant(G_shear_a2):
    psi = rf.PsiParams(0.75, 2.0, 2)
    rep = rf.pushforward_test(G_shear_a2, psi, ((-5, 5), (-5, 5)),
                              n_particles=20000, t=1.0, seed=3)
    assert rep.max_ratio <= 3.0


def test_pushforward_power_without_corrector(shear):
    # mu is NOT invariant under the raw shear flow; the test must detect it
    psi = rf.PsiParams(0.75, 2.0, 2)
    rep = rf.pushforward_test(shear, psi, ((-5, 5), (-5, 5)),
                              n_particles=60000, t=1.0, seed=3)
    assert rep.max_ratio > 3.0


def test_pushforward_deterministic(shear):
    psi = rf.PsiParams(0.75, 2.0, 2)
    a = rf.pushforward_test(shear, psi, ((-5, 5), (-5, 5)),
                            n_particles=2000, t=0.5, seed=9)
    b = rf.pushforward_test(shear, psi, ((-5, 5), (-5, 5)),
                            n_particles=2000, t=0.5, seed=9)
    assert np.array_equal(a.discrepancies, b.discrepancies)
    assert np.array_equal(a.widths, b.widths)


def test_pushforward_particle_floor(shear):
    psi = rf.PsiParams(0.75, 2.0, 2)
    with pytest.raises(InputError):
        rf.pushforward_test(shear, psi, ((-5, 5), (-5, 5)), n_particles=10)


def test_rejection_efficiency_guard():
    psi = rf.PsiParams(0.75, 0.001, 2)   # needle-sharp weight at the origin
    rng = np.random.default_rng(0)
    from recurflow.dynamics import sample_from_mu
    with pytest.raises(ConfigurationError):
        sample_from_mu(psi, ((-5, 5), (-5, 5)), 5000, rng)
