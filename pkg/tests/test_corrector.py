import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import recurflow as rf
from recurflow.errors import ConfigurationError, InputError

import oracles
from conftest import identity_field


# -- weight -------------------------------------------------------------------

def test_weight_formula_outside_corrector_range():
    # plain formula check, p=1 sits outside the corrector's exponent window
    assert rf.weight_value(np.array([0.0, 0.0]), 1.0, 2.0) == pytest.approx(0.25)
    assert np.allclose(rf.weight_gradient(np.array([0.0, 0.0]), 1.0, 2.0), 0.0)


def test_psi_unit_point():
    P = rf.PsiParams(0.75, 1.0, 2)
    assert rf.psi_eval(P, np.array([1.0, 0.0])) == pytest.approx(
        oracles.PSI_UNIT_P075, rel=1e-14)
    assert np.allclose(rf.psi_grad(P, np.zeros(2)), 0.0)


def test_psi_range_validation():
    with pytest.raises(InputError):
        rf.PsiParams(0.5, 1.0, 2)
    with pytest.raises(InputError):
        rf.PsiParams(1.0, 1.0, 2)
    with pytest.raises(InputError):
        rf.PsiParams(0.75, 0.0, 2)
    rf.PsiParams(1.25, 3.0, 3)   # valid for dim 3


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2),
       st.floats(0.55, 0.95), st.floats(0.5, 8.0))
@settings(max_examples=40, deadline=None)
def test_psi_gradient_matches_fd(x, p, alpha):
    P = rf.PsiParams(p, alpha, 2)
    x = np.array(x)
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (P.psi(x + e) - P.psi(x - e)) / (2 * h)
        assert fd == pytest.approx(P.grad_psi(x)[i], rel=1e-4, abs=1e-8)


# -- corrector evaluation -------------------------------------------------------

def test_zero_field_gives_zero_corrector(light_quad):
    z = rf.VectorField.constant([0.0, 0.0])
    C = rf.CorrectorField(z, rf.PsiParams(0.75, 1.0, 2), light_quad)
    pts = np.array([[0.0, 0.0], [1.0, -2.0], [3.3, 4.4]])
    assert np.array_equal(C.eval(pts), np.zeros((3, 2)))


def test_shear_corrector_origin_parity(C_shear_a1):
    W = C_shear_a1.eval(np.zeros(2))
    assert np.abs(W).max() <= 1e-14


def test_shear_corrector_frozen_value(C_shear_a1):
    W = C_shear_a1.eval(np.array([1.0, 0.0]))
    ref = oracles.W_SHEAR_X10_A1_P075
    assert abs(W[0]) <= 1e-12
    assert W[1] == pytest.approx(ref[1], rel=1e-3)    # oracle tolerance
    assert W[1] == pytest.approx(ref[1], abs=5e-7)    # actual agreement


def test_taylor_green_frozen_value(tg, light_quad):
    C = rf.CorrectorField(tg, rf.PsiParams(0.75, 2.0, 2), light_quad)
    W = C.eval(np.array([0.5, 0.5]))
    ref = oracles.W_TG_X0505_A2_P075
    assert np.allclose(W, ref, rtol=1e-3)
    assert np.allclose(W, ref, atol=5e-7)


def test_eval_outside_x_max_rejected(C_shear_a1):
    with pytest.raises(ConfigurationError):
        C_shear_a1.eval(np.array([20.0, 0.0]))


def test_truncation_radius_certification(shear):
    # a hand-set truncation radius that cannot meet the tail tolerance
    quad = rf.QuadratureConfig(truncation_radius=30.0, tail_tol=1e-4, x_max=8.0)
    with pytest.raises(ConfigurationError):
        rf.CorrectorField(shear, rf.PsiParams(0.75, 1.0, 2), quad)


def test_deterministic_eval(shear, light_quad):
    C1 = rf.CorrectorField(shear, rf.PsiParams(0.75, 1.0, 2), light_quad)
    C2 = rf.CorrectorField(shear, rf.PsiParams(0.75, 1.0, 2), light_quad)
    pts = np.array([[0.7, -0.3], [2.0, 2.0]])
    assert np.array_equal(C1.eval(pts), C2.eval(pts))


def test_error_model_dominates_node_doubling(shear, light_quad):
    P = rf.PsiParams(0.75, 1.0, 2)
    C = rf.CorrectorField(shear, P, light_quad)
    dense = replace(light_quad, radial_nodes=2 * light_quad.radial_nodes,
                    angular_nodes=2 * light_quad.angular_nodes)
    C2 = rf.CorrectorField(shear, P, dense)
    pts = np.array([[1.0, 0.0], [-3.0, 2.0], [4.5, -4.0]])
    W1, err = C.eval(pts, with_error=True)
    W2 = C2.eval(pts)
    change = np.linalg.norm(W2 - W1, axis=1)
    assert np.all(change <= err)


# -- closed-form divergence -----------------------------------------------------

def test_div_exact_zero_at_origin(C_shear_a1):
    x = np.zeros(2)
    assert C_shear_a1.div_exact(x) == pytest.approx(0.0, abs=1e-15)


def test_div_exact_zero_field(light_quad):
    z = rf.VectorField.constant([0.0, 0.0])
    C = rf.CorrectorField(z, rf.PsiParams(0.75, 1.0, 2), light_quad)
    assert C.div_exact(np.array([1.0, 2.0])) == 0.0


def test_div_exact_matches_fd(C_shear_a1):
    x = np.array([1.0, 0.0])
    de = C_shear_a1.div_exact(x)
    h = 1e-3
    df = 0.0
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        df += (C_shear_a1.eval(x + e)[i] - C_shear_a1.eval(x - e)[i]) / (2 * h)
    assert abs(de - df) <= 1e-2 * (1.0 + abs(de))


# -- scaling identity -------------------------------------------------------------

def test_scaling_zero_field(light_quad):
    z = rf.VectorField.constant([0.0, 0.0])
    C = rf.CorrectorField(z, rf.PsiParams(0.75, 2.0, 2), light_quad)
    chk = rf.corrector_scaling_check(C, np.array([0.5, 0.5]), alpha=2.0)
    assert chk.residual == 0.0


def test_scaling_alpha_one_degenerates(C_shear_a1):
    chk = rf.corrector_scaling_check(C_shear_a1, np.array([0.5, 0.5]), alpha=1.0)
    assert chk.residual == 0.0
    assert np.array_equal(chk.lhs, chk.rhs)


def test_scaling_identity_shear(shear, light_quad):
    C = rf.CorrectorField(shear, rf.PsiParams(0.75, 4.0, 2), light_quad)
    chk = rf.corrector_scaling_check(C, np.array([1.0, 0.0]), alpha=4.0)
    assert chk.residual <= 2.0 * chk.err_bound


# -- radial moment -----------------------------------------------------------------

@pytest.mark.parametrize("rho", [0.5, 1.0, 2.0])
def test_radial_moment_incompressible(tg, shear, rho):
    assert abs(rf.radial_moment_check(tg, rho)) <= 1e-6
    assert abs(rf.radial_moment_check(shear, rho)) <= 1e-6


def test_radial_moment_zero_field():
    z = rf.VectorField.constant([0.0, 0.0])
    assert rf.radial_moment_check(z, 1.0) == 0.0


def test_radial_moment_compressible_frozen():
    f = identity_field()
    val = rf.radial_moment_check(f, 1.0, scale=1.0, p=0.75, c=1.0)
    assert val == pytest.approx(oracles.RADIAL_MOMENT_IDENTITY_RHO1, rel=1e-9)
    assert val > 0.0


def test_radial_moment_rho_validation(shear):
    with pytest.raises(InputError):
        rf.radial_moment_check(shear, 0.0)


# -- weighted ball measure ------------------------------------------------------------

def test_measure_ball_closed_form():
    P = rf.PsiParams(0.75, 1.0, 2)
    assert rf.measure_ball(P, 10.0) == pytest.approx(
        oracles.MEASURE_BALL_D2_P075_A1_R10, rel=1e-3)
    assert rf.measure_ball(P, 10.0) == pytest.approx(
        oracles.MEASURE_BALL_D2_P075_A1_R10, rel=1e-12)


def test_measure_ball_vanishes_at_zero():
    P = rf.PsiParams(0.75, 1.0, 2)
    assert rf.measure_ball(P, 0.0) == 0.0
    assert rf.measure_ball(P, 1e-9) <= 1e-17


def test_measure_ball_sublinear():
    P = rf.PsiParams(0.75, 1.0, 2)
    assert rf.measure_ball(P, 1000.0) / 1000.0 < rf.measure_ball(P, 100.0) / 100.0


def test_measure_ball_d3_vs_simpson():
    P = rf.PsiParams(1.25, 1.0, 3)
    ours = rf.measure_ball(P, 5.0)
    ref = oracles.simpson_radial_measure(3, 1.25, 1.0, 5.0)
    assert ours == pytest.approx(ref, rel=1e-8)


# -- alpha sweep ------------------------------------------------------------------------

def test_alpha_sweep_small_grid(shear, light_quad):
    g = np.linspace(-4, 4, 5)
    G = np.stack(np.meshgrid(g, g, indexing="ij"), axis=-1).reshape(-1, 2)
    rows = rf.alpha_sweep(shear, 0.75, [1.0, 4.0], G, quad=light_quad)
    assert rows[1]["sup_W"] < rows[0]["sup_W"]
    for r in rows:
        bound = (0.75 / r["alpha"]) * (shear.sup_bound + r["sup_W"])
        assert r["sup_divW"] <= bound + 1e-12
        assert r["sup_dW"] > 0.0
    with pytest.raises(InputError):
        rf.alpha_sweep(shear, 0.75, [4.0, 1.0], G)


# -- dim 3 smoke -------------------------------------------------------------------------

def test_corrector_d3_zero_field():
    z = rf.VectorField.constant([0.0, 0.0, 0.0])
    quad = rf.QuadratureConfig(tail_tol=2e-2, x_max=3.0)
    C = rf.CorrectorField(z, rf.PsiParams(1.25, 1.0, 3), quad)
    assert np.array_equal(C.eval(np.array([0.5, -0.5, 1.0])), np.zeros(3))


def test_corrector_d3_bounded_output():
    f3 = rf.VectorField.from_callable(
        lambda x: np.stack([-np.sin(x[..., 0]) * np.cos(x[..., 1]),
                            np.cos(x[..., 0]) * np.sin(x[..., 1]),
                            np.zeros_like(x[..., 2])], axis=-1),
        3, sup_bound=1.0, lip_bound=1.0, name="tg3")
    quad = rf.QuadratureConfig(tail_tol=2e-2, x_max=3.0)
    C = rf.CorrectorField(f3, rf.PsiParams(1.25, 2.0, 3), quad)
    W = C.eval(np.array([1.0, 0.5, -0.5]))
    assert np.all(np.isfinite(W))
    assert np.linalg.norm(W) < 1.0
