import numpy as np
import pytest

import recurflow as rf
from recurflow.errors import InputError

from conftest import identity_field


def lattice_centers(step, n, dim=2):
    ax = step * np.arange(n)
    return np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1).reshape(-1, dim)


def test_drift_constant_any_scale():
    f = rf.VectorField.constant([0.3, 0.4])
    for ell in (0.7, 5.0, 40.0):
        val = rf.mean_drift_box(f, ell, [[0.0, 0.0], [2.0, -3.0]], quad_n=8)
        assert val == pytest.approx(0.5, abs=1e-9)


def test_drift_shear_envelope(shear):
    # |int sin| over a length-100 window is at most 2, so the average of the
    # second component obeys 2/ell; the box average inherits the bound
    val = rf.mean_drift_box(shear, 100.0, lattice_centers(7.3, 3), quad_n=12)
    assert val <= 0.02 + 1e-9


def test_drift_taylor_green_periodic(tg):
    for k in (1, 10):
        val = rf.mean_drift_box(tg, 2 * np.pi * k, [[0.0, 0.0], [2 * np.pi, 0.0]],
                                quad_n=12)
        assert val <= 1e-8


def test_drift_empty_centers(shear):
    with pytest.raises(InputError):
        rf.mean_drift_box(shear, 1.0, np.zeros((0, 2)))


def test_flux_box_constant():
    f = rf.VectorField.constant([1.0, 0.0])
    assert rf.mean_flux_box(f, [0.0, 0.0], 0, 3.0) == pytest.approx(1.0, abs=1e-12)


def test_flux_box_shear(shear):
    # component 1 vanishes identically
    assert rf.mean_flux_box(shear, [1.0, 2.0], 0, 5.0) == pytest.approx(0.0, abs=1e-14)
    # flux of sin x1 through a horizontal segment of length 100
    val = rf.mean_flux_box(shear, [0.4, -1.0], 1, 100.0, quad_n=12)
    assert val <= 0.02 + 1e-9


def test_flux_box_axis_range(shear):
    with pytest.raises(InputError):
        rf.mean_flux_box(shear, [0.0, 0.0], 2, 1.0)


@pytest.mark.parametrize("make", [rf.VectorField.shear_sin,
                                  rf.VectorField.taylor_green,
                                  lambda: rf.VectorField.constant([1.0, 0.0])])
def test_flux_sphere_incompressible(make):
    f = make()
    for R in (0.5, 2.0, 7.0):
        assert rf.mean_flux_sphere(f, [0.3, -0.4], R) <= 1e-10


def test_flux_sphere_compressible_2d():
    # V(x) = x has flux 2*pi*R^2 through the circle of radius R: average R
    f = identity_field()
    assert rf.mean_flux_sphere(f, [0.0, 0.0], 1.0) == pytest.approx(1.0, abs=1e-10)


def test_flux_sphere_compressible_3d():
    f = rf.VectorField.from_callable(lambda x: x.copy(), 3, sup_bound=100.0,
                                     wavenumber_bound=0.0, name="radial3")
    # div V = 3: flux / area = 3 * vol(B_R) / area(S_R) = R
    assert rf.mean_flux_sphere(f, [0, 0, 0], 2.0) == pytest.approx(2.0, rel=1e-9)


def test_flux_cap():
    f = rf.VectorField.constant([1.0, 0.0])
    # arc of half-angle g around (1,0): average of cos is sin(g)/g
    chord = 0.2
    g = np.arccos(1.0 - chord ** 2 / 2.0)
    val = rf.mean_flux_sphere(f, [0.0, 0.0], 1.0, cap_direction=[1.0, 0.0],
                              cap_chord=chord)
    assert val == pytest.approx(np.sin(g) / g, rel=1e-9)


def test_flux_cap_3d_divergence_free(tg):
    f3 = rf.VectorField.from_callable(
        lambda x: np.stack([-np.sin(x[..., 0]) * np.cos(x[..., 1]),
                            np.cos(x[..., 0]) * np.sin(x[..., 1]),
                            np.zeros_like(x[..., 2])], axis=-1),
        3, sup_bound=1.0, lip_bound=1.0, name="tg3")
    full = rf.mean_flux_sphere(f3, [0.1, 0.2, -0.1], 1.5, quad_n=48)
    assert full <= 1e-8


def test_drift_sweep_shapes_and_envelopes(shear):
    rep = rf.drift_sweep(shear, [10.0, 100.0, 1000.0], quad_n=8, seed=4)
    assert rep.scales == [10.0, 100.0, 1000.0]
    for ell, sup in rep.rows():
        assert sup <= 2.0 / ell + 1e-9
    assert rep.centers_sampled > 0


def test_drift_sweep_constant_flat():
    f = rf.VectorField.constant([1.0, 0.0])
    rep = rf.drift_sweep(f, [3.0, 30.0], quad_n=8, seed=0)
    assert np.allclose(rep.sup_box_average, 1.0, atol=1e-9)


def test_drift_sweep_deterministic(shear):
    a = rf.drift_sweep(shear, [5.0, 50.0], quad_n=8, seed=123)
    b = rf.drift_sweep(shear, [5.0, 50.0], quad_n=8, seed=123)
    assert a.sup_box_average == b.sup_box_average


def test_drift_sweep_validation(shear):
    with pytest.raises(InputError):
        rf.drift_sweep(shear, [])
    with pytest.raises(InputError):
        rf.drift_sweep(shear, [10.0, 5.0])


def test_derivative_drift_constant():
    f = rf.VectorField.constant([0.2, 0.9])
    reports = rf.derivative_drift(f, [2.0, 8.0], quad_n=8, seed=1)
    for rep in reports.values():
        assert max(rep.sup_box_average) <= 1e-10


def test_derivative_drift_taylor_green(tg):
    reports = rf.derivative_drift(tg, [2 * np.pi, 20 * np.pi], quad_n=12,
                                  seed=2, n_random=2,
                                  extent=2 * np.pi)
    for rep in reports.values():
        assert max(rep.sup_box_average) <= 1e-6


def test_derivative_drift_shear_envelope(shear):
    reports = rf.derivative_drift(shear, [10.0, 100.0], quad_n=12, seed=3,
                                  n_random=2)
    for ell, sup in reports[0].rows():
        assert sup <= 2.0 / ell + 1e-6
