import numpy as np
import pytest

import recurflow as rf


def circle_field(sup=20.0):
    """Rigid rotation (-x2, x1); periodic orbits of period 2*pi."""
    return rf.VectorField.from_callable(
        lambda x: np.stack([-x[..., 1], x[..., 0]], axis=-1), 2,
        sup_bound=sup, lip_bound=1.0, wavenumber_bound=0.5, name="circle")


def identity_field(sup=100.0):
    """Compressible test field V(x) = x (div = d)."""
    return rf.VectorField.from_callable(
        lambda x: x.copy(), 2, sup_bound=sup, lip_bound=1.0,
        wavenumber_bound=0.0, name="identity")


@pytest.fixture(scope="session")
def shear():
    return rf.VectorField.shear_sin()


@pytest.fixture(scope="session")
def tg():
    return rf.VectorField.taylor_green()


@pytest.fixture(scope="session")
def light_quad():
    """Cheaper corrector quadrature for unit tests (certified tail 8e-3)."""
    return rf.QuadratureConfig(tail_tol=8e-3, x_max=8.0)


@pytest.fixture(scope="session")
def C_shear_a1(shear):
    return rf.CorrectorField(shear, rf.PsiParams(0.75, 1.0, 2))


@pytest.fixture(scope="session")
def C_shear_a2_light(shear):
    quad = rf.QuadratureConfig(
        tail_tol=8e-3,
        x_max=rf.CorrectedField.required_x_max(((-6, 6), (-6, 6)), 0.3) + 0.5)
    return rf.CorrectorField(shear, rf.PsiParams(0.75, 2.0, 2), quad)


@pytest.fixture(scope="session")
def G_shear_a2(shear, C_shear_a2_light):
    """Grid-backed corrected shear flow on [-6,6]^2 (shared, ~30 s build)."""
    return rf.CorrectedField(shear, C_shear_a2_light, ((-6, 6), (-6, 6)),
                             spacing=0.3)
