import os

# the solver works on small dense matrices; threaded BLAS only thrashes,
# especially under the process-parallel Monte-Carlo tests
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from sisparrow import ArrayGeometry, build_shift_structure


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def scenario_geometry():
    """2x2 subarrays of 4x2 half-wavelength sensors, displaced 53 / 51."""
    return ArrayGeometry.uniform(2, 2, 4, 2, Delta_x=[0.0, 53.0], Delta_y=[0.0, 51.0])


@pytest.fixture(scope="session")
def scenario_structure(scenario_geometry):
    return build_shift_structure(scenario_geometry)


@pytest.fixture(scope="session")
def small_geometry():
    """M = 8 geometry small enough for brute-force oracles."""
    return ArrayGeometry.uniform(2, 1, 2, 2, Delta_x=[0.0, 7.0], Delta_y=[0.0])


@pytest.fixture(scope="session")
def small_structure(small_geometry):
    return build_shift_structure(small_geometry)


SCENARIO_MU_X = [0.5, 0.8]
SCENARIO_MU_Y = [1.5, 1.2]


def random_hermitian(rng, m, scale=1.0):
    X = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    return scale * 0.5 * (X + X.conj().T)


def random_spd(rng, m, floor=0.1):
    B = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    return B @ B.conj().T / m + floor * np.eye(m)


def random_feasible_point(rng, structure, lam, margin=0.5):
    """Random member of the structured subspace with Q + lam I well inside
    the positive definite cone."""
    q = rng.normal(size=structure.n_classes) + 1j * rng.normal(size=structure.n_classes)
    q[structure.is_real] = q[structure.is_real].real
    Q = structure.assemble(0.3 * q)
    w = np.linalg.eigvalsh(Q)
    return Q + (margin + max(0.0, -w.min())) * np.eye(structure.M)


def fd_class_derivatives(obj, structure, q, i, rho=0.0, anchor=None,
                         eps=1e-6, eps_h=1e-3):
    """Central-difference gradient / Hessian diagonal of one independent
    variable.  For complex classes the Wirtinger-convention Hessian diagonal
    is the average of the second derivatives along the two real axes.

    The second difference cancels catastrophically at gradient-sized steps,
    so it uses a larger step with Richardson extrapolation."""
    def val(qv):
        return obj.value(structure.assemble(qv), rho, anchor)

    def second_diff(direction, step):
        e = np.zeros_like(q)
        e[i] = direction * step
        return (val(q + e) - 2 * v0 + val(q - e)) / step ** 2

    def second_richardson(direction):
        coarse = second_diff(direction, eps_h)
        fine = second_diff(direction, 0.5 * eps_h)
        return (4 * fine - coarse) / 3

    e = np.zeros_like(q)
    e[i] = eps
    v0 = val(q)
    d_re = (val(q + e) - val(q - e)) / (2 * eps)
    h_re = second_richardson(1.0)
    if structure.is_real[i]:
        return d_re, h_re
    e_im = np.zeros_like(q)
    e_im[i] = 1j * eps
    d_im = (val(q + e_im) - val(q - e_im)) / (2 * eps)
    h_im = second_richardson(1.0j)
    return d_re + 1j * d_im, 0.5 * (h_re + h_im)
