import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from solcorr import classical as cl
from solcorr import fluctuations as fl
from solcorr.classical import SolitonPairSpec, ValidationError, VectorPairSpec
from solcorr.fluctuations import DoubledField
from solcorr.grid import GridError, make_grid

pytestmark = pytest.mark.filterwarnings("ignore::solcorr.grid.BoundaryWarning")


def random_doubled(rng, shape, hermitian=False):
    plus = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    if hermitian:
        return DoubledField.hermitian(plus)
    return DoubledField(plus, rng.normal(size=shape) + 1j * rng.normal(size=shape))


def symplectic(a, b, dt):
    """``w_b^+ K w_a`` with ``K = diag(I, -I)``, the form kept by any Bogoliubov map."""
    return dt * (np.sum(a.plus * b.plus.conj()) - np.sum(a.minus * b.minus.conj()))


@pytest.fixture(scope="module")
def pair128():
    grid = make_grid(128, 20.0)
    return cl.propagate_scalar(cl.init_scalar_pair(SolitonPairSpec(), grid), 6.0, 1e-3)


@pytest.fixture(scope="module")
def vector64():
    grid = make_grid(64, 16.0)
    spec = VectorPairSpec(3.0)
    u, v = cl.init_vector_pair(spec, grid)
    return cl.propagate_vector(u, v, 2.0, 1e-2, spec, store_every=40)


@pytest.fixture(scope="module")
def free64():
    grid = make_grid(64, 10.0)
    zero = cl.Envelope(grid, np.zeros(64, dtype=complex))
    return cl.propagate_scalar(zero, 1.0, 0.05)


# -- DoubledField ----------------------------------------------------------------

def test_doubled_field_basics():
    f = DoubledField.hermitian(np.array([1 + 2j, 3 - 1j]))
    assert f.is_hermitian() and f.hermiticity_error() == 0
    g = DoubledField(np.array([1, 0]), np.array([0, 1]))
    assert not g.is_hermitian()
    assert (f + g).plus[0] == 2 + 2j
    assert (2 * f).minus[1] == 6 + 2j
    assert f.pairing(g, 0.5) == pytest.approx(0.5 * ((1 + 2j) + (3 + 1j)))
    assert f.components.shape == (2, 1, 2)
    with pytest.raises(ValidationError):
        DoubledField(np.zeros(3), np.zeros(4))
    with pytest.raises(ValidationError):
        DoubledField(np.array([np.nan]), np.array([0.0]))


def test_shape_mismatch_rejected(pair128, vector64):
    with pytest.raises(GridError):
        fl.forward_linearized(DoubledField.hermitian(np.ones(64)), pair128)
    with pytest.raises(GridError):
        fl.forward_linearized(DoubledField.hermitian(np.ones(64)), vector64)


# -- free field -----------------------------------------------------------------

def test_free_field_plane_wave(free64):
    grid = free64.grid
    m = 5
    wm = 2 * math.pi * m / (2 * grid.t_half_span)
    wave = np.exp(1j * wm * grid.t)
    out = fl.forward_linearized(DoubledField(wave, np.zeros(64)), free64)
    np.testing.assert_allclose(out.plus, wave * np.exp(-0.5j * wm**2 * 1.0), atol=1e-12)
    assert np.abs(out.minus).max() == 0
    out = fl.forward_linearized(DoubledField(np.zeros(64), wave), free64)
    np.testing.assert_allclose(out.minus, wave * np.exp(+0.5j * wm**2 * 1.0), atol=1e-12)
    assert np.abs(out.plus).max() == 0


def test_free_field_backpropagation(free64):
    grid = free64.grid
    wm = 2 * math.pi * 3 / (2 * grid.t_half_span)
    wave = np.exp(1j * wm * grid.t)
    f0 = fl.backpropagate_functional(DoubledField.hermitian(wave), free64)
    np.testing.assert_allclose(f0.plus, wave * np.exp(-0.5j * wm**2), atol=1e-12)
    np.testing.assert_allclose(f0.minus, np.conj(f0.plus), atol=1e-12)


# -- back-propagation -------------------------------------------------------------

def test_zero_length_is_identity(pair128):
    rng = np.random.default_rng(0)
    f = random_doubled(rng, 128, hermitian=True)
    f0 = fl.backpropagate_functional(f, pair128, 0.0)
    assert np.array_equal(f0.plus, f.plus) and np.array_equal(f0.minus, f.minus)


def test_non_hermitian_functional_rejected(pair128):
    rng = np.random.default_rng(1)
    with pytest.raises(ValidationError):
        fl.backpropagate_functional(random_doubled(rng, 128), pair128)


def test_hermitian_stays_hermitian(pair128):
    rng = np.random.default_rng(2)
    f0 = fl.backpropagate_doubled(random_doubled(rng, 128, hermitian=True), pair128)
    assert f0.hermiticity_error() < 1e-12


def _adjoint_errors(traj, z, count, rng):
    shape = (traj.components, traj.grid.n) if traj.is_vector else (traj.grid.n,)
    ws = [random_doubled(rng, shape) for _ in range(count)]
    fs = [random_doubled(rng, shape, hermitian=True) for _ in range(count)]
    fwd = fl.forward_many(ws, traj, z)
    back = fl.backpropagate_many(traj, [(traj.index_at(z), fs)])[0]
    dt = traj.grid.dt
    return [abs(f.pairing(w, dt) - f0.pairing(w0, dt)) / abs(f.pairing(w, dt))
            for f, w, f0, w0 in zip(fs, fwd, back, ws)]


@pytest.mark.parametrize("theta", [0.0, math.pi / 4, math.pi / 2])
def test_adjoint_consistency_scalar(theta):
    grid = make_grid(128, 20.0)
    traj = cl.propagate_scalar(cl.init_scalar_pair(SolitonPairSpec(1.0, theta, 3.5), grid), 6.0, 1e-3)
    assert max(_adjoint_errors(traj, 6.0, 10, np.random.default_rng(3))) < 1e-9


def test_adjoint_consistency_vector():
    grid = make_grid(128, 20.0)
    spec = VectorPairSpec()
    u, v = cl.init_vector_pair(spec, grid)
    traj = cl.propagate_vector(u, v, 6.0, 1e-3, spec)
    assert max(_adjoint_errors(traj, 6.0, 10, np.random.default_rng(4))) < 1e-9


def test_intermediate_checkpoints_share_one_sweep(pair128):
    rng = np.random.default_rng(5)
    fa = random_doubled(rng, 128, hermitian=True)
    fb = random_doubled(rng, 128, hermitian=True)
    ka, kb = pair128.index_at(2.0), pair128.index_at(5.5)
    joint = fl.backpropagate_many(pair128, [(ka, [fa]), (kb, [fb])])
    np.testing.assert_allclose(joint[0][0].plus, fl.backpropagate_functional(fa, pair128, 2.0).plus, atol=1e-12)
    np.testing.assert_allclose(joint[1][0].plus, fl.backpropagate_functional(fb, pair128, 5.5).plus, atol=1e-12)


def test_numba_kernel_matches_numpy(pair128, vector64):
    rng = np.random.default_rng(6)
    for traj in (pair128, vector64):
        rows = rng.normal(size=(3, traj.components, traj.grid.n)) + 0j
        k = traj.n_steps
        fast = fl.backpropagate_arrays(traj, [k], [rows], fast=True)[0]
        slow = fl.backpropagate_arrays(traj, [k], [rows], fast=False)[0]
        assert np.abs(fast - slow).max() < 1e-12 * np.abs(slow).max()


def test_hermitian_fast_path_matches_doubled(vector64):
    rng = np.random.default_rng(7)
    f = random_doubled(rng, (2, 64), hermitian=True)
    a = fl.backpropagate_functional(f, vector64)
    b = fl.backpropagate_doubled(f, vector64)
    np.testing.assert_allclose(a.plus, b.plus, atol=1e-12)
    np.testing.assert_allclose(a.minus, b.minus, atol=1e-12)


# -- forward map invariants -------------------------------------------------------

@settings(max_examples=8, deadline=None)
@given(st.integers(0, 2**32 - 1), st.complex_numbers(max_magnitude=5), st.complex_numbers(max_magnitude=5))
def test_forward_is_linear(vector64, seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = random_doubled(rng, (2, 64)), random_doubled(rng, (2, 64))
    fx, fy, fxy = fl.forward_many([x, y, a * x + b * y], vector64)
    for part in ("plus", "minus"):
        lhs = getattr(fxy, part)
        rhs = a * getattr(fx, part) + b * getattr(fy, part)
        assert np.abs(lhs - rhs).max() < 1e-10 * max(np.abs(rhs).max(), 1.0)


def test_symplectic_form_conserved(pair128, vector64):
    rng = np.random.default_rng(8)
    for traj in (pair128, vector64):
        shape = (traj.components, traj.grid.n) if traj.is_vector else (traj.grid.n,)
        a, b = random_doubled(rng, shape), random_doubled(rng, shape)
        fa, fb = fl.forward_many([a, b], traj)
        before, after = symplectic(a, b, traj.grid.dt), symplectic(fa, fb, traj.grid.dt)
        assert abs(after - before) < 1e-8 * max(abs(before), 1.0)


def test_number_direction_overlap_constant():
    grid = make_grid(256, 20.0)
    traj = cl.propagate_scalar(cl.Envelope(grid, 1 / np.cosh(grid.t)), 4.0, 1e-3)
    u0 = traj.field(0)[0]
    w0 = DoubledField(u0, u0.conj())
    ref = np.sum(u0.conj() * w0.plus).real * grid.dt
    for z in (1.0, 2.5, 4.0):
        w = fl.forward_linearized(w0, traj, z)
        u = traj.field_at(z)[0]
        assert abs(np.sum(u.conj() * w.plus).real * grid.dt - ref) < 1e-8


def test_forward_second_order():
    grid = make_grid(64, 16.0)
    env = cl.init_scalar_pair(SolitonPairSpec(1.0, math.pi / 4, 3.0), grid)
    w0 = random_doubled(np.random.default_rng(9), 64)

    def run(h):
        return fl.forward_linearized(w0, cl.propagate_scalar(env, 2.0, h)).plus

    h = 0.02
    w1, w2, w4, w8 = (run(h / k) for k in (1, 2, 4, 8))
    ref = w8 + (w8 - w4) / 3
    ratio = np.linalg.norm(w1 - ref) / np.linalg.norm(w2 - ref)
    assert 3.5 <= ratio <= 4.5


# -- Green matrix ----------------------------------------------------------------

def test_green_zero_length_is_identity(free64):
    s = fl.build_green_matrix(free64, 0.0)
    assert np.array_equal(s.s, np.eye(128))


def test_green_structure_and_transpose(vector64):
    green = fl.build_green_matrix(vector64)
    assert green.s.shape == (256, 256)
    assert green.block_error() < 1e-12
    assert max(green.bogoliubov_errors()) < 1e-8
    rng = np.random.default_rng(10)
    f = random_doubled(rng, (2, 64), hermitian=True)
    a = green.transpose_apply(f)
    b = fl.backpropagate_functional(f, vector64)
    assert np.abs(a.plus - b.plus).max() < 1e-9 * np.abs(b.plus).max()
    w = random_doubled(rng, (2, 64))
    assert np.abs(green.apply(w).plus - fl.forward_linearized(w, vector64).plus).max() < 1e-10


def test_green_refuses_large_grids():
    grid = make_grid(1024, 20.0)
    traj = cl.propagate_scalar(cl.Envelope(grid, 1 / np.cosh(grid.t)), 0.01, 1e-3)
    with pytest.raises(ValidationError, match="backpropagate_functional"):
        fl.build_green_matrix(traj)
