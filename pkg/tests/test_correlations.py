import math

import numpy as np
import pytest

from solcorr import classical as cl
from solcorr import correlations as co
from solcorr import fluctuations as fl
from solcorr.classical import SolitonPairSpec, ValidationError, VectorPairSpec
from solcorr.grid import make_grid

pytestmark = pytest.mark.filterwarnings("ignore::solcorr.grid.BoundaryWarning")


@pytest.fixture(scope="module")
def grid256():
    return make_grid(256, 20.0)


@pytest.fixture(scope="module")
def pair_traj(grid256):
    return cl.propagate_scalar(cl.init_scalar_pair(SolitonPairSpec(), grid256), 4.0, 5e-3)


@pytest.fixture(scope="module")
def breather_traj(grid256):
    return cl.propagate_scalar(cl.init_scalar_pair(SolitonPairSpec(1.0, 0.0, 3.5), grid256), 4.0, 5e-3)


@pytest.fixture(scope="module")
def vector_traj(grid256):
    spec = VectorPairSpec()
    u, v = cl.init_vector_pair(spec, grid256)
    return cl.propagate_vector(u, v, 4.0, 5e-3, spec)


def map_invariants(cmap):
    c = cmap.c
    assert np.array_equal(c, c.T)
    off = c[~np.eye(len(c), dtype=bool)]
    assert np.all(np.abs(off) <= 1 + 1e-9)
    assert np.all(np.diag(c) <= 1 + 1e-9)
    eig = np.linalg.eigvalsh(cmap.cov)
    assert eig.min() > -1e-8 * np.trace(cmap.cov)


# -- slots and functionals --------------------------------------------------------

def test_default_partition():
    grid = make_grid(1024, 20.0)
    part = co.make_partition(grid)
    assert len(part) == 160
    sizes = np.diff(part.edges)
    assert sizes.min() >= 2 and sizes.max() <= 3
    ivs = part.intervals
    assert all(a[1] == b[0] for a, b in zip(ivs[:-1], ivs[1:]))
    assert abs(ivs[0][0] + 8.0) <= grid.dt / 2 and abs(ivs[-1][1] - 8.0) <= grid.dt / 2
    with pytest.raises(ValidationError):
        co.make_partition(grid, width=0.01)
    with pytest.raises(ValidationError):
        co.SlotPartition(grid, (5, 5, 9), 0.1)


def test_whole_window_functional_is_number_direction(grid256):
    traj = cl.propagate_scalar(cl.Envelope(grid256, 1 / np.cosh(grid256.t)), 1.0, 1e-2)
    f = co.number_functional(traj, 1.0, (-20.0, 20.0))
    u = traj.field_at(1.0)[0]
    np.testing.assert_array_equal(f.plus, u.conj())
    np.testing.assert_array_equal(f.minus, u)
    tail = co.number_functional(traj, 1.0, (-20.0, -15.0))
    assert np.abs(tail.plus).max() < 1e-5
    with pytest.raises(ValidationError):
        co.number_functional(traj, 1.0, (-1.01, 1.0))
    with pytest.raises(ValidationError):
        co.number_functional(traj, 1.0, (1.25, 1.25))


def test_x_functional_sits_on_left_pulse(vector_traj, grid256):
    f = co.number_functional(vector_traj, 0.0, (-20.0, 20.0), "x")
    ex, _ = cl.linear_polarizations(*vector_traj.field(0))
    np.testing.assert_allclose(np.abs(f.plus), np.tile(np.abs(ex) / math.sqrt(2), (2, 1)), atol=1e-15)
    weight = np.abs(f.plus).sum(axis=0)
    assert abs(grid256.t[np.argmax(weight)] + 3.5) <= grid256.dt
    assert weight[grid256.t > 3.5].max() < 2e-3 * weight.max()  # sech(2 t1) tail
    with pytest.raises(ValidationError):
        co.number_functional(vector_traj, 0.0, (-20.0, 20.0))
    with pytest.raises(ValidationError):
        co.number_functional(vector_traj, 0.0, (-20.0, 20.0), "z")


# -- covariances ------------------------------------------------------------------

def test_coherent_pulse_variance_is_photon_number():
    grid = make_grid(1024, 20.0)
    traj = cl.propagate_scalar(cl.Envelope(grid, 1 / np.cosh(grid.t)), 0.0, 1e-3)
    f = co.number_functional(traj, 0.0, (-20.0, 20.0))
    assert abs(co.covariance(f, f, grid.dt) - 2.0) < 1e-8
    assert abs(co.covariance(f, f, grid.dt, n0=3.0) - 6.0) < 1e-8


def test_disjoint_functionals_uncorrelated_at_input(pair_traj):
    a = co.number_functional(pair_traj, 0.0, (-20.0, 0.0))
    b = co.number_functional(pair_traj, 0.0, (0.0, 20.0))
    assert co.covariance(a, b, pair_traj.grid.dt) == 0.0


def test_map_at_input_is_diagonal(pair_traj):
    cmap = co.correlation_map(pair_traj, 0.0, co.make_partition(pair_traj.grid, -8, 8, 0.3125))
    off = cmap.c - np.diag(np.diag(cmap.c))
    assert np.abs(off).max() == 0
    # full-variance denominators with normal ordering: C_ii = 1 - n_i / var_i = 0 for a coherent state
    assert np.abs(np.diag(cmap.c)).max() < 1e-12
    map_invariants(cmap)


@pytest.mark.parametrize("traj_name", ["pair_traj", "breather_traj", "vector_traj"])
def test_map_invariants(request, traj_name):
    traj = request.getfixturevalue(traj_name)
    part = co.make_partition(traj.grid, -8, 8, 0.3125)
    for cmap in co.correlation_maps(traj, [2.0, 4.0], part):
        map_invariants(cmap)
        assert cmap.commutator.shape == cmap.cov.shape
        np.testing.assert_array_equal(cmap.commutator, -cmap.commutator.T)


def test_map_matches_green_oracle():
    grid = make_grid(64, 16.0)
    traj = cl.propagate_scalar(cl.init_scalar_pair(SolitonPairSpec(rho=3.0), grid), 2.0, 1e-2)
    part = co.make_partition(grid, -6, 6, 1.0)
    cmap = co.correlation_map(traj, 2.0, part)
    green = fl.build_green_matrix(traj, 2.0)
    for i, (a, b) in enumerate(part.intervals):
        fi = co.number_functional(traj, 2.0, (a, b))
        for j, (c, d) in enumerate(part.intervals[: i + 1]):
            fj = co.number_functional(traj, 2.0, (c, d))
            ref = green.covariance(fi, fj, grid.dt).real
            assert abs(ref - cmap.cov[i, j]) <= 1e-9 * math.sqrt(cmap.cov[i, i] * cmap.cov[j, j])


def test_dead_slots_masked():
    cov = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.0], [0.0, 0.0, 0.0]])
    c, mask = co.normalized(cov, np.array([1.0, 0.5, 0.0]))
    assert mask.tolist() == [False, False, True]
    assert np.all(c[2] == 0) and np.all(c[:, 2] == 0)
    assert c[0, 1] == pytest.approx(0.5 / math.sqrt(2.0))
    assert c[0, 0] == pytest.approx(0.5)


def test_thread_count_does_not_change_maps(pair_traj, monkeypatch):
    monkeypatch.setattr(co, "CHUNK_ROWS", 7)
    part = co.make_partition(pair_traj.grid, -8, 8, 0.3125)
    one = co.correlation_maps(pair_traj, [1.0, 3.0], part, threads=1)
    four = co.correlation_maps(pair_traj, [1.0, 3.0], part, threads=4)
    for a, b in zip(one, four):
        assert np.array_equal(a.c, b.c) and np.array_equal(a.cov, b.cov)


@pytest.mark.parametrize("n0", [0.5, 2.0])
def test_fluctuation_scale_cancels(pair_traj, n0):
    part = co.make_partition(pair_traj.grid, -8, 8, 0.3125)
    base = co.correlation_map(pair_traj, 4.0, part)
    scaled = co.correlation_map(pair_traj, 4.0, part, n0=n0)
    assert np.abs(base.c - scaled.c).max() < 1e-12
    np.testing.assert_allclose(scaled.cov, n0 * base.cov, rtol=1e-13)


# -- pair correlations --------------------------------------------------------------

def test_pair_uncorrelated_at_input(pair_traj, breather_traj):
    for traj in (pair_traj, breather_traj):
        p = co.pair_correlation(traj, 0.0)
        assert abs(p.c12) < 1e-9 and p.resolved
        assert abs(p.boundary) <= traj.grid.dt


@pytest.mark.parametrize("traj_name", ["pair_traj", "breather_traj"])
def test_conservation_shortcut_matches_direct(request, traj_name):
    traj = request.getfixturevalue(traj_name)
    zs = [0.5, 2.0, 4.0]
    fast = co.pair_correlations(traj, zs)
    slow = co.pair_correlations(traj, zs, use_conservation=False)
    for a, b in zip(fast, slow):
        assert abs(a.c12 - b.c12) < 1e-9
        np.testing.assert_allclose(a.cov, b.cov, rtol=0, atol=1e-9 * max(a.cov))


def test_symmetric_pair_has_equal_variances(breather_traj):
    for p in co.pair_correlations(breather_traj, [1.0, 2.5, 4.0], use_conservation=False):
        v1, v2, _ = p.cov
        assert abs(v1 - v2) / v1 < 1e-6


def test_total_number_variance_is_invariant(pair_traj, vector_traj):
    for traj in (pair_traj, vector_traj):
        grid = traj.grid
        comps = ("u", "v") if traj.is_vector else (None,)
        n_total = sum(np.sum(np.abs(f) ** 2) for f in traj.field(0)) * grid.dt
        for z in (0.0, 2.0, 4.0):
            k = traj.index_at(z)
            row = sum(co.number_rows(traj.field(k), [(0, grid.n)], c) for c in comps)
            back = fl.backpropagate_arrays(traj, [k], [row])[0]
            var = co.covariance_matrix(back, grid.dt)[0][0, 0]
            assert abs(var - n_total) / n_total < 1e-6


def test_window_mode(pair_traj):
    p = co.pair_correlation(pair_traj, 4.0, mode="window", window=4.0)
    assert -1 <= p.c12 <= 1
    with pytest.raises(ValidationError):
        co.pair_correlation(pair_traj, 4.0, mode="window")
    with pytest.raises(ValidationError):
        co.pair_correlation(pair_traj, 4.0, mode="thirds")


def test_merged_pulses_fall_back_to_centre(grid256):
    traj = cl.propagate_scalar(cl.init_scalar_pair(SolitonPairSpec(1.0, 0.0, 0.0), grid256), 0.5, 1e-2)
    p = co.pair_correlation(traj, 0.5)
    assert not p.resolved
    assert abs(p.boundary) <= grid256.dt


# -- polarization -------------------------------------------------------------------

def test_polarization_uncorrelated_at_input(vector_traj):
    for mode in ("total", "split"):
        assert abs(co.polarization_pair_correlation(vector_traj, 0.0, mode=mode).c12) < 1e-9
    with pytest.raises(ValidationError):
        co.polarization_pair_correlation(vector_traj, 0.0, mode="bogus")


def test_polarization_shortcut_matches_direct(vector_traj):
    a = co.polarization_pair_correlations(vector_traj, [1.0, 4.0])
    b = co.polarization_pair_correlations(vector_traj, [1.0, 4.0], use_conservation=False)
    for x, y in zip(a, b):
        assert abs(x.c12 - y.c12) < 1e-9


def test_polarization_needs_vector(pair_traj):
    with pytest.raises(ValidationError):
        co.polarization_pair_correlations(pair_traj, [0.0])


def test_empty_component_is_uncorrelated(grid256):
    env = cl.init_scalar_pair(SolitonPairSpec(), grid256)
    zero = cl.Envelope(grid256, np.zeros(grid256.n, dtype=complex))
    traj = cl.propagate_vector(env, zero, 2.0, 1e-2, VectorPairSpec(a_coeff=1.0, b_coeff=0.0))
    k = traj.n_steps
    f = traj.field(k)
    rows = np.concatenate([co.number_rows(f, [(0, grid256.n)], "u"), co.number_rows(f, [(0, grid256.n)], "v")])
    cov = co.covariance_matrix(fl.backpropagate_arrays(traj, [k], [rows])[0], grid256.dt)[0]
    assert cov[0, 1] == 0.0 and cov[1, 1] == 0.0
    c, mask = co.normalized(cov, None)
    assert c[0, 1] == 0.0 and mask[1]
