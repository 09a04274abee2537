import numpy as np
import pytest

from timeless_semiclassics.errors import BudgetError, ValidationError
from timeless_semiclassics.models import homogeneous_geodesic, make_free_particle_model, make_ring_model
from timeless_semiclassics.oracle import (
    LatticeSpec,
    ProductStateSpec,
    SlitLattice,
    TubeSelector,
    WindingSelector,
    clustering_check,
    compare_ring,
    hartle_check,
    integrate_geodesic_ode,
    lattice_clustering_check,
    lattice_kernel,
    lattice_state,
    line_box_state,
    line_lattice_kernel,
    restricted_lattice_kernel,
    ring_lattice,
    transfer_unitarity,
    winding_partition,
)


def _g0_h():
    g0 = np.array([[1.2, 0.1, 0.0], [0.1, 0.9, 0.2], [0.0, 0.2, 1.1]])
    h = np.array([[0.2, -0.1, 0.05], [-0.1, 0.3, 0.0], [0.05, 0.0, -0.15]])
    return g0, h


def test_transfer_matrix_is_unitary():
    lat = LatticeSpec(sites=128, slices=10, dt=0.1, hbar=0.05)
    assert transfer_unitarity(lat) < 1e-14
    assert np.sum(np.abs(lattice_state(lat, 5)) ** 2) == pytest.approx(1.0, abs=1e-12)


def test_lattice_budget_and_shape_checks():
    with pytest.raises(BudgetError) as info:
        LatticeSpec(sites=20_000, slices=4, dt=0.25, hbar=1e-4)
    assert info.value.details["sites"] == 20_000
    with pytest.raises(BudgetError):
        SlitLattice(sites=2048, box=4.0, slices=10, dt=0.1, hbar=0.1, a=1.0)
    with pytest.raises(ValidationError):
        LatticeSpec(sites=1, slices=4, dt=0.25, hbar=1.0)


def test_ring_lattice_has_even_sites_and_matches_duration():
    model = make_ring_model(hbar=0.1, duration=2.0)
    lat = ring_lattice(model)
    assert lat.sites % 2 == 0 and lat.sites == 2 * int(np.ceil(1.75 * np.pi / 0.1))
    assert lat.duration == pytest.approx(2.0)
    assert lat.site_of(np.pi) == lat.sites // 2


def test_lattice_kernel_is_symmetric():
    lat = ring_lattice(make_ring_model(hbar=0.2))
    assert lattice_kernel(lat, 3, 17) == pytest.approx(lattice_kernel(lat, 17, 3), abs=1e-14)


def test_winding_classes_partition_the_full_sum():
    lat = ring_lattice(make_ring_model(hbar=0.5))
    for qi, qf in ((0, lat.sites // 2), (4, 1)):
        parts = winding_partition(lat, qi, qf)
        assert len(parts) == 7
        assert sum(parts.values()) == pytest.approx(lattice_kernel(lat, qi, qf), abs=1e-13)


def test_winding_outside_the_copy_box_is_empty():
    lat = ring_lattice(make_ring_model(hbar=0.5))
    assert restricted_lattice_kernel(lat, 0, 3, WindingSelector(5, wmax=2)) == 0j


def test_tube_selector_prefers_its_seed_class():
    lat = ring_lattice(make_ring_model(hbar=0.1), band_velocity=8 * np.pi)
    quarter = lat.sites // 4
    short = restricted_lattice_kernel(lat, 0, quarter, WindingSelector(0))
    long = restricted_lattice_kernel(lat, 0, quarter, WindingSelector(-1))
    for seed, own, other in ((lambda s: np.pi / 2 * s, short, long), (lambda s: -1.5 * np.pi * s, long, short)):
        amp = restricted_lattice_kernel(lat, 0, quarter, TubeSelector(seed, 1.0))
        assert abs(amp - own) < abs(amp - other)


def test_empty_tube_window_is_rejected():
    lat = ring_lattice(make_ring_model(hbar=0.5))
    with pytest.raises(ValidationError):
        restricted_lattice_kernel(lat, 0, 1, TubeSelector(lambda s: 100.0, 0.1))


def test_line_kernel_matches_a_wide_box():
    dx, T, hbar, n = 0.05, 1.0, 0.1, 4096
    box = line_box_state(n, dx, T, hbar, start=n // 2)
    x = dx * (np.arange(n) - n // 2)
    near = np.abs(x) < 2
    exact = line_lattice_kernel(x[near], T, hbar, dx)
    assert np.max(np.abs(box[near] - exact)) < 1e-3 * np.max(np.abs(exact))


def test_line_kernel_approaches_the_continuum():
    T, hbar = 1.0, 0.1
    x = np.array([0.0, 0.3, 0.7])
    cont = np.exp(1j * x**2 / (2 * hbar * T)) / np.sqrt(2j * np.pi * hbar * T)
    lat = line_lattice_kernel(x, T, hbar, 0.01) / 0.01
    assert np.allclose(lat, cont, rtol=5e-2)


def test_slit_blocks_probability():
    lat = SlitLattice(sites=128, box=8.0, slices=20, dt=0.05, hbar=0.2, a=1.0)
    psi, norms = lat.state((-1.0, 0.0))
    assert norms[-1] < 1.0
    assert np.all(np.diff(norms) <= 1e-12)
    assert np.all(psi[lat.obstacle_mask()] == 0)


def test_geodesic_ode_matches_the_closed_form():
    g0, h = _g0_h()
    exact = homogeneous_geodesic(g0, h, 1.0).g
    assert np.max(np.abs(integrate_geodesic_ode(g0, h, 1.0).g - exact)) < 1e-10


def test_geodesic_ode_is_fourth_order():
    g0, h = _g0_h()
    h = 3 * h
    exact = homogeneous_geodesic(g0, h, 1.0).g
    errs = [np.max(np.abs(integrate_geodesic_ode(g0, h, 1.0, steps=k).g - exact)) for k in (100, 200, 400)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(np.abs(orders - 4) < 0.3)


def test_geodesic_ode_trajectory_and_limits():
    g0, h = _g0_h()
    ts, traj = integrate_geodesic_ode(g0, h, 0.5, steps=100, trajectory=True)
    assert len(ts) == len(traj) == 101
    assert np.array_equal(traj[0].g, g0)
    assert integrate_geodesic_ode(g0, h, 0.0).g.tolist() == g0.tolist()
    with pytest.raises(ValidationError):
        integrate_geodesic_ode(g0, h, 1.0, steps=99)


def test_hartle_two_branch_saturation():
    c = [1 / np.sqrt(2), 1 / np.sqrt(2)]
    rep = hartle_check(ProductStateSpec(c, 2), 1)
    assert rep.norm_sq == pytest.approx(0.125, abs=1e-15)
    assert rep.saturated and rep.formula_holds and rep.reading == "norm_squared"


def test_hartle_formula_for_uneven_branches():
    c = np.sqrt([0.1, 0.2, 0.3, 0.4])
    for n in (1, 4):
        for N in (1, 5, 9):
            rep = hartle_check(ProductStateSpec(c, N), n, chunk=1000)
            p = c[n - 1] ** 2
            assert rep.norm_sq == pytest.approx(p * (1 - p) / N, abs=1e-12)
            assert rep.within_bound and not rep.saturated


def test_hartle_validation():
    with pytest.raises(ValidationError):
        ProductStateSpec([0.5, 0.5], 2)
    with pytest.raises(ValidationError):
        ProductStateSpec([1.0], 13)
    with pytest.raises(ValidationError):
        ProductStateSpec(np.full(5, np.sqrt(0.2)), 2)
    with pytest.raises(ValidationError):
        hartle_check(ProductStateSpec([1.0], 3), 2)


def test_free_product_clusters():
    a = make_free_particle_model(hbar=0.3)
    b = make_free_particle_model(mass=2.0, hbar=0.3)
    rep = clustering_check(a, b, ((a.point([0.0]), a.point([0.4])), (b.point([0.1]), b.point([-0.3]))))
    assert rep.residual < 1e-6


def test_lattice_product_clusters():
    lat = ring_lattice(make_ring_model(hbar=0.5))
    assert lattice_clustering_check(lat, lat, (0, 2), (5, 9)).residual < 1e-12


def test_ring_comparison_rows():
    rows = compare_ring(make_ring_model(), 0.0, np.pi, [0.2, 0.1])
    assert [r["hbar"] for r in rows] == [0.2, 0.1]
    assert rows[1]["rel_error"] < rows[0]["rel_error"] < 0.1
