import dataclasses

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from timeless_semiclassics.errors import ValidationError
from timeless_semiclassics.extremal import enumerate_extremals, solve_extremal
from timeless_semiclassics.models import (
    homogeneous_geodesic,
    make_free_particle_model,
    make_gravity_model,
    make_jacobi_oscillator_model,
    make_oscillator_model,
    make_plane_model,
    make_ring_model,
    sym_to_vec,
)
from timeless_semiclassics.oracle import LatticeSpec, lattice_state
from timeless_semiclassics.semiclassics import (
    KernelValue,
    born_density,
    check_composition,
    density,
    deparametrized_kernel,
    interference_intensity,
    kernel_between,
    mixed_hessian_fd,
    screen_conservation,
    semiclassical_kernel,
    van_vleck_density_ratio,
    van_vleck_fd,
    van_vleck_jacobi,
)

component = st.floats(-10, 10, allow_nan=False)


def test_free_particle_vanvleck_is_mass_over_duration():
    model = make_free_particle_model(mass=2.0, duration=0.5)
    p = solve_extremal(model, model.point([0.1]), model.point([0.9]))
    assert van_vleck_fd(model, p).value == pytest.approx(4.0, rel=1e-6)
    assert van_vleck_jacobi(model, p).value == pytest.approx(4.0, rel=1e-9)


def test_oscillator_vanvleck_closed_form():
    model = make_oscillator_model(mass=1.5, omega=1.2, duration=1.0)
    p = solve_extremal(model, model.point([0.3]), model.point([1.0]))
    exact = 1.5 * 1.2 / np.sin(1.2)
    assert van_vleck_jacobi(model, p).value == pytest.approx(exact, rel=1e-6)


def test_plane_vanvleck_is_inverse_square_length():
    model = make_plane_model()
    p = solve_extremal(model, model.point([0.0, 0.0]), model.point([3.0, 4.0]))
    fd = van_vleck_fd(model, p)
    assert fd.value == pytest.approx(1 / 25, rel=1e-6)
    assert van_vleck_jacobi(model, p).value == pytest.approx(fd.value, rel=1e-3)
    assert fd.error_estimate < 1e-6


def test_gravity_pure_trace_methods_agree():
    model = make_gravity_model()
    g1 = homogeneous_geodesic(np.eye(3), 4 / 3 * np.eye(3), 1.0).g
    p = solve_extremal(model, model.point(sym_to_vec(np.eye(3))), model.point(sym_to_vec(g1)))
    assert np.allclose(g1, 2 ** (4 / 3) * np.eye(3))
    assert van_vleck_fd(model, p).value == pytest.approx(van_vleck_jacobi(model, p).value, rel=1e-3)


def test_mixed_hessian_is_symmetric_under_reversal():
    model = make_plane_model()
    fwd = solve_extremal(model, model.point([0.0, 0.0]), model.point([3.0, 4.0]))
    back = solve_extremal(model, model.point([3.0, 4.0]), model.point([0.0, 0.0]))
    a = mixed_hessian_fd(model, fwd, 1e-3)
    b = mixed_hessian_fd(model, back, 1e-3)
    assert np.allclose(a, b.T, rtol=1e-4, atol=1e-4 * np.max(np.abs(a)))


def test_vanvleck_matches_density_ratio():
    for model in (make_free_particle_model(duration=0.7), make_oscillator_model(omega=1.1)):
        p = solve_extremal(model, model.point([0.2]), model.point([0.8]))
        ratio = van_vleck_density_ratio(model, p)
        assert ratio == pytest.approx(van_vleck_jacobi(model, p).value, rel=0.05)


def test_ring_kernel_sums_both_windings():
    model = make_ring_model(hbar=1.0)
    k = kernel_between(model, model.point([0.0]), model.point([np.pi]))
    assert len(k.contributions) == 2
    for label, amp in k.contributions:
        assert np.angle(amp) == pytest.approx(np.angle(np.exp(1j * np.pi**2 / 2)), abs=1e-9)
    assert abs(k.total) ** 2 == pytest.approx(4.0, rel=1e-9)


def test_single_path_intensity_is_the_vanvleck():
    model = make_oscillator_model(omega=0.9)
    k = kernel_between(model, model.point([0.0]), model.point([0.5]))
    rep = interference_intensity(k)
    assert rep.cross == 0.0
    assert rep.total == pytest.approx(0.9 / np.sin(0.9), rel=1e-6)


def test_intensity_decomposition_matches_modulus():
    model = make_ring_model(hbar=0.3)
    for theta in (0.4, 1.7, 2.9):
        k = kernel_between(model, model.point([0.0]), model.point([theta]))
        rep = interference_intensity(k)
        assert rep.total == pytest.approx(abs(k.total) ** 2, abs=1e-12)
        assert rep.diagonal + rep.cross == pytest.approx(rep.total, abs=1e-12)


def test_destructive_ring_point():
    model = make_ring_model(hbar=0.1)
    k = kernel_between(model, model.point([0.0]), model.point([np.pi - 0.05]))
    assert interference_intensity(k).total < 1e-6


def test_empty_path_set_is_rejected():
    with pytest.raises(ValidationError):
        semiclassical_kernel(make_ring_model(), [])


def test_explicit_vanvlecks_override_computation():
    model = make_ring_model()
    paths = enumerate_extremals(model, model.point([0.0]), model.point([np.pi]))
    k = semiclassical_kernel(model, paths, vanvlecks=[0.5, 0.5])
    assert interference_intensity(k).total == pytest.approx(2.0, rel=1e-12)


@given(component, component, component, component)
def test_born_density_is_multiplicative(a, b, c, d):
    z1, z2 = complex(a, b), complex(c, d)
    assert density(z1 * z2) == pytest.approx(density(z1) * density(z2), rel=1e-12, abs=1e-300)


def test_born_density_of_unit_kernel():
    k = KernelValue(total=np.exp(0.3j), contributions=[], hbar=1.0)
    assert born_density(k).value == pytest.approx(1.0)


def test_free_particle_composition_is_exact():
    model = make_free_particle_model(mass=1.3, duration=1.0)
    p = solve_extremal(model, model.point([0.0]), model.point([1.0]))
    rep = check_composition(model, p, p.n_samples // 3)
    assert rep.residual < 1e-8
    assert rep.momentum_defect < 1e-6


def test_oscillator_composition_at_forty_percent():
    model = make_oscillator_model(omega=1.0)
    p = solve_extremal(model, model.point([0.3]), model.point([1.0]))
    rep = check_composition(model, p, int(round(0.4 * (p.n_samples - 1))))
    assert rep.residual < 1e-6


def test_jacobi_model_composition():
    model = make_jacobi_oscillator_model()
    p = solve_extremal(model, model.point([-0.5, 0.1]), model.point([0.6, 0.3]))
    assert check_composition(model, p, p.n_samples // 2).residual < 1e-6


def test_composition_rejects_endpoint_split():
    model = make_free_particle_model()
    p = solve_extremal(model, model.point([0.0]), model.point([1.0]))
    with pytest.raises(ValidationError):
        check_composition(model, p, 0)


def test_deparametrized_kernel_matches_fixed_duration_kernel():
    model = make_free_particle_model(duration=1.0, hbar=0.2)
    direct = kernel_between(dataclasses.replace(model, duration=0.8), model.point([0.1]), model.point([0.7]))
    events = deparametrized_kernel(model, (0.5, [0.1]), (1.3, [0.7]))
    assert events.total == pytest.approx(direct.total, rel=1e-9)
    assert abs(events.total) ** 2 == pytest.approx(1 / 0.8, rel=1e-9)
    with pytest.raises(ValidationError):
        deparametrized_kernel(model, (1.0, [0.0]), (1.0, [0.5]))


def test_lattice_screens():
    lat = LatticeSpec(sites=64, slices=8, dt=0.1, hbar=0.2)
    prob = np.abs(lattice_state(lat, 0)) ** 2
    assert np.sum(prob) == pytest.approx(1.0, abs=1e-10)
    assert 0 < np.sum(prob[::2]) < 1


def test_screen_conservation_edge_cases():
    model = make_free_particle_model(hbar=0.1)
    assert screen_conservation(model, model.point([0.0]), [], []) == 0.0
    with pytest.raises(ValidationError):
        screen_conservation(model, model.point([0.0]), [model.point([0.1])], [-1.0], cell=0.1)
    with pytest.raises(ValidationError):
        screen_conservation(model, model.point([0.0]), [model.point([0.1])], [1.0])


def test_screen_with_explicit_amplitude():
    model = make_free_particle_model()
    pts = [model.point([x]) for x in (0.0, 1.0)]
    total = screen_conservation(model, model.point([0.0]), pts, [0.25, 0.5], amplitude=lambda s, p: 1.0)
    assert total == pytest.approx(0.75)
