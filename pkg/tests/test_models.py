import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from timeless_semiclassics.errors import ForbiddenRegionError, GeometryError, ObstacleError, ValidationError
from timeless_semiclassics.models import (
    ConfigPoint,
    HomogeneousMetricPoint,
    SegmentObstacle,
    build_jacobi_metric,
    eval_action,
    homogeneous_geodesic,
    jacobi_distance,
    make_free_particle_model,
    make_gravity_model,
    make_jacobi_oscillator_model,
    make_oscillator_model,
    make_plane_model,
    make_product_model,
    make_ring_model,
    make_slit_model,
    model_from_dict,
    superspace_gram,
    superspace_inner_product,
    sym_to_vec,
    vec_to_sym,
    wrap_angle,
)

finite = st.floats(-50, 50, allow_nan=False)


def _spd(rng):
    a = rng.normal(size=(3, 3))
    g = a @ a.T + np.eye(3)
    return 0.5 * (g + g.T)


@given(finite)
def test_wrap_angle_lands_in_half_open_interval(x):
    w = wrap_angle(x)
    assert -np.pi <= w < np.pi
    assert np.isclose(np.cos(w), np.cos(x), atol=1e-9)


@given(st.lists(finite, min_size=6, max_size=6))
def test_sym_vector_round_trip(v):
    v = np.array(v)
    assert np.array_equal(sym_to_vec(vec_to_sym(v)), v)


def test_ring_point_is_canonicalized():
    p = ConfigPoint([np.pi], chart="ring")
    assert p.coords[0] == -np.pi
    assert ConfigPoint([3 * np.pi / 2], chart="ring").coords[0] == pytest.approx(-np.pi / 2)


def test_sym3_point_must_be_positive_definite():
    with pytest.raises(GeometryError):
        ConfigPoint(sym_to_vec(np.diag([1.0, -1.0, 1.0])), chart="sym3")
    with pytest.raises(ValidationError):
        ConfigPoint([1.0, 2.0], chart="sym3")


def test_unknown_chart_rejected():
    with pytest.raises(ValidationError):
        ConfigPoint([0.0], chart="sphere")


def test_jacobi_metric_scales_base_metric():
    model = make_jacobi_oscillator_model(energy=1.0, omega=1.0)
    h = model.jacobi_metric(np.array([0.5, 0.0]))
    assert np.allclose(h, 2 * (1.0 - 0.125) * np.eye(2))


def test_jacobi_metric_rejects_forbidden_points():
    model = make_jacobi_oscillator_model(energy=1.0, omega=1.0)
    with pytest.raises(ForbiddenRegionError):
        model.jacobi_metric(np.array([2.0, 0.0]))
    with pytest.raises(ForbiddenRegionError):
        build_jacobi_metric(model.metric, model.potential, 1.0, region=[[0.0, 0.0], [1.5, 0.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_superspace_inner_product_is_symmetric_and_positive(seed):
    rng = np.random.default_rng(seed)
    g = _spd(rng)
    u = rng.normal(size=(3, 3))
    u = u + u.T
    v = rng.normal(size=(3, 3))
    v = v + v.T
    assert superspace_inner_product(g, u, v) == pytest.approx(superspace_inner_product(g, v, u), rel=1e-10)
    assert superspace_inner_product(g, u, u) > 0


def test_gram_matrix_matches_inner_product():
    rng = np.random.default_rng(1)
    g = _spd(rng)
    u = rng.normal(size=(3, 3))
    u = u + u.T
    du = sym_to_vec(u)
    gram = superspace_gram(sym_to_vec(g))
    assert du @ gram @ du == pytest.approx(superspace_inner_product(g, u, u), rel=1e-10)


def test_geodesic_at_zero_is_the_start():
    g0 = np.diag([1.0, 2.0, 3.0])
    assert np.array_equal(homogeneous_geodesic(g0, np.eye(3), 0.0).g, g0)


def test_pure_trace_geodesic_is_a_power_law():
    g0 = np.eye(3)
    for t in (0.3, 1.0, 2.0):
        assert np.allclose(homogeneous_geodesic(g0, 0.8 * g0, t).g, (1 + 0.6 * t) ** (4 / 3) * g0, atol=1e-12)


def test_homogeneous_metric_point_validation():
    with pytest.raises(ValidationError):
        HomogeneousMetricPoint(np.eye(2))
    with pytest.raises(ValidationError):
        HomogeneousMetricPoint(np.array([[1.0, 0.5, 0], [0, 1, 0], [0, 0, 1]]))
    with pytest.raises(GeometryError):
        HomogeneousMetricPoint(-np.eye(3))


def test_segment_obstacle_blocking():
    wall = SegmentObstacle((0.0, -1.0), (0.0, 1.0))
    assert wall.blocks([-1, 0], [1, 0])
    assert not wall.blocks([-1, 2], [1, 2])
    # passing exactly through a tip is allowed (endpoints are excluded)
    assert not wall.blocks([-1, 1], [1, 1])
    assert wall.blocks([0, -2], [0, 2])
    assert wall.contains([0, 0.5])
    assert not wall.contains([0, 1.0])


def test_slit_model_rejects_points_on_the_slit():
    model = make_slit_model(a=1.0)
    with pytest.raises(ObstacleError):
        model.check_point(model.point([0.0, 0.2]))
    with pytest.raises(ValidationError):
        make_slit_model(a=0.0)


def test_distance_between_different_tags_is_infinite():
    model = make_ring_model(with_weg=True)
    assert jacobi_distance(model, [0.0], [0.1], 0, 1) == np.inf
    assert jacobi_distance(model, [0.0], [0.1], 0, 0) == pytest.approx(0.1)


def test_ring_distance_wraps():
    model = make_ring_model()
    assert jacobi_distance(model, np.array([3.0]), np.array([-3.0])) == pytest.approx(2 * np.pi - 6.0)


def test_straight_free_path_action():
    model = make_free_particle_model(mass=2.0, duration=0.5)
    q = np.linspace(0, 1.5, 11)[:, None]
    assert eval_action(model, q) == pytest.approx(0.5 * 2.0 * 1.5**2 / 0.5)


def test_plane_action_is_length():
    model = make_plane_model()
    q = np.linspace([0, 0], [3, 4], 7)
    assert eval_action(model, q) == pytest.approx(5.0)


def test_action_rejects_obstructed_path():
    model = make_slit_model()
    with pytest.raises(ObstacleError):
        eval_action(model, np.linspace([-1, 0], [1, 0], 5))


def test_model_dict_round_trip():
    for model in (
        make_ring_model(hbar=0.3, with_weg=True),
        make_oscillator_model(omega=1.3),
        make_slit_model(a=0.5),
        make_gravity_model(hbar=0.2),
        make_product_model(make_ring_model(), make_ring_model()),
    ):
        again = model_from_dict(model.to_dict())
        assert again.to_dict() == model.to_dict()
        assert again.dimension == model.dimension


def test_model_dict_rejects_unknown_keys():
    with pytest.raises(ValidationError) as info:
        model_from_dict({"kind": "ring", "hbar": 1.0, "radius": 2.0})
    assert "radius" in info.value.details["fields"]
    with pytest.raises(ValidationError):
        model_from_dict({"kind": "torus"})


def test_product_model_charts():
    torus = make_product_model(make_ring_model(), make_ring_model())
    assert torus.chart == "torus"
    assert set(torus.windings) == {(0, 0), (0, -1), (-1, 0), (-1, -1)}
    with pytest.raises(ValidationError):
        make_product_model(make_ring_model(), make_free_particle_model())
    with pytest.raises(ValidationError):
        make_product_model(make_free_particle_model(duration=1.0), make_free_particle_model(duration=2.0))


def test_model_parameter_validation():
    with pytest.raises(ValidationError):
        make_ring_model(hbar=0.0)
    with pytest.raises(ValidationError):
        make_free_particle_model(duration=-1.0)


def test_with_hbar_keeps_everything_else():
    model = make_oscillator_model(omega=0.7)
    other = model.with_hbar(0.01)
    assert other.hbar == 0.01 and other.params["omega"] == 0.7 and model.hbar == 1.0
