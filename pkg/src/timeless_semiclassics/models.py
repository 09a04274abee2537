"""Configuration-space models.

A model is a finite-dimensional configuration space with a metric, a
potential and an action on discretized curves.  Two kinds of action are
supported:

``quadratic_lagrangian``
    S = sum 1/2 dq^T g(qbar) dq / dt - V(qbar) dt over a fixed duration.
``jacobi_length``
    S = sum sqrt(dq^T h(qbar) dq) with the Jacobi metric h = 2 (E - V) g.

Metric and potential callables are vectorized: they accept an array of
shape ``(..., d)`` and return ``(..., d, d)`` and ``(...,)`` respectively.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ForbiddenRegionError, GeometryError, ObstacleError, ValidationError

logger = logging.getLogger(__name__)

ACTION_KINDS = ("jacobi_length", "quadratic_lagrangian")
CHARTS = ("euclidean", "ring", "torus", "sym3")
PERIODIC_CHARTS = ("ring", "torus")

# index pairs of the 6 independent components of a symmetric 3x3 matrix
SYM_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


def wrap_angle(x):
    """Map angles into the canonical range [-pi, pi)."""
    return (np.asarray(x, dtype=float) + np.pi) % (2 * np.pi) - np.pi


def sym_to_vec(g):
    g = np.asarray(g, dtype=float)
    return np.stack([g[..., a, b] for a, b in SYM_INDEX], axis=-1)


def vec_to_sym(v):
    v = np.asarray(v, dtype=float)
    g = np.zeros(v.shape[:-1] + (3, 3))
    for k, (a, b) in enumerate(SYM_INDEX):
        g[..., a, b] = v[..., k]
        g[..., b, a] = v[..., k]
    return g


def _sym_basis():
    basis = np.zeros((6, 3, 3))
    for k, (a, b) in enumerate(SYM_INDEX):
        basis[k, a, b] = 1.0
        basis[k, b, a] = 1.0
    return basis


_BASIS = _sym_basis()


# ---------------------------------------------------------------------------
# points


@dataclass(frozen=True)
class ConfigPoint:
    """A point of configuration space.

    Parameters
    ----------
    coords : array_like
        Coordinates in the model chart.  Periodic charts are canonicalized
        into [-pi, pi).  The ``sym3`` chart stores the 6 independent entries
        of a positive-definite symmetric 3x3 matrix.
    chart : str
        One of ``euclidean``, ``ring``, ``torus``, ``sym3``.
    tag : int, optional
        Discrete label of a disconnected component (which-path register).
    """

    coords: np.ndarray
    chart: str = "euclidean"
    tag: Optional[int] = None

    def __post_init__(self):
        if self.chart not in CHARTS:
            raise ValidationError(f"unknown chart {self.chart!r}", field="chart")
        c = np.atleast_1d(np.array(self.coords, dtype=float))
        if c.ndim != 1:
            raise ValidationError("coords must be a flat vector", field="coords")
        if self.chart in PERIODIC_CHARTS:
            c = wrap_angle(c)
        if self.chart == "sym3":
            if c.size != 6:
                raise ValidationError("sym3 chart needs 6 coordinates", field="coords")
            if np.any(np.linalg.eigvalsh(vec_to_sym(c)) <= 0):
                raise GeometryError("metric point is not positive-definite", coords=c.tolist())
        if self.tag is not None:
            object.__setattr__(self, "tag", int(self.tag))
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)

    @property
    def dim(self):
        return self.coords.size

    def to_dict(self):
        out = {"coords": self.coords.tolist(), "chart": self.chart}
        if self.tag is not None:
            out["tag"] = self.tag
        return out


@dataclass(frozen=True)
class HomogeneousMetricPoint:
    """A spatially homogeneous 3-metric (symmetric positive-definite 3x3)."""

    g: np.ndarray

    def __post_init__(self):
        g = np.array(self.g, dtype=float)
        if g.shape != (3, 3):
            raise ValidationError("homogeneous metric must be 3x3", field="g")
        if np.max(np.abs(g - g.T)) > 1e-12 * max(1.0, np.max(np.abs(g))):
            raise ValidationError("homogeneous metric must be symmetric", field="g")
        g = 0.5 * (g + g.T)
        if np.any(np.linalg.eigvalsh(g) <= 0):
            raise GeometryError("homogeneous metric is not positive-definite")
        g.flags.writeable = False
        object.__setattr__(self, "g", g)

    def as_point(self):
        return ConfigPoint(sym_to_vec(self.g), chart="sym3")


# ---------------------------------------------------------------------------
# obstacles


def _cross(a, b):
    return a[0] * b[1] - a[1] * b[0]


@dataclass(frozen=True)
class SegmentObstacle:
    """Open straight segment removed from the plane (endpoints excluded)."""

    a: tuple
    b: tuple

    @property
    def endpoints(self):
        return np.array(self.a, dtype=float), np.array(self.b, dtype=float)

    def blocks(self, p, q, tol=1e-12):
        """True if the closed segment [p, q] meets the open obstacle."""
        a, b = self.endpoints
        p = np.asarray(p, dtype=float)
        q = np.asarray(q, dtype=float)
        r = q - p
        s = b - a
        denom = _cross(r, s)
        ap = a - p
        if abs(denom) < 1e-14 * max(1.0, np.linalg.norm(r) * np.linalg.norm(s)):
            if abs(_cross(ap, s)) > tol * max(1.0, np.linalg.norm(s)):
                return False
            # collinear: overlap of the open obstacle interval with [p, q]
            ss = np.dot(s, s)
            t0 = np.dot(p - a, s) / ss
            t1 = np.dot(q - a, s) / ss
            lo, hi = min(t0, t1), max(t0, t1)
            return hi > tol and lo < 1 - tol
        t = _cross(ap, s) / denom
        u = _cross(ap, r) / denom
        return (-tol <= t <= 1 + tol) and (tol < u < 1 - tol)

    def contains(self, x, tol=1e-12):
        a, b = self.endpoints
        x = np.asarray(x, dtype=float)
        s = b - a
        if abs(_cross(x - a, s)) > tol * np.linalg.norm(s):
            return False
        u = np.dot(x - a, s) / np.dot(s, s)
        return tol < u < 1 - tol

    def to_dict(self):
        return {"a": list(self.a), "b": list(self.b)}


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class JacobiMetric:
    """Conformally rescaled metric h(q) = 2 (E - V(q)) g(q)."""

    base_metric: Callable
    potential: Callable
    energy: float

    def conformal_factor(self, q):
        f = 2.0 * (self.energy - np.asarray(self.potential(np.asarray(q, dtype=float))))
        if np.any(f <= 0):
            raise ForbiddenRegionError(
                "E - V <= 0: point outside the classically accessible region",
                coords=np.asarray(q, dtype=float).tolist(),
            )
        return f

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        return self.conformal_factor(q)[..., None, None] * self.base_metric(q)


def build_jacobi_metric(g, V, E, region=None):
    """Build the Jacobi metric h = 2 (E - V) g.

    Parameters
    ----------
    g, V : callable
        Vectorized metric and potential.
    E : float
        Energy.
    region : array_like, optional
        Sample points ``(n, d)`` of the declared accessible region.  When
        given, the conformal factor must be positive at every sample.

    Raises
    ------
    ForbiddenRegionError
        If E - V <= 0 at a declared sample, or later when h is evaluated at
        a forbidden point.
    """
    h = JacobiMetric(base_metric=g, potential=V, energy=float(E))
    if region is not None:
        region = np.atleast_2d(np.asarray(region, dtype=float))
        h.conformal_factor(region)
    return h


def superspace_inner_product(g, u, v):
    """L2 inner product tr(g^-1 u g^-1 v) sqrt(det g) of symmetric matrices."""
    g = g.g if isinstance(g, HomogeneousMetricPoint) else np.asarray(g, dtype=float)
    gu = np.linalg.solve(g, np.asarray(u, dtype=float))
    gv = np.linalg.solve(g, np.asarray(v, dtype=float))
    return float(np.trace(gu @ gv) * np.sqrt(np.linalg.det(g)))


def superspace_gram(q):
    """Gram matrix of the L2 superspace metric in the 6-vector chart."""
    g = vec_to_sym(q)
    gi = np.linalg.inv(g)
    m = np.einsum("...ab,kbc->...kac", gi, _BASIS)
    gram = np.einsum("...kab,...lba->...kl", m, m)
    return gram * np.sqrt(np.linalg.det(g))[..., None, None]


def _sqrt_and_inv_sqrt(g):
    w, u = np.linalg.eigh(g)
    if np.any(w <= 0):
        raise GeometryError("metric is not positive-definite")
    return (u * np.sqrt(w)) @ u.T, (u / np.sqrt(w)) @ u.T


def homogeneous_geodesic(g0, h, t):
    """Closed-form superspace geodesic through g0 with initial velocity h.

    Returns g(t) = g0 exp(A(t) Id + B(t) h_T) where h_T is the g0-traceless
    part of g0^-1 h.  The exponential is evaluated by eigendecomposition of
    the symmetric argument in the g0-orthonormal frame.

    Raises
    ------
    GeometryError
        When the logarithm argument of A(t) vanishes (collapse at finite t).
    """
    g0m = g0.g if isinstance(g0, HomogeneousMetricPoint) else HomogeneousMetricPoint(g0).g
    h = np.asarray(h, dtype=float)
    h = 0.5 * (h + h.T)
    t = float(t)
    if t == 0.0:
        return HomogeneousMetricPoint(g0m)
    s, si = _sqrt_and_inv_sqrt(g0m)
    hs = si @ h @ si
    tr = np.trace(hs)
    ht = hs - tr / 3.0 * np.eye(3)
    n2 = np.trace(ht @ ht)
    arg = (1.0 + t * tr / 4.0) ** 2 + 3.0 / 16.0 * n2 * t * t
    if arg <= 0:
        raise GeometryError("geodesic collapses (volume factor reaches zero)", t=t)
    a_t = 2.0 / 3.0 * np.log(arg)
    if n2 > 1e-30:
        sq = np.sqrt(3.0 * n2)
        b_t = 4.0 / sq * np.arctan2(sq * t, 4.0 + t * tr)
    else:
        b_t = t / (1.0 + t * tr / 4.0)
    m = a_t * np.eye(3) + b_t * ht
    m = 0.5 * (m + m.T)
    w, u = np.linalg.eigh(m)
    g = s @ ((u * np.exp(w)) @ u.T) @ s
    g = 0.5 * (g + g.T)
    if np.any(np.linalg.eigvalsh(g) <= 0):
        raise GeometryError("geodesic lost positive-definiteness", t=t)
    return HomogeneousMetricPoint(g)


def _gravity_exp_map(q0, v, t):
    return sym_to_vec(homogeneous_geodesic(vec_to_sym(q0), vec_to_sym(v), t).g)


# ---------------------------------------------------------------------------
# model container


@dataclass(frozen=True)
class ModelSpec:
    """A finite-dimensional configuration-space model.

    ``duration`` is the fixed parameter length of quadratic-Lagrangian
    models.  ``exp_map`` optionally supplies a closed-form geodesic flow
    ``exp_map(q0, v, t)`` used for shooting.  ``windings`` restricts the
    admissible winding classes on periodic charts.
    """

    name: str
    dimension: int
    metric: Callable
    potential: Callable
    energy: float
    hbar: float
    action_kind: str
    chart: str = "euclidean"
    obstacles: tuple = ()
    duration: float = 1.0
    exp_map: Optional[Callable] = None
    windings: Optional[tuple] = None
    with_weg: bool = False
    detector_angle: Optional[float] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValidationError("dimension must be positive", field="dimension")
        if self.action_kind not in ACTION_KINDS:
            raise ValidationError(f"unknown action kind {self.action_kind!r}", field="action_kind")
        if not self.hbar > 0:
            raise ValidationError("hbar must be positive", field="hbar")
        if self.chart not in CHARTS:
            raise ValidationError(f"unknown chart {self.chart!r}", field="chart")
        if self.action_kind == "quadratic_lagrangian" and not self.duration > 0:
            raise ValidationError("duration must be positive", field="duration")

    @property
    def periodic(self):
        return self.chart in PERIODIC_CHARTS

    @property
    def jacobi_metric(self):
        return build_jacobi_metric(self.metric, self.potential, self.energy)

    def kinetic_metric(self, q):
        """Metric of the energy functional: g (quadratic) or h (Jacobi)."""
        if self.action_kind == "jacobi_length":
            return self.jacobi_metric(q)
        return self.metric(np.asarray(q, dtype=float))

    def point(self, coords, tag=None):
        return ConfigPoint(coords, chart=self.chart, tag=tag)

    def with_hbar(self, hbar):
        params = dict(self.params)
        params["hbar"] = float(hbar)
        return dataclasses.replace(self, hbar=float(hbar), params=params)

    def check_point(self, q):
        if q.dim != self.dimension:
            raise ValidationError(
                f"point has {q.dim} coordinates, model dimension is {self.dimension}",
                field="coords",
            )
        if q.chart != self.chart:
            raise ValidationError(f"point chart {q.chart!r} differs from model chart {self.chart!r}")
        for obs in self.obstacles:
            if obs.contains(q.coords):
                raise ObstacleError("point lies on an obstacle", coords=q.coords.tolist())
        if self.action_kind == "jacobi_length":
            self.jacobi_metric.conformal_factor(q.coords)

    def check_metric(self, q):
        m = np.asarray(self.metric(np.asarray(q, dtype=float)))
        if np.max(np.abs(m - np.swapaxes(m, -1, -2))) > 1e-12 * max(1.0, np.max(np.abs(m))):
            raise GeometryError("metric is not symmetric")
        if np.any(np.linalg.eigvalsh(m) <= 0):
            raise GeometryError("metric is not positive-definite")
        return True

    def to_dict(self):
        return dict(self.params)


def displacement(model, x, y):
    """Chart displacement y - x, wrapped on periodic charts."""
    d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    if model.periodic:
        d = wrap_angle(d)
    return d


def jacobi_distance(model, x, y, tag_x=None, tag_y=None):
    """Local-metric distance between chart points (first-order in |y - x|).

    Uses the Jacobi metric at ``x`` for Jacobi models and the kinetic metric
    otherwise.  Points carrying different discrete tags are infinitely far
    apart.  ``x`` and ``y`` may be batches of shape ``(..., d)``.
    """
    if tag_x is not None and tag_y is not None and tag_x != tag_y:
        return np.inf
    x = np.asarray(x, dtype=float)
    d = displacement(model, x, y)
    g = model.kinetic_metric(x)
    quad = np.einsum("...a,...ab,...b->...", d, np.broadcast_to(g, d.shape + d.shape[-1:]), d)
    return np.sqrt(np.maximum(quad, 0.0))


# ---------------------------------------------------------------------------
# action


def _as_samples(path):
    samples = getattr(path, "samples", path)
    return np.atleast_2d(np.asarray(samples, dtype=float))


def segment_obstruction(model, samples):
    """Index of the first segment touching an obstacle, or None."""
    if not model.obstacles:
        return None
    for k in range(len(samples) - 1):
        for obs in model.obstacles:
            if obs.blocks(samples[k], samples[k + 1]):
                return k
    return None


def eval_action(model, path):
    """Discrete action of a sampled curve.

    Parameters
    ----------
    model : ModelSpec
    path : ExtremalPath or array_like
        Samples of shape ``(n, d)`` with n >= 2, uniform in the parameter.
        Periodic coordinates are given on the universal cover (unwrapped).

    Returns
    -------
    float
        Jacobi length (``jacobi_length``) or the midpoint-rule Lagrangian
        action over ``model.duration`` (``quadratic_lagrangian``).
    """
    q = _as_samples(path)
    if q.shape[0] < 2:
        raise ValidationError("a path needs at least 2 samples", field="samples")
    if q.shape[1] != model.dimension:
        raise ValidationError("sample dimension differs from model dimension", field="samples")
    bad = segment_obstruction(model, q)
    if bad is not None:
        raise ObstacleError("path touches an obstacle", segment=int(bad))
    dq = np.diff(q, axis=0)
    mid = 0.5 * (q[1:] + q[:-1])
    if model.action_kind == "jacobi_length":
        h = model.jacobi_metric(mid)
        quad = np.einsum("ka,kab,kb->k", dq, h, dq)
        return float(np.sum(np.sqrt(np.maximum(quad, 0.0))))
    tau = model.duration / (q.shape[0] - 1)
    g = model.metric(mid)
    kin = 0.5 * np.einsum("ka,kab,kb->k", dq, g, dq) / tau
    pot = np.asarray(model.potential(mid)) * tau
    return float(np.sum(kin - pot))


# ---------------------------------------------------------------------------
# model factories


def _const_metric(mat):
    mat = np.array(mat, dtype=float)

    def metric(q):
        q = np.asarray(q, dtype=float)
        return np.broadcast_to(mat, q.shape[:-1] + mat.shape).copy()

    return metric


def _zero_potential(q):
    return np.zeros(np.asarray(q).shape[:-1])


def make_ring_model(hbar=1.0, with_weg=False, detector_angle=np.pi / 4, duration=1.0):
    """Free particle of unit mass on the unit circle.

    Only the two shortest winding classes (one in each direction) are
    admissible.  With ``with_weg`` a discrete tag flips 0 -> 1 when a path
    crosses ``detector_angle``.
    """
    params = {
        "kind": "ring",
        "hbar": float(hbar),
        "with_weg": bool(with_weg),
        "detector_angle": float(detector_angle),
        "duration": float(duration),
    }
    return ModelSpec(
        name="ring",
        dimension=1,
        metric=_const_metric([[1.0]]),
        potential=_zero_potential,
        energy=0.0,
        hbar=float(hbar),
        action_kind="quadratic_lagrangian",
        chart="ring",
        duration=float(duration),
        windings=(0, -1),
        with_weg=bool(with_weg),
        detector_angle=float(detector_angle) if with_weg else None,
        params=params,
    )


def make_plane_model(hbar=1.0, dim=2, energy=0.5):
    """Flat Euclidean Jacobi model with V = 0."""
    params = {"kind": "plane", "hbar": float(hbar), "dim": int(dim), "energy": float(energy)}
    return ModelSpec(
        name="plane",
        dimension=int(dim),
        metric=_const_metric(np.eye(dim)),
        potential=_zero_potential,
        energy=float(energy),
        hbar=float(hbar),
        action_kind="jacobi_length",
        params=params,
    )


def make_slit_model(a=1.0, hbar=1.0):
    """Flat plane (E = 1/2) with the open segment {0} x (-a, a) removed."""
    if not a > 0:
        raise ValidationError("slit half-length must be positive", field="a")
    params = {"kind": "slit", "hbar": float(hbar), "a": float(a)}
    return ModelSpec(
        name="slit",
        dimension=2,
        metric=_const_metric(np.eye(2)),
        potential=_zero_potential,
        energy=0.5,
        hbar=float(hbar),
        action_kind="jacobi_length",
        obstacles=(SegmentObstacle((0.0, -float(a)), (0.0, float(a))),),
        params=params,
    )


def slit_tips(model):
    """Obstacle endpoints, the admissible corner locations."""
    tips = []
    for obs in model.obstacles:
        tips.extend(obs.endpoints)
    return tips


def make_free_particle_model(mass=1.0, duration=1.0, hbar=1.0, dim=1):
    """Free particle on a line with fixed duration (deparametrized form)."""
    params = {
        "kind": "free_particle",
        "hbar": float(hbar),
        "mass": float(mass),
        "duration": float(duration),
        "dim": int(dim),
    }
    return ModelSpec(
        name="free_particle",
        dimension=int(dim),
        metric=_const_metric(float(mass) * np.eye(dim)),
        potential=_zero_potential,
        energy=0.0,
        hbar=float(hbar),
        action_kind="quadratic_lagrangian",
        duration=float(duration),
        params=params,
    )


def make_oscillator_model(mass=1.0, omega=1.0, duration=1.0, hbar=1.0):
    """One-dimensional harmonic oscillator with fixed duration."""
    m, w = float(mass), float(omega)
    params = {
        "kind": "oscillator",
        "hbar": float(hbar),
        "mass": m,
        "omega": w,
        "duration": float(duration),
    }

    def potential(q):
        q = np.asarray(q, dtype=float)
        return 0.5 * m * w * w * np.sum(q * q, axis=-1)

    return ModelSpec(
        name="oscillator",
        dimension=1,
        metric=_const_metric([[m]]),
        potential=potential,
        energy=0.0,
        hbar=float(hbar),
        action_kind="quadratic_lagrangian",
        duration=float(duration),
        params=params,
    )


def make_jacobi_oscillator_model(energy=1.0, omega=1.0, dim=2, hbar=1.0):
    """Isotropic oscillator V = omega^2 |x|^2 / 2 in Jacobi (timeless) form."""
    w = float(omega)
    params = {
        "kind": "jacobi_oscillator",
        "hbar": float(hbar),
        "energy": float(energy),
        "omega": w,
        "dim": int(dim),
    }

    def potential(q):
        q = np.asarray(q, dtype=float)
        return 0.5 * w * w * np.sum(q * q, axis=-1)

    return ModelSpec(
        name="jacobi_oscillator",
        dimension=int(dim),
        metric=_const_metric(np.eye(dim)),
        potential=potential,
        energy=float(energy),
        hbar=float(hbar),
        action_kind="jacobi_length",
        params=params,
    )


def make_gravity_model(hbar=1.0):
    """Homogeneous 3-metrics with the L2 superspace length action."""
    return ModelSpec(
        name="gravity",
        dimension=6,
        metric=superspace_gram,
        potential=_zero_potential,
        energy=0.5,
        hbar=float(hbar),
        action_kind="jacobi_length",
        chart="sym3",
        exp_map=_gravity_exp_map,
        params={"kind": "gravity", "hbar": float(hbar)},
    )


def make_product_model(model_a, model_b):
    """Non-interacting composition: block metric, additive potential."""
    if model_a.action_kind != model_b.action_kind:
        raise ValidationError("product factors must share the action kind")
    if model_a.action_kind == "quadratic_lagrangian" and model_a.duration != model_b.duration:
        raise ValidationError("product factors must share the duration")
    if model_a.obstacles or model_b.obstacles:
        raise ValidationError("product of obstructed models is not supported")
    if model_a.with_weg or model_b.with_weg:
        raise ValidationError("product of tagged models is not supported")
    if model_a.periodic and model_b.periodic:
        chart = "torus"
    elif model_a.chart == "euclidean" and model_b.chart == "euclidean":
        chart = "euclidean"
    else:
        raise ValidationError("product factors must both be periodic or both Euclidean")
    if model_a.action_kind == "jacobi_length" and model_a.energy != model_b.energy:
        raise ValidationError("product factors must share the energy")
    da, db = model_a.dimension, model_b.dimension

    def metric(q):
        q = np.asarray(q, dtype=float)
        out = np.zeros(q.shape[:-1] + (da + db, da + db))
        out[..., :da, :da] = model_a.metric(q[..., :da])
        out[..., da:, da:] = model_b.metric(q[..., da:])
        return out

    def potential(q):
        q = np.asarray(q, dtype=float)
        return np.asarray(model_a.potential(q[..., :da])) + np.asarray(model_b.potential(q[..., da:]))

    windings = None
    if model_a.windings is not None and model_b.windings is not None:
        windings = tuple((wa, wb) for wa in model_a.windings for wb in model_b.windings)
    return ModelSpec(
        name=f"{model_a.name}*{model_b.name}",
        dimension=da + db,
        metric=metric,
        potential=potential,
        energy=model_a.energy,
        hbar=model_a.hbar,
        action_kind=model_a.action_kind,
        chart=chart,
        duration=model_a.duration,
        windings=windings,
        params={"kind": "product", "factors": [model_a.to_dict(), model_b.to_dict()], "hbar": model_a.hbar},
    )


# ---------------------------------------------------------------------------
# serialization

_FACTORIES = {
    "ring": (make_ring_model, {"hbar", "with_weg", "detector_angle", "duration"}),
    "plane": (make_plane_model, {"hbar", "dim", "energy"}),
    "slit": (make_slit_model, {"a", "hbar"}),
    "free_particle": (make_free_particle_model, {"mass", "duration", "hbar", "dim"}),
    "oscillator": (make_oscillator_model, {"mass", "omega", "duration", "hbar"}),
    "jacobi_oscillator": (make_jacobi_oscillator_model, {"energy", "omega", "dim", "hbar"}),
    "gravity": (make_gravity_model, {"hbar"}),
}


def model_from_dict(doc):
    """Rebuild a model from its JSON document (strict key checking)."""
    if not isinstance(doc, dict):
        raise ValidationError("model document must be an object", field="model")
    kind = doc.get("kind")
    if kind == "product":
        unknown = sorted(set(doc) - {"kind", "factors", "hbar"})
        if unknown:
            raise ValidationError("unknown model keys", fields=unknown)
        factors = doc.get("factors")
        if not isinstance(factors, list) or len(factors) != 2:
            raise ValidationError("product needs exactly two factors", field="factors")
        model = make_product_model(model_from_dict(factors[0]), model_from_dict(factors[1]))
        if "hbar" in doc:
            model = model.with_hbar(doc["hbar"])
        return model
    if kind not in _FACTORIES:
        raise ValidationError(f"unknown model kind {kind!r}", field="model.kind")
    factory, allowed = _FACTORIES[kind]
    unknown = sorted(set(doc) - allowed - {"kind"})
    if unknown:
        raise ValidationError("unknown model keys", fields=unknown)
    kwargs = {k: v for k, v in doc.items() if k != "kind"}
    return factory(**kwargs)
