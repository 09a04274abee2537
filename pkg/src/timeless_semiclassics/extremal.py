"""Two-point boundary-value problems for extremal paths.

Extremals are found by Newton relaxation of the discretized energy
functional sum 1/2 dq^T G dq / tau - U tau over the interior samples.  For
quadratic-Lagrangian models G = g and U = V, so the stationary points are
the discrete Euler-Lagrange trajectories of the fixed-duration action.  For
Jacobi models G = h and U = 0: stationary points are constant-speed
geodesics of h, whose length is the Jacobi action.  Models that carry a
closed-form flow are solved by shooting instead.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .errors import ConvergenceError, ObstacleError, ValidationError
from .models import (
    ConfigPoint,
    displacement,
    eval_action,
    jacobi_distance,
    segment_obstruction,
    slit_tips,
)

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 512
DISTINCT_THRESHOLD = 1e-4
SOLVER_TOL = 1e-8


@dataclass
class ExtremalPath:
    """Discretized extremal curve.

    ``samples`` are stored on the universal cover for periodic charts, so
    the winding is visible in the coordinates.  ``duration`` is the
    parameter length (the fixed duration of quadratic models, 1 for Jacobi
    models parametrized on [0, 1]).
    """

    samples: np.ndarray
    onshell_action: float
    class_label: Any
    residual: float
    arclength: float
    chart: str = "euclidean"
    tag_i: Optional[int] = None
    tag_f: Optional[int] = None
    duration: float = 1.0
    residual_trace: list = field(default_factory=list)

    @property
    def qi(self):
        return ConfigPoint(self.samples[0], chart=self.chart, tag=self.tag_i)

    @property
    def qf(self):
        return ConfigPoint(self.samples[-1], chart=self.chart, tag=self.tag_f)

    @property
    def n_samples(self):
        return self.samples.shape[0]

    def velocity(self, end=0):
        """One-sided second-order estimate of dq/dt at an endpoint."""
        q = self.samples
        tau = self.duration / (len(q) - 1)
        if end == 0:
            return (-3 * q[0] + 4 * q[1] - q[2]) / (2 * tau)
        return (3 * q[-1] - 4 * q[-2] + q[-3]) / (2 * tau)

    def to_dict(self, include_samples=True):
        label = self.class_label
        if isinstance(label, tuple):
            label = list(label)
        out = {
            "class_label": label,
            "onshell_action": self.onshell_action,
            "residual": self.residual,
            "arclength": self.arclength,
            "chart": self.chart,
            "tag_i": self.tag_i,
            "tag_f": self.tag_f,
            "duration": self.duration,
        }
        if include_samples:
            out["samples"] = self.samples.tolist()
        return out

    @classmethod
    def from_dict(cls, doc):
        label = doc["class_label"]
        if isinstance(label, list):
            label = tuple(label)
        return cls(
            samples=np.asarray(doc["samples"], dtype=float),
            onshell_action=float(doc["onshell_action"]),
            class_label=label,
            residual=float(doc["residual"]),
            arclength=float(doc["arclength"]),
            chart=doc.get("chart", "euclidean"),
            tag_i=doc.get("tag_i"),
            tag_f=doc.get("tag_f"),
            duration=float(doc.get("duration", 1.0)),
        )


@dataclass
class CornerPath:
    """Chain of extremal segments joined at obstacle vertices."""

    segments: list
    corners: list
    total_action: float
    class_label: Any
    stationarity: float = 0.0

    @property
    def order(self):
        return len(self.segments)

    @property
    def samples(self):
        parts = [self.segments[0].samples]
        for seg in self.segments[1:]:
            parts.append(seg.samples[1:])
        return np.vstack(parts)

    def to_dict(self):
        return {
            "class_label": list(self.class_label),
            "order": self.order,
            "corners": [c.coords.tolist() for c in self.corners],
            "total_action": self.total_action,
            "segment_actions": [s.onshell_action for s in self.segments],
            "stationarity": self.stationarity,
        }


# ---------------------------------------------------------------------------
# discrete energy functional


def _parameter_step(model, n):
    if model.action_kind == "quadratic_lagrangian":
        return model.duration / (n - 1)
    return 1.0 / (n - 1)


def _energy_terms(model):
    """Return (G, U) callables of the energy functional."""
    if model.action_kind == "jacobi_length":
        h = model.jacobi_metric
        return h, (lambda q: np.zeros(np.asarray(q).shape[:-1]))
    return model.metric, model.potential


def _metric_derivs(func, m, eps=1e-6):
    """Central differences of a vectorized function along each coordinate."""
    d = m.shape[-1]
    out = []
    for a in range(d):
        e = np.zeros(d)
        e[a] = eps
        out.append((np.asarray(func(m + e)) - np.asarray(func(m - e))) / (2 * eps))
    return out


def energy_functional(model, q):
    G, U = _energy_terms(model)
    tau = _parameter_step(model, len(q))
    dq = np.diff(q, axis=0)
    m = 0.5 * (q[1:] + q[:-1])
    kin = 0.5 * np.einsum("ka,kab,kb->k", dq, G(m), dq) / tau
    return float(np.sum(kin - np.asarray(U(m)) * tau))


def energy_gradient(model, q):
    """Gradient of the discrete energy with respect to every sample."""
    G, U = _energy_terms(model)
    tau = _parameter_step(model, len(q))
    dq = np.diff(q, axis=0)
    m = 0.5 * (q[1:] + q[:-1])
    g = G(m)
    gdq = np.einsum("kab,kb->ka", g, dq) / tau
    dG = _metric_derivs(G, m)
    dU = _metric_derivs(U, m)
    half = np.stack(
        [0.5 * (0.5 * np.einsum("ka,kab,kb->k", dq, dG[a], dq) / tau - dU[a] * tau) for a in range(q.shape[1])],
        axis=-1,
    )
    grad = np.zeros_like(q)
    grad[1:] += gdq + half
    grad[:-1] += -gdq + half
    return grad


def _banded_hessian(model, q, grad0=None):
    """Block-tridiagonal Hessian of the interior energy in banded storage."""
    n, d = q.shape
    ni = n - 2
    size = ni * d
    bw = 2 * d - 1
    ab = np.zeros((2 * bw + 1, size))
    scale = max(1.0, float(np.max(np.abs(q))))
    eps = 1e-5 * scale
    for color in range(3):
        for a in range(d):
            dq = np.zeros_like(q)
            nodes = np.arange(1 + color, n - 1, 3)
            dq[nodes, a] = eps
            gp = energy_gradient(model, q + dq)
            gm = energy_gradient(model, q - dq)
            col = (gp - gm) / (2 * eps)
            jc = (nodes - 1) * d + a
            for off in (-1, 0, 1):
                rows = nodes + off
                ok = (rows >= 1) & (rows <= n - 2)
                for b in range(d):
                    ir = (rows[ok] - 1) * d + b
                    ab[bw + ir - jc[ok], jc[ok]] = col[rows[ok], b]
    return ab, bw


def _el_residual(model, q):
    tau = _parameter_step(model, len(q))
    grad = energy_gradient(model, q)
    return float(np.max(np.abs(grad[1:-1]))) / tau if len(q) > 2 else 0.0


def _relax(model, q, tol=SOLVER_TOL, max_iter=50):
    """Damped Newton iteration on the interior samples."""
    q = q.copy()
    n, d = q.shape
    trace = []
    if n <= 2:
        return q, 0.0, trace
    res = _el_residual(model, q)
    trace.append(res)
    for _ in range(max_iter):
        if res < tol:
            break
        grad = energy_gradient(model, q)[1:-1].reshape(-1)
        ab, bw = _banded_hessian(model, q)
        step = solve_banded((bw, bw), ab, -grad)
        step = step.reshape(n - 2, d)
        lam = 1.0
        while lam > 1e-4:
            trial = q.copy()
            trial[1:-1] += lam * step
            try:
                new_res = _el_residual(model, trial)
            except Exception:
                new_res = np.inf
            if new_res < res or lam <= 1.5e-4:
                break
            lam *= 0.5
        q = trial
        res = new_res
        trace.append(res)
    return q, res, trace


# ---------------------------------------------------------------------------
# shooting for closed-form flows


def _shoot(model, x0, x1, v0, tol=1e-12, max_iter=40):
    v = np.array(v0, dtype=float)
    trace = []
    scale = max(1.0, float(np.max(np.abs(x1))))
    for _ in range(max_iter):
        f = model.exp_map(x0, v, 1.0) - x1
        res = float(np.max(np.abs(f)))
        trace.append(res)
        if res < tol * scale:
            break
        eps = 1e-7 * max(1.0, float(np.max(np.abs(v))))
        jac = np.empty((len(v), len(v)))
        for k in range(len(v)):
            e = np.zeros(len(v))
            e[k] = eps
            jac[:, k] = (model.exp_map(x0, v + e, 1.0) - model.exp_map(x0, v - e, 1.0)) / (2 * eps)
        v = v - np.linalg.solve(jac, f)
    else:
        raise ConvergenceError("shooting did not converge", residual_trace=trace)
    return v, res, trace


# ---------------------------------------------------------------------------
# labels and tags


def winding_label(model, qi, lifted_end):
    d = np.asarray(lifted_end, dtype=float) - np.asarray(qi, dtype=float)
    lab = tuple(int(k) for k in np.floor(d / (2 * np.pi) + 1e-12))
    return lab[0] if len(lab) == 1 else lab


def crosses_detector(theta_start, theta_end, angle):
    """True if the lifted arc strictly passes a lift of ``angle``."""
    lo, hi = min(theta_start, theta_end), max(theta_start, theta_end)
    k0 = np.ceil((lo - angle) / (2 * np.pi))
    k1 = np.floor((hi - angle) / (2 * np.pi))
    for k in np.arange(k0, k1 + 1):
        x = angle + 2 * np.pi * k
        if lo < x < hi:
            return True
    return False


def final_tag(model, samples, tag_i):
    if not model.with_weg:
        return tag_i
    t0 = 0 if tag_i is None else tag_i
    if crosses_detector(samples[0, 0], samples[-1, 0], model.detector_angle):
        return 1
    return t0


# ---------------------------------------------------------------------------
# public solvers


def _lifted_target(model, qi, qf, winding):
    x1 = np.array(qf.coords, dtype=float)
    if model.periodic:
        w = np.atleast_1d(np.asarray(winding, dtype=float))
        x1 = x1 + 2 * np.pi * np.broadcast_to(w, x1.shape)
    return x1


def _seed_samples(qi_c, x1, seed, n):
    s = np.linspace(0.0, 1.0, n)[:, None]
    base = (1 - s) * qi_c + s * x1
    if seed is None:
        return base
    seed = np.asarray(seed, dtype=float)
    if seed.ndim == 1:
        # direction of an interior bump
        return base + np.sin(np.pi * s) * seed[None, :]
    if seed.shape[0] == n:
        out = seed.copy()
    else:
        t_old = np.linspace(0, 1, seed.shape[0])
        out = np.stack([np.interp(s[:, 0], t_old, seed[:, a]) for a in range(seed.shape[1])], axis=1)
    out[0] = qi_c
    out[-1] = x1
    return out


def _arclength(model, q):
    dq = np.diff(q, axis=0)
    m = 0.5 * (q[1:] + q[:-1])
    g = model.kinetic_metric(m)
    return np.sqrt(np.maximum(np.einsum("ka,kab,kb->k", dq, g, dq), 0.0))


def solve_extremal(
    model,
    qi,
    qf,
    seed=None,
    winding=0,
    n_samples=DEFAULT_SAMPLES,
    tol=SOLVER_TOL,
    adaptive=True,
    max_samples=8192,
):
    """Solve the two-point boundary-value problem from ``qi`` to ``qf``.

    Parameters
    ----------
    model : ModelSpec
    qi, qf : ConfigPoint
    seed : array_like, optional
        Either a full initial path ``(n, d)`` or a bump direction ``(d,)``
        added to the straight interpolant.  On closed-form flow models it is
        ignored.
    winding : int or tuple
        Lift of ``qf`` on periodic charts (number of extra turns).
    n_samples : int
        Initial sample count, doubled until the action changes by less
        than 1e-6 relative when ``adaptive``.

    Returns
    -------
    ExtremalPath

    Raises
    ------
    ConvergenceError
        Newton failure (``residual_trace`` attached) or a tag mismatch on
        tagged models.
    ObstacleError
        If the seed or the converged path touches an obstacle.
    """
    model.check_point(qi)
    model.check_point(qf)
    x0 = np.array(qi.coords, dtype=float)
    x1 = _lifted_target(model, qi, qf, winding)
    if model.exp_map is not None:
        return _solve_by_shooting(model, qi, qf, x0, x1, n_samples)
    n = int(n_samples)
    if n < 3:
        raise ValidationError("need at least 3 samples", field="n_samples")
    q = _seed_samples(x0, x1, seed, n)
    bad = segment_obstruction(model, q)
    if bad is not None:
        raise ObstacleError("seed touches an obstacle", segment=int(bad))
    q, res, trace = _relax(model, q, tol=tol)
    if not res < tol:
        raise ConvergenceError("extremal solve did not converge", residual_trace=trace)
    action = eval_action(model, q)
    while adaptive and 2 * (n - 1) + 1 <= max_samples + 1:
        n2 = 2 * (n - 1) + 1
        q2 = _seed_samples(x0, x1, q, n2)
        q2, res2, trace2 = _relax(model, q2, tol=tol)
        if not res2 < tol:
            break
        action2 = eval_action(model, q2)
        change = abs(action2 - action) / max(abs(action2), 1e-300)
        q, res, action, n = q2, res2, action2, n2
        trace.extend(trace2)
        if change < 1e-6 or action2 == 0.0:
            break
    bad = segment_obstruction(model, q)
    if bad is not None:
        raise ObstacleError("extremal path touches an obstacle", segment=int(bad))
    tag_f = final_tag(model, q, qi.tag)
    if qf.tag is not None and tag_f is not None and tag_f != qf.tag:
        raise ConvergenceError(
            "no extremal in this class reaches the requested tag",
            residual_trace=trace,
            reason="tag_mismatch",
        )
    label = winding_label(model, x0, x1) if model.periodic else 0
    path = ExtremalPath(
        samples=q,
        onshell_action=action,
        class_label=label,
        residual=res,
        arclength=float(np.sum(_arclength(model, q))),
        chart=model.chart,
        tag_i=qi.tag,
        tag_f=tag_f if qf.tag is not None or model.with_weg else qf.tag,
        duration=_parameter_step(model, len(q)) * (len(q) - 1),
        residual_trace=trace,
    )
    logger.debug("extremal %s: action %.12g residual %.2e n=%d", label, action, res, len(q))
    return path


def _solve_by_shooting(model, qi, qf, x0, x1, n_samples):
    v, res, trace = _shoot(model, x0, x1, x1 - x0)
    ts = np.linspace(0.0, 1.0, int(n_samples))
    q = np.stack([model.exp_map(x0, v, t) for t in ts])
    q[0] = x0
    q[-1] = x1
    speed = float(np.sqrt(v @ model.kinetic_metric(x0) @ v))
    return ExtremalPath(
        samples=q,
        onshell_action=speed,
        class_label=0,
        residual=res,
        arclength=speed,
        chart=model.chart,
        tag_i=qi.tag,
        tag_f=qf.tag,
        duration=1.0,
        residual_trace=trace,
    )


def initial_velocity(model, path):
    """Initial parameter velocity of an extremal (exact for shooting)."""
    if model.exp_map is not None:
        v, _, _ = _shoot(model, path.samples[0], path.samples[-1], path.samples[-1] - path.samples[0])
        return v
    return path.velocity(0)


def path_distance(model, p1, p2):
    """Sup over common parameter samples of the local Jacobi distance."""
    a, b = p1.samples, p2.samples
    if len(a) != len(b):
        s = np.linspace(0, 1, max(len(a), len(b)))
        a = np.stack([np.interp(s, np.linspace(0, 1, len(p1.samples)), p1.samples[:, k]) for k in range(a.shape[1])], 1)
        b = np.stack([np.interp(s, np.linspace(0, 1, len(p2.samples)), p2.samples[:, k]) for k in range(b.shape[1])], 1)
    return float(np.max(jacobi_distance(model, a, b)))


def _sort_key(path):
    lab = path.class_label
    lab = lab if isinstance(lab, tuple) else (lab,)
    return (tuple(-x for x in lab), path.onshell_action)


def enumerate_extremals(model, qi, qf, n_seeds=5, window=2, **solve_kw):
    """Solve from systematically varied seeds and keep distinct extremals.

    Periodic charts use one seed per winding in ``[-window, window]`` (per
    coordinate); the model's admissible winding classes filter the result.
    Other charts use the straight interpolant plus deterministic sinusoidal
    bumps.  Returns a list in canonical order (label, then action); empty
    when nothing converges.
    """
    if n_seeds < 1:
        raise ValidationError("n_seeds must be >= 1", field="n_seeds")
    found = []
    if model.periodic:
        ks = sorted(range(-window, window + 1), key=lambda k: (abs(k), -k))
        combos = list(itertools.product(ks, repeat=model.dimension))
        combos.sort(key=lambda c: (sum(abs(x) for x in c), c))
        attempts = [(c if model.dimension > 1 else c[0], None) for c in combos]
    else:
        rng = np.random.default_rng(12345)
        span = np.linalg.norm(displacement(model, qi.coords, qf.coords))
        attempts = [(0, None)]
        for _ in range(n_seeds - 1):
            attempts.append((0, 0.5 * max(span, 1e-3) * rng.standard_normal(model.dimension)))
    for winding, seed in attempts:
        try:
            path = solve_extremal(model, qi, qf, seed=seed, winding=winding, **solve_kw)
        except (ConvergenceError, ObstacleError) as exc:
            logger.debug("seed %s rejected: %s", winding, exc)
            continue
        if model.windings is not None and path.class_label not in model.windings:
            continue
        if not _is_new(model, path, found):
            continue
        found.append(path)
    if not model.periodic:
        found.sort(key=lambda p: p.onshell_action)
        for k, p in enumerate(found):
            p.class_label = k
    found.sort(key=_sort_key)
    return found


def _is_new(model, path, found):
    for other in found:
        if model.periodic and other.class_label != path.class_label:
            continue
        if path_distance(model, path, other) <= DISTINCT_THRESHOLD:
            return False
    return True


def reparam_arclength(model, path, iterations=4):
    """Resample so that Jacobi-length increments are uniform."""
    q = np.array(path.samples, dtype=float)
    inc = _arclength(model, q)
    total = float(np.sum(inc))
    if not total > 0:
        raise ValidationError("cannot reparametrize a zero-length path")
    n = len(q)
    for _ in range(iterations):
        s = np.concatenate([[0.0], np.cumsum(inc)])
        keep = np.concatenate([[True], np.diff(s) > 0])
        spline = CubicSpline(s[keep], q[keep], axis=0)
        target = np.linspace(0.0, s[-1], n)
        q_new = spline(target)
        q_new[0] = q[0]
        q_new[-1] = q[-1]
        q = q_new
        inc = _arclength(model, q)
        if np.max(np.abs(inc / np.mean(inc) - 1)) < 1e-9:
            break
    out = ExtremalPath(
        samples=q,
        onshell_action=path.onshell_action,
        class_label=path.class_label,
        residual=path.residual,
        arclength=float(np.sum(inc)),
        chart=path.chart,
        tag_i=path.tag_i,
        tag_f=path.tag_f,
        duration=path.duration,
        residual_trace=list(path.residual_trace),
    )
    return out


# ---------------------------------------------------------------------------
# corner paths


def _chain_length(model, pts):
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        total += float(jacobi_distance(model, 0.5 * (a + b), b) + jacobi_distance(model, a, 0.5 * (a + b)))
    return total


def _chain_feasible(model, pts):
    for a, b in zip(pts[:-1], pts[1:]):
        for obs in model.obstacles:
            if obs.blocks(a, b):
                return False
    return True


def corner_stationarity(model, pts, j, delta=1e-6, n_dir=32):
    """Smallest first-order action change over feasible moves of corner j.

    Non-negative values mean the corner is one-sided stationary: no feasible
    direction lowers the action to first order.
    """
    base = _chain_length(model, pts)
    worst = np.inf
    for k in range(n_dir):
        ang = 2 * np.pi * k / n_dir
        trial = [p.copy() for p in pts]
        trial[j] = pts[j] + delta * np.array([np.cos(ang), np.sin(ang)])
        if any(obs.contains(trial[j]) for obs in model.obstacles):
            continue
        if not _chain_feasible(model, trial):
            continue
        worst = min(worst, (_chain_length(model, trial) - base) / delta)
    return worst


def solve_piecewise(model, qi, qf, max_order=2, n_samples=65):
    """Locally stationary corner paths with at most ``max_order`` segments.

    Corners are restricted to obstacle endpoints.  Order-1 candidates are
    the unobstructed extremals.  A corner chain is kept when every segment
    avoids the obstacles, every corner bends the path and no feasible move
    of a corner lowers the action to first order.
    """
    if max_order < 1:
        raise ValidationError("max_order must be >= 1", field="max_order")
    model.check_point(qi)
    model.check_point(qf)
    out = []
    for path in enumerate_extremals(model, qi, qf, n_seeds=1, n_samples=n_samples, adaptive=False):
        out.append(CornerPath(segments=[path], corners=[], total_action=path.onshell_action, class_label=("direct",)))
    tips = slit_tips(model)
    diagnostics = []
    for order in range(2, max_order + 1):
        for seq in itertools.permutations(range(len(tips)), order - 1):
            pts = [np.array(qi.coords)] + [tips[k] for k in seq] + [np.array(qf.coords)]
            if not _chain_feasible(model, pts):
                diagnostics.append((seq, "obstructed"))
                continue
            bends = True
            for j in range(1, len(pts) - 1):
                u = pts[j] - pts[j - 1]
                w = pts[j + 1] - pts[j]
                if abs(u[0] * w[1] - u[1] * w[0]) < 1e-12 * np.linalg.norm(u) * np.linalg.norm(w):
                    bends = False
            if not bends:
                diagnostics.append((seq, "no bend"))
                continue
            stat = min(corner_stationarity(model, pts, j) for j in range(1, len(pts) - 1))
            if stat < -1e-6:
                diagnostics.append((seq, "not stationary"))
                continue
            segments = []
            for a, b in zip(pts[:-1], pts[1:]):
                segments.append(
                    solve_extremal(model, model.point(a), model.point(b), n_samples=n_samples, adaptive=False)
                )
            total = float(sum(s.onshell_action for s in segments))
            label = ("corner",) + tuple(int(k) for k in seq)
            out.append(
                CornerPath(
                    segments=segments,
                    corners=[model.point(tips[k]) for k in seq],
                    total_action=total,
                    class_label=label,
                    stationarity=float(stat),
                )
            )
    if not out:
        logger.warning("no corner path found up to order %d: %s", max_order, diagnostics)
    out.sort(key=lambda c: (c.order, c.total_action, c.class_label))
    return out
