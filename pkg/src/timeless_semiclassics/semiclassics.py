"""Van Vleck determinants, semiclassical kernels and probability checks.

The kernel between two configurations is the sum over extremal paths of
Delta^(1/2) exp(i S / hbar), with the overall normalization set to 1 unless
an explicit phase-space cell prefactor is requested.

For Jacobi models the endpoint-dependent action whose mixed Hessian gives
Delta is the arc-length-gauge energy S_E = length^2 / (2 L) with L held at
the length of the reference path.  The length itself is rank-deficient
along the path and has no usable mixed Hessian.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .errors import ClassJumpError, FocalPointError, ValidationError
from .extremal import (
    CornerPath,
    ExtremalPath,
    _relax,
    _shoot,
    enumerate_extremals,
    eval_action,
    initial_velocity,
    segment_obstruction,
)
from .models import ConfigPoint

logger = logging.getLogger(__name__)


@dataclass
class VanVleckResult:
    value: float
    method: str
    step_or_grid: dict
    error_estimate: float
    matrix: Optional[np.ndarray] = None

    def to_dict(self):
        return {
            "value": self.value,
            "method": self.method,
            "step_or_grid": self.step_or_grid,
            "error_estimate": self.error_estimate,
        }


@dataclass
class KernelValue:
    total: complex
    contributions: list
    hbar: float
    details: list = field(default_factory=list)

    def to_dict(self):
        return {
            "hbar": self.hbar,
            "total": [self.total.real, self.total.imag],
            "abs2": abs(self.total) ** 2,
            "paths": [
                {
                    "label": list(d["label"]) if isinstance(d["label"], tuple) else d["label"],
                    "action": d["action"],
                    "vanvleck": d["vanvleck"],
                    "phase": d["phase"],
                    "amplitude": [d["amplitude"].real, d["amplitude"].imag],
                }
                for d in self.details
            ],
        }


@dataclass
class InterferenceReport:
    total: float
    diagonal: float
    cross: float
    pair_terms: dict


@dataclass
class BornDensity:
    value: float
    at: Any = None


@dataclass
class CompositionReport:
    residual: float
    lhs: float
    rhs: float
    momentum_defect: float
    blocks: dict


# ---------------------------------------------------------------------------
# re-solving with warm starts


def _reference_length(model, path):
    return path.onshell_action if model.action_kind == "jacobi_length" else None


def _resolve_action(model, path, x0, x1, v_guess=None):
    """On-shell endpoint action after moving the endpoints (same class).

    Returns the fixed-duration action for quadratic models and the
    arc-length-gauge energy length^2 / (2 L_ref) for Jacobi models.
    """
    if model.exp_map is not None:
        v, _, _ = _shoot(model, x0, x1, v_guess if v_guess is not None else x1 - x0)
        length = float(np.sqrt(v @ model.kinetic_metric(x0) @ v))
        return length * length / (2 * path.onshell_action), v
    q = np.array(path.samples, dtype=float)
    s = np.linspace(0.0, 1.0, len(q))[:, None]
    q = q + (1 - s) * (x0 - q[0]) + s * (x1 - q[-1])
    q, res, trace = _relax(model, q)
    if not res < 1e-8:
        raise ClassJumpError("re-solve failed to converge", residual_trace=trace)
    shift = float(np.max(np.abs(q - path.samples)))
    move = float(max(np.max(np.abs(x0 - path.samples[0])), np.max(np.abs(x1 - path.samples[-1]))))
    if shift > 50 * move + 1e-6:
        raise ClassJumpError(
            "re-solved path left the extremal class",
            displacement=[float(v) for v in np.concatenate([x0 - path.samples[0], x1 - path.samples[-1]])],
        )
    if segment_obstruction(model, q) is not None:
        raise ClassJumpError("re-solved path touches an obstacle")
    act = eval_action(model, q)
    if model.action_kind == "jacobi_length":
        return act * act / (2 * path.onshell_action), None
    return act, None


def mixed_hessian_fd(model, path, step):
    """Central-difference estimate of d2S/dqi dqf (d x d)."""
    x0 = np.array(path.samples[0], dtype=float)
    x1 = np.array(path.samples[-1], dtype=float)
    d = model.dimension
    gi = np.diag(model.kinetic_metric(x0))
    gf = np.diag(model.kinetic_metric(x1))
    hi = step / np.sqrt(gi)
    hf = step / np.sqrt(gf)
    v0 = initial_velocity(model, path) if model.exp_map is not None else None
    out = np.empty((d, d))
    for a in range(d):
        for b in range(d):
            acc = 0.0
            for sa, sb, w in ((1, 1, 1), (1, -1, -1), (-1, 1, -1), (-1, -1, 1)):
                ea = np.zeros(d)
                ea[a] = sa * hi[a]
                eb = np.zeros(d)
                eb[b] = sb * hf[b]
                val, _ = _resolve_action(model, path, x0 + ea, x1 + eb, v0)
                acc += w * val
            out[a, b] = acc / (4 * hi[a] * hf[b])
    return out


def van_vleck_fd(model, path, step=1e-3):
    """Van Vleck determinant det(-d2S/dqi dqf) by finite differences.

    Every endpoint displacement re-solves the boundary-value problem,
    warm-started from ``path`` to stay in its class.  Two step sizes are
    combined by Richardson extrapolation; the error estimate is the change
    from the finer raw estimate.
    """
    m1 = mixed_hessian_fd(model, path, step)
    m2 = mixed_hessian_fd(model, path, step / 2)
    rich = (4 * m2 - m1) / 3
    value = float(np.linalg.det(-rich))
    err = abs(value - float(np.linalg.det(-m2)))
    if not value > 0:
        raise FocalPointError("non-positive Van Vleck determinant", value=value)
    return VanVleckResult(
        value=value,
        method="finite_difference",
        step_or_grid={"step": step, "richardson": [step, step / 2]},
        error_estimate=err,
        matrix=rich,
    )


# ---------------------------------------------------------------------------
# variational (Jacobi field) integration


def _energy_system(model, path):
    """(G, U, duration, v0) of the equivalent fixed-duration energy system."""
    if model.action_kind == "jacobi_length":
        h = model.jacobi_metric
        length = path.onshell_action
        v0 = initial_velocity(model, path) * path.duration / length
        return h, (lambda q: np.zeros(np.asarray(q).shape[:-1])), length, v0
    return model.metric, model.potential, path.duration, initial_velocity(model, path)


def _deriv4(func, q, c, eps):
    """Fourth-order central difference of ``func`` along coordinate c."""
    e = np.zeros(len(q))
    e[c] = eps
    return (-func(q + 2 * e) + 8 * func(q + e) - 8 * func(q - e) + func(q - 2 * e)) / (12 * eps)


def _accel(G, U, q, v, eps=1e-3):
    d = len(q)
    g = G(q)
    dG = np.empty((d, d, d))
    dU = np.empty(d)
    for c in range(d):
        dG[c] = _deriv4(G, q, c, eps)
        dU[c] = _deriv4(U, q, c, eps)
    rhs = 0.5 * np.einsum("a,kab,b->k", v, dG, v) - np.einsum("cab,b,c->a", dG, v, v) - dU
    return np.linalg.solve(g, rhs)


def _flow(G, U, x0, v0, T, with_variations=True):
    d = len(x0)

    def rhs(t, y):
        q, v = y[:d], y[d : 2 * d]
        a = _accel(G, U, q, v)
        out = [v, a]
        if with_variations:
            phi = y[2 * d :].reshape(2 * d, 2 * d)
            jac = np.zeros((2 * d, 2 * d))
            jac[:d, d:] = np.eye(d)
            for k in range(d):
                jac[d:, k] = _deriv4(lambda x: _accel(G, U, x, v), q, k, 1e-3)
                jac[d:, d + k] = _deriv4(lambda w: _accel(G, U, q, w), v, k, 1e-3)
            out.append((jac @ phi).reshape(-1))
        return np.concatenate(out)

    y0 = [x0, v0]
    atol = [np.full(2 * d, 1e-13)]
    if with_variations:
        y0.append(np.eye(2 * d).reshape(-1))
        atol.append(np.full(4 * d * d, 1e-10))
    sol = solve_ivp(
        rhs, (0.0, T), np.concatenate(y0), method="DOP853", rtol=1e-12, atol=np.concatenate(atol)
    )
    if not sol.success:
        raise FocalPointError("variational integration failed", detail=sol.message)
    y = sol.y[:, -1]
    q, v = y[:d], y[d : 2 * d]
    phi = y[2 * d :].reshape(2 * d, 2 * d) if with_variations else None
    return q, v, phi


def _shoot_flow(G, U, x0, x1, v0, T, tol=1e-11, max_iter=20):
    d = len(x0)
    v = np.array(v0, dtype=float)
    for _ in range(max_iter):
        q, vf, phi = _flow(G, U, x0, v, T)
        miss = q - x1
        if np.max(np.abs(miss)) < tol * max(1.0, np.max(np.abs(x1))):
            return v, vf, phi
        v = v - np.linalg.solve(phi[:d, d:], miss)
    raise FocalPointError("shooting refinement of the Jacobi field did not converge")


def action_blocks(model, path):
    """Second-derivative blocks S_ii, S_if, S_ff from the variational flow.

    Also returns the endpoint momenta.  For Jacobi models the blocks belong
    to the arc-length-gauge energy.
    """
    G, U, T, v0 = _energy_system(model, path)
    x0 = np.array(path.samples[0], dtype=float)
    x1 = np.array(path.samples[-1], dtype=float)
    return _blocks(G, U, x0, x1, v0, T)


def _blocks(G, U, x0, x1, v0, T):
    d = len(x0)
    v, vf, phi = _shoot_flow(G, U, x0, x1, v0, T)
    A, B = phi[:d, :d], phi[:d, d:]
    C, D = phi[d:, :d], phi[d:, d:]
    detb = np.linalg.det(B)
    if detb <= 0:
        raise FocalPointError("Jacobi matrix is singular or past a focal point", det=float(detb))
    binv = np.linalg.inv(B)

    def mom_jac(q, vel):
        eps = 1e-6
        m = np.empty((d, d))
        for c in range(d):
            e = np.zeros(d)
            e[c] = eps
            m[:, c] = ((G(q + e) - G(q - e)) / (2 * eps)) @ vel
        return m

    gi, gf = G(x0), G(x1)
    s_if = -gi @ binv
    s_ii = gi @ binv @ A - mom_jac(x0, v)
    s_ff = gf @ D @ binv + mom_jac(x1, vf)
    s_fi = gf @ (C - D @ binv @ A)
    return {
        "ii": s_ii,
        "if": s_if,
        "ff": s_ff,
        "fi": s_fi,
        "J": B,
        "p_i": gi @ v,
        "p_f": gf @ vf,
        "v_i": v,
        "v_f": vf,
    }


def van_vleck_jacobi(model, path):
    """Van Vleck determinant from the Jacobi matrix J = dq_f / dv_i.

    Delta = det g(q_i) / det J, with J propagated by the variational
    equations of the flow (or differentiated from a closed-form flow).
    """
    x0 = np.array(path.samples[0], dtype=float)
    d = model.dimension
    if model.exp_map is not None:
        v = initial_velocity(model, path)
        eps = 1e-6 * max(1.0, float(np.max(np.abs(v))))
        jac = np.empty((d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = eps
            jac[:, k] = (model.exp_map(x0, v + e, 1.0) - model.exp_map(x0, v - e, 1.0)) / (2 * eps)
        length = path.onshell_action
        det_j = np.linalg.det(jac) * length**d
        grid = {"closed_form_flow": True, "fd_step": eps}
        matrix = jac * length
    else:
        G, U, T, v0 = _energy_system(model, path)
        x1 = np.array(path.samples[-1], dtype=float)
        _, _, phi = _shoot_flow(G, U, x0, x1, v0, T)
        matrix = phi[:d, d:]
        det_j = np.linalg.det(matrix)
        grid = {"integrator": "DOP853", "rtol": 1e-12}
    if not det_j > 0:
        raise FocalPointError("Jacobi matrix is singular or past a focal point", det=float(det_j))
    value = float(np.linalg.det(model.kinetic_metric(x0)) / det_j)
    return VanVleckResult(value=value, method="jacobi_field", step_or_grid=grid, error_estimate=1e-9 * value, matrix=matrix)


def van_vleck_density_ratio(model, path, spread=1e-5, n_particles=25, seed=0):
    """Final-to-initial phase density ratio of a classically propagated cloud.

    Initial momenta are drawn in a small box around the path's initial
    momentum at fixed q_i; the linear map from momentum offsets to final
    position offsets is fitted by least squares and its inverse determinant
    returned.
    """
    G, U, T, v0 = _energy_system(model, path)
    x0 = np.array(path.samples[0], dtype=float)
    x1 = np.array(path.samples[-1], dtype=float)
    v0, _, _ = _shoot_flow(G, U, x0, x1, v0, T)
    g0 = G(x0)
    p0 = g0 @ v0
    rng = np.random.default_rng(seed)
    dp = spread * rng.uniform(-1, 1, size=(n_particles, len(x0)))
    dq = []
    for off in dp:
        q, _, _ = _flow(G, U, x0, np.linalg.solve(g0, p0 + off), T, with_variations=False)
        dq.append(q - x1)
    dq = np.array(dq)
    fit, *_ = np.linalg.lstsq(dp, dq, rcond=None)
    return float(1.0 / abs(np.linalg.det(fit)))


# ---------------------------------------------------------------------------
# kernels


def _is_degenerate(path):
    return float(np.max(np.abs(path.samples - path.samples[0]))) == 0.0


def path_amplitude(model, path, method="jacobi"):
    """Single-path term Delta^(1/2) exp(i S / hbar); 1 for a constant path."""
    if isinstance(path, CornerPath):
        amp = 1.0 + 0j
        vv = 1.0
        for seg in path.segments:
            a, v = path_amplitude(model, seg, method)
            amp *= a
            vv *= v
        return amp, vv
    if _is_degenerate(path):
        return 1.0 + 0j, 1.0
    vv = van_vleck_fd(model, path) if method == "fd" else van_vleck_jacobi(model, path)
    return np.sqrt(vv.value) * np.exp(1j * path.onshell_action / model.hbar), vv.value


def semiclassical_kernel(model, paths, method="jacobi", vanvlecks=None, prefactor=1.0):
    """Sum over extremal (or corner) paths of Delta^(1/2) exp(i S / hbar).

    Parameters
    ----------
    paths : sequence of ExtremalPath or CornerPath
        All sharing endpoints.
    method : {"jacobi", "fd"}
        Van Vleck method, unless ``vanvlecks`` supplies the values.
    prefactor : float
        Overall normalization of the amplitude (1 by default).
    """
    paths = list(paths)
    if not paths:
        raise ValidationError("empty path set: amplitude undefined at this order")
    contributions = []
    details = []
    total = 0j
    for k, path in enumerate(paths):
        if vanvlecks is not None:
            vv = float(vanvlecks[k])
            amp = np.sqrt(vv) * np.exp(1j * _action(path) / model.hbar)
        else:
            amp, vv = path_amplitude(model, path, method)
        amp = prefactor * amp
        total += amp
        contributions.append((path.class_label, amp))
        details.append(
            {
                "label": path.class_label,
                "action": _action(path),
                "vanvleck": vv,
                "phase": float(np.angle(amp)),
                "amplitude": amp,
            }
        )
    return KernelValue(total=complex(total), contributions=contributions, hbar=model.hbar, details=details)


def _action(path):
    return path.total_action if isinstance(path, CornerPath) else path.onshell_action


def kernel_between(model, qi, qf, method="jacobi", prefactor=1.0, n_seeds=5):
    """Enumerate extremals between two points and assemble the kernel."""
    paths = enumerate_extremals(model, qi, qf, n_seeds=n_seeds)
    return semiclassical_kernel(model, paths, method=method, prefactor=prefactor)


def deparametrized_kernel(model, event_i, event_f, **kw):
    """Kernel between events (t, x) of a deparametrizable model.

    The time coordinate fixes the duration of the standard fixed-time
    propagator; the remaining coordinates are the spatial endpoints.
    """
    (ti, xi), (tf, xf) = event_i, event_f
    if not tf > ti:
        raise ValidationError("final time must exceed the initial time")
    fixed = dataclasses.replace(model, duration=float(tf - ti))
    return kernel_between(fixed, fixed.point(xi), fixed.point(xf), **kw)


def interference_intensity(kernel):
    """Split |W|^2 into diagonal Van Vleck terms and pairwise cross terms."""
    amps = [a for _, a in kernel.contributions]
    labels = [lab for lab, _ in kernel.contributions]
    diag = float(sum(abs(a) ** 2 for a in amps))
    pairs = {}
    cross = 0.0
    for i in range(len(amps)):
        for j in range(i + 1, len(amps)):
            term = 2.0 * float((amps[i] * np.conj(amps[j])).real)
            pairs[(labels[i], labels[j])] = term
            cross += term
    return InterferenceReport(total=diag + cross, diagonal=diag, cross=cross, pair_terms=pairs)


def density(z):
    """The multiplicative density F(z) = |z|^2."""
    return float(abs(z) ** 2)


def born_density(kernel, at=None):
    return BornDensity(value=density(kernel.total), at=at)


# ---------------------------------------------------------------------------
# composition and conservation


def _subpath(model, path, k):
    """Model copies and sample arrays of the two halves split at sample k."""
    n = path.n_samples
    s = k / (n - 1)
    q1, q2 = path.samples[: k + 1], path.samples[k:]
    if model.action_kind == "quadratic_lagrangian":
        m1 = dataclasses.replace(model, duration=model.duration * s)
        m2 = dataclasses.replace(model, duration=model.duration * (1 - s))
        p1 = dataclasses.replace(path, samples=q1, duration=path.duration * s)
        p2 = dataclasses.replace(path, samples=q2, duration=path.duration * (1 - s))
    else:
        m1 = m2 = model
        inc = np.sqrt(
            np.einsum(
                "ka,kab,kb->k",
                np.diff(path.samples, axis=0),
                model.kinetic_metric(0.5 * (path.samples[1:] + path.samples[:-1])),
                np.diff(path.samples, axis=0),
            )
        )
        frac = float(np.sum(inc[:k]) / np.sum(inc))
        p1 = dataclasses.replace(path, samples=q1, onshell_action=path.onshell_action * frac, duration=path.duration * s)
        p2 = dataclasses.replace(
            path, samples=q2, onshell_action=path.onshell_action * (1 - frac), duration=path.duration * (1 - s)
        )
    return m1, p1, m2, p2


def check_composition(model, path, midpoint_index):
    """Determinant composition identity across an interior sample.

    Compares det(-S1_if) det(-S2_if) / det(S1_ff + S2_ii) with det(-S_if)
    and reports the momentum mismatch at the junction.
    """
    k = int(midpoint_index)
    if not 0 < k < path.n_samples - 1:
        raise ValidationError("midpoint must be strictly interior", field="midpoint_index")
    whole = action_blocks(model, path)
    m1, p1, m2, p2 = _subpath(model, path, k)
    b1 = action_blocks(m1, p1)
    b2 = action_blocks(m2, p2)
    lhs = np.linalg.det(-b1["if"]) * np.linalg.det(-b2["if"]) / np.linalg.det(b1["ff"] + b2["ii"])
    rhs = np.linalg.det(-whole["if"])
    defect = float(np.max(np.abs(b1["p_f"] - b2["p_i"])))
    return CompositionReport(
        residual=float(abs(lhs - rhs) / abs(rhs)),
        lhs=float(lhs),
        rhs=float(rhs),
        momentum_defect=defect,
        blocks={"whole": whole, "first": b1, "second": b2},
    )


def screen_conservation(model, source, screen_points, weights, amplitude=None, cell=None):
    """Weighted sum of |W(source, x)|^2 over a screen.

    Parameters
    ----------
    amplitude : callable, optional
        ``amplitude(source, point) -> complex``.  Defaults to the
        semiclassical kernel normalized by the phase-space cell of the
        source: prefactor (cell / (2 pi hbar))^(d/2), keeping only classical
        paths whose initial momentum lies inside the cell's band
        |p| <= pi hbar / cell.
    cell : float
        Source cell size; required for the default amplitude.
    """
    screen_points = list(screen_points)
    weights = np.asarray(weights, dtype=float)
    if weights.size and np.any(weights < 0):
        raise ValidationError("screen weights must be non-negative", field="weights")
    if len(screen_points) != weights.size:
        raise ValidationError("one weight per screen point required", field="weights")
    if not screen_points:
        return 0.0
    if amplitude is None:
        if cell is None:
            raise ValidationError("cell size required for the semiclassical screen sum", field="cell")
        amplitude = _banded_amplitude(model, cell)
    vals = np.array([abs(amplitude(source, pt)) ** 2 for pt in screen_points])
    return float(np.sum(weights * vals))


def _banded_amplitude(model, cell):
    d = model.dimension
    pref = (cell / (2 * np.pi * model.hbar)) ** (d / 2)
    pmax = np.pi * model.hbar / cell

    def amp(source, pt):
        paths = enumerate_extremals(model, source, pt, n_seeds=1, adaptive=False, n_samples=33)
        keep = []
        for p in paths:
            G, U, T, v0 = _energy_system(model, p)
            mom = G(p.samples[0]) @ v0
            if np.all(np.abs(mom) <= pmax):
                keep.append(p)
        if not keep:
            return 0j
        return semiclassical_kernel(model, keep, prefactor=pref).total

    return amp
