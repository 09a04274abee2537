"""Extremal coarse-grainings, semiclassical records and their consequences.

A tube is the set of configurations within a Jacobi radius of an extremal
seed.  A configuration that lies inside every tube between a boundary
configuration and a holder is a record; the kernel then factorizes through
it up to corrections quadratic in hbar.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConvergenceError, RecordError, ValidationError
from .extremal import (
    DISTINCT_THRESHOLD,
    CornerPath,
    crosses_detector,
    enumerate_extremals,
    solve_piecewise,
)
from .models import ConfigPoint, displacement, jacobi_distance
from .oracle import (
    WindingSelector,
    lattice_kernel,
    line_lattice_kernel,
    restricted_lattice_kernel,
    ring_lattice,
)
from .semiclassics import action_blocks, kernel_between, path_amplitude, semiclassical_kernel

logger = logging.getLogger(__name__)

MAX_SEED_SAMPLES = 1025
# class-restricted lattice sums need no band limit; a wide band keeps the
# lattice edge error well below the semiclassical corrections
RESTRICTED_BAND = 8 * np.pi


def _tag(t):
    return 0 if t is None else int(t)


@dataclass
class Tube:
    seed: object
    radius: float
    label: object

    def __post_init__(self):
        if not self.radius > 0:
            raise ValidationError("tube radius must be positive", field="radius")

    def to_dict(self):
        lab = list(self.label) if isinstance(self.label, tuple) else self.label
        return {"label": lab, "radius": self.radius}


@dataclass
class ECSet:
    tubes: list
    hbar: float
    rho_policy: list

    def to_dict(self):
        return {"hbar": self.hbar, "tubes": [t.to_dict() for t in self.tubes], "rho_policy": self.rho_policy}


@dataclass
class PECSet:
    elements: list
    order: int
    epsilon: float
    defects: dict = field(default_factory=dict)
    paths: list = field(default_factory=list)

    def to_dict(self):
        return {
            "order": self.order,
            "epsilon": self.epsilon,
            "n_elements": len(self.elements),
            "defects": {str(k): v for k, v in self.defects.items()},
            "elements": [p.to_dict() for p in self.paths],
        }


@dataclass
class RecordCertificate:
    record_point: ConfigPoint
    holder: ConfigPoint
    per_tube_distance: list
    contained_in_all: bool
    factorization_residual: Optional[float] = None

    def to_dict(self):
        return {
            "record_point": self.record_point.to_dict(),
            "holder": self.holder.to_dict(),
            "per_tube_distance": [
                [list(lab) if isinstance(lab, tuple) else lab, d] for lab, d in self.per_tube_distance
            ],
            "contained_in_all": self.contained_in_all,
            "factorization_residual": self.factorization_residual,
        }


@dataclass
class ClockFunctional:
    name: str
    eval: Callable
    region: str = "everywhere"


# ---------------------------------------------------------------------------
# tubes


def _seed_samples(seed):
    q = np.asarray(seed.samples, dtype=float)
    if len(q) > MAX_SEED_SAMPLES:
        idx = np.unique(np.linspace(0, len(q) - 1, MAX_SEED_SAMPLES).round().astype(int))
        q = q[idx]
    return q


def _seed_tags(model, seed, q):
    """Discrete tag of each seed sample (weg models flip at the detector)."""
    t0 = _tag(getattr(seed, "tag_i", None) if not isinstance(seed, CornerPath) else None)
    if not model.with_weg:
        return np.full(len(q), t0)
    return np.array([1 if crosses_detector(q[0, 0], qk[0], model.detector_angle) else t0 for qk in q])


def _distances_to_point(model, seed, point):
    q = _seed_samples(seed)
    d = np.asarray(jacobi_distance(model, q, point.coords), dtype=float)
    if model.with_weg:
        d = np.where(_seed_tags(model, seed, q) == _tag(point.tag), d, np.inf)
    return d


def _seed_separation(model, a, b, exclude):
    """Min sampled distance between two seeds away from shared endpoints."""
    qa, qb = _seed_samples(a), _seed_samples(b)
    ends = [qa[0], qa[-1]]
    keep_a = np.ones(len(qa), bool)
    keep_b = np.ones(len(qb), bool)
    for e in ends:
        keep_a &= np.asarray(jacobi_distance(model, qa, e)) >= exclude
        keep_b &= np.asarray(jacobi_distance(model, qb, e)) >= exclude
    qa, qb = qa[keep_a], qb[keep_b]
    if len(qa) == 0 or len(qb) == 0:
        return np.inf
    best = np.inf
    for x in qa:
        best = min(best, float(np.min(jacobi_distance(model, qb, x))))
    return best


def build_ec(model, paths):
    """Tubes around each extremal with non-overlapping radii.

    Each radius is min(rho_intersec / 2, rho_bar) with rho_bar = hbar, where
    rho_intersec is the smallest sampled distance from the seed to any other
    seed.  Samples within 2 rho_bar of the shared endpoints are ignored,
    since every seed meets every other there.
    """
    paths = list(paths)
    if not paths:
        raise ValidationError("no paths to coarse-grain")
    rho_bar = model.hbar
    n = len(paths)
    sep = np.full((n, n), np.inf)
    for i in range(n):
        for j in range(i + 1, n):
            s = _seed_separation(model, paths[i], paths[j], 2 * rho_bar)
            if s < DISTINCT_THRESHOLD:
                raise ValidationError("coincident seeds", pair=[i, j], separation=s)
            sep[i, j] = sep[j, i] = s
    tubes, policy = [], []
    for i, p in enumerate(paths):
        rho_int = float(np.min(sep[i])) if n > 1 else np.inf
        radius = min(rho_int / 2, rho_bar)
        tubes.append(Tube(seed=p, radius=float(radius), label=p.class_label))
        policy.append(
            {
                "label": list(p.class_label) if isinstance(p.class_label, tuple) else p.class_label,
                "rho_bar": rho_bar,
                "rho_intersec": None if np.isinf(rho_int) else rho_int,
                "radius": float(radius),
                "rule": "hbar" if radius == rho_bar else "half_intersection",
            }
        )
    return ECSet(tubes=tubes, hbar=model.hbar, rho_policy=policy)


def tube_contains(model, tube, point):
    """(inside, distance) with distance the min local-metric distance to the seed."""
    dist = float(np.min(_distances_to_point(model, tube.seed, point)))
    return dist < tube.radius, dist


def detect_record(model, ec, candidate, general=False):
    """Certify ``candidate`` as a record when it lies in every tube.

    With ``general`` the whole ball of radius rho_min (the smallest tube
    radius) around the candidate must fit in every tube.
    """
    tubes = _tubes_of(ec)
    rho_min = min(t.radius for t in tubes)
    per_tube = []
    inside = True
    for t in tubes:
        ok, dist = tube_contains(model, t, candidate)
        if general:
            ok = dist + rho_min <= t.radius * (1 + 1e-12)
        per_tube.append((t.label, dist))
        inside = inside and ok
    holder = _tubes_of(ec)[0].seed
    holder_pt = ConfigPoint(holder.samples[-1], chart=model.chart, tag=getattr(holder, "tag_f", None))
    return RecordCertificate(
        record_point=candidate, holder=holder_pt, per_tube_distance=per_tube, contained_in_all=bool(inside)
    )


def _tubes_of(ec):
    if isinstance(ec, PECSet):
        return [t for chain in ec.elements for t in chain]
    return ec.tubes


# ---------------------------------------------------------------------------
# record factorization


def seed_parameter(model, seed, point):
    """Fractional parameter s in [0, 1] of the seed point closest to ``point``.

    The nearest sample is refined by projection onto its neighbouring
    chords.
    """
    q = np.asarray(seed.samples, dtype=float)
    d = np.asarray(jacobi_distance(model, q, point.coords), dtype=float)
    k = int(np.argmin(d))
    best_s, best_d = float(k), d[k]
    for j in (k - 1, k):
        if j < 0 or j + 1 >= len(q):
            continue
        a, b = q[j], q[j + 1]
        g = model.kinetic_metric(a)
        ab = b - a
        ap = displacement(model, a, point.coords)
        den = float(ab @ g @ ab)
        if den <= 0:
            continue
        u = float(np.clip((ab @ g @ ap) / den, 0.0, 1.0))
        r = ap - u * ab
        dist = float(np.sqrt(max(r @ g @ r, 0.0)))
        if dist < best_d:
            best_s, best_d = j + u, dist
    return best_s / (len(q) - 1)


@dataclass
class FactorizationReport:
    mode: str
    hbars: list
    residuals: list
    born_residuals: list
    exponents: list
    slope: Optional[float]
    record_fraction: float
    details: list = field(default_factory=list)

    def to_dict(self):
        return {
            "mode": self.mode,
            "hbars": self.hbars,
            "residuals": self.residuals,
            "born_residuals": self.born_residuals,
            "exponents": self.exponents,
            "slope": self.slope,
            "record_fraction": self.record_fraction,
        }


def scaling_exponents(hbars, residuals):
    """Pairwise log ratios and the least-squares slope of log r vs log hbar."""
    h = np.asarray(hbars, dtype=float)
    r = np.asarray(residuals, dtype=float)
    pair = [float(np.log(r[k] / r[k + 1]) / np.log(h[k] / h[k + 1])) for k in range(len(r) - 1)]
    slope = float(np.polyfit(np.log(h), np.log(r), 1)[0]) if len(r) > 1 else None
    return pair, slope


def _is_free_line(model):
    return (
        model.action_kind == "quadratic_lagrangian"
        and model.chart == "euclidean"
        and model.dimension == 1
        and model.params.get("kind") == "free_particle"
    )


def lattice_record_chain(x0, x_end, duration, hbar, records, window_radius=0.7, spacing=None, mass=1.0):
    """Lattice amplitude from x0 to x_end passing through record windows.

    ``records`` is a list of (time, position) in increasing time.  Each
    record contributes a smooth window exp(-((x - x_r) / window_radius)^4)
    over the lattice sites within three window radii.  Returns
    (windowed amplitude, unrestricted amplitude).
    """
    dx = 0.768 * hbar**3 if spacing is None else float(spacing)
    half = int(np.ceil(3 * window_radius / dx))
    t_prev = 0.0
    amp = None
    idx_prev = None
    for t_r, x_r in records:
        centre = int(round((x_r - x0) / dx))
        idx = np.arange(centre - half, centre + half + 1)
        w = np.exp(-(((x0 + idx * dx) - x_r) / window_radius) ** 4)
        if amp is None:
            amp = w * line_lattice_kernel(idx * dx, t_r - t_prev, hbar, dx, mass)
        else:
            disp = np.arange(idx[0] - idx_prev[-1], idx[-1] - idx_prev[0] + 1)
            kvec = line_lattice_kernel(disp * dx, t_r - t_prev, hbar, dx, mass)
            conv = fftconvolve(amp, kvec)
            start = len(idx_prev) - 1
            amp = w * conv[start : start + len(idx)]
        idx_prev = idx
        t_prev = t_r
    windowed = np.sum(amp * line_lattice_kernel(x_end - (x0 + idx_prev * dx), duration - t_prev, hbar, dx, mass))
    full = complex(line_lattice_kernel(x_end - x0, duration, hbar, dx, mass))
    return complex(windowed), full


def _semiclassical_record_amplitude(model, start, record, end, frac):
    """Stationary-phase record integral W1 W2 / sqrt(det(S1_ff + S2_ii))."""
    if model.action_kind == "quadratic_lagrangian":
        m1 = dataclasses.replace(model, duration=model.duration * frac)
        m2 = dataclasses.replace(model, duration=model.duration * (1 - frac))
    else:
        m1 = m2 = model
    first = enumerate_extremals(m1, start, record)
    second = enumerate_extremals(m2, record, end)
    total = 0j
    for p1 in first:
        b1 = action_blocks(m1, p1)
        a1, _ = path_amplitude(m1, p1)
        for p2 in second:
            b2 = action_blocks(m2, p2)
            # only smoothly joined pairs are stationary at the record
            if np.max(np.abs(b1["p_f"] - b2["p_i"])) > 1e-4 * max(1.0, float(np.max(np.abs(b1["p_f"])))):
                continue
            a2, _ = path_amplitude(m2, p2)
            total += a1 * a2 / np.sqrt(complex(np.linalg.det(b1["ff"] + b2["ii"])))
    return total


def record_factorization_check(model, start, record, end, hbars=None, mode="auto", window_radius=0.7, spacing=None):
    """Residual of the kernel factorization through a certified record.

    ``mode="lattice"`` (free particle on a line) compares the exact lattice
    kernel with the lattice sum restricted by a smooth window around the
    record; ``mode="semiclassical"`` compares the semiclassical kernel with
    the stationary-phase evaluation of the record integral.  Residuals are
    relative to |W(start, end)|.
    """
    if mode == "auto":
        mode = "lattice" if _is_free_line(model) else "semiclassical"
    if mode == "lattice" and not _is_free_line(model):
        raise ValidationError("lattice mode needs the free particle on a line", field="mode")
    hbars = [model.hbar] if hbars is None else [float(h) for h in hbars]
    paths = enumerate_extremals(model, start, end)
    if not paths:
        raise RecordError("no extremal between the endpoints")
    cert = detect_record(model, build_ec(model, paths), record)
    if not cert.contained_in_all:
        raise RecordError("candidate is not a certified record", per_tube_distance=cert.per_tube_distance)
    frac = seed_parameter(model, paths[0], record)
    residuals, born, details = [], [], []
    for hb in hbars:
        m = model.with_hbar(hb)
        if mode == "lattice":
            mass = float(np.asarray(m.metric(np.zeros(1)))[0, 0])
            T = m.duration
            w_rec, w_full = lattice_record_chain(
                float(start.coords[0]),
                float(end.coords[0]),
                T,
                hb,
                [(frac * T, float(record.coords[0]))],
                window_radius=window_radius,
                spacing=spacing,
                mass=mass,
            )
        else:
            w_full = kernel_between(m, start, end).total
            degenerate = min(frac, 1 - frac) < 1e-12
            w_rec = w_full if degenerate else _semiclassical_record_amplitude(m, start, record, end, frac)
        residuals.append(float(abs(w_full - w_rec) / abs(w_full)))
        born.append(float(abs(abs(w_full) ** 2 - abs(w_rec) ** 2) / abs(w_full) ** 2))
        details.append({"hbar": hb, "full": [w_full.real, w_full.imag], "factorized": [w_rec.real, w_rec.imag]})
    if len(hbars) > 1 and all(r > 0 for r in residuals):
        pair, slope = scaling_exponents(hbars, residuals)
    else:
        pair, slope = [], None
    return FactorizationReport(
        mode=mode,
        hbars=hbars,
        residuals=residuals,
        born_residuals=born,
        exponents=pair,
        slope=slope,
        record_fraction=frac,
        details=details,
    )


def string_factorization_check(model, start, records, end, hbars, window_radius=0.7, spacing=None):
    """Lattice residual of the kernel factorized through an ordered record string."""
    if not _is_free_line(model):
        raise ValidationError("string check needs the free particle on a line")
    seed = enumerate_extremals(model, start, end)[0]
    fracs = [seed_parameter(model, seed, r) for r in records]
    if any(b <= a for a, b in zip(fracs[:-1], fracs[1:])):
        raise ValidationError("records are not in increasing order along the seed")
    mass = float(np.asarray(model.metric(np.zeros(1)))[0, 0])
    residuals = []
    for hb in hbars:
        T = model.duration
        chain = [(f * T, float(r.coords[0])) for f, r in zip(fracs, records)]
        w_rec, w_full = lattice_record_chain(
            float(start.coords[0]), float(end.coords[0]), T, hb, chain, window_radius, spacing, mass
        )
        residuals.append(float(abs(w_full - w_rec) / abs(w_full)))
    pair, slope = scaling_exponents(hbars, residuals)
    return FactorizationReport(
        mode="lattice",
        hbars=list(hbars),
        residuals=residuals,
        born_residuals=[],
        exponents=pair,
        slope=slope,
        record_fraction=fracs[0],
    )


# ---------------------------------------------------------------------------
# ordering and clocks


@dataclass
class OrderReport:
    consistent: bool
    order: Optional[list]
    per_tube: dict

    def to_dict(self):
        return {
            "consistent": self.consistent,
            "order": self.order,
            "per_tube": {str(k): v for k, v in self.per_tube.items()},
        }


def order_records(model, ec, records):
    """Order records by closest approach along each seed.

    Returns the common order (indices into ``records``) when every tube
    agrees, otherwise the per-tube orders with ``consistent`` False.
    """
    per_tube = {}
    for t in _tubes_of(ec):
        s = [seed_parameter(model, t.seed, r) for r in records]
        per_tube[t.label] = [int(i) for i in np.argsort(s, kind="stable")]
    orders = list(per_tube.values())
    same = all(o == orders[0] for o in orders)
    return OrderReport(consistent=same, order=orders[0] if same else None, per_tube=per_tube)


@dataclass
class ClockVerdict:
    label: object
    direction: str
    first_violation: Optional[int]


@dataclass
class ClockReport:
    clock: str
    verdicts: list
    consistent: bool

    def to_dict(self):
        return {
            "clock": self.clock,
            "consistent": self.consistent,
            "verdicts": [
                {
                    "label": list(v.label) if isinstance(v.label, tuple) else v.label,
                    "direction": v.direction,
                    "first_violation": v.first_violation,
                }
                for v in self.verdicts
            ],
        }


def _monotonicity(values):
    diff = np.diff(values)
    if np.all(diff > 0):
        return "increasing", None
    if np.all(diff < 0):
        return "decreasing", None
    # first index that breaks the direction set by the first step
    ref = np.sign(diff[0]) if diff.size else 0
    bad = np.nonzero(np.sign(diff) != ref)[0] if ref != 0 else np.array([0])
    return "non-monotone", int(bad[0]) + 1 if bad.size else 1


def check_clock(model, paths, clock):
    """Strict monotonicity of a clock functional along each path.

    ``consistent`` is True when every path is monotone in the same direction.
    """
    verdicts = []
    for p in paths:
        values = np.array([clock.eval(q) for q in np.asarray(p.samples)], dtype=float)
        direction, bad = _monotonicity(values)
        verdicts.append(ClockVerdict(label=p.class_label, direction=direction, first_violation=bad))
    dirs = {v.direction for v in verdicts}
    consistent = len(dirs) == 1 and "non-monotone" not in dirs
    return ClockReport(clock=clock.name, verdicts=verdicts, consistent=consistent)


def clocks_consistent(report_a, report_b):
    """Two clocks agree when each path is monotone in the same direction under both."""
    for va, vb in zip(report_a.verdicts, report_b.verdicts):
        if va.direction == "non-monotone" or va.direction != vb.direction:
            return False
    return True


# ---------------------------------------------------------------------------
# decoherence


@dataclass
class DecoherenceReport:
    matrix: np.ndarray
    labels: list
    consistent: bool
    ratio: float
    threshold: float

    def to_dict(self):
        return {
            "labels": [list(x) if isinstance(x, tuple) else x for x in self.labels],
            "re": self.matrix.real.tolist(),
            "im": self.matrix.imag.tolist(),
            "consistent": self.consistent,
            "ratio": self.ratio,
            "threshold": self.threshold,
        }


def decoherence_matrix(kernels, labels=None, threshold=1e-2):
    """D(a, b) = W_a conj(W_b) and the consistency verdict.

    ``kernels`` is a sequence of per-tube amplitudes or a KernelValue.
    Histories are consistent when max |Re D| off the diagonal, divided by
    the largest diagonal entry, is below ``threshold``.
    """
    if hasattr(kernels, "contributions"):
        labels = [lab for lab, _ in kernels.contributions] if labels is None else labels
        amps = np.array([a for _, a in kernels.contributions], dtype=complex)
    else:
        amps = np.asarray(list(kernels), dtype=complex)
    labels = list(range(len(amps))) if labels is None else list(labels)
    D = np.outer(amps, np.conj(amps))
    n = len(amps)
    if n < 2:
        return DecoherenceReport(matrix=D, labels=labels, consistent=True, ratio=0.0, threshold=threshold)
    off = np.abs(D.real[~np.eye(n, dtype=bool)]).max()
    diag = float(np.max(np.real(np.diag(D))))
    ratio = float(off / diag) if diag > 0 else np.inf
    return DecoherenceReport(matrix=D, labels=labels, consistent=ratio < threshold, ratio=ratio, threshold=threshold)


# ---------------------------------------------------------------------------
# piecewise coarse-grainings


def _ring_lattice_defect(model, start, end, labels):
    lat = ring_lattice(model)
    i, f = int(lat.site_of(start.coords[0])), int(lat.site_of(end.coords[0]))
    full = lattice_kernel(lat, i, f)
    part = sum(restricted_lattice_kernel(lat, i, f, WindingSelector(int(lab))) for lab in labels)
    return float(abs(full - part) / abs(full))


def minimal_pec(model, start, end, epsilon, max_order=2):
    """Lowest-order piecewise-extremal coarse-graining reproducing the kernel.

    The reference amplitude is the semiclassical sum over every corner path
    up to ``max_order``; ring models instead compare restricted and full
    lattice sums.  Each order's defect is the relative amplitude mismatch
    of the paths with at most that many segments.
    """
    if max_order < 1:
        raise ValidationError("max_order must be >= 1", field="max_order")
    if model.periodic and model.dimension == 1:
        paths = [CornerPath([p], [], p.onshell_action, p.class_label) for p in enumerate_extremals(model, start, end)]
    else:
        paths = solve_piecewise(model, start, end, max_order=max_order)
    if not paths:
        raise ConvergenceError("no extremal or corner path up to the maximum order", max_order=max_order)
    defects = {}
    amp_cache = {id(p): semiclassical_kernel(model, [p]).total for p in paths}
    reference = sum(amp_cache.values())
    for order in range(1, max_order + 1):
        chosen = [p for p in paths if p.order <= order]
        if not chosen:
            defects[order] = 1.0
            continue
        if model.periodic and model.dimension == 1:
            defects[order] = _ring_lattice_defect(model, start, end, [p.class_label for p in chosen])
        else:
            approx = sum(amp_cache[id(p)] for p in chosen)
            defects[order] = float(abs(reference - approx) / abs(reference)) if abs(reference) > 0 else 1.0
        if defects[order] <= epsilon:
            elements = [[Tube(seed=s, radius=model.hbar, label=p.class_label) for s in p.segments] for p in chosen]
            return PECSet(elements=elements, order=order, epsilon=epsilon, defects=defects, paths=chosen)
    best = min(defects.values())
    raise ConvergenceError("no order reproduces the amplitude within epsilon", best_defect=best, defects=defects)


# ---------------------------------------------------------------------------
# relative probabilities


@dataclass
class RelativeProbability:
    ratio: float
    anchored_ratio: Optional[float] = None
    discrepancy: Optional[float] = None
    lattice_ratio: Optional[float] = None
    lattice_anchored_ratio: Optional[float] = None
    lattice_discrepancy: Optional[float] = None

    def to_dict(self):
        return dataclasses.asdict(self)


def _prob(model, a, b):
    k = kernel_between(model, a, b)
    scale = sum(abs(amp) for _, amp in k.contributions)
    return abs(k.total) ** 2, scale, k


def _lattice_prob(model, a, b, labels):
    lat = ring_lattice(model, band_velocity=RESTRICTED_BAND)
    i, f = int(lat.site_of(a.coords[0])), int(lat.site_of(b.coords[0]))
    amp = sum(restricted_lattice_kernel(lat, i, f, WindingSelector(int(lab))) for lab in labels)
    return abs(amp / lat.normalization()) ** 2


def relative_probability(model, record, phi1, phi2, start=None, lattice=False):
    """|W(record, phi1)|^2 / |W(record, phi2)|^2.

    With ``start`` the same ratio anchored at ``start`` is also returned
    with the relative discrepancy; with ``lattice`` (ring models) both
    ratios are recomputed from lattice sums restricted to the classes of
    the semiclassical paths.
    """
    p1, _, k1 = _prob(model, record, phi1)
    p2, s2, k2 = _prob(model, record, phi2)
    if p2 <= 1e-24 * max(s2, 1.0) ** 2:
        raise ValidationError("denominator amplitude vanishes (destructive zero)")
    out = RelativeProbability(ratio=float(p1 / p2))
    if start is not None:
        a1, _, j1 = _prob(model, start, phi1)
        a2, t2, j2 = _prob(model, start, phi2)
        if a2 <= 1e-24 * max(t2, 1.0) ** 2:
            raise ValidationError("anchored denominator amplitude vanishes")
        out.anchored_ratio = float(a1 / a2)
        out.discrepancy = float(abs(out.ratio - out.anchored_ratio) / out.anchored_ratio)
        if lattice:
            if not (model.periodic and model.dimension == 1):
                raise ValidationError("lattice validation is available for ring models")
            labs = lambda k: [lab for lab, _ in k.contributions]
            r = _lattice_prob(model, record, phi1, labs(k1)) / _lattice_prob(model, record, phi2, labs(k2))
            s = _lattice_prob(model, start, phi1, labs(j1)) / _lattice_prob(model, start, phi2, labs(j2))
            out.lattice_ratio = float(r)
            out.lattice_anchored_ratio = float(s)
            out.lattice_discrepancy = float(abs(r - s) / s)
    return out
