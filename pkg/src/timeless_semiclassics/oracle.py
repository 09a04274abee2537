"""Brute-force ground truth.

Lattice path sums use exact per-mode free evolution: one slice multiplies
every lattice momentum mode by exp(-i hbar k^2 dt / 2m), so the transfer
matrix is unitary to rounding and the slice count only affects cost.
Restricted sums track the winding by evolving on a box of 2 W + 1 copies
of the ring (the unwrapped coordinate).  The line lattice uses the
closed-form infinite-lattice kernel.
"""

import itertools
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import erf

from .errors import BudgetError, GeometryError, ValidationError
from .models import HomogeneousMetricPoint

logger = logging.getLogger(__name__)

MAX_SITES = 10_000
MAX_SLICES = 10_000
DEFAULT_WMAX = 3


@dataclass(frozen=True)
class LatticeSpec:
    """Lattice discretization of a free model.

    ``sites`` per dimension on the ring (spacing 2 pi / sites), ``slices``
    parameter steps of size ``dt``.  ``mass`` is the constant metric value.
    """

    sites: int
    slices: int
    dt: float
    hbar: float
    mass: float = 1.0

    def __post_init__(self):
        if self.sites < 2:
            raise ValidationError("need at least 2 sites", field="sites")
        if self.slices < 0:
            raise ValidationError("slices must be non-negative", field="slices")
        if self.sites > MAX_SITES or self.slices > MAX_SLICES:
            raise BudgetError(
                "lattice exceeds the memory/time budget",
                sites=self.sites,
                slices=self.slices,
                estimate=self.sites * self.slices,
            )

    @property
    def spacing(self):
        return 2 * np.pi / self.sites

    @property
    def duration(self):
        return self.slices * self.dt

    @property
    def angles(self):
        return self.spacing * np.arange(self.sites)

    def site_of(self, theta):
        j = np.round((np.asarray(theta) % (2 * np.pi)) / self.spacing).astype(int) % self.sites
        return j

    def normalization(self):
        """Factor dtheta / sqrt(2 pi i hbar) between a lattice amplitude and
        the Van Vleck sum sum Delta^(1/2) exp(i S / hbar)."""
        return self.spacing / np.sqrt(2j * np.pi * self.hbar)

    def to_dict(self):
        return {"sites": self.sites, "slices": self.slices, "dt": self.dt, "hbar": self.hbar, "mass": self.mass}


def ring_lattice(model, duration=None, band_velocity=1.75 * np.pi, slices=4):
    """Lattice matched to a ring model, with even site count.

    The largest lattice velocity hbar N / 2 is set to ``band_velocity``; a
    value between pi and 3 pi keeps exactly the two shortest winding
    classes inside the band for endpoints half a turn apart.
    """
    T = model.duration if duration is None else float(duration)
    mass = float(np.asarray(model.metric(np.zeros(model.dimension)))[0, 0])
    n = 2 * int(np.ceil(band_velocity / model.hbar))
    return LatticeSpec(sites=n, slices=slices, dt=T / slices, hbar=model.hbar, mass=mass)


def _phases(lattice, n_sites, spacing):
    k = 2 * np.pi * np.fft.fftfreq(n_sites, d=spacing)
    return np.exp(-1j * lattice.hbar * k * k * lattice.dt / (2 * lattice.mass))


def transfer_unitarity(lattice):
    """Max deviation of |eigenvalue| of the one-slice transfer matrix from 1."""
    return float(np.max(np.abs(np.abs(_phases(lattice, lattice.sites, lattice.spacing)) - 1)))


def lattice_state(lattice, qi):
    """Amplitudes over all sites after ``slices`` steps from site ``qi``."""
    psi = np.zeros(lattice.sites, dtype=complex)
    psi[int(qi) % lattice.sites] = 1.0
    ph = _phases(lattice, lattice.sites, lattice.spacing)
    for _ in range(lattice.slices):
        psi = np.fft.ifft(ph * np.fft.fft(psi))
    return psi


def lattice_kernel(lattice, qi, qf):
    """Full lattice amplitude from site qi to site qf."""
    return complex(lattice_state(lattice, qi)[int(qf) % lattice.sites])


@dataclass(frozen=True)
class WindingSelector:
    """Paths whose lifted endpoint lies in winding class ``label``.

    The label counts floor(lifted displacement / 2 pi) with the chart
    displacement taken in [0, 2 pi).  Classes are resolved modulo 2 wmax + 1.
    """

    label: int
    wmax: int = DEFAULT_WMAX


@dataclass(frozen=True)
class TubeSelector:
    """Paths staying within ``half_width`` of a lifted seed at every slice.

    ``seed`` is a callable mapping the slice fraction s in [0, 1] to the
    lifted angle of the seed path.
    """

    seed: object
    half_width: float
    wmax: int = DEFAULT_WMAX


def restricted_lattice_kernel(lattice, qi, qf, class_selector):
    """Lattice amplitude summed over paths admitted by a selector.

    The state lives on 2 wmax + 1 copies of the ring.  Winding selectors
    read the copy index of the endpoint; tube selectors additionally mask
    the state to the seed window after each slice.
    """
    wmax = class_selector.wmax
    copies = 2 * wmax + 1
    n = lattice.sites
    big = n * copies
    # copy index c (0 = home copy) occupies the sites shifted by c * n
    psi = np.zeros(big, dtype=complex)
    i0 = int(qi) % n
    psi[i0] = 1.0
    ph = _phases(lattice, big, lattice.spacing)
    lifted = lattice.spacing * np.arange(big)
    # lifted angles centred on the start copy: range [theta_i - wmax*2pi, ...)
    lifted = np.where(np.arange(big) >= big - wmax * n, lifted - big * lattice.spacing, lifted)
    for s_idx in range(lattice.slices):
        psi = np.fft.ifft(ph * np.fft.fft(psi))
        if isinstance(class_selector, TubeSelector):
            centre = class_selector.seed((s_idx + 1) / lattice.slices)
            mask = np.abs(lifted - centre) <= class_selector.half_width
            if not np.any(mask):
                raise ValidationError("selector window is empty", slice=s_idx + 1)
            psi = np.where(mask, psi, 0)
    if isinstance(class_selector, TubeSelector):
        return complex(np.sum(psi[np.arange(big) % n == int(qf) % n]))
    jf = int(qf) % n
    shift = 0 if jf >= i0 else 1
    lift = class_selector.label + shift
    if abs(lift) > wmax:
        return 0j
    return complex(psi[(jf + lift * n) % big])


def winding_partition(lattice, qi, qf, wmax=DEFAULT_WMAX):
    """Restricted amplitudes for every class resolved by the copy box."""
    jf = int(qf) % lattice.sites
    shift = 0 if jf >= int(qi) % lattice.sites else 1
    labels = [lift - shift for lift in range(-wmax, wmax + 1)]
    return {lab: restricted_lattice_kernel(lattice, qi, qf, WindingSelector(lab, wmax)) for lab in labels}


# ---------------------------------------------------------------------------
# line lattice


def line_lattice_kernel(x, duration, hbar, dx, mass=1.0):
    """Infinite-line lattice kernel with spacing ``dx`` (closed form).

    Exact per-mode evolution over the band |k| <= pi / dx, summed
    analytically.  ``x`` is the displacement (any shape).
    """
    x = np.asarray(x, dtype=float)
    beta = hbar * duration / (2 * mass)
    kmax = np.pi / dx
    ks = x / (2 * beta)
    c = np.sqrt(1j * beta)
    val = np.sqrt(np.pi) / (2 * c) * (erf(c * (kmax - ks)) - erf(c * (-kmax - ks)))
    return dx / (2 * np.pi) * np.exp(1j * x * x / (4 * beta)) * val


def line_box_state(n_sites, dx, duration, hbar, start, slices=1, mass=1.0):
    """Finite periodic box version of the line lattice (FFT evolution)."""
    psi = np.zeros(n_sites, dtype=complex)
    psi[start] = 1.0
    k = 2 * np.pi * np.fft.fftfreq(n_sites, d=dx)
    ph = np.exp(-1j * hbar * k * k * (duration / slices) / (2 * mass))
    for _ in range(slices):
        psi = np.fft.ifft(ph * np.fft.fft(psi))
    return psi


# ---------------------------------------------------------------------------
# two-dimensional lattices


def product_lattice_kernel(lat_a, lat_b, qi, qf):
    """Joint kernel of two independent rings by 2D spectral evolution."""
    if lat_a.slices != lat_b.slices or lat_a.dt != lat_b.dt:
        raise ValidationError("factor lattices must share the slicing")
    psi = np.zeros((lat_a.sites, lat_b.sites), dtype=complex)
    psi[qi[0] % lat_a.sites, qi[1] % lat_b.sites] = 1.0
    ph = np.outer(_phases(lat_a, lat_a.sites, lat_a.spacing), _phases(lat_b, lat_b.sites, lat_b.spacing))
    for _ in range(lat_a.slices):
        psi = np.fft.ifft2(ph * np.fft.fft2(psi))
    return complex(psi[qf[0] % lat_a.sites, qf[1] % lat_b.sites])


@dataclass
class SlitLattice:
    """Square periodic box with obstacle sites projected out each slice."""

    sites: int
    box: float
    slices: int
    dt: float
    hbar: float
    a: float

    def __post_init__(self):
        if self.sites > 1024 or self.slices > MAX_SLICES:
            raise BudgetError("slit lattice exceeds the budget", sites=self.sites, slices=self.slices)

    @property
    def spacing(self):
        return self.box / self.sites

    @property
    def coords(self):
        return -self.box / 2 + self.spacing * np.arange(self.sites)

    def obstacle_mask(self):
        x = self.coords
        xx, yy = np.meshgrid(x, x, indexing="ij")
        return (np.abs(xx) < 0.5 * self.spacing) & (np.abs(yy) < self.a)

    def site_of(self, point):
        return tuple(int(np.argmin(np.abs(self.coords - c))) for c in point)

    def state(self, start):
        psi = np.zeros((self.sites, self.sites), dtype=complex)
        psi[self.site_of(start)] = 1.0
        k = 2 * np.pi * np.fft.fftfreq(self.sites, d=self.spacing)
        kk = k[:, None] ** 2 + k[None, :] ** 2
        ph = np.exp(-1j * self.hbar * kk * self.dt / 2)
        block = self.obstacle_mask()
        norms = []
        for _ in range(self.slices):
            psi = np.fft.ifft2(ph * np.fft.fft2(psi))
            psi[block] = 0
            norms.append(float(np.sum(np.abs(psi) ** 2)))
        return psi, norms


# ---------------------------------------------------------------------------
# geodesic ODE


def _geodesic_rhs(g, gd):
    gi = np.linalg.inv(g)
    m = gi @ gd
    acc = gd @ m + 0.25 * np.trace(m @ m) * g - 0.5 * np.trace(m) * gd
    return gd, 0.5 * (acc + acc.T)


def integrate_geodesic_ode(g0, h, t_end, steps=1000, trajectory=False):
    """Classical RK4 integration of the superspace geodesic equation.

    g'' = g' g^-1 g' + 1/4 tr(g^-1 g' g^-1 g') g - 1/2 tr(g^-1 g') g'
    with g(0) = g0, g'(0) = h.  With ``trajectory`` returns the step times
    and the metric after every step (including t = 0).
    """
    g0m = g0.g if isinstance(g0, HomogeneousMetricPoint) else HomogeneousMetricPoint(g0).g
    if steps < 100:
        raise ValidationError("at least 100 steps required", field="steps")
    g = np.array(g0m, dtype=float)
    gd = 0.5 * (np.asarray(h, dtype=float) + np.asarray(h, dtype=float).T)
    if t_end == 0:
        return (np.zeros(1), [HomogeneousMetricPoint(g)]) if trajectory else HomogeneousMetricPoint(g)
    dt = float(t_end) / steps
    path = [g.copy()]
    for k in range(steps):
        k1g, k1v = _geodesic_rhs(g, gd)
        k2g, k2v = _geodesic_rhs(g + 0.5 * dt * k1g, gd + 0.5 * dt * k1v)
        k3g, k3v = _geodesic_rhs(g + 0.5 * dt * k2g, gd + 0.5 * dt * k2v)
        k4g, k4v = _geodesic_rhs(g + dt * k3g, gd + dt * k3v)
        g = g + dt / 6 * (k1g + 2 * k2g + 2 * k3g + k4g)
        gd = gd + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        try:
            np.linalg.cholesky(g)
        except np.linalg.LinAlgError:
            raise GeometryError("positive-definiteness lost during integration", step=k + 1) from None
        if trajectory:
            path.append(g.copy())
    if trajectory:
        return dt * np.arange(steps + 1), [HomogeneousMetricPoint(0.5 * (m + m.T)) for m in path]
    return HomogeneousMetricPoint(0.5 * (g + g.T))


# ---------------------------------------------------------------------------
# frequency operators


@dataclass(frozen=True)
class ProductStateSpec:
    """N copies of a single system in the superposition sum_n c_n |n>."""

    c: tuple
    N: int

    def __post_init__(self):
        c = np.asarray(self.c, dtype=complex)
        if c.ndim != 1 or c.size < 1:
            raise ValidationError("c must be a non-empty vector", field="c")
        if abs(np.sum(np.abs(c) ** 2) - 1) > 1e-12:
            raise ValidationError("branch amplitudes are not normalized", field="c")
        if not 1 <= self.N <= 12:
            raise ValidationError("N must lie in 1..12 for exact enumeration", field="N")
        if c.size > 4:
            raise ValidationError("at most 4 branches", field="c")
        object.__setattr__(self, "c", tuple(complex(v) for v in c))


@dataclass
class HartleReport:
    norm_sq: float
    bound: float
    formula: float
    reading: str
    formula_holds: bool
    within_bound: bool
    saturated: bool

    def to_dict(self):
        return {
            "norm_sq": self.norm_sq,
            "bound": self.bound,
            "formula": self.formula,
            "reading": self.reading,
            "formula_holds": self.formula_holds,
            "within_bound": self.within_bound,
            "saturated": self.saturated,
        }


def hartle_check(state, n, chunk=1 << 18):
    """Exact squared norm of (F_n - |c_n|^2)|Psi> by enumerating all strings.

    ``n`` is the 1-based branch index.  Every branch string n_1 ... n_N is
    visited once with weight |c_{n_1} ... c_{n_N}|^2.
    """
    probs = np.abs(np.asarray(state.c)) ** 2
    b = probs.size
    if not 1 <= n <= b:
        raise ValidationError("branch index out of range", field="n")
    target = n - 1
    big_n = state.N
    total = 0.0
    n_strings = b**big_n
    for start in range(0, n_strings, chunk):
        idx = np.arange(start, min(start + chunk, n_strings), dtype=np.int64)
        weight = np.ones(idx.size)
        count = np.zeros(idx.size)
        rest = idx.copy()
        for _ in range(big_n):
            rest, digit = np.divmod(rest, b)
            weight *= probs[digit]
            count += digit == target
        total += float(np.sum(weight * (count / big_n - probs[target]) ** 2))
    formula = float(probs[target] * (1 - probs[target]) / big_n)
    bound = 1.0 / (4 * big_n)
    if abs(total - formula) <= 1e-12:
        reading = "norm_squared"
    elif abs(np.sqrt(total) - formula) <= 1e-12:
        reading = "norm"
    else:
        reading = "neither"
    return HartleReport(
        norm_sq=total,
        bound=bound,
        formula=formula,
        reading=reading,
        formula_holds=abs(total - formula) <= 1e-12,
        within_bound=total <= bound + 1e-15,
        saturated=abs(total - bound) <= 1e-12,
    )


# ---------------------------------------------------------------------------
# clustering


@dataclass
class ClusteringReport:
    joint: complex
    product: complex
    residual: float
    factors: tuple = field(default_factory=tuple)


def clustering_check(model_a, model_b, endpoints, method="jacobi"):
    """Joint semiclassical kernel of a product model vs product of factors.

    ``endpoints`` is ``((qi_a, qf_a), (qi_b, qf_b))`` of ConfigPoints.
    """
    from .models import make_product_model
    from .semiclassics import kernel_between

    (qia, qfa), (qib, qfb) = endpoints
    joint_model = make_product_model(model_a, model_b)
    qi = joint_model.point(np.concatenate([qia.coords, qib.coords]))
    qf = joint_model.point(np.concatenate([qfa.coords, qfb.coords]))
    wa = kernel_between(model_a, qia, qfa, method=method).total
    wb = kernel_between(model_b, qib, qfb, method=method).total
    wj = kernel_between(joint_model, qi, qf, method=method).total
    prod = wa * wb
    return ClusteringReport(joint=wj, product=prod, residual=float(abs(wj - prod) / abs(prod)), factors=(wa, wb))


def lattice_clustering_check(lat_a, lat_b, qi, qf):
    """Joint 2D lattice kernel vs the tensor product of factor kernels."""
    joint = product_lattice_kernel(lat_a, lat_b, qi, qf)
    prod = lattice_kernel(lat_a, qi[0], qf[0]) * lattice_kernel(lat_b, qi[1], qf[1])
    return ClusteringReport(joint=joint, product=prod, residual=float(abs(joint - prod) / abs(prod)))


# ---------------------------------------------------------------------------
# semiclassical vs lattice comparison on the ring


def compare_ring(model, theta_i, theta_f, hbars, band_velocity=1.75 * np.pi):
    """Relative error of the semiclassical ring kernel against the lattice.

    For each hbar the lattice is sized by ``ring_lattice`` and the lattice
    amplitude is divided by its continuum normalization.
    """
    from .semiclassics import kernel_between

    rows = []
    for hb in hbars:
        m = model.with_hbar(hb)
        lat = ring_lattice(m, band_velocity=band_velocity)
        qi_site = lat.site_of(theta_i)
        qf_site = lat.site_of(theta_f)
        ti = qi_site * lat.spacing
        tf = qf_site * lat.spacing
        sc = kernel_between(m, m.point([ti]), m.point([tf])).total
        lat_amp = lattice_kernel(lat, qi_site, qf_site) / lat.normalization()
        rows.append(
            {
                "hbar": float(hb),
                "sites": lat.sites,
                "semiclassical": sc,
                "lattice": lat_amp,
                "rel_error": float(abs(sc - lat_amp) / abs(lat_amp)),
            }
        )
    return rows
