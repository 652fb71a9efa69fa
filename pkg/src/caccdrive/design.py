"""Parameter-space D-stability design of the PD spacing gains.

The closed-loop characteristic function is affine in the gains,

    delta(s) = A(s) + (kp + kd*s) * B(s),

so fixing a point ``s*`` on a D-region boundary turns ``delta(s*) = 0`` into a
2x2 real linear system for ``(kp, kd)``. Sweeping ``s*`` along the decay line
``Re s = -sigma``, the damping ray and the bandwidth arc traces the complex-root
boundaries (CRB); pinning ``s*`` to the real anchors ``-sigma`` and ``-omega_b``
gives straight real-root boundaries (RRB).

Membership is decided by pole testing. With an exact input delay the
characteristic function is transcendental; we locate every root in the
half plane ``Re s >= -omega_b`` (Pade seeds, Newton refinement, and an
argument-principle count as a completeness certificate). Roots left of that
line already violate the bandwidth bound, and an exact delay always has
infinitely many of them, so they are not part of the test.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np
from scipy import optimize

from .control import ControllerGains
from .dynamics import VehicleParams
from .errors import (
    ConfigError,
    DegenerateBoundaryError,
    EmptyRegionError,
    IllConditionedError,
)

log = logging.getLogger(__name__)

DELAY_MODES = ("exact", "pade1", "none")
CRB_BOUNDARIES = ("sigma", "damping", "bandwidth")
RRB_BOUNDARIES = ("sigma", "bandwidth", "zero")
SINGULAR_DET = 1e-12
DEFAULT_RESOLUTION = 2000


@dataclass(frozen=True)
class DRegionSpec:
    """Decay rate ``sigma`` (1/s), cone half-angle ``theta`` (deg), radius ``omega_b``.

    ``damping_tol`` relaxes the minimum damping ratio ``cos(theta)`` by that
    absolute amount, for both the mapped damping boundary and the pole test.
    """

    sigma: float = 0.5
    theta: float = 30.0
    omega_b: float = 20.0
    damping_tol: float = 0.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if not 0 < self.theta < 90:
            raise ConfigError(f"theta must lie in (0, 90) degrees, got {self.theta}")
        if not self.omega_b > self.sigma:
            raise ConfigError(
                f"omega_b must exceed sigma, got omega_b={self.omega_b}, sigma={self.sigma}")
        if not 0 <= self.damping_tol < math.cos(math.radians(self.theta)):
            raise ConfigError(f"damping_tol must lie in [0, cos(theta)), got {self.damping_tol}")

    @property
    def zeta_min(self) -> float:
        return math.cos(math.radians(self.theta)) - self.damping_tol

    @property
    def theta_eff(self) -> float:
        """Cone half-angle in radians after the damping tolerance."""
        return math.acos(self.zeta_min)


DEFAULT_DREGION = DRegionSpec(damping_tol=0.01)


@dataclass(frozen=True)
class LoopModel:
    """Plant, spacing policy and delay treatment of the error loop.

    By default the PD law closes a unity loop around the lagged, delayed double
    integrator. ``headway_in_loop=True`` adds the ``(1 + h s)`` spacing factor
    to the controller path.
    """

    params: VehicleParams = field(default_factory=VehicleParams)
    headway: float = 0.6
    delay_mode: str = "exact"
    headway_in_loop: bool = False

    def __post_init__(self):
        if self.delay_mode not in DELAY_MODES:
            raise ConfigError(f"delay_mode must be one of {DELAY_MODES}, got {self.delay_mode!r}")
        if not self.headway > 0:
            raise ConfigError(f"headway must be > 0, got {self.headway}")

    def with_delay_mode(self, mode: str) -> LoopModel:
        return LoopModel(self.params, self.headway, mode, self.headway_in_loop)


# ----------------------------------------------------------------------------
# characteristic function


def pade(phi: float, order: int):
    """Diagonal Pade approximant of exp(-phi*s): (numerator, denominator), highest power first."""
    if order < 1:
        raise ConfigError(f"pade order must be >= 1, got {order}")
    n = order
    c = np.array([math.factorial(2 * n - k) * math.factorial(n)
                  / (math.factorial(2 * n) * math.factorial(k) * math.factorial(n - k))
                  * phi ** k for k in range(n + 1)])
    num = c * (-1.0) ** np.arange(n + 1)
    return num[::-1].copy(), c[::-1].copy()


def _plant_poly(model):
    return np.array([model.params.lag_tau, 1.0, 0.0, 0.0])


def _spacing_poly(model):
    return np.array([model.headway, 1.0]) if model.headway_in_loop else np.array([1.0])


def _mode_order(model, mode=None):
    mode = mode or model.delay_mode
    if mode == "none" or model.params.delay_phi == 0:
        return 0
    return int(mode[-1]) if mode.startswith("pade") else None


def _terms(s, model, mode=None):
    """(A, B) with delta = A + (kp + kd s) B, denominators cleared for Pade modes."""
    s = np.asarray(s, dtype=complex)
    a = np.polyval(_plant_poly(model), s)
    b = np.polyval(_spacing_poly(model), s)
    order = _mode_order(model, mode)
    if order is None:
        return a, b * np.exp(-model.params.delay_phi * s)
    if order == 0:
        return a, b
    num, den = pade(model.params.delay_phi, order)
    return a * np.polyval(den, s), b * np.polyval(num, s)


def char_eval(s, gains: ControllerGains, model: LoopModel):
    """delta(s) = s^2 (tau s + 1) + (kp + kd s) H(s) D(s) for the model's delay mode."""
    s_arr = np.asarray(s, dtype=complex)
    p = np.polyval(_plant_poly(model), s_arr)
    h = np.polyval(_spacing_poly(model), s_arr)
    order = _mode_order(model)
    phi = model.params.delay_phi
    if order is None:
        d = np.exp(-phi * s_arr)
    elif order == 0:
        d = 1.0
    else:
        num, den = pade(phi, order)
        d = np.polyval(num, s_arr) / np.polyval(den, s_arr)
    out = p + (gains.kp + gains.kd * s_arr) * h * d
    return complex(out) if np.ndim(s) == 0 else out


def char_poly(gains: ControllerGains, model: LoopModel, pade_order: int = 1) -> np.ndarray:
    """Coefficients (highest first) of the cleared rational characteristic polynomial."""
    a = _plant_poly(model)
    b = _spacing_poly(model)
    if model.delay_mode != "none" and model.params.delay_phi != 0:
        num, den = pade(model.params.delay_phi, pade_order)
        a, b = np.polymul(a, den), np.polymul(b, num)
    return np.polyadd(a, np.polymul([gains.kd, gains.kp], b))


def polyroots(coeffs) -> np.ndarray:
    """Companion-matrix roots; refuses a vanishing leading coefficient."""
    c = np.asarray(coeffs, dtype=float)
    scale = np.max(np.abs(c)) if c.size else 0.0
    if scale == 0 or abs(c[0]) < 1e-14 * scale:
        raise IllConditionedError(f"leading coefficient {c[0] if c.size else 0} underflows")
    return np.roots(c)


def poles(gains: ControllerGains, model: LoopModel, pade_order: int = 1) -> list[complex]:
    """Closed-loop poles of the rational model (order 3, or 3 + pade_order with delay)."""
    return [complex(r) for r in polyroots(char_poly(gains, model, pade_order))]


# ----------------------------------------------------------------------------
# boundary mapping


@dataclass(frozen=True)
class BoundaryCurve:
    label: str
    params: np.ndarray
    kp: np.ndarray
    kd: np.ndarray
    s: np.ndarray
    skipped: int = 0

    def __post_init__(self):
        for name in ("params", "kp", "kd"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ConfigError(f"{self.label}: non-finite {name}")
        if self.params.size > 1 and np.any(np.diff(self.params) <= 0):
            raise ConfigError(f"{self.label}: boundary parameter not strictly increasing")

    @property
    def points(self) -> np.ndarray:
        return np.column_stack([self.kp, self.kd])

    def residuals(self, model: LoopModel) -> np.ndarray:
        a, b = _terms(self.s, model)
        return np.abs(a + (self.kp + self.kd * self.s) * b)


def boundary_points(boundary: str, spec: DRegionSpec, grid) -> np.ndarray:
    """Map boundary parameters to complex points on the D-region contour."""
    g = np.asarray(grid, dtype=float)
    if boundary == "sigma":
        return -spec.sigma + 1j * g
    if boundary == "damping":
        th = spec.theta_eff
        return g * (-math.cos(th) + 1j * math.sin(th))
    if boundary == "bandwidth":
        return spec.omega_b * np.exp(1j * np.radians(g))
    raise ConfigError(f"unknown boundary {boundary!r}; expected one of {CRB_BOUNDARIES}")


def default_grid(boundary: str, spec: DRegionSpec, n: int = DEFAULT_RESOLUTION) -> np.ndarray:
    """Log-spaced boundary parameters covering the part of each contour near the region."""
    if boundary == "sigma":
        return np.geomspace(1e-3, spec.omega_b, n)
    if boundary == "damping":
        return np.geomspace(1e-3, spec.omega_b, n)
    if boundary == "bandwidth":
        return np.geomspace(90.0 + 1e-3, 180.0 - 1e-3, n)
    raise ConfigError(f"unknown boundary {boundary!r}")


def map_crb(boundary: str, spec: DRegionSpec, model: LoopModel, grid=None) -> BoundaryCurve:
    """Complex-root boundary: solve Re/Im of delta(s*) = 0 for (kp, kd) along a contour."""
    grid = default_grid(boundary, spec) if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ConfigError("boundary grid is empty")
    s = boundary_points(boundary, spec, grid)
    a, b = _terms(s, model)
    sb = s * b
    # kp * b + kd * s b = -a, split into real and imaginary rows
    det = b.real * sb.imag - b.imag * sb.real
    ok = np.abs(det) >= SINGULAR_DET
    if not np.any(ok):
        raise DegenerateBoundaryError(f"{boundary}: all {grid.size} boundary points singular")
    rhs_re, rhs_im = -a.real, -a.imag
    with np.errstate(divide="ignore", invalid="ignore"):
        kp = (rhs_re * sb.imag - rhs_im * sb.real) / det
        kd = (b.real * rhs_im - b.imag * rhs_re) / det
    ok &= np.isfinite(kp) & np.isfinite(kd)
    skipped = int(grid.size - np.count_nonzero(ok))
    if skipped:
        log.info("%s_crb: skipped %d singular points", boundary, skipped)
    return BoundaryCurve(f"{boundary}_crb", grid[ok], kp[ok], kd[ok], s[ok], skipped)


def rrb_anchor(boundary: str, spec: DRegionSpec) -> float:
    anchors = {"sigma": -spec.sigma, "bandwidth": -spec.omega_b, "zero": 0.0}
    if boundary not in anchors:
        raise ConfigError(f"unknown real-root boundary {boundary!r}; expected one of {RRB_BOUNDARIES}")
    return anchors[boundary]


def map_rrb(boundary: str, spec: DRegionSpec, model: LoopModel, kd_range=(0.0, 5.0),
            n: int = DEFAULT_RESOLUTION) -> BoundaryCurve:
    """Real-root boundary: the line delta(s_r) = 0 sampled over ``kd_range``."""
    s_r = rrb_anchor(boundary, spec)
    a, b = _terms(s_r, model)
    a, b = float(np.real(a)), float(np.real(b))
    if abs(b) < SINGULAR_DET:
        raise DegenerateBoundaryError(f"{boundary}_rrb: controller path vanishes at s={s_r}")
    kd = np.linspace(kd_range[0], kd_range[1], n)
    kp = -a / b - kd * s_r
    return BoundaryCurve(f"{boundary}_rrb", kd.copy(), kp, kd, np.full(n, s_r, dtype=complex))


# ----------------------------------------------------------------------------
# exact-delay roots and the D-test


def _exact_parts(gains, model, kp=None, kd=None):
    """f, f' of the exact-delay characteristic function (ignores delay_mode).

    ``kp``/``kd`` override the gains with broadcastable arrays.
    """
    phi = model.params.delay_phi
    hp = _spacing_poly(model)
    pp = _plant_poly(model)
    dpp, dhp = np.polyder(pp), np.polyder(hp) if hp.size > 1 else np.array([0.0])
    kp = gains.kp if kp is None else kp
    kd = gains.kd if kd is None else kd

    def f(s):
        c = kp + kd * s
        h = np.polyval(hp, s)
        return np.polyval(pp, s) + c * h * np.exp(-phi * s)

    def df(s):
        c = kp + kd * s
        h = np.polyval(hp, s)
        e = np.exp(-phi * s)
        return np.polyval(dpp, s) + (kd * h + c * np.polyval(dhp, s) - phi * c * h) * e

    return f, df


def _newton(f, df, z, iters=60):
    z = np.array(z, dtype=complex)
    with np.errstate(all="ignore"):
        for _ in range(iters):
            step = f(z) / df(z)
            step[~np.isfinite(step)] = 0
            z = z - step
            if np.all(np.abs(step) < 1e-13 * (1 + np.abs(z))):
                break
    return z


def _dedupe(z, tol=1e-6):
    out = []
    for r in sorted(z, key=lambda c: (round(c.real, 6), c.imag)):
        if all(abs(r - q) > tol * (1 + abs(r)) for q in out):
            out.append(r)
    return out


def _root_bound(gains, model, strip):
    """Radius beyond which no root with Re s >= -strip can exist."""
    tau, phi = model.params.lag_tau, model.params.delay_phi
    h = model.headway if model.headway_in_loop else 0.0
    growth = math.exp(phi * strip)
    r = max(4.0 / tau, 1.0)
    while r < 1e9:
        if r * r * (tau * r - 1) > (abs(gains.kp) + abs(gains.kd) * r) * (1 + h * r) * growth:
            return 2 * r
        r *= 1.5
    raise IllConditionedError("no root bound found")


def _winding_count(f, strip, radius, max_pts=2 ** 17):
    """Zeros of f inside [-strip, radius] x [-radius, radius] by the argument principle."""
    corners = [complex(-strip, -radius), complex(radius, -radius),
               complex(radius, radius), complex(-strip, radius)]
    total = 0.0
    for k in range(4):
        z0, z1 = corners[k], corners[(k + 1) % 4]
        n = 512
        while True:
            z = z0 + (z1 - z0) * np.linspace(0.0, 1.0, n)
            w = f(z)
            if np.min(np.abs(w)) == 0:
                return None
            dphi = np.angle(w[1:] / w[:-1])
            if np.max(np.abs(dphi)) < 0.5 or n >= max_pts:
                break
            n *= 4
        total += dphi.sum()
    return int(round(total / (2 * math.pi)))


def exact_roots(gains: ControllerGains, model: LoopModel, strip: float, certify=True):
    """Roots of the exact-delay characteristic function with Re s >= -strip.

    Returns ``(roots, certified)``; ``certified`` is ``None`` when the count
    was not attempted and ``False`` when it disagrees with the roots found.
    """
    if model.params.delay_phi == 0:
        return sorted(poles(gains, model.with_delay_mode("none")), key=abs), True
    f, df = _exact_parts(gains, model)
    seeds = []
    for order in (1, 2, 3):
        seeds.extend(poles(gains, model.with_delay_mode("exact"), order))
    seeds.extend(poles(gains, model.with_delay_mode("none")))
    z = _newton(f, df, seeds)
    scale = 1 + np.abs(np.polyval(_plant_poly(model), z))
    good = np.isfinite(z) & (np.abs(f(z)) < 1e-9 * scale) & (z.real >= -strip)
    roots = _dedupe(list(z[good]))
    if not certify:
        return roots, None
    radius = _root_bound(gains, model, strip)
    # nudge the left edge off any root that sits exactly on it
    left = strip * (1 + 1e-7)
    count = _winding_count(f, left, radius)
    if count is not None and count > len(roots):
        xs = np.linspace(-left, radius, 24)
        ys = np.linspace(-radius, radius, 24)
        z = _newton(f, df, (xs[:, None] + 1j * ys[None, :]).ravel())
        scale = 1 + np.abs(np.polyval(_plant_poly(model), z))
        inside = (np.isfinite(z) & (np.abs(f(z)) < 1e-9 * scale)
                  & (z.real >= -left) & (np.abs(z.imag) <= radius) & (z.real <= radius))
        roots = _dedupe(roots + list(z[inside]))
    roots = [r for r in roots if r.real >= -strip]
    return sorted(roots, key=abs), (count is not None and count == len(roots))


def damping_ratio(s: complex) -> float:
    return 0.0 if s == 0 else -s.real / abs(s)


def d_margins(roots, spec: DRegionSpec) -> dict:
    """Worst normalized slack per constraint; negative means violated."""
    if not roots:
        return {"sigma": math.inf, "damping": math.inf, "bandwidth": math.inf}
    r = np.asarray(roots, dtype=complex)
    damp = np.where(r == 0, 0.0, -r.real / np.where(r == 0, 1.0, np.abs(r)))
    return {
        "sigma": float(np.min((-r.real - spec.sigma) / spec.sigma)),
        "damping": float(np.min(damp - spec.zeta_min)),
        "bandwidth": float(np.min((spec.omega_b - np.abs(r)) / spec.omega_b)),
    }


@dataclass(frozen=True)
class PoleCertificate:
    gains: ControllerGains
    roots: tuple
    certified: bool | None
    margins: dict
    rational_poles: tuple = ()
    artifacts: tuple = ()

    @property
    def feasible(self) -> bool:
        return all(v >= 0 for v in self.margins.values())

    @property
    def margin(self) -> float:
        return min(self.margins.values())

    def to_dict(self) -> dict:
        def pairs(zs):
            return [[float(z.real), float(z.imag)] for z in zs]
        return {
            "kp": self.gains.kp, "kd": self.gains.kd,
            "feasible": self.feasible, "certified": self.certified,
            "margins": dict(self.margins),
            "roots": pairs(self.roots),
            "damping": [float(damping_ratio(z)) for z in self.roots],
            "rational_poles": pairs(self.rational_poles),
            "artifacts": pairs(self.artifacts),
        }


def pole_certificate(gains: ControllerGains, spec: DRegionSpec, model: LoopModel,
                     certify=True, pade_order: int = 1) -> PoleCertificate:
    """Authoritative D-test: exact-delay roots in Re s >= -omega_b against ``spec``."""
    roots, certified = exact_roots(gains, model, spec.omega_b, certify=certify)
    rational = tuple(poles(gains, model.with_delay_mode(
        "none" if model.delay_mode == "none" else "exact"), pade_order))
    artifacts = tuple(p for p in rational
                      if all(abs(p - r) > 0.05 * (1 + abs(p)) for r in roots))
    return PoleCertificate(gains, tuple(roots), certified, d_margins(roots, spec),
                           rational, artifacts)


def batch_margins(kp, kd, spec: DRegionSpec, model: LoopModel, seed_order: int = 2):
    """Worst D-margin for many gain pairs at once (uncertified fast path).

    Seeds are the companion-matrix roots of the order-``seed_order`` Pade model,
    refined by vectorized Newton steps on the exact-delay function. A seed
    that does not converge (a Pade artifact) is dropped.
    """
    kp = np.atleast_1d(np.asarray(kp, dtype=float))
    kd = np.atleast_1d(np.asarray(kd, dtype=float))
    exact = model.params.delay_phi != 0
    a, b = _plant_poly(model), _spacing_poly(model)
    if exact:
        num, den = pade(model.params.delay_phi, seed_order)
        a, b = np.polymul(a, den), np.polymul(b, num)
    deg = a.size - 1
    b_p = np.concatenate([np.zeros(deg + 1 - b.size), b])
    b_d = np.concatenate([np.zeros(deg - b.size), b, [0.0]])
    coef = a[None, :] + kp[:, None] * b_p[None, :] + kd[:, None] * b_d[None, :]
    comp = np.zeros((kp.size, deg, deg))
    comp[:, 0, :] = -coef[:, 1:] / coef[:, :1]
    comp[:, np.arange(1, deg), np.arange(deg - 1)] = 1.0
    z = np.linalg.eigvals(comp)
    valid = np.ones(z.shape, dtype=bool)
    if exact:
        f, df = _exact_parts(ControllerGains(0.0, 0.0), model, kp[:, None], kd[:, None])
        z = _newton(f, df, z)
        scale = 1 + np.abs(np.polyval(_plant_poly(model), z))
        valid = np.isfinite(z) & (np.abs(f(z)) < 1e-9 * scale) & (z.real >= -spec.omega_b)
        z = np.where(valid, z, -spec.omega_b * 0.5)
    mag = np.abs(z)
    with np.errstate(divide="ignore", invalid="ignore"):
        damp = np.where(mag == 0, 0.0, -z.real / mag)
    slack = np.minimum.reduce([(-z.real - spec.sigma) / spec.sigma,
                               damp - spec.zeta_min,
                               (spec.omega_b - mag) / spec.omega_b])
    slack = np.where(valid, slack, np.inf)
    return slack.min(axis=1)


def pole_test(gains, spec, model, certify=False) -> bool:
    if certify:
        return pole_certificate(gains, spec, model, certify=True).feasible
    return bool(batch_margins(gains.kp, gains.kd, spec, model)[0] >= 0)


# ----------------------------------------------------------------------------
# region assembly


@dataclass
class GainRegion:
    spec: DRegionSpec
    model: LoopModel
    curves: tuple
    sides: dict
    probe: PoleCertificate
    box: tuple  # (kp_lo, kp_hi, kd_lo, kd_hi)
    kp_grid: np.ndarray
    kd_grid: np.ndarray
    mask: np.ndarray  # pole-test feasibility, shape (len(kd_grid), len(kp_grid))
    active: dict = field(default_factory=dict)  # label -> indices of curve points on the region edge
    diagnostics: list = field(default_factory=list)

    @property
    def diameter(self) -> float:
        pts = self.feasible_points()
        if len(pts) < 2:
            return 0.0
        d = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((d ** 2).sum(-1)).max())

    def feasible_points(self) -> np.ndarray:
        kk, dd = np.meshgrid(self.kp_grid, self.kd_grid)
        return np.column_stack([kk[self.mask], dd[self.mask]])

    @cached_property
    def _segments(self):
        lo_p, hi_p, lo_d, hi_d = self.box
        pad_p, pad_d = hi_p - lo_p, hi_d - lo_d
        segs = []
        for c in self.curves:
            p = c.points
            keep = ((p[:, 0] > lo_p - pad_p) & (p[:, 0] < hi_p + pad_p)
                    & (p[:, 1] > lo_d - pad_d) & (p[:, 1] < hi_d + pad_d))
            idx = np.flatnonzero(keep[:-1] | keep[1:])
            if idx.size:
                segs.append(np.column_stack([p[idx], p[idx + 1]]))
        return np.vstack(segs) if segs else np.zeros((0, 4))

    def geometric_inside(self, points) -> np.ndarray:
        """True where the straight path from the probe crosses no boundary curve."""
        q = np.atleast_2d(np.asarray(points, dtype=float))
        seg = self._segments
        if seg.size == 0:
            return np.ones(len(q), dtype=bool)
        p0 = np.array([self.probe.gains.kp, self.probe.gains.kd])
        a, b = seg[:, :2], seg[:, 2:]
        out = np.empty(len(q), dtype=bool)
        for lo in range(0, len(q), 256):
            qq = q[lo:lo + 256]
            r = qq - p0                          # (m, 2)
            sv = b - a                           # (k, 2)
            denom = r[:, None, 0] * sv[None, :, 1] - r[:, None, 1] * sv[None, :, 0]
            ap = a[None, :, :] - p0
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (ap[..., 0] * sv[None, :, 1] - ap[..., 1] * sv[None, :, 0]) / denom
                u = (ap[..., 0] * r[:, None, 1] - ap[..., 1] * r[:, None, 0]) / denom
            hit = (denom != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
            out[lo:lo + 256] = ~hit.any(axis=1)
        return out

    def edge_points(self) -> dict[str, np.ndarray]:
        """Curve points where the pole test flips across the curve."""
        return {c.label: c.points[self.active.get(c.label, [])] for c in self.curves}

    def curve(self, label: str) -> BoundaryCurve:
        for c in self.curves:
            if c.label == label:
                return c
        raise KeyError(label)


def find_probe(spec, model, search_box=(0.0, 5.0, 0.0, 5.0), n=41) -> PoleCertificate:
    """Maximize the worst D-margin over the gains; raises if nothing is feasible."""
    kk, dd = np.meshgrid(np.linspace(search_box[0], search_box[1], n),
                         np.linspace(search_box[2], search_box[3], n))
    kk, dd = kk.ravel(), dd.ravel()
    score = batch_margins(kk, dd, spec, model)
    order = np.argsort(-score, kind="stable")

    def neg_margin(x):
        return -float(batch_margins(x[0], x[1], spec, model)[0])

    best = None
    for i in order[:4]:
        res = optimize.minimize(neg_margin, [kk[i], dd[i]], method="Nelder-Mead",
                                options={"xatol": 1e-7, "fatol": 1e-10, "maxiter": 2000})
        cand = pole_certificate(ControllerGains(float(res.x[0]), float(res.x[1])),
                                spec, model, certify=True)
        if best is None or cand.margin > best.margin:
            best = cand
        if best.feasible and best.certified:
            break
    if best is None or not best.feasible:
        worst = None if best is None else round(best.margin, 6)
        raise EmptyRegionError(
            f"no gains satisfy sigma={spec.sigma}, theta={spec.theta}, "
            f"omega_b={spec.omega_b} (best worst-margin {worst})")
    return best


def _extent(probe, spec, model, n_rays=32):
    """Bounding box of the feasible set star-shaped around the probe, by ray bisection."""
    p0 = np.array([probe.gains.kp, probe.gains.kd])
    ang = np.linspace(0, 2 * math.pi, n_rays, endpoint=False)
    d = np.column_stack([np.cos(ang), np.sin(ang)])

    def ok(r):
        q = p0 + r[:, None] * d
        return batch_margins(q[:, 0], q[:, 1], spec, model) >= 0

    lo, hi = np.zeros(n_rays), np.full(n_rays, 0.01)
    grow = ok(hi)
    while np.any(grow) and hi.max() < 100:
        lo = np.where(grow, hi, lo)
        hi = np.where(grow, 2 * hi, hi)
        grow = grow & ok(hi)
    for _ in range(30):
        mid = 0.5 * (lo + hi)
        good = ok(mid)
        lo, hi = np.where(good, mid, lo), np.where(good, hi, mid)
    pts = np.vstack([p0, p0 + hi[:, None] * d])
    lo, hi = pts.min(0), pts.max(0)
    pad = 0.25 * (hi - lo) + 1e-6
    return (float(lo[0] - pad[0]), float(hi[0] + pad[0]),
            float(lo[1] - pad[1]), float(hi[1] + pad[1]))


def _active_points(curve, spec, model, box, step):
    """Indices of curve points inside ``box`` where feasibility flips across the curve.

    Returns ``(index, side)`` arrays; side is +1 when the feasible side lies
    to the left of the direction of increasing boundary parameter.
    """
    p = curve.points
    lo_p, hi_p, lo_d, hi_d = box
    idx = np.flatnonzero((p[:, 0] >= lo_p) & (p[:, 0] <= hi_p)
                         & (p[:, 1] >= lo_d) & (p[:, 1] <= hi_d))
    idx = idx[(idx > 0) & (idx < len(p) - 1)]
    if idx.size == 0:
        return idx, idx
    t = p[idx + 1] - p[idx - 1]
    nrm = np.column_stack([-t[:, 1], t[:, 0]])
    length = np.hypot(nrm[:, 0], nrm[:, 1])
    keep = length > 0
    idx, nrm = idx[keep], nrm[keep] / length[keep, None]
    left = p[idx] + step * nrm
    right = p[idx] - step * nrm
    ok_l = batch_margins(left[:, 0], left[:, 1], spec, model) >= 0
    ok_r = batch_margins(right[:, 0], right[:, 1], spec, model) >= 0
    flip = ok_l != ok_r
    return idx[flip], np.where(ok_l[flip], 1, -1)


def assemble_region(spec: DRegionSpec, model: LoopModel, resolution: int = DEFAULT_RESOLUTION,
                    search_box=(0.0, 5.0, 0.0, 5.0), mask_resolution: int = 121) -> GainRegion:
    """Map all boundaries, find a certified interior probe, classify feasible sides."""
    if resolution < 2:
        raise ConfigError(f"resolution must be >= 2, got {resolution}")
    probe = find_probe(spec, model, search_box)
    box = _extent(probe, spec, model)
    curves = [map_crb(b, spec, model, default_grid(b, spec, resolution)) for b in CRB_BOUNDARIES]
    curves += [map_rrb(b, spec, model, (box[2], box[3]), resolution) for b in ("sigma", "bandwidth")]
    step = 0.005 * math.hypot(box[1] - box[0], box[3] - box[2])
    sides, active = {}, {}
    for c in curves:
        idx, side = _active_points(c, spec, model, box, step)
        sides[c.label] = int(np.sign(side.sum())) if side.size else 0
        active[c.label] = idx
    kp_grid = np.linspace(box[0], box[1], mask_resolution)
    kd_grid = np.linspace(box[2], box[3], mask_resolution)
    kk, dd = np.meshgrid(kp_grid, kd_grid)
    mask = (batch_margins(kk.ravel(), dd.ravel(), spec, model) >= 0).reshape(kk.shape)
    return GainRegion(spec, model, tuple(curves), sides, probe, box, kp_grid, kd_grid, mask,
                      active=active)


@dataclass(frozen=True)
class Membership:
    inside: bool
    geometric: bool
    certificate: PoleCertificate


def membership(gains: ControllerGains, region: GainRegion) -> Membership:
    cert = pole_certificate(gains, region.spec, region.model, certify=True)
    geo = bool(region.geometric_inside([(gains.kp, gains.kd)])[0])
    if geo != cert.feasible:
        msg = (f"geometry/pole mismatch at kp={gains.kp:.6g}, kd={gains.kd:.6g}: "
               f"pole test {cert.feasible}, geometry {geo}")
        region.diagnostics.append(msg)
        log.warning(msg)
    return Membership(cert.feasible, geo, cert)


def in_region(gains: ControllerGains, region: GainRegion) -> bool:
    """Pole-test membership; disagreements with the curve geometry go to diagnostics."""
    return membership(gains, region).inside


def geometric_mask(region: GainRegion) -> np.ndarray:
    kk, dd = np.meshgrid(region.kp_grid, region.kd_grid)
    pts = np.column_stack([kk.ravel(), dd.ravel()])
    return region.geometric_inside(pts).reshape(kk.shape)


# ----------------------------------------------------------------------------
# export


def write_region_csv(region: GainRegion, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["label", "parameter", "kp", "kd"])
        for c in region.curves:
            for t, p, d in zip(c.params, c.kp, c.kd):
                w.writerow([c.label, repr(float(t)), repr(float(p)), repr(float(d))])


def read_region_csv(path) -> dict[str, np.ndarray]:
    out: dict[str, list] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(row["label"], []).append(
                (float(row["parameter"]), float(row["kp"]), float(row["kd"])))
    return {k: np.array(v) for k, v in out.items()}


def region_summary(region: GainRegion, extra=()) -> dict:
    """Structured summary: spec, model, probe certificate, side flags, extra certificates."""
    m = region.model
    return {
        "spec": asdict(region.spec) | {"zeta_min": region.spec.zeta_min},
        "model": {"delay_mode": m.delay_mode, "headway": m.headway,
                  "headway_in_loop": m.headway_in_loop, **asdict(m.params)},
        "box": list(region.box),
        "sides": dict(region.sides),
        "curves": {c.label: {"points": int(c.params.size), "skipped": c.skipped}
                   for c in region.curves},
        "feasible_cells": int(region.mask.sum()),
        "probe": region.probe.to_dict(),
        "checked": [c.to_dict() for c in extra],
        "diagnostics": list(region.diagnostics),
    }


def write_region_json(region: GainRegion, path, extra=()) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(region_summary(region, extra), fh, indent=2, sort_keys=True)
        fh.write("\n")
