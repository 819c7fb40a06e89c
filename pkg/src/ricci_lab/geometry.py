"""Rotationally symmetric profile metrics, cutoff functions and coordinate metric fields.

A profile metric is ``g = phi(x)^2 dx^2 + psi(x)^2 g_{S^q}`` sampled on a
uniform coordinate grid.  ``phi`` is the coordinate-to-arclength factor, so
``ds = phi dx``; the grid itself never moves during a flow.

Positions along the profile (band limits, cutoff centres, level sets) are
given in *centred arclength*: arclength measured from the midpoint of the
profile, so a symmetric dumbbell has its neck at ``s = 0``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp
from scipy.interpolate import RegularGridInterpolator

from . import _stencils as st
from .errors import ConstructionError, InvariantError, ParameterError

TOPOLOGIES = ("sphere", "periodic")
CLOSING_SLOPE_RTOL = 1e-3
UNIFORM_GRID_RTOL = 1e-9


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ProfileMetric:
    """Warped product ``phi^2 dx^2 + psi^2 g_{S^q}`` on a uniform grid.

    For ``topology="sphere"`` the first and last nodes are the poles.  For
    ``topology="periodic"`` the grid has period ``M * h`` and the last node is
    *not* a copy of the first.
    """

    q: int
    x: np.ndarray
    phi: np.ndarray
    psi: np.ndarray
    topology: str = "sphere"
    symmetric: bool = False
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "x", _frozen(self.x))
        object.__setattr__(self, "phi", _frozen(self.phi))
        object.__setattr__(self, "psi", _frozen(self.psi))
        object.__setattr__(self, "q", int(self.q))
        if self.check:
            self.validate()

    @property
    def dim(self) -> int:
        return self.q + 1

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def periodic(self) -> bool:
        return self.topology == "periodic"

    @property
    def n(self) -> int:
        return self.x.size

    def validate(self) -> None:
        x, phi, psi = self.x, self.phi, self.psi
        if self.q < 2:
            raise InvariantError(f"fiber dimension q must be >= 2, got {self.q}")
        if self.topology not in TOPOLOGIES:
            raise InvariantError(f"unknown topology {self.topology!r}")
        if not (x.ndim == phi.ndim == psi.ndim == 1 and x.size == phi.size == psi.size):
            raise InvariantError("x, phi, psi must be 1D arrays of equal length")
        if x.size < 5:
            raise InvariantError("need at least 5 grid nodes")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))):
            raise InvariantError("non-finite phi or psi")
        dx = np.diff(x)
        if np.any(dx <= 0):
            raise InvariantError("grid must be strictly increasing")
        if np.max(np.abs(dx - dx[0])) > UNIFORM_GRID_RTOL * abs(dx[0]) * 10 + 1e-14:
            raise InvariantError("grid must be uniformly spaced")
        if np.any(phi <= 0):
            raise InvariantError("phi must be positive")
        if self.periodic:
            if np.any(psi <= 0):
                raise InvariantError("periodic profiles need psi > 0 everywhere")
            return
        if psi[0] != 0.0 or psi[-1] != 0.0:
            raise InvariantError("closed-sphere profile needs psi = 0 at both poles")
        if np.any(psi[1:-1] <= 0):
            raise InvariantError("psi must be positive at interior nodes")
        for slope in pole_slopes(self):
            if abs(abs(slope) - 1.0) > CLOSING_SLOPE_RTOL:
                raise InvariantError(f"pole does not close smoothly: |psi_s| = {abs(slope):.6g}")
        if self.symmetric and np.max(np.abs(psi - psi[::-1])) > 1e-9 * np.max(psi):
            raise InvariantError("profile flagged symmetric but psi is not even")

    def replace(self, **changes) -> "ProfileMetric":
        kw = dict(q=self.q, x=self.x, phi=self.phi, psi=self.psi,
                  topology=self.topology, symmetric=self.symmetric, check=self.check)
        kw.update(changes)
        return ProfileMetric(**kw)

    @property
    def s(self) -> np.ndarray:
        """Centred arclength at the nodes."""
        a = arclength(self)
        return a - 0.5 * a[-1]

    @property
    def length(self) -> float:
        return float(arclength(self)[-1])


def pole_slopes(profile: ProfileMetric) -> tuple[float, float]:
    """Arclength slope psi_s at the two poles, using the odd-reflection stencil."""
    dpsi = st.d1(profile.psi, profile.h, False, parity=-1)
    return float(dpsi[0] / profile.phi[0]), float(dpsi[-1] / profile.phi[-1])


def arclength(profile: ProfileMetric) -> np.ndarray:
    """Cumulative arclength ``s(x) = int phi dx`` with ``s(x_0) = 0``."""
    s = cumulative_simpson(profile.phi, x=profile.x, initial=0.0)
    # Simpson can stall on wildly oscillating phi; monotonicity is an invariant.
    if np.any(np.diff(s) <= 0):
        s = np.concatenate([[0.0], np.cumsum(0.5 * (profile.phi[1:] + profile.phi[:-1]) * np.diff(profile.x))])
    return s


# ---------------------------------------------------------------------------
# builders


def build_round_sphere(rho: float, q: int, M: int) -> ProfileMetric:
    """Round sphere of radius ``rho`` in the arclength gauge, ``M`` grid intervals."""
    if not rho > 0:
        raise ParameterError("rho must be positive")
    if q < 2:
        raise ParameterError("q must be >= 2")
    if M < 16:
        raise ParameterError("M must be >= 16")
    x = np.linspace(-0.5 * math.pi * rho, 0.5 * math.pi * rho, M + 1)
    psi = rho * np.cos(x / rho)
    psi[0] = psi[-1] = 0.0
    return ProfileMetric(q, x, np.ones_like(x), psi, "sphere", symmetric=True)


def build_cylinder(rho: float, q: int, M: int, period: float = 2 * math.pi) -> ProfileMetric:
    """Periodic cylinder ``ds^2 + rho^2 g_{S^q}`` (test fixture)."""
    if not rho > 0 or not period > 0:
        raise ParameterError("rho and period must be positive")
    if M < 16:
        raise ParameterError("M must be >= 16")
    x = np.arange(M) * (period / M)
    return ProfileMetric(q, x, np.ones(M), np.full(M, float(rho)), "periodic")


def smoothstep7(u):
    """C^3 step 0 -> 1 on [0, 1]."""
    u = np.clip(u, 0.0, 1.0)
    return u**4 * (35.0 - 84.0 * u + 70.0 * u**2 - 20.0 * u**3)


@dataclass(frozen=True)
class DumbbellShape:
    """Closed-form description of a dumbbell profile on ``s >= 0`` (it is even)."""

    G: float
    c: float
    width: float
    cap_radius: float
    half_length: float
    transition: object  # dense ODE solution on [c, c + width]

    def psi(self, s) -> np.ndarray:
        s = np.abs(np.asarray(s, dtype=float))
        out = np.empty_like(s)
        band = s <= self.c
        cap = s >= self.c + self.width
        mid = ~(band | cap)
        out[band] = np.sqrt(self.G**2 + s[band] ** 2)
        out[cap] = self.cap_radius * np.sin((self.half_length - s[cap]) / self.cap_radius)
        if np.any(mid):
            out[mid] = self.transition.sol(s[mid])[0]
        out[s >= self.half_length] = 0.0
        return out

    @property
    def bump_position(self) -> float:
        return self.half_length - 0.5 * math.pi * self.cap_radius


def dumbbell_shape(G: float, c: float, width: float = 0.5) -> DumbbellShape:
    """Solve for the dumbbell profile.

    The slope ``v = psi_s`` obeys ``v' = kappa(s) (1 - v^2) / psi``.  With
    ``kappa = 1`` this is exactly the neck ``sqrt(G^2 + s^2)``; ``kappa = -1`` is
    a round sphere.  ``kappa`` is switched from 1 to -1 over ``[c, c + width]``
    with a C^3 step, after which the solution is a spherical cap that closes
    the pole with ``|psi_s| = 1``.  Along the whole profile
    ``a = -(1 - v^2)(kappa + 1)`` and ``R`` has the sign of ``q - 1 - 2 kappa``.
    """
    if not (0 < G < c):
        raise ParameterError("need 0 < G < c")
    if not width > 0:
        raise ParameterError("transition width must be positive")
    psi_c = math.hypot(G, c)
    v_c = c / psi_c

    def rhs(s, y):
        kappa = 1.0 - 2.0 * smoothstep7((s - c) / width)
        return [y[1], kappa * (1.0 - y[1] ** 2) / y[0]]

    def hits_zero(s, y):
        return y[0] - 1e-9 * psi_c

    hits_zero.terminal = True
    sol = solve_ivp(rhs, (c, c + width), [psi_c, v_c], method="DOP853",
                    rtol=1e-13, atol=1e-15, dense_output=True, events=hits_zero)
    if sol.status != 0 or sol.t[-1] < c + width:
        raise ConstructionError("transition ODE failed before reaching the cap")
    psi1, v1 = sol.y[0, -1], sol.y[1, -1]
    if not (psi1 > 0 and abs(v1) < 1):
        raise ConstructionError("transition left the admissible region |psi_s| < 1")
    A = psi1 / math.sqrt(1.0 - v1 * v1)
    theta1 = math.atan2(psi1 / A, -v1)
    L = c + width + A * theta1
    shape = DumbbellShape(G, c, width, A, L, sol)
    # joins are smooth by construction; guard against a broken dense output
    for s_join in (c, c + width):
        lo, hi = shape.psi([s_join - 1e-7, s_join + 1e-7])
        if abs(hi - lo) > 1e-5 * psi_c:
            raise ConstructionError(f"non-smooth join at s = {s_join}")
    return shape


def build_dumbbell(G: float, c: float, q: int = 3, width: float = 0.5, M: int = 800,
                   gauge: str = "arclength") -> ProfileMetric:
    """Even dumbbell with neck ``psi = sqrt(G^2 + s^2)`` on ``|s| <= c``.

    ``gauge="arclength"`` samples uniformly in ``s``.  ``gauge="neck"`` behaves
    like ``s = G sinh(x)`` near the neck, clustering nodes there, and is
    flattened towards the poles (see :func:`_neck_gauge`).  ``M`` is the number of intervals and must be even
    so the neck sits on a node.  The hypotheses of the pinching theorem are
    not guaranteed; run :func:`ricci_lab.monitors.ak_hypotheses`.
    """
    if q < 2:
        raise ParameterError("q must be >= 2")
    if M < 16 or M % 2:
        raise ParameterError("M must be an even integer >= 16")
    shape = dumbbell_shape(G, c, width)
    L = shape.half_length
    if gauge == "arclength":
        x = np.linspace(-L, L, M + 1)
        s = x.copy()
        phi = np.ones_like(x)
    elif gauge == "neck":
        x, s, phi = _neck_gauge(G, L, M)
    else:
        raise ParameterError(f"unknown gauge {gauge!r}")
    x[M // 2] = 0.0
    s[M // 2] = 0.0
    psi = shape.psi(s)
    psi = 0.5 * (psi + psi[::-1])
    phi = 0.5 * (phi + phi[::-1])
    psi[0] = psi[-1] = 0.0
    return ProfileMetric(q, x, phi, psi, "sphere", symmetric=True)


def _neck_gauge(G: float, L: float, M: int):
    """Grid clustered at the neck: ``phi = G cosh(u(x))``, ``u = (2X/pi) sin(pi x / 2X)``.

    ``u ~ x`` near the neck (so ``s ~ G sinh x``) while ``phi`` is even about
    both poles, as the pole ghost layers require.  ``X`` is fixed by ``s(X) = L``.
    """
    from scipy.optimize import brentq

    gx, gw = np.polynomial.legendre.leggauss(12)

    def phi_of(x, X):
        return G * np.cosh((2 * X / math.pi) * np.sin(math.pi * x / (2 * X)))

    def cell_integrals(x, X):
        a, b = x[:-1, None], x[1:, None]
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        return (half * phi_of(mid + half * gx, X) * gw).sum(axis=1)

    def total(X):
        xs = np.linspace(0.0, X, 65)
        return cell_integrals(xs, X).sum() - L

    X = brentq(total, 1e-6, 4.0 * math.asinh(L / G) + 10.0, xtol=1e-14)
    x = np.linspace(-X, X, M + 1)
    s = np.concatenate([[0.0], np.cumsum(cell_integrals(x, X))])
    s = s - s[M // 2]
    s[0], s[-1] = -L, L
    return x, s, phi_of(x, X)


def resample(profile: ProfileMetric, M: int) -> ProfileMetric:
    """Cubic-spline resampling onto a uniform grid with ``M`` intervals (same x-range)."""
    from scipy.interpolate import CubicSpline

    if profile.periodic:
        raise ParameterError("resampling is only defined for closed profiles")
    x = np.linspace(profile.x[0], profile.x[-1], M + 1)
    # odd/even extension across the poles keeps the spline consistent with the ghosts
    xe = np.concatenate([2 * profile.x[0] - profile.x[4:0:-1], profile.x, 2 * profile.x[-1] - profile.x[-2:-6:-1]])
    psi_e = np.concatenate([-profile.psi[4:0:-1], profile.psi, -profile.psi[-2:-6:-1]])
    phi_e = np.concatenate([profile.phi[4:0:-1], profile.phi, profile.phi[-2:-6:-1]])
    psi = CubicSpline(xe, psi_e)(x)
    phi = CubicSpline(xe, phi_e)(x)
    psi[0] = psi[-1] = 0.0
    return profile.replace(x=x, phi=phi, psi=psi)


def equidistribute(profile: ProfileMetric, density: np.ndarray) -> ProfileMetric:
    """Regrid a closed profile so that node spacing in arclength is ``~ 1/density``.

    ``density`` is a positive field on the current nodes, even about the poles.
    The x-range and node count are kept; the new ``phi`` is ``ds/dx`` of the
    equidistributing map, so ``psi`` is sampled at exact arclength positions.
    """
    from scipy.interpolate import make_interp_spline

    if profile.periodic:
        raise ParameterError("equidistribution is only defined for closed profiles")
    m = np.asarray(density, dtype=float)
    if m.shape != (profile.n,) or not np.all(np.isfinite(m)) or np.any(m <= 0):
        raise ParameterError("density must be a positive finite field on the nodes")
    s = arclength(profile)
    L = s[-1]
    n = profile.n
    # mirrored copies past both poles keep the splines even/odd there
    se = np.concatenate([-s[5:0:-1], s, 2 * L - s[-2:-7:-1]])
    me = np.concatenate([m[5:0:-1], m, m[-2:-7:-1]])
    pe = np.concatenate([-profile.psi[5:0:-1], profile.psi, -profile.psi[-2:-7:-1]])
    m_sp = make_interp_spline(se, me, k=5)
    psi_sp = make_interp_spline(se, pe, k=5)
    mu = m_sp.antiderivative()
    mu0, muL = float(mu(0.0)), float(mu(L))
    target = mu0 + (muL - mu0) * np.arange(n) / (n - 1)
    fine = np.linspace(0.0, L, 16 * n + 1)
    s_new = np.interp(target, mu(fine), fine)
    for _ in range(4):  # Newton polish of mu(s) = target
        s_new = np.clip(s_new - (mu(s_new) - target) / m_sp(s_new), 0.0, L)
    s_new[0], s_new[-1] = 0.0, L
    x = profile.x
    phi = (muL - mu0) / (x[-1] - x[0]) / m_sp(s_new)
    psi = psi_sp(s_new)
    psi[0] = psi[-1] = 0.0
    return profile.replace(phi=phi, psi=psi)


# ---------------------------------------------------------------------------
# cutoff


def rounded_ramp(u, shoulder: float = 0.3):
    """Monotone C^3 ramp 0 -> 1 on [0, 1]: linear core with quintic-smoothstep shoulders.

    The slope profile rises over ``[0, shoulder]``, is flat, then falls over
    ``[1 - shoulder, 1]``; the peak slope is ``1 / (1 - shoulder)``.
    """
    if not 0 < shoulder <= 0.5:
        raise ParameterError("shoulder must lie in (0, 1/2]")
    d = shoulder
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)

    def P(t):  # antiderivative of the quintic smoothstep, P(1) = 1/2
        return t**6 - 3.0 * t**5 + 2.5 * t**4

    out = np.where(u < d, d * P(u / d), 0.5 * d + (u - d))
    out = np.where(u > 1 - d, (1 - d) - d * P((1 - u) / d), out)
    return out / (1.0 - d)


@dataclass(frozen=True, eq=False)
class CutoffProfile:
    """Cutoff chi on a profile grid; ``support`` is ``(s0, r_in, r_out)`` or None."""

    chi: np.ndarray
    support: tuple[float, float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "chi", _frozen(self.chi))
        if np.any(self.chi < 0) or np.any(self.chi > 1):
            raise InvariantError("cutoff must take values in [0, 1]")

    @classmethod
    def constant(cls, profile: ProfileMetric, value: float) -> "CutoffProfile":
        return cls(np.full(profile.n, float(value)))

    def grad_sup(self, profile: ProfileMetric) -> float:
        """Discrete ``max |d chi / ds|`` from node differences."""
        ds = np.diff(arclength(profile))
        return float(np.max(np.abs(np.diff(self.chi)) / ds))


def build_cutoff(profile: ProfileMetric, s0: float, r_in: float, r_out: float,
                 shoulder: float = 0.3) -> CutoffProfile:
    """chi = 1 within arclength ``r_in`` of ``s0``, 0 beyond ``r_out``.

    With the default shoulder the steepest slope is ``1/(0.7 (r_out - r_in))``,
    i.e. about 3.43 for the standard (1/4, 2/3) annulus.
    """
    if not (0 < r_in < r_out):
        raise ParameterError("need 0 < r_in < r_out")
    s = profile.s
    if s0 - r_out < s[0] - 1e-12 or s0 + r_out > s[-1] + 1e-12:
        raise ParameterError("cutoff support exceeds the profile domain")
    u = (np.abs(s - s0) - r_in) / (r_out - r_in)
    chi = 1.0 - rounded_ramp(u, shoulder)
    chi[u <= 0] = 1.0
    chi[u >= 1] = 0.0
    return CutoffProfile(chi, (float(s0), float(r_in), float(r_out)))


# ---------------------------------------------------------------------------
# coordinate metric fields


@dataclass(frozen=True, eq=False)
class CoordinateMetricField:
    """SPD matrix field on a tensor grid; ``g.shape == grid_shape + (m, m)``.

    ``axes`` may be None for an unstructured list of nodes (``g.shape == (N, m, m)``).
    """

    g: np.ndarray
    axes: tuple | None = None

    def __post_init__(self):
        g = _frozen(self.g)
        object.__setattr__(self, "g", g)
        if self.axes is not None:
            object.__setattr__(self, "axes", tuple(_frozen(a) for a in self.axes))
        if g.ndim < 3 or g.shape[-1] != g.shape[-2]:
            raise InvariantError("g must have shape (..., m, m)")
        if self.axes is not None:
            if len(self.axes) != self.dim or tuple(a.size for a in self.axes) != g.shape[:-2]:
                raise InvariantError("axes do not match the field shape")
        flat = self.flat
        if not np.allclose(flat, np.swapaxes(flat, -1, -2), rtol=1e-12, atol=1e-14):
            raise InvariantError("metric matrices must be symmetric")
        if np.any(np.linalg.eigvalsh(flat)[:, 0] <= 0):
            raise InvariantError("metric matrices must be positive definite")

    @property
    def dim(self) -> int:
        return self.g.shape[-1]

    @property
    def flat(self) -> np.ndarray:
        return self.g.reshape(-1, self.dim, self.dim)

    @property
    def nodes(self) -> np.ndarray:
        if self.axes is None:
            raise ParameterError("unstructured field has no coordinate nodes")
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @classmethod
    def from_function(cls, axes: Sequence[np.ndarray], func: Callable[[np.ndarray], np.ndarray]):
        """Sample ``func(points) -> (N, m, m)`` on the tensor grid spanned by ``axes``."""
        axes = tuple(np.asarray(a, dtype=float) for a in axes)
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.ravel() for m in mesh], axis=-1)
        g = np.asarray(func(pts), dtype=float)
        return cls(g.reshape(tuple(a.size for a in axes) + g.shape[-2:]), axes)

    def at(self, points: np.ndarray) -> np.ndarray:
        """Multilinear interpolation of the matrices (convex combinations stay SPD)."""
        if self.axes is None:
            raise ParameterError("cannot interpolate an unstructured field")
        m = self.dim
        interp = RegularGridInterpolator(self.axes, self.g.reshape(self.g.shape[:-2] + (m * m,)))
        return interp(np.atleast_2d(points)).reshape(-1, m, m)


def profile_metric_field(profile: ProfileMetric) -> CoordinateMetricField:
    """``diag(phi^2, psi^2, ..., psi^2)`` at the nodes where ``psi > 0``.

    Angular directions are orthonormalised against the round fiber metric,
    which both compared metrics share, so pencil eigenvalues are unaffected.
    """
    keep = profile.psi > 0
    d = profile.dim
    g = np.zeros((int(keep.sum()), d, d))
    g[:, 0, 0] = profile.phi[keep] ** 2
    for i in range(1, d):
        g[:, i, i] = profile.psi[keep] ** 2
    return CoordinateMetricField(g)


# ---------------------------------------------------------------------------
# serialization


def profile_to_text(profile: ProfileMetric, time: float | None = None) -> str:
    head = [f"# q = {profile.q}", f"# topology = {profile.topology}",
            f"# symmetric = {int(profile.symmetric)}"]
    if time is not None:
        head.append(f"# t = {time!r}")
    rows = [f"{x!r} {p!r} {s!r}" for x, p, s in zip(profile.x.tolist(), profile.phi.tolist(), profile.psi.tolist())]
    return "\n".join(head + ["# x phi psi"] + rows) + "\n"


def profile_from_text(text: str, check: bool = True) -> ProfileMetric:
    meta = {}
    rows = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if "=" in line:
                k, v = line[1:].split("=", 1)
                meta[k.strip()] = v.strip()
            continue
        rows.append([float(t) for t in line.split()])
    try:
        data = np.array(rows, dtype=float)
        return ProfileMetric(int(meta["q"]), data[:, 0], data[:, 1], data[:, 2],
                             meta.get("topology", "sphere"), bool(int(meta.get("symmetric", "0"))), check)
    except (KeyError, IndexError) as exc:
        raise ParameterError(f"malformed profile text: {exc}") from exc


def profile_to_json(profile: ProfileMetric) -> str:
    return json.dumps({"q": profile.q, "topology": profile.topology, "symmetric": profile.symmetric,
                       "x": profile.x.tolist(), "phi": profile.phi.tolist(), "psi": profile.psi.tolist()},
                      sort_keys=True)


def profile_from_json(text: str, check: bool = True) -> ProfileMetric:
    d = json.loads(text)
    return ProfileMetric(d["q"], d["x"], d["phi"], d["psi"], d["topology"], d["symmetric"], check)


def metric_field_to_json(field_: CoordinateMetricField) -> str:
    axes = None if field_.axes is None else [a.tolist() for a in field_.axes]
    return json.dumps({"axes": axes, "g": field_.g.tolist()}, sort_keys=True)


def metric_field_from_json(text: str) -> CoordinateMetricField:
    d = json.loads(text)
    axes = None if d["axes"] is None else tuple(np.asarray(a) for a in d["axes"])
    return CoordinateMetricField(np.asarray(d["g"], dtype=float), axes)
