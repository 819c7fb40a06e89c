"""Volumes, integral norms, level-set isoperimetric quotients and explicit constants.

Integrals use the warped measure ``alpha(q) psi^q phi dx``, integrating a
quintic spline of the integrand in ``x``.  Domains are arclength bands: a band ``[lo, hi]`` in
centred arclength, and the ball ``B(s0, r)`` is the band ``|s - s0| <= r``
(clipped at a pole when centred on one).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.interpolate import make_interp_spline

from .curvature import curvature_state
from .errors import BoundaryDegenerateError, ParameterError
from .geometry import ProfileMetric, build_dumbbell
from .oracles import band_kn_integral_exact


def alpha(k: int) -> float:
    """Volume of the unit k-sphere."""
    return 2.0 * math.pi ** ((k + 1) / 2) / math.gamma((k + 1) / 2)


def ball_volume(k: int) -> float:
    """Volume of the unit k-ball, ``alpha(k-1)/k``."""
    return alpha(k - 1) / k


@dataclass(frozen=True)
class Band:
    """Closed arclength interval ``[lo, hi]`` in centred arclength; None means unbounded."""

    lo: float | None = None
    hi: float | None = None

    def __post_init__(self):
        if self.lo is not None and self.hi is not None and self.lo > self.hi:
            raise ParameterError(f"band has lo > hi ({self.lo} > {self.hi})")

    @classmethod
    def ball(cls, s0: float, r: float) -> "Band":
        if not r >= 0:
            raise ParameterError("ball radius must be non-negative")
        return cls(s0 - r, s0 + r)


ALL = Band()


def _band_limits(profile: ProfileMetric, band: Band | None, s: np.ndarray | None = None):
    """Coordinate interval ``[x_lo, x_hi]`` covered by ``band`` (empty when ``x_hi <= x_lo``)."""
    x = profile.x
    if band is None or (band.lo is None and band.hi is None):
        return float(x[0]), float(x[-1])
    if profile.periodic:
        raise ParameterError("bands are only defined on closed profiles")
    if s is None:
        s = profile.s
    lo = s[0] if band.lo is None else max(band.lo, s[0])
    hi = s[-1] if band.hi is None else min(band.hi, s[-1])
    if hi <= lo:
        return 0.0, 0.0
    x_of_s = make_interp_spline(s, x, k=5)
    xlo = x[0] if lo <= s[0] else float(np.clip(x_of_s(lo), x[0], x[-1]))
    xhi = x[-1] if hi >= s[-1] else float(np.clip(x_of_s(hi), x[0], x[-1]))
    return xlo, xhi


def integrate(values: np.ndarray, profile: ProfileMetric, band: Band | None = None,
              s: np.ndarray | None = None) -> float:
    """``int_band f dVol`` with ``dVol = alpha(q) psi^q phi dx``.

    Closed profiles integrate a quintic interpolating spline of the integrand
    exactly; periodic profiles use the (spectrally accurate) rectangle rule.
    """
    f = np.asarray(values, dtype=float) * profile.psi ** profile.q * profile.phi
    if profile.periodic:
        if band is not None and (band.lo is not None or band.hi is not None):
            raise ParameterError("bands are only defined on closed profiles")
        return alpha(profile.q) * profile.h * float(np.sum(f))
    xlo, xhi = _band_limits(profile, band, s)
    if xhi <= xlo:
        return 0.0
    return alpha(profile.q) * float(make_interp_spline(profile.x, f, k=5).integrate(xlo, xhi))


def band_volume(profile: ProfileMetric, band: Band | None = None) -> float:
    return integrate(np.ones(profile.n), profile, band)


def lp_norm(values: np.ndarray, p: float, profile: ProfileMetric, band: Band | None = None) -> float:
    """``(int_band |f|^p dVol)^(1/p)``; ``p = inf`` is the max over band nodes."""
    f = np.abs(np.asarray(values, dtype=float))
    if p == math.inf:
        if band is None or (band.lo is None and band.hi is None):
            return float(np.max(f))
        s = profile.s
        lo = -math.inf if band.lo is None else band.lo
        hi = math.inf if band.hi is None else band.hi
        inside = (s >= lo) & (s <= hi)
        return float(np.max(f[inside])) if np.any(inside) else 0.0
    if p < 1:
        raise ParameterError("p must be >= 1")
    return integrate(f**p, profile, band) ** (1.0 / p)


# ---------------------------------------------------------------------------
# isoperimetric quotients over sublevel sets of s


@dataclass(frozen=True)
class IsoScan:
    b: np.ndarray
    volume: np.ndarray
    boundary: np.ndarray
    Q: np.ndarray

    @property
    def sup(self) -> float:
        return float(np.max(self.Q))


def iso_quotient_scan(profile: ProfileMetric, b_values, s_lo: float | None = None) -> IsoScan:
    """``Q(b) = Vol(Omega_b)^((d-1)/d) / Vol(dOmega_b)`` for ``Omega_b = {s_lo <= s <= b}``.

    With ``s_lo=None`` the domain starts at the first pole and its boundary is
    the single fiber sphere at ``b``; otherwise both end spheres count.
    """
    if profile.periodic:
        raise ParameterError("iso scan needs a closed profile")
    d, q = profile.dim, profile.q
    s = profile.s
    b_values = np.atleast_1d(np.asarray(b_values, dtype=float))
    psi_at = lambda b: float(np.interp(b, s, profile.psi))
    lo_area = 0.0
    if s_lo is not None:
        if not s[0] < s_lo < s[-1]:
            raise ParameterError("s_lo must lie strictly inside the profile")
        lo_area = alpha(q) * psi_at(s_lo) ** q
    vols, areas = [], []
    for b in b_values:
        if not s[0] < b < s[-1] or (s_lo is not None and b <= s_lo):
            raise ParameterError(f"b = {b} outside the admissible range")
        r = psi_at(b)
        if r <= 0:
            raise BoundaryDegenerateError(f"psi(b) = 0 at b = {b}")
        vols.append(band_volume(profile, Band(s_lo, b)))
        areas.append(lo_area + alpha(q) * r**q)
    vols = np.array(vols)
    areas = np.array(areas)
    return IsoScan(b_values, vols, areas, vols ** ((d - 1) / d) / areas)


def iso_scan_to_csv(rows) -> str:
    """``rows`` of ``(G, b, Q)`` to CSV text."""
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["G", "b", "Q"])
    for row in rows:
        wr.writerow([repr(float(v)) for v in row])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# explicit constants


def varpi(n: int, eta: float) -> float:
    """Energy-gap threshold on ``|Rm|_{n/2}``."""
    if n < 3:
        raise ParameterError("varpi needs n >= 3")
    if not eta > 0:
        raise ParameterError("eta must be positive")
    return (7.0 / 8.0 * 2.0 ** (-1.0 - 2.0 / n) * (n - 2) ** 2 / (n**2 * (n - 1) ** 2)
            * alpha(n - 1) ** 2 * alpha(n) ** (2.0 / n - 2.0) * eta ** (2 * n + 2))


def deane_iso_constant(n: int, eta: float, eps: float) -> float:
    if n < 2:
        raise ParameterError("need n >= 2")
    if not eta > 0:
        raise ParameterError("eta must be positive")
    if not 0.0 <= eps <= 1.0:
        raise ParameterError("eps must lie in [0, 1]")
    return ((1.0 - eps) * 2.0 ** (1.0 - 1.0 / n) * alpha(n - 1)
            * alpha(n) ** (1.0 / n - 1.0) * eta ** (n + 1))


def sobolev_from_iso(n: int, C_s: float) -> float:
    """Sobolev constant ``A0 = (2n-2)/(n-2) / C_s``."""
    if n <= 2:
        raise ParameterError("need n >= 3")
    if not C_s > 0:
        raise ParameterError("C_s must be positive")
    return (2.0 * n - 2.0) / (n - 2.0) / C_s


# ---------------------------------------------------------------------------
# local assumption checker


@dataclass(frozen=True)
class AssumptionReport:
    n: int
    p: float
    K: float
    tau: float
    eta: float
    r: float
    s0: float
    volume: float
    volume_bound: float
    volume_ok: bool
    volume_margin: float
    rm_norm: float
    rm_bound: float
    rm_ok: bool
    rm_margin: float
    ric_norm: float
    ric_bound: float
    ric_ok: bool
    ric_margin: float

    @property
    def all_ok(self) -> bool:
        return self.volume_ok and self.rm_ok and self.ric_ok

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _ball_band(profile: ProfileMetric, s0: float, r: float) -> Band:
    s = profile.s
    tol = 1e-9 * (s[-1] - s[0])
    at_pole = abs(s0 - s[0]) <= tol or abs(s0 - s[-1]) <= tol
    if not s[0] - tol <= s0 <= s[-1] + tol:
        raise ParameterError("ball centre outside the profile")
    if not at_pole and (s0 - r < s[0] - tol or s0 + r > s[-1] + tol):
        raise ParameterError("ball leaves the profile domain")
    return Band(max(s0 - r, s[0]), min(s0 + r, s[-1]))


def digamma_check(profile: ProfileMetric, s0: float, r: float, tau: float, p: float,
                  K: float, eta: float) -> AssumptionReport:
    """Evaluate the three local assumptions on the balls ``B(s0, tau r)`` and ``B(s0, r)``.

    Margins are relative: ``value/bound - 1`` for the volume lower bound and
    ``1 - value/bound`` for the two upper bounds, so a margin is >= 0 exactly
    when the item passes.
    """
    d = profile.dim
    if not p > d / 2:
        raise ParameterError("need p > d/2")
    if not (r > 0 and 0 < tau <= 1 and eta > 0 and K > 0):
        raise ParameterError("need r > 0, 0 < tau <= 1, eta > 0, K > 0")
    cs = curvature_state(profile)
    inner = _ball_band(profile, s0, tau * r)
    outer = _ball_band(profile, s0, r)

    vol = band_volume(profile, inner)
    vol_bound = ball_volume(d) * (eta * tau * r) ** d
    rm = lp_norm(cs.rm_norm, d / 2, profile, inner)
    rm_bound = varpi(d, eta)
    ric = lp_norm(cs.ric_norm, p, profile, outer)
    ric_bound = K * r ** (d / p - 2.0)

    vm = vol / vol_bound - 1.0
    rmm = 1.0 - rm / rm_bound
    ricm = 1.0 - ric / ric_bound
    return AssumptionReport(d, p, K, tau, eta, r, s0, vol, vol_bound, vm >= 0, vm,
                            rm, rm_bound, rmm >= 0, rmm, ric, ric_bound, ricm >= 0, ricm)


# ---------------------------------------------------------------------------
# the thin-neck dumbbell band


def band_energy_upper_bound(G: float, c: float) -> float:
    """``|Rm|_2`` ceiling on the band ``|s| <= c``: ``sqrt(24 * 2^(3/2) alpha(3) (1 - G^4/(G+c)^4))``."""
    if not (G > 0 and c > 0):
        raise ParameterError("G and c must be positive")
    return math.sqrt(24.0 * 2.0**1.5 * alpha(3) * (1.0 - G**4 / (G + c) ** 4))


def dumbbell_band_row(G: float, c: float, ps=(2.5, 3.0, 4.0), M: int = 3200) -> dict:
    """Band norms of the ``q = 3`` dumbbell next to the closed-form value and the ceiling.

    Keys: ``G``, ``rm2_numeric``, ``rm2_oracle``, ``band_bound``, ``ric_p<p>`` and
    ``gap_ratio = |Rm|_2 / varpi(4, 1)``.  The neck gauge keeps the band well resolved.
    """
    prof = build_dumbbell(G, c, q=3, M=M, gauge="neck")
    cs = curvature_state(prof)
    band = Band(-c, c)
    rm2 = lp_norm(cs.rm_norm, 2, prof, band)
    row = {"G": float(G), "rm2_numeric": rm2,
           "rm2_oracle": math.sqrt(24.0 * 2.0 * alpha(3) * band_kn_integral_exact(G, c)),
           "band_bound": band_energy_upper_bound(G, c)}
    for p in ps:
        row[f"ric_p{p:g}"] = lp_norm(cs.ric_norm, p, prof, band)
    row["gap_ratio"] = rm2 / varpi(4, 1.0)
    return row
