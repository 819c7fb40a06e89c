"""Hypothesis checks and inequality monitors over profiles and flow trajectories.

Constants that are only known to exist are never invented here:
monitors report margins, fitted rates and exponents, and leave pass/fail to
quantities that are fully specified.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, solve_ivp

from . import _stencils as st
from .curvature import curvature_state, neck_bump_analysis
from .errors import ParameterError
from .flow import Trajectory
from .geometry import ProfileMetric
from .norms import alpha, lp_norm


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def to_json(report) -> str:
    """Stable JSON for any report dataclass (arrays become lists)."""
    return json.dumps(_jsonable(asdict(report)), sort_keys=True)


# ---------------------------------------------------------------------------
# neck-pinch hypotheses


@dataclass(frozen=True)
class AKReport:
    mu: float
    q: int
    kt_positive: bool
    kt_margin: float  # min K_T
    r_positive: bool
    r_margin: float  # min R + r_tol * max |Rm|
    a_bounded: bool
    a_margin: float  # mu - max |a|
    ratio_applicable: bool
    ratio_ok: bool
    ratio: float | None  # r_max^2 / r_min^2
    ratio_threshold: float  # (2 mu + 2q)/(q - 1)
    ratio_margin: float | None
    r_min: float | None
    r_max: float | None

    @property
    def all_ok(self) -> bool:
        return self.kt_positive and self.r_positive and self.a_bounded and self.ratio_applicable and self.ratio_ok

    def to_json(self) -> str:
        return to_json(self)


def ratio_threshold(mu: float, q: int) -> float:
    return (2.0 * mu + 2.0 * q) / (q - 1)


def ak_hypotheses(profile: ProfileMetric, mu: float, r_tol: float = 1e-4) -> AKReport:
    """The four neck-pinch conditions: K_T > 0, R > 0, |a| <= mu, and the radius ratio.

    ``R > 0`` is tested as ``R >= -r_tol max|Rm|``: the exact neck
    ``psi = sqrt(G^2 + s^2)`` has R = 0 identically when q = 3, so a strict test
    would only see discretisation noise there.
    """
    q = profile.q
    if q < 2:
        raise ParameterError("the radius-ratio condition needs q >= 2")
    if not mu > 0:
        raise ParameterError("mu must be positive")
    cs = curvature_state(profile)
    kt = float(np.min(cs.K_T))
    r = float(np.min(cs.R)) + r_tol * float(np.max(cs.rm_norm))
    a = float(mu - np.max(np.abs(cs.a)))
    necks = neck_bump_analysis(profile)
    thr = ratio_threshold(mu, q)
    if necks.r_min is None or necks.r_max is None:
        return AKReport(mu, q, kt > 0, kt, r >= 0, r, a >= 0, a, False, False, None, thr, None,
                        necks.r_min, necks.r_max)
    ratio = (necks.r_max / necks.r_min) ** 2
    return AKReport(mu, q, kt > 0, kt, r >= 0, r, a >= 0, a, True, ratio >= thr, ratio, thr, ratio - thr,
                    necks.r_min, necks.r_max)


# ---------------------------------------------------------------------------
# pinch report


RESOLUTION_CAVEAT = ("singular time is the first step at which a stop threshold fired; "
                     "it is resolution-limited and bounded above by the true blow-up time only up to dt")


@dataclass(frozen=True)
class PinchReport:
    stop_reason: str
    singular_time: float | None
    caveat: str
    no_neck: bool
    threshold: float | None  # r_min(0)^2 / (q - 1)
    hypotheses: AKReport
    threshold_checked: bool
    threshold_ok: bool | None
    below_G: bool | None
    G: float | None
    volume_at_stop: float
    volume_positive: bool
    times: np.ndarray = field(repr=False)
    r_min: np.ndarray = field(repr=False)

    def to_json(self) -> str:
        return to_json(self)


def pinch_monitor(trajectory: Trajectory, mu: float = 2.0, G: float | None = None) -> PinchReport:
    """Singular-time report; the threshold is asserted only when the hypotheses held at t = 0."""
    p0 = trajectory.initial
    hyp = ak_hypotheses(p0, mu)
    pinched = trajectory.stop_reason == "pinch_detected"
    t_sing = trajectory.t_stop if pinched else None
    no_neck = hyp.r_min is None
    threshold = None if no_neck else hyp.r_min**2 / (p0.q - 1)
    checked = pinched and hyp.all_ok
    ok = (t_sing < threshold) if checked else None
    below_G = (t_sing < G) if (checked and G is not None) else None
    vol = float(trajectory.series["volume"][-1])
    return PinchReport(trajectory.stop_reason, t_sing, RESOLUTION_CAVEAT, no_neck, threshold, hyp,
                       checked, ok, below_G, G, vol, vol > 0,
                       np.asarray(trajectory.series["t"]), np.asarray(trajectory.series["waist"]))


# ---------------------------------------------------------------------------
# pseudolocality-shaped margins


@dataclass(frozen=True)
class PerelmanReport:
    alpha: float
    eps_r: float
    s0: float
    times: np.ndarray
    curvature_margin: np.ndarray  # sup |Rm| / (alpha/t + (eps r)^-2) per snapshot
    volume_ratio: np.ndarray  # inf Vol(band(x, sqrt t)) / t^(d/2) per snapshot
    max_curvature_margin: float
    min_volume_ratio: float

    def to_json(self) -> str:
        return to_json(self)


def _cumulative_volume(profile: ProfileMetric) -> np.ndarray:
    f = profile.psi**profile.q * profile.phi
    return alpha(profile.q) * np.concatenate([[0.0], np.cumsum(0.5 * profile.h * (f[1:] + f[:-1]))])


def perelman_monitor(trajectory: Trajectory, alpha_: float = 1.0, eps_r: float = 1.0,
                     s0: float = 0.0) -> PerelmanReport:
    """Margins of ``|Rm| <= alpha/t + (eps r)^-2`` and of ``Vol B(x, sqrt t) / t^(d/2)``.

    Nodes within arclength ``eps_r`` of ``s0`` (centred arclength of each
    snapshot) are scanned; balls are bands, clipped at the poles.
    """
    if not (alpha_ > 0 and eps_r > 0):
        raise ParameterError("alpha and eps_r must be positive")
    times, cm, vr = [], [], []
    for t, prof in zip(trajectory.times, trajectory.profiles):
        if t <= 0:
            continue
        s = prof.s
        near = np.abs(s - s0) <= eps_r
        if not np.any(near):
            continue
        rm = curvature_state(prof).rm_norm
        times.append(t)
        cm.append(float(np.max(rm[near])) / (alpha_ / t + eps_r**-2))
        V = _cumulative_volume(prof)
        r = math.sqrt(t)
        vols = np.interp(s[near] + r, s, V) - np.interp(s[near] - r, s, V)
        vr.append(float(np.min(vols)) / t ** (prof.dim / 2))
    cm, vr = np.array(cm), np.array(vr)
    return PerelmanReport(alpha_, eps_r, s0, np.array(times), cm, vr,
                          float(cm.max()) if cm.size else math.nan, float(vr.min()) if vr.size else math.nan)


# ---------------------------------------------------------------------------
# Gronwall-type envelopes


@dataclass(frozen=True)
class GronwallReport:
    ok: bool
    first_violation: int | None
    max_excess: float  # max (f - envelope) / scale
    envelope: np.ndarray = field(repr=False)

    def to_json(self) -> str:
        return to_json(self)


def gronwall_envelope(t, f, g, b: float, rtol: float = 1e-9) -> GronwallReport:
    """Check ``f(t) <= [f(0) + int_0^t e^{-bs} g ds] e^{bt}`` on uniform samples.

    The integral uses cumulative Simpson; ``rtol`` is relative to ``max |envelope|``.
    """
    t, f, g = (np.asarray(v, dtype=float) for v in (t, f, g))
    if not (t.shape == f.shape == g.shape) or t.ndim != 1 or t.size < 2:
        raise ParameterError("t, f, g must be equal-length 1-D samples")
    dt = np.diff(t)
    if np.any(dt <= 0) or np.max(np.abs(dt - dt[0])) > 1e-9 * dt[0]:
        raise ParameterError("sample times must be uniform and increasing")
    if b < 0 or np.any(g < 0):
        raise ParameterError("need b >= 0 and g >= 0")
    tau = t - t[0]
    integral = cumulative_simpson(np.exp(-b * tau) * g, x=tau, initial=0.0)
    env = (f[0] + integral) * np.exp(b * tau)
    scale = max(float(np.max(np.abs(env))), 1e-300)
    excess = (f - env) / scale
    bad = np.nonzero(excess > rtol)[0]
    return GronwallReport(bad.size == 0, int(bad[0]) if bad.size else None, float(excess.max()), env)


@dataclass(frozen=True)
class IntegroFit:
    a: float
    b: float
    y0: float
    w: float
    k: float
    T: float
    comparison_margin: float  # min over (0, T] of (w e^{kt})' - [a int w e^{ks} + b w e^{kt} + 1]
    strict: bool
    max_ratio: float  # max y / (w e^{kt}) of the integro-ODE solution
    dominates: bool

    def to_json(self) -> str:
        return to_json(self)


def integro_envelope(a: float, b: float, y0: float) -> tuple[float, float]:
    """``(w, k)`` with ``k = b + sqrt(a) + 1`` and ``w = max(y0 + 1, 1/(k - b - a/k))``."""
    if a < 0 or b < 0:
        raise ParameterError("need a, b >= 0")
    k = b + math.sqrt(a) + 1.0
    return max(y0 + 1.0, 1.0 / (k - b - a / k)), k


def integro_gronwall_fit(a: float, b: float, y0: float, T: float = 3.0, samples: int = 2001) -> IntegroFit:
    """Envelope ``w e^{kt}`` for ``y' = a int_0^t y + b y + 1``, ``y(0) = y0``, checked on [0, T]."""
    w, k = integro_envelope(a, b, y0)
    t = np.linspace(0.0, T, samples)[1:]
    ekt = np.exp(k * t)
    lhs = w * k * ekt
    rhs = a * w * (ekt - 1.0) / k + b * w * ekt + 1.0
    margin = float(np.min((lhs - rhs) / ekt))
    sol = solve_ivp(lambda _, z: [z[1], a * z[0] + b * z[1] + 1.0], (0.0, T), [0.0, y0],
                    dense_output=True, rtol=1e-11, atol=1e-12)
    tt = np.linspace(0.0, T, samples)
    y = sol.sol(tt)[1]
    ratio = float(np.max(y / (w * np.exp(k * tt))))
    return IntegroFit(a, b, y0, w, k, T, margin, margin > 0 and w > y0, ratio, ratio < 1.0)


# ---------------------------------------------------------------------------
# local Ricci flow energy and extension diagnostics


def _grad_sup(profile: ProfileMetric, chi: np.ndarray) -> float:
    chi_s = st.d1(chi, profile.h, profile.periodic, 1) / profile.phi
    return float(np.max(np.abs(chi_s)))


@dataclass(frozen=True)
class EnergyReport:
    d: int
    grad_chi_sup: float
    log_energy_slope: float
    rate_constant: float
    rate_ok: bool
    e2_exponent: float | None
    gate_value: float  # |Rm|_{d/2} at t = 0
    gate_bound: float | None  # 2 / (d^2 A0^2)
    gate_ok: bool | None
    energy_spread: float  # (max E - min E) / E(0)
    times: np.ndarray = field(repr=False)
    energy: np.ndarray = field(repr=False)
    energy2: np.ndarray = field(repr=False)

    def to_json(self) -> str:
        return to_json(self)


def lrf_energy_monitor(trajectory: Trajectory, A0: float | None = None, C: float = 100.0) -> EnergyReport:
    """Energy ``E = int |Rm|^{d/2}`` and ``E2 = int chi^2 |Rm|^{d/2+1}`` along an LRF run.

    The growth rate of E is the least-squares slope of ``log E``; the
    exponent of ``t E2`` is its log-log slope against ``(t |grad chi|^2 + 1)^2``.
    """
    if trajectory.config.mode != "local_ricci":
        raise ParameterError("energy monitor needs a local Ricci flow trajectory")
    p0 = trajectory.initial
    d = p0.dim
    t = np.asarray(trajectory.series["t"])
    E = np.asarray(trajectory.series["energy"])
    E2 = np.asarray(trajectory.series["energy2"])
    G = _grad_sup(p0, trajectory.chi)
    slope = float(np.polyfit(t, np.log(E), 1)[0]) if t.size >= 2 else 0.0
    pos = (t > 0) & (E2 > 0)
    expo = None
    if np.count_nonzero(pos) >= 2 and G > 0:
        X = np.log((t[pos] * G * G + 1.0) ** 2)
        if np.ptp(X) > 0:
            expo = float(np.polyfit(X, np.log(t[pos] * E2[pos]), 1)[0])
    gate = float(E[0] ** (2.0 / d))
    bound = None if A0 is None else 2.0 / (d * d * A0 * A0)
    return EnergyReport(d, G, slope, C, slope <= C * G * G, expo, gate, bound,
                        None if bound is None else gate <= bound,
                        float((E.max() - E.min()) / E[0]), t, E, E2)


@dataclass(frozen=True)
class ExtensionReport:
    times: np.ndarray
    chi2_rm_inf: np.ndarray
    running_sup: np.ndarray
    sup: float
    snapshot_times: np.ndarray
    grad_chi2_rm: dict  # p -> series of |d/ds (chi^2 |Rm|)|_p
    hess_chi: dict  # p -> series of |Hess chi|_p
    stop_reason: str

    def to_json(self) -> str:
        return to_json(self)


def hessian_norm(profile: ProfileMetric, f: np.ndarray) -> np.ndarray:
    """|Hess f| for radial f: eigenvalues ``f_ss`` and ``(psi_s/psi) f_s`` (q times)."""
    h, per, phi = profile.h, profile.periodic, profile.phi
    f_x = st.d1(f, h, per, 1)
    f_xx = st.d2(f, h, per, 1)
    phi_x = st.d1(phi, h, per, 1)
    f_s = f_x / phi
    f_ss = (f_xx - f_x * phi_x / phi) / phi**2
    cs = curvature_state(profile)
    with np.errstate(divide="ignore", invalid="ignore"):
        lateral = cs.psi_s * f_s / profile.psi
    if not per:
        lateral[0], lateral[-1] = f_ss[0], f_ss[-1]  # f even: f_s/s -> f_ss at a pole
    return np.sqrt(f_ss**2 + profile.q * lateral**2)


def extension_tracker(trajectory: Trajectory, ps=(4, 8)) -> ExtensionReport:
    chi = trajectory.chi
    chi2 = chi**2
    g_series = {p: [] for p in ps}
    h_series = {p: [] for p in ps}
    for prof in trajectory.profiles:
        rm = curvature_state(prof).rm_norm
        grad = np.abs(st.d1(chi2 * rm, prof.h, prof.periodic, 1) / prof.phi)
        hess = hessian_norm(prof, chi)
        for p in ps:
            g_series[p].append(lp_norm(grad, p, prof))
            h_series[p].append(lp_norm(hess, p, prof))
    series = np.asarray(trajectory.series["chi2_rm_inf"])
    run = np.maximum.accumulate(series)
    return ExtensionReport(np.asarray(trajectory.series["t"]), series, run, float(run[-1]),
                           np.asarray(trajectory.times),
                           {str(p): np.array(v) for p, v in g_series.items()},
                           {str(p): np.array(v) for p, v in h_series.items()},
                           trajectory.stop_reason)
