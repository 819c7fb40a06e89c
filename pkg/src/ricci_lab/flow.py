"""Ricci flow and Local Ricci Flow on profile metrics.

For ``g = phi^2 dx^2 + psi^2 g_{S^q}`` the flow ``dg/dt = -2 chi^2 Ric`` reduces to

    psi_t = chi^2 [psi_ss - (q-1)(1 - psi_s^2)/psi] = -chi^2 psi (K_N + (q-1) K_T)
    phi_t = -chi^2 q K_N phi

on the fixed x grid; ``chi = 1`` is Ricci flow.  That system is only weakly
parabolic and, discretised as is, grows a spurious cone-angle mode at the
poles.  The solver therefore integrates the DeTurck-modified system

    dg/dt = -2 chi^2 Ric + L_{chi^2 W} g,   W = g^{ij}(Gamma^x_ij - Gamma0^x_ij) d/dx

against the initial metric.  It differs from the flow above by a
diffeomorphism, so every geometric quantity (curvature as a function of
arclength, volumes, neck radii, times) is the same.  The singular 1/psi terms
are cancelled analytically before discretisation.  Time stepping is classical
RK4 with poles pinned at ``psi = 0``.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _stencils as st
from .curvature import curvature_state
from .errors import CFLViolation, NumericFailure, ParameterError
from .geometry import CutoffProfile, ProfileMetric, arclength, equidistribute, profile_to_text
from .norms import alpha

MODES = ("ricci", "local_ricci")
STOP_REASONS = ("reached_t_end", "pinch_detected", "curvature_cap", "numeric_failure")
SERIES_COLUMNS = ("t", "dt", "waist", "psi_max", "rm_inf", "chi2_rm_inf", "volume", "energy", "energy2")
WAIST_DROP = 0.8  # halve dt when the waist loses more than 20% in one step
MAX_HALVINGS = 40
NECK_NODES = 10.0  # remesh once the waist spans fewer arclength cells than this


@dataclass(frozen=True)
class FlowConfig:
    mode: str = "ricci"
    cutoff: CutoffProfile | None = None
    t_end: float = 0.1
    dt: float | None = None  # None: adaptive
    cfl: float = 0.5
    snapshot_every: int = 100
    pinch_fraction: float = 1e-3
    rm_cap: float | None = None  # None: 1e8 / waist(0)^2
    max_steps: int = 5_000_000
    remesh: bool = False  # redistribute nodes toward high curvature when a neck is under-resolved

    def __post_init__(self):
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}")
        if self.mode == "local_ricci" and self.cutoff is None:
            raise ParameterError("local_ricci needs a cutoff")
        if self.mode == "ricci" and self.cutoff is not None:
            raise ParameterError("ricci mode takes no cutoff; use local_ricci")
        if not 0 < self.cfl <= 0.5:
            raise ParameterError("cfl factor must lie in (0, 1/2]")
        if not self.t_end > 0:
            raise ParameterError("t_end must be positive")
        if self.dt is not None and not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.snapshot_every < 1:
            raise ParameterError("snapshot_every must be >= 1")
        if not 0 < self.pinch_fraction < 1:
            raise ParameterError("pinch_fraction must lie in (0, 1)")
        if self.rm_cap is not None and not self.rm_cap > 0:
            raise ParameterError("rm_cap must be positive")
        if self.remesh and (self.mode != "ricci" or self.dt is not None):
            raise ParameterError("remesh needs ricci mode with adaptive dt")


@dataclass
class Trajectory:
    times: list[float]
    profiles: list[ProfileMetric]
    series: dict[str, np.ndarray]
    stop_reason: str
    chi: np.ndarray
    config: FlowConfig
    message: str = ""
    steps: int = 0
    remesh_times: list[float] = field(default_factory=list)

    @property
    def initial(self) -> ProfileMetric:
        return self.profiles[0]

    @property
    def final(self) -> ProfileMetric:
        return self.profiles[-1]

    @property
    def t_stop(self) -> float:
        return float(self.series["t"][-1])

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(SERIES_COLUMNS)
        for row in zip(*(self.series[c] for c in SERIES_COLUMNS)):
            wr.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def write_snapshots(self, directory: str) -> list[str]:
        os.makedirs(directory, exist_ok=True)
        paths = []
        for k, (t, p) in enumerate(zip(self.times, self.profiles)):
            path = os.path.join(directory, f"snap_{k:05d}.txt")
            with open(path, "w") as fh:
                fh.write(profile_to_text(p, time=t))
            paths.append(path)
        return paths


def cfl_limit(profile: ProfileMetric, cfl: float = 0.5) -> float:
    """Parabolic bound ``cfl * min(phi h)^2 / (2 max(1, q))``."""
    hs = profile.h * float(np.min(profile.phi))
    return cfl * hs * hs / (2.0 * max(1, profile.q))


@njit(cache=True)
def _pole_extrapolate(f, phi, h):
    """Overwrite pole values of an even field by ``f0 + c s^2`` through the two neighbours."""
    n = f.size
    for pole, i1, i2 in ((0, 1, 2), (n - 1, n - 2, n - 3)):
        d1 = 0.5 * h * (phi[pole] + phi[i1])
        d2 = d1 + 0.5 * h * (phi[i1] + phi[i2])
        f[pole] = (d2 * d2 * f[i1] - d1 * d1 * f[i2]) / (d2 * d2 - d1 * d1)


@njit(cache=True)
def _ghost(f, i, n, periodic, parity):
    """``f[i]`` for ``-2 <= i < n + 2`` with wrap or pole reflection."""
    if 0 <= i < n:
        return f[i]
    if periodic:
        return f[i % n]
    if i < 0:
        return parity * f[-i]
    return parity * f[2 * (n - 1) - i]


@njit(cache=True)
def _flow_kernel(phi, psi, h, q, G0, G0_x, B, B_x, periodic, dphi, dpsi):
    """Pure DeTurck rates at every node; pole rows are fixed up by the caller."""
    n = phi.size
    c1 = 1.0 / (12.0 * h)
    c2 = 1.0 / (12.0 * h * h)
    for i in range(n):
        if 2 <= i < n - 2:
            fa, fb, fc, fd, fe = phi[i - 2], phi[i - 1], phi[i], phi[i + 1], phi[i + 2]
            pa, pb, pc, pd, pe = psi[i - 2], psi[i - 1], psi[i], psi[i + 1], psi[i + 2]
        else:
            fa = _ghost(phi, i - 2, n, periodic, 1.0)
            fb = _ghost(phi, i - 1, n, periodic, 1.0)
            fc = phi[i]
            fd = _ghost(phi, i + 1, n, periodic, 1.0)
            fe = _ghost(phi, i + 2, n, periodic, 1.0)
            pa = _ghost(psi, i - 2, n, periodic, -1.0)
            pb = _ghost(psi, i - 1, n, periodic, -1.0)
            pc = psi[i]
            pd = _ghost(psi, i + 1, n, periodic, -1.0)
            pe = _ghost(psi, i + 2, n, periodic, -1.0)
        phi_x = (fa - fe + 8.0 * (fd - fb)) * c1
        phi_xx = (16.0 * (fb + fd) - fa - fe - 30.0 * fc) * c2
        psi_x = (pa - pe + 8.0 * (pd - pb)) * c1
        psi_xx = (16.0 * (pb + pd) - pa - pe - 30.0 * pc) * c2
        if pc == 0.0:
            dphi[i] = 0.0
            dpsi[i] = 0.0
            continue
        ip = 1.0 / fc
        iq = 1.0 / pc
        lphi = phi_x * ip
        spsi = psi_x * iq
        # psi_ss - (q-1)(1 - psi_s^2)/psi + xi psi_x with the 1/psi poles cancelled
        dpsi[i] = (psi_xx - G0[i] * psi_x - psi_x * spsi) * ip * ip + (q * B[i] * spsi - (q - 1)) * iq
        # -q K_N phi + (xi phi)_x, likewise
        dphi[i] = ((phi_xx * ip - lphi * lphi - G0_x[i] - (lphi - G0[i]) * lphi) * ip
                   + q * (psi_x * psi_x * ip - 2.0 * B[i] * fc * spsi + B_x[i] * fc + B[i] * phi_x) * iq * iq)


class _Rates:
    """Right-hand side of the DeTurck-modified reduced flow on a fixed grid.

    The state is stacked as ``Y = [phi, psi]`` so that one padded buffer
    serves all four stencils.
    """

    def __init__(self, background: ProfileMetric, chi: np.ndarray):
        self.q = background.q
        self.h = h = background.h
        self.periodic = per = background.periodic
        self.n = n = background.n
        self.chi2 = np.asarray(chi, dtype=float) ** 2
        self.active = self.chi2 > 0
        self.all_active = bool(np.all(self.active))
        self.chi2_x = st.d1(self.chi2, h, per, 1)
        self.has_drift = bool(np.any(self.chi2_x))
        phi0, psi0 = background.phi, background.psi
        # background Christoffel data: Gamma0^x_xx and psi0 psi0_x / phi0^2
        self.G0 = st.d1(phi0, h, per, 1) / phi0
        self.G0_x = st.d1(self.G0, h, per, -1)
        self.B = psi0 * st.d1(psi0, h, per, -1) / phi0**2
        self.B_x = st.d1(self.B, h, per, -1)
        self._buf = np.empty((2, n + 2 * st.NGHOST))
        self._sign = np.array([[1.0], [-1.0]])
        self._c1 = 1.0 / (12.0 * h)
        self._c2 = 1.0 / (12.0 * h * h)

    def derivatives(self, Y):
        """``(Y_x, Y_xx)`` for the stacked state, fourth-order."""
        p = self._buf
        p[:, 2:-2] = Y
        if self.periodic:
            p[:, :2] = Y[:, -2:]
            p[:, -2:] = Y[:, :2]
        else:
            sg = self._sign
            p[:, 1:2] = sg * Y[:, 1:2]
            p[:, 0:1] = sg * Y[:, 2:3]
            p[:, -2:-1] = sg * Y[:, -2:-1]
            p[:, -1:] = sg * Y[:, -3:-2]
        a, b, c, d, e = p[:, :-4], p[:, 1:-3], p[:, 2:-2], p[:, 3:-1], p[:, 4:]
        ae = a + e
        Yx = (a - e + 8.0 * (d - b)) * self._c1
        Yxx = (16.0 * (b + d) - ae - 30.0 * c) * self._c2
        return Yx, Yxx

    def xi_phi(self, Y, Yx):
        """``xi phi`` where ``W = xi d/dx``; odd, so zero at the poles."""
        phi, psi = Y
        with np.errstate(divide="ignore", invalid="ignore"):
            out = (Yx[0] / phi - self.G0) / phi - self.q * (Yx[1] / phi - self.B * phi / psi) / psi
        if not self.periodic:
            out[0] = out[-1] = 0.0
        return out

    def __call__(self, Y):
        phi, psi = Y
        out = np.empty_like(Y)
        dphi, dpsi = out
        _flow_kernel(phi, psi, self.h, float(self.q), self.G0, self.G0_x, self.B, self.B_x,
                     self.periodic, dphi, dpsi)
        if not self.periodic:
            _pole_extrapolate(dphi, phi, self.h)
            dpsi[0] = dpsi[-1] = 0.0
        if self.all_active and not self.has_drift:
            return out
        if self.has_drift:
            Yx, _ = self.derivatives(Y)
            dphi = self.chi2 * dphi + self.chi2_x * self.xi_phi(Y, Yx)
        else:
            dphi = self.chi2 * dphi
        act = self.active
        out[0] = np.where(act, dphi, 0.0)
        out[1] = np.where(act, self.chi2 * dpsi, 0.0)
        return out


def _rk4(rates: _Rates, Y, dt, k1=None):
    k1 = k1 if k1 is not None else rates(Y)
    k2 = rates(Y + (0.5 * dt) * k1)
    k3 = rates(Y + (0.5 * dt) * k2)
    k4 = rates(Y + dt * k3)
    return Y + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


def _healthy(phi, psi, periodic) -> bool:
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(psi))):
        return False
    inner = psi if periodic else psi[1:-1]
    return bool(np.all(inner > 0) and np.all(phi > 0))


def _chi_array(profile: ProfileMetric, cutoff) -> np.ndarray:
    if cutoff is None:
        return np.ones(profile.n)
    chi = cutoff.chi if isinstance(cutoff, CutoffProfile) else np.asarray(cutoff, dtype=float)
    if chi.shape != (profile.n,):
        raise ParameterError("cutoff does not match the profile grid")
    return chi


def step(profile: ProfileMetric, cutoff: CutoffProfile | np.ndarray | None, dt: float,
         cfl: float = 0.5, background: ProfileMetric | None = None) -> ProfileMetric:
    """One RK4 step of size ``dt``; ``cutoff=None`` means chi = 1 (Ricci flow).

    ``background`` is the DeTurck reference metric (default: ``profile``).
    """
    limit = cfl_limit(profile, cfl)
    if dt > limit:
        raise CFLViolation(f"dt = {dt:g} exceeds the stability bound {limit:g}")
    rates = _Rates(background if background is not None else profile, _chi_array(profile, cutoff))
    phi, psi = _rk4(rates, np.stack([profile.phi, profile.psi]), dt)
    if not _healthy(phi, psi, profile.periodic):
        raise NumericFailure("step produced non-finite values or non-positive psi")
    return profile.replace(phi=phi, psi=psi, check=False)


@njit(cache=True)
def _state_scan(phi, psi, h, q, periodic, chi2, w, active, K_N, K_T):
    """Curvatures into ``K_N``/``K_T`` plus the per-step scalars.

    Returns ``(healthy, waist, psi_max, rm_inf, chi2_rm_inf, volume, energy,
    energy2, k_active, phi_min, i_waist)``; ``k_active`` is the largest rate
    scale ``max(q|K_N|, (q-1)|K_T|)`` over nodes with ``chi != 0``.
    """
    n = phi.size
    lo, hi = (0, n) if periodic else (1, n - 1)
    for i in range(n):
        if not (np.isfinite(phi[i]) and np.isfinite(psi[i]) and phi[i] > 0.0):
            return (False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
        if lo <= i < hi and not psi[i] > 0.0:
            return (False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
    c1 = 1.0 / (12.0 * h)
    c2 = 1.0 / (12.0 * h * h)
    for i in range(lo, hi):
        fb = _ghost(phi, i - 1, n, periodic, 1.0)
        fd = _ghost(phi, i + 1, n, periodic, 1.0)
        fa = _ghost(phi, i - 2, n, periodic, 1.0)
        fe = _ghost(phi, i + 2, n, periodic, 1.0)
        pa = _ghost(psi, i - 2, n, periodic, -1.0)
        pb = _ghost(psi, i - 1, n, periodic, -1.0)
        pd = _ghost(psi, i + 1, n, periodic, -1.0)
        pe = _ghost(psi, i + 2, n, periodic, -1.0)
        phi_x = (fa - fe + 8.0 * (fd - fb)) * c1
        psi_x = (pa - pe + 8.0 * (pd - pb)) * c1
        psi_xx = (16.0 * (pb + pd) - pa - pe - 30.0 * psi[i]) * c2
        psi_s = psi_x / phi[i]
        psi_ss = (psi_xx - psi_x * phi_x / phi[i]) / (phi[i] * phi[i])
        K_N[i] = -psi_ss / psi[i]
        K_T[i] = (1.0 - psi_s * psi_s) / (psi[i] * psi[i])
    if not periodic:
        _pole_extrapolate(K_N, phi, h)
        _pole_extrapolate(K_T, phi, h)

    # waist: smallest strict interior local minimum, else smallest interior psi
    neck = np.inf
    inner_min = np.inf
    i_neck = i_min = lo
    for i in range(lo, hi):
        if psi[i] < inner_min:
            inner_min, i_min = psi[i], i
        if lo < i < hi - 1 and psi[i] < psi[i - 1] and psi[i] <= psi[i + 1] and psi[i] < neck:
            neck, i_neck = psi[i], i
    waist_, i_waist = (neck, i_neck) if np.isfinite(neck) else (inner_min, i_min)

    d = q + 1.0
    psi_max = rm_inf = chi2_rm_inf = volume = energy = energy2 = k_act = 0.0
    phi_min = np.inf
    for i in range(n):
        rm = 2.0 * np.sqrt(q * K_N[i] ** 2 + 0.5 * q * (q - 1.0) * K_T[i] ** 2)
        if not np.isfinite(rm):
            return (False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0)
        dvol = w[i] * psi[i] ** q * phi[i]
        psi_max = max(psi_max, psi[i])
        rm_inf = max(rm_inf, rm)
        chi2_rm_inf = max(chi2_rm_inf, chi2[i] * rm)
        volume += dvol
        energy += dvol * rm ** (d / 2.0)
        energy2 += dvol * chi2[i] * rm ** (d / 2.0 + 1.0)
        phi_min = min(phi_min, phi[i])
        if active[i]:
            k_act = max(k_act, q * abs(K_N[i]), (q - 1.0) * abs(K_T[i]))
    return (True, waist_, psi_max, rm_inf, chi2_rm_inf, volume, energy, energy2, k_act, phi_min, i_waist)


def _remesh_density(profile: ProfileMetric, passes: int = 16) -> np.ndarray:
    """Node density ``(|Rm|^2 + median^2)^(1/4)``, so spacing ~ neck radius at a neck.

    Binomial smoothing stops near-pole curvature noise from feeding back into
    the grid over repeated remeshes.
    """
    rm = curvature_state(profile).rm_norm
    m = np.log(rm * rm + np.median(rm) ** 2)
    for _ in range(passes):
        p = st.pad(m, False, 1)
        m = 0.25 * (p[1:-3] + 2.0 * p[2:-2] + p[3:-1])
    return np.exp(0.25 * m)


def run_flow(profile: ProfileMetric, config: FlowConfig) -> Trajectory:
    """Integrate until ``t_end`` or a stop condition; the trajectory is always returned.

    ``profile`` doubles as the DeTurck background metric.
    """
    chi = _chi_array(profile, config.cutoff)
    rates = _Rates(profile, chi)
    q, per, h = profile.q, profile.periodic, profile.h
    template = profile.replace(check=False)
    w = np.full(profile.n, h)
    if not per:
        w[0] = w[-1] = 0.5 * h
    w *= alpha(q)
    K_N, K_T = np.empty(profile.n), np.empty(profile.n)

    def scan(Y):
        return _state_scan(Y[0], Y[1], h, float(q), per, rates.chi2, w, rates.active, K_N, K_T)

    rows = {c: [] for c in SERIES_COLUMNS}

    def record(t, dt, sc):
        for c, v in zip(SERIES_COLUMNS, (t, dt) + tuple(sc[1:8])):
            rows[c].append(float(v))

    Y = np.stack([profile.phi, profile.psi])
    sc = scan(Y)
    if not sc[0]:
        raise NumericFailure("initial profile has non-finite curvature")
    record(0.0, 0.0, sc)
    w0 = sc[1]
    cap = config.rm_cap if config.rm_cap is not None else 1e8 / (w0 * w0)
    times, profiles = [0.0], [profile]
    remesh_times, last_remesh = [], 0
    t, n = 0.0, 0
    reason, message = "reached_t_end", ""
    if config.dt is not None:
        n_fixed = int(round(config.t_end / config.dt))
        if n_fixed < 1 or abs(n_fixed * config.dt - config.t_end) > 1e-9 * config.t_end:
            n_fixed = int(math.ceil(config.t_end / config.dt))

    while t < config.t_end * (1 - 1e-14):
        if n >= config.max_steps:
            reason, message = "numeric_failure", "max_steps exhausted"
            break
        limit = config.cfl * (h * sc[9]) ** 2 / (2.0 * max(1, q))
        if config.dt is not None:
            # the last step lands exactly on t_end
            dt = config.dt if n + 1 < n_fixed else config.t_end - t
            if dt > limit * (1 + 1e-12):
                reason, message = "numeric_failure", f"fixed dt violates the CFL bound at t = {t:g}"
                break
        else:
            dt = limit
            if sc[8] > 0:
                dt = min(dt, config.cfl / sc[8])
            dt = min(dt, config.t_end - t)
        k1 = rates(Y)
        w_old = sc[1]
        for _ in range(MAX_HALVINGS):
            Y_new = _rk4(rates, Y, dt, k1)
            sc_new = scan(Y_new)
            if config.dt is None and (not sc_new[0] or sc_new[1] < WAIST_DROP * w_old):
                dt *= 0.5
                continue
            break
        if not sc_new[0]:
            reason, message = "numeric_failure", f"non-finite or non-positive state at t = {t:g}"
            break
        Y, sc = Y_new, sc_new
        t += dt
        n += 1
        record(t, dt, sc)
        if n % config.snapshot_every == 0:
            times.append(t)
            profiles.append(template.replace(phi=Y[0].copy(), psi=Y[1].copy()))
        if config.remesh and n - last_remesh >= 10 and sc[1] < NECK_NODES * h * Y[0, sc[10]]:
            current = template.replace(phi=Y[0].copy(), psi=Y[1].copy())
            template = equidistribute(current, _remesh_density(current))
            rates = _Rates(template, chi)
            Y = np.stack([template.phi, template.psi])
            sc = scan(Y)
            if not sc[0]:
                reason, message = "numeric_failure", f"remesh failed at t = {t:g}"
                break
            remesh_times.append(t)
            last_remesh = n
        if sc[1] < config.pinch_fraction * w0:
            reason = "pinch_detected"
            break
        if sc[4] > cap:
            reason = "curvature_cap"
            break

    series = {c: np.asarray(v, dtype=float) for c, v in rows.items()}
    if times[-1] != series["t"][-1]:
        times.append(float(series["t"][-1]))
        profiles.append(template.replace(phi=Y[0].copy(), psi=Y[1].copy()))
    return Trajectory(times, profiles, series, reason, chi, config, message, n, remesh_times)


def deturck_drift(profile: ProfileMetric, background: ProfileMetric, chi: np.ndarray) -> np.ndarray:
    """Coordinate speed ``chi^2 xi`` of the gauge field at ``profile``."""
    rates = _Rates(background, chi)
    Y = np.stack([profile.phi, profile.psi])
    Yx, _ = rates.derivatives(Y)
    return rates.chi2 * rates.xi_phi(Y, Yx) / profile.phi


# ---------------------------------------------------------------------------
# evolution-equation residual


@dataclass(frozen=True)
class ResidualReport:
    residual_KN: float
    residual_KT: float
    scale_KN: float
    scale_KT: float
    triples: int

    @property
    def max_residual(self) -> float:
        return max(self.residual_KN, self.residual_KT)


def _s_derivs(f, phi, h, per, parity, phi_x):
    f_x = st.d1_second_order(f, h, per, parity)
    f_xx = st.d2_second_order(f, h, per, parity)
    return f_x / phi, (f_xx - f_x * phi_x / phi) / (phi * phi)


def curvature_rates(profile: ProfileMetric, chi: np.ndarray):
    """Analytic ``dK_N/dt`` and ``dK_T/dt`` at fixed x, by chain rule through the flow.

    Uses plain second-order stencils, independently of the solver's.  With
    ``u = chi^2``, ``psi_t = u A`` and ``phi_t = u B phi`` where
    ``A = psi_ss - (q-1)(1 - psi_s^2)/psi`` and ``B = q psi_ss / psi``.
    """
    q, h, per = profile.q, profile.h, profile.periodic
    phi, psi = profile.phi, profile.psi
    u = np.asarray(chi, dtype=float) ** 2
    phi_x = st.d1_second_order(phi, h, per, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        psi_s, psi_ss = _s_derivs(psi, phi, h, per, -1, phi_x)
        A = psi_ss - (q - 1) * (1.0 - psi_s**2) / psi
        B = q * psi_ss / psi
        u_s, u_ss = _s_derivs(u, phi, h, per, 1, phi_x)
        A_s, A_ss = _s_derivs(A, phi, h, per, -1, phi_x)
        B_s, _ = _s_derivs(B, phi, h, per, 1, phi_x)
        dpsi_s = u_s * A + u * A_s - u * B * psi_s
        dpsi_ss = (u_ss * A + 2.0 * u_s * A_s + u * A_ss
                   - (u_s * B * psi_s + u * B_s * psi_s + u * B * psi_ss) - u * B * psi_ss)
        dK_N = -dpsi_ss / psi + psi_ss * u * A / psi**2
        dK_T = -2.0 * psi_s * dpsi_s / psi**2 - 2.0 * (1.0 - psi_s**2) * u * A / psi**3
    return dK_N, dK_T


def _drift_second_order(profile: ProfileMetric, background: ProfileMetric, chi: np.ndarray) -> np.ndarray:
    """Gauge speed ``chi^2 xi`` with plain centred differences."""
    q, h, per = profile.q, profile.h, profile.periodic
    phi, psi = profile.phi, profile.psi
    phi0, psi0 = background.phi, background.psi
    G0 = st.d1_second_order(phi0, h, per, 1) / phi0
    B = psi0 * st.d1_second_order(psi0, h, per, -1) / phi0**2
    phi_x = st.d1_second_order(phi, h, per, 1)
    psi_x = st.d1_second_order(psi, h, per, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = ((phi_x / phi - G0) / phi - q * (psi_x / phi - B * phi / psi) / psi) / phi
    if not per:
        xi[0] = xi[-1] = 0.0
    return np.asarray(chi, dtype=float) ** 2 * xi


def curvature_evolution_residual(trajectory: Trajectory, window: tuple[int, int] | None = None,
                                 margin: float = 0.1) -> ResidualReport:
    """Max gap between centred time differences of K_N, K_T and their analytic rates.

    Uses snapshot triples ``(k-1, k, k+1)`` with ``k`` in ``window`` (all by
    default).  Nodes within ``margin * length`` of a pole are excluded.  The
    solver's gauge drift ``W`` adds ``W dK/dx`` to the fixed-x rate.
    """
    if trajectory.remesh_times:
        raise ParameterError("residual needs a run on a single grid (no remeshing)")
    times = np.asarray(trajectory.times)
    if times.size < 3:
        raise ParameterError("need at least 3 snapshots")
    gaps = np.diff(times)
    if np.max(np.abs(gaps - gaps[0])) > 1e-9 * gaps[0]:
        raise ParameterError("snapshots must be uniformly spaced in time")
    tau = float(gaps[0])
    lo, hi = window if window is not None else (1, times.size - 1)
    lo, hi = max(lo, 1), min(hi, times.size - 1)
    if hi <= lo:
        raise ParameterError("empty snapshot window")
    chi = trajectory.chi
    background = trajectory.initial
    states = {}

    def K(k):
        if k not in states:
            cs = curvature_state(trajectory.profiles[k])
            states[k] = (cs.K_N, cs.K_T)
        return states[k]

    r_n = r_t = s_n = s_t = 0.0
    for k in range(lo, hi):
        prof = trajectory.profiles[k]
        h, per = prof.h, prof.periodic
        if per:
            mask = np.ones(prof.n, dtype=bool)
        else:
            s = arclength(prof)
            mask = (s > margin * s[-1]) & (s < (1.0 - margin) * s[-1])
        (kn0, kt0), (kn, kt), (kn1, kt1) = K(k - 1), K(k), K(k + 1)
        fd_n = (kn1 - kn0) / (2.0 * tau)
        fd_t = (kt1 - kt0) / (2.0 * tau)
        an_n, an_t = curvature_rates(prof, chi)
        W = _drift_second_order(prof, background, chi)
        an_n = an_n + W * st.d1_second_order(kn, h, per, 1)
        an_t = an_t + W * st.d1_second_order(kt, h, per, 1)
        r_n = max(r_n, float(np.max(np.abs(fd_n - an_n)[mask])))
        r_t = max(r_t, float(np.max(np.abs(fd_t - an_t)[mask])))
        s_n = max(s_n, float(np.max(np.abs(an_n)[mask])))
        s_t = max(s_t, float(np.max(np.abs(an_t)[mask])))
    return ResidualReport(r_n, r_t, s_n, s_t, hi - lo)


def observed_order(errors, ratio: float = 2.0) -> np.ndarray:
    """``log(e_i / e_{i+1}) / log(ratio)`` for a refinement sequence."""
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / math.log(ratio)
