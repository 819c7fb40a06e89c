"""Pointwise curvature of warped-product profiles and their neck/bump structure.

For ``g = ds^2 + psi(s)^2 g_{S^q}`` the curvature operator is diagonal with
eigenvalue ``K_N = -psi_ss/psi`` on the q planes containing ``d/ds`` and
``K_T = (1 - psi_s^2)/psi^2`` on the q(q-1)/2 planes tangent to the fiber.
Everything else here is assembled from those two fields.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _stencils as st
from .errors import SingularProfileError
from .geometry import ProfileMetric, arclength

SINGULAR_RTOL = 1e-12
PLATEAU_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class CurvatureState:
    q: int
    psi: np.ndarray
    psi_s: np.ndarray
    K_N: np.ndarray
    K_T: np.ndarray
    ric_ss: np.ndarray | None = None
    ric_fiber: np.ndarray | None = None
    R: np.ndarray | None = None
    rm_norm: np.ndarray | None = None
    a: np.ndarray | None = None

    @property
    def ric_norm(self) -> np.ndarray:
        """Pointwise |Ric| (Frobenius); needs :func:`ricci_and_scalar` first."""
        return np.sqrt(self.ric_ss**2 + self.q * self.ric_fiber**2)


@dataclass(frozen=True)
class NeckReport:
    necks: list[tuple[int, float]]
    bumps: list[tuple[int, float]]
    r_min: float | None
    r_max: float | None


def _pole_limit(values: np.ndarray, s: np.ndarray, pole: int) -> float:
    """Even extrapolation ``K(s) = K0 + c s^2`` from the two nodes next to a pole."""
    i1, i2 = (1, 2) if pole == 0 else (-2, -3)
    d1 = abs(s[i1] - s[pole])
    d2 = abs(s[i2] - s[pole])
    return float((d2 * d2 * values[i1] - d1 * d1 * values[i2]) / (d2 * d2 - d1 * d1))


def sectional_curvatures(profile: ProfileMetric) -> CurvatureState:
    """K_N and K_T at every node; pole values are the smooth limits."""
    psi, phi, h, per = profile.psi, profile.phi, profile.h, profile.periodic
    interior = psi[1:-1] if not per else psi
    if np.any(interior <= SINGULAR_RTOL * np.max(psi)):
        raise SingularProfileError("psi vanishes at an interior node")
    psi_x = st.d1(psi, h, per, parity=-1)
    psi_xx = st.d2(psi, h, per, parity=-1)
    phi_x = st.d1(phi, h, per, parity=1)
    psi_s = psi_x / phi
    psi_ss = (psi_xx - psi_x * phi_x / phi) / (phi * phi)
    with np.errstate(divide="ignore", invalid="ignore"):
        K_N = -psi_ss / psi
        K_T = (1.0 - psi_s * psi_s) / (psi * psi)
    if not per:
        s = arclength(profile)
        for pole in (0, -1):
            K_N[pole] = _pole_limit(K_N, s, pole)
            K_T[pole] = _pole_limit(K_T, s, pole)
    return CurvatureState(q=profile.q, psi=psi, psi_s=psi_s, K_N=K_N, K_T=K_T)


def ricci_and_scalar(state: CurvatureState, q: int) -> CurvatureState:
    ric_ss = q * state.K_N
    ric_fiber = state.K_N + (q - 1) * state.K_T
    R = 2 * q * state.K_N + q * (q - 1) * state.K_T
    return replace(state, ric_ss=ric_ss, ric_fiber=ric_fiber, R=R, q=q)


def riemann_norm(state: CurvatureState, q: int) -> np.ndarray:
    """|Rm|^2 = 4 [q K_N^2 + q(q-1)/2 K_T^2] (full (0,4)-tensor norm)."""
    return 4.0 * (q * state.K_N**2 + 0.5 * q * (q - 1) * state.K_T**2)


def a_profile(state: CurvatureState) -> np.ndarray:
    return state.psi**2 * (state.K_N - state.K_T)


def curvature_state(profile: ProfileMetric) -> CurvatureState:
    """All curvature fields of ``profile`` in one pass."""
    q = profile.q
    st_ = ricci_and_scalar(sectional_curvatures(profile), q)
    return replace(st_, rm_norm=np.sqrt(riemann_norm(st_, q)), a=a_profile(st_))


def _extrema(values: np.ndarray, lo: float, hi: float, rtol: float):
    """Local minima/maxima of ``values`` with the boundary values ``lo``/``hi`` as fences.

    Runs of equal values collapse to one candidate at the run midpoint.
    """
    tol = rtol * max(np.max(np.abs(values)), 1e-300)
    runs = []  # (start, end, value)
    start = 0
    for i in range(1, values.size + 1):
        if i == values.size or abs(values[i] - values[start]) > tol:
            runs.append((start, i - 1, values[start]))
            start = i
    mins, maxs = [], []
    for k, (a, b, v) in enumerate(runs):
        left = runs[k - 1][2] if k > 0 else lo
        right = runs[k + 1][2] if k + 1 < len(runs) else hi
        if left is None or right is None:
            continue
        mid = (a + b) // 2
        if v < left and v < right:
            mins.append((mid, float(values[mid])))
        elif v > left and v > right:
            maxs.append((mid, float(values[mid])))
    return mins, maxs


def neck_bump_analysis(profile: ProfileMetric) -> NeckReport:
    """Interior local minima (necks) and maxima (bumps) of psi.

    ``r_min`` is psi at the smallest neck and ``r_max`` psi at the smallest bump.
    """
    psi = profile.psi
    if profile.periodic and np.ptp(psi) <= PLATEAU_RTOL * np.max(psi):
        mins, maxs = [], []
    elif profile.periodic:
        # rotate so the global maximum sits at the ends; it then fences the scan
        k = int(np.argmax(psi))
        rolled = np.roll(psi, -k)
        mins, maxs = _extrema(rolled[1:], rolled[0], rolled[0], PLATEAU_RTOL)
        n = psi.size
        mins = [((i + 1 + k) % n, v) for i, v in mins]
        maxs = [((i + 1 + k) % n, v) for i, v in maxs] + [(k, float(psi[k]))]
    else:
        mins, maxs = _extrema(psi[1:-1], psi[0], psi[-1], PLATEAU_RTOL)
        mins = [(i + 1, v) for i, v in mins]
        maxs = [(i + 1, v) for i, v in maxs]
    mins.sort()
    maxs.sort()
    r_min = min(v for _, v in mins) if mins else None
    r_max = min(v for _, v in maxs) if maxs else None
    return NeckReport(mins, maxs, r_min, r_max)


def waist(psi: np.ndarray, periodic: bool = False) -> float:
    """Smallest neck radius, or the smallest interior psi if there is no neck."""
    inner = psi if periodic else psi[1:-1]
    if inner.size >= 3:
        c = inner[1:-1]
        is_min = (c < inner[:-2]) & (c <= inner[2:])
        if np.any(is_min):
            return float(np.min(c[is_min]))
    return float(np.min(inner))
