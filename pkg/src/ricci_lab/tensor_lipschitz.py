"""Tensor Lipschitz distance between metric fields and the bounds it controls.

``d_TL(g1, g2) = max_p max_V |log g1(V,V)/g2(V,V)|``.  At a node the sup over
directions is attained at the extreme generalized eigenvalues of the pencil
``(g1, g2)``; the sup over the manifold is a max over grid nodes.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import eigh

from .errors import InvariantError, ParameterError
from .geometry import CoordinateMetricField, ProfileMetric, profile_metric_field
from .norms import alpha

PENCIL_RTOL = 1e-10


def _check_pair(g1: CoordinateMetricField, g2: CoordinateMetricField):
    if g1.g.shape != g2.g.shape:
        raise ParameterError(f"field shapes differ: {g1.g.shape} vs {g2.g.shape}")
    if g1.axes is not None and g2.axes is not None:
        if any(a.shape != b.shape or not np.array_equal(a, b) for a, b in zip(g1.axes, g2.axes)):
            raise ParameterError("fields live on different grids")
    elif (g1.axes is None) != (g2.axes is None):
        raise ParameterError("cannot compare a gridded field with an unstructured one")


def pencil_eigenvalues(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Generalized eigenvalues of ``A v = lam B v`` for SPD ``A``, ``B``, ascending."""
    try:
        lam, vec = eigh(A, B)
    except np.linalg.LinAlgError as exc:
        raise InvariantError("pencil is not SPD") from exc
    scale = np.linalg.norm(A) + np.abs(lam).max() * np.linalg.norm(B)
    resid = np.linalg.norm(A @ vec - (B @ vec) * lam)
    if resid > PENCIL_RTOL * scale * max(1.0, np.linalg.norm(vec)):
        raise InvariantError(f"pencil residual {resid:g} too large")
    if np.any(lam <= 0):
        raise InvariantError("pencil has a non-positive eigenvalue")
    return lam


def node_log_ratios(g1: CoordinateMetricField, g2: CoordinateMetricField) -> np.ndarray:
    """Per-node ``max |log lam|`` over the pencil eigenvalues."""
    _check_pair(g1, g2)
    A, B = g1.flat, g2.flat
    out = np.empty(A.shape[0])
    for k in range(A.shape[0]):
        lam = pencil_eigenvalues(A[k], B[k])
        out[k] = max(abs(math.log(lam[0])), abs(math.log(lam[-1])))
    return out


def tl_distance(g1: CoordinateMetricField, g2: CoordinateMetricField) -> float:
    return float(np.max(node_log_ratios(g1, g2)))


def uniform_tl_bound(gk: CoordinateMetricField, g_inf: CoordinateMetricField) -> tuple[float, float, float]:
    """``(eps, lam_min, log(1 + eps/lam_min))`` for a pair of fields.

    ``eps`` is the largest operator-norm deviation ``|gk - g_inf|`` and
    ``lam_min`` the smallest eigenvalue of either field.  Every pencil
    eigenvalue ``mu`` then obeys ``mu <= 1 + eps/lam_min`` and
    ``1/mu <= 1 + eps/lam_min``, so the last entry bounds ``tl_distance``.
    """
    _check_pair(gk, g_inf)
    eps = float(np.max(np.linalg.norm(gk.flat - g_inf.flat, ord=2, axis=(1, 2))))
    lam_min = float(min(np.linalg.eigvalsh(gk.flat)[:, 0].min(), np.linalg.eigvalsh(g_inf.flat)[:, 0].min()))
    return eps, lam_min, math.log1p(eps / lam_min)


# ---------------------------------------------------------------------------
# closeness of a single matrix to the identity


@dataclass(frozen=True)
class ClosenessReport:
    n: int
    eig_deviation: float  # max |lam_i - 1|
    frobenius_deviation: float  # |g - I|_F
    det_deviation: float  # |det g - 1|
    minor_deviation: float  # max_j |det of g without row/column j - 1|
    bridge_bound: float  # n * sqrt(n) * max |lam_i - 1|
    bridge_ok: bool
    reconstruction_error: float  # max_j |det D / det D_(j) - lam_j| in the eigenbasis

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _minor(g: np.ndarray, j: int) -> np.ndarray:
    keep = [i for i in range(g.shape[0]) if i != j]
    return g[np.ix_(keep, keep)]


def eigen_reconstruction(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues of ``g`` two ways: ``eigh`` and ``det D / det D_(j)`` with ``D = h^T g h``."""
    lam, h = np.linalg.eigh(g)
    D = h.T @ g @ h
    det = np.linalg.det(D)
    ratio = np.array([det / np.linalg.det(_minor(D, j)) for j in range(g.shape[0])])
    return lam, ratio


def matrix_closeness(g: np.ndarray) -> ClosenessReport:
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ParameterError("g must be a square matrix")
    if not np.allclose(g, g.T, rtol=1e-12, atol=1e-14):
        raise ParameterError("g must be symmetric")
    n = g.shape[0]
    lam, ratio = eigen_reconstruction(g)
    if lam[0] <= 0:
        raise InvariantError("g must be positive definite")
    eig_dev = float(np.max(np.abs(lam - 1.0)))
    frob = float(np.linalg.norm(g - np.eye(n)))
    det_dev = abs(float(np.linalg.det(g)) - 1.0)
    minor_dev = max((abs(float(np.linalg.det(_minor(g, j))) - 1.0) for j in range(n)), default=0.0) if n > 1 else 0.0
    bridge = n * math.sqrt(n) * eig_dev
    return ClosenessReport(n, eig_dev, frob, det_dev, minor_dev, bridge, frob <= bridge * (1 + 1e-12) + 1e-15,
                           float(np.max(np.abs(ratio - lam))))


# ---------------------------------------------------------------------------
# submanifold volumes


@dataclass(frozen=True)
class SimplexMesh:
    """``m``-dimensional simplices in coordinate space; ``cells`` index ``vertices``."""

    vertices: np.ndarray  # (N, dim)
    cells: np.ndarray  # (E, m+1)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        c = np.asarray(self.cells, dtype=int)
        if v.ndim != 2 or c.ndim != 2:
            raise ParameterError("vertices and cells must be 2-D arrays")
        if c.shape[1] - 1 > v.shape[1] or c.shape[1] < 2:
            raise ParameterError("cell dimension must lie in [1, ambient dimension]")
        if c.min() < 0 or c.max() >= v.shape[0]:
            raise ParameterError("cell index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "cells", c)

    @property
    def m(self) -> int:
        return self.cells.shape[1] - 1

    def frames(self) -> tuple[np.ndarray, np.ndarray]:
        """Edge frames ``(E, dim, m)`` and centroids ``(E, dim)``."""
        P = self.vertices[self.cells]
        E = np.swapaxes(P[:, 1:, :] - P[:, :1, :], 1, 2)
        return E, P.mean(axis=1)


def mesh_volume(field: CoordinateMetricField, mesh: SimplexMesh) -> float:
    """Riemannian m-volume: per cell ``sqrt(det E^T g E) / m!`` with ``g`` at the centroid."""
    E, mid = mesh.frames()
    if mesh.vertices.shape[1] != field.dim:
        raise ParameterError("mesh and field dimensions differ")
    g = field.at(mid)
    gram = np.einsum("eia,eij,ejb->eab", E, g, E)
    flat_gram = np.einsum("eia,eib->eab", E, E)
    if np.any(np.linalg.det(flat_gram) <= 1e-14 * np.max(np.abs(flat_gram)) ** mesh.m):
        raise ParameterError("degenerate mesh element")
    return float(np.sum(np.sqrt(np.linalg.det(gram)))) / math.factorial(mesh.m)


@dataclass(frozen=True)
class VolumeRatioReport:
    m: int
    delta: float
    ratio: float
    lower: float
    upper: float
    ok: bool
    margin: float  # distance of |log ratio| below m delta / 2

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def volume_ratio_check(g1: CoordinateMetricField, g2: CoordinateMetricField, mesh: SimplexMesh,
                       delta: float | None = None) -> VolumeRatioReport:
    """Check ``exp(-m delta/2) <= Vol_g1(S)/Vol_g2(S) <= exp(m delta/2)``.

    ``delta`` defaults to the measured ``tl_distance``; interpolated matrices
    are convex combinations of node matrices, so the node value bounds them too.
    """
    d = tl_distance(g1, g2) if delta is None else float(delta)
    ratio = mesh_volume(g1, mesh) / mesh_volume(g2, mesh)
    half = 0.5 * mesh.m * d
    margin = half - abs(math.log(ratio))
    ok = margin >= -1e-12 * max(1.0, half)
    return VolumeRatioReport(mesh.m, d, ratio, math.exp(-half), math.exp(half), ok, margin)


# ---------------------------------------------------------------------------
# isoperimetric quotients of two profile metrics on the same domains


@dataclass(frozen=True)
class IsoRatioReport:
    delta: float
    bound: float
    log_ratios: np.ndarray
    ok: bool

    def to_json(self) -> str:
        return json.dumps({"delta": self.delta, "bound": self.bound, "ok": self.ok,
                           "max_log_ratio": float(np.max(np.abs(self.log_ratios)))}, sort_keys=True)


def coordinate_quotients(profile: ProfileMetric, levels: np.ndarray) -> np.ndarray:
    """``Vol(Omega)^((d-1)/d) / Vol(dOmega)`` for ``Omega = {x <= x[k]}`` at node indices ``levels``.

    Domains are fixed in coordinates, so two metrics on the same grid are
    compared on literally the same sets.
    """
    if profile.periodic:
        raise ParameterError("needs a closed profile")
    q, d = profile.q, profile.dim
    levels = np.asarray(levels, dtype=int)
    if levels.min() < 1 or levels.max() > profile.n - 2:
        raise ParameterError("levels must be interior node indices")
    f = profile.psi**q * profile.phi
    cum = np.concatenate([[0.0], np.cumsum(0.5 * profile.h * (f[1:] + f[:-1]))])
    vol = alpha(q) * cum[levels]
    area = alpha(q) * profile.psi[levels] ** q
    return vol ** ((d - 1) / d) / area


def iso_ratio_check(p1: ProfileMetric, p2: ProfileMetric, levels=None) -> IsoRatioReport:
    """Check ``|log Q1/Q2| <= (d-1) delta`` on the coordinate level-set family."""
    if p1.n != p2.n or not np.array_equal(p1.x, p2.x) or p1.q != p2.q:
        raise ParameterError("profiles must share grid and fiber dimension")
    if levels is None:
        levels = np.arange(1, p1.n - 1)
    delta = tl_distance(profile_metric_field(p1), profile_metric_field(p2))
    lr = np.log(coordinate_quotients(p1, levels) / coordinate_quotients(p2, levels))
    bound = (p1.dim - 1) * delta
    ok = bool(np.all(np.abs(lr) <= bound * (1 + 1e-12) + 1e-13))
    return IsoRatioReport(delta, bound, lr, ok)

