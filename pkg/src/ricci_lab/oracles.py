"""Independent reference values for the test suite.

Nothing here imports from the rest of the package: closed forms, exact flow
solutions, brute-force index sums, Monte Carlo sups and symbolic curvature are
written from scratch so they can check the numerical modules.
"""

from __future__ import annotations

import math
from fractions import Fraction
from itertools import product

import numpy as np


class OracleDomainError(ValueError):
    pass


def sphere_area(k: int) -> float:
    """Volume of the unit k-sphere by the recurrence ``A_k = 2 pi A_{k-2} / (k - 1)``."""
    if k < 0:
        raise OracleDomainError("k must be >= 0")
    a = {0: 2.0, 1: 2.0 * math.pi}
    for j in range(2, k + 1):
        a[j] = 2.0 * math.pi * a[j - 2] / (j - 1)
    return a[k]


def unit_ball_volume(k: int) -> float:
    return sphere_area(k - 1) / k


def band_kn_integral_exact(G: float, c: float) -> float:
    """``int_0^c G^4 (G^2 + s^2)^(-5/2) ds = c (2c^2 + 3G^2) / (3 (G^2 + c^2)^(3/2))``."""
    if not (G > 0 and c > 0):
        raise OracleDomainError("G and c must be positive")
    return c * (2.0 * c * c + 3.0 * G * G) / (3.0 * (G * G + c * c) ** 1.5)


def band_volume_integral_exact(G: float, b: float) -> float:
    """``int_0^b (G^2 + s^2)^(3/2) ds``."""
    r = math.sqrt(G * G + b * b)
    return b * (2.0 * b * b + 5.0 * G * G) * r / 8.0 + 3.0 * G**4 / 8.0 * math.asinh(b / G)


def sphere_cap_volume(theta: float) -> float:
    """Volume of the polar cap of angular radius ``theta`` on the unit 4-sphere."""
    return 2.0 * math.pi**2 * (2.0 / 3.0 - math.cos(theta) + math.cos(theta) ** 3 / 3.0)


def exact_sphere_shrink(rho0: float, q: int, t: float) -> float:
    """Radius of the round ``S^{q+1}`` under Ricci flow: ``sqrt(rho0^2 - 2 q t)``."""
    left = rho0 * rho0 - 2.0 * q * t
    if left <= 0:
        raise OracleDomainError(f"t = {t} is at or past extinction {rho0 * rho0 / (2 * q)}")
    return math.sqrt(left)


def exact_cylinder_shrink(rho0: float, q: int, t: float) -> float:
    """Fiber radius of ``R x S^q``: ``sqrt(rho0^2 - 2 (q - 1) t)``."""
    left = rho0 * rho0 - 2.0 * (q - 1) * t
    if left <= 0:
        raise OracleDomainError("past extinction")
    return math.sqrt(left)


def riemann_index_sum(K_N, K_T, q: int):
    """Sum of ``R_ijkl^2`` over all ``d^4`` index tuples in an orthonormal frame.

    Frame index 0 is the radial direction; the curvature operator is diagonal
    with sectional curvature ``K_N`` on planes ``(0, i)`` and ``K_T`` on fiber
    planes.  Exact (``Fraction``) when the inputs are ints or Fractions.
    """
    exact = all(isinstance(v, (int, Fraction)) for v in (K_N, K_T))
    kn = Fraction(K_N) if exact else float(K_N)
    kt = Fraction(K_T) if exact else float(K_T)
    d = q + 1

    def sec(i, j):
        return kn if 0 in (i, j) else kt

    def R(i, j, k, l):
        # nonzero only on {i, j} == {k, l}, i != j, with the antisymmetries
        if i == j or k == l or {i, j} != {k, l}:
            return 0
        return sec(i, j) if (i, j) == (k, l) else -sec(i, j)

    return sum(R(i, j, k, l) ** 2 for i, j, k, l in product(range(d), repeat=4))


def tl_ratio_sup_monte_carlo(A: np.ndarray, B: np.ndarray, samples: int = 100_000, seed: int = 0) -> float:
    """``max |log v^T A v / v^T B v|`` over random unit vectors."""
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(samples, A.shape[0]))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    ra = np.einsum("ni,ij,nj->n", v, A, v)
    rb = np.einsum("ni,ij,nj->n", v, B, v)
    return float(np.max(np.abs(np.log(ra / rb))))


def integro_ode_solution(a: float, b: float, y0: float, T: float, steps: int = 20000):
    """``y' = a int_0^t y + b y + 1`` by Heun steps with a trapezoid running integral."""
    t = np.linspace(0.0, T, steps + 1)
    dt = T / steps
    y = np.empty(steps + 1)
    y[0] = y0
    integral = 0.0
    for n in range(steps):
        slope0 = a * integral + b * y[n] + 1.0
        y_pred = y[n] + dt * slope0
        int_pred = integral + 0.5 * dt * (y[n] + y_pred)
        slope1 = a * int_pred + b * y_pred + 1.0
        y[n + 1] = y[n] + 0.5 * dt * (slope0 + slope1)
        integral += 0.5 * dt * (y[n] + y[n + 1])
    return t, y


def linear_gronwall_solution(b: float, y0: float, t):
    """``y' = b y + 1``: ``(y0 + 1/b) e^{bt} - 1/b`` (``y0 + t`` when b = 0)."""
    t = np.asarray(t, dtype=float)
    if b == 0:
        return y0 + t
    return (y0 + 1.0 / b) * np.exp(b * t) - 1.0 / b


def warped_sectional_curvatures(phi_expr, psi_expr, x):
    """Symbolic ``(K_N, K_T)`` of ``phi^2 dx^2 + psi^2 g_{S^2}`` from the full Riemann tensor.

    Brute-force Christoffel symbols in coordinates ``(x, th, ph)``; the two
    sectional curvatures do not depend on the fiber dimension.
    """
    import sympy as sp

    th, ph = sp.symbols("theta varphi")
    X = (x, th, ph)
    g = sp.diag(phi_expr**2, psi_expr**2, psi_expr**2 * sp.sin(th) ** 2)
    gi = g.inv()
    n = 3
    Gam = [[[sp.simplify(sum(gi[a, m] * (sp.diff(g[m, b], X[c]) + sp.diff(g[m, c], X[b]) - sp.diff(g[b, c], X[m]))
                             for m in range(n)) / 2) for c in range(n)] for b in range(n)] for a in range(n)]

    def riem_up(a, b, c, d):  # R^a_{bcd}
        expr = sp.diff(Gam[a][b][d], X[c]) - sp.diff(Gam[a][b][c], X[d])
        expr += sum(Gam[a][c][e] * Gam[e][b][d] - Gam[a][d][e] * Gam[e][b][c] for e in range(n))
        return expr

    def riem_down(a, b, c, d):  # R_{abcd} = g_{ae} R^e_{bcd}
        return sum(g[a, e] * riem_up(e, b, c, d) for e in range(n))

    K_N = sp.simplify(riem_down(0, 1, 0, 1) / (g[0, 0] * g[1, 1]))
    K_T = sp.simplify(riem_down(1, 2, 1, 2) / (g[1, 1] * g[2, 2]))
    return K_N, K_T
