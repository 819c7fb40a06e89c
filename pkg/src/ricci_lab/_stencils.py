"""Fourth-order finite differences on a uniform 1D grid with pole/periodic ghosts.

At a closed-sphere endpoint the ghost layer is a reflection about the pole
node: ``parity=-1`` for odd quantities (psi), ``+1`` for even ones (phi, chi,
curvatures).  Periodic grids wrap.
"""

from __future__ import annotations

import numpy as np

NGHOST = 2


def pad(f: np.ndarray, periodic: bool, parity: int = 1) -> np.ndarray:
    out = np.empty(f.size + 2 * NGHOST)
    out[NGHOST:-NGHOST] = f
    if periodic:
        out[:NGHOST] = f[-NGHOST:]
        out[-NGHOST:] = f[:NGHOST]
    else:
        out[1] = parity * f[1]
        out[0] = parity * f[2]
        out[-2] = parity * f[-2]
        out[-1] = parity * f[-3]
    return out


def d1d2(f: np.ndarray, h: float, periodic: bool, parity: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivative from one ghost-padded copy."""
    p = pad(f, periodic, parity)
    a, b, c, d, e = p[:-4], p[1:-3], p[2:-2], p[3:-1], p[4:]
    return (a - 8.0 * b + 8.0 * d - e) / (12.0 * h), (-(a + e) + 16.0 * (b + d) - 30.0 * c) / (12.0 * h * h)


def d1(f: np.ndarray, h: float, periodic: bool, parity: int = 1) -> np.ndarray:
    p = pad(f, periodic, parity)
    return (p[:-4] - 8.0 * p[1:-3] + 8.0 * p[3:-1] - p[4:]) / (12.0 * h)


def d2(f: np.ndarray, h: float, periodic: bool, parity: int = 1) -> np.ndarray:
    p = pad(f, periodic, parity)
    return (-p[:-4] + 16.0 * p[1:-3] - 30.0 * p[2:-2] + 16.0 * p[3:-1] - p[4:]) / (12.0 * h * h)


def d1_second_order(f: np.ndarray, h: float, periodic: bool, parity: int = 1) -> np.ndarray:
    """Plain centered difference; used where an independent stencil is wanted."""
    p = pad(f, periodic, parity)
    return (p[3:-1] - p[1:-3]) / (2.0 * h)


def d2_second_order(f: np.ndarray, h: float, periodic: bool, parity: int = 1) -> np.ndarray:
    p = pad(f, periodic, parity)
    return (p[3:-1] - 2.0 * p[2:-2] + p[1:-3]) / (h * h)
