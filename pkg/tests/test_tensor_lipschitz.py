import math

import numpy as np
import pytest

from ricci_lab.errors import InvariantError, ParameterError
from ricci_lab.flow import FlowConfig, run_flow
from ricci_lab.geometry import CoordinateMetricField, build_cutoff, build_dumbbell, build_round_sphere
from ricci_lab.oracles import tl_ratio_sup_monte_carlo
from ricci_lab.tensor_lipschitz import (SimplexMesh, coordinate_quotients, iso_ratio_check, matrix_closeness,
                                        mesh_volume, node_log_ratios, pencil_eigenvalues, tl_distance,
                                        uniform_tl_bound, volume_ratio_check)


def random_spd(rng, n, m, spread=1.0):
    A = rng.normal(size=(n, m, m)) * spread
    return A @ np.swapaxes(A, 1, 2) + 0.5 * np.eye(m)


def grid_field(rng, m=2, k=5):
    axes = tuple(np.linspace(0, 1, k) for _ in range(m))
    g = random_spd(rng, k**m, m).reshape((k,) * m + (m, m))
    return CoordinateMetricField(g, axes)


def test_scaled_field_distance():
    rng = np.random.default_rng(1)
    g = CoordinateMetricField(random_spd(rng, 20, 3))
    assert tl_distance(CoordinateMetricField(4 * g.g), g) == pytest.approx(math.log(4), rel=1e-12)
    assert tl_distance(g, g) == pytest.approx(0.0, abs=1e-12)


def test_single_node_against_monte_carlo():
    a = 2.7
    A, B = np.diag([a, 1.0, 1.0]), np.eye(3)
    d = tl_distance(CoordinateMetricField(A[None]), CoordinateMetricField(B[None]))
    assert d == pytest.approx(abs(math.log(a)), rel=1e-13)
    assert tl_ratio_sup_monte_carlo(A, B, samples=100_000) == pytest.approx(d, abs=1e-4)


def test_general_pencil_against_monte_carlo():
    rng = np.random.default_rng(3)
    A, B = random_spd(rng, 2, 3)
    d = node_log_ratios(CoordinateMetricField(A[None]), CoordinateMetricField(B[None]))[0]
    mc = tl_ratio_sup_monte_carlo(A, B, samples=200_000, seed=4)
    assert mc <= d + 1e-12 and mc == pytest.approx(d, rel=2e-2)


def test_pencil_rejects_non_spd():
    with pytest.raises(InvariantError):
        pencil_eigenvalues(np.eye(2), -np.eye(2))


def test_field_compatibility_checks():
    rng = np.random.default_rng(0)
    a = grid_field(rng)
    b = CoordinateMetricField(a.g, tuple(ax * 2 for ax in a.axes))
    with pytest.raises(ParameterError):
        tl_distance(a, b)
    with pytest.raises(ParameterError):
        tl_distance(a, CoordinateMetricField(a.flat))
    with pytest.raises(ParameterError):
        tl_distance(CoordinateMetricField(a.flat[:3]), CoordinateMetricField(a.flat[:4]))


def test_uniform_bound_dominates():
    rng = np.random.default_rng(5)
    g_inf = CoordinateMetricField(random_spd(rng, 30, 3))
    for k in range(1, 8):
        pert = random_spd(rng, 30, 3) * 2.0**-k * 0.1
        gk = CoordinateMetricField(g_inf.g + pert)
        eps, lam, bound = uniform_tl_bound(gk, g_inf)
        assert tl_distance(gk, g_inf) <= bound * (1 + 1e-12)
        assert eps > 0 and lam > 0


def test_identity_closeness():
    rep = matrix_closeness(np.eye(4))
    assert rep.eig_deviation == rep.frobenius_deviation == rep.det_deviation == rep.minor_deviation == 0.0
    assert rep.bridge_ok


def test_diagonal_closeness():
    delta = 0.01
    rep = matrix_closeness(np.diag([1 + delta, 1.0, 1.0, 1.0]))
    assert rep.eig_deviation == pytest.approx(delta, rel=1e-12)
    assert rep.det_deviation == pytest.approx(delta, rel=1e-12)
    assert rep.minor_deviation == pytest.approx(delta, rel=1e-12)
    assert rep.bridge_ok and rep.frobenius_deviation <= rep.bridge_bound
    with pytest.raises(ParameterError):
        matrix_closeness(np.array([[1.0, 0.2], [0.0, 1.0]]))
    with pytest.raises(InvariantError):
        matrix_closeness(-np.eye(2))


def test_eigenvalue_reconstruction_identity():
    rng = np.random.default_rng(7)
    for _ in range(50):
        g = random_spd(rng, 1, 4)[0]
        assert matrix_closeness(g).reconstruction_error < 1e-8 * np.linalg.norm(g)


def curve_mesh(k=40):
    t = np.linspace(0.05, 0.95, k)
    pts = np.stack([t, 0.5 + 0.3 * np.sin(3 * t)], axis=1)
    return SimplexMesh(pts, np.stack([np.arange(k - 1), np.arange(1, k)], axis=1))


def square_mesh():
    v = np.array([[0.1, 0.1], [0.9, 0.1], [0.9, 0.9], [0.1, 0.9]])
    return SimplexMesh(v, np.array([[0, 1, 2], [0, 2, 3]]))


def test_identical_fields_have_unit_volume_ratio():
    f = grid_field(np.random.default_rng(2))
    rep = volume_ratio_check(f, f, curve_mesh())
    assert rep.ratio == pytest.approx(1.0, rel=1e-14) and rep.ok


@pytest.mark.parametrize("mesh_fn, m", [(curve_mesh, 1), (square_mesh, 2)])
def test_conformal_volume_law(mesh_fn, m):
    c = 0.3
    f = grid_field(np.random.default_rng(9))
    g = CoordinateMetricField(math.exp(2 * c) * f.g, f.axes)
    rep = volume_ratio_check(g, f, mesh_fn())
    assert rep.delta == pytest.approx(2 * c, rel=1e-12)
    assert rep.ratio == pytest.approx(math.exp(m * c), rel=1e-12)
    assert rep.ok and abs(rep.margin) < 1e-12


def test_flat_square_area():
    axes = (np.linspace(0, 1, 3), np.linspace(0, 1, 3))
    flat = CoordinateMetricField(np.broadcast_to(np.eye(2), (3, 3, 2, 2)).copy(), axes)
    assert mesh_volume(flat, square_mesh()) == pytest.approx(0.64, rel=1e-14)


def test_mesh_validation():
    with pytest.raises(ParameterError):
        SimplexMesh(np.zeros((3, 2)), np.array([[0, 5]]))
    degenerate = SimplexMesh(np.array([[0.2, 0.2], [0.2, 0.2], [0.5, 0.5]]), np.array([[0, 1, 2]]))
    f = grid_field(np.random.default_rng(0))
    with pytest.raises(ParameterError):
        mesh_volume(f, degenerate)


def test_iso_ratio_identical_and_scaled():
    p = build_dumbbell(0.3, 0.5, M=400)
    same = iso_ratio_check(p, p)
    assert same.ok and np.all(same.log_ratios == 0)
    c = 0.2
    scaled = p.replace(phi=math.exp(c) * p.phi, psi=math.exp(c) * p.psi)
    rep = iso_ratio_check(p, scaled)
    assert rep.delta == pytest.approx(2 * c, rel=1e-12)
    # the quotient is scale free, so the log-ratio is zero and well inside (d - 1) delta
    assert np.max(np.abs(rep.log_ratios)) < 1e-12 and rep.ok


def test_iso_ratio_on_flow_pair():
    p = build_dumbbell(0.3, 0.5, M=400)
    cut = build_cutoff(p, 0.0, 0.5, 1.5)
    tr = run_flow(p, FlowConfig(mode="local_ricci", cutoff=cut, t_end=0.005))
    rep = iso_ratio_check(tr.initial, tr.final)
    assert rep.delta > 0 and rep.ok
    assert np.max(np.abs(rep.log_ratios)) > 0


def test_coordinate_quotients_checks():
    p = build_round_sphere(1.0, 3, 64)
    with pytest.raises(ParameterError):
        coordinate_quotients(p, [0])
    q = coordinate_quotients(p, [32])
    assert q[0] == pytest.approx((4 * math.pi**2 / 3) ** 0.75 / (2 * math.pi**2), rel=1e-2)
