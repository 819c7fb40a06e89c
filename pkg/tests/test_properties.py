"""Property-based checks of the invariants listed per module."""

import math

import numpy as np
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from ricci_lab.curvature import curvature_state
from ricci_lab.flow import FlowConfig, run_flow
from ricci_lab.geometry import CoordinateMetricField, build_cutoff, build_dumbbell, build_round_sphere, dumbbell_shape
from ricci_lab.monitors import ak_hypotheses, gronwall_envelope, integro_gronwall_fit
from ricci_lab.tensor_lipschitz import SimplexMesh, matrix_closeness, tl_distance, uniform_tl_bound, volume_ratio_check

seeds = st.integers(0, 2**32 - 1)


def spd_field(seed, n=12, m=3, axes=None):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, m, m))
    g = A @ np.swapaxes(A, 1, 2) + 0.3 * np.eye(m)
    if axes is not None:
        g = g.reshape(tuple(a.size for a in axes) + (m, m))
    return CoordinateMetricField(g, axes)


@settings(max_examples=25)
@given(G=st.floats(0.1, 0.4), gap=st.floats(0.1, 0.6), width=st.floats(0.3, 0.8), q=st.integers(2, 5),
       M=st.sampled_from([100, 200, 400]))
def test_dumbbell_builder_output_is_valid(G, gap, width, q, M):
    p = build_dumbbell(G, G + gap, q=q, width=width, M=M)
    p.validate()
    assert p.symmetric and p.psi[M // 2] == G
    shape = dumbbell_shape(G, G + gap, width)
    s = np.linspace(-(G + gap), G + gap, 2001)
    eps = 1e-7
    slope = (shape.psi(s + eps) - shape.psi(s - eps)) / (2 * eps)
    assert np.all(np.abs(slope) < 1)


@settings(max_examples=25)
@given(rho=st.floats(0.2, 5.0), q=st.integers(2, 6), M=st.integers(16, 400))
def test_round_sphere_builder_output_is_valid(rho, q, M):
    p = build_round_sphere(rho, q, M)
    p.validate()
    assert abs(p.length - math.pi * rho) < 1e-9 * rho


@settings(max_examples=40)
@given(s0=st.floats(-0.5, 0.5), r_in=st.floats(0.05, 0.4), extra=st.floats(0.05, 0.5))
def test_cutoff_invariants(s0, r_in, extra):
    p = build_round_sphere(1.0, 3, 800)
    r_out = r_in + extra
    assume(abs(s0) + r_out < math.pi / 2)
    cut = build_cutoff(p, s0, r_in, r_out)
    d = np.abs(p.s - s0)
    assert np.all((cut.chi >= 0) & (cut.chi <= 1))
    assert np.all(cut.chi[d <= r_in] == 1) and np.all(cut.chi[d >= r_out] == 0)
    assert cut.grad_sup(p) <= 1 / (0.7 * extra) * (1 + 1e-6)


@settings(max_examples=20)
@given(G=st.floats(0.1, 0.4), gap=st.floats(0.1, 0.6), q=st.integers(2, 5))
def test_curvature_identities_hold_pointwise(G, gap, q):
    p = build_dumbbell(G, G + gap, q=q, M=400)
    cs = curvature_state(p)
    d = q + 1
    assert np.all(np.abs(cs.R) <= math.sqrt(d * (d - 1) / 2) * cs.rm_norm * (1 + 1e-12) + 1e-12)
    np.testing.assert_allclose(cs.R, cs.ric_ss + q * cs.ric_fiber, rtol=1e-12, atol=1e-10)
    same = cs.K_N == cs.K_T
    assert np.all(cs.a[same] == 0)


@settings(max_examples=200)
@given(a=seeds, b=seeds, c=seeds)
def test_tl_distance_is_a_pseudometric(a, b, c):
    ga, gb, gc = spd_field(a), spd_field(b), spd_field(c)
    dab, dba = tl_distance(ga, gb), tl_distance(gb, ga)
    assert dab >= 0 and abs(dab - dba) <= 1e-10 * max(1.0, dab)
    assert tl_distance(ga, ga) <= 1e-10
    assert dab <= tl_distance(ga, gc) + tl_distance(gc, gb) + 1e-10


@settings(max_examples=100)
@given(seed=seeds, c=st.floats(-1.0, 1.0))
def test_tl_distance_of_conformal_rescale(seed, c):
    g = spd_field(seed)
    assert abs(tl_distance(g, CoordinateMetricField(math.exp(2 * c) * g.g)) - 2 * abs(c)) <= 1e-10


@settings(max_examples=60)
@given(seed=seeds, scale=st.floats(1e-6, 0.5))
def test_uniform_deviation_controls_tl_distance(seed, scale):
    rng = np.random.default_rng(seed)
    g_inf = spd_field(seed)
    P = rng.normal(size=g_inf.flat.shape)
    gk = CoordinateMetricField(g_inf.g + scale * (P + np.swapaxes(P, 1, 2)) / 2 * 0.1)
    assume(np.all(np.linalg.eigvalsh(gk.flat)[:, 0] > 0))
    _, _, bound = uniform_tl_bound(gk, g_inf)
    assert tl_distance(gk, g_inf) <= bound * (1 + 1e-12)


AXES = (np.linspace(0, 1, 4), np.linspace(0, 1, 4))


@settings(max_examples=100)
@given(s1=seeds, s2=seeds, k=st.integers(3, 12))
def test_volume_ratio_check_is_sound(s1, s2, k):
    g1, g2 = spd_field(s1, 16, 2, AXES), spd_field(s2, 16, 2, AXES)
    rng = np.random.default_rng(s1 ^ s2)
    pts = rng.uniform(0.05, 0.95, size=(k, 2))
    assume(np.min(np.linalg.norm(np.diff(pts, axis=0), axis=1)) > 1e-3)
    mesh = SimplexMesh(pts, np.stack([np.arange(k - 1), np.arange(1, k)], axis=1))
    assert volume_ratio_check(g1, g2, mesh).ok


@settings(max_examples=60)
@given(seed=seeds, n=st.integers(1, 6), size=st.floats(1e-6, 0.2))
def test_closeness_bridge_inequality(seed, n, size):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(n, n))
    g = np.eye(n) + size * (P + P.T) / 2 / max(1.0, np.linalg.norm(P))
    rep = matrix_closeness(g)
    assert rep.bridge_ok and rep.reconstruction_error < 1e-8


@settings(max_examples=100)
@given(b=st.floats(0.0, 2.0), f0=st.floats(0.0, 2.0), amp=st.floats(0.0, 3.0), freq=st.floats(0.0, 6.0),
       slack=st.floats(0.0, 1.0))
def test_gronwall_envelope_accepts_true_subsolutions(b, f0, amp, freq, slack):
    t = np.linspace(0.0, 2.0, 801)
    g_fn = lambda s: amp * (1 + np.sin(freq * s)) + 0.1
    # f' = g + b f - slack * g  is a subsolution of f' <= g + b f
    sol = solve_ivp(lambda s, y: [(1 - slack) * g_fn(s) + b * y[0]], (0, 2), [f0], t_eval=t, rtol=1e-11, atol=1e-12)
    assert gronwall_envelope(t, sol.y[0], g_fn(t), b, rtol=1e-7).ok


@settings(max_examples=100)
@given(a=st.floats(0.0, 2.0), b=st.floats(0.0, 2.0), y0=st.floats(0.0, 2.0))
def test_integro_envelope_strictly_dominates(a, b, y0):
    fit = integro_gronwall_fit(a, b, y0, T=3.0)
    assert fit.dominates and fit.max_ratio < 1
    assert fit.comparison_margin >= 0


_PASSING = build_dumbbell(0.3, 0.5, M=800)
_BASE = ak_hypotheses(_PASSING, 2.5)


@settings(max_examples=30)
@given(seed=seeds, size=st.floats(0.0, 1e-6))
def test_hypothesis_booleans_stable_under_tiny_perturbation(seed, size):
    rng = np.random.default_rng(seed)
    bump = np.sin(np.linspace(0, math.pi, _PASSING.n)) ** 2 * rng.uniform(-1, 1) * size
    psi = _PASSING.psi + bump
    psi[0] = psi[-1] = 0.0
    rep = ak_hypotheses(_PASSING.replace(psi=psi, symmetric=False), 2.5)
    for key in ("kt_positive", "r_positive", "a_bounded", "ratio_applicable", "ratio_ok"):
        assert getattr(rep, key) == getattr(_BASE, key)


@settings(max_examples=8)
@given(G=st.floats(0.15, 0.4), t_end=st.floats(1e-4, 5e-3))
def test_flow_keeps_reflection_symmetry(G, t_end):
    p = build_dumbbell(G, 0.6, M=200)
    tr = run_flow(p, FlowConfig(t_end=t_end, snapshot_every=10))
    for snap in tr.profiles:
        assert np.max(np.abs(snap.psi - snap.psi[::-1])) <= 1e-13
        assert np.max(np.abs(snap.phi - snap.phi[::-1])) <= 1e-13
