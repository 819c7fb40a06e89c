"""Acceptance suite: one test per numbered criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are repeated
in an "acceptance criteria" section at the end of the pytest report.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ricci_lab.cli import iso_scan_rows
from ricci_lab.curvature import curvature_state, waist
from ricci_lab.flow import FlowConfig, cfl_limit, curvature_evolution_residual, observed_order, run_flow
from ricci_lab.geometry import (CoordinateMetricField, CutoffProfile, build_cutoff, build_dumbbell,
                                build_round_sphere)
from ricci_lab.monitors import (ak_hypotheses, extension_tracker, gronwall_envelope, integro_gronwall_fit,
                                lrf_energy_monitor, pinch_monitor)
from ricci_lab.norms import (alpha, band_energy_upper_bound, deane_iso_constant, dumbbell_band_row, lp_norm,
                             sobolev_from_iso, varpi)
from ricci_lab.oracles import band_kn_integral_exact, exact_sphere_shrink, integro_ode_solution
from ricci_lab.tensor_lipschitz import SimplexMesh, iso_ratio_check, matrix_closeness, tl_distance, volume_ratio_check

RNG_SEED = 20240601


def spd(rng, n, m):
    A = rng.normal(size=(n, m, m))
    return A @ np.swapaxes(A, 1, 2) + 0.2 * np.eye(m)


def uniform_snapshot_run(p, T, snaps, cutoff=None):
    """Fixed dt near 60% of the stability bound with ``snaps`` evenly spaced snapshots."""
    n = snaps * int(math.ceil(T / (0.6 * cfl_limit(p, 0.5)) / snaps))
    mode = "ricci" if cutoff is None else "local_ricci"
    return run_flow(p, FlowConfig(mode=mode, cutoff=cutoff, t_end=T, dt=T / n, snapshot_every=n // snaps))


def test_criterion_01_shrinking_sphere(criterion):
    run_flow(build_round_sphere(1.0, 3, 32), FlowConfig(t_end=1e-3))  # JIT warm-up, excluded from timing
    rho = exact_sphere_shrink(1.0, 3, 0.1)
    assert rho == pytest.approx(math.sqrt(1 - 6 * 0.1), rel=1e-15)
    start = time.perf_counter()
    tr = run_flow(build_round_sphere(1.0, 3, 400), FlowConfig(t_end=0.1, snapshot_every=10**6))
    elapsed = time.perf_counter() - start
    rel = abs(tr.final.psi.max() - rho) / rho
    errs = []
    for M in (100, 200, 400):
        t = run_flow(build_round_sphere(1.0, 3, M), FlowConfig(t_end=0.1, snapshot_every=10**6))
        errs.append(abs(t.final.psi.max() - rho))
    orders = observed_order(errs)
    criterion(1, "shrinking sphere", {
        "reached t_end": tr.stop_reason == "reached_t_end" and tr.t_stop == 0.1,
        "relative error < 1e-4": rel < 1e-4,
        "order >= 1.9": np.all(orders >= 1.9),
        "runtime < 10 s": elapsed < 10.0,
    }, f"rel err {rel:.2e}, orders {np.round(orders, 2).tolist()}, {elapsed:.2f} s")


def test_criterion_02_band_normal_curvature(criterion):
    checks, detail = {}, []
    for G in (0.1, 0.2):
        errs = []
        for M in (800, 1600, 3200):
            p = build_dumbbell(G, 0.5, M=M)
            s = p.s
            band = np.abs(s) <= 0.5
            exact = -G * G / (G * G + s[band] ** 2) ** 2
            errs.append(np.max(np.abs(curvature_state(p).K_N[band] - exact)))
        orders = observed_order(errs)
        checks[f"G={G} order >= 1.9"] = np.all(orders >= 1.9)
        detail.append(f"G={G}: {np.round(orders, 2).tolist()}")
    criterion(2, "band normal curvature closed form", checks, "; ".join(detail))


def test_criterion_03_band_energy(criterion):
    start = time.perf_counter()
    rows = [dumbbell_band_row(G, 0.5) for G in (0.2, 0.1, 0.05, 1e-3)]
    worst = 0.0
    for r in rows:
        oracle_sq = 24 * 2 * alpha(3) * band_kn_integral_exact(r["G"], 0.5)
        worst = max(worst, abs(r["rm2_numeric"] ** 2 / oracle_sq - 1))
    bound_ok = True
    for G in (1e-3, 0.01, 0.05, 0.1, 0.2):
        for c in (0.25, 0.3, 0.5, 0.75, 1.0):
            assert G < c
            r = dumbbell_band_row(G, c, ps=(), M=1600)
            bound_sq = 4 * 6 * 2**1.5 * alpha(3) * (1 - G**4 / (G + c) ** 4)
            assert band_energy_upper_bound(G, c) ** 2 == pytest.approx(bound_sq, rel=1e-14)
            bound_ok &= r["rm2_numeric"] ** 2 <= bound_sq
    gap = rows[-1]["gap_ratio"]
    elapsed = time.perf_counter() - start
    criterion(3, "band energy, bound and gap ratio", {
        "numeric vs oracle 1e-6": worst < 1e-6,
        "bound on 5x5 grid": bound_ok,
        "gap ratio > 100 at G=1e-3": gap > 100 and gap == pytest.approx(rows[-1]["rm2_numeric"] / varpi(4, 1.0)),
        "runtime < 5 s": elapsed < 5.0,
    }, f"max rel err {worst:.1e}, gap ratio {gap:.1f}, {elapsed:.2f} s")


def test_criterion_04_energy_gap_constant(criterion):
    ref = (7 / 8) * math.pi / (64 * math.sqrt(3))
    val = varpi(4, 1.0)
    criterion(4, "energy gap constant", {"varpi(4,1) to 1e-12": abs(val - ref) <= 1e-12 * ref},
              f"{val!r}")


def test_criterion_05_ricci_norm_divergence(criterion):
    rows = [dumbbell_band_row(G, 0.5) for G in (0.2, 0.1, 0.05, 0.025)]
    checks = {}
    for p in ("2.5", "3", "4"):
        vals = [r[f"ric_p{p}"] for r in rows]
        checks[f"p={p} strictly increasing"] = all(b > a for a, b in zip(vals, vals[1:]))
    last = ", ".join(f"p{p}: {rows[-1][f'ric_p{p}']:.3g}" for p in ("2.5", "3", "4"))
    criterion(5, "Ricci L^p norms grow as the neck thins", checks, f"at G=0.025 {last}")


def test_criterion_06_isoperimetric_quotient(criterion):
    sups = {G: max(r[2] for r in iso_scan_rows(G, 0.5, 64)) for G in (0.2, 0.1, 0.05, 0.025)}
    change = abs(sups[0.025] / sups[0.05] - 1)
    finite = all(math.isfinite(v) for v in sups.values())
    criterion(6, "isoperimetric quotient bounded", {"finite": finite, "change < 5%": change < 0.05},
              f"sups {[round(v, 5) for v in sups.values()]}, change {change:.2e}")


def test_criterion_07_neck_pinch(criterion):
    G = 0.3
    p = build_dumbbell(G, 0.5, q=3, M=800)
    hyp = ak_hypotheses(p, 2.5)
    start = time.perf_counter()
    tr = run_flow(p, FlowConfig(t_end=0.2, snapshot_every=500, remesh=True))
    elapsed = time.perf_counter() - start
    rep = pinch_monitor(tr, 2.5, G)
    w = waist(tr.final.psi)
    criterion(7, "neck pinch before the threshold", {
        "all four hypotheses": hyp.kt_positive and hyp.r_positive and hyp.a_bounded and hyp.ratio_ok,
        "pinch detected": tr.stop_reason == "pinch_detected",
        "waist < 1e-3 G": w < 1e-3 * G,
        "time < G^2/2": rep.singular_time < G * G / 2,
        "time < G": rep.singular_time < G,
        "runtime < 120 s": elapsed < 120.0,
    }, f"t = {rep.singular_time:.6f}, waist {w:.2e}, {elapsed:.1f} s")


def test_criterion_08_local_flow_locality(criterion, frozen_neck_run):
    tr = frozen_neck_run
    frozen = tr.chi == 0
    identical = all(np.array_equal(s.phi[frozen], tr.initial.phi[frozen])
                    and np.array_equal(s.psi[frozen], tr.initial.psi[frozen]) for s in tr.profiles)
    ext = extension_tracker(tr)
    p = build_dumbbell(0.3, 0.5, M=400)
    over = run_flow(p, FlowConfig(mode="local_ricci", cutoff=build_cutoff(p, 0.0, 0.5, 1.5), t_end=0.2,
                                  snapshot_every=500))
    criterion(8, "local flow locality", {
        "frozen nodes bit-identical": frozen.sum() > 100 and identical,
        "away-from-neck run reaches t_end": tr.stop_reason == "reached_t_end",
        "bounded sup chi^2|Rm|": math.isfinite(ext.sup) and ext.sup < 1e8 / waist(tr.initial.psi) ** 2,
        "chi = 1 over neck hits cap": over.stop_reason == "curvature_cap",
    }, f"{int(frozen.sum())} frozen nodes, sup {ext.sup:.3g}, cap at t = {over.t_stop:.5f}")


def test_criterion_09_evolution_residual(criterion):
    # dt stays a fixed fraction of the stability bound and the snapshot spacing shrinks with h
    sphere = [curvature_evolution_residual(uniform_snapshot_run(build_round_sphere(1.0, 3, M), 0.04, M // 5))
              .max_residual for M in (200, 400, 800)]
    lrf = []
    for M in (400, 800, 1600):
        p = build_dumbbell(0.3, 0.5, M=M)
        tr = uniform_snapshot_run(p, 0.01, M // 10, build_cutoff(p, 0.0, 0.5, 1.5))
        lrf.append(curvature_evolution_residual(tr).max_residual)
    o_s, o_l = observed_order(sphere), observed_order(lrf)
    criterion(9, "curvature evolution residual", {
        "sphere order >= 1.8": np.all(o_s >= 1.8),
        "local dumbbell order >= 1.8": np.all(o_l >= 1.8),
    }, f"sphere M=200..800 {np.round(o_s, 2).tolist()}, local dumbbell M=400..1600 {np.round(o_l, 2).tolist()}")


def test_criterion_10_tensor_lipschitz(criterion):
    rng = np.random.default_rng(RNG_SEED)
    sym = tri = ident = True
    for _ in range(1000):
        m = int(rng.integers(1, 5))
        a, b, c = (CoordinateMetricField(spd(rng, 6, m)) for _ in range(3))
        dab = tl_distance(a, b)
        sym &= abs(dab - tl_distance(b, a)) <= 1e-10 * max(1.0, dab)
        tri &= dab <= tl_distance(a, c) + tl_distance(c, b) + 1e-10
        ident &= dab >= 0 and tl_distance(a, a) <= 1e-12
    scale_err = 0.0
    for c in rng.uniform(-2, 2, size=1000):
        g = CoordinateMetricField(spd(rng, 6, 3))
        scale_err = max(scale_err, abs(tl_distance(g, CoordinateMetricField(math.exp(2 * c) * g.g)) - 2 * abs(c)))
    axes = (np.linspace(0, 1, 4), np.linspace(0, 1, 4))
    vol_ok = True
    for _ in range(1000):
        g1 = CoordinateMetricField(spd(rng, 16, 2).reshape(4, 4, 2, 2), axes)
        g2 = CoordinateMetricField(spd(rng, 16, 2).reshape(4, 4, 2, 2), axes)
        if rng.random() < 0.5:
            k = int(rng.integers(2, 10))
            pts = rng.uniform(0.05, 0.95, size=(k, 2))
            mesh = SimplexMesh(pts, np.stack([np.arange(k - 1), np.arange(1, k)], axis=1))
        else:
            pts = rng.uniform(0.05, 0.95, size=(3, 2))
            mesh = SimplexMesh(pts, np.array([[0, 1, 2]]))
        vol_ok &= volume_ratio_check(g1, g2, mesh).ok
    recon = max(matrix_closeness(spd(rng, 1, int(rng.integers(1, 6)))[0]).reconstruction_error
                for _ in range(200))
    p = build_dumbbell(0.3, 0.5, M=400)
    tr = run_flow(p, FlowConfig(mode="local_ricci", cutoff=build_cutoff(p, 0.0, 0.5, 1.5), t_end=0.005))
    iso = iso_ratio_check(tr.initial, tr.final)
    criterion(10, "tensor Lipschitz suite", {
        "symmetry": sym, "triangle inequality": tri, "identity and sign": ident,
        "conformal scaling to 1e-10": scale_err <= 1e-10,
        "volume ratio bound": vol_ok,
        "reconstruction to 1e-8": recon < 1e-8,
        "iso-ratio bound on flow pair": iso.ok and iso.delta > 0,
    }, f"scaling err {scale_err:.1e}, recon err {recon:.1e}, flow delta {iso.delta:.3g}")


def test_criterion_11_gronwall(criterion):
    rng = np.random.default_rng(RNG_SEED + 1)
    t = np.linspace(0.0, 2.0, 801)
    sound = True
    for _ in range(100):
        b, f0 = rng.uniform(0, 2, 2)
        amp, freq, phase = rng.uniform(0, 3), rng.uniform(0, 6), rng.uniform(0, 2 * math.pi)
        slack = rng.uniform(0, 1)
        g = lambda s: amp * (1 + np.sin(freq * s + phase)) + 0.05
        sol = solve_ivp(lambda s, y: [(1 - slack) * g(s) + b * y[0]], (0, 2), [f0], t_eval=t,
                        rtol=1e-11, atol=1e-12)
        sound &= gronwall_envelope(t, sol.y[0], g(t), b, rtol=1e-7).ok
    dom = True
    for a, b, y0 in rng.uniform(0, 2, size=(100, 3)):
        fit = integro_gronwall_fit(a, b, y0, T=3.0)
        tt, y = integro_ode_solution(a, b, y0, 3.0)
        dom &= fit.dominates and bool(np.all(y < fit.w * np.exp(fit.k * tt)))
    criterion(11, "Gronwall suite", {"envelope sound on 100 ODEs": sound, "integro envelope dominates": dom})


def test_criterion_12_energy_monitor(criterion, frozen_neck_run):
    p = build_dumbbell(0.3, 0.5, M=200)
    still = run_flow(p, FlowConfig(mode="local_ricci", cutoff=CutoffProfile.constant(p, 0.0), t_end=0.002))
    E = np.asarray(still.series["energy"])
    spread = float(np.max(np.abs(E - E[0])) / E[0])
    A0 = sobolev_from_iso(4, deane_iso_constant(4, 1.0, 0.0))
    rep = lrf_energy_monitor(frozen_neck_run, A0)
    direct = lp_norm(curvature_state(frozen_neck_run.initial).rm_norm, 2, frozen_neck_run.initial)
    criterion(12, "energy monitor", {
        "frozen energy constant to 1e-12": spread <= 1e-12,
        "log-energy slope finite": math.isfinite(rep.log_energy_slope),
        "gate bound 2/(d^2 A0^2)": rep.gate_bound == pytest.approx(2 / (16 * A0 * A0), rel=1e-15),
        "gate value matches |Rm|_2 at t=0": rep.gate_value == pytest.approx(direct, rel=1e-8),
        "gate decision consistent": rep.gate_ok == (rep.gate_value <= rep.gate_bound),
    }, f"spread {spread:.1e}, slope {rep.log_energy_slope:.3g}, gate {rep.gate_value:.3g} vs "
       f"{rep.gate_bound:.3g} -> {'small' if rep.gate_ok else 'not small'}")
