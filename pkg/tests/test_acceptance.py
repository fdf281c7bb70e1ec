"""Acceptance battery: end-to-end quantitative checks of the whole package.

Each test prints one indexed PASS/FAIL line (visible with pytest -s, or in
the captured output of a failing run) and then asserts the same condition.
Two long runs are shared session fixtures: a pinned similarity-variable
run to s = 60 on a desk-scale grid, and a physical-frame blow-up run with
blow-up time near e^{-25}.  Everything here is deterministic.
"""

import json
import math
import time

import numpy as np
import pytest

from blowlab import cli
from blowlab import diagnostics as diag
from blowlab import params as bp
from blowlab import rhs
from blowlab import solver
from blowlab import spectral as sp
from blowlab import verifier


def _report(index, label, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"[{index}/9] {label}: {status}{suffix}")


def _late_loglog_slope(s, vals, s_min):
    s = np.asarray(s, dtype=float)
    vals = np.abs(np.asarray(vals, dtype=float))
    keep = (s >= s_min) & (vals > 0)
    design = np.column_stack([np.ones(keep.sum()), np.log(s[keep])])
    coef, *_ = np.linalg.lstsq(design, np.log(vals[keep]), rcond=None)
    return float(coef[1])


@pytest.fixture(scope="session")
def desk_run():
    """Pinned p=2, n=1 run from s0=25 to s=60 with zero direction data."""
    t0 = time.perf_counter()
    pr = bp.make_params(2, 1)
    K = 5.0
    grid = sp.Grid(1, 2.0 * K * math.sqrt(60.0) + 10.0, 4097)
    cut = rhs.CutoffSpec(K=K)
    idp = rhs.InitialDataParams(A=10.0, s0=25.0, p1=0.5, n_dim=1)
    state = solver.similarity_initial_state(pr, idp, cut, grid)
    ssp = diag.ShrinkingSetParams(A=10.0, p1=0.5, K=K)
    cfg = solver.SolverConfig(
        ds=5e-3, s_end=60.0, scheme="semi-implicit",
        record_every=20, pin_unstable_modes=True, cutoff=cut,
    )
    traj = solver.evolve(state, cfg, pr, ssp=ssp)
    runtime = time.perf_counter() - t0
    return pr, ssp, traj, runtime


@pytest.fixture(scope="session")
def physical_run():
    """Physical-frame blow-up from profile-shaped data, T = e^{-25}, 1D."""
    t0 = time.perf_counter()
    pr = bp.make_params(2, 1)
    cut = rhs.CutoffSpec(K=5.0)
    idp = rhs.InitialDataParams(A=10.0, s0=25.0, p1=0.5, n_dim=1)
    grid_x = sp.Grid(1, 9e-5, 7201)
    u0 = solver.physical_initial_from_similarity(pr, idp, cut, grid_x)
    log_radii = (10.5, 11.0, 11.5)
    probes = np.exp(-np.array(log_radii))
    ptraj, t_est = solver.run_physical_blowup(
        u0, pr, eta=2.5e-4, probes=probes, raise_on_stall=False,
    )
    runtime = time.perf_counter() - t0
    return pr, ptraj, t_est, log_radii, probes, runtime


def test_1_certification_battery():
    t0 = time.perf_counter()
    payload = verifier.run_all(ps=(2, 3, 4), ns=(1, 2), seed=0)
    runtime = time.perf_counter() - t0
    by_name = {r["name"]: r for r in payload["reports"]}

    ok = payload["all_pass"] and runtime < 60.0
    worst_lines = []
    for p in (2, 3, 4):
        ok &= by_name[f"b_selection_p{p}"]["worst_residual"] <= 1e-14
        ok &= by_name[f"complex_identity_p{p}"]["worst_residual"] < 1e-12
        ok &= by_name[f"outer_ode_R10_p{p}"]["worst_residual"] < 1e-9
        ok &= by_name[f"outer_ode_R21_p{p}"]["worst_residual"] < 1e-9
        bar = by_name[f"barB_expansion_p{p}"]["details"]
        ok &= abs(bar["coefficient_1"] - bar["target_1"]) <= 1e-6
        ok &= abs(bar["coefficient_2"] - bar["target_2"]) <= 1e-6
        for n in (1, 2):
            rest = by_name[f"rest_bounds_p{p}_n{n}"]["details"]
            ok &= rest["c2_rel_err"] < 0.01
            want = -n * (n + 4) * bp.make_params(p, n).kappa / (p - 1)
            ok &= rest["c2_closed_form"] == pytest.approx(want, rel=1e-12)
    worst_lines.append(f"runtime {runtime:.1f}s")
    _report(1, "certification battery", ok, "; ".join(worst_lines))

    assert payload["all_pass"] is True
    for p in (2, 3, 4):
        assert by_name[f"b_selection_p{p}"]["worst_residual"] <= 1e-14
        assert by_name[f"complex_identity_p{p}"]["worst_residual"] < 1e-12
        assert by_name[f"outer_ode_R10_p{p}"]["worst_residual"] < 1e-9
        assert by_name[f"outer_ode_R21_p{p}"]["worst_residual"] < 1e-9
        bar = by_name[f"barB_expansion_p{p}"]["details"]
        kappa = bp.make_params(p, 1).kappa
        assert bar["target_1"] == pytest.approx(p / (2.0 * kappa), rel=1e-12)
        assert bar["target_2"] == pytest.approx(p / kappa, rel=1e-12)
        assert abs(bar["coefficient_1"] - bar["target_1"]) <= 1e-6
        assert abs(bar["coefficient_2"] - bar["target_2"]) <= 1e-6
        for n in (1, 2):
            rest = by_name[f"rest_bounds_p{p}_n{n}"]["details"]
            want = -n * (n + 4) * bp.make_params(p, n).kappa / (p - 1)
            assert rest["c2_closed_form"] == pytest.approx(want, rel=1e-12)
            assert rest["c2_rel_err"] < 0.01
    assert runtime < 60.0


def test_2_spectral_suite():
    t0 = time.perf_counter()
    grid = sp.Grid(1, 16.0, 1025)
    ax = grid.axis()
    rho = sp.weight_rho(grid.radius2(), 1)

    worst_orth = 0.0
    for i in range(11):
        hi = sp.hermite(i, ax)
        norm_i = float(math.factorial(i) * 2 ** i)
        assert sp.norm_h_beta_sq((i,)) == norm_i
        for j in range(11):
            hj = sp.hermite(j, ax)
            raw = sp.integrate(grid, hi * hj * rho)
            want = norm_i if i == j else 0.0
            worst_orth = max(worst_orth, abs(raw - want) / norm_i)

    worst_eig = 0.0
    interior = np.abs(ax) <= grid.half_width / 2
    for m in range(7):
        vals = sp.hermite(m, ax)
        lam = 1.0 - m / 2.0
        out = sp.apply_L(sp.Field(grid, vals)).values
        err = np.max(np.abs(out[interior] - lam * vals[interior]))
        worst_eig = max(worst_eig, err / np.max(np.abs(vals[interior])))
    runtime = time.perf_counter() - t0

    ok = worst_orth < 1e-7 and worst_eig < 10.0 * grid.h ** 2 and runtime < 30.0
    _report(2, "spectral suite", ok,
            f"orthogonality {worst_orth:.2e}, eigen {worst_eig:.2e}, "
            f"runtime {runtime:.1f}s")
    assert worst_orth < 1e-7
    assert worst_eig < 10.0 * grid.h ** 2
    assert runtime < 30.0


def test_3_solver_oracles():
    # constant data u0 = 1 for p = 2 blows up at exactly T = 1
    pr = bp.make_params(2, 1)
    grid = sp.Grid(1, 8.0, 33)
    st = solver.PhysicalState(
        t=0.0, u1=sp.Field(grid, np.ones(grid.shape)),
        u2=sp.Field(grid, np.zeros(grid.shape)),
    )
    _, t_est = solver.run_physical_blowup(st, pr)
    t_err = abs(t_est - 1.0)

    # every rotation of the constant kappa is a similarity fixed point
    worst_step = 0.0
    for p in (2, 3):
        prp = bp.make_params(p, 1)
        cfg = solver.SolverConfig(ds=0.01, s_end=11.0, boundary="extrapolate")
        for k in range(p - 1):
            theta = 2.0 * math.pi * k / (p - 1)
            st0 = solver.SimilarityState(
                s=10.0,
                w1=sp.Field(grid, np.full(grid.shape, prp.kappa * math.cos(theta))),
                w2=sp.Field(grid, np.full(grid.shape, prp.kappa * math.sin(theta))),
            )
            st1 = solver.step_similarity(st0, cfg, prp)
            worst_step = max(
                worst_step,
                float(np.max(np.abs(st1.w1.values - st0.w1.values))),
                float(np.max(np.abs(st1.w2.values - st0.w2.values))),
            )

    ok = t_err < 1e-3 and worst_step < 1e-12
    _report(3, "solver oracles", ok,
            f"|T-1| {t_err:.2e}, fixed-point step {worst_step:.2e}")
    assert t_err < 1e-3
    assert worst_step < 1e-12


def test_4_profile_convergence(desk_run):
    _, _, traj, runtime = desk_run
    s = traj.s_values
    e1 = np.array([r.e1 for r in traj.records])
    e2 = np.array([r.e2 for r in traj.records])
    late = s >= 35.0
    band1 = e1[late] * np.sqrt(s[late])
    band2 = e2[late] * s[late] ** 0.25
    ratio1 = float(band1.max() / band1.min())
    ratio2 = float(band2.max() / band2.min())

    ok = ratio1 < 2.0 and ratio2 < 3.0 and runtime < 600.0
    _report(4, "profile convergence orders", ok,
            f"e1*sqrt(s) band {ratio1:.2f}x, e2*s^(1/4) band {ratio2:.2f}x, "
            f"runtime {runtime:.0f}s")
    assert ratio1 < 2.0
    assert ratio2 < 3.0
    assert runtime < 600.0


def test_5_inner_expansion_fits(desk_run):
    pr, _, traj, _ = desk_run
    fit = diag.inner_fit(traj, pr)

    final = float(fit.s_w1bar_h2[-1])
    rel = abs(final - fit.target_w1bar) / abs(fit.target_w1bar)
    mean_steps = np.abs(np.diff(fit.window_means_w1bar))
    drift_shrinks = bool(np.all(np.diff(mean_steps) < 0))
    w2h2_final = float(fit.s2_w2_h2[-1])
    w2h0_max = float(np.max(np.abs(fit.s3_w2_h0)))
    w2h0_slope = _late_loglog_slope(fit.s, fit.s3_w2_h0, 35.0)

    ok = (rel <= 0.20 and drift_shrinks
          and abs(w2h2_final) > 0.1 and fit.drift_w2h2 < 0.10
          and w2h0_max < 10.0 and w2h0_slope < 0.1)
    _report(5, "inner expansion fits", ok,
            f"s*w1bar {final:.4f} vs {fit.target_w1bar} ({100 * rel:.2f}%), "
            f"s^2*w2_h2 {w2h2_final:.3f} drift {fit.drift_w2h2:.3f}, "
            f"s^3*w2_h0 max {w2h0_max:.2f}")
    assert fit.target_w1bar == pytest.approx(-0.125)
    assert rel <= 0.20
    assert drift_shrinks
    assert abs(w2h2_final) > 0.1
    assert fit.drift_w2h2 < 0.10
    assert w2h0_max < 10.0
    assert w2h0_slope < 0.1


def test_6_mode_ode_residuals(desk_run):
    pr, ssp, traj, _ = desk_run
    res = diag.mode_ode_residuals(traj, ssp, pr)

    details = []
    ok = True
    for key in ("q1_0", "q1_j", "q1_jk"):
        series = np.abs(np.asarray(res.residuals[key]))
        peak = float(series.max())
        if peak < 1e-8:
            # the mode carries no signal above roundoff on symmetric data,
            # so its evolution law holds identically
            details.append(f"{key} at roundoff ({peak:.1e})")
            continue
        slope = _late_loglog_slope(res.s, series, 30.0)
        details.append(f"{key} slope {slope:+.3f}")
        ok &= slope < 0.1

    _report(6, "mode evolution residual flatness", ok, ", ".join(details))
    for key in ("q1_0", "q1_j", "q1_jk"):
        series = np.abs(np.asarray(res.residuals[key]))
        if float(series.max()) < 1e-8:
            continue
        assert _late_loglog_slope(res.s, series, 30.0) < 0.1


def test_7_shrinking_set_containment(desk_run):
    _, ssp, traj, _ = desk_run
    margins = []
    inside = []
    for r in traj.records:
        rep = diag.in_shrinking_set(r.d1, r.d2, ssp, r.s)
        margins.append(min(rep.margins.values()))
        inside.append(rep.inside)
    min_margin = float(min(margins))

    ok = all(inside) and min_margin > 0.0
    _report(7, "shrinking-set containment", ok,
            f"min margin {min_margin:.4f} over {len(margins)} records")
    assert all(inside)
    assert min_margin > 0.0


def test_8_final_profile(physical_run):
    pr, ptraj, t_est, log_radii, probes, runtime = physical_run

    details = [f"T {t_est:.3e} (target {math.exp(-25.0):.3e})"]
    ok = runtime < 900.0
    ratios = []
    for lr, x in zip(log_radii, probes):
        pred = ((pr.p - 1) ** 2 * x * x
                / (8.0 * pr.p * lr)) ** (-1.0 / (pr.p - 1))
        u1s, u2s = diag.extract_final_profile(ptraj, float(x))
        r1 = u1s / pred
        r2 = u2s * lr / u1s
        ratios.append((lr, r1, r2))
        details.append(f"|ln x|={lr}: u*/pred {r1:.3f}, u2*|ln x|/u* {r2:.3f}")
        ok &= 0.85 <= r1 <= 1.15
        ok &= 3.4 <= r2 <= 4.6

    _report(8, "final profile asymptotics", ok, "; ".join(details))
    for lr, r1, r2 in ratios:
        assert 0.85 <= r1 <= 1.15, f"u*/prediction at |ln x|={lr}: {r1}"
        assert 3.4 <= r2 <= 4.6, f"u2 ratio at |ln x|={lr}: {r2}"
    assert runtime < 900.0


def test_9_determinism(tmp_path):
    raw = {
        "mode": "simulate-similarity",
        "params": {"p": 2, "n_dim": 1},
        "grid": {"L": 24.0, "N": 257},
        "solver": {"ds": 5.0e-3, "s0": 25.0, "s_end": 26.0, "record_every": 10},
        "shrinking_set": {"A": 10.0, "p1": 0.5, "K": 2.0},
        "initial_data": {"d1": 0.0, "d2": 0.0},
        "seed": 0,
        "output_dir": str(tmp_path / "run"),
    }
    config = cli.config_from_dict(raw)
    names = ("run_header.json", "fits.json", "trajectory.csv")
    assert cli.run(config) == 0
    first = {n: (tmp_path / "run" / n).read_bytes() for n in names}
    assert cli.run(config) == 0
    second = {n: (tmp_path / "run" / n).read_bytes() for n in names}

    battery_a = json.dumps(verifier.run_all(ps=(2,), ns=(1,), seed=0), sort_keys=True)
    battery_b = json.dumps(verifier.run_all(ps=(2,), ns=(1,), seed=0), sort_keys=True)

    ok = first == second and battery_a == battery_b
    _report(9, "byte-identical reruns", ok,
            f"{len(names)} artifacts + certification report")
    assert first == second
    assert battery_a == battery_b
