"""Standalone numeric certification of the closed-form identities and bounds.

Everything here is independent of the time steppers: each check plugs a
closed form into the equation or bound it is supposed to satisfy and
measures the residual.  Derivatives are taken with 7-point centered
stencils at a step near the 6th-order roundoff optimum eps^{1/7}, so the
residual of an exact identity sits at the differentiation noise floor.

Bound checks are slope tests: the envelope constants C are unspecified,
so the falsifiable content is that the normalized sup does not grow across
a decade sweep in s.  Growth (log-log slope above 0.05 on the late half of
the sweep, where transients have died out) falsifies the bound; decay only
means the envelope has slack.  The fitted constant is reported alongside.

Checks that sample randomly record their seed; rerunning with the same
seed reproduces every report bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from . import params as _params
from . import rhs as _rhs

# 6th-order centered first and second derivative stencils on 7 points
_D1_COEF = np.array([-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0]) / 60.0
_D2_COEF = np.array([2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0]) / 180.0
# roundoff-optimal step for a 6th-order formula
DIFF_STEP = float(np.finfo(float).eps ** (1.0 / 7.0))

SLOPE_TOL = 0.05


def stencil_d1(fn, z, h: float = DIFF_STEP):
    """6th-order first derivative of fn at the points z."""
    z = np.asarray(z, dtype=float)
    acc = np.zeros_like(z)
    for k, c in zip(range(-3, 4), _D1_COEF):
        if c != 0.0:
            acc = acc + c * fn(z + k * h)
    return acc / h


def stencil_d2(fn, z, h: float = DIFF_STEP):
    """6th-order second derivative of fn at the points z."""
    z = np.asarray(z, dtype=float)
    acc = np.zeros_like(z)
    for k, c in zip(range(-3, 4), _D2_COEF):
        acc = acc + c * fn(z + k * h)
    return acc / h**2


@dataclass
class CheckReport:
    """Outcome of one certification check.

    passed is determined solely by the check's stated tolerance; details
    carries named fitted constants and sub-residuals for the JSON report.
    """

    check_name: str
    samples: int
    worst_residual: float
    passed: bool
    fitted_constant: float | None = None
    seed: int | None = None
    notes: str = ""
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "name": self.check_name,
            "samples": self.samples,
            "worst_residual": self.worst_residual,
            "fitted_constant": self.fitted_constant,
            "pass": self.passed,
            "seed": self.seed,
            "notes": self.notes,
            "details": dict(self.details),
        }


def _default_z_samples():
    return np.linspace(0.1, 10.0, 397)


def _linear_operator(params: _params.Params, fn, z):
    """-(z/2) f' - f/(p-1) + p R10^{p-1} f with stencil derivatives."""
    p = params.p
    r10_pm1 = _params.outer_profile(params, "R10", z * z) ** (p - 1)
    return -0.5 * z * stencil_d1(fn, z) - fn(z) / (p - 1) + p * r10_pm1 * fn(z)


def _r22_source(params: _params.Params, z, analytic: bool = False):
    """R21'' + R21 + (z/2) R21' + p(p-1) R10^{p-2} R11 R21.

    The stencil route is the measurement; the analytic route (closed-form
    derivatives of R21) feeds the smooth ODE right-hand side for the
    integrator cross-check.
    """
    p = params.p
    b = params.b
    z = np.asarray(z, dtype=float)
    z2 = z * z
    r21 = _params.outer_profile(params, "R21", z2)
    r10 = _params.outer_profile(params, "R10", z2)
    r11 = _params.outer_profile(params, "R11", z2)
    if analytic:
        m = p / (p - 1.0)
        a = p - 1 + b * z2
        d1 = 2.0 * z * a**-m - 2.0 * m * b * z**3 * a ** (-m - 1)
        d2 = (
            2.0 * a**-m
            - 10.0 * m * b * z2 * a ** (-m - 1)
            + 4.0 * m * (m + 1) * b**2 * z2**2 * a ** (-m - 2)
        )
    else:
        fn = lambda zz: _params.outer_profile(params, "R21", zz * zz)
        d1 = stencil_d1(fn, z)
        d2 = stencil_d2(fn, z)
    return d2 + r21 + 0.5 * z * d1 + p * (p - 1) * r10 ** (p - 2) * r11 * r21


def _r22_basis_funcs(params: _params.Params):
    p = params.p
    b = params.b
    m = p / (p - 1.0)
    steep = (2.0 * p - 1) / (p - 1.0)

    def phi_alg(z):
        return z * z * (p - 1 + b * z * z) ** -steep

    def phi_log_slow(z):
        a = p - 1 + b * z * z
        return z * z * np.log(a) * a**-m

    def phi_log_steep(z):
        a = p - 1 + b * z * z
        return z * z * np.log(a) * a**-steep

    def base(z):
        return -2.0 * (p - 1 + b * z * z) ** -m

    return base, (phi_alg, phi_log_slow, phi_log_steep)


def fit_r22_constants(
    params: _params.Params, z_lo: float = 0.1, z_hi: float = 5.0, n_samples: int = 201
) -> tuple[_params.R22Constants, CheckReport]:
    """Determine the three correction coefficients of the R22 profile.

    The ODE residual is affine in the coefficients, so least squares over
    z samples pins them down (matching field values against a shooting
    solution instead would be ill-posed: the regular solutions form a
    one-parameter family and any shot picks an arbitrary member).  The
    fitted form is then certified against its ODE on a denser grid and
    cross-checked against an explicit high-order integration.
    """
    base, funcs = _r22_basis_funcs(params)
    z_fit = np.linspace(z_lo, z_hi, n_samples)
    design = np.column_stack([_linear_operator(params, f, z_fit) for f in funcs])
    target = -(_linear_operator(params, base, z_fit) + _r22_source(params, z_fit))
    coef, *_ = np.linalg.lstsq(design, target, rcond=None)
    constants = _params.R22Constants(
        c_alg=float(coef[0]), c_log_slow=float(coef[1]), c_log_steep=float(coef[2])
    )

    def certified(z):
        return _params.outer_profile(params, "R22", z * z, constants)

    z_dense = np.linspace(z_lo, z_hi, 601)
    residual = _linear_operator(params, certified, z_dense) + _r22_source(params, z_dense)
    worst = float(np.max(np.abs(residual)))

    # independent integration of the same ODE started on the fitted form
    p = params.p

    def ode(z, r):
        r10_pm1 = _params.outer_profile(params, "R10", z * z) ** (p - 1)
        src = _r22_source(params, np.array([z]), analytic=True)[0]
        return [(2.0 / z) * (-r[0] / (p - 1) + p * r10_pm1 * r[0] + src)]

    sol = solve_ivp(
        ode, (z_lo, z_hi), [float(certified(np.array([z_lo]))[0])],
        method="DOP853", rtol=1e-12, atol=1e-13, dense_output=True,
    )
    z_check = np.linspace(z_lo, z_hi, 101)
    ivp_dev = float(np.max(np.abs(sol.sol(z_check)[0] - certified(z_check))))

    passed = worst < 1e-6 and ivp_dev < 1e-6
    notes = (
        f"differentiation step {DIFF_STEP:.3e}; integrator deviation {ivp_dev:.3e}. "
        "The two fitted log coefficients differ, so a form using a single "
        "shared log constant cannot satisfy this equation."
    )
    if not passed:
        notes = "CERTIFICATION FAILED: fitted form does not satisfy its ODE. " + notes
    report = CheckReport(
        check_name=f"r22_fit_p{params.p}",
        samples=n_samples,
        worst_residual=worst,
        fitted_constant=constants.c_alg,
        passed=passed,
        notes=notes,
        details={
            "c_alg": constants.c_alg,
            "c_log_slow": constants.c_log_slow,
            "c_log_steep": constants.c_log_steep,
            "integrator_deviation": ivp_dev,
            "diff_step": DIFF_STEP,
        },
    )
    return constants, report


def selection_coefficient(p: int, b: float) -> float:
    """The 1/z coefficient -2b/(p-1) + 8 p b^2/(p-1)^3 of the reduced source."""
    return -2.0 * b / (p - 1) + 8.0 * p * b**2 / (p - 1) ** 3


def _log_term_coefficient(params: _params.Params, z) -> tuple[float, float]:
    """Fit (2H/z) F11 onto {1/z^3, 1/z, z/(p-1+b z^2)}.

    Returns the fitted 1/z coefficient and the fit residual.  A nonzero
    1/z part integrates to a ln z term, destroying analyticity at z=0.
    """
    p = params.p
    b = params.b
    z = np.asarray(z, dtype=float)
    z2 = z * z
    a = p - 1 + b * z2
    m = p / (p - 1.0)
    f11 = (
        -(2.0 * b / (p - 1)) * a**-m
        + (4.0 * p * b**2 * z2 / (p - 1) ** 2) * a ** (-(2.0 * p - 1) / (p - 1))
        - (b * z2 / (p - 1)) * a**-m
    )
    g = (2.0 * a**m / z**3) * f11
    design = np.column_stack([1.0 / z**3, 1.0 / z, z / a])
    coef, *_ = np.linalg.lstsq(design, g, rcond=None)
    resid = float(np.max(np.abs(design @ coef - g)))
    return float(coef[1]), resid


def check_outer_ode_residuals(
    params: _params.Params, z_samples=None
) -> list[CheckReport]:
    """Certify the four order-by-order profile equations.

    The first three closed forms are exact solutions, so their residuals
    must sit at the differentiation noise floor (< 1e-9).  The fourth is
    certified with fitted constants (< 1e-6).  A final report perturbs the
    curvature constant and verifies the log-term obstruction appears.
    """
    if z_samples is None:
        z_samples = _default_z_samples()
    z = np.asarray(z_samples, dtype=float)
    if np.any(z <= 0.0) or np.any(z > 10.0):
        raise ValueError("z_samples must lie in (0, 10]")
    pr = params
    p = pr.p
    reports = []

    f10 = lambda zz: _params.outer_profile(pr, "R10", zz * zz)
    f11 = lambda zz: _params.outer_profile(pr, "R11", zz * zz)
    f21 = lambda zz: _params.outer_profile(pr, "R21", zz * zz)

    res10 = -0.5 * z * stencil_d1(f10, z) - f10(z) / (p - 1) + f10(z) ** p
    worst10 = float(np.max(np.abs(res10)))
    reports.append(
        CheckReport(
            check_name=f"outer_ode_R10_p{p}", samples=len(z),
            worst_residual=worst10, passed=worst10 < 1e-9,
            notes=f"differentiation step {DIFF_STEP:.3e}",
        )
    )

    res11 = (
        _linear_operator(pr, f11, z)
        + stencil_d2(f10, z)
        + 0.5 * z * stencil_d1(f10, z)
    )
    worst11 = float(np.max(np.abs(res11)))
    reports.append(
        CheckReport(
            check_name=f"outer_ode_R11_p{p}", samples=len(z),
            worst_residual=worst11, passed=worst11 < 1e-9,
        )
    )

    res21 = _linear_operator(pr, f21, z)
    worst21 = float(np.max(np.abs(res21)))
    reports.append(
        CheckReport(
            check_name=f"outer_ode_R21_p{p}", samples=len(z),
            worst_residual=worst21, passed=worst21 < 1e-9,
        )
    )

    _, r22_report = fit_r22_constants(pr)
    reports.append(r22_report)

    # with the selected curvature constant the 1/z source component cancels;
    # at 1.1 b it reappears and would integrate to a non-analytic ln z term
    z_fit = z[z <= 5.0] if np.any(z <= 5.0) else z
    coeff_at_b, resid_b = _log_term_coefficient(pr, z_fit)
    perturbed = _params.Params(p=pr.p, n_dim=pr.n_dim, kappa=pr.kappa, b=1.1 * pr.b)
    coeff_pert, resid_pert = _log_term_coefficient(perturbed, z_fit)
    expected_pert = selection_coefficient(p, 1.1 * pr.b)
    ok = (
        abs(coeff_at_b) < 1e-10
        and abs(coeff_pert - expected_pert) < 1e-6
        and abs(coeff_pert) > 1e-3
        and max(resid_b, resid_pert) < 1e-9
    )
    reports.append(
        CheckReport(
            check_name=f"outer_log_term_obstruction_p{p}", samples=len(z_fit),
            worst_residual=max(resid_b, resid_pert),
            fitted_constant=coeff_pert, passed=ok,
            notes="fitted 1/z coefficient at the selected constant and at 1.1x",
            details={
                "coefficient_at_selected_b": coeff_at_b,
                "coefficient_at_perturbed_b": coeff_pert,
                "closed_form_at_perturbed_b": expected_pert,
            },
        )
    )
    return reports


def check_b_selection(params: _params.Params) -> CheckReport:
    """The curvature constant is the unique positive root of the 1/z coefficient."""
    p = params.p
    b_star = params.b
    at_star = selection_coefficient(p, b_star)
    lo = selection_coefficient(p, 0.9 * b_star)
    hi = selection_coefficient(p, 1.1 * b_star)
    passed = abs(at_star) < 1e-14 and abs(lo) > 1e-3 and abs(hi) > 1e-3
    return CheckReport(
        check_name=f"b_selection_p{p}", samples=3,
        worst_residual=abs(at_star), fitted_constant=b_star, passed=passed,
        details={"at_selected": at_star, "at_0.9x": lo, "at_1.1x": hi},
    )


def _richardson_limit(values):
    """Limit of a sequence sampled at scales r, r/2, r/4, ... with power-1 error."""
    tableau = [np.asarray(values, dtype=float)]
    fac = 2.0
    while len(tableau[-1]) > 1:
        prev = tableau[-1]
        tableau.append((fac * prev[1:] - prev[:-1]) / (fac - 1.0))
        fac *= 2.0
    return float(tableau[-1][0])


def check_barB_expansion(params: _params.Params) -> CheckReport:
    """Leading coefficients and remainder order of the flattened quadratic terms."""
    p = params.p
    kappa = params.kappa
    want1 = p / (2.0 * kappa)
    want2 = p / kappa

    scales = 1e-2 * 0.5 ** np.arange(6)
    seq1 = []
    seq2 = []
    for r in scales:
        b1, _ = _rhs.bar_b(params, np.array([r]), np.array([0.0]))
        seq1.append(b1[0] / r**2)
        b1c, b2c = _rhs.bar_b(params, np.array([r]), np.array([r]))
        seq2.append(b2c[0] / r**2)
    coeff1 = _richardson_limit(seq1)
    coeff2 = _richardson_limit(seq2)
    err1 = abs(coeff1 - want1)
    err2 = abs(coeff2 - want2)

    # remainder ratios on shrinking shells |w1bar| + |w2| = r
    theta = np.linspace(0.0, 2.0 * math.pi, 64, endpoint=False)
    ratio1_max = 0.0
    ratio2_max = 0.0
    for r in (1e-1, 1e-2, 1e-3, 1e-4):
        w1 = r * np.cos(theta)
        w2 = r * np.sin(theta)
        b1, b2 = _rhs.bar_b(params, w1, w2)
        rem1 = np.abs(b1 - want1 * w1**2)
        den1 = np.abs(w1) ** 3 + w2**2
        rem2 = np.abs(b2 - want2 * w1 * w2)
        den2 = w1**2 * np.abs(w2) + np.abs(w2) ** 3
        keep1 = den1 > 1e-300
        keep2 = den2 > 1e-300
        ratio1_max = max(ratio1_max, float(np.max(rem1[keep1] / den1[keep1])))
        ratio2_max = max(ratio2_max, float(np.max(rem2[keep2] / den2[keep2])))

    passed = err1 < 1e-6 and err2 < 1e-6 and math.isfinite(ratio1_max) and math.isfinite(ratio2_max)
    return CheckReport(
        check_name=f"barB_expansion_p{p}", samples=6 + 4 * len(theta),
        worst_residual=max(err1, err2), fitted_constant=coeff1, passed=passed,
        notes="Richardson-extrapolated leading coefficients; shell remainder ratios",
        details={
            "coefficient_1": coeff1, "target_1": want1,
            "coefficient_2": coeff2, "target_2": want2,
            "remainder_ratio_1": ratio1_max, "remainder_ratio_2": ratio2_max,
        },
    )


def _default_s_grid():
    return np.geomspace(10.0, 1e4, 13)


def _loglog_slope(s_vals, sups) -> float:
    """Log-log slope over the late half of the sweep, where transients are gone."""
    s_vals = np.asarray(s_vals, dtype=float)
    sups = np.asarray(sups, dtype=float)
    half = len(s_vals) // 2
    s_vals = s_vals[half:]
    sups = sups[half:]
    if np.all(sups < 1e-300):
        return 0.0
    design = np.column_stack([np.ones(len(s_vals)), np.log(s_vals)])
    coef, *_ = np.linalg.lstsq(design, np.log(np.maximum(sups, 1e-300)), rcond=None)
    return float(coef[1])


def _bounded_verdict(s_grid, sups) -> dict:
    """Boundedness verdict for a per-s normalized sup on a geometric s grid.

    A bounded envelope shows one of three signatures: a flat curve, a
    shrinking one, or saturation from below with geometrically decaying
    increments (then the limit is extrapolated and reported).  Logarithmic
    or power growth keeps its increments and fails.
    """
    sups = np.asarray(sups, dtype=float)
    slope = _loglog_slope(s_grid, sups)
    constant = float(np.max(sups))
    verdict = {"constant": constant, "slope": slope, "bounded": True}
    if slope < SLOPE_TOL:
        return verdict
    half = len(sups) // 2
    late = sups[half:]
    floor = 1e-3 * late[-1]
    deltas = np.diff(late)
    if np.all(deltas <= floor):
        return verdict
    d_prev, d_last = deltas[-2], deltas[-1]
    if d_prev > floor and d_last > floor and d_last / d_prev <= 0.8:
        ratio = d_last / d_prev
        verdict["constant"] = float(late[-1] + d_last * ratio / (1.0 - ratio))
        return verdict
    verdict["bounded"] = False
    return verdict


def _sweep_bound(s_grid, sup_fn) -> dict:
    return _bounded_verdict(s_grid, [sup_fn(s) for s in s_grid])


def check_potential_bounds(
    params: _params.Params, s_grid=None, K: float = 5.0
) -> CheckReport:
    """Slope-stability of the stated envelope bounds for the linearization potentials."""
    if s_grid is None:
        s_grid = _default_s_grid()
    s_grid = np.asarray(s_grid, dtype=float)
    if np.any(s_grid < 10.0) or np.any(s_grid > 1e4):
        raise ValueError("s_grid must lie in [10, 1e4]")
    n = params.n_dim

    def radial(s, factor=20.0):
        r = np.linspace(0.0, factor * math.sqrt(s), 2001)
        return r, r * r

    bounds = {}

    def v_global(s):
        _, r2 = radial(s)
        return np.max(np.abs(_rhs.potential_v(params, r2, s)))

    def v_quad(s):
        r, r2 = radial(s)
        return np.max(np.abs(_rhs.potential_v(params, r2, s)) * s / (1.0 + r2))

    def v_tilde(s):
        r = np.linspace(0.0, 2.0 * K * math.sqrt(s), 2001)
        r2 = r * r
        tilde = _rhs.potential_v(params, r2, s) + (r2 - 2.0 * n) / (4.0 * s)
        return np.max(np.abs(tilde) * s**2 / (1.0 + r2**2))

    def vjk(s, pick, weight_pow, s_pow):
        r, r2 = radial(s)
        v11, v12, v21, v22 = _rhs.potentials_vjk(params, r2, s)
        tot = np.abs(pick((v11, v12, v21, v22), 0)) + np.abs(pick((v11, v12, v21, v22), 1))
        w = 1.0 if weight_pow == 0 else (1.0 + r2 ** (weight_pow // 2))
        return np.max(tot * s**s_pow / w)

    diag = lambda vs, i: vs[0] if i == 0 else vs[3]
    off = lambda vs, i: vs[1] if i == 0 else vs[2]

    bounds["V_global"] = _sweep_bound(s_grid, v_global)
    bounds["V_quadratic_over_s"] = _sweep_bound(s_grid, v_quad)
    bounds["V_tilde"] = _sweep_bound(s_grid, v_tilde)
    bounds["Vdiag_sup_s2"] = _sweep_bound(s_grid, lambda s: vjk(s, diag, 0, 2.0))
    bounds["Voff_sup_s"] = _sweep_bound(s_grid, lambda s: vjk(s, off, 0, 1.0))
    bounds["Vdiag_weighted_s4"] = _sweep_bound(s_grid, lambda s: vjk(s, diag, 4, 4.0))
    bounds["Voff_weighted_s2"] = _sweep_bound(s_grid, lambda s: vjk(s, off, 2, 2.0))

    s_top = float(s_grid[-1])
    origin = float(_rhs.potential_v(params, np.array([0.0]), s_top)[0] * s_top)
    origin_err = abs(origin - 0.5 * n) / (0.5 * n)

    worst_slope = max(v["slope"] for v in bounds.values())
    passed = all(v["bounded"] for v in bounds.values()) and origin_err < 0.01
    return CheckReport(
        check_name=f"potential_bounds_p{params.p}_n{n}", samples=len(s_grid) * 2001,
        worst_residual=max(0.0, worst_slope),
        fitted_constant=bounds["V_tilde"]["constant"], passed=passed,
        notes="residual column is the most-growing late-half slope across bounds",
        details={
            **bounds,
            "V_origin_times_s": origin,
            "V_origin_target": 0.5 * n,
        },
    )


def check_quadratic_bounds(params: _params.Params, seed: int = 0) -> CheckReport:
    """Ratio-boundedness of the nonlinear remainder against its stated envelope."""
    p = params.p
    rng = np.random.default_rng([seed, params.p, params.n_dim, 3])
    s_grid = _default_s_grid()
    ratio1 = []
    ratio2 = []
    c_q1q2 = 0.0
    for s in s_grid:
        r = np.linspace(0.0, 10.0 * math.sqrt(s), 301)
        r2 = r * r
        # floor the small-deviation scale: the remainder is a difference of
        # order-one quantities, so probing below ~1e-5 measures roundoff
        for scale in (1.0, max(math.log(s) / s**2, 1e-5)):
            q1 = scale * rng.uniform(-1.0, 1.0, size=r2.shape)
            q2 = scale * rng.uniform(-1.0, 1.0, size=r2.shape)
            b1, b2 = _rhs.quadratic_b(params, q1, q2, r2, s)
            den1 = q1**2 + q2**2
            den2 = q1**2 / s + np.abs(q1 * q2) + q2**2
            keep = den1 > 1e-300
            ratio1.append(np.max(np.abs(b1[keep]) / den1[keep]))
            ratio2.append(np.max(np.abs(b2[keep]) / den2[keep]))
            if scale == 1.0:
                prod = np.abs(q1 * q2)
                keep2 = prod > 1e-3
                if np.any(keep2):
                    c_q1q2 = max(c_q1q2, float(np.max(np.abs(b2[keep2]) / prod[keep2])))
    per_s1 = np.array(ratio1).reshape(len(s_grid), 2).max(axis=1)
    per_s2 = np.array(ratio2).reshape(len(s_grid), 2).max(axis=1)
    v1 = _bounded_verdict(s_grid, per_s1)
    v2 = _bounded_verdict(s_grid, per_s2)
    worst_slope = max(v1["slope"], v2["slope"])
    passed = (
        v1["bounded"] and v2["bounded"]
        and np.all(np.isfinite(per_s1)) and np.all(np.isfinite(per_s2))
    )
    return CheckReport(
        check_name=f"quadratic_bounds_p{p}_n{params.n_dim}",
        samples=2 * len(s_grid) * 301,
        worst_residual=max(0.0, worst_slope),
        fitted_constant=v1["constant"],
        passed=bool(passed),
        seed=seed,
        notes="uniform and envelope-scaled deviations; ratios against the stated bounds",
        details={"B1": v1, "B2": v2, "C_q1q2_product": c_q1q2},
    )


def check_rest_bounds(
    params: _params.Params, s_grid=None, K: float = 5.0
) -> CheckReport:
    """Origin constants and envelope slope-stability of the profile residual."""
    if s_grid is None:
        s_grid = _default_s_grid()
    s_grid = np.asarray(s_grid, dtype=float)
    if np.any(s_grid < 10.0) or np.any(s_grid > 1e4):
        raise ValueError("s_grid must lie in [10, 1e4]")
    p = params.p
    n = params.n_dim
    kappa = params.kappa
    c1 = n * (n + 4) * kappa / (8.0 * p)
    c2 = -n * (n + 4) * kappa / (p - 1.0)

    # fitted origin constants from the scaling of R(0, s)
    r1_origin = np.array([_rhs.rest_r(params, np.array([0.0]), s)[0][0] for s in s_grid])
    r2_origin = np.array([_rhs.rest_r(params, np.array([0.0]), s)[1][0] for s in s_grid])
    design = np.column_stack([np.ones(len(s_grid)), 1.0 / s_grid])
    c1_fit = float(np.linalg.lstsq(design, r1_origin * s_grid**2, rcond=None)[0][0])
    c2_fit = float(np.linalg.lstsq(design, r2_origin * s_grid**3, rcond=None)[0][0])
    c2_err = abs(c2_fit - c2) / abs(c2)

    def tilde_sup(s, which, weight_pow, s_pow, c_lead, lead_pow):
        r = np.linspace(0.0, 2.0 * K * math.sqrt(s), 2001)
        r2 = r * r
        rest = _rhs.rest_r(params, r2, s)[which]
        tilde = rest - c_lead / s**lead_pow
        return np.max(np.abs(tilde) * s**s_pow / (1.0 + r2 ** (weight_pow // 2)))

    def sup_norm(s, which, s_pow):
        r = np.linspace(0.0, 20.0 * math.sqrt(s), 2001)
        rest = _rhs.rest_r(params, r * r, s)[which]
        return np.max(np.abs(rest)) * s**s_pow

    # the subtracted remainder comes out of cancelling order-one terms, so
    # past s ~ 3e3 the s^3-amplified roundoff floor overtakes it; its sweep
    # stops there while the leading-order fits use the full range
    s_tilde = s_grid[s_grid <= 3e3]
    if len(s_tilde) < 4:
        s_tilde = np.geomspace(s_grid[0], min(3e3, s_grid[-1]), 9)
    bounds = {
        "R1_tilde": _sweep_bound(s_tilde, lambda s: tilde_sup(s, 0, 4, 3.0, c1, 2.0)),
        "R2_tilde": _sweep_bound(s_tilde, lambda s: tilde_sup(s, 1, 6, 4.0, c2, 3.0)),
        "R1_sup": _sweep_bound(s_grid, lambda s: sup_norm(s, 0, 1.0)),
        "R2_sup": _sweep_bound(s_grid, lambda s: sup_norm(s, 1, 2.0)),
    }
    worst_slope = max(v["slope"] for v in bounds.values())
    passed = all(v["bounded"] for v in bounds.values()) and c2_err < 0.01
    return CheckReport(
        check_name=f"rest_bounds_p{p}_n{n}", samples=len(s_grid) * 2001,
        worst_residual=max(0.0, worst_slope),
        fitted_constant=c2_fit, passed=bool(passed),
        notes="residual column is the most-growing late-half slope across bounds",
        details={
            **bounds,
            "c1_fit": c1_fit, "c1_closed_form": c1,
            "c2_fit": c2_fit, "c2_closed_form": c2, "c2_rel_err": c2_err,
        },
    )


def check_complex_identity(p: int, sample_count: int = 10_000, seed: int = 0) -> CheckReport:
    """The split nonlinearity agrees with iterated complex multiplication."""
    if p > _params.MAX_P:
        raise ValueError(f"p must be <= {_params.MAX_P}, got {p}")
    rng = np.random.default_rng([seed, p, 7])
    u1 = rng.uniform(-2.0, 2.0, size=sample_count)
    u2 = rng.uniform(-2.0, 2.0, size=sample_count)
    f1, f2 = _rhs.f1f2(u1, u2, p)
    ref = (u1 + 1j * u2) ** p
    scale = np.maximum(np.abs(ref), 1e-300)
    err = np.maximum(np.abs(f1 - ref.real), np.abs(f2 - ref.imag)) / scale
    worst = float(np.max(err))
    return CheckReport(
        check_name=f"complex_identity_p{p}", samples=sample_count,
        worst_residual=worst, passed=worst < 1e-12, seed=seed,
    )


def run_all(ps=(2, 3, 4), ns=(1, 2), seed: int = 0) -> dict:
    """Full certification battery; deterministic given the seed."""
    reports: list[CheckReport] = []
    for p in ps:
        pr = _params.make_params(p, 1)
        reports.extend(check_outer_ode_residuals(pr))
        reports.append(check_b_selection(pr))
        reports.append(check_barB_expansion(pr))
        reports.append(check_complex_identity(p, seed=seed))
        for n in ns:
            prn = _params.make_params(p, n)
            reports.append(check_potential_bounds(prn))
            reports.append(check_quadratic_bounds(prn, seed=seed))
            reports.append(check_rest_bounds(prn))
    all_pass = all(r.passed for r in reports)
    return {
        "seed": seed,
        "all_pass": bool(all_pass),
        "reports": [r.as_dict() for r in reports],
    }
