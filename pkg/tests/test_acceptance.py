"""Acceptance criteria. Each test prints one PASS/FAIL line with its numbers."""

import math
import time

import numpy as np
import pytest

from finslerlab import bounds as B
from finslerlab import calculus as C
from finslerlab import domain as D
from finslerlab import spectral as S
from finslerlab import volume as V
from oracles import trig_subspace_lambda

PI = math.pi

# pinned tolerances and budgets
CIRCLE_RTOL, CIRCLE_BUDGET = 0.005, 5.0
SPHERE_RTOL, SPHERE_BUDGET = 0.02, 60.0
RANDERS_ORACLE_RTOL, RANDERS_BUDGET = 0.01, 120.0
BOUND_SLACK = 0.02
S_ZERO = 1e-9
RIC_TOL = 1e-6
BOCHNER_MAX, BOCHNER_RATIO, BOCHNER_SLACK = 1e-4, 3.0, -1e-6
TRACE_ORDER = 1.8
PSI_QUAD_TOL, PSI_BUDGET = 1e-8, 1.0
VOLUME_RTOL, VOLUME_BUDGET = 0.02, 30.0


def _line(capsys, num, title, ok, detail):
    with capsys.disabled():
        print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num}: {title}: {detail}")


def test_circle_equality(capsys):
    t0 = time.perf_counter()
    m = D.build_mesh(D.circle(), 512)
    vol = V.riemannian()
    scan = B.curvature_scan(m.spec.metric, vol, m, 8, N_list=[math.inf])
    d = D.diameter(m)
    lam = S.first_eigenpair(m.spec.metric, m, vol).lambda1
    rep = B.theorem_bounds(scan, d, 1, lam)
    dt = time.perf_counter() - t0
    bound = rep.bound_values["ric_inf_diameter"]
    ok = (abs(lam - 1) <= CIRCLE_RTOL and abs(bound - 1) <= 0.01
          and rep.verdicts["ric_inf_diameter"] == "satisfied-at-equality" and dt < CIRCLE_BUDGET)
    _line(capsys, 1, "circle", ok, f"lambda1={lam:.6f} bound={bound:.6f} "
          f"verdict={rep.verdicts['ric_inf_diameter']} time={dt:.2f}s (<{CIRCLE_BUDGET:g}s)")
    assert ok


def test_sphere_equality(capsys):
    t0 = time.perf_counter()
    m = D.build_mesh(D.sphere(), 4)
    vol = V.riemannian()
    scan = B.curvature_scan(m.spec.metric, vol, m, 32)
    d = D.diameter(D.build_mesh(D.sphere(), 3))
    lam = S.first_eigenpair(m.spec.metric, m, vol).lambda1
    rep = B.theorem_bounds(scan, d, 2, lam)
    dt = time.perf_counter() - t0
    bound = rep.bound_values.get("s_zero_ric_positive")
    ok = (abs(scan.inf_ric - 1) <= RIC_TOL and scan.s_identically_zero and scan.sup_abs_s <= S_ZERO
          and bound is not None and abs(bound - 2) <= 2 * RIC_TOL
          and abs(lam - 2) <= SPHERE_RTOL * 2 and dt < SPHERE_BUDGET)
    _line(capsys, 2, "round sphere", ok, f"inf Ric={scan.inf_ric:.8f} sup|S|={scan.sup_abs_s:.2e} "
          f"bound={bound} lambda1={lam:.5f} time={dt:.1f}s (<{SPHERE_BUDGET:g}s)")
    assert ok


def test_randers_torus(capsys, randers03):
    t0 = time.perf_counter()
    m = D.build_mesh(D.flat_torus(metric=randers03), 64)
    vol = V.busemann_hausdorff()
    scan = B.curvature_scan(randers03, vol, m, 32, N_list=[math.inf])
    d = D.diameter(m)
    lam = S.first_eigenpair(randers03, m, vol).lambda1
    rep = B.theorem_bounds(scan, d, 2, lam)
    oracle = trig_subspace_lambda([0.3, 0.0], n_modes=200)
    dt = time.perf_counter() - t0
    bound = rep.bound_values.get("ric_inf_diameter")
    flag0 = max(abs(scan.inf_flag), abs(scan.sup_flag)) <= RIC_TOL
    ok = (flag0 and scan.sup_abs_s < S_ZERO and abs(scan.inf_ric_inf) <= RIC_TOL
          and bound is not None and lam >= bound * (1 - BOUND_SLACK)
          and abs(lam - oracle) <= RANDERS_ORACLE_RTOL * oracle and dt < RANDERS_BUDGET)
    _line(capsys, 3, "randers torus", ok, f"flag in [{scan.inf_flag:.1e}, {scan.sup_flag:.1e}] "
          f"sup|S|={scan.sup_abs_s:.1e} Ric_inf={scan.inf_ric_inf:.1e} d={d:.5f} lambda1={lam:.6f} "
          f"pi^2/d^2={bound:.6f} subspace={oracle:.6f} time={dt:.1f}s (<{RANDERS_BUDGET:g}s)")
    assert ok


def test_bochner_identity(capsys):
    res, slack = [], {}
    for r in (32, 64, 128):
        m = D.build_mesh(D.flat_torus(), r)
        b = C.bochner_residual(m.spec.metric, m, V.lebesgue(), np.sin(m.vertices[:, 0]), N=[2, 3, math.inf])
        res.append(b.max_residual())
        slack = {N: b.min_slack(N) for N in (2, 3, math.inf)}
    ratios = [res[0] / res[1], res[1] / res[2]]
    ok = res[2] <= BOCHNER_MAX and min(ratios) >= BOCHNER_RATIO and min(slack.values()) >= BOCHNER_SLACK
    _line(capsys, 4, "bochner identity", ok, f"residuals={[f'{v:.2e}' for v in res]} "
          f"ratios={[f'{v:.1f}' for v in ratios]} min slack N=2,3,inf: "
          f"{[f'{v:.2e}' for v in slack.values()]}")
    assert ok


def test_trace_identity(capsys):
    vol = V.explicit(lambda x: -0.5 * x[0] ** 2)
    errs, hs = [], []
    for r in (64, 128):
        m = D.build_mesh(D.flat_torus(), r)
        x = m.vertices[:, 0]
        resid = C.trace_identity_residual(m.spec.metric, m, vol, np.sin(x))
        # the weight is not periodic in x1; measure away from its seam
        errs.append(float(np.nanmax(resid[(x > 1) & (x < 5)])))
        hs.append(m.h)
    order = math.log(errs[0] / errs[1]) / math.log(hs[0] / hs[1])
    ok = order >= TRACE_ORDER
    _line(capsys, 5, "trace identity", ok, f"residuals={[f'{v:.2e}' for v in errs]} order={order:.2f}")
    assert ok


def test_psi_auxiliaries(capsys):
    t0 = time.perf_counter()
    ends = B.zhong_yang_psi(0.0) == 0.0 and B.zhong_yang_psi(PI / 2) == 1.0 and B.zhong_yang_psi(-PI / 2) == -1.0
    vals = {(a, dl): B.zhong_yang_integral(a, dl) for a in (0, 0.25, 0.5, 0.75, 0.9) for dl in (0.001, 0.01, 0.1)}
    dt = time.perf_counter() - t0
    below = [k for k, v in vals.items() if v < PI - 2 * k[1]]
    # independent high-order Gauss-Legendre reference, outside the timed part
    x, w = np.polynomial.legendre.leggauss(2000)
    worst_err = 0.0
    for (a, dl), v in vals.items():
        half = PI / 2 - dl
        ref = half * np.dot(w, (1 + a * B.zhong_yang_psi(half * x)) ** -0.5)
        worst_err = max(worst_err, abs(v - ref) / ref)
    ok = ends and not below and worst_err <= PSI_QUAD_TOL and dt < PSI_BUDGET
    _line(capsys, 6, "psi auxiliaries", ok, f"endpoints exact={ends} grid points below pi-2delta={below} "
          f"max rel quadrature error={worst_err:.1e} time={dt:.2f}s (<{PSI_BUDGET:g}s)")
    assert ok


def test_volume_comparison(capsys):
    t0 = time.perf_counter()
    sph = D.build_mesh(D.sphere(), 4)
    s = B.volume_comparison_check(sph, None, V.riemannian(), 0, 1.0, 0.0, [0.5, 1.0, 1.5, 2.0, 2.5])
    tor = D.build_mesh(D.flat_torus(), 64)
    t = B.volume_comparison_check(tor, None, V.lebesgue(), [PI, PI], 0.0, 0.0, [3.3, 3.7, 4.1, 4.4])
    dt = time.perf_counter() - t0
    ok = s.max_deviation_from_one <= VOLUME_RTOL and t.strictly_decreasing and dt < VOLUME_BUDGET
    _line(capsys, 7, "volume comparison", ok, f"sphere ratios={[f'{v:.4f}' for v in s.ratios]} "
          f"torus ratios={[f'{v:.4f}' for v in t.ratios]} time={dt:.1f}s (<{VOLUME_BUDGET:g}s)")
    assert ok


def test_property_suites(capsys):
    import property_suite as P
    out = P.run_all()
    bad = {k: v for k, v in out.items() if v[1]}
    total = sum(v[0] for v in out.values())
    ok = not bad and all(v[0] == P.SAMPLES for v in out.values())
    _line(capsys, 8, "property suites", ok, f"{len(P.PROPERTIES)} properties x {len(P.FAMILY_NAMES)} families, "
          f"{total} samples, failing cells={sorted(bad)}")
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
