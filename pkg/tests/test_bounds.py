import math

import jax.numpy as jnp
import numpy as np
import pytest

from finslerlab import bounds as B
from finslerlab import domain as D
from finslerlab import volume as V
from finslerlab.errors import (HypothesisUnmetError, InvalidInputError, InvalidParameterError,
                               OutOfDomainError)

PI = math.pi


def _scan(n=2, inf_ric=0.0, ric_N=None, inf_ric_inf=0.0, sup_s_dot=0.0, sup_abs_s=0.0,
          s_const=False):
    return B.CurvatureScan(n=n, inf_ric=inf_ric, inf_ric_over_nminus1=inf_ric / (n - 1),
                           inf_ric_N=ric_N or {}, inf_ric_inf=inf_ric_inf, sup_s_dot=sup_s_dot,
                           sup_abs_s=sup_abs_s, s_identically_zero=sup_abs_s == 0.0,
                           s_constant_multiple_of_F=s_const, s_constant=0.0, s_tol=1e-9,
                           inf_flag=inf_ric, sup_flag=inf_ric, mean_ric=inf_ric, sample_count=1)


def _psi_direct(t):
    c, s = np.cos(t), np.sin(t)
    return ((4 / PI) * (t + c * s) - 2 * s) / c ** 2


# -- scans ---------------------------------------------------------------------

def test_scan_round_sphere(sphere3):
    sc = B.curvature_scan(sphere3.spec.metric, V.riemannian(), sphere3, 16, N_list=[3.0])
    assert sc.inf_ric == pytest.approx(1.0, abs=1e-6)
    assert sc.inf_ric_over_nminus1 == pytest.approx(1.0, abs=1e-6)
    assert sc.s_identically_zero and sc.sup_abs_s <= 1e-9
    assert sc.inf_ric_N[3.0] == pytest.approx(1.0, abs=1e-6)
    assert sc.inf_ric <= sc.mean_ric
    assert sc.sample_count == 16 * sphere3.n_vertices
    w = sc.witnesses["inf_ric"]
    assert abs(np.dot(w["x"], w["y"])) < 1e-12 and np.linalg.norm(w["y"]) > 0


def test_scan_randers_flat(randers03):
    m = D.build_mesh(D.flat_torus(metric=randers03), 16)
    sc = B.curvature_scan(randers03, V.busemann_hausdorff(), m, 16)
    assert abs(sc.inf_ric) <= 1e-9 and abs(sc.sup_flag) <= 1e-9
    assert sc.sup_abs_s <= 1e-9 and sc.sup_s_dot <= 1e-9
    assert sc.s_identically_zero


def test_scan_weighted_euclidean():
    m = D.build_mesh(D.flat_torus(), 64)
    vol = V.explicit(lambda x: -jnp.cos(x[0]))
    sc = B.curvature_scan(m.spec.metric, vol, m, 32)
    # Ric_inf = S-dot = -(y1)^2 cos x1 / F^2 for this weight, minimum -1
    assert sc.inf_ric_inf == pytest.approx(-1.0, abs=1e-3)
    assert not sc.s_identically_zero
    assert sc.inf_ric_inf <= sc.sup_s_dot


def test_scan_bad_arguments(torus32):
    with pytest.raises(InvalidInputError):
        B.curvature_scan(torus32.spec.metric, V.lebesgue(), torus32, 4)
    with pytest.raises(InvalidParameterError):
        B.curvature_scan(torus32.spec.metric, V.lebesgue(), torus32, 8, N_list=[2.0])


# -- bounds --------------------------------------------------------------------

def test_bound_s_zero():
    rep = B.theorem_bounds(_scan(inf_ric=1.0, inf_ric_inf=1.0), PI, 2)
    assert rep.bound_values["s_zero_ric_positive"] == pytest.approx(2.0)
    assert rep.equality_diameter_predictions["s_zero_ric_positive"] == pytest.approx(PI)
    assert rep.verdicts["s_zero_ric_positive"] == "not-evaluated"


def test_bound_weighted_N():
    sc = _scan(inf_ric=1.0, ric_N={4.0: 1.0}, inf_ric_inf=1.0, sup_s_dot=0.6, sup_abs_s=0.1)
    rep = B.theorem_bounds(sc, 5.0, 2, lambda1=1.5)
    key = "ric_N_sdot_cap[4]"
    assert rep.bound_values[key] == pytest.approx(4 / 3)
    assert rep.equality_diameter_predictions[key] == pytest.approx(math.sqrt(3) * PI)
    assert rep.verdicts[key] == "satisfied"
    assert "s_zero_ric_positive" not in rep.applicable_theorems
    # above the S-dot cap 2/3 only the compact-manifold form remains
    sc.sup_s_dot = 0.7
    rep = B.theorem_bounds(sc, 5.0, 2)
    assert key not in rep.applicable_theorems
    assert rep.bound_values["ric_N_compact[4]"] == pytest.approx(4 / 3)


def test_bound_diameter():
    rep = B.theorem_bounds(_scan(), math.sqrt(2) * PI, 2, lambda1=0.5)
    assert rep.bound_values["ric_inf_diameter"] == pytest.approx(0.5)
    assert rep.verdicts["ric_inf_diameter"] == "satisfied-at-equality"
    rep = B.theorem_bounds(_scan(s_const=True, sup_abs_s=0.2), 2.0, 2, lambda1=1.0)
    assert rep.bound_values["constant_s_diameter"] == pytest.approx(PI ** 2 / 4)


def test_no_applicable_bound():
    rep = B.theorem_bounds(_scan(inf_ric=-1.0, inf_ric_inf=-1.0, sup_abs_s=0.1), 3.0, 2, lambda1=1.0)
    assert rep.applicable_theorems == [] and rep.verdicts == {}
    assert not rep.any_violated


def test_bound_input_checks():
    with pytest.raises(InvalidInputError):
        B.theorem_bounds(_scan(), 0.0, 2)
    with pytest.raises(InvalidInputError):
        B.theorem_bounds(_scan(), 1.0, 3)


@pytest.mark.parametrize("lam,expected", [(1.0, "satisfied-at-equality"), (1.009, "satisfied-at-equality"),
                                          (1.2, "satisfied"), (0.985, "violated-within-tolerance"),
                                          (0.9, "violated"), (None, "not-evaluated")])
def test_verdicts(lam, expected):
    assert B.verdict(lam, 1.0)[0] == expected


def test_any_violated():
    rep = B.theorem_bounds(_scan(), PI, 2, lambda1=0.5)
    assert rep.verdicts["ric_inf_diameter"] == "violated" and rep.any_violated


# -- psi and its integral ------------------------------------------------------

def test_psi_special_values():
    assert B.zhong_yang_psi(0.0) == 0.0
    assert B.zhong_yang_psi(PI / 2) == 1.0
    assert B.zhong_yang_psi(-PI / 2) == -1.0
    assert B.zhong_yang_psi(-0.7) == pytest.approx(-B.zhong_yang_psi(0.7), abs=1e-12)
    assert B.zhong_yang_psi(0.7) == pytest.approx(_psi_direct(0.7), abs=1e-14)


def test_psi_smooth_near_end():
    t = np.array([0.03, 0.05, 0.1, 0.2])
    np.testing.assert_allclose(B.zhong_yang_psi(PI / 2 - t), _psi_direct(PI / 2 - t), atol=1e-12)
    th = np.linspace(PI / 2 - 0.05, PI / 2, 2001)
    v = B.zhong_yang_psi(th)
    assert np.all(np.diff(v) > 0) and np.max(np.abs(np.diff(v, 2))) < 1e-6
    # the two evaluation paths agree where they meet
    s = PI / 2 - 0.02
    assert float(np.polynomial.polynomial.polyval(0.02, B._PSI_SERIES)) == pytest.approx(_psi_direct(s), abs=1e-12)


def test_psi_out_of_domain():
    with pytest.raises(OutOfDomainError):
        B.zhong_yang_psi(1.6)
    with pytest.raises(OutOfDomainError):
        B.zhong_yang_psi(np.nan)


def test_integral_trivial():
    assert B.zhong_yang_integral(0.0, 0.01) == PI - 0.02


@pytest.mark.parametrize("a", [0, 0.25, 0.5, 0.75, 0.9])
@pytest.mark.parametrize("delta", [0.001, 0.01, 0.1])
def test_integral_lower_bound_grid(a, delta):
    assert B.zhong_yang_integral(a, delta) >= PI - 2 * delta


def test_integral_series_oracle():
    a, delta = 0.9, 0.05
    x, w = np.polynomial.legendre.leggauss(400)
    half = PI / 2 - delta
    # only even powers survive on the symmetric interval; integrate on [0, half] and double
    th = 0.5 * half * (x + 1)
    p2 = _psi_direct(th) ** 2
    total, coef, term_pow = 0.0, 1.0, np.ones_like(th)
    for i in range(400):
        if i > 0:
            coef *= (4 * i - 3) * (4 * i - 1) / ((4 * i - 2) * (4 * i))
            term_pow = term_pow * p2
        total += coef * a ** (2 * i) * 2 * 0.5 * half * np.dot(w, term_pow)
    assert B.zhong_yang_integral(a, delta) == pytest.approx(total, abs=1e-6)


def test_integral_errors():
    with pytest.raises(OutOfDomainError):
        B.zhong_yang_integral(1.0, 0.1)
    with pytest.raises(OutOfDomainError):
        B.zhong_yang_integral(0.5, PI / 2)
    with pytest.raises(OutOfDomainError):
        B.zhong_yang_integral(-1 + 1e-13, 0.0)


def test_params_from_k():
    p = B.ZhongYangParams.from_k(1.0, 0.1)
    assert p.a_eps == 0.0
    assert math.sin(PI / 2 - p.delta) == pytest.approx(1 / 1.1, abs=1e-15)
    assert B.ZhongYangParams.from_k(0.5, 0.2).a_eps == pytest.approx(0.5 / (1.5 * 1.2))
    with pytest.raises(InvalidParameterError):
        B.ZhongYangParams.from_k(0.0, 0.1)


# -- volume comparison ---------------------------------------------------------

def test_volume_comparison_sphere():
    m = D.build_mesh(D.sphere(), 4)
    rep = B.volume_comparison_check(m, None, V.riemannian(), 0, 1.0, 0.0, [0.5, 1.0, 1.5, 2.0, 2.5])
    assert rep.max_deviation_from_one <= 0.02
    assert rep.non_increasing


def test_volume_comparison_torus(torus32):
    m = D.build_mesh(D.flat_torus(), 64)
    small = B.volume_comparison_check(m, None, V.lebesgue(), [PI, PI], 0.0, 0.0, [0.5, 1.0, 1.5])
    assert small.max_deviation_from_one <= 0.02
    wide = B.volume_comparison_check(m, None, V.lebesgue(), [PI, PI], 0.0, 0.0, [3.5, 4.0, 4.5])
    assert wide.strictly_decreasing and wide.non_increasing


def test_volume_comparison_hypotheses(sphere3):
    with pytest.raises(HypothesisUnmetError, match="inf Ric"):
        B.volume_comparison_check(sphere3, None, V.riemannian(), 0, 2.0, 0.0, [0.5, 1.0])
    m = D.build_mesh(D.flat_torus(), 16)
    vol = V.explicit(lambda x: 0.3 * jnp.sin(x[0]))
    with pytest.raises(HypothesisUnmetError, match="sup \\|S\\|"):
        B.volume_comparison_check(m, None, vol, 0, 0.0, 0.0, [0.5, 1.0])
    with pytest.raises(InvalidInputError):
        B.volume_comparison_check(sphere3, None, V.riemannian(), 0, 1.0, 0.0, [1.0, 0.5])
