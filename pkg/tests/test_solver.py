import json
import math

import numpy as np
import pytest

from blended_gbdf import linalg
from blended_gbdf import problems as P
from blended_gbdf import solver as S
from blended_gbdf.problems import OdeProblem


def _method(k):
    return S.Method(k)


def _lu(method, h, lam, m=1):
    return S.factor(np.full((m, m), lam), h, method.system.gamma, S.Stats(m=m))


def _exact_history(method, t, h, y):
    """Carried window of ``y`` at spacing ``h`` ending at ``t``."""
    y_old = np.zeros((method.r, np.size(y(0.0))))
    for j in method.carried:
        y_old[j] = y(t + method.tableau.past_offsets[j] * h)
    return y_old


# ------------------------------------------------------------ inner iteration

def test_zero_rhs_converges_in_one_sweep():
    m = _method(4)
    rng = np.random.default_rng(1)
    eta = rng.normal(size=(m.r, 2))
    Y0 = rng.normal(size=(m.r, 2))
    lu = S.factor(np.zeros((2, 2)), 0.1, m.system.gamma, S.Stats(m=2))
    Y, _, n, _ = S.blended_nonlinear_solve(m.system, lambda t, y: 0.0 * y, 0.0, 0.1, eta, Y0, lu,
                                           np.ones(2), S.Stats(m=2), sweeps=1)
    assert n == 1
    np.testing.assert_allclose(Y, eta, rtol=0, atol=1e-14)


@pytest.mark.parametrize("k", [4, 6])
def test_exact_predictor_gives_zero_correction(k):
    # Prothero-Robinson with a degree-k polynomial g: the exact values solve the block equations
    m = _method(k)
    lam, h, t = -1e6, 0.1, 0.3
    g = np.polynomial.Polynomial(np.arange(1.0, k + 2.0) / 10.0)
    dg = g.deriv()

    def f(s, y):
        return lam * (y - g(s)) + dg(s)

    y_old = _exact_history(m, t, h, lambda s: np.array([g(s)]))
    eta = S.carry(m.tableau.U, y_old)
    Y0 = g(t + m.system.c * h)[:, None]
    hist = []
    S.blended_nonlinear_solve(m.system, f, t, h, eta, Y0, _lu(m, h, lam), np.ones(1), S.Stats(),
                              sweeps=1, history=hist)
    assert np.max(np.abs(hist[1] - hist[0])) <= 1e-12 * np.max(np.abs(Y0))


def test_divergence_raises():
    m = _method(4)
    # the factorization ignores a huge Jacobian: the iteration blows up
    lu = _lu(m, 1.0, 0.0)
    with pytest.raises(S.IterationFailure):
        S.blended_nonlinear_solve(m.system, lambda t, y: -1e4 * y, 0.0, 1.0, np.ones((m.r, 1)),
                                  np.ones((m.r, 1)), lu, np.ones(1), S.Stats())


@pytest.mark.parametrize("k", [4, 8, 12])
def test_linear_path_matches_scalar_iteration(k):
    from blended_gbdf.blended import scalar_blended_iterate

    m = _method(k)
    lam, h = -3.0, 0.1
    q = h * lam
    rng = np.random.default_rng(k)
    eta = rng.normal(size=m.r)
    lu = _lu(m, h, lam)
    hist = []
    S.blended_nonlinear_solve(m.system, lambda t, y: lam * y, 0.0, h, eta[:, None],
                              np.zeros((m.r, 1)), lu, np.ones(1), S.Stats(), sweeps=10, history=hist)
    ref = scalar_blended_iterate(m.tableau, q, eta, 10)
    for a, b in zip(hist, ref):
        np.testing.assert_allclose(a[:, 0], b, rtol=0, atol=1e-12)


def test_stopping_leaves_small_next_correction():
    # linear problems: one more sweep after the stop moves the block by < 0.01 (weighted)
    orig = S.blended_nonlinear_solve
    seen = []

    def wrapped(system, f, t, h, eta, Y0, lu, scale, stats, **kw):
        out = orig(system, f, t, h, eta, Y0, lu, scale, stats, **kw)
        if kw.get("sweeps") is None:
            Y1 = orig(system, f, t, h, eta, out[0], lu, scale, S.Stats(), sweeps=1)[0]
            seen.append(S.wrms(Y1 - out[0], scale))
        return out

    S.blended_nonlinear_solve = wrapped
    try:
        for prob in (P.linear_test(), P.prothero_robinson(lam=-1.0)):
            for tol in (1e-4, 1e-8):
                assert S.integrate(prob, k=6, rtol=tol, atol=tol).success
    finally:
        S.blended_nonlinear_solve = orig
    assert seen and max(seen) <= 0.01


# ------------------------------------------------------------------- carry

@pytest.mark.parametrize("k", [4, 10, 16])
def test_carry_is_u_times_window(k):
    m = _method(k)
    y_old = np.random.default_rng(k).normal(size=(m.r, 3))
    y_old[[i for i in range(m.r) if i not in m.carried]] = 0.0
    np.testing.assert_allclose(S.carry(m.tableau.U, y_old), m.tableau.U @ y_old, atol=1e-12)


def test_u_rows_sum_to_one():
    for k in (4, 6, 8, 10, 12, 14, 16):
        U = _method(k).tableau.U
        np.testing.assert_allclose(U.sum(axis=1), 1.0, atol=1e-13)


# --------------------------------------------------------------- predictor

def _state(method, ts, ys, h):
    return S.SolverState(t=ts[-1], h=h, y_old=np.zeros((method.r, 1)), h_window=h,
                         hist_t=list(ts), hist_y=[np.atleast_1d(v) for v in ys])


def test_predictor_exact_on_polynomials():
    m = _method(6)
    h = 0.2
    p = np.polynomial.Polynomial([0.5, -1.0, 2.0, 0.3, -0.7])  # degree PREDICTOR_DEGREE
    ts = [1.0 + j * h for j in range(7)]
    st = _state(m, ts, [p(t) for t in ts], h)
    pred = S.predict(st, m)
    np.testing.assert_allclose(pred[:, 0], p(ts[-1] + m.system.c * h), rtol=1e-12)


def test_first_step_predictor_is_constant():
    m = _method(4)
    st = _state(m, [0.0], [np.array([3.0])], 0.1)
    st.y_old[-1] = 3.0
    np.testing.assert_array_equal(S.predict(st, m), np.full((m.r, 1), 3.0))


def test_predictor_error_order_on_exponential():
    m = _method(4)
    errs = []
    for h in (0.05, 0.025):
        ts = [j * h for j in range(5)]
        pred = S.predict(_state(m, ts, [math.exp(t) for t in ts], h), m)
        errs.append(np.max(np.abs(pred[:, 0] - np.exp(ts[-1] + m.system.c * h))))
    # five-point extrapolation: O(h^5)
    assert errs[0] / errs[1] == pytest.approx(32.0, rel=0.2)


# ---------------------------------------------------------------- starting

def _problem(f, y0, jac=None, t_end=1.0):
    return OdeProblem(name="t", f=f, jac=jac, y0=np.atleast_1d(np.asarray(y0, dtype=float)),
                      t_span=(0.0, t_end))


def test_start_constant_solution():
    prob = _problem(lambda t, y: 0.0 * y, [2.0, -1.0])
    h, Y = S.start(prob, 0.1, _method(6), 1e-8, 1e-8, S.Stats(m=2))
    assert h == 0.1
    np.testing.assert_allclose(Y, np.tile([2.0, -1.0], (6, 1)), atol=1e-14)


@pytest.mark.parametrize("k", [4, 6, 8])
def test_start_quadrature_exact(k):
    p = np.polynomial.Polynomial(np.linspace(1.0, -1.0, k))  # degree k-1
    P1 = p.integ()
    prob = _problem(lambda t, y: np.array([p(t)]), [0.0])
    h = 0.1
    _, Y = S.start(prob, h, _method(k), 1e-12, 1e-12, S.Stats())
    np.testing.assert_allclose(Y[:, 0], P1(h * np.arange(1, k + 1)), atol=1e-13)


@pytest.mark.parametrize("k", [4, 6])
def test_start_error_order(k):
    lam = -1.0
    prob = _problem(lambda t, y: lam * y, [1.0], jac=lambda t, y: np.array([[lam]]))
    errs = []
    for h in (0.1, 0.05):
        _, Y = S.start(prob, h, _method(k), 1e-13, 1e-13, S.Stats(), max_sweeps=100)
        errs.append(np.max(np.abs(Y[:, 0] - np.exp(lam * h * np.arange(1, k + 1)))))
    assert math.log2(errs[0] / errs[1]) == pytest.approx(k + 1, abs=0.5)


def test_fixed_start_lands_on_grid():
    m = _method(6)
    prob = _problem(lambda t, y: -y, [1.0], jac=lambda t, y: np.array([[-1.0]]))
    Y = S.start_fixed(prob, 0.05, m, 1e-13, 1e-16, S.Stats())
    assert Y.shape == (6, 1)
    np.testing.assert_allclose(Y[:, 0], np.exp(-0.05 * np.arange(1, 7)), rtol=1e-11)


def test_fixed_start_survives_oscillatory_large_step():
    # a single start block fails at this h; the chained start does not
    prob = _problem(lambda t, y: np.array([y[1], -y[0]]), [1.0, 0.0],
                    jac=lambda t, y: np.array([[0.0, 1.0], [-1.0, 0.0]]), t_end=40.0)
    res = S.integrate(prob, k=8, fixed_h=0.6, rtol=1e-14, atol=1e-16)
    assert res.success
    np.testing.assert_allclose(res.t[1:9], 0.6 * np.arange(1, 9), rtol=1e-14)


# --------------------------------------------------------------- estimator

@pytest.mark.parametrize("k", [4, 6])
def test_estimate_vanishes_on_polynomials(k):
    m = _method(k)
    h, t = 0.1, 1.0
    p = np.polynomial.Polynomial(np.linspace(0.3, 1.0, k + 2))  # degree k+1
    y_old = _exact_history(m, t, h, lambda s: np.array([p(s)]))
    c = t + m.system.c * h
    Y, F = p(c)[:, None], p.deriv()(c)[:, None]
    e = S.estimate_error(m, h, y_old, Y, F, _lu(m, h, 0.0), S.Stats())
    assert np.max(np.abs(e)) <= 1e-12


def _lin_estimate(m, lam, h):
    """Estimate on y' = lam y with exact history and the exactly solved block."""
    t = 1.0
    y_old = _exact_history(m, t, h, lambda s: np.array([math.exp(lam * s)]))
    eta = S.carry(m.tableau.U, y_old)[:, 0]
    Y = np.linalg.solve(np.eye(m.r) - h * lam * m.tableau.A, eta)
    lu = _lu(m, h, lam)
    return S.estimate_error(m, h, y_old, Y[:, None], lam * Y[:, None], lu, S.Stats())


@pytest.mark.parametrize("k", [4, 6, 8])
def test_estimate_order(k):
    m = _method(k)
    e1 = abs(_lin_estimate(m, -1.0, 0.1)[-1, 0])
    e2 = abs(_lin_estimate(m, -1.0, 0.05)[-1, 0])
    assert e1 / e2 == pytest.approx(2.0 ** (k + 1), rel=0.2)


@pytest.mark.parametrize("k", [4, 8, 16])
def test_estimate_bounded_in_stiff_limit(k):
    m = _method(k)
    y_old = np.ones((m.r, 1))
    eta = S.carry(m.tableau.U, y_old)
    h, lam = 1.0, -1e8
    Y = np.linalg.solve(np.eye(m.r) - h * lam * m.tableau.A, eta)
    e = S.estimate_error(m, h, y_old, Y, lam * Y, _lu(m, h, lam), S.Stats())
    assert np.all(np.isfinite(e)) and np.max(np.abs(e)) <= 1.0


# -------------------------------------------------------------- controller

def test_forced_rejection_factor():
    assert S.step_factor(8.0, 4) == pytest.approx(0.9 * 8.0 ** (-0.2))
    assert S.step_factor(8.0, 4) == pytest.approx(0.594, abs=5e-4)


def test_step_factor_clamped():
    assert S.step_factor(0.0, 4) == 5.0
    assert S.step_factor(1e-30, 4) == 5.0
    assert S.step_factor(1e30, 4) == 0.2


def test_stepsize_underflow():
    prob = P.linear_test()
    m = _method(4)
    st = S.init_state(prob, m, 0.01, 1e-6, 1e-6)
    st.h = 1e-20
    with pytest.raises(S.StepsizeUnderflow):
        S.advance(prob, m, st, 1e-6, 1e-6, 10.0)


def test_fixed_step_deterministic():
    prob = P.vanderpol(eps=1e-3, t_end=0.5)
    a = S.integrate(prob, k=6, fixed_h=1e-3, rtol=1e-8, atol=1e-8)
    b = S.integrate(prob, k=6, fixed_h=1e-3, rtol=1e-8, atol=1e-8)
    assert a.success
    np.testing.assert_array_equal(a.t, b.t)
    np.testing.assert_array_equal(a.y, b.y)


def test_adaptive_deterministic():
    prob = P.robertson(t_end=100.0)
    a = S.integrate(prob, k=6, rtol=1e-6, atol=1e-10)
    b = S.integrate(prob, k=6, rtol=1e-6, atol=1e-10)
    np.testing.assert_array_equal(a.y, b.y)
    assert a.stats == b.stats


# ------------------------------------------------------------- integration

def test_decay_global_error_within_tolerance_band():
    prob = P.linear_test(t_end=1.0)
    res = S.integrate(prob, k=4, rtol=1e-6, atol=1e-6)
    assert res.success
    err = np.abs(res.y[:, 0] - np.exp(-res.t))
    assert err.max() <= 100 * 1e-6


def test_decay_endpoint_tight():
    res = S.integrate(P.linear_test(t_end=10.0), k=4, rtol=1e-8, atol=1e-8)
    assert res.success and res.t[-1] == pytest.approx(10.0)
    assert abs(res.y[-1, 0] - math.exp(-10.0)) < 1e-6


def test_prothero_robinson_no_order_reduction():
    k, ell, T = 6, 4, 40.0
    prob = P.prothero_robinson(lam=-1e6, t_end=T)
    hs, errs = [], []
    n0 = round((T / 2.0 - k) / ell)
    for j in range(4):
        h = T / (k + n0 * 2**j * ell)
        res = S.integrate(prob, k=k, fixed_h=h, rtol=1e-13, atol=1e-16)
        assert res.success
        hs.append(h)
        errs.append(abs(res.y[-1, 0] - math.sin(res.t[-1])))
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert slope >= k - 1


def test_robertson_matches_reference():
    prob = P.robertson()
    res = S.integrate(prob, k=6, rtol=1e-6, atol=1e-10)
    assert res.success
    assert P.scd(res.y[-1], P.reference_solution(prob), 1e-10) >= 4.0
    assert np.max(np.abs(res.y.sum(axis=1) - 1.0)) <= 10 * 1e-6


def test_oscillator_adaptive():
    prob = _problem(lambda t, y: np.array([y[1], -y[0]]), [1.0, 0.0],
                    jac=lambda t, y: np.array([[0.0, 1.0], [-1.0, 0.0]]), t_end=20.0)
    res = S.integrate(prob, k=8, rtol=1e-8, atol=1e-8)
    assert res.success
    np.testing.assert_allclose(res.y[-1], [math.cos(20.0), -math.sin(20.0)], atol=1e-6)


def test_one_factorization_per_step():
    prob = P.linear_test(lam=-2.0, t_end=5.0)
    res = S.integrate(prob, k=6, fixed_h=0.05, rtol=1e-10, atol=1e-10)
    assert res.success and res.stats.steps > 20
    # the chained start factors once per sub-block, then one matrix serves every step
    assert res.stats.nlu == S.FIXED_START_SPLIT + 1
    assert res.stats.njev == S.FIXED_START_SPLIT + 1


def test_finite_difference_jacobian_used_without_jac():
    prob = P.robertson(t_end=10.0).with_options(jac=None)
    a = S.integrate(prob, k=4, rtol=1e-6, atol=1e-10)
    b = S.integrate(P.robertson(t_end=10.0), k=4, rtol=1e-6, atol=1e-10)
    assert a.success
    assert P.scd(a.y[-1], b.y[-1], 1e-10) >= 4.0


def test_three_two_two_not_eligible():
    with pytest.raises(S.MethodNotEligible):
        S.Method(3)
    with pytest.raises(S.MethodNotEligible):
        S.integrate(P.linear_test(), k=3)


def test_dense_output():
    t_eval = (0.0, 0.37, 1.0, 2.5, 7.77, 10.0)
    res = S.integrate(P.linear_test(), k=6, rtol=1e-9, atol=1e-12, t_eval=t_eval)
    assert res.success
    np.testing.assert_allclose(res.t_eval, t_eval)
    np.testing.assert_allclose(res.y_eval[:, 0], np.exp(-np.array(t_eval)), rtol=1e-6, atol=1e-9)


def test_result_json_roundtrip():
    res = S.integrate(P.linear_test(t_end=1.0), k=4, t_eval=(0.5,))
    doc = json.loads(res.to_json())
    assert doc["success"] is True
    assert doc["method"] == res.method
    for key in ("steps", "rejected", "nfev", "njev", "nlu", "nsweeps", "cost"):
        assert key in doc["stats"]
    assert doc["stats"]["cost"] > 0
    assert len(doc["t"]) == len(doc["y"]) == len(res.t)
    assert doc["y_eval"][0][0] == pytest.approx(math.exp(-0.5), rel=1e-5)


def test_cost_model():
    st = S.Stats(m=3, nlu=2, nsolves=10)
    assert st.cost == pytest.approx(2 * 2 / 3 * 27 + 10 * 2 * 9)


def test_partial_result_on_failure():
    res = S.integrate(P.robertson(), k=4, rtol=1e-6, atol=1e-10, max_steps=5)
    assert not res.success
    assert "budget" in res.message
    assert len(res.t) == len(res.y) >= 1


def test_singular_factor_reported():
    with pytest.raises(linalg.SingularMatrix):
        S.factor(10.0 * np.eye(2), 0.1, 1.0, S.Stats(m=2))
