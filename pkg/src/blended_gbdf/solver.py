"""Fixed-order integration with blended GBDF-based GLMs.

Each step solves the block system ``Y - h (A x I) F(Y) = (U x I) y_old`` by
the blended iteration, which only ever factors the ``m x m`` matrix
``I - h gamma J``. The local error is estimated by deferred correction with
the order ``k + 1`` companion method on the same grid, and the stepsize is
controlled from the last stage. A block of layout ``(r, m)`` holds one stage
per row.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import linalg
from .construction import (
    CATALOGUE,
    CLASSICAL,
    InvalidTriple,
    assemble_glm,
    error_estimator_tableau,
    interpolation_weights,
    starting_tableau,
)

MAX_SWEEPS = 12
FIXED_MAX_SWEEPS = 100  # fixed-h runs solve the discrete equations to roundoff
ROUNDOFF = 4 * np.finfo(float).eps  # relative size of an increment that is pure noise
NOISE = 1024 * np.finfo(float).eps  # stagnation below this is roundoff, not divergence
KAPPA = 0.01  # inner iteration stops when the estimated error is below KAPPA (weighted)
RATE_FLOOR = 0.1  # smallest contraction trusted by the stopping test
SLOW_RATE = 0.5  # contraction above this asks for a fresh Jacobian
SLOW_SWEEPS = 6  # so does needing more sweeps than this
LU_REFRESH = 0.1  # refactor when h moved by more than 10%
FAC_MIN, FAC_MAX, SAFETY = 0.2, 5.0, 0.9
HYSTERESIS = 1.2
START_RETRIES = 10
FIXED_START_SPLIT = 2  # fixed-step starts run on sub-blocks of h / 2
RESTART_AFTER = 3  # consecutive rejections before the history is discarded
PREDICTOR_DEGREE = 4  # higher-degree extrapolation over ell*h amplifies noise


class IterationFailure(ArithmeticError):
    pass


class StepsizeUnderflow(ArithmeticError):
    pass


class MethodNotEligible(InvalidTriple):
    pass


@dataclass(frozen=True)
class BlendedSystem:
    """``Y - h A F(Y) = eta`` with abscissae ``c`` (units of h)."""

    A: np.ndarray
    Ainv: np.ndarray
    gamma: float
    c: np.ndarray

    @property
    def r(self) -> int:
        return self.A.shape[0]


@dataclass
class Stats:
    m: int = 1
    steps: int = 0
    rejected: int = 0
    nfev: int = 0
    njev: int = 0
    nlu: int = 0
    nsolves: int = 0  # m x m triangular pair solves
    nsweeps: int = 0
    restarts: int = 0

    @property
    def cost(self) -> float:
        """Flop model: 2/3 m^3 per factorisation, 2 m^2 per solve."""
        return self.nlu * 2.0 / 3.0 * self.m**3 + self.nsolves * 2.0 * self.m**2

    def as_dict(self) -> dict:
        d = asdict(self)
        d["cost"] = self.cost
        return d


@dataclass
class SolverOptions:
    k: int = 4
    r: int | None = None
    ell: int | None = None
    choice: str = "choice2"
    rtol: float | None = None
    atol: float | None = None
    h0: float | None = None
    fixed_h: float | None = None
    t_eval: tuple | None = None
    max_steps: int = 200000


class Method:
    """A solver-eligible GLM: main tableau, error companion and starter."""

    def __init__(self, k: int, r: int | None = None, ell: int | None = None, choice="choice2"):
        if r is None or ell is None:
            table = CATALOGUE if k in CATALOGUE else CLASSICAL
            if k not in table:
                raise InvalidTriple(f"no catalogue method of order {k}; give r and ell")
            r, ell = table[k]
        self.tableau = assemble_glm(k, r, ell, choice)
        try:
            self.est = error_estimator_tableau(k, r, ell, choice)
        except InvalidTriple as exc:
            raise MethodNotEligible(f"{self.tableau.label} cannot be used by the solver: {exc}") from None
        self.start = starting_tableau(k)
        t = self.tableau
        self.k, self.r, self.ell = k, r, ell
        self.system = BlendedSystem(t.A, t.A2, t.gamma, t.c)
        self.start_system = BlendedSystem(self.start.A, self.start.calA[:, 1:], self.start.gamma,
                                          self.start.c)
        self.carried = t.carried_indices

    @property
    def label(self) -> str:
        return self.tableau.label


@dataclass
class SolverState:
    t: float
    h: float
    y_old: np.ndarray  # (r, m), aux rows are inert
    h_window: float  # spacing the carried y_old rows were built with
    hist_t: list = field(default_factory=list)
    hist_y: list = field(default_factory=list)
    J: np.ndarray | None = None
    jac_stale: bool = True
    lu: linalg.LuFactorization | None = None
    lu_h: float = 0.0
    rate: float = 0.5
    fails: int = 0  # consecutive rejections
    stats: Stats = field(default_factory=Stats)

    @property
    def y(self) -> np.ndarray:
        return self.y_old[-1]


@dataclass
class StepOutcome:
    accepted: bool
    error_norm: float
    new_h: float
    iterations: int
    block: np.ndarray | None


@dataclass
class IntegrationResult:
    t: np.ndarray
    y: np.ndarray
    success: bool
    message: str
    stats: Stats
    method: str
    t_eval: np.ndarray | None = None
    y_eval: np.ndarray | None = None
    wall_time: float = 0.0

    def to_json(self) -> str:
        doc = {
            "method": self.method,
            "success": self.success,
            "message": self.message,
            "stats": self.stats.as_dict(),
            "wall_time": self.wall_time,
            "t": [float(v) for v in self.t],
            "y": [[float(v) for v in row] for row in self.y],
        }
        if self.t_eval is not None:
            doc["t_eval"] = [float(v) for v in self.t_eval]
            doc["y_eval"] = [[float(v) for v in row] for row in self.y_eval]
        return json.dumps(doc, indent=1)


# ------------------------------------------------------------------ kernels

def wrms(v, scale) -> float:
    return float(np.sqrt(np.mean((np.asarray(v) / scale) ** 2)))


def eval_block(f, t, h, c, Y, stats) -> np.ndarray:
    stats.nfev += len(c)
    return np.array([f(t + ci * h, y) for ci, y in zip(c, Y)], dtype=float).reshape(Y.shape)


def _solve_rows(lu, B, stats) -> np.ndarray:
    """Apply ``(I - h gamma J)^{-1}`` to every stage row of ``B``."""
    stats.nsolves += B.shape[0]
    return linalg.solve(lu, B.T).T


def factor(J, h, gamma, stats) -> linalg.LuFactorization:
    stats.nlu += 1
    return linalg.lu_factor(np.eye(J.shape[0]) - (h * gamma) * J)


def blended_nonlinear_solve(system: BlendedSystem, f, t, h, eta, Y0, lu, scale, stats,
                            rate0=0.5, max_sweeps=MAX_SWEEPS, sweeps=None, history=None):
    """Blended iteration for ``Y - h A F(Y) = eta``; ``lu`` factors ``I - h' gamma J``.

    Each sweep: ``delta = N^{-1}(N^{-1} r1 + gamma r2)``, ``Y -= delta``, with
    ``r1 = (I - gamma A^{-1})(Y - eta) - h (A - gamma I) F`` and
    ``r2 = A^{-1}(Y - eta) - h F``. With ``sweeps`` set, exactly that many
    sweeps are run and no convergence test is made. ``history`` (a list)
    receives ``Y`` before the first and after every sweep.

    Returns ``(Y, F(Y), sweeps_done, contraction)``.
    """
    A, Ainv, g = system.A, system.Ainv, system.gamma
    AmG = A - g * np.eye(system.r)
    Y = np.array(Y0, dtype=float)
    if history is not None:
        history.append(Y.copy())
    prev = prev2 = None
    rate = rate0
    n = max_sweeps if sweeps is None else sweeps
    for i in range(n):
        F = eval_block(f, t, h, system.c, Y, stats)
        D = Y - eta
        AiD = Ainv @ D
        r1 = D - g * AiD - h * (AmG @ F)
        r2 = AiD - h * F
        delta = _solve_rows(lu, _solve_rows(lu, r1, stats) + g * r2, stats)
        Y = Y - delta
        stats.nsweeps += 1
        if history is not None:
            history.append(Y.copy())
        if not np.all(np.isfinite(Y)):
            raise IterationFailure("non-finite iterate")
        if sweeps is not None:
            continue
        dn = wrms(delta, scale)
        yn = wrms(Y, scale)
        if dn <= ROUNDOFF * yn:
            # increment at roundoff level: nothing left to gain
            return Y, eval_block(f, t, h, system.c, Y, stats), i + 1, rate
        if prev is not None:
            # a complex dominant pair makes single ratios zig-zag: average over two sweeps
            if prev2 is not None and prev2 > 0.0:
                rate = math.sqrt(dn / prev2)
            elif prev > 0.0:
                rate = dn / prev
            else:
                rate = 0.0
            if rate >= 1.0 and dn <= NOISE * yn:
                return Y, eval_block(f, t, h, system.c, Y, stats), i + 1, rate
            if rate >= 1.0:
                raise IterationFailure(f"blended iteration diverges (contraction {rate:.3g})")
        # before two increments exist the rate is borrowed from the last step, and the
        # first measured ratio underrates the slow modes: be conservative in both cases
        r_est = max(rate, RATE_FLOOR) if prev is not None else max(rate, SLOW_RATE)
        if dn == 0.0 or dn * r_est / (1.0 - r_est) <= KAPPA or dn <= 1e-3 * KAPPA:
            return Y, eval_block(f, t, h, system.c, Y, stats), i + 1, rate
        prev2, prev = prev, dn
    if sweeps is not None:
        return Y, eval_block(f, t, h, system.c, Y, stats), n, rate
    raise IterationFailure(f"no convergence in {max_sweeps} sweeps")


def carry(U, y_old) -> np.ndarray:
    """``U y_old`` in difference form.

    Rows of ``U`` sum to one, so ``U y_old = y_n + U (y_old - y_n)``; the
    rounding error in the coefficients then only multiplies O(h) differences
    instead of ``y_n`` itself, which keeps it from piling up over many steps.
    """
    y_n = y_old[-1]
    return y_n + U @ (y_old - y_n)


def step_factor(err, k) -> float:
    """Stepsize ratio ``0.9 err^(-1/(k+1))`` clamped to ``[FAC_MIN, FAC_MAX]``."""
    if err == 0:
        return FAC_MAX
    return min(FAC_MAX, max(FAC_MIN, SAFETY * err ** (-1.0 / (k + 1))))


def estimate_error(method: Method, h, y_old, Y, F, lu, stats) -> np.ndarray:
    """Deferred-correction estimate ``e = N^{-1}(N^{-1}(tau - tau1) + tau1)``."""
    est, sysm = method.est, method.system
    y_n = y_old[-1]
    tau = (Y - y_n) - h * (est.A @ F) - est.U @ (y_old - y_n)
    tau1 = sysm.gamma * (sysm.Ainv @ tau)
    return _solve_rows(lu, _solve_rows(lu, tau - tau1, stats) + tau1, stats)


def interpolate(ts, ys, targets, origin, h) -> np.ndarray:
    """Evaluate the polynomial through ``(ts, ys)`` at ``targets``."""
    nodes = (np.asarray(ts) - origin) / h
    Y = np.asarray(ys)
    return np.array([interpolation_weights(nodes, (x - origin) / h) @ Y for x in np.atleast_1d(targets)])


def predict(state: SolverState, method: Method, degree: int = PREDICTOR_DEGREE) -> np.ndarray:
    """Extrapolate the last ``degree + 1`` history points to ``t + c_i h``."""
    if len(state.hist_t) < 2:
        return np.tile(state.y, (method.r, 1))
    n = min(degree + 1, len(state.hist_t))
    return interpolate(state.hist_t[-n:], state.hist_y[-n:], state.t + method.system.c * state.h,
                       state.t, state.h)


def _jacobian(problem, t, y, atol, stats):
    stats.njev += 1
    if problem.jac is not None:
        return np.atleast_2d(np.asarray(problem.jac(t, y), dtype=float))
    f0 = np.asarray(problem.f(t, y), dtype=float)
    m = y.size
    J = np.empty((m, m))
    d = math.sqrt(np.finfo(float).eps) * np.maximum(np.abs(y), atol)
    for j in range(m):
        yp = y.copy()
        yp[j] += d[j]
        J[:, j] = (np.asarray(problem.f(t, yp), dtype=float) - f0) / d[j]
    stats.nfev += m + 1
    return J


def _scale(y, rtol, atol):
    return atol + rtol * np.abs(y)


def start(problem, h, method: Method, rtol, atol, stats, t0=None, y0=None, max_sweeps=MAX_SWEEPS,
          retries=START_RETRIES):
    """Leave ``y0`` (default: the initial value) with the order-k block GBDF
    of blocksize k.

    Returns ``(h, Y)`` where ``Y`` holds ``y_1..y_k`` at ``t0 + j h``;
    ``h`` is halved on failure, up to ``retries`` times.
    """
    t0 = problem.t_span[0] if t0 is None else t0
    y0 = np.asarray(problem.y0 if y0 is None else y0, dtype=float)
    st, sysm = method.start, method.start_system
    # U0 is a column of ones up to rounding
    eta = np.tile(y0, (st.k, 1))
    J = _jacobian(problem, t0, y0, atol, stats)
    scale = _scale(y0, rtol, atol)
    for _ in range(retries + 1):
        try:
            lu = factor(J, h, sysm.gamma, stats)
            Y, _, _, _ = blended_nonlinear_solve(sysm, problem.f, t0, h, eta, np.tile(y0, (st.k, 1)),
                                                 lu, scale, stats, max_sweeps=max_sweeps)
            return h, Y
        except (IterationFailure, linalg.SingularMatrix):
            h *= 0.5
    raise IterationFailure("starting procedure failed after repeated stepsize halving")


def start_fixed(problem, h, method: Method, rtol, atol, stats, t0=None, y0=None,
                max_sweeps=FIXED_MAX_SWEEPS):
    """Starting values on the exact grid ``t0 + j h`` for fixed-step runs.

    The start is chained over ``s`` sub-blocks of stepsize ``h / s`` and every
    ``s``-th value kept. ``s`` starts at ``FIXED_START_SPLIT`` (which also cuts
    the start error by about ``s^k``) and doubles while a sub-block fails.
    """
    t0 = problem.t_span[0] if t0 is None else t0
    y0 = np.asarray(problem.y0 if y0 is None else y0, dtype=float)
    k = method.k
    s = FIXED_START_SPLIT
    for _ in range(START_RETRIES + 1):
        hs = h / s
        t, y, pts = t0, y0, []
        try:
            for _ in range(s):
                _, Y = start(problem, hs, method, rtol, atol, stats, t0=t, y0=y,
                             max_sweeps=max_sweeps, retries=0)
                pts.extend(Y)
                t, y = t + k * hs, Y[-1]
        except IterationFailure:
            s *= 2
            continue
        return np.array(pts[s - 1::s])
    raise IterationFailure("starting procedure failed at the fixed stepsize")


def initial_step(problem, k, rtol, atol) -> float:
    """Standard two-evaluation estimate for an order-k step from ``y0``."""
    t0, t1 = problem.t_span
    y0 = np.asarray(problem.y0, dtype=float)
    sc = _scale(y0, rtol, atol)
    f0 = np.asarray(problem.f(t0, y0), dtype=float)
    d0, d1 = wrms(y0, sc), wrms(f0, sc)
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = np.asarray(problem.f(t0 + h0, y0 + h0 * f0), dtype=float)
    d2 = wrms(f1 - f0, sc) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1.0 / (k + 1))
    return min(100 * h0, h1)


def init_state(problem, method: Method, h, rtol, atol, t0=None, y0=None, stats=None,
               max_sweeps=MAX_SWEEPS, fixed=False) -> SolverState:
    """Run the starting procedure from ``(t0, y0)`` and set up the first window."""
    stats = Stats(m=problem.m) if stats is None else stats
    t0 = problem.t_span[0] if t0 is None else t0
    y0 = np.asarray(problem.y0 if y0 is None else y0, dtype=float)
    if fixed:
        Y = start_fixed(problem, h, method, rtol, atol, stats, t0=t0, y0=y0, max_sweeps=max_sweeps)
    else:
        h, Y = start(problem, h, method, rtol, atol, stats, t0=t0, y0=y0, max_sweeps=max_sweeps)
    k = method.k
    pts = [y0] + list(Y)
    y_old = np.zeros((method.r, problem.m))
    for j in method.carried:
        y_old[j] = pts[k + int(round(method.tableau.past_offsets[j]))]
    return SolverState(t=t0 + k * h, h=h, y_old=y_old, h_window=h,
                       hist_t=[t0 + j * h for j in range(k + 1)], hist_y=pts, stats=stats)


def _rebuild_window(state: SolverState, method: Method):
    """Re-sample the carried rows of ``y_old`` at spacing ``state.h``."""
    offs = method.tableau.past_offsets
    idx = list(method.carried)
    targets = state.t + offs[idx] * state.h
    vals = interpolate(state.hist_t, state.hist_y, targets, state.t, state.h_window)
    y_old = state.y_old.copy()
    y_old[idx] = vals
    state.y_old = y_old
    state.h_window = state.h


def _growth_cap(state: SolverState, method: Method) -> float:
    # keep the rebuilt window inside the span of the stored history
    if method.ell <= 1:
        return FAC_MAX
    span = state.hist_t[-1] - state.hist_t[0]
    return max(1.0, min(FAC_MAX, span / ((method.ell - 1) * state.h)))


def advance(problem, method: Method, state: SolverState, rtol, atol, t_end, fixed=False) -> StepOutcome:
    stats = state.stats
    h = state.h
    span = t_end - problem.t_span[0]
    if h < 1e-14 * span:
        raise StepsizeUnderflow(f"stepsize {h:.3g} below 1e-14 of the interval at t={state.t:.6g}")
    if h != state.h_window:
        _rebuild_window(state, method)
    fresh = False
    if state.J is None or state.jac_stale:
        state.J = _jacobian(problem, state.t, state.y, atol, stats)
        state.jac_stale = False
        state.lu = None
        fresh = True
    if state.lu is None or abs(h / state.lu_h - 1.0) > LU_REFRESH:
        state.lu = factor(state.J, h, method.system.gamma, stats)
        state.lu_h = h
    sysm = method.system
    eta = carry(method.tableau.U, state.y_old)
    Y0 = predict(state, method)
    scale = _scale(state.y, rtol, atol)
    try:
        Y, F, nsw, rate = blended_nonlinear_solve(sysm, problem.f, state.t, h, eta, Y0, state.lu,
                                                  scale, stats, rate0=state.rate,
                                                  max_sweeps=FIXED_MAX_SWEEPS if fixed else MAX_SWEEPS)
    except IterationFailure:
        if fixed:
            raise
        stats.rejected += 1
        state.fails += 1
        state.jac_stale = not fresh
        state.h = 0.5 * h
        return StepOutcome(False, math.inf, state.h, MAX_SWEEPS, None)
    state.rate = max(rate, 0.05)
    if (rate > SLOW_RATE or nsw > SLOW_SWEEPS) and not fresh:
        state.jac_stale = True
    e = estimate_error(method, h, state.y_old, Y, F, state.lu, stats)
    err = wrms(e[-1], atol + rtol * np.maximum(np.abs(state.y), np.abs(Y[-1])))
    fac = step_factor(err, method.k)
    if fixed or err <= 1.0:
        t_new = state.t + method.ell * h
        for j in method.carried:
            state.hist_t.append(state.t + sysm.c[j] * h)
            state.hist_y.append(Y[j].copy())
        del state.hist_t[:-(method.k + 1)], state.hist_y[:-(method.k + 1)]
        state.t = t_new
        state.y_old = Y
        state.fails = 0
        stats.steps += 1
        if fixed:
            return StepOutcome(True, err, h, nsw, Y)
        fac = min(fac, _growth_cap(state, method))
        if 1.0 <= fac <= HYSTERESIS:
            fac = 1.0
        state.h = h * fac
        return StepOutcome(True, err, state.h, nsw, Y)
    stats.rejected += 1
    state.fails += 1
    state.jac_stale = not fresh
    state.h = h * min(1.0, fac)
    return StepOutcome(False, err, state.h, nsw, Y)


def integrate(problem, options: SolverOptions | None = None, **kw) -> IntegrationResult:
    """Integrate ``problem`` over its ``t_span``.

    ``fixed_h`` switches the controller off: every block uses that stepsize
    and the last block may end past ``t_end``.
    """
    opts = options or SolverOptions()
    for key, val in kw.items():
        setattr(opts, key, val)
    rtol = opts.rtol if opts.rtol is not None else problem.rtol
    atol = opts.atol if opts.atol is not None else problem.atol
    method = Method(opts.k, opts.r, opts.ell, opts.choice)
    t0, t_end = problem.t_span
    fixed = opts.fixed_h is not None
    tick = time.perf_counter()
    if fixed:
        h = float(opts.fixed_h)
    else:
        h = opts.h0 or problem.h0 or initial_step(problem, method.k, rtol, atol)
        h = min(h, (t_end - t0) / (method.k + method.ell))
    t_out = [t0]
    y_out = [np.asarray(problem.y0, dtype=float)]
    ev_t = np.sort(np.asarray(opts.t_eval, dtype=float)) if opts.t_eval is not None else None
    ev_y = []
    stats = Stats(m=problem.m)
    ok, msg = True, "ok"

    def dense(state, lo, hi):
        if ev_t is None:
            return
        sel = ev_t[(ev_t > lo) & (ev_t <= hi)] if lo > t0 else ev_t[(ev_t >= lo) & (ev_t <= hi)]
        if sel.size:
            ev_y.extend(interpolate(state.hist_t, state.hist_y, sel, state.t, state.h_window))

    try:
        state = init_state(problem, method, h, rtol, atol,
                           max_sweeps=FIXED_MAX_SWEEPS if fixed else MAX_SWEEPS, fixed=fixed)
        stats = state.stats
        t_out.extend(state.hist_t[1:])
        y_out.extend(state.hist_y[1:])
        dense(state, t0, state.t)
        eps_t = 1e-12 * (t_end - t0)
        while state.t < t_end - eps_t:
            if stats.steps + stats.rejected >= opts.max_steps:
                raise IterationFailure(f"step budget of {opts.max_steps} exhausted")
            if not fixed and state.t + 1.1 * method.ell * state.h >= t_end:
                state.h = (t_end - state.t) / method.ell
            t_prev = state.t
            out = advance(problem, method, state, rtol, atol, t_end, fixed=fixed)
            if out.accepted:
                t_out.append(state.t)
                y_out.append(state.y_old[-1].copy())
                dense(state, t_prev, state.t)
            elif state.fails >= RESTART_AFTER and state.t + method.k * state.h < t_end:
                # interpolated history no longer fits the solution: start afresh
                stats.restarts += 1
                state = init_state(problem, method, state.h, rtol, atol, t0=state.t,
                                   y0=state.y_old[-1], stats=stats)
                t_out.extend(state.hist_t[1:])
                y_out.extend(state.hist_y[1:])
                dense(state, t_prev, state.t)
    except (IterationFailure, StepsizeUnderflow, linalg.LinAlgError) as exc:
        ok, msg = False, f"{type(exc).__name__}: {exc}"
    return IntegrationResult(
        t=np.array(t_out), y=np.array(y_out), success=ok, message=msg, stats=stats,
        method=method.label, t_eval=ev_t,
        y_eval=np.array(ev_y).reshape(-1, problem.m) if ev_t is not None else None,
        wall_time=time.perf_counter() - tick,
    )
