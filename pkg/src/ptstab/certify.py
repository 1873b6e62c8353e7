"""Grid-based falsification of Lyapunov drift certificates.

Passing a grid check means no violation was found at the sampled states; it
is not a proof over the whole state space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .errors import ConstraintError, DomainError, EvaluationError
from .system import ScalarField, fd_gradient_hessian, generator_eval, generator_eval_fd

__all__ = [
    "LyapunovSpec",
    "CertReport",
    "IntegralResult",
    "adaptive_simpson",
    "beta_integral",
    "corollary21_beta",
    "drift_grid",
    "check_drift_condition",
    "corollary22_check",
    "Corollary22Report",
    "wj_value",
    "WjResiduals",
    "wj_partials_check",
    "wj_richardson_ratio",
    "example21_certificate",
]

UNBOUNDED_AT = 1e3
MAX_INTERVALS = 10_000


class IntegralResult(NamedTuple):
    value: float
    error: float

    @property
    def bounded(self):
        return math.isfinite(self.value)


def adaptive_simpson(f, a, b, tol, n_init=1, max_intervals=MAX_INTERVALS):
    """Adaptive Simpson quadrature of a vectorized ``f`` over ``[a, b]``.

    Intervals are refined breadth-first; an interval is accepted once the
    two-level Simpson difference is within its share of ``tol``.  Returns
    ``(value, error_estimate, n_intervals)``.
    """
    edges = np.linspace(a, b, n_init + 1)
    lo, hi = edges[:-1], edges[1:]
    width = b - a
    total = 0.0
    err = 0.0
    count = lo.size
    while lo.size:
        mid = 0.5 * (lo + hi)
        q1, q3 = 0.5 * (lo + mid), 0.5 * (mid + hi)
        pts = np.stack([lo, q1, mid, q3, hi])
        fv = f(pts.ravel()).reshape(pts.shape)
        h = hi - lo
        coarse = h / 6.0 * (fv[0] + 4 * fv[2] + fv[4])
        fine = h / 12.0 * (fv[0] + 4 * fv[1] + 2 * fv[2] + 4 * fv[3] + fv[4])
        diff = np.abs(fine - coarse)
        if not np.all(np.isfinite(fine)):
            raise EvaluationError("non-finite integrand value during quadrature")
        ok = diff <= 15.0 * tol * h / width
        if count + 2 * int(np.count_nonzero(~ok)) > max_intervals:
            ok[:] = True
        total += float(np.sum(fine[ok] + (fine[ok] - coarse[ok]) / 15.0))
        err += float(np.sum(diff[ok])) / 15.0
        lo, hi = np.concatenate([lo[~ok], mid[~ok]]), np.concatenate([mid[~ok], hi[~ok]])
        count += lo.size // 2
    return total, err, count


def beta_integral(beta, quad_tol=1e-9, y_span=700.0):
    """``int_0^inf ds / beta(s)`` with an error estimate.

    The half line is mapped to ``[0, 1)`` by ``s = t / (1 - t)`` and ``t``
    is parameterized as ``t = 1 / (1 + exp(-y))``, which places quadrature
    nodes geometrically close to both ends and never on them.  The
    integrand in ``y`` is ``s / beta(s)``; power-law behaviour beyond
    ``|y| = y_span`` is integrated in closed form.  Divergent integrals (or
    values above 1e3) come back as ``inf``.
    """

    def g(y):
        s = np.exp(y)
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            b = np.asarray(beta(s), dtype=float)
            out = s / b
        out = np.where(np.isinf(b), 0.0, out)
        if np.any(np.isnan(out)) or np.any(out < 0):
            raise EvaluationError("beta must be positive on (0, inf)")
        return out

    left = float(g(np.array([-y_span]))[0])
    right = float(g(np.array([y_span]))[0])
    tail = 0.0
    tail_err = 0.0
    for edge, inner, val in ((-y_span, -y_span + 1.0, left), (y_span, y_span - 1.0, right)):
        if val == 0.0:
            continue
        nxt = float(g(np.array([inner]))[0])
        if nxt <= 0.0:
            continue
        rate = math.log(nxt) - math.log(val)  # decay rate toward the edge
        if rate <= 1e-12:
            return IntegralResult(math.inf, math.inf)
        tail += val / rate
        far = float(g(np.array([inner + (1.0 if edge < 0 else -1.0)]))[0])
        if far > 0:
            rate2 = math.log(far) - math.log(nxt)
            tail_err += abs(val / rate - val / rate2) if rate2 > 0 else val / rate
    value, err, _ = adaptive_simpson(g, -y_span, y_span, quad_tol, n_init=int(2 * y_span))
    value += tail
    if value > UNBOUNDED_AT:
        return IntegralResult(math.inf, math.inf)
    return IntegralResult(value, err + tail_err)


def corollary21_beta(beta_tilde, dbeta_tilde, p, samples=None):
    """``beta(s) = beta_tilde(s)^p / ((1 - p) beta_tilde'(s))`` for a K-infinity-to-one function.

    ``beta_tilde`` must be strictly increasing with ``beta_tilde(0) = 0`` and
    values in ``[0, 1)``; its derivative is checked to be positive at
    ``samples`` (log-spaced over ``[1e-6, 1e2]`` by default).
    """
    if not (0 <= p < 1):
        raise DomainError(f"p must lie in [0, 1), got {p!r}")
    if samples is None:
        samples = np.logspace(-6, 2, 200)
    samples = np.asarray(samples, dtype=float)
    if float(beta_tilde(np.array([0.0]))[0]) != 0.0:
        raise ConstraintError("beta_tilde(0) must be 0")
    d = np.asarray(dbeta_tilde(samples), dtype=float)
    if np.any(~(d > 0)):
        raise ConstraintError("beta_tilde must be strictly increasing (derivative > 0)")
    v = np.asarray(beta_tilde(samples), dtype=float)
    if np.any(v < 0) or np.any(v > 1) or np.any(np.diff(v) < 0):
        raise ConstraintError("beta_tilde must be nondecreasing with values in [0, 1)")

    def beta(s):
        s = np.asarray(s, dtype=float)
        with np.errstate(divide="ignore", over="ignore"):
            return np.asarray(beta_tilde(s), dtype=float) ** p / ((1.0 - p) * np.asarray(dbeta_tilde(s), dtype=float))

    return beta


@dataclass(frozen=True)
class LyapunovSpec:
    V: ScalarField
    beta: Callable
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise DomainError("alpha must be positive")

    def validate(self, states, s_grid=None):
        """Spot-check positive definiteness of V and positivity/monotonicity of beta."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        dim = states.shape[1]
        if float(self.V.value(np.zeros(dim))) != 0.0:
            raise ConstraintError("V(0) must be 0")
        nz = states[np.any(states != 0, axis=1)]
        if any(float(self.V.value(x)) <= 0 for x in nz):
            raise ConstraintError("V must be positive away from the origin")
        s = np.logspace(-6, 2, 400) if s_grid is None else np.asarray(s_grid, dtype=float)
        b = np.asarray(self.beta(s), dtype=float)
        if np.any(~(b > 0)):
            raise ConstraintError("beta must be positive on (0, inf)")
        if np.any(np.diff(b) < 0):
            raise ConstraintError("beta must be nondecreasing")


@dataclass
class CertReport:
    grid_size: int
    max_residual: float
    argmax_state: list
    integral: float
    integral_err: float
    drift_ok: bool
    integral_ok: bool
    n_nonfinite: int = 0
    tol: float = 0.0
    note: str = "grid check: no violation found" 

    @property
    def verdict(self):
        return self.drift_ok and self.integral_ok and self.n_nonfinite == 0

    def to_dict(self):
        return {
            "max_residual": self.max_residual,
            "argmax_state": self.argmax_state,
            "integral": self.integral,
            "integral_err": self.integral_err,
            "verdict": self.verdict,
            "grid_size": self.grid_size,
            "drift_ok": self.drift_ok,
            "integral_ok": self.integral_ok,
            "n_nonfinite": self.n_nonfinite,
            "tol": self.tol,
            "note": self.note,
        }


def drift_grid(lo=-3.0, hi=3.0, num=601, exclude=1e-3):
    """Scalar states on ``linspace(lo, hi, num)`` outside ``(-exclude, exclude)``."""
    xs = np.linspace(lo, hi, num)
    return xs[np.abs(xs) >= exclude][:, None]


def _states(grid, dim):
    g = np.asarray(grid, dtype=float)
    g = g.reshape(-1, dim) if g.ndim < 2 else g
    if np.any(np.all(g == 0, axis=1)):
        raise DomainError("the grid must exclude the origin")
    return g


def _lv(sys, V, u, x, method, h):
    try:
        if method == "analytic":
            return generator_eval(sys, V, u, x)
        return generator_eval_fd(sys, V.value if isinstance(V, ScalarField) else V, u, x, h)
    except (EvaluationError, FloatingPointError):
        return math.nan


def check_drift_condition(sys, u, spec: LyapunovSpec, grid, tol=None, method="analytic", h=None,
                          quad_tol=1e-9):
    """Check ``LV(x) <= -beta(V(x)) / alpha`` on a grid and ``int ds/beta <= 1``.

    The residual ``LV + beta(V)/alpha`` is scaled by ``1 + |LV|``.  Default
    tolerance is 1e-9 with analytic derivatives and 1e-4 with finite
    differences.
    """
    if method not in ("analytic", "fd"):
        raise DomainError(f"method must be 'analytic' or 'fd', got {method!r}")
    if tol is None:
        tol = 1e-9 if method == "analytic" else 1e-4
    g = _states(grid, sys.dim)
    res = np.empty(len(g))
    for k, x in enumerate(g):
        lv = _lv(sys, spec.V, u, x, method, h)
        b = float(spec.beta(float(spec.V.value(x))))
        res[k] = (lv + b / spec.alpha) / (1.0 + abs(lv))
    finite = np.isfinite(res)
    n_bad = int(np.count_nonzero(~finite))
    masked = np.where(finite, res, -np.inf)
    k = int(np.argmax(masked)) if finite.any() else 0
    integral = beta_integral(spec.beta, quad_tol=quad_tol)
    return CertReport(
        grid_size=len(g),
        max_residual=float(masked[k]),
        argmax_state=[float(v) for v in g[k]],
        integral=integral.value,
        integral_err=integral.error,
        drift_ok=bool(finite.any() and masked[k] <= tol),
        integral_ok=bool(integral.value <= 1.0 + max(quad_tol, integral.error)),
        n_nonfinite=n_bad,
        tol=tol,
    )


@dataclass
class Corollary22Report:
    """``LW <= -1/alpha`` on a grid, plus the log-transformed counterpart.

    ``max_ito_gap`` is the largest ``1/2 (g . grad V)^2`` term, by which
    ``LV`` for ``V = -ln(1 - W)`` exceeds ``exp(V) LW``.
    """

    grid_size: int
    max_residual: float
    argmax_state: list
    verdict: bool
    transform_max_residual: float
    transform_verdict: bool
    max_ito_gap: float
    lw: np.ndarray = field(repr=False)

    def to_dict(self):
        return {
            "max_residual": self.max_residual,
            "argmax_state": self.argmax_state,
            "verdict": self.verdict,
            "transform_max_residual": self.transform_max_residual,
            "transform_verdict": self.transform_verdict,
            "max_ito_gap": self.max_ito_gap,
            "grid_size": self.grid_size,
        }


def corollary22_check(sys, u, W, alpha, grid, tol=1e-9, h=None):
    """Check ``LW(x) <= -1/alpha`` for a bounded ``0 <= W < 1`` on a grid.

    Also evaluates ``V = -ln(1 - W)`` against ``LV <= -exp(V)/alpha``.  The
    two are not equivalent for diffusions: ``LV = exp(V) LW + (g . grad V)^2 / 2``.
    """
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    g = _states(grid, sys.dim)
    Wf = W if isinstance(W, ScalarField) else ScalarField(W)
    res, tres, gaps, lws = [], [], [], []
    for x in g:
        w = float(Wf.value(x))
        if not (0.0 <= w < 1.0):
            raise DomainError(f"W must lie in [0, 1); W({x.tolist()}) = {w}")
        uval = float(u(x))
        fx = np.asarray(sys.drift(x, uval), dtype=float).reshape(sys.dim)
        gx = np.asarray(sys.diffusion(x, uval), dtype=float).reshape(sys.dim)
        if Wf.grad is not None and Wf.hess is not None:
            gw = np.asarray(Wf.grad(x), dtype=float).reshape(sys.dim)
            hw = np.asarray(Wf.hess(x), dtype=float).reshape(sys.dim, sys.dim)
        else:
            gw, hw = fd_gradient_hessian(Wf.value, x, h)
        lw = float(gw @ fx + 0.5 * gx @ hw @ gx)
        one_m = 1.0 - w
        gv = gw / one_m
        hv = hw / one_m + np.outer(gw, gw) / one_m**2
        lv = float(gv @ fx + 0.5 * gx @ hv @ gx)
        lws.append(lw)
        res.append((lw + 1.0 / alpha) / (1.0 + abs(lw)))
        tres.append((lv + 1.0 / (alpha * one_m)) / (1.0 + abs(lv)))
        gaps.append(0.5 * float(gx @ gv) ** 2)
    res, tres = np.array(res), np.array(tres)
    k = int(np.argmax(res))
    return Corollary22Report(
        grid_size=len(g),
        max_residual=float(res[k]),
        argmax_state=[float(v) for v in g[k]],
        verdict=bool(res[k] <= tol),
        transform_max_residual=float(np.max(tres)),
        transform_verdict=bool(np.max(tres) <= tol),
        max_ito_gap=float(np.max(gaps)),
        lw=np.array(lws),
    )


# ------------------------------------------------ W_j partial derivatives

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)
_GL_X2, _GL_W2 = np.polynomial.legendre.leggauss(32)


def _gl(f, a, b, nodes, weights):
    if a == b:
        return 0.0
    pieces = [(a, b)] if a * b >= 0 else [(a, 0.0), (0.0, b)]
    total = 0.0
    for lo, hi in pieces:
        half = 0.5 * (hi - lo)
        total += half * float(np.sum(weights * f(lo + half * (nodes + 1.0))))
    return total


def _integrate(f, a, b):
    fine = _gl(f, a, b, _GL_X, _GL_W)
    coarse = _gl(f, a, b, _GL_X2, _GL_W2)
    if abs(fine - coarse) > 1e-8 * (1.0 + abs(fine)):
        raise EvaluationError(f"quadrature on [{a}, {b}] did not converge")
    return fine


def _spow(x, b):
    return np.sign(x) * np.abs(x) ** b


def _wj_parts(cascade, kappa, j):
    rj = cascade.r[j - 1]
    rb = cascade.r_bar
    return rb / rj, (4.0 * rb - kappa - rj) / rb


def wj_value(cascade, kappa, j, x):
    """``W_j(x) = int_{x*_j}^{x_j} [[s]^{p} - [x*_j]^{p}]^{e} ds`` by Gauss-Legendre quadrature.

    ``p = r_bar / r_j`` and ``e = (4 r_bar - kappa - r_j) / r_bar``.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    p, e = _wj_parts(cascade, kappa, j)
    xs = float(cascade.evaluate(x).x_star[j - 1])
    c = float(_spow(xs, p))
    return _integrate(lambda s: _spow(_spow(s, p) - c, e), xs, float(x[j - 1]))


def _wj_analytic(cascade, kappa, j, x):
    p, e = _wj_parts(cascade, kappa, j)
    st = cascade.evaluate(x)
    xs = float(st.x_star[j - 1])
    c = float(_spow(xs, p))
    grad = np.empty(j)
    grad[j - 1] = float(_spow(st.xi[j - 1], e))
    if j > 1:
        inner = _integrate(lambda s: np.abs(_spow(s, p) - c) ** (e - 1.0), xs, float(x[j - 1]))
        grad[: j - 1] = -e * inner * cascade.xstar_pow_grad(j, x)
    return grad


@dataclass(frozen=True)
class WjResiduals:
    j: int
    state: tuple
    analytic: np.ndarray
    finite_diff: np.ndarray
    residuals: np.ndarray
    h: float

    @property
    def max_residual(self):
        return float(np.max(self.residuals))


def wj_partials_check(j, gains_or_kappa, cascade, x, h=1e-5):
    """Compare closed-form ``dW_j/dx_i`` (i <= j) with central differences of quadrature.

    Residuals are ``|analytic - fd| / max(|analytic|, 1e-300)``.  The step
    for ``x_i`` is ``h * max(|x_i|, 1e-3)``: the integrand has signed-power
    kinks at 0, so a step that is not small relative to ``|x_i|`` straddles them.
    """
    kappa = getattr(gains_or_kappa, "kappa", gains_or_kappa)
    x = np.asarray(x, dtype=float).reshape(-1)
    if not 1 <= j <= cascade.n:
        raise DomainError(f"step index must be in 1..{cascade.n}")
    ana = _wj_analytic(cascade, kappa, j, x)
    fd = np.empty(j)
    for i in range(j):
        step = h * max(abs(x[i]), 1e-3)
        e = np.zeros_like(x)
        e[i] = step
        fd[i] = (wj_value(cascade, kappa, j, x + e) - wj_value(cascade, kappa, j, x - e)) / (2 * step)
    res = np.abs(ana - fd) / np.maximum(np.abs(ana), 1e-300)
    return WjResiduals(j, tuple(x.tolist()), ana, fd, res, h)


def wj_richardson_ratio(j, gains_or_kappa, cascade, x, h=1e-3):
    """Ratio of FD errors at ``h`` and ``h/2``; about 4 for second-order convergence."""
    a = wj_partials_check(j, gains_or_kappa, cascade, x, h)
    b = wj_partials_check(j, gains_or_kappa, cascade, x, h / 2)
    err_a = np.abs(a.analytic - a.finite_diff)
    err_b = np.abs(b.analytic - b.finite_diff)
    k = int(np.argmax(err_a))
    return float(err_a[k] / err_b[k]) if err_b[k] > 0 else math.inf


def example21_certificate(alpha):
    """``V = x^2`` with ``beta(s) = sqrt(pi) sqrt(s) exp(s)`` for the scalar predefined-time loop."""
    V = ScalarField(
        lambda x: float(np.asarray(x, dtype=float).reshape(-1)[0] ** 2),
        grad=lambda x: 2.0 * np.asarray(x, dtype=float).reshape(1),
        hess=lambda x: np.array([[2.0]]),
    )
    rpi = math.sqrt(math.pi)
    return LyapunovSpec(V, lambda s: rpi * np.sqrt(s) * np.exp(s), float(alpha))
