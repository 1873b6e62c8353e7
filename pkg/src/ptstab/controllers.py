"""State-feedback controllers, homogeneous-gain derivation and the
adding-a-power-integrator cascade.

Controllers evaluate on states whose last axis is the state dimension and
broadcast over leading batch axes.  A single state returns a float.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConstraintError, DomainError
from .sigpow import sigpow
from .system import StrictFeedbackSystem

__all__ = [
    "Controller",
    "GainSet",
    "PowerBeta",
    "CascadeState",
    "Cascade",
    "CascadeStep",
    "zero_controller",
    "fixed_time_controller",
    "tmax_fixed_time",
    "predefined_controller_scalar",
    "example41_k2",
    "example41_controller",
    "corollary23_gains",
    "default_r_bar",
    "beta_from_corollary23",
    "alpha1_bound",
    "backstep_synthesize",
    "example42_cascade",
    "example42_controller",
]


def _spow(x, b):
    return np.sign(x) * np.abs(x) ** b


@dataclass(frozen=True)
class Controller:
    """A state-feedback law ``u = func(x)`` with audit metadata.

    If ``u_max`` is set the output is clipped to ``[-u_max, u_max]``; callers
    detect saturation with :meth:`saturated`.
    """

    func: Callable
    dim: int
    description: str
    params: dict = field(default_factory=dict)
    u_max: Optional[float] = None
    cascade: Optional["Cascade"] = None

    def __post_init__(self):
        u0 = self.func(np.zeros(self.dim))
        if np.asarray(u0) != 0:
            raise ConstraintError(f"admissible controllers vanish at the origin; u(0) = {u0!r}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        u = self.func(x)
        if self.u_max is not None:
            u = np.clip(u, -self.u_max, self.u_max)
        return float(u) if np.ndim(u) == 0 else u

    def saturated(self, u):
        if self.u_max is None:
            return np.zeros(np.shape(u), dtype=bool)
        return np.abs(u) >= self.u_max

    def __str__(self):
        items = ", ".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.params.items())
        return f"{self.description} [{items}]" if items else self.description


def zero_controller(dim=1):
    return Controller(lambda x: np.zeros(np.shape(x)[:-1]) if np.ndim(x) > 1 else 0.0, dim, "u = 0")


# ------------------------------------------------------- scalar examples


def _check_fixed_time(a, b):
    if not (0 < a < 1) or not b > 1:
        raise DomainError(f"need a in (0, 1) and b > 1, got a={a!r}, b={b!r}")


def fixed_time_controller(a, b):
    """``u = -x/2 - [x]^a - [x]^b`` for ``dx = u dt + x dw``."""
    _check_fixed_time(a, b)

    def func(x):
        x0 = np.asarray(x, dtype=float)[..., 0]
        return -0.5 * x0 - _spow(x0, a) - _spow(x0, b)

    return Controller(func, 1, "fixed-time: u = -x/2 - [x]^a - [x]^b", {"a": a, "b": b})


def tmax_fixed_time(a, b):
    """Fixed-time bound ``1/(1-a) + 1/(b-1)`` on the expected settling time."""
    _check_fixed_time(a, b)
    return 1.0 / (1.0 - a) + 1.0 / (b - 1.0)


def predefined_controller_scalar(alpha, u_max=1e12, x_guard=6.0):
    """``u = -(sqrt(pi)/(2 alpha)) sign(x) exp(x^2) - x/2``; ``E[T] <= alpha``.

    Beyond ``|x| > x_guard`` the control saturates at ``-sign(x) * u_max``
    instead of overflowing; inside it is clipped to ``u_max``.
    """
    if not alpha > 0:
        raise DomainError(f"alpha must be positive, got {alpha!r}")
    gain = math.sqrt(math.pi) / (2.0 * alpha)
    cap = x_guard * x_guard

    def func(x):
        x0 = np.asarray(x, dtype=float)[..., 0]
        sq = np.minimum(x0 * x0, cap)
        u = -gain * np.sign(x0) * np.exp(sq) - 0.5 * x0
        return np.where(np.abs(x0) > x_guard, -np.sign(x0) * u_max, u)

    return Controller(
        func,
        1,
        "predefined-time: u = -(sqrt(pi)/(2 alpha)) sign(x) exp(x^2) - x/2",
        {"alpha": alpha, "x_guard": x_guard},
        u_max=u_max,
    )


def example41_k2(k1, k3):
    """``k2 = k1 / (3 (k1/4 - 1) (k3 - 1) / 2)``."""
    if not k1 > 4:
        raise ConstraintError(f"k1 must exceed 4, got {k1!r}")
    if not k3 > 1:
        raise ConstraintError(f"k3 must exceed 1, got {k3!r}")
    return k1 / (3.0 * (k1 / 4.0 - 1.0) * (k3 - 1.0) / 2.0)


def example41_controller(k1, k2, k3, k4):
    """``u = -[x]^{5/3} - [x]^3/2 - (k1/2k4)[x]^{1/3} - (k2/2k4)[x]^{k3}``."""
    if not k1 > 4 or not k3 > 1 or not k4 > 0 or not k2 > 0:
        raise ConstraintError(f"need k1 > 4, k2 > 0, k3 > 1, k4 > 0; got {(k1, k2, k3, k4)!r}")
    c1 = k1 / (2.0 * k4)
    c2 = k2 / (2.0 * k4)

    def func(x):
        x0 = np.asarray(x, dtype=float)[..., 0]
        return -_spow(x0, 5.0 / 3.0) - 0.5 * _spow(x0, 3.0) - c1 * _spow(x0, 1.0 / 3.0) - c2 * _spow(x0, k3)

    return Controller(
        func, 1, "example41 predefined-time controller", {"k1": k1, "k2": k2, "k3": k3, "k4": k4}
    )


# ---------------------------------------------------------- gain design


@dataclass(frozen=True)
class GainSet:
    """Gains of the strict-feedback design and the constraint flags.

    ``checks`` maps each constraint name to whether it holds; ``valid`` is
    their conjunction.  ``k2_formula`` is the value prescribed by the design
    formula; ``k2`` differs from it only when overridden.
    """

    r: tuple
    r_bar: float
    kappa: float
    n: int
    k1: float
    k2: float
    k3: float
    k4: float
    b1: float
    b2: float
    a: float
    k1_threshold: float
    k2_formula: float
    checks: dict

    @property
    def valid(self):
        return all(self.checks.values())

    @property
    def failing(self):
        return [name for name, ok in self.checks.items() if not ok]

    @property
    def beta_high_coef(self):
        """Coefficient ``(a - a b1) / ((a - a b1 - 1)(b2 - 1))`` of the high power."""
        m = self.a - self.a * self.b1
        return m / ((m - 1.0) * (self.b2 - 1.0))

    def to_dict(self):
        return {
            "r": [float(v) for v in self.r],
            "r_bar": self.r_bar,
            "kappa": self.kappa,
            "n": self.n,
            "k1": self.k1,
            "k2": self.k2,
            "k3": self.k3,
            "k4": self.k4,
            "b1": self.b1,
            "b2": self.b2,
            "a": self.a,
            "k1_threshold": self.k1_threshold,
            "k2_formula": self.k2_formula,
            "checks": dict(self.checks),
            "valid": self.valid,
        }


def default_r_bar(r):
    """Smallest ``r_bar`` with ``r_bar / r_i >= 2`` for every weight."""
    return max(2.0 * float(ri) for ri in r)


def corollary23_gains(r, kappa, r_bar, k1, k3, n, k4, k2=None):
    """Derive ``b1, b2, a, k2`` from ``(r, kappa, r_bar, k1, k3, k4)``.

    Constraint violations do not raise; they are reported in ``checks``.
    Passing ``k2`` overrides the formula value and adds a check that the
    override is at least the formula value.
    """
    r = tuple(float(v) for v in r)
    r_bar = float(r_bar)
    kappa = float(kappa)
    if not k4 > 0:
        raise DomainError(f"k4 must be positive, got {k4!r}")
    if not r_bar > 0 or n < 1:
        raise DomainError("r_bar must be positive and n >= 1")
    den = 4.0 * r_bar - kappa
    b1 = 4.0 * r_bar / den
    b2 = (4.0 * r_bar + r_bar * k3) / den
    a = 2.0 ** (-b1) * k1
    k1_threshold = 2.0**b1 / (1.0 - b1) if b1 < 1 else math.inf
    m = a - a * b1
    with np.errstate(divide="ignore", invalid="ignore"):
        k2_formula = float(
            np.float64(m) / ((m - 1.0) * (b2 - 1.0)) * n ** ((r_bar * k3 + kappa) / den) * 2.0**b2
        )
    checks = {
        "kappa_negative": kappa < 0,
        "r_bar_ge_2r": r_bar >= max(2.0 * ri for ri in r[: n]),
        "b1_in_unit_interval": 0 < b1 < 1,
        "b2_gt_1": b2 > 1,
        "k3_gt_minus_kappa_over_r_bar": k3 > -kappa / r_bar,
        "k1_gt_threshold": k1 > k1_threshold,
        "a_minus_ab1_minus_1_positive": m - 1.0 > 0,
    }
    if k2 is None:
        k2 = k2_formula
    else:
        checks["k2_ge_formula"] = k2 >= k2_formula
    return GainSet(r, r_bar, kappa, int(n), float(k1), float(k2), float(k3), float(k4),
                   b1, b2, a, k1_threshold, k2_formula, checks)


@dataclass(frozen=True)
class PowerBeta:
    """``beta(s) = c_low s^e_low + c_high s^e_high`` on ``s >= 0``."""

    c_low: float
    e_low: float
    c_high: float
    e_high: float

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        out = self.c_low * s**self.e_low + self.c_high * s**self.e_high
        return float(out) if out.ndim == 0 else out

    def split_bound(self):
        """Closed form of ``int_0^1 ds/(c_low s^e_low) + int_1^inf ds/(c_high s^e_high)``."""
        return 1.0 / ((1.0 - self.e_low) * self.c_low) + 1.0 / ((self.e_high - 1.0) * self.c_high)


def beta_from_corollary23(gains: GainSet):
    """Rate function ``beta(s) = a s^b1 + (a - a b1)/((a - a b1 - 1)(b2 - 1)) s^b2``."""
    core = ("b1_in_unit_interval", "b2_gt_1", "a_minus_ab1_minus_1_positive")
    bad = [c for c in core if not gains.checks.get(c, False)]
    if bad:
        raise ConstraintError(f"gain set violates {bad}")
    return PowerBeta(gains.a, gains.b1, gains.beta_high_coef, gains.b2)


def alpha1_bound(j, r, r_bar, kappa, k1, k4, h_hi_prev):
    """Explicit coefficient from the cross-term estimate at step ``j >= 2``.

    With ``c = 2^{1-(r_{j-1}+kappa)/r_bar}`` and
    ``Phi = r_bar k1 / (k4 (4 r_bar - kappa - r_{j-1}) h_hi c)``, returns
    ``h_hi c (r_{j-1}+kappa)/(4 r_bar) Phi^{-(4 r_bar - kappa - r_{j-1})/(r_{j-1}+kappa)}``.
    """
    if j < 2:
        raise DomainError("the cross-term coefficient exists only for j >= 2")
    rp = float(r[j - 2])
    c = 2.0 ** (1.0 - (rp + kappa) / r_bar)
    phi = r_bar * k1 / (k4 * (4.0 * r_bar - kappa - rp) * h_hi_prev * c)
    return h_hi_prev * c * (rp + kappa) / (4.0 * r_bar) * phi ** (-(4.0 * r_bar - kappa - rp) / (rp + kappa))


# ------------------------------------------------------------- cascade


@dataclass(frozen=True)
class CascadeStep:
    """Gain function ``beta_j(xbar_j, xi_j)``.

    ``dbeta``, when given, returns ``(d beta / d xbar_j explicit, d beta / d xi_j)``
    and enables analytic chain rules through the cascade.
    """

    beta: Callable
    dbeta: Optional[Callable] = None
    description: str = ""


@dataclass(frozen=True)
class CascadeState:
    """Virtual errors, virtual controls and gain values at one or more states."""

    xi: list
    x_star: list
    beta: list


@dataclass(frozen=True)
class Cascade:
    """``x*_1 = 0``, ``xi_j = [x_j]^{r_bar/r_j} - [x*_j]^{r_bar/r_j}``,
    ``x*_{j+1} = -beta_j [xi_j]^{r_{j+1}/r_bar}``, ``u = -beta_n [xi_n]^{u_exponent}``.
    """

    r: tuple
    r_bar: float
    steps: tuple
    u_exponent: float

    @property
    def n(self):
        return len(self.steps)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        n = self.n
        xi, xs, bt = [], [np.zeros(x.shape[:-1]) if x.ndim > 1 else 0.0], []
        for j in range(n):
            p = self.r_bar / self.r[j]
            xi_j = _spow(x[..., j], p) - _spow(xs[j], p)
            b_j = self.steps[j].beta(x[..., : j + 1], xi_j)
            xi.append(xi_j)
            bt.append(b_j)
            if j < n - 1:
                xs.append(-b_j * _spow(xi_j, self.r[j + 1] / self.r_bar))
        return CascadeState(xi, xs, bt)

    def control(self, x):
        st = self.evaluate(x)
        return -st.beta[-1] * _spow(st.xi[-1], self.u_exponent)

    def xstar_pow(self, j, x):
        """``[x*_j]^{r_bar/r_j}`` for 1-based ``j``; equals ``-beta_{j-1}^{r_bar/r_j} xi_{j-1}``."""
        st = self.evaluate(x)
        return _spow(st.x_star[j - 1], self.r_bar / self.r[j - 1])

    def xstar_pow_grad(self, j, x, h=1e-6):
        """Gradient of ``[x*_j]^{r_bar/r_j}`` with respect to ``x_1..x_{j-1}``.

        Uses the chain rule when every earlier step has ``dbeta``; otherwise
        central differences with step ``h``.
        """
        x = np.asarray(x, dtype=float).reshape(-1)
        if j == 1:
            return np.zeros(0)
        if all(s.dbeta is not None for s in self.steps[: j - 1]):
            return self._chain_grads(x)[j - 1]
        grad = np.empty(j - 1)
        for i in range(j - 1):
            e = np.zeros_like(x)
            e[i] = h
            grad[i] = (self.xstar_pow(j, x + e) - self.xstar_pow(j, x - e)) / (2 * h)
        return grad

    def _chain_grads(self, x):
        # grads[j] = d [x*_{j+1}]^{r_bar/r_{j+1}} / d x_{1..j}, 0-based j
        st = self.evaluate(x)
        grads = [np.zeros(0)]
        dxi_prev = None
        for j in range(self.n):
            p = self.r_bar / self.r[j]
            dxi = np.zeros(j + 1)
            dxi[:j] = -grads[j]
            dxi[j] = p * abs(x[j]) ** (p - 1.0)
            if j == self.n - 1:
                break
            dexp, dxi_coef = self.steps[j].dbeta(x[: j + 1], st.xi[j])
            dbeta = np.asarray(dexp, dtype=float).reshape(j + 1) + dxi_coef * dxi
            s = self.r_bar / self.r[j + 1]
            b = st.beta[j]
            # [x*_{j+1}]^{s} = -b^s xi_j
            grads.append(-(s * b ** (s - 1.0) * dbeta * st.xi[j] + b**s * dxi))
            dxi_prev = dxi
        return grads


def backstep_synthesize(sys: StrictFeedbackSystem, gains: GainSet, envelopes, alpha_bounds=None):
    """Build the cascade controller for a strict-feedback system.

    ``envelopes[0] = (phi_hat_1, psi_bar_1)`` are smooth bounds on
    ``xbar_1`` used in the first-step gain.  ``alpha_bounds[j]`` for each
    step ``j >= 2`` (0-based index ``j - 1``) is a sequence of callables on
    ``xbar_j``: either ``(alpha2, alpha3, alpha4)``, in which case the
    cross-term coefficient is computed in closed form, or
    ``(alpha1, alpha2, alpha3, alpha4)``.
    """
    if not gains.valid:
        raise ConstraintError(f"gain set violates {gains.failing}")
    n = sys.n
    if gains.n != n:
        raise ConstraintError(f"gains derived for n={gains.n}, system has n={n}")
    r, rb, kap = tuple(float(v) for v in sys.r), gains.r_bar, gains.kappa
    if len(gains.r) < n or not np.allclose(gains.r[:n], r[:n], rtol=1e-12) or kap != sys.kappa:
        raise ConstraintError("gain set weights/kappa do not match the system")
    k1, k2, k3, k4 = gains.k1, gains.k2, gains.k3, gains.k4
    if envelopes is None or len(envelopes) < 1 or len(envelopes[0]) != 2:
        raise ConstraintError("first step needs (phi_hat_1, psi_bar_1) envelope suppliers")
    phi1, psi1 = envelopes[0]
    alpha_bounds = list(alpha_bounds or [])
    if len(alpha_bounds) < n - 1 and n > 1:
        raise ConstraintError(f"need alpha suppliers for steps 2..{n}, got {len(alpha_bounds)}")

    h1 = sys.h_lo[0]
    c_psi = (4.0 * rb - kap - r[0]) / (2.0 * r[0] * h1)

    def first_step(xb, xi, q=sys.q[0]):
        base = c_psi * psi1(xb) ** 2 + n * k1 / (h1 * k4) + k2 / (h1 * k4) * np.abs(xi) ** k3 + phi1(xb) / h1
        return base ** (1.0 / q)

    steps = [CascadeStep(first_step, description="step 1")]
    for j in range(2, n + 1):
        sup = tuple(alpha_bounds[j - 2])
        if len(sup) == 3:
            a1 = alpha1_bound(j, r, rb, kap, k1, k4, sys.h_hi[j - 2])
            sup = (lambda xb, a1=a1: a1,) + sup
        elif len(sup) != 4:
            raise ConstraintError(f"step {j}: expected 3 or 4 alpha suppliers, got {len(sup)}")
        hl = sys.h_lo[j - 1]

        def step(xb, xi, sup=sup, hl=hl, q=sys.q[j - 1], j=j):
            alphas = sum(np.asarray(s(xb), dtype=float) for s in sup)
            base = (n - j + 1) * k1 / (hl * k4) + alphas / hl + k2 / (k4 * hl) * np.abs(xi) ** k3
            return base ** (1.0 / q)

        steps.append(CascadeStep(step, description=f"step {j}"))

    cascade = Cascade(tuple(r), rb, tuple(steps), r[n] / rb)
    return Controller(
        cascade.control,
        n,
        f"backstepping cascade, n={n}",
        {"k1": k1, "k2": k2, "k3": k3, "k4": k4, "r_bar": rb, "kappa": kap},
        cascade=cascade,
    )


# Fixed constants of the example42 reference controller.
_E42_R = (1.0, 0.45, 0.15)
_E42_RBAR = 2.0


def _e42_beta1(xb, xi):
    return (47.1 + 165.0 * np.abs(xi) ** 3.1) ** 0.6


def _e42_dbeta1(xb, xi):
    inner = 47.1 + 165.0 * abs(xi) ** 3.1
    return 0.0, 0.6 * inner ** (-0.4) * 165.0 * 3.1 * abs(xi) ** 2.1 * np.sign(xi)


def example42_cascade():
    """Cascade of the example42 reference controller.

    ``beta_1 = (47.1 + 165|xi_1|^{3.1})^{0.6}`` and
    ``u = -(10.9 + 3.5 beta_1 + 82.4|xi_2|^{0.75}) [xi_2]^{1/8}``.
    """

    def beta2(xb, xi):
        xi1 = _spow(xb[..., 0], _E42_RBAR / _E42_R[0])
        return 10.9 + 3.5 * _e42_beta1(None, xi1) + 82.4 * np.abs(xi) ** 0.75

    steps = (
        CascadeStep(_e42_beta1, _e42_dbeta1, "(47.1 + 165|xi1|^3.1)^0.6"),
        CascadeStep(beta2, None, "10.9 + 3.5 beta1 + 82.4|xi2|^0.75"),
    )
    return Cascade(_E42_R, _E42_RBAR, steps, 1.0 / 8.0)


def example42_controller():
    """The example42 reference controller with its fixed numeric constants."""
    cascade = example42_cascade()
    return Controller(
        cascade.control,
        2,
        "example42 reference controller: u = -(10.9 + 3.5 beta1 + 82.4|xi2|^0.75)[xi2]^(1/8)",
        {"k1": 65.6, "k2": 494.6, "k3": 3.1, "k4": 3.0, "r_bar": _E42_RBAR},
        cascade=cascade,
    )
