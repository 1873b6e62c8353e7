"""Ito system models, strict-feedback cascades and the infinitesimal generator.

States are numpy arrays whose last axis is the state dimension; drift and
diffusion callables must broadcast over any leading (batch) axes.  Noise is
a single scalar Wiener channel, so the diffusion returns one vector per state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigError, ConstraintError, DomainError, EvaluationError
from .sigpow import sigpow

__all__ = [
    "ItoSystem",
    "StrictFeedbackSystem",
    "ScalarField",
    "r_recursion",
    "kappa_interval",
    "kappa_positivity_bound",
    "generator_eval",
    "generator_eval_fd",
    "fd_gradient_hessian",
    "example21_system",
    "example41_system",
    "example42_system",
    "PRESETS",
    "make_system",
]


def _spow(x, b):
    # sigpow without the finiteness check; used on hot simulation paths
    return np.sign(x) * np.abs(x) ** b


@dataclass(frozen=True)
class ItoSystem:
    """``dx = drift(x, u) dt + diffusion(x, u) dw`` with scalar Wiener ``w``."""

    dim: int
    drift: Callable
    diffusion: Callable
    name: str = "custom"

    def __post_init__(self):
        if int(self.dim) < 1:
            raise DomainError(f"dim must be a positive integer, got {self.dim!r}")
        zero = np.zeros(self.dim)
        f0 = np.asarray(self.drift(zero, 0.0), dtype=float)
        g0 = np.asarray(self.diffusion(zero, 0.0), dtype=float)
        if g0.shape != (self.dim,):
            raise DomainError(
                f"diffusion must return one {self.dim}-vector (scalar Wiener channel), "
                f"got shape {g0.shape}"
            )
        if f0.shape != (self.dim,):
            raise DomainError(f"drift must return a {self.dim}-vector, got shape {f0.shape}")
        if np.any(f0 != 0) or np.any(g0 != 0):
            raise DomainError("the origin must be an equilibrium: drift(0,0) = diffusion(0,0) = 0")


def kappa_interval(q: Sequence[float]):
    """Admissible open interval ``(lower, 0)`` for the homogeneity offset kappa.

    ``lower = -1 / (1 + sum_{s=1}^{n-1} prod_{t<=s} 1/q_t)``.
    """
    q = list(q)
    if not q or any(not qi > 1 for qi in q):
        raise DomainError(f"all powers must exceed 1, got {q!r}")
    total = 0
    prod = 1
    for qi in q[:-1]:
        prod = prod / qi
        total = total + prod
    return -1 / (1 + total), 0


def kappa_positivity_bound(q: Sequence[float]):
    """Exact infimum of kappa keeping every weight ``r_1..r_{n+1}`` positive.

    Unrolling the recursion gives ``r_{n+1} q_1..q_n = 1 + kappa (1 + q_1 + q_1 q_2 + ...
    + q_1..q_{n-1})``, so the bound is ``-1 / (1 + sum_{s=1}^{n-1} prod_{t<=s} q_t)``.
    It is tighter than the lower end of :func:`kappa_interval` whenever ``n >= 2``.
    """
    q = list(q)
    if not q or any(not qi > 1 for qi in q):
        raise DomainError(f"all powers must exceed 1, got {q!r}")
    total = 0
    prod = 1
    for qi in q[:-1]:
        prod = prod * qi
        total = total + prod
    return -1 / (1 + total)


def r_recursion(q: Sequence[float], kappa):
    """Homogeneous weights ``r_1 = 1``, ``r_{i+1} = (r_i + kappa) / q_i``.

    Returns ``n + 1`` weights.  Works with :class:`fractions.Fraction` input
    for exact arithmetic.
    """
    q = list(q)
    if not q or any(not qi > 1 for qi in q):
        raise DomainError(f"all powers must exceed 1, got {q!r}")
    r = [1 if not isinstance(kappa, float) else 1.0]
    for qi in q:
        r.append((r[-1] + kappa) / qi)
    if any(not ri > 0 for ri in r):
        raise ConstraintError(f"kappa={kappa!r} is inadmissible: weights {r!r} not all positive")
    return r


@dataclass(frozen=True)
class StrictFeedbackSystem:
    """High-order strict-feedback cascade.

    ``dx_i = (h_i [x_{i+1}]^{q_i} + f_i(x_1..x_i)) dt + g_i(x_1..x_i) dw`` for
    ``i < n`` and ``dx_n = (h_n [u]^{q_n} + f_n(x)) dt + g_n(x) dw``.

    ``f[i]`` and ``g[i]`` take the leading ``i + 1`` coordinates (last axis)
    and return one value per state.  ``h`` are the coefficients actually used
    in simulation; ``h_lo``/``h_hi`` are the design bounds.  Growth data
    ``varpi``/``rho`` are ``n x n`` lower-triangular exponent offsets with
    envelopes ``phi``/``psi``.
    """

    q: tuple
    h: tuple
    h_lo: tuple
    h_hi: tuple
    f: tuple
    g: tuple
    kappa: float
    varpi: Optional[np.ndarray] = None
    rho: Optional[np.ndarray] = None
    phi: Optional[tuple] = None
    psi: Optional[tuple] = None
    name: str = "strict-feedback"
    r: tuple = field(init=False)

    def __post_init__(self):
        n = len(self.q)
        for label in ("h", "h_lo", "h_hi", "f", "g"):
            if len(getattr(self, label)) != n:
                raise DomainError(f"{label} must have {n} entries")
        for i in range(n):
            if not (0 < self.h_lo[i] <= self.h_hi[i]):
                raise DomainError(f"need 0 < h_lo <= h_hi at step {i + 1}")
        lo, hi = kappa_interval(self.q)
        if not (lo < self.kappa < hi):
            raise ConstraintError(f"kappa={self.kappa} outside admissible interval ({lo}, {hi})")
        object.__setattr__(self, "r", tuple(r_recursion(self.q, self.kappa)))
        zero = np.zeros(n)
        for i in range(n):
            if self.f[i](zero[: i + 1]) != 0 or self.g[i](zero[: i + 1]) != 0:
                raise DomainError(f"f_{i + 1} and g_{i + 1} must vanish at the origin")

    @property
    def n(self):
        return len(self.q)

    def drift(self, x, u):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        n = self.n
        for i in range(n):
            nxt = x[..., i + 1] if i < n - 1 else np.asarray(u, dtype=float)
            out[..., i] = self.h[i] * _spow(nxt, self.q[i]) + self.f[i](x[..., : i + 1])
        return out

    def diffusion(self, x, u):
        x = np.asarray(x, dtype=float)
        out = np.empty_like(x)
        for i in range(self.n):
            out[..., i] = self.g[i](x[..., : i + 1])
        return out

    def to_ito(self):
        return ItoSystem(self.n, self.drift, self.diffusion, name=self.name)

    def growth_violation(self, grid):
        """Largest ``|f_i| - bound`` and ``|g_i| - bound`` over ``grid`` (rows are states).

        Nonpositive values mean the growth envelope holds on every grid point.
        """
        if self.varpi is None or self.phi is None:
            raise ConfigError("growth data (varpi, rho, phi, psi) not supplied")
        x = np.atleast_2d(np.asarray(grid, dtype=float))
        r, k = self.r, self.kappa
        worst_f = worst_g = -np.inf
        for i in range(self.n):
            xb = x[:, : i + 1]
            ax = np.abs(xb)
            fb = sum(ax[:, j] ** (self.varpi[i][j] + (r[i] + k) / r[j]) for j in range(i + 1))
            gb = sum(ax[:, j] ** (self.rho[i][j] + (2 * r[i] + k) / (2 * r[j])) for j in range(i + 1))
            worst_f = max(worst_f, float(np.max(np.abs(self.f[i](xb)) - self.phi[i](xb) * fb)))
            worst_g = max(worst_g, float(np.max(np.abs(self.g[i](xb)) - self.psi[i](xb) * gb)))
        return worst_f, worst_g


@dataclass(frozen=True)
class ScalarField:
    """A Lyapunov-type function with optional analytic gradient and Hessian."""

    value: Callable
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None

    def __call__(self, x):
        return self.value(x)


def _as_state(x, dim):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (dim,):
        raise DomainError(f"state must have {dim} entries, got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError(f"state must be finite, got {x!r}")
    return x


def _closed_loop(sys, u, x):
    uval = float(u(x))
    f = np.asarray(sys.drift(x, uval), dtype=float).reshape(sys.dim)
    g = np.asarray(sys.diffusion(x, uval), dtype=float).reshape(sys.dim)
    return f, g


def _combine(grad, hess, f, g, x):
    lv = float(grad @ f + 0.5 * g @ hess @ g)
    if not np.isfinite(lv):
        raise EvaluationError(f"non-finite generator value at x={x!r}", state=x)
    return lv


def generator_eval(sys: ItoSystem, V: ScalarField, u, x):
    """``LV(x) = grad V . f + 1/2 g' Hess V g`` along the closed loop ``u``."""
    if V.grad is None or V.hess is None:
        raise DomainError("generator_eval needs analytic grad and hess; use generator_eval_fd")
    x = _as_state(x, sys.dim)
    f, g = _closed_loop(sys, u, x)
    grad = np.asarray(V.grad(x), dtype=float).reshape(sys.dim)
    hess = np.asarray(V.hess(x), dtype=float).reshape(sys.dim, sys.dim)
    return _combine(grad, hess, f, g, x)


def fd_gradient_hessian(V, x, h=None):
    """Central-difference gradient and Hessian of a scalar callable."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if h is None:
        h = 1e-5 * (1.0 + float(np.max(np.abs(x))))
    if not h > 0:
        raise DomainError(f"step must be positive, got {h!r}")
    v0 = float(V(x))
    grad = np.empty(n)
    hess = np.empty((n, n))
    eye = np.eye(n) * h
    for i in range(n):
        vp, vm = float(V(x + eye[i])), float(V(x - eye[i]))
        grad[i] = (vp - vm) / (2 * h)
        hess[i, i] = (vp - 2 * v0 + vm) / h**2
        for j in range(i):
            vpp = float(V(x + eye[i] + eye[j]))
            vpm = float(V(x + eye[i] - eye[j]))
            vmp = float(V(x - eye[i] + eye[j]))
            vmm = float(V(x - eye[i] - eye[j]))
            hess[i, j] = hess[j, i] = (vpp - vpm - vmp + vmm) / (4 * h**2)
    return grad, hess


def generator_eval_fd(sys: ItoSystem, V, u, x, h=None):
    """Same as :func:`generator_eval` with central differences for grad/Hessian.

    The default step is ``1e-5 * (1 + max|x_i|)``.
    """
    x = _as_state(x, sys.dim)
    f, g = _closed_loop(sys, u, x)
    grad, hess = fd_gradient_hessian(V, x, h)
    return _combine(grad, hess, f, g, x)


# ---------------------------------------------------------------- presets


def example21_system():
    """Scalar ``dx = u dt + x dw``."""
    return ItoSystem(
        1,
        lambda x, u: np.asarray(u, dtype=float)[..., None] * np.ones_like(np.asarray(x, dtype=float)),
        lambda x, u: np.asarray(x, dtype=float) * 1.0,
        name="example21",
    )


def example41_system():
    """Scalar ``dx = ([x]^{5/3} + u) dt + x^2 dw``."""

    def drift(x, u):
        x = np.asarray(x, dtype=float)
        return _spow(x, 5.0 / 3.0) + np.asarray(u, dtype=float)[..., None]

    return ItoSystem(1, drift, lambda x, u: np.asarray(x, dtype=float) ** 2, name="example41")


def example42_system(h1=1.0, h2=1.0):
    """Two-state cascade with powers (5/3, 4/3) and kappa = -1/4.

    ``dx1 = (h1 [x2]^{5/3} - [x1]^{3/4}) dt + sin(x1)|x1| dw``,
    ``dx2 = h2 [u]^{4/3} dt``.  Design bounds are ``1 <= h_i <= 2``; the
    actual coefficients ``h1, h2`` are free knobs (default 1).
    """
    zero = lambda xb: np.zeros(np.shape(xb)[:-1]) if np.ndim(xb) > 1 else 0.0
    one = lambda xb: np.ones(np.shape(xb)[:-1]) if np.ndim(xb) > 1 else 1.0
    return StrictFeedbackSystem(
        q=(5.0 / 3.0, 4.0 / 3.0),
        h=(float(h1), float(h2)),
        h_lo=(1.0, 1.0),
        h_hi=(2.0, 2.0),
        f=(lambda xb: -_spow(xb[..., 0], 0.75), zero),
        g=(lambda xb: np.sin(xb[..., 0]) * np.abs(xb[..., 0]), zero),
        kappa=-0.25,
        varpi=np.array([[0.0, 0.0], [0.0, 0.0]]),
        rho=np.array([[0.125, 0.0], [0.0, 0.0]]),
        phi=(one, zero),
        psi=(one, zero),
        name="example42",
    )


PRESETS = {
    "example21": example21_system,
    "example41": example41_system,
    "example42": example42_system,
}


def make_system(name, **knobs):
    """Build a preset by name and return it as an :class:`ItoSystem`."""
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    sys = factory(**knobs)
    return sys.to_ito() if isinstance(sys, StrictFeedbackSystem) else sys
