"""Signed powers and the power inequalities used by the backstepping design.

The signed power of ``a`` with exponent ``b`` is ``sign(a) * |a|**b``.  It keeps
odd symmetry for fractional exponents, so controllers built from it are
defined for negative states and vanish at the origin.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .errors import DomainError

__all__ = [
    "sigpow",
    "sigpow_d1",
    "sigpow_d2",
    "LemmaResiduals",
    "lemma_residuals",
    "holder_residual",
    "young_residual",
    "root_sum_residuals",
    "power_sum_residual",
]


def _finite(a, name="a"):
    arr = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite, got {a!r}")
    return arr


def _out(arr):
    return float(arr) if np.ndim(arr) == 0 else arr


def sigpow(a, b):
    """Return ``sign(a) * |a|**b`` elementwise.

    ``sigpow(0, b)`` is 0 for every ``b >= 0``, including ``b = 0``.
    """
    arr = _finite(a)
    b = float(b)
    if not np.isfinite(b) or b < 0:
        raise DomainError(f"exponent must be a finite nonnegative real, got {b!r}")
    return _out(np.sign(arr) * np.abs(arr) ** b)


def _check_c2(b):
    b = float(b)
    if not b >= 2:
        raise DomainError(f"signed power is only C^2 for exponent >= 2, got {b!r}")
    return b


def sigpow_d1(a, b):
    """First derivative of :func:`sigpow` in ``a``: ``b * |a|**(b-1)``."""
    b = _check_c2(b)
    arr = _finite(a)
    return _out(b * np.abs(arr) ** (b - 1.0))


def sigpow_d2(a, b):
    """Second derivative of :func:`sigpow` in ``a``: ``b(b-1) * sigpow(a, b-2)``."""
    b = _check_c2(b)
    arr = _finite(a)
    return _out(b * (b - 1.0) * np.sign(arr) * np.abs(arr) ** (b - 2.0))


# Each residual below is RHS - LHS of one inequality; nonnegative when it holds.


def holder_residual(x, y, p, q):
    """``2**(1-p) |[x]^q - [y]^q|**p - |[x]^(pq) - [y]^(pq)|`` for 0 < p < 1 < q."""
    if not (0 < p < 1) or not q > 1:
        raise DomainError(f"need 0 < p < 1 and q > 1, got p={p!r}, q={q!r}")
    x, y = _finite(x, "x"), _finite(y, "y")
    lhs = np.abs(np.sign(x) * np.abs(x) ** (p * q) - np.sign(y) * np.abs(y) ** (p * q))
    rhs = 2.0 ** (1 - p) * np.abs(np.sign(x) * np.abs(x) ** q - np.sign(y) * np.abs(y) ** q) ** p
    return _out(rhs - lhs), _out(rhs)


def young_residual(x, y, p, q, f):
    """Weighted Young inequality for ``|x|^p |y|^q`` with positive weight ``f``."""
    if not (p > 0 and q > 0):
        raise DomainError(f"need p, q > 0, got p={p!r}, q={q!r}")
    f = _finite(f, "f")
    if np.any(f <= 0):
        raise DomainError("weight f must be positive")
    ax, ay = np.abs(_finite(x, "x")), np.abs(_finite(y, "y"))
    lhs = ax**p * ay**q
    rhs = p / (p + q) * f * ax ** (p + q) + q / (p + q) * f ** (-p / q) * ay ** (p + q)
    return _out(rhs - lhs), _out(rhs)


def root_sum_residuals(x, y, a):
    """Both sides of ``(|x|+|y|)^(1/a) <= |x|^(1/a)+|y|^(1/a) <= 2^((a-1)/a)(|x|+|y|)^(1/a)``.

    Returns ``(lower_residual, upper_residual, middle)``.
    """
    if not a >= 1:
        raise DomainError(f"need a >= 1, got {a!r}")
    ax, ay = np.abs(_finite(x, "x")), np.abs(_finite(y, "y"))
    left = (ax + ay) ** (1.0 / a)
    middle = ax ** (1.0 / a) + ay ** (1.0 / a)
    right = 2.0 ** ((a - 1.0) / a) * left
    return _out(middle - left), _out(right - middle), _out(right)


def power_sum_residual(terms, b):
    """``max(j**(b-1), 1) * sum(t**b) - (sum t)**b`` over the last axis of ``terms``."""
    if not b > 0:
        raise DomainError(f"need b > 0, got {b!r}")
    t = _finite(terms, "terms")
    if np.any(t < 0):
        raise DomainError("terms must be nonnegative")
    j = t.shape[-1]
    rhs = max(j ** (b - 1.0), 1.0) * np.sum(t**b, axis=-1)
    lhs = np.sum(t, axis=-1) ** b
    return _out(rhs - lhs), _out(rhs)


@dataclass(frozen=True)
class LemmaResiduals:
    """RHS - LHS of the four power inequalities, with the RHS magnitudes."""

    holder: object
    young: object
    root_sum_lower: object
    root_sum_upper: object
    power_sum: object
    holder_rhs: object
    young_rhs: object
    root_sum_rhs: object
    power_sum_rhs: object

    def residuals(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if not f.name.endswith("_rhs")}

    def worst(self):
        """Smallest residual scaled by ``1 + |RHS|`` across all inequalities."""
        scale = {
            "holder": self.holder_rhs,
            "young": self.young_rhs,
            "root_sum_lower": self.root_sum_rhs,
            "root_sum_upper": self.root_sum_rhs,
            "power_sum": self.power_sum_rhs,
        }
        return min(
            float(np.min(np.asarray(r) / (1.0 + np.abs(np.asarray(scale[k])))))
            for k, r in self.residuals().items()
        )

    def ok(self, tol=1e-12):
        return self.worst() >= -tol


def lemma_residuals(x, y, p, q, a, f_val, b=None):
    """Evaluate all four inequality residuals at one (or an array of) sample(s).

    The power-sum inequality is taken over the two terms ``|x|, |y|`` with
    exponent ``b`` (defaults to ``q``).
    """
    h, h_rhs = holder_residual(x, y, p, q)
    yg, yg_rhs = young_residual(x, y, p, q, f_val)
    lo, up, rs_rhs = root_sum_residuals(x, y, a)
    terms = np.stack(np.broadcast_arrays(np.abs(_finite(x)), np.abs(_finite(y))), axis=-1)
    ps, ps_rhs = power_sum_residual(terms, q if b is None else b)
    return LemmaResiduals(h, yg, lo, up, ps, h_rhs, yg_rhs, rs_rhs, ps_rhs)
