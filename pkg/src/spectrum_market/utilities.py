"""Concave utility families and their calculus.

Two parametric families are shipped:

* ``scaled-log``:   u(x) = a*ln(1 + x)
* ``alpha-fair``:   u(x) = a*x**(1 - alpha)/(1 - alpha),  alpha in (0, 1)

Both are differentiable, strictly increasing and strictly concave on
x >= 0, and both have relative risk aversion -x*u''(x)/u'(x) < 1
everywhere on x > 0.  RRA below one is what makes demand elastic enough
for providers to sell their full supply, so any parameterization that
would violate it is rejected at construction.

``alpha-fair`` has u'(0) = +inf.  That infinity is returned deliberately
(as ``math.inf``) so that corner-case logic stays uniform; every consumer
in this package (best responses, the primal-dual stepper) handles it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

SCALED_LOG = "scaled-log"
ALPHA_FAIR = "alpha-fair"

_FAMILIES = (SCALED_LOG, ALPHA_FAIR)


def _as_float_array(x):
    arr = np.asarray(x, dtype=float)
    return arr, arr.ndim == 0


def _unwrap(arr: np.ndarray, scalar: bool):
    return float(arr) if scalar else arr


@dataclass(frozen=True)
class UtilityFunction:
    """A validated concave utility, vectorized over its argument.

    ``a`` is the willingness-to-pay weight (a > 0).  ``alpha`` is only
    meaningful for the alpha-fair family and must lie in (0, 1).
    """

    family: str
    a: float
    alpha: float | None = None

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise InvalidParameterError(
                f"unknown utility family {self.family!r}; expected one of {_FAMILIES}"
            )
        if not (isinstance(self.a, (int, float)) and math.isfinite(self.a) and self.a > 0):
            raise InvalidParameterError(f"weight a must be a positive finite real, got {self.a!r}")
        if self.family == ALPHA_FAIR:
            if self.alpha is None:
                raise InvalidParameterError("alpha-fair utility requires alpha")
            if not (math.isfinite(self.alpha) and 0.0 < self.alpha < 1.0):
                # alpha >= 1 would push relative risk aversion to 1 or above
                raise InvalidParameterError(
                    f"alpha must lie strictly inside (0, 1), got {self.alpha!r}"
                )
        elif self.alpha is not None:
            raise InvalidParameterError("alpha is only meaningful for the alpha-fair family")

    # ------------------------------------------------------------------
    # calculus
    # ------------------------------------------------------------------

    def value(self, x):
        """u(x) for scalar or array x >= 0."""
        arr, scalar = _as_float_array(x)
        if self.family == SCALED_LOG:
            out = self.a * np.log1p(arr)
        else:
            out = self.a * arr ** (1.0 - self.alpha) / (1.0 - self.alpha)
        return _unwrap(out, scalar)

    def marginal(self, x):
        """u'(x), strictly decreasing in x.

        For alpha-fair utilities u'(0) = +inf is returned as an infinity
        sentinel rather than raising.
        """
        arr, scalar = _as_float_array(x)
        if self.family == SCALED_LOG:
            out = self.a / (1.0 + arr)
        else:
            with np.errstate(divide="ignore"):
                out = self.a * arr ** (-self.alpha)
        return _unwrap(out, scalar)

    def inverse_marginal(self, mu):
        """The unique x >= 0 with u'(x) = mu, or 0 when u'(0) < mu.

        Requires mu > 0.
        """
        arr, scalar = _as_float_array(mu)
        if np.any(arr <= 0):
            raise InvalidParameterError("inverse_marginal requires mu > 0")
        if self.family == SCALED_LOG:
            out = np.maximum(self.a / arr - 1.0, 0.0)
        else:
            # u'(0) = inf, so the corner never binds
            out = (self.a / arr) ** (1.0 / self.alpha)
        return _unwrap(out, scalar)

    def rra(self, x):
        """Relative risk aversion -x*u''(x)/u'(x); below 1 for both families."""
        arr, scalar = _as_float_array(x)
        if self.family == SCALED_LOG:
            out = arr / (1.0 + arr)
        else:
            out = np.full_like(arr, self.alpha)
        return _unwrap(out, scalar)

    def marginal_at_zero(self) -> float:
        """u'(0): the weight a for scaled-log, +inf for alpha-fair."""
        return self.a if self.family == SCALED_LOG else math.inf

    def to_dict(self) -> dict:
        d = {"family": self.family, "a": self.a}
        if self.family == ALPHA_FAIR:
            d["alpha"] = self.alpha
        return d

    @staticmethod
    def from_dict(d: dict) -> "UtilityFunction":
        return UtilityFunction(d["family"], d["a"], d.get("alpha"))


def make_utility(family: str, a: float, alpha: float | None = None) -> UtilityFunction:
    """Build a validated utility; rejects parameterizations with RRA >= 1.

    Both shipped families certify RRA < 1 analytically: scaled-log has
    RRA(x) = x/(1+x) and alpha-fair has RRA identically equal to alpha.
    """
    return UtilityFunction(family, float(a), None if alpha is None else float(alpha))
