"""Laplace-transform quantities of the two-sided exit time of a drifted Brownian motion.

The normalized log price ``W(t) = x + mu' t + B_t`` leaves ``(a, b)`` at time
``tau``.  With ``theta = sqrt(mu'^2 + 2r)`` the discounted exit weights are::

    E[e^{-r tau}; W_tau = b] = e^{ mu' b'} sinh(a' theta) / sinh((b-a) theta)
    E[e^{-r tau}; W_tau = a] = e^{-mu' a'} sinh(b' theta) / sinh((b-a) theta)

Everything here is evaluated in exponential form so that neither wide ranges
nor large rates overflow ``sinh``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .model import DomainError, LogCoords

# below this value of (b-a)*theta the sinh ratios switch to their series
_SERIES_ARG = 1e-8
# below this value the E[tau e^{-r tau}] bracket is taken from its series,
# where the direct form would lose digits to cancellation
_TAU_SERIES_ARG = 0.02
_ZERO_RATE = 1e-10
# (1 - F(r)) / r is integrated from -F' by Gauss-Legendre under this r * E[tau]
_SMALL_RATE_SCALE = 1e-3
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(12)


class FeeMode(enum.Enum):
    CONTINUOUS = "continuous"
    AT_CLOSE = "at-close"


@dataclass(frozen=True)
class TransformInputs:
    coords: LogCoords
    r: float

    def __post_init__(self) -> None:
        if not self.r >= 0:
            raise DomainError(f"discount rate must be >= 0, got {self.r}")
        c = self.coords
        if not (c.a_prime >= 0 and c.b_prime >= 0 and c.a_prime + c.b_prime > 0):
            raise DomainError("log coordinates must satisfy a' >= 0, b' >= 0, a' + b' > 0")

    @property
    def theta(self) -> float:
        return math.hypot(self.coords.mu_prime, math.sqrt(2.0 * self.r))


def _upper_exponent(m: float, theta: float, r: float, bp: float) -> float:
    """b' (mu' - theta), evaluated without cancellation when mu' > 0."""
    if m > 0:
        return -bp * 2.0 * r / (m + theta)
    return bp * (m - theta)


def _lower_exponent(m: float, theta: float, r: float, ap: float) -> float:
    """-a' (mu' + theta), evaluated without cancellation when mu' < 0."""
    if m < 0:
        return -ap * 2.0 * r / (theta - m)
    return -ap * (m + theta)


def _hit_pair(inp: TransformInputs) -> tuple[float, float]:
    c, r = inp.coords, inp.r
    ap, bp, m = c.a_prime, c.b_prime, c.mu_prime
    width = ap + bp
    theta = inp.theta
    v = width * theta
    if v < _SERIES_ARG:
        # sinh(u t)/sinh(D t) = (u/D) (1 + (u^2 - D^2) t^2 / 6 + ...)
        t2 = theta * theta
        up = math.exp(m * bp) * (ap / width) * (1.0 + (ap * ap - width * width) * t2 / 6.0)
        lo = math.exp(-m * ap) * (bp / width) * (1.0 + (bp * bp - width * width) * t2 / 6.0)
        return up, lo
    # sinh(u)/sinh(v) = e^{u-v} (1 - e^{-2u}) / (1 - e^{-2v})
    denom = -math.expm1(-2.0 * v)
    up = math.exp(_upper_exponent(m, theta, r, bp)) * -math.expm1(-2.0 * ap * theta) / denom
    lo = math.exp(_lower_exponent(m, theta, r, ap)) * -math.expm1(-2.0 * bp * theta) / denom
    return up, lo


def hit_upper_factor(inp: TransformInputs) -> float:
    """E[e^{-r tau}; exit through the upper bound]."""
    return _hit_pair(inp)[0]


def hit_lower_factor(inp: TransformInputs) -> float:
    """E[e^{-r tau}; exit through the lower bound]."""
    return _hit_pair(inp)[1]


def survival_transform(inp: TransformInputs) -> float:
    """F(r) = E[e^{-r tau}], the sum of both hit factors."""
    up, lo = _hit_pair(inp)
    return up + lo


def _tau_term_series(u: float, width: float, theta: float) -> float:
    # Taylor expansion in theta of
    #   [D coth(D theta) sinh(u theta) - u cosh(u theta)] / (theta sinh(D theta))
    d2, u2, t2 = width * width, u * u, theta * theta
    base = u * (d2 - u2) / (3.0 * width)
    c1 = (3.0 * u2 - 7.0 * d2) / 30.0
    c2 = (31.0 * d2 * d2 - 18.0 * d2 * u2 + 3.0 * u2 * u2) / 840.0
    c3 = (-381.0 * d2**3 + 239.0 * d2 * d2 * u2 - 55.0 * d2 * u2 * u2 + 5.0 * u2**3) / 75600.0
    return base * (1.0 + t2 * (c1 + t2 * (c2 + t2 * c3)))


def _tau_term(u, w, width, theta, expo, denom, coth, xp=math):
    """One exit side's share of E[tau e^{-r tau}] times theta, in exponential form.

    ``u`` is the distance to that side's opposite bound and ``w = width - u``.
    The bracket D coth(D theta) sinh(u theta) - u cosh(u theta) vanishes as
    u -> D, so for u > w it is rewritten via
    [w sinh((D+u) theta) - (D+u) sinh(w theta)] / (2 sinh(D theta)),
    which keeps its relative accuracy when w is small.
    """
    scale = xp.exp(expo)
    near = scale * (width * coth * -xp.expm1(-2.0 * u * theta) - u * (1.0 + xp.exp(-2.0 * u * theta))) / denom
    if xp is math and u <= w:
        return near
    far = scale * (
        w * -xp.expm1(-2.0 * (width + u) * theta)
        - (width + u) * xp.exp(-2.0 * u * theta) * -xp.expm1(-2.0 * w * theta)
    ) / (denom * denom)
    if xp is math:
        return far
    return np.where(u <= w, near, far)


def expected_discounted_tau(inp: TransformInputs) -> float:
    """E[tau e^{-r tau}] = -F'(r).

    Differentiating e^{mu'b'} sinh(a' theta)/sinh(D theta) in r, with
    d theta/dr = 1/theta, gives e^{mu'b'}/theta * [a' cosh(a' theta)
    - D coth(D theta) sinh(a' theta)] / sinh(D theta); the lower-exit term
    swaps a' for b' and e^{mu'b'} for e^{-mu'a'}.
    """
    c, r = inp.coords, inp.r
    ap, bp, m = c.a_prime, c.b_prime, c.mu_prime
    width = ap + bp
    theta = inp.theta
    v = width * theta
    if v < _TAU_SERIES_ARG:
        return (
            math.exp(m * bp) * _tau_term_series(ap, width, theta)
            + math.exp(-m * ap) * _tau_term_series(bp, width, theta)
        )
    denom = -math.expm1(-2.0 * v)
    coth = (1.0 + math.exp(-2.0 * v)) / denom
    up = _tau_term(ap, bp, width, theta, _upper_exponent(m, theta, r, bp), denom, coth)
    lo = _tau_term(bp, ap, width, theta, _lower_exponent(m, theta, r, ap), denom, coth)
    return (up + lo) / theta


def expected_tau(inp: TransformInputs) -> float:
    """E[tau], the undiscounted expected exit time."""
    return expected_discounted_tau(TransformInputs(inp.coords, 0.0))


def continuous_fee_factor(inp: TransformInputs) -> float:
    """E[int_0^tau e^{-rt} dt] = (1 - F(r)) / r, with its r -> 0 limit E[tau]."""
    r = inp.r
    if r < _ZERO_RATE:
        return expected_tau(inp)
    if r * expected_tau(inp) < _SMALL_RATE_SCALE:
        # (1 - F(r)) / r = int_0^1 -F'(s r) ds; direct subtraction cancels here
        s = 0.5 * (_GL_NODES + 1.0)
        vals = [expected_discounted_tau(TransformInputs(inp.coords, r * si)) for si in s]
        return 0.5 * float(np.dot(_GL_WEIGHTS, vals))
    return (1.0 - survival_transform(inp)) / r


def fee_leg(inp: TransformInputs, lq: float, fee_annual: float, mode: FeeMode) -> float:
    """Present value of fee rebates accruing at rate ``fee_annual * lq`` until exit.

    ``CONTINUOUS`` withdraws as fees accrue (an upper bound); ``AT_CLOSE``
    withdraws everything at the exit time (a lower bound).
    """
    if not fee_annual >= 0:
        raise DomainError(f"fee rate must be >= 0, got {fee_annual}")
    if fee_annual == 0:
        return 0.0
    if mode is FeeMode.CONTINUOUS:
        factor = continuous_fee_factor(inp)
    elif mode is FeeMode.AT_CLOSE:
        factor = expected_discounted_tau(inp)
    else:
        raise DomainError(f"unknown fee mode {mode!r}")
    return fee_annual * lq * factor


# Array kernels.  The boundary optimizer evaluates whole grids of exit levels at
# once; these mirror the scalar functions above for arrays of a' and b' sharing
# one drift and rate, with the same branch thresholds.

def _theta(m: float, r: float) -> float:
    return math.hypot(m, math.sqrt(2.0 * r))


def hit_pair_grid(ap: np.ndarray, bp: np.ndarray, m: float, r: float) -> tuple[np.ndarray, np.ndarray]:
    """Upper and lower hit factors for arrays of ``a'`` and ``b'``."""
    ap, bp = np.asarray(ap, dtype=float), np.asarray(bp, dtype=float)
    width = ap + bp
    theta = _theta(m, r)
    v = width * theta
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t2 = theta * theta
        up_s = np.exp(m * bp) * (ap / width) * (1.0 + (ap * ap - width * width) * t2 / 6.0)
        lo_s = np.exp(-m * ap) * (bp / width) * (1.0 + (bp * bp - width * width) * t2 / 6.0)
        denom = -np.expm1(-2.0 * v)
        up_d = np.exp(_upper_exponent(m, theta, r, bp)) * -np.expm1(-2.0 * ap * theta) / denom
        lo_d = np.exp(_lower_exponent(m, theta, r, ap)) * -np.expm1(-2.0 * bp * theta) / denom
    series = v < _SERIES_ARG
    return np.where(series, up_s, up_d), np.where(series, lo_s, lo_d)


def discounted_tau_grid(ap: np.ndarray, bp: np.ndarray, m: float, r: float) -> np.ndarray:
    """E[tau e^{-r tau}] for arrays of ``a'`` and ``b'``."""
    ap, bp = np.asarray(ap, dtype=float), np.asarray(bp, dtype=float)
    width = ap + bp
    theta = _theta(m, r)
    v = width * theta
    series = np.exp(m * bp) * _tau_term_series(ap, width, theta) + np.exp(-m * ap) * _tau_term_series(bp, width, theta)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        denom = -np.expm1(-2.0 * v)
        coth = (1.0 + np.exp(-2.0 * v)) / denom
        up = _tau_term(ap, bp, width, theta, _upper_exponent(m, theta, r, bp), denom, coth, np)
        lo = _tau_term(bp, ap, width, theta, _lower_exponent(m, theta, r, ap), denom, coth, np)
        direct = (up + lo) / theta
    return np.where(v < _TAU_SERIES_ARG, series, direct)


def continuous_fee_factor_grid(ap: np.ndarray, bp: np.ndarray, m: float, r: float) -> np.ndarray:
    """(1 - F(r)) / r for arrays of ``a'`` and ``b'``."""
    e_tau = discounted_tau_grid(ap, bp, m, 0.0)
    if r < _ZERO_RATE:
        return e_tau
    up, lo = hit_pair_grid(ap, bp, m, r)
    direct = (1.0 - (up + lo)) / r
    small = r * e_tau < _SMALL_RATE_SCALE
    if not small.any():
        return direct
    s = 0.5 * (_GL_NODES + 1.0)
    quad = 0.5 * sum(w * discounted_tau_grid(ap, bp, m, r * si) for w, si in zip(_GL_WEIGHTS, s))
    return np.where(small, quad, direct)


def fee_leg_grid(
    ap: np.ndarray, bp: np.ndarray, m: float, r: float, lq: float, fee_annual: float, mode: FeeMode
) -> np.ndarray:
    """Array counterpart of :func:`fee_leg`."""
    if not fee_annual >= 0:
        raise DomainError(f"fee rate must be >= 0, got {fee_annual}")
    if fee_annual == 0:
        return np.zeros(np.broadcast(ap, bp).shape)
    if mode is FeeMode.CONTINUOUS:
        factor = continuous_fee_factor_grid(ap, bp, m, r)
    elif mode is FeeMode.AT_CLOSE:
        factor = discounted_tau_grid(ap, bp, m, r)
    else:
        raise DomainError(f"unknown fee mode {mode!r}")
    return fee_annual * lq * factor
