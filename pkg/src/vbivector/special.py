"""Log-gamma, digamma and trigamma for positive real arguments.

All three shift the argument above ``_SHIFT`` with the usual recurrences and
then evaluate the asymptotic (Stirling / Bernoulli) series.
"""

import math

from .exceptions import DomainError

__all__ = ["digamma", "trigamma", "lgamma"]

_SHIFT = 6.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)

# B_2n / (2n), n = 1..8
_DIGAMMA_COEF = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
)
# B_2n, n = 1..8
_TRIGAMMA_COEF = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
)
# B_2n / (2n (2n - 1)), n = 1..8
_LGAMMA_COEF = (
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360360.0,
    1.0 / 156.0,
    -3617.0 / 122400.0,
)


def _check(x):
    x = float(x)
    if not x > 0.0 or math.isinf(x):
        raise DomainError(f"argument must be a finite positive real, got {x!r}")
    return x


def _series(coef, inv_x2):
    # Horner in 1/x^2, highest order first.
    acc = 0.0
    for c in reversed(coef):
        acc = acc * inv_x2 + c
    return acc


def _two_prod(a, b):
    # Dekker's exact product: a*b == p + e.
    p = a * b
    split = 134217729.0  # 2**27 + 1
    t = split * a
    ah = t - (t - a)
    al = a - ah
    t = split * b
    bh = t - (t - b)
    bl = b - bh
    e = ((ah * bh - p) + ah * bl + al * bh) + al * bl
    return p, e


def _recip_sq(x):
    """1/x**2 as an unevaluated sum (hi, lo) of two doubles."""
    r = 1.0 / x
    r2 = r * r
    # residual 1 - x^2 r2, evaluated exactly enough to fix the last ulp
    xx, xe = _two_prod(x, x)
    p, pe = _two_prod(xx, r2)
    res = (1.0 - p) - pe - xe * r2
    return r2, r2 * res


def digamma(x):
    """Digamma function psi(x) for x > 0."""
    x = _check(x)
    terms = []
    while x < _SHIFT:
        terms.append(-1.0 / x)
        x += 1.0
    inv2 = 1.0 / (x * x)
    terms.append(math.log(x) - 0.5 / x - inv2 * _series(_DIGAMMA_COEF, inv2))
    return math.fsum(terms)


def trigamma(x):
    """Trigamma function psi'(x) for x > 0."""
    x = _check(x)
    terms = []
    while x < _SHIFT:
        terms.extend(_recip_sq(x))
        x += 1.0
    inv = 1.0 / x
    inv2 = inv * inv
    terms.append(inv + 0.5 * inv2 + inv * inv2 * _series(_TRIGAMMA_COEF, inv2))
    return math.fsum(terms)


def lgamma(x):
    """Natural log of the gamma function for x > 0."""
    x = _check(x)
    shift = 0.0
    prod = 1.0
    while x < _SHIFT:
        prod *= x
        x += 1.0
        # keep the running product away from under/overflow
        if prod < 1e-250 or prod > 1e250:
            shift += math.log(prod)
            prod = 1.0
    shift += math.log(prod)
    inv = 1.0 / x
    stirling = (x - 0.5) * math.log(x) - x + _HALF_LOG_2PI
    return stirling + inv * _series(_LGAMMA_COEF, inv * inv) - shift
