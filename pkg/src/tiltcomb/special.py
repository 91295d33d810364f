"""Special functions and small numerical routines.

Dilogarithm, adaptive Simpson quadrature on half-lines, bisection on
monotone maps and a few log-space Gaussian helpers.  Riemann zeta is taken
from scipy; everything else here is self-contained.
"""
import math

from scipy.special import zeta as _scipy_zeta

from .errors import DomainError, QuadratureFailure, RootNotBracketed

PI2_6 = math.pi ** 2 / 6.0
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

# c = pi / sqrt(6), the unrestricted-partition tilt constant
PARTITION_C = math.pi / math.sqrt(6.0)


def zeta(s):
    if s <= 1.0:
        raise DomainError(f"zeta needs s > 1, got {s}")
    return float(_scipy_zeta(s, 1.0))


def dilog(z):
    """Li_2(z) for 0 <= z <= 1.

    Direct power series for z <= 1/2 and the reflection
    Li_2(z) = pi^2/6 - log(z) log(1-z) - Li_2(1-z) above that, so the series
    argument never exceeds 1/2 and ~55 terms reach full double precision.
    """
    z = float(z)
    if not (0.0 <= z <= 1.0) or math.isnan(z):
        raise DomainError(f"dilog defined here on [0, 1], got {z}")
    if z == 0.0:
        return 0.0
    if z == 1.0:
        return PI2_6
    if z > 0.5:
        return PI2_6 - math.log(z) * math.log1p(-z) - _dilog_series(1.0 - z)
    return _dilog_series(z)


def _dilog_series(z):
    total = 0.0
    power = z
    m = 1
    while True:
        term = power / (m * m)
        total += term
        if term < 1e-18 * total:
            return total
        m += 1
        power *= z


def bisect(f, lo, hi, *, tol=0.0, max_iter=200):
    """Root of an increasing function on [lo, hi] by bisection.

    Stops when the bracket collapses to floating resolution, the bracket
    width drops under ``tol``, or after ``max_iter`` halvings.
    """
    flo = f(lo)
    fhi = f(hi)
    if flo > 0 or fhi < 0:
        raise RootNotBracketed(f"f({lo})={flo}, f({hi})={fhi} do not bracket a root")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= tol:
            break
        fm = f(mid)
        if fm == 0:
            return mid
        if fm < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _simpson(f, a, fa, b, fb):
    m = 0.5 * (a + b)
    fm = f(m)
    return m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def adaptive_simpson(f, a, b, *, rel_tol=1e-10, abs_tol=1e-300, max_depth=60):
    """Integrate f over [a, b] with adaptive Simpson and Richardson correction.

    The global tolerance is ``max(rel_tol * |rough estimate|, abs_tol)``;
    the interval is split into 16 panels first so that narrow peaks are
    not missed by the initial 3-point estimate.
    """
    panels = 16
    h = (b - a) / panels
    xs = [a + k * h for k in range(panels)] + [b]
    fs = [f(x) for x in xs]
    pieces = []
    rough = 0.0
    for k in range(panels):
        m, fm, whole = _simpson(f, xs[k], fs[k], xs[k + 1], fs[k + 1])
        pieces.append((xs[k], fs[k], xs[k + 1], fs[k + 1], m, fm, whole))
        rough += whole
    eps = max(rel_tol * abs(rough), abs_tol)
    total = 0.0
    for (x0, f0, x1, f1, m, fm, whole) in pieces:
        total += _adapt(f, x0, f0, x1, f1, m, fm, whole, eps / panels, max_depth)
    return total


def _adapt(f, a, fa, b, fb, m, fm, whole, eps, depth):
    # explicit stack; recursion depth would otherwise hit Python's limit
    stack = [(a, fa, b, fb, m, fm, whole, eps, depth)]
    total = 0.0
    while stack:
        a, fa, b, fb, m, fm, whole, eps, depth = stack.pop()
        lm, flm, left = _simpson(f, a, fa, m, fm)
        rm, frm, right = _simpson(f, m, fm, b, fb)
        delta = left + right - whole
        if abs(delta) <= 15.0 * eps:
            total += left + right + delta / 15.0
            continue
        if depth <= 0:
            raise QuadratureFailure(f"adaptive Simpson did not converge on [{a}, {b}]")
        stack.append((a, fa, m, fm, lm, flm, left, 0.5 * eps, depth - 1))
        stack.append((m, fm, b, fb, rm, frm, right, 0.5 * eps, depth - 1))
    return total


def integrate_half_line(f, a=0.0, *, rel_tol=1e-10, cutoff=1e-16):
    """Integrate a decaying integrand over [a, inf).

    The upper limit is the first point of a doubling grid past which
    |f| stays below ``cutoff`` (checked at the point and its double).
    """
    upper = max(a, 0.0) + 1.0
    for _ in range(200):
        if abs(f(upper)) < cutoff and abs(f(2.0 * upper)) < cutoff:
            break
        upper *= 2.0
    else:
        raise QuadratureFailure("integrand does not decay below the cutoff")
    return adaptive_simpson(f, a, upper, rel_tol=rel_tol)


def log_std_normal_pdf(z):
    return -0.5 * z * z - LOG_SQRT_2PI


def std_normal_cdf(z):
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def lambert_w_expansion(n):
    """Four-term asymptotic expansion of W(n), the root of x e^x = n."""
    if n <= math.e:
        return max(n / math.e, 1e-3)
    l1 = math.log(n)
    l2 = math.log(l1)
    return l1 - l2 + l2 / l1 + 0.5 * (l2 / l1) ** 2


def logsumexp(values):
    values = list(values)
    if not values:
        return -math.inf
    top = max(values)
    if top == -math.inf:
        return -math.inf
    return top + math.log(sum(math.exp(v - top) for v in values))
