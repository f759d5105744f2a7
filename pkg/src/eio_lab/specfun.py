"""Special functions for the outage computations.

Modified Bessel functions of the first kind, the Marcum and Nuttall
Q-functions, the exponential integral and the probability mass of an
angular sector under a circularly-symmetric complex Gaussian.

All routines are pure.  The only module state is the fault-injection hook
used by ``eio-lab selftest`` (see :func:`perturbed_bessel`).
"""

from __future__ import annotations

import contextlib
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

__all__ = [
    "SectorRegion",
    "SeriesFallbackWarning",
    "QuadratureError",
    "bessel_i",
    "bessel_ive",
    "log_bessel_i",
    "marcum_q1",
    "nuttall_q",
    "nuttall_q_orders",
    "exp_integral_e1",
    "exp_integral_e1_scaled",
    "expected_log2_affine",
    "sector_mass",
    "sector_mass_radial",
    "sector_mass_two_term",
    "perturbed_bessel",
]

LOG2E = 1.0 / math.log(2.0)
LOG_DOMAIN_THRESHOLD = 50.0
ASYMPTOTIC_THRESHOLD = 700.0
SERIES_RTOL = 1e-16
TAIL_TOL = 1e-14
REFINE_TOL = 1e-12
SECTOR_TERM_TOL = 1e-12
SECTOR_MAX_TERMS = 200

# Relative perturbation applied to every Bessel evaluation. Test hook only.
_bessel_perturbation = 0.0


class SeriesFallbackWarning(RuntimeWarning):
    """The sector series did not converge and 2-D quadrature was used."""


class QuadratureError(ArithmeticError):
    """A quadrature could not reach its error target."""


@contextlib.contextmanager
def perturbed_bessel(rel_error: float):
    """Temporarily scale every Bessel evaluation by ``1 + rel_error``.

    Used by the self-test to show that the Marcum oracle check detects a
    faulty Bessel kernel.  Not thread safe.
    """
    global _bessel_perturbation
    old = _bessel_perturbation
    _bessel_perturbation = float(rel_error)
    try:
        yield
    finally:
        _bessel_perturbation = old


@dataclass(frozen=True)
class SectorRegion:
    """Set ``{H : |arg H - center| <= phi_eps, |H| >= r_min}``.

    ``center`` is the sector axis in radians.  ``None`` means the phase of
    the posterior mean the region is evaluated against.
    """

    r_min: float
    phi_eps: float
    center: float | None = None

    def __post_init__(self):
        if not (self.r_min >= 0.0):
            raise ValueError(f"r_min must be >= 0, got {self.r_min}")
        if not (0.0 <= self.phi_eps <= math.pi):
            raise ValueError(f"phi_eps must lie in [0, pi], got {self.phi_eps}")


# ---------------------------------------------------------------------------
# Bessel functions


def _check_order(order):
    n = np.asarray(order)
    if np.any(n < 0) or np.any(n != np.floor(n)):
        raise ValueError("Bessel order must be a nonnegative integer")
    return n.astype(float)


def _check_nonneg(x, name="x"):
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)) or np.any(x < 0):
        raise ValueError(f"{name} must be >= 0")
    return x


def _ive_direct(n, x):
    # Power series summed by term recurrence; x <= LOG_DOMAIN_THRESHOLD.
    q = 0.25 * x * x
    with np.errstate(divide="ignore", invalid="ignore"):
        log_t0 = n * np.log(0.5 * x) - special.gammaln(n + 1.0)
    term = np.where(n == 0, 1.0, np.where(x == 0, 0.0, np.exp(log_t0)))
    total = term.copy()
    k = 0
    while True:
        k += 1
        ratio = q / (k * (n + k))
        term = term * ratio
        total += term
        if np.all((term <= SERIES_RTOL * total) & (ratio < 0.5)):
            break
    return total * np.exp(-x)


def _log_iv_logdomain(n, x):
    # log I_n(x) from the power series summed in the log domain over a
    # window of +-9 standard deviations around the dominant term; terms
    # outside are below exp(-40) of the peak.
    kstar = np.maximum(0.0, 0.5 * (np.sqrt(n * n + x * x) - n - 2.0))
    half = 4.5 * np.sqrt(x) + 8.0
    k_lo = np.maximum(0.0, np.floor(kstar - half))
    width = int(np.ceil(2.0 * np.max(half))) + 2
    out = np.empty(x.shape)
    chunk = max(1, 4_000_000 // width)
    j = np.arange(1, width, dtype=float)
    for s in range(0, x.size, chunk):
        sl = slice(s, s + chunk)
        k0 = k_lo[sl, None]
        nn = n[sl, None]
        lx = np.log(0.5 * x[sl, None])
        first = (nn + 2 * k0) * lx - special.gammaln(k0 + 1.0) - special.gammaln(nn + k0 + 1.0)
        # log t_{k+1} - log t_k = 2 log(x/2) - log(k+1) - log(n+k+1)
        k = k0 + j - 1.0
        steps = 2.0 * lx - np.log(k + 1.0) - np.log(nn + k + 1.0)
        logt = np.concatenate([first, first + np.cumsum(steps, axis=1)], axis=1)
        out[sl] = special.logsumexp(logt, axis=1)
    return out


def _ive_asymptotic(n, x):
    # Large-argument expansion exp(-x) I_n(x) ~ (2 pi x)^(-1/2) sum_k (-1)^k a_k / x^k,
    # a_k = prod_{j<=k} (4n^2 - (2j-1)^2) / (k! 8^k).  Used only where the
    # terms shrink from the first one on, so truncation error is below the
    # last retained term.
    mu = 4.0 * n * n
    term = np.ones_like(x)
    total = term.copy()
    for k in range(1, 60):
        term = -term * (mu - (2 * k - 1) ** 2) / (8.0 * k * x)
        total += term
        if np.all(np.abs(term) <= SERIES_RTOL * np.abs(total)):
            break
    return total / np.sqrt(2.0 * np.pi * x)


def _ive(order, x):
    n, x = np.broadcast_arrays(np.asarray(order, dtype=float), np.asarray(x, dtype=float))
    shape = x.shape
    n = n.ravel()
    x = x.ravel()
    out = np.empty(x.shape)
    small = x <= LOG_DOMAIN_THRESHOLD
    huge = (x >= ASYMPTOTIC_THRESHOLD) & (x >= 2.0 * n * n)
    mid = ~small & ~huge
    if small.any():
        out[small] = _ive_direct(n[small], x[small])
    if mid.any():
        xl = x[mid]
        out[mid] = np.exp(_log_iv_logdomain(n[mid], xl) - xl)
    if huge.any():
        out[huge] = _ive_asymptotic(n[huge], x[huge])
    return (out * (1.0 + _bessel_perturbation)).reshape(shape)


def _scalar_or_array(value, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


def bessel_ive(order, x):
    """Exponentially scaled Bessel function ``exp(-x) * I_n(x)``."""
    n = _check_order(order)
    x = _check_nonneg(x)
    return _scalar_or_array(_ive(n, x), np.broadcast(n, x))


def log_bessel_i(order, x):
    """Natural logarithm of ``I_n(x)``; finite for any representable ``x > 0``."""
    n = _check_order(order)
    x = _check_nonneg(x)
    with np.errstate(divide="ignore"):
        val = np.log(_ive(n, x)) + x
    return _scalar_or_array(val, np.broadcast(n, x))


def bessel_i(order, x):
    """Modified Bessel function of the first kind ``I_n(x)``.

    Computed from the ascending power series
    ``sum_k (x/2)**(n+2k) / (k! (n+k)!)``, summed until the relative tail
    drops below 1e-16.  Arguments above 50 are summed in the log domain to
    avoid overflow of individual terms.  From ``x >= max(700, 2 n^2)`` the
    large-argument expansion takes over, whose terms then decrease
    monotonically.  The result overflows to ``inf`` only when ``I_n(x)``
    exceeds the float range (x > ~713).

    Parameters
    ----------
    order : int or array_like of int
        Nonnegative integer order ``n``.
    x : float or array_like
        Nonnegative argument.
    """
    n = _check_order(order)
    x = _check_nonneg(x)
    with np.errstate(over="ignore"):
        val = _ive(n, x) * np.exp(x)
    return _scalar_or_array(val, np.broadcast(n, x))


def _ive_all_orders(kmax, z):
    """``exp(-z) I_k(z)`` for k = 0..kmax at every z, shape (kmax+1, z.size).

    Miller's backward recurrence normalized by the series value of I_0.
    """
    z = np.asarray(z, dtype=float).ravel()
    out = np.zeros((kmax + 1, z.size))
    pos = z > 0
    out[0, ~pos] = 1.0
    if not pos.any():
        return out
    zp = z[pos]
    zmax = float(zp.max())
    start = kmax + int(math.sqrt(80.0 * max(zmax, 1.0))) + 30
    start += start % 2
    nxt = np.zeros(zp.size)
    cur = np.full(zp.size, 1e-300)
    vals = np.zeros((kmax + 1, zp.size))
    for k in range(start, 0, -1):
        prev = nxt + (2.0 * k / zp) * cur
        nxt, cur = cur, prev
        if k - 1 <= kmax:
            vals[k - 1] = cur
        big = np.abs(cur) > 1e250
        if big.any():
            scale = np.where(big, 1e-250, 1.0)
            cur *= scale
            nxt *= scale
            vals *= scale
    i0 = _ive(0.0, zp)
    out[:, pos] = vals * (i0 / vals[0])
    return out


# ---------------------------------------------------------------------------
# Marcum / Nuttall Q


_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(20)


def _tail_bound(lower, alpha):
    # Bound on int_lower^inf x exp(-(x-alpha)^2/2) dx, valid for lower >= alpha.
    d = lower - alpha
    return math.exp(-0.5 * d * d) + alpha * math.sqrt(math.pi / 2) * math.erfc(d / math.sqrt(2.0))


def _panel_nodes(a, b, breakpoints, width):
    edges = [a] + sorted(p for p in breakpoints if a < p < b) + [b]
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        n_pan = max(1, int(math.ceil((hi - lo) / width)))
        e = np.linspace(lo, hi, n_pan + 1)
        half = 0.5 * np.diff(e)
        mid = 0.5 * (e[:-1] + e[1:])
        xs.append((mid[:, None] + half[:, None] * _GL_NODES).ravel())
        ws.append((half[:, None] * _GL_WEIGHTS).ravel())
    return np.concatenate(xs), np.concatenate(ws)


def _nuttall_integrate(orders_fn, alpha, beta):
    # Integrate x exp(-(x-alpha)^2/2) ive(k, alpha x) over [beta, inf) for all
    # orders produced by orders_fn(z) -> array (n_orders, z.size).  Nodes are
    # placed in the offset t = x - alpha so the Gaussian factor keeps full
    # precision when alpha and beta are large and close.
    span = 6.0
    while True:
        upper = max(beta, alpha) + span
        if _tail_bound(upper, alpha) < TAIL_TOL:
            break
        span *= 1.5
        if span > 60.0:
            raise QuadratureError(
                f"tail bound not attainable for alpha={alpha}, beta={beta} (span {span:.1f})"
            )
    d0 = beta - alpha
    t_lo = max(d0, -min(span, alpha))
    t_hi = max(d0, 0.0) + span
    if t_lo >= t_hi:
        return None
    prev = None
    width = 2.0
    corr = math.inf
    for _ in range(7):
        t, w = _panel_nodes(t_lo, t_hi, [0.0], width)
        x = alpha + t
        vals = orders_fn(alpha * x) * (x * np.exp(-0.5 * t * t) * w)
        cur = vals.sum(axis=1)
        if prev is not None:
            corr = float(np.max(np.abs(cur - prev)))
            if corr < REFINE_TOL:
                return cur
        prev = cur
        width *= 0.5
    raise QuadratureError(
        f"Nuttall quadrature did not converge for alpha={alpha}, beta={beta}: last correction {corr:.3e}"
    )


def nuttall_q(order: int, alpha: float, beta: float) -> float:
    """Nuttall Q-function ``Q_{1,n}(alpha, beta)``.

    ``int_beta^inf x exp(-(x^2 + alpha^2)/2) I_n(alpha x) dx``, evaluated by
    composite Gauss-Legendre quadrature over ``[beta, beta + T]`` where T is
    grown until the Gaussian tail bound is below 1e-14, and panels are
    halved until successive estimates agree to 1e-12.
    """
    n = int(_check_order(order))
    alpha = float(_check_nonneg(alpha, "alpha"))
    beta = float(_check_nonneg(beta, "beta"))
    if n > 0 and alpha == 0.0:
        return 0.0
    res = _nuttall_integrate(lambda z: _ive(float(n), z)[None, :], alpha, beta)
    if res is None:
        return 0.0
    return float(min(max(res[0], 0.0), 1.0) if n == 0 else max(res[0], 0.0))


def nuttall_q_orders(kmax: int, alpha: float, beta: float) -> np.ndarray:
    """``Q_{1,k}(alpha, beta)`` for every k in 0..kmax, on shared nodes."""
    alpha = float(_check_nonneg(alpha, "alpha"))
    beta = float(_check_nonneg(beta, "beta"))
    if alpha == 0.0:
        out = np.zeros(kmax + 1)
        out[0] = math.exp(-0.5 * beta * beta)
        return out
    res = _nuttall_integrate(lambda z: _ive_all_orders(kmax, z), alpha, beta)
    if res is None:
        return np.zeros(kmax + 1)
    return np.clip(res, 0.0, 1.0)


def marcum_q1(alpha: float, beta: float) -> float:
    """First-order Marcum Q-function ``Q_1(alpha, beta)``.

    Defined as the order-0 Nuttall integral, i.e. the tail probability
    ``P(|Z| >= beta)`` of a Ricean magnitude with noncentrality ``alpha``
    and unit per-dimension variance.
    """
    alpha = float(_check_nonneg(alpha, "alpha"))
    beta = float(_check_nonneg(beta, "beta"))
    if beta == 0.0:
        return 1.0
    return nuttall_q(0, alpha, beta)


# ---------------------------------------------------------------------------
# Exponential integral

_EULER_GAMMA = 0.57721566490153286061


def _e1_series(z):
    total = 0.0
    term = 1.0
    k = 0
    while True:
        k += 1
        term *= -z / k
        contrib = term / k
        total += contrib
        if abs(contrib) < 1e-17 * max(abs(total), 1e-300):
            break
    return -_EULER_GAMMA - math.log(z) - total


def _e1_scaled_cf(z):
    # exp(z) E1(z) by the modified Lentz continued fraction, z > 1.
    tiny = 1e-300
    b = z + 1.0
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -float(i * i)
        b += 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            return h
    raise QuadratureError(f"E1 continued fraction did not converge at z={z}")


def exp_integral_e1_scaled(z: float) -> float:
    """``exp(z) * E1(z)``; finite for every z > 0."""
    z = float(z)
    if not z > 0:
        raise ValueError(f"E1 requires z > 0, got {z}")
    if z <= 1.0:
        return math.exp(z) * _e1_series(z)
    return _e1_scaled_cf(z)


def exp_integral_e1(z: float) -> float:
    """Exponential integral ``E1(z) = int_z^inf exp(-t)/t dt`` for z > 0."""
    z = float(z)
    if not z > 0:
        raise ValueError(f"E1 requires z > 0, got {z}")
    if z <= 1.0:
        return _e1_series(z)
    return _e1_scaled_cf(z) * math.exp(-z)


def expected_log2_affine(A: float, B: float, P: float) -> float:
    """``E[log2(A + B |x|^2)]`` for ``x ~ CN(0, P)``.

    ``|x|^2`` is exponential with mean P, which gives
    ``log2(A) + log2(e) * exp(c) * E1(c)`` with ``c = A / (B P)``.
    """
    if not (A > 0 and B >= 0 and P > 0):
        raise ValueError(f"need A > 0, B >= 0, P > 0; got A={A}, B={B}, P={P}")
    if B == 0:
        return math.log2(A)
    return math.log2(A) + LOG2E * exp_integral_e1_scaled(A / (B * P))


# ---------------------------------------------------------------------------
# Sector probability


def _wrap(angle):
    return (angle + np.pi) % (2.0 * np.pi) - np.pi


def _posterior_fields(posterior):
    m = complex(posterior.mean)
    v = float(posterior.variance)
    if not v > 0:
        raise ValueError(f"posterior variance must be > 0, got {v}")
    return m, v


def _sector_mass_2d(r_min, phi_eps, m, v, center):
    am = abs(m)
    phi_m = math.atan2(m.imag, m.real)
    sv = math.sqrt(v)
    r_lo = max(r_min, am - 14.0 * sv, 0.0)
    r_hi = max(r_min, am) + 14.0 * sv
    a_lo, a_hi = center - phi_eps, center + phi_eps
    peaks = [p for p in (phi_m - 2 * math.pi, phi_m, phi_m + 2 * math.pi) if a_lo < p < a_hi]

    def inner(r):
        f = lambda phi: math.exp(-2.0 * r * am * (1.0 - math.cos(phi - phi_m)) / v)
        val, _ = integrate.quad(f, a_lo, a_hi, points=peaks or None, epsabs=1e-14, epsrel=1e-12, limit=200)
        return r / (math.pi * v) * math.exp(-((r - am) ** 2) / v) * val

    if r_lo >= r_hi:
        return 0.0
    pts = [am] if r_lo < am < r_hi else None
    val, _ = integrate.quad(inner, r_lo, r_hi, points=pts, epsabs=1e-13, epsrel=1e-12, limit=200)
    return float(min(max(val, 0.0), 1.0))


def _sector_mass_series(r_min, phi_eps, m, v, center):
    am = abs(m)
    alpha = am * math.sqrt(2.0 / v)
    beta = r_min * math.sqrt(2.0 / v)
    delta = float(_wrap(math.atan2(m.imag, m.real) - center))
    q = nuttall_q_orders(SECTOR_MAX_TERMS, alpha, beta)
    k = np.arange(1, SECTOR_MAX_TERMS + 1)
    bound = 2.0 * q[1:] / (math.pi * k)
    small = np.nonzero(bound < SECTOR_TERM_TOL)[0]
    if small.size == 0:
        return None
    kmax = int(small[0]) + 1
    kk = k[:kmax]
    tail = 2.0 * np.sum(q[1 : kmax + 1] * np.cos(kk * delta) * np.sin(kk * phi_eps) / kk)
    val = (q[0] * phi_eps + tail) / math.pi
    return float(min(max(val, 0.0), 1.0))


def sector_mass(region: SectorRegion, posterior, method: str = "series") -> float:
    """Posterior probability that H lies in ``region``.

    ``posterior`` is anything with complex ``mean`` and positive
    ``variance`` attributes describing ``H ~ CN(mean, variance)``.

    Methods
    -------
    ``"series"``
        Fourier-Bessel expansion in the Nuttall functions
        ``Q_{1,k}(alpha, beta)``, truncated once a term bound falls below
        1e-12.  If 200 terms do not suffice a :class:`SeriesFallbackWarning`
        is issued and the 2-D quadrature result is returned.
    ``"quadrature"``
        Nested adaptive quadrature of the polar density.
    ``"radial"``
        Closed-form radial tail with Gauss-Legendre quadrature over angle
        (see :func:`sector_mass_radial`).
    """
    m, v = _posterior_fields(posterior)
    center = math.atan2(m.imag, m.real) if region.center is None else float(region.center)
    if region.phi_eps >= math.pi and region.r_min == 0.0:
        return 1.0
    if region.phi_eps == 0.0:
        return 0.0
    if method == "series":
        val = _sector_mass_series(region.r_min, region.phi_eps, m, v, center)
        if val is None:
            warnings.warn(
                f"sector series did not reach {SECTOR_TERM_TOL:g} within {SECTOR_MAX_TERMS} terms; "
                "using 2-D quadrature",
                SeriesFallbackWarning,
                stacklevel=2,
            )
            val = _sector_mass_2d(region.r_min, region.phi_eps, m, v, center)
        return val
    if method == "quadrature":
        return _sector_mass_2d(region.r_min, region.phi_eps, m, v, center)
    if method == "radial":
        delta = math.atan2(m.imag, m.real) - center
        return float(sector_mass_radial(region.r_min, region.phi_eps, abs(m), delta, v))
    raise ValueError(f"unknown method {method!r}")


def sector_mass_two_term(region: SectorRegion, posterior) -> float:
    """Two-term truncation of the sector series (orders 0 and 1 only)."""
    m, v = _posterior_fields(posterior)
    center = math.atan2(m.imag, m.real) if region.center is None else float(region.center)
    alpha = abs(m) * math.sqrt(2.0 / v)
    beta = region.r_min * math.sqrt(2.0 / v)
    delta = float(_wrap(math.atan2(m.imag, m.real) - center))
    q = nuttall_q_orders(1, alpha, beta)
    return float((q[0] * region.phi_eps + 2.0 * q[1] * math.cos(delta) * math.sin(region.phi_eps)) / math.pi)


_RADIAL_NODES, _RADIAL_WEIGHTS = np.polynomial.legendre.leggauss(32)


def angular_nodes(lo, hi, mean_abs, delta, var, n_nodes=None, shifts=(-2.0 * np.pi, 0.0, 2.0 * np.pi)):
    """Quadrature nodes in the sector angle psi over ``[lo, hi]``.

    psi is measured from the sector axis; the posterior mean sits at
    ``psi = delta``.  When the posterior is concentrated
    (``|m| / sqrt(v) > 6.5``) the nodes are restricted to a window of
    half-width ``9 sqrt(v) / |m|`` around the mean direction (and its 2*pi
    images); outside it the density is below exp(-40) of its peak.
    ``shifts`` lists the 2*pi images to cover; ``(0.0,)`` suffices when
    ``[lo, hi]`` lies within ``(-pi/2, pi/2)``.

    Returns ``psi, weights`` with a trailing node axis.
    """
    if n_nodes is None:
        x, w = _RADIAL_NODES, _RADIAL_WEIGHTS
    else:
        x, w = np.polynomial.legendre.leggauss(n_nodes)
    lo, hi, mean_abs, delta, var = np.broadcast_arrays(*map(np.asarray, (lo, hi, mean_abs, delta, var)))
    conc = mean_abs / np.sqrt(var) > 6.5
    half = np.where(conc, 9.0 * np.sqrt(var) / np.maximum(mean_abs, 1e-300), 4.0 * np.pi)
    c = _wrap(delta)
    psis, wts = [], []
    for sh in shifts:
        a = np.where(conc, np.maximum(lo, c + sh - half), lo if sh == 0.0 else hi)
        b = np.where(conc, np.minimum(hi, c + sh + half), hi)
        b = np.maximum(a, b)
        mid = 0.5 * (a + b)[..., None]
        rad = 0.5 * (b - a)[..., None]
        psis.append(mid + rad * x)
        wts.append(rad * w)
    return np.concatenate(psis, axis=-1), np.concatenate(wts, axis=-1)


def radial_tail_density(r, psi, mean_abs, delta, var):
    """Integrand pieces of the sector mass at angle ``psi``.

    Returns ``(tail, dens)`` where ``tail = int_r^inf p(rho, psi) rho drho``
    in closed form and ``dens = p(r, psi)`` (without the Jacobian r), for
    ``H ~ CN(m, var)`` with ``|m| = mean_abs`` at angle ``delta``.
    """
    a = mean_abs * np.cos(psi - delta)
    b2 = (mean_abs * np.sin(psi - delta)) ** 2
    sv = np.sqrt(var)
    lateral = np.exp(-b2 / var)
    d = r - a
    g = np.exp(-d * d / var)
    tail = lateral * (0.5 * var * g + 0.5 * a * np.sqrt(np.pi * var) * special.erfc(d / sv)) / (np.pi * var)
    dens = lateral * g / (np.pi * var)
    return tail, dens


def sector_mass_radial(r_min, phi_eps, mean_abs, delta, var):
    """Vectorized sector mass via the closed-form radial tail.

    For a fixed angle the radial integral of the polar Gaussian density
    reduces to exp and erfc terms, leaving a smooth 1-D integral over the
    sector angle.  All arguments broadcast; ``delta`` is the angle of the
    posterior mean measured from the sector axis.
    """
    r_min, phi_eps, mean_abs, delta, var = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (r_min, phi_eps, mean_abs, delta, var))
    )
    psi, w = angular_nodes(-phi_eps, phi_eps, mean_abs, delta, var)
    tail, _ = radial_tail_density(r_min[..., None], psi, mean_abs[..., None], delta[..., None], var[..., None])
    return np.clip((tail * w).sum(axis=-1), 0.0, 1.0)
