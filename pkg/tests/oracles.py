"""Independent reference computations used by the test suite.

Everything here is written directly from the defining integrals or
closed forms with scipy quadrature, and shares no code with the package.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy import integrate, special


def marcum_q1_quad(alpha, beta):
    """Q_1 by adaptive quadrature of the Rice density."""
    return nuttall_quad(0, alpha, beta)


def nuttall_quad(n, alpha, beta):
    """``int_beta^inf x exp(-(x^2+alpha^2)/2) I_n(alpha x) dx`` by quad."""
    # exp(-(x^2 + a^2)/2) I_n(a x) = exp(-(x - a)^2 / 2) ive(n, a x)
    f = lambda x: x * math.exp(-0.5 * (x - alpha) ** 2) * special.ive(n, alpha * x)
    hi = max(alpha, beta) + 40.0
    pts = [p for p in (alpha - 5, alpha, alpha + 5) if beta < p < hi]
    val, _ = integrate.quad(f, beta, hi, points=pts or None, limit=400, epsabs=1e-14, epsrel=1e-12)
    return val


def e1_quad(z):
    """E1 via ``exp(-z) int_0^inf exp(-u) / (z + u) du``."""
    val, _ = integrate.quad(lambda u: math.exp(-u) / (z + u), 0.0, np.inf, epsabs=0, epsrel=1e-13, limit=400)
    return math.exp(-z) * val


def sector_mass_quad(r_min, phi_eps, mean, var, center):
    """Mass of ``{|arg H - center| <= phi, |H| >= r}`` for H ~ CN(mean, var).

    Outer quadrature over angle, inner over radius of the polar Gaussian
    density ``rho / (pi var) exp(-|rho e^{i psi} - mean|^2 / var)``.
    """
    mr, mi = mean.real, mean.imag
    sd = math.sqrt(var)

    def inner(psi):
        c, s = math.cos(psi), math.sin(psi)
        a = mr * c + mi * s  # radial component of the mean
        b2 = (mr * s - mi * c) ** 2
        f = lambda rho: rho * math.exp(-((rho - a) ** 2 + b2) / var) / (math.pi * var)
        hi = max(a, r_min) + 12.0 * sd
        if hi <= r_min:
            return 0.0
        pts = [a] if r_min < a < hi else None
        return integrate.quad(f, r_min, hi, points=pts, epsabs=1e-14, epsrel=1e-12, limit=200)[0]

    lo, hi = center - phi_eps, center + phi_eps
    mang = math.atan2(mi, mr)
    pts = [mang + 2 * math.pi * k for k in (-1, 0, 1) if lo < mang + 2 * math.pi * k < hi]
    return integrate.quad(inner, lo, hi, points=pts or None, epsabs=1e-13, epsrel=1e-11, limit=400)[0]


# ---------------------------------------------------------------------------
# Discrete channels


def mutual_information(p, W):
    """I(T; Y) in bits for input p and row-stochastic W (T x K)."""
    p = np.asarray(p, float)
    W = np.asarray(W, float).reshape(len(p), -1)
    q = p @ W
    tot = 0.0
    for t in range(len(p)):
        for k in range(W.shape[1]):
            if p[t] > 0 and W[t, k] > 0:
                tot += p[t] * W[t, k] * math.log2(W[t, k] / q[k])
    return tot


def strategy_channel_loops(channel, accuracy):
    """``W(y,v|t) = sum_{s,u} W(y|t(u),s) mu(s,u,v)`` by explicit loops.

    ``channel`` is (S, X, Y), ``accuracy`` is (S, U, V).  Strategies are the
    tuples ``t`` in X^U in lexicographic order.
    """
    S, X, Y = channel.shape
    _, U, V = accuracy.shape
    strats = list(itertools.product(range(X), repeat=U))
    out = np.zeros((len(strats), Y, V))
    for i, t in enumerate(strats):
        for s in range(S):
            for u in range(U):
                for v in range(V):
                    out[i, :, v] += channel[s, t[u], :] * accuracy[s, u, v]
    return out


def simplex_lattice(dim, step):
    """All points of the probability simplex in R^dim on a ``step`` lattice."""
    n = int(round(1.0 / step))
    pts = []
    for c in itertools.combinations(range(n + dim - 1), dim - 1):
        prev = -1
        parts = []
        for x in c:
            parts.append(x - prev - 1)
            prev = x
        parts.append(n + dim - 2 - prev)
        pts.append(parts)
    return np.asarray(pts, float) / n


def mi_on_lattice(P, W):
    """I(p, W) in bits for every row p of P (vectorized oracle)."""
    W = W.reshape(W.shape[0], -1)
    q = P @ W
    with np.errstate(divide="ignore", invalid="ignore"):
        lr = np.where(W[None] > 0, np.log2(W[None] / q[:, None, :]), 0.0)
    return np.einsum("nt,tk,ntk->n", P, W, lr)


def eio_grid(channels, posterior, gamma, step=0.01):
    """Exhaustive EIO capacity: every subset, every lattice input."""
    L = len(channels)
    P = simplex_lattice(channels[0].shape[0], step)
    mis = np.stack([mi_on_lattice(P, W) for W in channels])  # (L, n)
    best = 0.0
    for mask in range(1, 1 << L):
        members = [i for i in range(L) if mask >> i & 1]
        if sum(posterior[i] for i in members) < 1 - gamma - 1e-12:
            continue
        best = max(best, float(mis[members].min(axis=0).max()))
    return best


def h2(p):
    return 0.0 if p in (0.0, 1.0) else -p * math.log2(p) - (1 - p) * math.log2(1 - p)
