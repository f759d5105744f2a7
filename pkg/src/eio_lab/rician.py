"""EIO rates for a non-ergodic Ricean channel learned from pilots.

The channel ``H ~ CN(mu_H, sigma_H^2)`` is estimated from N pilots of
power ``P_T`` in noise ``sigma_Z^2``.  The estimate ``h_hat = H + eps`` has
error variance ``sigma_eps^2 = sigma_Z^2 / (N P_T)`` and, given the
estimate, H is again circular Gaussian (see :func:`posterior_params`).
Every rate here is a function of that posterior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special
from scipy.stats import ncx2

from . import specfun
from .specfun import SectorRegion

NCX2_MAX_NONCENTRALITY = 1e8

__all__ = [
    "RicePrior",
    "TrainingConfig",
    "PosteriorParams",
    "InfeasibleRegionError",
    "posterior_params",
    "magnitude_tail",
    "percentile",
    "percentile_batch",
    "eio_capacity_point",
    "composite_capacity_point",
    "composite_capacity_batch",
    "composite_lower_bound",
    "ml_worst_case_rate",
    "eio_ml_capacity_point",
    "eio_ml_sector_readings",
    "eio_ml_sector_batch",
    "eio_ml_levelset_point",
    "eio_ml_levelset_batch",
    "perfect_csi_rate",
    "mean_perfect_csi_capacity",
]


class InfeasibleRegionError(ValueError):
    """No region of the requested shape carries posterior mass 1 - gamma."""


@dataclass(frozen=True)
class RicePrior:
    """Prior ``H ~ CN(mean, variance)``."""

    mean: complex
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError(f"prior variance must be > 0, got {self.variance}")

    @property
    def rice_factor(self) -> float:
        return abs(self.mean) ** 2 / self.variance

    @classmethod
    def from_rice_db(cls, rice_db: float, mean: complex = 1.0) -> "RicePrior":
        """Prior with ``|mean|^2 / variance = 10**(rice_db/10)``."""
        return cls(complex(mean), abs(mean) ** 2 / 10.0 ** (rice_db / 10.0))


@dataclass(frozen=True)
class TrainingConfig:
    n_pilots: int
    pilot_power: float
    noise_var: float = 1.0

    def __post_init__(self):
        if self.n_pilots < 1 or int(self.n_pilots) != self.n_pilots:
            raise ValueError(f"n_pilots must be a positive integer, got {self.n_pilots}")
        if not (self.pilot_power > 0 and self.noise_var > 0):
            raise ValueError("pilot_power and noise_var must be > 0")

    @property
    def snr_t(self) -> float:
        return self.n_pilots * self.pilot_power / self.noise_var

    @property
    def est_var(self) -> float:
        """Estimation-error variance ``1 / snr_t``."""
        return 1.0 / self.snr_t


@dataclass(frozen=True)
class PosteriorParams:
    """``H | estimate ~ CN(mean, variance)``; ``delta`` is the shrinkage weight."""

    mean: complex
    variance: float
    delta: float


def posterior_params(estimate: complex, prior: RicePrior, training: TrainingConfig) -> PosteriorParams:
    """Conditional law of H given the estimate.

    ``delta = snr_t sigma_H^2 / (snr_t sigma_H^2 + 1)``, mean
    ``delta h_hat + (1 - delta) mu_H`` and variance ``delta sigma_eps^2``.
    """
    s = training.snr_t * prior.variance
    delta = s / (s + 1.0)
    mean = delta * complex(estimate) + (1.0 - delta) * complex(prior.mean)
    return PosteriorParams(mean, delta * training.est_var, delta)


def magnitude_tail(r: float, post: PosteriorParams) -> float:
    """``Pr(|H| >= r | estimate)`` as a first-order Marcum Q-function."""
    if r < 0:
        raise ValueError("r must be >= 0")
    if r == 0:
        return 1.0
    if post.variance <= 0:
        return 1.0 if abs(post.mean) >= r else 0.0
    s = math.sqrt(2.0 / post.variance)
    return specfun.marcum_q1(abs(post.mean) * s, r * s)


def percentile(gamma: float, post: PosteriorParams, tol: float = 1e-10) -> float:
    """Magnitude threshold ``r`` with ``Pr(|H| >= r | estimate) = 1 - gamma``.

    Bisection on ``[0, |mean| + 10 sqrt(variance)]`` to absolute tolerance
    ``tol`` using :func:`magnitude_tail`.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if gamma == 0.0:
        return 0.0
    am = abs(post.mean)
    if post.variance <= 0:
        return am
    target = 1.0 - gamma
    lo, hi = 0.0, am + 10.0 * math.sqrt(post.variance)
    while magnitude_tail(hi, post) > target:
        hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if magnitude_tail(mid, post) >= target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def percentile_batch(gamma: float, mean_abs, variance) -> np.ndarray:
    """Vectorized :func:`percentile` via the noncentral chi-square quantile.

    ``2|H|^2 / variance`` is noncentral chi-square with 2 degrees of freedom
    and noncentrality ``2|mean|^2 / variance``.  Above a noncentrality of
    ``1e8`` the chi-square quantile is slow and unreliable, and the
    concentrated expansion ``a + s z_gamma + s^2 / (2a)`` (``s^2`` the
    per-dimension variance) is used instead; its error is below ``1e-12 a``.
    """
    mean_abs, variance = np.broadcast_arrays(np.asarray(mean_abs, dtype=float), np.asarray(variance, dtype=float))
    if gamma == 0.0:
        return np.zeros(mean_abs.shape)
    with np.errstate(divide="ignore"):
        nc = 2.0 * mean_abs**2 / variance
    big = nc > NCX2_MAX_NONCENTRALITY
    out = np.empty(mean_abs.shape)
    out[~big] = np.sqrt(ncx2.ppf(gamma, 2, nc[~big]) * variance[~big] / 2.0)
    a, s2 = mean_abs[big], variance[big] / 2.0
    out[big] = a + np.sqrt(s2) * special.ndtri(gamma) + s2 / (2.0 * a)
    return out


def perfect_csi_rate(h, power, noise_var=1.0):
    """``log2(1 + |h|^2 P / sigma^2)``; vectorized."""
    return np.log2(1.0 + np.abs(h) ** 2 * power / noise_var)


def eio_capacity_point(gamma, estimate, power, noise_var, prior: RicePrior, training: TrainingConfig) -> float:
    """EIO capacity given one estimate: ``log2(1 + r_opt^2 P / sigma^2)``.

    The best region is ``{|H| >= r_opt}``, the (1-gamma) magnitude set;
    capacity with perfect CSI is increasing in ``|H|`` so its worst state
    sits on the inner boundary.
    """
    post = posterior_params(estimate, prior, training)
    r = percentile(gamma, post)
    return float(perfect_csi_rate(r, power, noise_var))


def composite_lower_bound(estimate, power, prior, training, noise_var=None) -> float:
    """``log2(1 + |mean|^2 P / (sigma^2 + variance P))``.

    Treats the estimation error as extra Gaussian noise.
    """
    noise_var = training.noise_var if noise_var is None else noise_var
    post = posterior_params(estimate, prior, training)
    return math.log2(1.0 + abs(post.mean) ** 2 * power / (noise_var + post.variance * power))


def composite_capacity_batch(mean_abs, variance, power, noise_var=1.0):
    """Vectorized composite rate for posteriors ``CN(m, v)`` with ``|m| = mean_abs``.

    With Gaussian input ``x ~ CN(0, P)`` and a Gaussian bound on the output
    entropy, ``h(Y) - h(Y|X)`` gives
    ``log2(1 + |m|^2 P/(s + vP)) + log2(1 + vP/s) - E[log2(1 + v|x|^2/s)]``
    where ``s = sigma^2``; the last two terms are nonnegative by Jensen.
    """
    mean_abs, variance = np.broadcast_arrays(np.asarray(mean_abs, float), np.asarray(variance, float))
    base = np.log2(1.0 + mean_abs**2 * power / (noise_var + variance * power))
    c = noise_var / (variance * power)
    e1s = np.array([specfun.exp_integral_e1_scaled(z) for z in c.ravel()]).reshape(c.shape)
    spread = np.log2(1.0 + variance * power / noise_var) - specfun.LOG2E * e1s
    return base + np.maximum(spread, 0.0)


def composite_capacity_point(estimate, power, prior: RicePrior, training: TrainingConfig, noise_var=None) -> float:
    """Rate of the posterior-averaged (composite) channel for one estimate.

    ``E[log2(sigma^2 + v|x|^2)]`` uses :func:`specfun.expected_log2_affine`.
    """
    noise_var = training.noise_var if noise_var is None else noise_var
    post = posterior_params(estimate, prior, training)
    v = post.variance
    base = math.log2(1.0 + abs(post.mean) ** 2 * power / (noise_var + v * power))
    spread = math.log2(noise_var + v * power) - specfun.expected_log2_affine(noise_var, v, power)
    return base + max(spread, 0.0)


# ---------------------------------------------------------------------------
# Mismatched nearest-neighbour decoding


def ml_worst_case_rate(region: SectorRegion, power, noise_var=1.0) -> float:
    """Rate of the estimate-matched decoder at the worst corner of a sector.

    ``log2(1 + r^2 cos^2(phi) P / (r^2 sin^2(phi) P + sigma^2))`` at
    ``r = region.r_min`` and ``phi = region.phi_eps``.
    """
    if region.phi_eps > math.pi / 2 + 1e-15:
        raise ValueError("phi_eps beyond pi/2 gives a zero rate and is outside the domain")
    return float(_ml_rate(region.r_min, region.phi_eps, power, noise_var))


def _ml_rate(r, phi, power, noise_var):
    r2p = np.asarray(r, float) ** 2 * power
    c = np.cos(phi)
    s = np.sin(phi)
    return np.log2(1.0 + r2p * c * c / (r2p * s * s + noise_var))


def _relative_posterior(estimate, post):
    # Posterior mean magnitude and its angle measured from the estimate's axis.
    m = complex(post.mean)
    axis = math.atan2(complex(estimate).imag, complex(estimate).real) if estimate != 0 else 0.0
    delta = math.atan2(m.imag, m.real) - axis
    return abs(m), math.remainder(delta, 2 * math.pi)


def _solve_sector_radius(gamma, phi, mean_abs, delta, var, tol=1e-10):
    """Radius with sector mass 1-gamma for every half-angle ``phi``.

    Vectorized bisection; entries whose sector cannot reach the target
    even at r = 0 come back as NaN.
    """
    phi, mean_abs, delta, var = np.broadcast_arrays(*(np.asarray(a, float) for a in (phi, mean_abs, delta, var)))
    shape = phi.shape
    target = 1.0 - gamma
    # Sectors lie within (-pi/2, pi/2], so the 2*pi images never contribute.
    psi, w = specfun.angular_nodes(-phi.ravel(), phi.ravel(), mean_abs.ravel(), delta.ravel(), var.ravel(), shifts=(0.0,))
    v = var.reshape(-1, 1)
    a = mean_abs.reshape(-1, 1) * np.cos(psi - delta.reshape(-1, 1))
    lat = w * np.exp(-((mean_abs.reshape(-1, 1) * np.sin(psi - delta.reshape(-1, 1))) ** 2) / v) / (np.pi * v)
    sv = np.sqrt(v)
    c1 = lat * 0.5 * v
    c2 = lat * 0.5 * a * np.sqrt(np.pi * v)

    def mass(r, idx):
        d = r[:, None] - a[idx]
        g = np.exp(-d * d / v[idx])
        m = (c1[idx] * g + c2[idx] * special.erfc(d / sv[idx])).sum(-1)
        return m, -(lat[idx] * r[:, None] * g).sum(-1)

    # Bracketed Newton on the still-unconverged entries: the mass decreases
    # in r, so [lo, hi] always straddles the root and any step leaving it
    # falls back to bisection.
    n = phi.size
    feas = mass(np.zeros(n), slice(None))[0] >= target
    out = np.full(n, np.nan)
    idx = np.flatnonzero(feas)
    lo = np.zeros(idx.size)
    hi = mean_abs.ravel()[idx] + 10.0 * np.sqrt(var.ravel()[idx])
    r = 0.5 * (lo + hi)
    for _ in range(200):
        if idx.size == 0:
            break
        m, dm = mass(r, idx)
        ok = m >= target
        lo = np.where(ok, r, lo)
        hi = np.where(ok, hi, r)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            step = r - (m - target) / dm
        inside = np.isfinite(step) & (step > lo) & (step < hi)
        r_new = np.where(inside, step, 0.5 * (lo + hi))
        done = (np.abs(r_new - r) <= tol) | (hi - lo <= tol)
        out[idx[done]] = r_new[done]
        keep = ~done
        idx, lo, hi, r = idx[keep], lo[keep], hi[keep], r_new[keep]
    out[idx] = r
    return out.reshape(shape)


def eio_ml_sector_readings(gamma, estimate, power, prior, training, noise_var=None, n_grid: int = 512):
    """Sector boundary pairs for the mismatched decoder on a ``phi`` grid.

    For ``phi_j = j (pi/2) / n_grid`` solves the radius ``r_j`` whose
    sector around the estimate's axis has posterior mass ``1 - gamma`` and
    evaluates the decoder's worst-corner rate.  Infeasible angles give NaN.

    Returns
    -------
    phis, radii, rates : ndarray
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    noise_var = training.noise_var if noise_var is None else noise_var
    post = posterior_params(estimate, prior, training)
    am, dl = _relative_posterior(estimate, post)
    phis = np.arange(1, n_grid + 1) * (math.pi / 2) / n_grid
    r = _solve_sector_radius(gamma, phis, am, dl, post.variance)
    rates = np.where(np.isnan(r), np.nan, _ml_rate(np.nan_to_num(r), phis, power, noise_var))
    return phis, r, rates


def _sector_rates(gamma, phi, mean_abs, delta, var, power, noise_var):
    # Decoder rate of the (1-gamma) sector at half-angle phi; -inf when infeasible.
    r = _solve_sector_radius(gamma, phi, mean_abs, delta, var)
    rate = _ml_rate(np.nan_to_num(r), phi, power, noise_var)
    return np.where(np.isnan(r), -np.inf, rate), r


def _golden_max(f, lo, hi, iters):
    """Vectorized golden-section search for the maximum of ``f`` on ``[lo, hi]``.

    ``f`` maps an array of abscissae to values elementwise.  Returns the
    best abscissa seen and its value.
    """
    g = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = hi - g * (hi - lo)
    x2 = lo + g * (hi - lo)
    f1, f2 = f(x1), f(x2)
    for _ in range(iters):
        left = f1 >= f2  # maximum lies in [lo, x2]
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x2n = np.where(left, x1, lo + g * (hi - lo))
        x1n = np.where(left, hi - g * (hi - lo), x2)
        fnew = f(np.where(left, x1n, x2n))
        f1, f2 = np.where(left, fnew, f2), np.where(left, f1, fnew)
        x1, x2 = x1n, x2n
    take1 = f1 >= f2
    return np.where(take1, x1, x2), np.where(take1, f1, f2)


def eio_ml_capacity_point(gamma, estimate, power, prior, training, noise_var=None, n_grid: int = 512, reading: str = "max"):
    """Mismatched-decoder EIO rate over sector-shaped regions.

    Among sectors ``{|arg H - arg h_hat| <= phi, |H| >= r}`` carrying
    posterior mass ``1 - gamma`` picks the one whose worst state supports
    the highest decoder rate.  The best of ``n_grid`` angles is polished by
    golden-section search over its two neighbouring grid cells.
    ``reading="min"`` returns the smallest boundary-pair rate on the grid
    instead (diagnostic only).

    Returns
    -------
    rate : float
    region : SectorRegion
        Centred on the estimate's phase.

    Raises
    ------
    InfeasibleRegionError
        No sector with ``phi <= pi/2`` carries mass ``1 - gamma``.
    """
    noise_var = training.noise_var if noise_var is None else noise_var
    phis, r, rates = eio_ml_sector_readings(gamma, estimate, power, prior, training, noise_var, n_grid)
    if np.all(np.isnan(rates)):
        raise InfeasibleRegionError(f"no sector within pi/2 of the estimate holds mass {1 - gamma:g}")
    est = complex(estimate)
    center = math.atan2(est.imag, est.real)
    if reading != "max":
        k = int(np.nanargmin(rates))
        return float(rates[k]), SectorRegion(float(r[k]), float(phis[k]), center)
    k = int(np.nanargmax(rates))
    post = posterior_params(estimate, prior, training)
    am, dl = _relative_posterior(estimate, post)
    step = phis[0]
    lo = np.array([max(phis[k] - step, 1e-12)])
    hi = np.array([min(phis[k] + step, math.pi / 2)])
    f = lambda ph: _sector_rates(gamma, ph, am, dl, post.variance, power, noise_var)[0]
    phi_best, rate_best = _golden_max(f, lo, hi, 40)
    if rate_best[0] <= rates[k]:
        return float(rates[k]), SectorRegion(float(r[k]), float(phis[k]), center)
    r_best = _solve_sector_radius(gamma, phi_best, am, dl, post.variance)
    return float(rate_best[0]), SectorRegion(float(r_best[0]), float(phi_best[0]), center)


def eio_ml_sector_batch(gamma, mean_abs, delta, var, power, noise_var=1.0, n_coarse: int = 16, n_polish: int = 24):
    """Vectorized sector rate: coarse angle grid plus golden-section polish.

    A grid of ``n_coarse`` angles on ``(0, pi/2]`` locates the best cell;
    ``n_polish`` golden-section steps over one grid step either side refine
    it.  Infeasible draws score 0.
    """
    mean_abs, delta, var = np.broadcast_arrays(*(np.asarray(a, float) for a in (mean_abs, delta, var)))
    n = mean_abs.size
    am, dl, v = mean_abs.ravel(), delta.ravel(), var.ravel()
    step = (math.pi / 2) / n_coarse
    phis = np.broadcast_to(np.arange(1, n_coarse + 1) * step, (n, n_coarse))
    rates = _sector_rates(gamma, phis, am[:, None], dl[:, None], v[:, None], power, noise_var)[0]
    k = rates.argmax(axis=1)
    best = rates.max(axis=1)
    ctr = phis[np.arange(n), k]
    f = lambda ph: _sector_rates(gamma, ph, am, dl, v, power, noise_var)[0]
    _, polished = _golden_max(f, np.maximum(ctr - step, 1e-12), np.minimum(ctr + step, math.pi / 2), n_polish)
    out = np.maximum(best, polished)
    return np.where(np.isfinite(out), out, 0.0).reshape(mean_abs.shape)


def _levelset_mass(c, mean_abs, delta, var, power, noise_var):
    """Posterior mass where the decoder's per-state SINR is at least ``c``.

    In polar coordinates about the estimate's axis the set is
    ``|psi| < atan(1/sqrt(c))``, ``rho >= rho_c(psi)`` with
    ``rho_c^2 = c sigma^2 / (P (cos^2 psi - c sin^2 psi))``.  Returns the
    mass and its derivative with respect to ``c``.
    """
    psi_max = np.arctan(1.0 / np.sqrt(c))
    psi, w = specfun.angular_nodes(-psi_max, psi_max, mean_abs, delta, var, shifts=(0.0,))
    cc = c[..., None]
    cos2 = np.cos(psi) ** 2
    den = np.maximum(cos2 - cc * np.sin(psi) ** 2, 1e-300)
    rho = np.sqrt(cc * noise_var / (power * den))
    tail, dens = specfun.radial_tail_density(rho, psi, mean_abs[..., None], delta[..., None], var[..., None])
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        rho_drho = noise_var * cos2 / (2.0 * power * den * den)
        slope = np.where(dens > 0, dens * rho_drho, 0.0)
    mass = (tail * w).sum(-1)
    dmass = -(slope * w).sum(-1)
    return mass, dmass


def eio_ml_levelset_batch(gamma, mean_abs, delta, var, power, noise_var=1.0, tol=1e-10):
    """Mismatched-decoder EIO rate over unrestricted regions, vectorized.

    The best region for a rate that depends on the state is a super-level
    set of that rate, so the EIO rate is the gamma-quantile of the per-state
    decoder rate ``log2(1 + |H|^2 cos^2 psi P / (|H|^2 sin^2 psi P +
    sigma^2))``.  Solved for the SINR level by safeguarded Newton steps in
    ``log c``.  When the half-plane facing the estimate carries less than
    ``1 - gamma`` the quantile, and the rate, is 0.
    """
    mean_abs, delta, var = np.broadcast_arrays(*(np.asarray(a, float) for a in (mean_abs, delta, var)))
    shape = mean_abs.shape
    am, dl, v = mean_abs.ravel(), delta.ravel(), var.ravel()
    target = 1.0 - gamma
    half_plane = 0.5 * special.erfc(-am * np.cos(dl) / np.sqrt(v))
    out = np.zeros(am.size)
    live = half_plane > target
    if not live.any():
        return out.reshape(shape)
    am, dl, v = am[live], dl[live], v[live]
    # SINR never exceeds |H|^2 P / sigma^2, so its quantile is below the
    # magnitude quantile's SNR.
    c_hi = percentile_batch(gamma, am, v) ** 2 * power / noise_var * (1 + 1e-9) + 1e-300
    lo = np.log(c_hi) - 60.0
    hi = np.log(c_hi)
    u = np.log(c_hi) - 1.0
    act = np.arange(am.size)
    for _ in range(100):
        ua = u[act]
        c = np.exp(ua)
        m, dm = _levelset_mass(c, am[act], dl[act], v[act], power, noise_var)
        f = m - target
        lo[act] = np.where(f >= 0, ua, lo[act])
        hi[act] = np.where(f < 0, ua, hi[act])
        slope = dm * c
        step = np.where(slope < 0, f / np.where(slope < 0, slope, -1.0), 0.0)
        un = ua - step
        bad = ~((un > lo[act]) & (un < hi[act])) | (slope >= 0)
        un = np.where(bad, 0.5 * (lo[act] + hi[act]), un)
        u[act] = un
        done = (np.abs(un - ua) < tol) | (hi[act] - lo[act] < tol)
        act = act[~done]
        if act.size == 0:
            break
    out[live] = np.log2(1.0 + np.exp(u))
    return out.reshape(shape)


def eio_ml_levelset_point(gamma, estimate, power, prior, training, noise_var=None) -> float:
    """Scalar form of :func:`eio_ml_levelset_batch` for one estimate."""
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    noise_var = training.noise_var if noise_var is None else noise_var
    post = posterior_params(estimate, prior, training)
    am, dl = _relative_posterior(estimate, post)
    return float(eio_ml_levelset_batch(gamma, am, dl, post.variance, power, noise_var))


def mean_perfect_csi_capacity(prior: RicePrior, power, noise_var=1.0) -> float:
    """``E[log2(1 + |H|^2 P / sigma^2)]`` under the prior, by adaptive quadrature.

    ``|H|`` has the Rice density
    ``(2r/s) exp(-(r^2 + |mu|^2)/s) I_0(2r|mu|/s)`` with ``s = sigma_H^2``.
    """
    s = prior.variance
    mu = abs(prior.mean)

    def f(r):
        z = 2.0 * r * mu / s
        # exp(-(r-mu)^2/s) * ive(0, z) = exp(-(r^2+mu^2)/s) * I_0(z)
        return 2.0 * r / s * math.exp(-((r - mu) ** 2) / s) * specfun.bessel_ive(0, z) * math.log2(1.0 + r * r * power / noise_var)

    upper = mu + 40.0 * math.sqrt(s)
    pts = [mu] if mu > 0 else None
    val, _ = integrate.quad(f, 0.0, upper, points=pts, epsabs=1e-11, epsrel=1e-10, limit=200)
    return val
