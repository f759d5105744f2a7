"""Power allocation and rate-limited CSI feedback.

The receiver's estimate is either fed back perfectly or through a
``4**R_FB``-point complex quantizer designed with Lloyd iterations.  The
transmitter then spreads a long-term power budget across estimates by
water-filling on the outage-limited channel gain ``r_opt^2``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.cluster import kmeans_plusplus
from sklearn.utils.validation import check_is_fitted

from . import rician
from .rician import PosteriorParams, RicePrior, TrainingConfig

__all__ = [
    "LloydMaxQuantizer",
    "QuantizerCodebook",
    "PowerPolicy",
    "ZeroPolicyWarning",
    "lloyd_max_design",
    "design_codebook",
    "sample_estimates",
    "quantized_posterior",
    "waterfill_levels",
    "waterfill",
    "mean_eio_perfect_feedback",
    "mean_eio_quantized",
]

KDTREE_MIN_POINTS = 64
# k-means++ seeding costs O(n M); larger codebooks start from random samples.
KMEANSPP_MAX_POINTS = 256


class ZeroPolicyWarning(RuntimeWarning):
    """Every estimate has zero outage gain; the budget cannot be spent."""


def _as_points(X) -> np.ndarray:
    X = np.asarray(X)
    if np.iscomplexobj(X) or X.ndim == 1:
        X = np.asarray(X, dtype=complex).ravel()
        return np.column_stack([X.real, X.imag])
    if X.ndim != 2 or X.shape[1] != 2:
        raise ValueError("samples must be complex or an (n, 2) array of (re, im) pairs")
    return np.asarray(X, dtype=float)


def _nearest(points, codebook):
    # Nearest codepoint index and squared distance; ties go to the lower index.
    if len(codebook) >= KDTREE_MIN_POINTS:
        d, idx = cKDTree(codebook).query(points, k=1)
        return idx, d * d
    d2 = ((points[:, None, :] - codebook[None, :, :]) ** 2).sum(-1)
    idx = np.argmin(d2, axis=1)
    return idx, d2[np.arange(len(points)), idx]


class LloydMaxQuantizer(TransformerMixin, BaseEstimator):
    """Minimum mean-squared-error vector quantizer on the complex plane.

    Alternates nearest-neighbour assignment and centroid updates from a
    k-means++ start (distinct random samples above ``KMEANSPP_MAX_POINTS``
    codepoints) until the relative distortion change drops below
    ``tol`` or ``max_iter`` passes.  A codepoint whose cell empties is moved
    onto the sample farthest from its current codepoint.

    Parameters
    ----------
    n_codepoints : int
    max_iter : int
    tol : float
    random_state : int or None

    Attributes
    ----------
    codebook_ : ndarray (n_codepoints, 2)
    distortion_ : float
        Mean squared error on the fitted samples.
    distortion_history_ : list of float
    n_iter_ : int
    """

    def __init__(self, n_codepoints: int = 4, max_iter: int = 500, tol: float = 1e-8, random_state=None):
        self.n_codepoints = n_codepoints
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        pts = _as_points(X)
        M = int(self.n_codepoints)
        if M < 1:
            raise ValueError("n_codepoints must be >= 1")
        if len(pts) < M:
            raise ValueError(f"need at least {M} samples, got {len(pts)}")
        rng = np.random.default_rng(self.random_state)
        if M == 1:
            cb = pts.mean(axis=0, keepdims=True)
        elif M <= KMEANSPP_MAX_POINTS:
            seed = int(rng.integers(2**31 - 1))
            cb, _ = kmeans_plusplus(pts, M, random_state=seed)
        else:
            cb = pts[rng.choice(len(pts), M, replace=False)].copy()
        history = []
        idx, d2 = _nearest(pts, cb)
        for it in range(1, int(self.max_iter) + 1):
            dist = float(d2.mean())
            if history and dist > history[-1] * (1 + 1e-12) + 1e-300:
                raise AssertionError(f"distortion rose from {history[-1]} to {dist} at iteration {it}")
            history.append(dist)
            counts = np.bincount(idx, minlength=M)
            sums = np.column_stack([np.bincount(idx, weights=pts[:, j], minlength=M) for j in range(2)])
            nonempty = counts > 0
            cb = cb.copy()
            cb[nonempty] = sums[nonempty] / counts[nonempty, None]
            for k in np.nonzero(~nonempty)[0]:
                far = int(np.argmax(d2))
                cb[k] = pts[far]
                d2[far] = 0.0
            idx, d2 = _nearest(pts, cb)
            if len(history) > 1 and abs(history[-2] - history[-1]) <= self.tol * max(history[-2], 1e-300):
                break
        final = float(d2.mean())
        if final > history[-1] * (1 + 1e-12) + 1e-300:
            raise AssertionError("distortion rose on the final pass")
        history.append(final)
        self.codebook_ = cb
        self.distortion_ = final
        self.distortion_history_ = history
        self.n_iter_ = it
        return self

    def predict(self, X):
        """Index of the nearest codepoint for each sample."""
        check_is_fitted(self, "codebook_")
        return _nearest(_as_points(X), self.codebook_)[0]

    def transform(self, X):
        """Reconstruction (quantized value) of each sample as complex numbers."""
        cb = self.codebook_[self.predict(X)]
        return cb[:, 0] + 1j * cb[:, 1]

    def score(self, X, y=None):
        """Negative mean squared quantization error."""
        check_is_fitted(self, "codebook_")
        return -float(_nearest(_as_points(X), self.codebook_)[1].mean())


@dataclass
class QuantizerCodebook:
    points: np.ndarray
    cell_probs: np.ndarray
    distortion: float
    rate_bits: int
    n_holdout: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=complex)
        self.cell_probs = np.asarray(self.cell_probs, dtype=float)
        if self.points.shape != self.cell_probs.shape:
            raise ValueError("points and cell_probs differ in length")
        if abs(self.cell_probs.sum() - 1.0) > 1e-9 or np.any(self.cell_probs < 0):
            raise ValueError("cell_probs must be a probability vector")

    @property
    def size(self) -> int:
        return len(self.points)

    def to_dict(self) -> dict:
        return {
            "points": [[float(p.real), float(p.imag)] for p in self.points],
            "cell_probs": self.cell_probs.tolist(),
            "distortion": float(self.distortion),
            "rate_bits": int(self.rate_bits),
        }

    def to_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def from_dict(cls, doc: dict) -> "QuantizerCodebook":
        pts = np.asarray(doc["points"], dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("points must be a list of [re, im] pairs")
        return cls(pts[:, 0] + 1j * pts[:, 1], doc["cell_probs"], float(doc["distortion"]), int(doc["rate_bits"]))

    @classmethod
    def from_json(cls, path) -> "QuantizerCodebook":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def n_codepoints(rate_bits) -> int:
    """``floor(2**(2 R))``: both real dimensions of a complex symbol."""
    return int(math.floor(2.0 ** (2.0 * rate_bits)))


def lloyd_max_design(samples, rate_bits: int, seed=0, holdout=None, max_iter: int = 500, tol: float = 1e-8) -> QuantizerCodebook:
    """Design a ``4**rate_bits``-point codebook from complex ``samples``.

    Cell probabilities are empirical frequencies on ``holdout`` (the design
    set when omitted); distortion is the design-set mean squared error.
    """
    M = n_codepoints(rate_bits)
    samples = np.asarray(samples, dtype=complex).ravel()
    if len(samples) < 100 * M:
        raise ValueError(f"need at least {100 * M} samples for {M} codepoints, got {len(samples)}")
    q = LloydMaxQuantizer(M, max_iter=max_iter, tol=tol, random_state=seed).fit(samples)
    ref = samples if holdout is None else np.asarray(holdout, dtype=complex).ravel()
    counts = np.bincount(q.predict(ref), minlength=M)
    probs = counts / counts.sum()
    pts = q.codebook_[:, 0] + 1j * q.codebook_[:, 1]
    return QuantizerCodebook(pts, probs, q.distortion_, int(rate_bits), len(ref))


def sample_estimates(prior: RicePrior, training: TrainingConfig, n: int, rng) -> np.ndarray:
    """Draws of the estimate ``h_hat ~ CN(mu_H, sigma_H^2 + sigma_eps^2)``."""
    s = math.sqrt((prior.variance + training.est_var) / 2.0)
    z = rng.standard_normal((2, n))
    return complex(prior.mean) + s * (z[0] + 1j * z[1])


def design_codebook(prior, training, rate_bits, seed=0, n_design=None, n_holdout=10**6, max_iter=500) -> QuantizerCodebook:
    """Codebook for the estimate law of ``prior`` and ``training``.

    Design and hold-out sets come from independent streams of ``seed``.
    """
    M = n_codepoints(rate_bits)
    n_design = max(100 * M, 20_000) if n_design is None else n_design
    ss = np.random.SeedSequence(seed)
    r_design, r_hold = (np.random.default_rng(s) for s in ss.spawn(2))
    design = sample_estimates(prior, training, n_design, r_design)
    hold = sample_estimates(prior, training, n_holdout, r_hold)
    return lloyd_max_design(design, rate_bits, seed=seed, holdout=hold, max_iter=max_iter)


def quantized_posterior(codepoint, codebook: QuantizerCodebook, prior: RicePrior, training: TrainingConfig) -> PosteriorParams:
    """Law of H given the fed-back codepoint.

    Mean ``delta h_q + (1 - delta) mu_H``, variance
    ``delta (sigma_eps^2 + delta sigma_Q^2)`` where ``sigma_Q^2`` is the
    codebook distortion.
    """
    base = rician.posterior_params(codepoint, prior, training)
    d = base.delta
    return PosteriorParams(base.mean, d * (training.est_var + d * codebook.distortion), d)


# ---------------------------------------------------------------------------
# Power allocation


@dataclass
class PowerPolicy:
    """Water-filling power allocation.

    ``water_level`` is ``lambda`` (kkt form) or ``1/r_0`` (paper form).
    ``table`` holds the power for each entry of the estimate law that the
    policy was solved on, with probabilities ``weights``; ``scale`` is the
    final budget correction applied on top of the water level.
    """

    water_level: float
    budget: float
    mode: str
    table: np.ndarray
    weights: np.ndarray
    noise_var: float = 1.0
    zero: bool = False
    scale: float = 1.0

    @property
    def expected_power(self) -> float:
        return float(self.weights @ self.table)

    def power(self, r_star):
        """Apply the policy's rule to new outage magnitudes."""
        return _levels(np.asarray(r_star, float), self.water_level, self.mode, self.noise_var) * self.scale


def _levels(r, level, mode, noise_var):
    with np.errstate(divide="ignore"):
        if mode == "kkt":
            inv = np.where(r > 0, noise_var / np.where(r > 0, r * r, 1.0), np.inf)
            return np.maximum(level - inv, 0.0)
        if mode == "paper":
            inv = np.where(r > 0, 1.0 / np.where(r > 0, r, 1.0), np.inf)
            return noise_var * np.maximum(level - inv, 0.0)
    raise ValueError(f"unknown water-filling mode {mode!r}")


def waterfill_levels(r_star, weights, budget: float, mode: str = "kkt", noise_var: float = 1.0) -> PowerPolicy:
    """Solve the water level so the expected power equals ``budget``.

    kkt form ``P = [lambda - sigma^2 / r*^2]_+`` maximizes
    ``E[log2(1 + r*^2 P / sigma^2)]``; paper form
    ``P = sigma^2 [1/r_0 - 1/r*]_+``.  The level is bisected to 1e-15
    relative and the table rescaled by the (tiny) residual so the budget is
    met exactly.
    """
    r = np.asarray(r_star, dtype=float).ravel()
    w = np.asarray(weights, dtype=float).ravel()
    w = w / w.sum()
    if not budget > 0:
        raise ValueError("budget must be > 0")
    pos = r > 0
    if not np.any(pos & (w > 0)):
        warnings.warn("no estimate has a positive outage gain; returning the zero policy", ZeroPolicyWarning, stacklevel=2)
        return PowerPolicy(0.0, budget, mode, np.zeros_like(r), w, noise_var, zero=True)
    wpos = w[pos].sum()
    inv = noise_var / r[pos] ** 2 if mode == "kkt" else 1.0 / r[pos]
    unit = 1.0 if mode == "kkt" else noise_var
    lo, hi = 0.0, budget / (unit * wpos) + inv.max()
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if w @ _levels(r, mid, mode, noise_var) > budget:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * hi:
            break
    level = 0.5 * (lo + hi)
    table = _levels(r, level, mode, noise_var)
    scale = budget / float(w @ table)
    return PowerPolicy(level, budget, mode, table * scale, w, noise_var, scale=scale)


def waterfill(gamma, estimate_law, budget, mode, prior: RicePrior, training: TrainingConfig, seed=0, draws: int = 10**5) -> PowerPolicy:
    """Water-filling over an estimate law.

    ``estimate_law`` is a :class:`QuantizerCodebook` (exact cell-weighted
    expectation) or ``"marginal"`` for the unquantized estimate, in which
    case the expectation is a sample mean over ``draws`` seeded draws.
    """
    if isinstance(estimate_law, QuantizerCodebook):
        r = np.array([rician.percentile_batch(gamma, abs(p.mean), p.variance)
                      for p in (quantized_posterior(h, estimate_law, prior, training) for h in estimate_law.points)])
        return waterfill_levels(r, estimate_law.cell_probs, budget, mode, training.noise_var)
    if estimate_law != "marginal":
        raise ValueError("estimate_law must be a QuantizerCodebook or 'marginal'")
    rng = np.random.default_rng(seed)
    hh = sample_estimates(prior, training, draws, rng)
    r = _outage_radius(gamma, hh, prior, training)
    return waterfill_levels(r, np.ones(len(r)), budget, mode, training.noise_var)


def _outage_radius(gamma, hh, prior, training):
    s = training.snr_t * prior.variance
    d = s / (s + 1.0)
    m = d * hh + (1 - d) * complex(prior.mean)
    return rician.percentile_batch(gamma, np.abs(m), d * training.est_var)


def mean_eio_perfect_feedback(gamma, prior, training, budget, policy_mode="fixed", seed=0, draws: int = 10**4,
                              policy_draws: int = 10**5, estimates=None):
    """Mean EIO capacity when the estimate reaches the transmitter intact.

    Averages ``log2(1 + r_opt^2 P(h_hat) / sigma^2)`` over ``draws`` estimate
    samples.  ``policy_mode`` is ``"fixed"`` (``P = budget``), ``"kkt"`` or
    ``"paper"``; water levels are solved on ``policy_draws`` independent
    samples and the resulting rule applied to the evaluation samples.

    Returns
    -------
    mean, std_err : float
    """
    if budget <= 0:
        return 0.0, 0.0
    ss = np.random.SeedSequence(seed)
    r_eval, r_pol = (np.random.default_rng(s) for s in ss.spawn(2))
    hh = sample_estimates(prior, training, draws, r_eval) if estimates is None else np.asarray(estimates)
    r = _outage_radius(gamma, hh, prior, training)
    if policy_mode == "fixed":
        p = np.full(len(r), float(budget))
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroPolicyWarning)
            pol = waterfill(gamma, "marginal", budget, policy_mode, prior, training,
                            seed=int(r_pol.integers(2**63 - 1)), draws=policy_draws)
        p = pol.power(r)
    rates = np.log2(1.0 + r * r * p / training.noise_var)
    return float(rates.mean()), float(rates.std(ddof=1) / math.sqrt(len(rates)))


def mean_eio_quantized(gamma, codebook: QuantizerCodebook, budget, prior, training, mode: str = "kkt"):
    """Mean EIO capacity with a quantized estimate at the transmitter.

    Sums the per-codepoint EIO rate with water-filled power over the cell
    probabilities.  ``mode="fixed"`` spends ``budget`` on every cell.  The
    standard error reflects the hold-out sample behind the cell
    probabilities.

    Returns
    -------
    mean, std_err : float
    """
    posts = [quantized_posterior(h, codebook, prior, training) for h in codebook.points]
    r = np.array([float(rician.percentile_batch(gamma, abs(p.mean), p.variance)) for p in posts])
    if mode == "fixed" or codebook.size == 1:
        p = np.full(len(r), float(budget))
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ZeroPolicyWarning)
            p = waterfill_levels(r, codebook.cell_probs, budget, mode, training.noise_var).table
    rates = np.log2(1.0 + r * r * p / training.noise_var)
    mean = float(codebook.cell_probs @ rates)
    n = max(codebook.n_holdout, 1)
    var = float(codebook.cell_probs @ (rates - mean) ** 2)
    return mean, math.sqrt(var / n)
