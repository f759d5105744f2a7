"""SNR sweeps of mean rates over random channel estimates.

Every grid point draws its estimates from a stream derived from the master
seed and the point's grid indices, so points can run in any order or in
parallel and the output is reproducible.  All curves at a point share the
same estimate draws.

Normalization: ``|mu_H| = 1``, ``sigma_Z^2 = 1``, ``P = 10**(snr_db/10)``,
pilot power equal to the data budget and ``sigma_H^2 = 1 / K_H``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import sys
import tempfile
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import feedback, rician
from .rician import RicePrior, TrainingConfig

__all__ = [
    "CURVES",
    "SweepSpec",
    "SweepRow",
    "ExtrapolationError",
    "empirical_outage",
    "grid_point_setup",
    "run_sweep",
    "rows_to_csv",
    "write_csv_atomic",
    "read_csv",
    "gap_at_rate",
    "snr_at_rate",
]

CSV_HEADER = ["snr_db", "gamma", "N", "K_H_db", "R_FB", "curve", "rate_bits", "std_err"]

CURVES = (
    "perfect_csi",
    "eio",
    "eio_wf_kkt",
    "eio_wf_paper",
    "composite",
    "eio_no_csit",
    "eio_ml",
    "eio_ml_sector",
    "eio_q",
)


class ExtrapolationError(ValueError):
    """Target rate lies outside a curve's range over the grid."""


def thread_cap() -> int:
    env = os.environ.get("EIO_LAB_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"EIO_LAB_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


@dataclass
class SweepSpec:
    """Grid and curve selection for :func:`run_sweep`.

    ``rfb`` lists the feedback rates for the ``eio_q`` curve, which uses
    ``quantizer_mode`` water-filling.  ``draws`` is the number of estimate
    draws per grid point.
    """

    snr_db: list
    gamma: list = field(default_factory=lambda: [0.01])
    n_pilots: list = field(default_factory=lambda: [1])
    rice_db: list = field(default_factory=lambda: [0.0])
    rfb: list = field(default_factory=list)
    curves: list = field(default_factory=lambda: ["perfect_csi", "eio", "composite"])
    draws: int = 10_000
    policy_draws: int = 100_000
    seed: int = 0
    quantizer_mode: str = "kkt"
    quantizer_holdout: int = 1_000_000
    name: str = "custom"

    def __post_init__(self):
        for key in ("snr_db", "gamma", "n_pilots", "rice_db", "curves"):
            if not list(getattr(self, key)):
                raise ValueError(f"{key} must be non-empty")
        if not all(math.isfinite(s) for s in self.snr_db):
            raise ValueError("snr_db values must be finite")
        if self.draws < 1000:
            raise ValueError("draws must be >= 1000")
        unknown = set(self.curves) - set(CURVES)
        if unknown:
            raise ValueError(f"unknown curves {sorted(unknown)}; choose from {list(CURVES)}")
        if "eio_q" in self.curves and not self.rfb:
            raise ValueError("curve eio_q needs at least one feedback rate in rfb")
        if self.quantizer_mode not in ("kkt", "paper", "fixed"):
            raise ValueError(f"unknown quantizer_mode {self.quantizer_mode!r}")
        for g in self.gamma:
            if not 0.0 <= g < 1.0:
                raise ValueError(f"gamma must lie in [0, 1), got {g}")

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepSpec":
        doc = dict(doc)
        grid = doc.pop("snr_grid", None)
        if grid is not None:
            lo, hi, step = grid
            doc["snr_db"] = list(np.round(np.arange(lo, hi + step / 2, step), 10))
        allowed = set(cls.__dataclass_fields__)
        extra = set(doc) - allowed
        if extra:
            raise ValueError(f"unknown sweep fields {sorted(extra)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path) -> "SweepSpec":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class SweepRow:
    snr_db: float
    gamma: float
    N: int
    K_H_db: float
    R_FB: int | None
    curve: str
    rate_bits: float
    std_err: float
    error: str | None = None


def grid_point_setup(snr_db, n_pilots, rice_db, noise_var=1.0):
    """Prior, training and power for one grid point."""
    power = 10.0 ** (snr_db / 10.0)
    return RicePrior.from_rice_db(rice_db), TrainingConfig(int(n_pilots), power, noise_var), power


def empirical_outage(gamma, estimate, power, prior, training, draws: int = 10**6, seed=0, return_stderr: bool = False):
    """Fraction of posterior draws whose perfect-CSI rate is below the EIO rate.

    By construction of the outage threshold the expected value is ``gamma``.
    """
    if draws < 10**4:
        raise ValueError("draws must be >= 10^4")
    rate = rician.eio_capacity_point(gamma, estimate, power, training.noise_var, prior, training)
    post = rician.posterior_params(estimate, prior, training)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((2, draws))
    H = post.mean + math.sqrt(post.variance / 2.0) * (z[0] + 1j * z[1])
    frac = float(np.mean(rician.perfect_csi_rate(H, power, training.noise_var) < rate))
    if return_stderr:
        return frac, math.sqrt(frac * (1 - frac) / draws)
    return frac


def _point_rng(seed, idx):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(i) for i in idx)))


def _mean_se(x):
    x = np.asarray(x, dtype=float)
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(len(x)))


def _evaluate_point(spec: SweepSpec, i_snr, i_n, i_k):
    """Rows for every (gamma, curve) at one (snr, N, K) point."""
    snr, N, K = spec.snr_db[i_snr], spec.n_pilots[i_n], spec.rice_db[i_k]
    prior, training, P = grid_point_setup(snr, N, K)
    rng = _point_rng(spec.seed, (i_snr, i_n, i_k))
    hh = feedback.sample_estimates(prior, training, spec.draws, rng)
    d = training.snr_t * prior.variance / (training.snr_t * prior.variance + 1.0)
    m = d * hh + (1 - d) * complex(prior.mean)
    am, v = np.abs(m), d * training.est_var
    rel = np.angle(m) - np.angle(hh)
    rel = np.angle(np.exp(1j * rel))
    policy_seed = int(rng.integers(2**63 - 1))
    q_seed = int(rng.integers(2**63 - 1))
    rows = []

    def emit(gamma, curve, fn, rfb=None):
        try:
            val, se = fn()
            rows.append(SweepRow(snr, gamma, N, K, rfb, curve, max(float(val), 0.0), float(se)))
        except Exception as exc:  # recorded per row; the sweep continues
            rows.append(SweepRow(snr, gamma, N, K, rfb, curve, math.nan, math.nan, f"{type(exc).__name__}: {exc}"))

    codebooks = {}
    for gamma in spec.gamma:
        for curve in spec.curves:
            if curve == "perfect_csi":
                emit(gamma, curve, lambda: (rician.mean_perfect_csi_capacity(prior, P), 0.0))
            elif curve == "eio":
                emit(gamma, curve, lambda: feedback.mean_eio_perfect_feedback(gamma, prior, training, P, "fixed", estimates=hh))
            elif curve in ("eio_wf_kkt", "eio_wf_paper"):
                mode = curve.rsplit("_", 1)[1]
                emit(gamma, curve, lambda: feedback.mean_eio_perfect_feedback(
                    gamma, prior, training, P, mode, seed=policy_seed, estimates=hh, policy_draws=spec.policy_draws))
            elif curve == "composite":
                emit(gamma, curve, lambda: _mean_se(rician.composite_capacity_batch(am, v, P)))
            elif curve == "eio_no_csit":
                # Rate fixed before the estimate is seen: outage over the prior.
                emit(gamma, curve, lambda: (float(rician.perfect_csi_rate(
                    rician.percentile_batch(gamma, abs(prior.mean), prior.variance), P)), 0.0))
            elif curve == "eio_ml":
                emit(gamma, curve, lambda: _mean_se(rician.eio_ml_levelset_batch(gamma, am, rel, v, P)))
            elif curve == "eio_ml_sector":
                emit(gamma, curve, lambda: _mean_se(rician.eio_ml_sector_batch(gamma, am, rel, v, P)))
            elif curve == "eio_q":
                for rfb in spec.rfb:
                    def q(rfb=rfb):
                        if rfb not in codebooks:
                            codebooks[rfb] = feedback.design_codebook(
                                prior, training, rfb, seed=q_seed + int(rfb), n_holdout=spec.quantizer_holdout)
                        return feedback.mean_eio_quantized(gamma, codebooks[rfb], P, prior, training, spec.quantizer_mode)
                    emit(gamma, curve, q, rfb)
    return rows


def run_sweep(spec: SweepSpec, threads: int | None = None) -> list[SweepRow]:
    """Evaluate every requested curve on the grid.

    Rows come back ordered by SNR, pilot count, Rice factor, outage level
    and curve, whatever the thread count.
    """
    points = [(i, j, k) for i in range(len(spec.snr_db)) for j in range(len(spec.n_pilots)) for k in range(len(spec.rice_db))]
    n_threads = min(thread_cap() if threads is None else max(1, threads), len(points))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if n_threads == 1:
            results = [_evaluate_point(spec, *p) for p in points]
        else:
            with ThreadPoolExecutor(max_workers=n_threads) as pool:
                results = list(pool.map(lambda p: _evaluate_point(spec, *p), points))
    rows = [r for res in results for r in res]
    for r in rows:
        if r.error:
            print(f"warning: {r.curve} at snr={r.snr_db} dB, N={r.N}, K={r.K_H_db} dB failed: {r.error}", file=sys.stderr)
    return rows


# ---------------------------------------------------------------------------
# CSV


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow([_fmt(float(r.snr_db)), _fmt(float(r.gamma)), r.N, _fmt(float(r.K_H_db)), _fmt(r.R_FB), r.curve,
                    _fmt(r.rate_bits), _fmt(r.std_err)])
    return buf.getvalue()


def write_csv_atomic(rows, path) -> None:
    """Write rows to ``path`` via a temporary file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(rows_to_csv(rows))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_csv(path) -> list[SweepRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {rd.fieldnames}")
        return [
            SweepRow(float(r["snr_db"]), float(r["gamma"]), int(r["N"]), float(r["K_H_db"]),
                     int(r["R_FB"]) if r["R_FB"] else None, r["curve"], float(r["rate_bits"]), float(r["std_err"]))
            for r in rd
        ]


# ---------------------------------------------------------------------------
# Reading gaps off curves


def _select(rows, curve, where):
    out = []
    for r in rows:
        if r.curve != curve:
            continue
        if all(getattr(r, k) == v for k, v in (where or {}).items()):
            out.append(r)
    if not out:
        raise ValueError(f"no rows for curve {curve!r} with {where}")
    out.sort(key=lambda r: r.snr_db)
    snrs = np.array([r.snr_db for r in out])
    if len(np.unique(snrs)) != len(snrs):
        raise ValueError(f"curve {curve!r} with {where} has several rows per SNR; add selectors")
    return snrs, np.array([r.rate_bits for r in out])


def snr_at_rate(rows, curve, target_rate, where=None) -> float:
    """SNR (dB) where ``curve`` first reaches ``target_rate``, by linear interpolation."""
    snrs, rates = _select(rows, curve, where)
    if np.any(np.diff(rates) < -1e-12):
        raise ValueError(f"curve {curve!r} is not monotone in SNR")
    if not rates[0] <= target_rate <= rates[-1]:
        raise ExtrapolationError(f"{target_rate} bits outside [{rates[0]:.4g}, {rates[-1]:.4g}] for {curve!r}")
    k = int(np.searchsorted(rates, target_rate))
    if k == 0:
        return float(snrs[0])
    r0, r1 = rates[k - 1], rates[k]
    t = 0.0 if r1 == r0 else (target_rate - r0) / (r1 - r0)
    return float(snrs[k - 1] + t * (snrs[k] - snrs[k - 1]))


def gap_at_rate(rows, curve_a, curve_b, target_rate_bits, where_a=None, where_b=None) -> float:
    """Extra SNR (dB) ``curve_b`` needs over ``curve_a`` to reach the target rate."""
    return snr_at_rate(rows, curve_b, target_rate_bits, where_b) - snr_at_rate(rows, curve_a, target_rate_bits, where_a)
