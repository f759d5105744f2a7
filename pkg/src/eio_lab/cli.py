"""Command-line front end: ``eio-lab {dmc,sweep,point,quantizer,selftest}``.

Exit codes: 0 success, 2 input error, 3 infeasible, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__, dmc, feedback, harness, rician, specfun

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NUMERIC = 4

BUNDLED = ("two_bsc", "fig2a", "fig2b", "fig2c", "fig2d")


def _g(x) -> str:
    return f"{x:.6g}"


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("eio_lab") / "data" / f"{name}.json"))


def _resolve(path_or_name: str) -> Path:
    p = Path(path_or_name)
    if p.exists():
        return p
    if path_or_name in BUNDLED:
        return bundled_path(path_or_name)
    raise FileNotFoundError(f"no such file or bundled example: {path_or_name}")


def _parse_snr(text: str) -> list[float]:
    """``lo:hi:step`` or a comma list."""
    if ":" in text:
        lo, hi, step = (float(t) for t in text.split(":"))
        if step <= 0:
            raise ValueError("SNR step must be > 0")
        return [float(x) for x in np.round(np.arange(lo, hi + step / 2, step), 10)]
    return [float(t) for t in text.split(",")]


def _floats(text):
    return [float(t) for t in text.split(",")]


def _ints(text):
    return [int(t) for t in text.split(",")]


# ---------------------------------------------------------------------------
# Subcommands


def cmd_dmc(args) -> int:
    sc = dmc.DiscreteScenario.from_json(_resolve(args.scenario))
    gamma = sc.gamma if args.gamma is None else args.gamma
    budget = args.budget
    res = dmc.eio_capacity_discrete(sc, gamma, budget=budget, cost_mode=args.cost_mode, seed=args.seed or 0)
    comp, comp_in = dmc.composite_capacity_discrete(sc, cost_mode=args.cost_mode)
    full = dmc.eio_capacity_discrete(sc, 0.0, budget=budget, cost_mode=args.cost_mode, grid_check=False)
    labels = [sc.states[i] for i in res.subset.members]
    print(f"gamma                 {_g(gamma)}")
    print(f"eio_capacity_bits     {_g(res.rate)}")
    print(f"best_subset           {','.join(labels)} (mass {_g(res.subset.mass)})")
    print("best_input")
    for strat, p in zip(res.input.strategies, res.input.probs):
        print(f"  t={''.join(map(str, strat))}  {_g(p)}")
    if res.grid_rate is not None:
        print(f"grid_check_bits       {_g(res.grid_rate)}")
    print(f"compound_bits         {_g(full.rate)}")
    print(f"composite_bits        {_g(comp)}")
    return EXIT_OK


def _load_spec(args) -> harness.SweepSpec:
    doc = json.loads(_resolve(args.spec).read_text(encoding="utf-8"))
    over = {
        "seed": args.seed,
        "draws": args.draws,
        "gamma": None if args.gamma is None else [args.gamma],
        "snr_db": None if args.snr_db is None else _parse_snr(args.snr_db),
        "n_pilots": None if args.n_pilots is None else _ints(args.n_pilots),
        "rice_db": None if args.rice_db is None else _floats(args.rice_db),
        "rfb": None if args.rfb is None else _ints(args.rfb),
        "quantizer_mode": args.mode,
    }
    for k, v in over.items():
        if v is not None:
            doc.pop("snr_grid", None) if k == "snr_db" else None
            doc[k] = v
    return harness.SweepSpec.from_dict(doc)


def cmd_sweep(args) -> int:
    spec = _load_spec(args)
    t0 = time.time()
    rows = harness.run_sweep(spec)
    if args.out:
        harness.write_csv_atomic(rows, args.out)
        print(f"wrote {len(rows)} rows to {args.out} in {_g(time.time() - t0)} s", file=sys.stderr)
    else:
        sys.stdout.write(harness.rows_to_csv(rows))
    return EXIT_NUMERIC if any(r.error for r in rows) else EXIT_OK


def _parse_complex(text: str) -> complex:
    return complex(text.replace(" ", "").replace("i", "j"))


def cmd_point(args) -> int:
    gamma = 0.01 if args.gamma is None else args.gamma
    snr = 10.0 if args.snr_db is None else float(args.snr_db)
    prior, training, P = harness.grid_point_setup(snr, args.n_pilots or 1, 0.0 if args.rice_db is None else float(args.rice_db))
    power = P if args.budget is None else args.budget
    est = complex(prior.mean) if args.estimate is None else _parse_complex(args.estimate)
    post = rician.posterior_params(est, prior, training)
    r_opt = rician.percentile(gamma, post)
    print(f"snr_db                {_g(snr)}")
    print(f"estimate              {_g(est.real)}{'+' if est.imag >= 0 else '-'}{_g(abs(est.imag))}j")
    print(f"posterior_mean        {_g(post.mean.real)}{'+' if post.mean.imag >= 0 else '-'}{_g(abs(post.mean.imag))}j")
    print(f"posterior_variance    {_g(post.variance)}")
    print(f"r_opt                 {_g(r_opt)}")
    print(f"eio_bits              {_g(rician.perfect_csi_rate(r_opt, power))}")
    print(f"composite_bits        {_g(rician.composite_capacity_point(est, power, prior, training))}")
    print(f"composite_lower_bits  {_g(rician.composite_lower_bound(est, power, prior, training))}")
    try:
        rate, region = rician.eio_ml_capacity_point(gamma, est, power, prior, training)
        print(f"eio_ml_sector_bits    {_g(rate)} (r={_g(region.r_min)}, phi={_g(region.phi_eps)})")
    except rician.InfeasibleRegionError as exc:
        print(f"eio_ml_sector_bits    infeasible ({exc})")
    print(f"eio_ml_bits           {_g(rician.eio_ml_levelset_point(gamma, est, power, prior, training))}")
    print(f"perfect_csi_mean_bits {_g(rician.mean_perfect_csi_capacity(prior, power))}")
    return EXIT_OK


def cmd_quantizer(args) -> int:
    snr = 10.0 if args.snr_db is None else float(args.snr_db)
    prior, training, _ = harness.grid_point_setup(snr, args.n_pilots or 1, 0.0 if args.rice_db is None else float(args.rice_db))
    rfb = 2 if args.rfb is None else int(args.rfb)
    cb = feedback.design_codebook(prior, training, rfb, seed=args.seed or 0, n_design=args.draws,
                                  n_holdout=10**6)
    if args.out:
        cb.to_json(args.out)
        print(f"wrote {cb.size}-point codebook to {args.out}", file=sys.stderr)
    else:
        print(json.dumps(cb.to_dict(), indent=2))
    print(f"distortion {_g(cb.distortion)}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Self-test


def _check_marcum(rng, n=20):
    from scipy.stats import ncx2

    worst = 0.0
    for _ in range(n):
        a, b = rng.uniform(0, 8, 2)
        worst = max(worst, abs(specfun.marcum_q1(a, b) - ncx2.sf(b * b, 2, a * a)))
    return worst < 1e-8, f"max |err| {worst:.2e}"


def _check_nuttall(rng, n=5):
    from scipy import integrate, special

    worst = 0.0
    for _ in range(n):
        k = int(rng.integers(0, 6))
        a, b = rng.uniform(0.1, 6, 2)
        f = lambda x: x * math.exp(-0.5 * (x - a) ** 2) * special.ive(k, a * x)
        ref = integrate.quad(f, b, b + 40, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
        worst = max(worst, abs(specfun.nuttall_q(k, a, b) - ref))
    return worst < 1e-8, f"max |err| {worst:.2e}"


def _check_e1(rng, n=20):
    from scipy import special

    worst = max(abs(specfun.exp_integral_e1(z) / special.exp1(z) - 1) for z in rng.uniform(0.01, 30, n))
    return worst < 1e-10, f"max rel err {worst:.2e}"


def _check_sector(rng, n=5):
    worst = 0.0
    for _ in range(n):
        post = rician.PosteriorParams(complex(*rng.normal(0, 1.5, 2)), float(rng.uniform(0.1, 2)), 0.5)
        reg = specfun.SectorRegion(float(rng.uniform(0, 2)), float(rng.uniform(0.1, math.pi)), float(rng.uniform(-math.pi, math.pi)))
        worst = max(worst, abs(specfun.sector_mass(reg, post) - specfun.sector_mass(reg, post, "quadrature")))
    return worst < 1e-8, f"max |series - 2-D quadrature| {worst:.2e}"


def _check_dmc(rng, n=5):
    sc = dmc.DiscreteScenario.from_json(bundled_path("two_bsc"))
    a = dmc.eio_capacity_discrete(sc, 0.05).rate
    b = dmc.eio_capacity_discrete(sc, 0.0).rate
    worst = 0.0
    for _ in range(n):
        ch = rng.dirichlet(np.ones(2), size=(2, 1, 2))
        s2 = dmc.DiscreteScenario(ch, np.ones((2, 1, 1, 1)), rng.dirichlet([1, 1]))
        r = dmc.eio_capacity_discrete(s2, float(rng.choice([0.0, 0.3])))
        worst = max(worst, abs(r.rate - r.grid_rate))
    ok = abs(a - 0.7136) < 1e-3 and abs(b - 0.0290) < 1e-3 and worst < 1e-3
    return ok, f"two-BSC {a:.4f}/{b:.4f} bits, max |opt - grid| {worst:.2e}"


def _check_outage(rng, n=3):
    worst = 0.0
    for i in range(n):
        prior, training, P = harness.grid_point_setup(float(rng.uniform(0, 20)), int(rng.integers(1, 5)), float(rng.uniform(-5, 10)))
        est = complex(*rng.normal(1, 1, 2))
        for g in (0.01, 0.1):
            frac = harness.empirical_outage(g, est, P, prior, training, draws=10**6, seed=i)
            worst = max(worst, abs(frac - g) / math.sqrt(g * (1 - g) / 1e6))
    return worst < 3.0, f"max deviation {worst:.2f} binomial sigma"


def _check_percentile(rng, n=5):
    worst = 0.0
    for _ in range(n):
        post = rician.PosteriorParams(complex(*rng.normal(1, 1, 2)), float(rng.uniform(0.01, 2)), 0.5)
        g = float(rng.uniform(0.001, 0.3))
        worst = max(worst, abs(rician.magnitude_tail(rician.percentile(g, post), post) - (1 - g)))
    return worst < 1e-9, f"max |tail(percentile) - (1-gamma)| {worst:.2e}"


def _check_waterfill(rng):
    r = np.abs(rng.normal(1, 1, 500))
    worst = 0.0
    for mode in ("kkt", "paper"):
        pol = feedback.waterfill_levels(r, np.ones(500), 3.0, mode)
        worst = max(worst, abs(pol.expected_power / 3.0 - 1))
    return worst < 1e-6, f"max relative budget error {worst:.2e}"


SELFTEST_CHECKS = [
    ("marcum_oracle", _check_marcum),
    ("nuttall_oracle", _check_nuttall),
    ("e1_oracle", _check_e1),
    ("sector_series_vs_quadrature", _check_sector),
    ("dmc_grid_equivalence", _check_dmc),
    ("outage_identity", _check_outage),
    ("percentile_roundtrip", _check_percentile),
    ("waterfill_budget", _check_waterfill),
]


def run_selftest(seed: int = 0, bessel_fault: float = 0.0, out=None) -> bool:
    """Run every check; return True when all pass."""
    out = sys.stdout if out is None else out
    all_ok = True
    t0 = time.time()
    with specfun.perturbed_bessel(bessel_fault):
        for name, fn in SELFTEST_CHECKS:
            rng = np.random.default_rng([seed, len(name)])
            t = time.time()
            try:
                ok, detail = fn(rng)
            except Exception as exc:  # a crash is a failed check
                ok, detail = False, f"{type(exc).__name__}: {exc}"
            all_ok &= ok
            print(f"{'PASS' if ok else 'FAIL'}  {name:<30} {detail}  [{_g(time.time() - t)} s]", file=out)
    print(f"{'all checks passed' if all_ok else 'FAILURES'} in {_g(time.time() - t0)} s", file=out)
    return all_ok


def cmd_selftest(args) -> int:
    return EXIT_OK if run_selftest(args.seed or 0, args.inject_bessel_fault) else EXIT_NUMERIC


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--gamma", type=float, help="outage probability")
    common.add_argument("--snr-db", help="SNR in dB; sweeps accept lo:hi:step or a comma list")
    common.add_argument("--n-pilots", help="pilot count N (comma list for sweeps)")
    common.add_argument("--rice-db", help="Rice factor K_H in dB (comma list for sweeps)")
    common.add_argument("--budget", type=float, help="power budget (discrete: cost budget)")
    common.add_argument("--rfb", help="feedback rate in bits (comma list for sweeps)")
    common.add_argument("--mode", choices=["paper", "kkt"], help="water-filling form")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--draws", type=int, help="Monte Carlo draws")
    common.add_argument("--out", help="output file")

    p = argparse.ArgumentParser(prog="eio-lab", description="Estimation-induced outage capacity toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("dmc", parents=[common], help="EIO capacity of a finite channel family")
    d.add_argument("scenario", help="scenario JSON file or bundled name (two_bsc)")
    d.add_argument("--cost-mode", choices=["marginal", "per_state"], default="marginal")
    d.set_defaults(func=cmd_dmc)

    s = sub.add_parser("sweep", parents=[common], help="SNR sweep to CSV")
    s.add_argument("spec", help="sweep JSON file or bundled name (fig2a..fig2d)")
    s.set_defaults(func=cmd_sweep)

    pt = sub.add_parser("point", parents=[common], help="rates for a single Ricean estimate")
    pt.add_argument("--estimate", help="channel estimate, e.g. 0.8+0.3j (default: prior mean)")
    pt.set_defaults(func=cmd_point)

    q = sub.add_parser("quantizer", parents=[common], help="design and export a feedback codebook")
    q.set_defaults(func=cmd_quantizer)

    st = sub.add_parser("selftest", parents=[common], help="run the built-in oracle checks")
    st.add_argument("--inject-bessel-fault", type=float, default=0.0, metavar="REL",
                    help="scale every Bessel evaluation by 1+REL (checks that the oracles notice)")
    st.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except dmc.ScenarioError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (dmc.InfeasibleError, rician.InfeasibleRegionError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (specfun.QuadratureError, ArithmeticError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, FileNotFoundError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
