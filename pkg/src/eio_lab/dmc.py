"""Finite-alphabet EIO capacity.

A finite family of channels ``W_theta(y|x,s)`` is known only through an
estimate.  The estimate fixes a posterior ``pi[theta]`` on the family and
an accuracy law ``mu(s,u,v|theta)`` linking the true ergodic state ``s`` to
the transmitter side information ``u`` and receiver side information ``v``.
Coding over Shannon strategies ``t : U -> X`` turns every family member
into a channel from ``t`` to ``(y, v)``.  The EIO capacity is the best
compound rate over any set of members whose posterior mass is at least
``1 - gamma``.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

__all__ = [
    "ScenarioError",
    "InfeasibleError",
    "PreconditionError",
    "DiscreteScenario",
    "StrategyDistribution",
    "SubsetMask",
    "EIOResult",
    "GapBound",
    "equivalent_channel",
    "strategy_channel",
    "mutual_information_strategy",
    "mutual_information_conditional",
    "compound_rate",
    "maximize_compound",
    "grid_maximize_compound",
    "eio_capacity_discrete",
    "composite_capacity_discrete",
    "divergence_gap_bound",
]

ROW_TOL = 1e-9
LOG2E = 1.0 / math.log(2.0)
MAX_STATES = 20


class ScenarioError(ValueError):
    """Malformed scenario; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class InfeasibleError(ValueError):
    """No admissible subset or input distribution exists."""


class PreconditionError(ValueError):
    """Inputs violate the precondition of a bound (not a bound failure)."""


# ---------------------------------------------------------------------------
# Scenario


def _check_rows(arr, axes, name, tol=ROW_TOL):
    # Validate that ``arr`` sums to one over ``axes`` and renormalize.
    if np.any(~np.isfinite(arr)):
        raise ScenarioError(name, "non-finite entry")
    if np.any(arr < 0):
        idx = tuple(int(i) for i in np.argwhere(arr < 0)[0])
        raise ScenarioError(f"{name}{list(idx)}", "negative probability")
    sums = arr.sum(axis=axes, keepdims=True)
    bad = np.abs(sums - 1.0) > tol
    if np.any(bad):
        where = np.argwhere(bad)[0]
        idx = [int(i) for ax, i in enumerate(where) if ax not in axes]
        total = float(sums[tuple(where)])
        raise ScenarioError(f"{name}{idx}", f"sums to {total:.12g}, expected 1 within {tol:g}")
    return arr / sums


@dataclass
class DiscreteScenario:
    """Finite channel family with its posterior and accuracy law.

    Parameters
    ----------
    channel : array, shape (n_states, S, X, Y)
        ``W_theta(y|x,s)``.
    accuracy : array, shape (n_states, S, U, V)
        Joint law ``mu(s,u,v|theta)``; each state's slice sums to one.
    posterior : array, shape (n_states,)
        ``pi[theta]`` given the estimate.
    cost : array, shape (X, U), optional
        ``Phi(x,u) >= 0``.  Defaults to zero cost.
    budget : float or None
        ``Gamma``; ``None`` means unconstrained.
    gamma : float
        Outage level stored with the scenario (used by the CLI).
    states : list of str, optional
        Labels.
    """

    channel: np.ndarray
    accuracy: np.ndarray
    posterior: np.ndarray
    cost: np.ndarray | None = None
    budget: float | None = None
    gamma: float = 0.0
    states: list = field(default_factory=list)

    def __post_init__(self):
        ch = np.asarray(self.channel, dtype=float)
        acc = np.asarray(self.accuracy, dtype=float)
        post = np.asarray(self.posterior, dtype=float)
        if ch.ndim != 4:
            raise ScenarioError("channel", f"expected 4 axes [state][s][x][y], got {ch.ndim}")
        if acc.ndim != 4:
            raise ScenarioError("accuracy", f"expected 4 axes [state][s][u][v], got {acc.ndim}")
        if post.ndim != 1:
            raise ScenarioError("posterior", "expected a vector")
        n = ch.shape[0]
        if acc.shape[0] != n or post.shape[0] != n:
            raise ScenarioError("posterior", f"state count mismatch: channel {n}, accuracy {acc.shape[0]}, posterior {post.shape[0]}")
        if acc.shape[1] != ch.shape[1]:
            raise ScenarioError("accuracy", f"ergodic state count {acc.shape[1]} != channel's {ch.shape[1]}")
        self.channel = _check_rows(ch, (3,), "channel")
        self.accuracy = _check_rows(acc, (1, 2, 3), "accuracy")
        self.posterior = _check_rows(post, (0,), "posterior")
        X, U = ch.shape[2], acc.shape[2]
        if self.cost is None:
            self.cost = np.zeros((X, U))
        self.cost = np.asarray(self.cost, dtype=float)
        if self.cost.shape != (X, U):
            raise ScenarioError("cost", f"expected shape ({X}, {U}), got {self.cost.shape}")
        if np.any(self.cost < 0) or np.any(~np.isfinite(self.cost)):
            raise ScenarioError("cost", "entries must be finite and >= 0")
        if self.budget is not None:
            self.budget = float(self.budget)
            if not self.budget >= 0:
                raise ScenarioError("budget", "must be >= 0 or null")
        self.gamma = float(self.gamma)
        if not 0.0 <= self.gamma < 1.0:
            raise ScenarioError("gamma", f"must lie in [0, 1), got {self.gamma}")
        if not self.states:
            self.states = [str(i) for i in range(n)]
        if len(self.states) != n:
            raise ScenarioError("states", f"{len(self.states)} labels for {n} states")

    @property
    def n_states(self) -> int:
        return self.channel.shape[0]

    @property
    def sizes(self) -> dict:
        _, S, X, Y = self.channel.shape
        _, _, U, V = self.accuracy.shape
        return {"S": S, "X": X, "Y": Y, "U": U, "V": V}

    def strategies(self) -> list[tuple]:
        """All mappings ``U -> X`` as tuples ``(f(0), ..., f(U-1))``."""
        sz = self.sizes
        return list(itertools.product(range(sz["X"]), repeat=sz["U"]))

    def u_marginal(self) -> np.ndarray:
        """``mu(u|estimate) = sum_theta pi[theta] mu(u|theta)``."""
        return np.einsum("t,tu->u", self.posterior, self.accuracy.sum(axis=(1, 3)))

    def strategy_costs(self, per_state: bool = False) -> np.ndarray:
        """Expected cost of every strategy.

        Returns shape ``(T,)`` under the posterior-marginalized law of U,
        or ``(n_states, T)`` with one row per state when ``per_state``.
        """
        strat = np.array(self.strategies())
        U = strat.shape[1]
        phi = self.cost[strat, np.arange(U)]  # (T, U)
        if per_state:
            return self.accuracy.sum(axis=(1, 3)) @ phi.T
        return phi @ self.u_marginal()

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscreteScenario":
        for key in ("posterior", "channel", "accuracy"):
            if key not in doc:
                raise ScenarioError(key, "missing field")
        try:
            channel = np.array(doc["channel"], dtype=float)
            accuracy = np.array(doc["accuracy"], dtype=float)
            posterior = np.array(doc["posterior"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ScenarioError("channel/accuracy/posterior", f"not a rectangular numeric array ({exc})") from None
        cost = doc.get("cost")
        return cls(
            channel=channel,
            accuracy=accuracy,
            posterior=posterior,
            cost=None if cost is None else np.array(cost, dtype=float),
            budget=doc.get("budget"),
            gamma=doc.get("gamma", 0.0),
            states=[str(s) for s in doc.get("states", [])],
        )

    @classmethod
    def from_json(cls, path) -> "DiscreteScenario":
        text = Path(path).read_text(encoding="utf-8")
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"line {exc.lineno}", exc.msg) from None
        if not isinstance(doc, dict):
            raise ScenarioError("<root>", "expected a JSON object")
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {
            "states": list(self.states),
            "posterior": self.posterior.tolist(),
            "channel": self.channel.tolist(),
            "accuracy": self.accuracy.tolist(),
            "cost": self.cost.tolist(),
            "budget": self.budget,
            "gamma": self.gamma,
        }


@dataclass(frozen=True)
class SubsetMask:
    members: tuple
    mass: float


@dataclass
class StrategyDistribution:
    """Input distribution over Shannon strategies."""

    strategies: list
    probs: np.ndarray
    costs: np.ndarray | None = None
    budget: float | None = None

    @property
    def expected_cost(self) -> float:
        if self.costs is None:
            return 0.0
        return float(np.max(np.atleast_2d(self.costs) @ self.probs))


# ---------------------------------------------------------------------------
# Channels and mutual information


def equivalent_channel(scenario: DiscreteScenario, state: int) -> np.ndarray:
    """``W(y,v|x,u) = sum_s W(y|x,s) mu(s,v|u,theta)``.

    Returns shape ``(X, U, Y, V)``.
    """
    acc = scenario.accuracy[state]  # (S, U, V)
    mu_u = acc.sum(axis=(0, 2))
    zero = np.nonzero(mu_u <= 0)[0]
    if zero.size:
        raise ScenarioError(f"accuracy[{state}]", f"transmitter side information u={int(zero[0])} has zero mass; mu(s,v|u) undefined")
    cond = acc / mu_u[None, :, None]
    return np.einsum("sxy,suv->xuyv", scenario.channel[state], cond)


def strategy_channel(scenario: DiscreteScenario, state: int) -> np.ndarray:
    """``W(y,v|t) = sum_u mu(u|theta) W(y,v|f_t(u),u)``.

    Returns shape ``(T, Y, V)`` with strategies ordered as
    :meth:`DiscreteScenario.strategies`.
    """
    acc = scenario.accuracy[state]  # mu(s,u,v)
    ch = scenario.channel[state]  # W(y|x,s) as (S, X, Y)
    strat = np.array(scenario.strategies())  # (T, U)
    U = strat.shape[1]
    # gathered[t, u, s, y] = W(y | f_t(u), s)
    gathered = np.transpose(ch[:, strat, :], (1, 2, 0, 3))
    return np.einsum("tusy,suv->tyv", gathered, acc, optimize=True) if U else gathered


def _xlogy_ratio(a, b):
    # a * log2(a / b) with 0 log 0 = 0.
    out = np.zeros(np.broadcast(a, b).shape)
    a_b = np.broadcast_to(a, out.shape)
    b_b = np.broadcast_to(b, out.shape)
    pos = a_b > 0
    out[pos] = a_b[pos] * np.log2(a_b[pos] / b_b[pos])
    return out


def mutual_information_strategy(probs, channel) -> float:
    """``I(T; Y, V)`` in bits for input ``probs`` over rows of ``channel``.

    ``channel`` has shape ``(T, ...)``; trailing axes are flattened into a
    single output alphabet.
    """
    p = np.asarray(probs, dtype=float)
    W = np.asarray(channel, dtype=float).reshape(len(p), -1)
    q = p @ W
    val = float(np.sum(p[:, None] * _xlogy_ratio(W, q[None, :])))
    return max(val, 0.0)


def mutual_information_conditional(probs, channel) -> float:
    """``I(T; Y | V)`` in bits for a ``(T, Y, V)`` channel."""
    p = np.asarray(probs, dtype=float)
    W = np.asarray(channel, dtype=float)
    joint = p[:, None, None] * W  # (T, Y, V)
    pv = joint.sum(axis=(0, 1))
    ptv = joint.sum(axis=1)
    pyv = joint.sum(axis=0)
    # I(T;Y|V) = sum p(t,y,v) log p(t,y,v) p(v) / (p(t,v) p(y,v))
    num = joint * pv[None, None, :]
    den = ptv[:, None, :] * pyv[None, :, :]
    pos = joint > 0
    return max(float(np.sum(joint[pos] * np.log2(num[pos] / den[pos]))), 0.0)


def _mi_and_grad(p, Ws):
    # Ws: (L, T, K).  Returns I (L,) and gradient dI/dp (L, T) in bits.
    q = np.einsum("t,ltk->lk", p, Ws)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(Ws > 0, Ws * np.log2(Ws / q[:, None, :]), 0.0)
    d = terms.sum(axis=2)  # D(W_t || q) per row
    mi = d @ p
    return np.maximum(mi, 0.0), d - LOG2E


def compound_rate(probs, scenario: DiscreteScenario, subset) -> tuple[float, int]:
    """Worst-case mutual information over ``subset``; returns (rate, argmin state)."""
    members = tuple(subset.members if isinstance(subset, SubsetMask) else subset)
    if not members:
        raise ValueError("compound rate over an empty subset")
    rates = [mutual_information_strategy(probs, strategy_channel(scenario, th)) for th in members]
    k = int(np.argmin(rates))
    return float(rates[k]), members[k]


# ---------------------------------------------------------------------------
# Optimization over the strategy simplex


def _project_simplex(y):
    # Euclidean projection onto the probability simplex (sort-based).
    n = y.size
    u = np.sort(y)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u * np.arange(1, n + 1) > css)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(y - tau, 0.0)


def _project_simplex_halfspace(y, c, budget):
    # Projection onto simplex ∩ {c.p <= budget} by bisection on the multiplier.
    p = _project_simplex(y)
    if c @ p <= budget + 1e-12:
        return p
    lo, hi = 0.0, 1.0
    while c @ _project_simplex(y - hi * c) > budget:
        hi *= 2.0
        if hi > 1e12:
            raise InfeasibleError("cost budget below the cheapest strategy")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if c @ _project_simplex(y - mid * c) > budget:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(1.0, hi):
            break
    return _project_simplex(y - hi * c)


def _project_feasible(y, costs, budget):
    if budget is None:
        return _project_simplex(y)
    costs = np.atleast_2d(costs)
    if costs.shape[0] == 1:
        return _project_simplex_halfspace(y, costs[0], budget)
    # Dykstra's alternating projections over several halfspaces ∩ simplex.
    x = y.copy()
    incr = [np.zeros_like(y) for _ in range(costs.shape[0])]
    for _ in range(2000):
        x_old = x
        for i, c in enumerate(costs):
            z = x + incr[i]
            x = _project_simplex_halfspace(z, c, budget)
            incr[i] = z - x
        if np.max(np.abs(x - x_old)) < 1e-13:
            break
    return x


def _check_budget(costs, budget):
    if budget is None:
        return
    costs = np.atleast_2d(costs)
    res = optimize.linprog(
        np.zeros(costs.shape[1]),
        A_ub=costs,
        b_ub=np.full(costs.shape[0], budget),
        A_eq=np.ones((1, costs.shape[1])),
        b_eq=[1.0],
        bounds=[(0, None)] * costs.shape[1],
        method="highs",
    )
    if res.status != 0:
        raise InfeasibleError(f"no input distribution meets the cost budget {budget:g}")


def _polish(p0, Ws, costs, budget):
    # Epigraph form: maximize tau subject to I_l(p) >= tau.
    T = Ws.shape[1]
    L = Ws.shape[0]

    def obj(z):
        return -z[-1]

    def obj_grad(z):
        g = np.zeros_like(z)
        g[-1] = -1.0
        return g

    def cons(z):
        mi, _ = _mi_and_grad(np.clip(z[:-1], 0, None), Ws)
        return mi - z[-1]

    def cons_jac(z):
        _, g = _mi_and_grad(np.clip(z[:-1], 0, None), Ws)
        return np.hstack([g, -np.ones((L, 1))])

    constraints = [
        {"type": "ineq", "fun": cons, "jac": cons_jac},
        {"type": "eq", "fun": lambda z: np.array([z[:-1].sum() - 1.0]), "jac": lambda z: np.r_[np.ones(T), 0.0][None, :]},
    ]
    if budget is not None:
        C = np.atleast_2d(costs)
        constraints.append(
            {"type": "ineq", "fun": lambda z: budget - C @ z[:-1], "jac": lambda z: np.hstack([-C, np.zeros((C.shape[0], 1))])}
        )
    z0 = np.r_[p0, _mi_and_grad(p0, Ws)[0].min()]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = optimize.minimize(
            obj, z0, jac=obj_grad, constraints=constraints, bounds=[(0, 1)] * T + [(None, None)],
            method="SLSQP", options={"ftol": 1e-13, "maxiter": 500},
        )
    p = _project_feasible(np.clip(res.x[:-1], 0, None), costs, budget)
    return p


def maximize_compound(Ws, costs=None, budget=None, restarts: int = 10, iters: int = 150, seed: int = 0, step: float = 0.5):
    """Maximize ``min_l I(p, W_l)`` over admissible input distributions.

    Projected supergradient ascent with diminishing steps ``step/sqrt(k)``
    from ``restarts`` starting points (uniform first, then seeded Dirichlet
    draws), followed by an SLSQP refinement of the best point in epigraph
    form.  The objective is a minimum of concave functions and hence
    concave, so a local maximizer is global.

    Parameters
    ----------
    Ws : array, shape (L, T, K)
        Strategy channels of the compound family.
    costs : array, shape (T,) or (m, T), optional
        Expected strategy costs; several rows impose several constraints.
    budget : float, optional

    Returns
    -------
    rate : float
        Bits.
    p : ndarray
        Maximizing input distribution.
    """
    Ws = np.asarray(Ws, dtype=float)
    if Ws.ndim == 2:
        Ws = Ws[None]
    Ws = Ws.reshape(Ws.shape[0], Ws.shape[1], -1)
    T = Ws.shape[1]
    if costs is None:
        costs = np.zeros(T)
    _check_budget(costs, budget)
    rng = np.random.default_rng(seed)
    best_val, best_p = -np.inf, None
    for r in range(restarts):
        start = np.full(T, 1.0 / T) if r == 0 else rng.dirichlet(np.ones(T))
        p = _project_feasible(start, costs, budget)
        for k in range(1, iters + 1):
            mi, grad = _mi_and_grad(p, Ws)
            j = int(np.argmin(mi))
            if mi[j] > best_val:
                best_val, best_p = float(mi[j]), p.copy()
            p = _project_feasible(p + step / math.sqrt(k) * grad[j], costs, budget)
    p = _polish(best_p, Ws, costs, budget)
    val = float(_mi_and_grad(p, Ws)[0].min())
    if val >= best_val:
        best_val, best_p = val, p
    return best_val, best_p


def _simplex_grid(T, step):
    n = int(round(1.0 / step))
    pts = []
    for comb in itertools.combinations(range(n + T - 1), T - 1):
        prev = -1
        parts = []
        for c in comb:
            parts.append(c - prev - 1)
            prev = c
        parts.append(n + T - 2 - prev)
        pts.append(parts)
    return np.array(pts, dtype=float) / n


def grid_maximize_compound(Ws, costs=None, budget=None, step: float = 0.01):
    """Exhaustive search of ``min_l I(p, W_l)`` over a simplex lattice."""
    Ws = np.asarray(Ws, dtype=float)
    if Ws.ndim == 2:
        Ws = Ws[None]
    Ws = Ws.reshape(Ws.shape[0], Ws.shape[1], -1)
    P = _simplex_grid(Ws.shape[1], step)
    if budget is not None and costs is not None:
        P = P[np.all(np.atleast_2d(costs) @ P.T <= budget + 1e-12, axis=0)]
        if P.size == 0:
            raise InfeasibleError("no grid point meets the cost budget")
    worst = np.full(len(P), np.inf)
    for W in Ws:
        Q = P @ W
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(W[None] > 0, W[None] * np.log2(W[None] / Q[:, None, :]), 0.0)
        worst = np.minimum(worst, np.einsum("nt,ntk->n", P, ratio))
    k = int(np.argmax(worst))
    return float(worst[k]), P[k]


# ---------------------------------------------------------------------------
# EIO and composite capacity


@dataclass
class EIOResult:
    rate: float
    subset: SubsetMask
    input: StrategyDistribution
    grid_rate: float | None = None
    subsets_evaluated: int = 0


def _minimal_feasible_subsets(post, gamma):
    n = post.size
    if n > MAX_STATES:
        raise ValueError(f"subset enumeration is capped at {MAX_STATES} states, got {n}")
    masks = np.arange(1, 1 << n, dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(bool)
    mass = bits.astype(float) @ post
    need = 1.0 - gamma - 1e-12
    feasible = mass >= need
    if not feasible.any():
        raise InfeasibleError(f"no subset reaches posterior mass {1 - gamma:g}")
    # Minimal: dropping any single member falls below the requirement.
    min_member = np.where(bits, post[None, :], np.inf).min(axis=1)
    minimal = feasible & (mass - min_member < need)
    return [(tuple(int(i) for i in np.nonzero(b)[0]), float(m)) for b, m in zip(bits[minimal], mass[minimal])]


def eio_capacity_discrete(
    scenario: DiscreteScenario,
    gamma: float | None = None,
    cost: np.ndarray | None = None,
    budget: float | None = None,
    cost_mode: str = "marginal",
    seed: int = 0,
    grid_check: bool = True,
) -> EIOResult:
    """EIO capacity of a finite channel family.

    Computes ``sup_{P_T} sup_{Lambda : pi(Lambda) >= 1-gamma} inf_{theta in
    Lambda} I(T; Y_theta, V_theta)``.  The compound rate can only drop when
    members are added, so only minimal feasible subsets are examined; they
    are visited in decreasing order of the upper bound ``min_theta C_theta``
    (single-member capacities) and pruned once the bound falls below the
    incumbent.  Ties go to the lexicographically smallest member tuple.

    Parameters
    ----------
    gamma : float, optional
        Outage level; defaults to ``scenario.gamma``.
    cost, budget : optional
        Override the scenario's cost table and budget.
    cost_mode : {"marginal", "per_state"}
        Law of U used in the cost constraint: the posterior mixture
        ``sum_theta pi[theta] mu(u|theta)`` or every ``mu(u|theta)``.
    grid_check : bool
        When there are at most 4 strategies, also search the winning
        subset on a 0.01 simplex lattice and keep the better answer.
    """
    gamma = scenario.gamma if gamma is None else float(gamma)
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if cost is not None or budget is not None:
        scenario = DiscreteScenario(
            channel=scenario.channel, accuracy=scenario.accuracy, posterior=scenario.posterior,
            cost=scenario.cost if cost is None else cost, budget=scenario.budget if budget is None else budget,
            gamma=scenario.gamma, states=scenario.states,
        )
    if cost_mode not in ("marginal", "per_state"):
        raise ValueError(f"unknown cost_mode {cost_mode!r}")
    costs = scenario.strategy_costs(per_state=cost_mode == "per_state")
    bud = scenario.budget
    _check_budget(costs, bud)
    Ws = np.stack([strategy_channel(scenario, th).reshape(len(costs.T) if costs.ndim == 1 else costs.shape[1], -1) for th in range(scenario.n_states)])

    subsets = _minimal_feasible_subsets(scenario.posterior, gamma)
    single = {}

    def single_cap(th):
        if th not in single:
            single[th] = maximize_compound(Ws[[th]], costs, bud, seed=seed)[0]
        return single[th]

    members_all = sorted({m for s, _ in subsets for m in s})
    for th in members_all:
        single_cap(th)
    ranked = sorted(subsets, key=lambda sm: (-min(single[m] for m in sm[0]), sm[0]))
    best = None
    n_eval = 0
    for members, mass in ranked:
        ub = min(single[m] for m in members)
        if best is not None and ub < best[0] - 1e-9:
            break
        val, p = maximize_compound(Ws[list(members)], costs, bud, seed=seed)
        n_eval += 1
        if best is None or val > best[0] + 1e-9 or (abs(val - best[0]) <= 1e-9 and members < best[1]):
            best = (val, members, mass, p)
    val, members, mass, p = best
    grid_val = None
    if grid_check and Ws.shape[1] <= 4:
        grid_val, gp = grid_maximize_compound(Ws[list(members)], costs, bud)
        if grid_val > val + 1e-6:
            warnings.warn(f"grid search beat the optimizer by {grid_val - val:.3g} bits", RuntimeWarning, stacklevel=2)
            val, p = grid_val, gp
    dist = StrategyDistribution(scenario.strategies(), p, costs, bud)
    return EIOResult(val, SubsetMask(members, mass), dist, grid_val, n_eval)


def composite_capacity_discrete(scenario: DiscreteScenario, cost_mode: str = "marginal", seed: int = 0) -> tuple[float, StrategyDistribution]:
    """Capacity of the posterior-averaged strategy channel."""
    costs = scenario.strategy_costs(per_state=cost_mode == "per_state")
    Wbar = sum(pi * strategy_channel(scenario, th) for th, pi in enumerate(scenario.posterior))
    T = Wbar.shape[0]
    val, p = maximize_compound(Wbar.reshape(1, T, -1), costs, scenario.budget, seed=seed)
    return val, StrategyDistribution(scenario.strategies(), p, costs, scenario.budget)


# ---------------------------------------------------------------------------
# Divergence bound


@dataclass
class GapBound:
    lhs: float
    rhs: float
    holds: bool
    weights: np.ndarray
    member_lhs: float


def _cond_divergence(p, W, Wref):
    # D(W || Wref | p) in bits; inf when absolute continuity fails on p's support.
    mask = (p[:, None] > 0) & (W > 0)
    if np.any(mask & (Wref <= 0)):
        return math.inf
    return float(np.sum((p[:, None] * W)[mask] * np.log2(W[mask] / Wref[mask])))


def _divergence(q, qref):
    mask = q > 0
    if np.any(mask & (qref <= 0)):
        return math.inf
    return float(np.sum(q[mask] * np.log2(q[mask] / qref[mask])))


def _hull_minimizer(p, Ws):
    # argmin over mixture weights w of I(p, sum_l w_l W_l); I is convex in W.
    L = Ws.shape[0]
    if L == 1:
        return np.ones(1)

    def mix(w):
        return np.tensordot(w, Ws, axes=1)

    def grad(w):
        W = mix(w)
        q = p @ W
        with np.errstate(divide="ignore", invalid="ignore"):
            lg = np.where(W > 0, np.log2(W / q[None, :]), 0.0)
        return np.einsum("t,ltk,tk->l", p, Ws, lg)

    if L == 2:
        g = lambda a: grad(np.array([1 - a, a])) @ np.array([-1.0, 1.0])
        if g(0.0) >= 0:
            a = 0.0
        elif g(1.0) <= 0:
            a = 1.0
        else:
            a = optimize.brentq(g, 0.0, 1.0, xtol=1e-15, maxiter=500)
        return np.array([1 - a, a])
    fun = lambda w: mutual_information_strategy(p, mix(w))
    res = optimize.minimize(
        fun, np.full(L, 1.0 / L), jac=grad, method="SLSQP", bounds=[(0, 1)] * L,
        constraints=[{"type": "eq", "fun": lambda w: w.sum() - 1.0}], options={"ftol": 1e-15, "maxiter": 1000},
    )
    w = np.clip(res.x, 0, None)
    return w / w.sum()


def divergence_gap_bound(scenario_or_channels, probs, subset, theta: int, convexify: bool = True) -> GapBound:
    """Rate-loss bound for a compound family.

    With ``W*`` the family member minimizing ``I(p, W)``, every ``W_theta``
    satisfies ``inf I <= I(p, W_theta) - [D(W_theta || W* | p) -
    D(p W_theta || p W*)]``.  The right-hand side equals
    ``I(p, W*) + <grad I(W*), W_theta - W*>``, so the bound needs ``W*`` to
    minimize ``I`` over the convex hull of the family.  With ``convexify``
    (default) ``W*`` is that hull minimizer and ``lhs`` is the hull
    infimum; otherwise ``W*`` is the best member and ``lhs`` the member
    minimum, for which the inequality can fail.

    Parameters
    ----------
    scenario_or_channels : DiscreteScenario or array (n_states, T, ...)
    probs : array (T,)
    subset : SubsetMask or sequence of state indices
    theta : int
        State whose divergence terms are evaluated; must be in ``subset``.
    """
    if isinstance(scenario_or_channels, DiscreteScenario):
        chans = np.stack([strategy_channel(scenario_or_channels, th) for th in range(scenario_or_channels.n_states)])
    else:
        chans = np.asarray(scenario_or_channels, dtype=float)
    p = np.asarray(probs, dtype=float)
    chans = chans.reshape(chans.shape[0], len(p), -1)
    members = list(subset.members if isinstance(subset, SubsetMask) else subset)
    if theta not in members:
        raise ValueError(f"state {theta} is not in the subset {members}")
    Ws = chans[members]
    member_rates = np.array([mutual_information_strategy(p, W) for W in Ws])
    if convexify:
        w = _hull_minimizer(p, Ws)
    else:
        w = np.zeros(len(members))
        w[int(np.argmin(member_rates))] = 1.0
    Wstar = np.tensordot(w, Ws, axes=1)
    for lam, Wl in zip(members, Ws):
        if np.any((p[:, None] > 0) & (Wl > 0) & (Wstar <= 0)):
            raise PreconditionError(f"support of state {lam} is not contained in the minimizer's support")
    lhs = mutual_information_strategy(p, Wstar) if convexify else float(member_rates.min())
    W = chans[theta]
    d_cond = _cond_divergence(p, W, Wstar)
    d_marg = _divergence(p @ W, p @ Wstar)
    rhs = mutual_information_strategy(p, W) - (d_cond - d_marg)
    return GapBound(lhs, rhs, lhs <= rhs + 1e-9, w, float(member_rates.min()))
