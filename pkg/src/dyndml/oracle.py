"""Discrete ground-truth processes with simulation and exact enumeration oracles.

States live on small integer grids embedded in R^1, so every population
quantity (the target, the nested regressions, the Riesz representers, the
orthogonal moment's expectation) can be computed exactly by enumerating the
joint law of (S_1, T_1, ..., S_M, T_M). Outcome noise is Gaussian and
integrates out of every oracle.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .core import (
    Contrast,
    DynamicPolicy,
    FixedSequence,
    Fn,
    NuisanceSet,
    PanelDataset,
    PositivityError,
    TreatmentPlan,
    ValidationError,
    moment_batch,
    tabular_fn,
)

_ROW_SUM_TOL = 1e-12
_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def mix_seed(seed: int, stream: int) -> int:
    """Derive an independent child seed: splitmix64(splitmix64(seed) + stream).

    Replicate r of an experiment uses mix_seed(seed, r), so replicate-level
    parallelism never changes results.
    """
    return _splitmix64((_splitmix64(seed & _MASK64) + stream) & _MASK64)


def _check_rows(table: NDArray, name: str) -> None:
    if np.any(table < 0):
        raise ValidationError(f"{name}: negative probability entry")
    sums = table.sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > _ROW_SUM_TOL):
        bad = int(np.argmax(np.abs(sums - 1.0)))
        raise ValidationError(f"{name}: row {bad} sums to {sums.ravel()[bad]!r}, not 1")


@dataclass(frozen=True, eq=False)
class DiscreteDGP:
    """Tabular data-generating process over integer state grids.

    initial:      P(S_1 = s), shape (G_1,)
    propensities: per period t, P(T_t = k | S_t = s), shape (G_t, K_t)
    transitions:  per period t < M, P(S_{t+1} = s' | S_t = s, T_t = k),
                  shape (G_t, K_t, G_{t+1})
    outcome_mean: mu(s_M, k_M), shape (G_M, K_M); Y = mu + sigma_y * N(0,1)
    seed:         default simulation seed (the CLI uses it when --seed is
                  omitted); simulate() itself depends only on its arguments.
    """

    initial: NDArray
    propensities: tuple[NDArray, ...]
    transitions: tuple[NDArray, ...]
    outcome_mean: NDArray
    sigma_y: float = 0.0
    seed: int = 0
    check_positivity: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=float))
        object.__setattr__(
            self, "propensities", tuple(np.asarray(p, dtype=float) for p in self.propensities)
        )
        object.__setattr__(
            self, "transitions", tuple(np.asarray(q, dtype=float) for q in self.transitions)
        )
        object.__setattr__(self, "outcome_mean", np.asarray(self.outcome_mean, dtype=float))
        m = len(self.propensities)
        if m < 1:
            raise ValidationError("need at least one period")
        if len(self.transitions) != m - 1:
            raise ValidationError("need one transition table per period pair")
        if self.sigma_y < 0:
            raise ValidationError("sigma_y must be nonnegative")
        _check_rows(self.initial[None, :], "initial distribution")
        for t, p in enumerate(self.propensities, start=1):
            if p.ndim != 2 or p.shape[0] != self.state_arities[t - 1]:
                raise ValidationError(f"propensity table {t}: wrong shape")
            _check_rows(p, f"propensity table {t}")
        for t, q in enumerate(self.transitions, start=1):
            expected = (self.state_arities[t - 1], self.treatment_arities[t - 1], self.state_arities[t])
            if q.shape != expected:
                raise ValidationError(f"transition table {t}: shape {q.shape}, expected {expected}")
            _check_rows(q.reshape(-1, q.shape[-1]), f"transition table {t}")
        if self.outcome_mean.shape != (self.state_arities[-1], self.treatment_arities[-1]):
            raise ValidationError("outcome table: wrong shape")
        if self.check_positivity:
            for t, (mass, p) in enumerate(zip(self.state_marginals(), self.propensities), start=1):
                for s in np.flatnonzero(mass > 0):
                    if p[s].min() <= 0.0:
                        raise ValidationError(
                            f"positivity violated: zero propensity on positive-mass state "
                            f"(period {t}, state {int(s)})"
                        )

    @property
    def num_periods(self) -> int:
        return len(self.propensities)

    @property
    def state_arities(self) -> tuple[int, ...]:
        arities = [self.initial.shape[0]]
        for q in self.transitions:
            arities.append(q.shape[-1])
        return tuple(arities)

    @property
    def treatment_arities(self) -> tuple[int, ...]:
        return tuple(p.shape[1] for p in self.propensities)

    def state_marginals(self) -> tuple[NDArray, ...]:
        """P(S_t = s) for every period, by forward propagation."""
        margs = [self.initial.copy()]
        for t in range(self.num_periods - 1):
            joint = margs[-1][:, None] * self.propensities[t]           # (G_t, K_t)
            margs.append(np.einsum("sk,sku->u", joint, self.transitions[t]))
        return tuple(margs)

    def paths(self) -> "PathLaw":
        cached = self.__dict__.get("_paths")
        if cached is None:
            cached = _enumerate_paths(self)
            object.__setattr__(self, "_paths", cached)
        return cached


@dataclass(frozen=True, eq=False)
class PathLaw:
    """Exhaustive enumeration of treatment-state paths with their probabilities."""

    states: NDArray        # (P, M) grid indices
    treatments: NDArray    # (P, M) codes
    prob: NDArray          # (P,)
    mu: NDArray            # (P,) outcome mean along each path
    data: PanelDataset     # path table viewed as a weighted dataset

    def cell_mass(self, period: int, arity_s: int, arity_k: int) -> NDArray:
        """P(S_t = s, T_t = k) as a (G_t, K_t) table for 1-based period."""
        out = np.zeros((arity_s, arity_k))
        np.add.at(out, (self.states[:, period - 1], self.treatments[:, period - 1]), self.prob)
        return out


def _enumerate_paths(dgp: DiscreteDGP) -> PathLaw:
    m = dgp.num_periods
    combos = list(
        itertools.product(*[range(g * k) for g, k in zip(dgp.state_arities, dgp.treatment_arities)])
    )
    n_paths = len(combos)
    states = np.zeros((n_paths, m), dtype=np.int64)
    treats = np.zeros((n_paths, m), dtype=np.int64)
    for t, k_t in enumerate(dgp.treatment_arities):
        col = np.array([c[t] for c in combos], dtype=np.int64)
        states[:, t] = col // k_t
        treats[:, t] = col % k_t
    prob = dgp.initial[states[:, 0]].copy()
    for t in range(m):
        prob *= dgp.propensities[t][states[:, t], treats[:, t]]
        if t < m - 1:
            prob *= dgp.transitions[t][states[:, t], treats[:, t], states[:, t + 1]]
    mu = dgp.outcome_mean[states[:, -1], treats[:, -1]]
    data = PanelDataset(
        states=tuple(states[:, t].astype(float)[:, None] for t in range(m)),
        treatments=treats,
        outcome=mu,
        treatment_arities=dgp.treatment_arities,
    )
    return PathLaw(states=states, treatments=treats, prob=prob, mu=mu, data=data)


def _check_plan(dgp: DiscreteDGP, plan: TreatmentPlan) -> None:
    if plan.num_periods != dgp.num_periods:
        raise ValidationError(
            f"plan covers {plan.num_periods} periods, process has {dgp.num_periods}"
        )


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def simulate(dgp: DiscreteDGP, n: int, seed: int) -> PanelDataset:
    """Draw n i.i.d. trajectories; deterministic given (dgp, n, seed)."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    m = dgp.num_periods
    states = np.zeros((n, m), dtype=np.int64)
    treats = np.zeros((n, m), dtype=np.int64)
    states[:, 0] = _draw_rows(rng, np.broadcast_to(dgp.initial, (n, dgp.initial.shape[0])))
    for t in range(m):
        treats[:, t] = _draw_rows(rng, dgp.propensities[t][states[:, t]])
        if t < m - 1:
            states[:, t + 1] = _draw_rows(rng, dgp.transitions[t][states[:, t], treats[:, t]])
    y = dgp.outcome_mean[states[:, -1], treats[:, -1]].copy()
    if dgp.sigma_y > 0:
        y += dgp.sigma_y * rng.standard_normal(n)
    return PanelDataset(
        states=tuple(states[:, t].astype(float)[:, None] for t in range(m)),
        treatments=treats,
        outcome=y,
        treatment_arities=dgp.treatment_arities,
    )


def _draw_rows(rng: np.random.Generator, probs: NDArray) -> NDArray:
    """Inverse-CDF draw of one category per row of a probability matrix."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])
    idx = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


# ---------------------------------------------------------------------------
# Enumeration oracles
# ---------------------------------------------------------------------------


def oracle_nested_regressions(dgp: DiscreteDGP, plan: TreatmentPlan) -> list[NDArray]:
    """Exact backward recursion: tables f_1..f_M of shape (G_t, K_t).

    f_M(s, k) = mu(s, k); earlier periods condition the next period's moment
    on (S_t, T_t) under the enumerated joint law. Cells with zero mass are
    set to 0 (they never enter any expectation).
    """
    _check_plan(dgp, plan)
    paths = dgp.paths()
    m = dgp.num_periods
    tables: list[NDArray] = [np.zeros(0)] * m
    tables[m - 1] = dgp.outcome_mean.copy()
    for t in range(m - 1, 0, -1):
        vals = moment_batch(plan, t + 1, paths.data, tabular_fn(tables[t]))
        num = np.zeros((dgp.state_arities[t - 1], dgp.treatment_arities[t - 1]))
        den = np.zeros_like(num)
        cells = (paths.states[:, t - 1], paths.treatments[:, t - 1])
        np.add.at(num, cells, paths.prob * vals)
        np.add.at(den, cells, paths.prob)
        with np.errstate(invalid="ignore", divide="ignore"):
            tbl = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
        tables[t - 1] = tbl
    return tables


def oracle_theta(dgp: DiscreteDGP, plan: TreatmentPlan) -> float:
    """theta = E[m_1(Z; f_1)] with the oracle f_1, by enumeration."""
    _check_plan(dgp, plan)
    paths = dgp.paths()
    f1 = oracle_nested_regressions(dgp, plan)[0]
    vals = moment_batch(plan, 1, paths.data, tabular_fn(f1))
    return float(paths.prob @ vals)


def oracle_theta_potential(dgp: DiscreteDGP, plan: TreatmentPlan) -> float:
    """Direct potential-outcome enumeration: force treatments along the plan.

    Supports fixed sequences, deterministic policies, and contrasts built
    from fixed sequences (which carry their component plans).
    """
    _check_plan(dgp, plan)
    if isinstance(plan, FixedSequence):
        return _forced_value(dgp, lambda t, s: plan.treatments[t])
    if isinstance(plan, DynamicPolicy):
        return _forced_value(
            dgp, lambda t, s: int(np.atleast_1d(plan.policies[t](np.array([float(s)])))[0])
        )
    if isinstance(plan, Contrast) and plan.component_plans is not None:
        return sum(c * oracle_theta_potential(dgp, p) for c, p in plan.component_plans)
    raise ValidationError("potential-outcome enumeration needs a plan with counterfactual semantics")


def _forced_value(dgp: DiscreteDGP, choose) -> float:
    dist = dgp.initial.copy()
    m = dgp.num_periods
    total = 0.0
    for t in range(m):
        codes = np.array([choose(t, s) for s in range(dgp.state_arities[t])], dtype=np.int64)
        if codes.min() < 0 or codes.max() >= dgp.treatment_arities[t]:
            raise ValidationError(f"plan targets an invalid code in period {t + 1}")
        if t < m - 1:
            dist = np.einsum("s,su->u", dist, dgp.transitions[t][np.arange(len(codes)), codes])
        else:
            total = float(dist @ dgp.outcome_mean[np.arange(len(codes)), codes])
    return total


def riesz_step(dgp: DiscreteDGP, plan: TreatmentPlan, period: int, prev: Fn) -> NDArray:
    """One forward Riesz step: the representer table of g -> E[prev * m_t(Z; g)].

    Solves the finite linear system over indicator functions: for each cell,
    a_t(s, k) P(S_t=s, T_t=k) = E[prev(S_{t-1}, T_{t-1}) * m_t(Z; 1_{(s,k)})].
    Raises when a targeted cell has zero mass but nonzero numerator; cells
    with zero mass and zero numerator get the minimum-norm value 0.
    """
    _check_plan(dgp, plan)
    paths = dgp.paths()
    g_s, k_s = dgp.state_arities[period - 1], dgp.treatment_arities[period - 1]
    if period == 1:
        prev_vals = np.ones(paths.prob.shape[0])
    else:
        prev_vals = prev.batch(paths.data.states[period - 2], paths.treatments[:, period - 2])
    num = np.zeros((g_s, k_s))
    s_col = paths.states[:, period - 1]
    for j, term in enumerate(plan.period_terms(period)):
        w = term.weights(paths.data, period)
        d = term.targets(paths.data, period)
        np.add.at(num, (s_col, d), paths.prob * prev_vals * w)
    den = paths.cell_mass(period, g_s, k_s)
    table = np.zeros((g_s, k_s))
    zero_mass: list[tuple[int, int]] = []
    for s in range(g_s):
        for k in range(k_s):
            if den[s, k] > 0:
                table[s, k] = num[s, k] / den[s, k]
            elif abs(num[s, k]) > 1e-300:
                raise PositivityError(
                    f"positivity violation at period {period}, state {s}: targeted treatment "
                    f"{k} has zero probability"
                )
            elif num[s, k] != 0.0 or _cell_targeted(paths, plan, period, s, k):
                zero_mass.append((s, k))
    if zero_mass:
        warnings.warn(
            f"period {period}: zero-mass cells {zero_mass} assigned minimum-norm value 0",
            RuntimeWarning,
            stacklevel=2,
        )
    return table


def _cell_targeted(paths: PathLaw, plan: TreatmentPlan, period: int, s: int, k: int) -> bool:
    for term in plan.period_terms(period):
        d = term.targets(paths.data, period)
        w = term.weights(paths.data, period)
        if np.any((paths.states[:, period - 1] == s) & (d == k) & (w != 0.0)):
            return True
    return False


def oracle_riesz(dgp: DiscreteDGP, plan: TreatmentPlan) -> list[NDArray]:
    """Exact representer tables a_1..a_M by forward recursion.

    Fixed sequences use the closed inverse-propensity form
    a_t(s, tau_t) = E[a_{t-1} | S_t = s] / P(T_t = tau_t | S_t = s); general
    plans solve the indicator linear system of `riesz_step`.
    """
    _check_plan(dgp, plan)
    tables: list[NDArray] = []
    prev: Fn | None = None
    for t in range(1, dgp.num_periods + 1):
        if isinstance(plan, FixedSequence):
            tables.append(_riesz_fixed_step(dgp, plan.treatments[t - 1], t, prev))
        else:
            tables.append(riesz_step(dgp, plan, t, prev))
        prev = tabular_fn(tables[-1])
    return tables


def _riesz_fixed_step(dgp: DiscreteDGP, tau: int, period: int, prev: Fn | None) -> NDArray:
    paths = dgp.paths()
    g_s, k_s = dgp.state_arities[period - 1], dgp.treatment_arities[period - 1]
    if tau >= k_s:
        raise ValidationError(f"plan targets code {tau} outside 0..{k_s - 1} in period {period}")
    if period == 1:
        prev_vals = np.ones(paths.prob.shape[0])
    else:
        prev_vals = prev.batch(paths.data.states[period - 2], paths.treatments[:, period - 2])
    s_col = paths.states[:, period - 1]
    num = np.zeros(g_s)
    mass = np.zeros(g_s)
    np.add.at(num, s_col, paths.prob * prev_vals)
    np.add.at(mass, s_col, paths.prob)
    table = np.zeros((g_s, k_s))
    for s in range(g_s):
        if mass[s] <= 0:
            continue
        pi = dgp.propensities[period - 1][s, tau]
        if pi <= 0:
            raise PositivityError(
                f"positivity violation at period {period}, state {s}: targeted treatment "
                f"{tau} has zero probability"
            )
        table[s, tau] = (num[s] / mass[s]) / pi
    return table


def population_moment(dgp: DiscreteDGP, plan: TreatmentPlan, nuisances: NuisanceSet) -> float:
    """Exact E[m_M(Z; f-bar, a-bar)] under the enumerated law (noise integrates out)."""
    _check_plan(dgp, plan)
    if nuisances.num_periods != dgp.num_periods:
        raise ValidationError("nuisance set does not cover every period")
    paths = dgp.paths()
    m = dgp.num_periods
    total = moment_batch(plan, 1, paths.data, nuisances.regressions[0])
    for t in range(1, m + 1):
        a_vals = nuisances.representers[t - 1].batch(
            paths.data.states[t - 1], paths.treatments[:, t - 1]
        )
        if t == m:
            u = paths.mu
        else:
            u = moment_batch(plan, t + 1, paths.data, nuisances.regressions[t])
        f_vals = nuisances.regressions[t - 1].batch(
            paths.data.states[t - 1], paths.treatments[:, t - 1]
        )
        total = total + a_vals * (u - f_vals)
    return float(paths.prob @ total)


def oracle_nuisances(dgp: DiscreteDGP, plan: TreatmentPlan) -> NuisanceSet:
    """Bundle the exact regression and representer tables as callable nuisances."""
    f_tabs = oracle_nested_regressions(dgp, plan)
    a_tabs = oracle_riesz(dgp, plan)
    return NuisanceSet(
        regressions=tuple(tabular_fn(tb) for tb in f_tabs),
        representers=tuple(tabular_fn(tb) for tb in a_tabs),
    )


def population_riesz_loss(
    dgp: DiscreteDGP, plan: TreatmentPlan, period: int, candidate: Fn, prev: Fn
) -> float:
    """Population value of the stagewise representer loss
    E[a(S_t,T_t)^2 - 2 prev(S_{t-1},T_{t-1}) m_t(Z; a)]."""
    _check_plan(dgp, plan)
    paths = dgp.paths()
    a_obs = candidate.batch(paths.data.states[period - 1], paths.treatments[:, period - 1])
    if period == 1:
        prev_vals = np.ones(paths.prob.shape[0])
    else:
        prev_vals = prev.batch(paths.data.states[period - 2], paths.treatments[:, period - 2])
    m_vals = moment_batch(plan, period, paths.data, candidate)
    return float(paths.prob @ (a_obs**2 - 2.0 * prev_vals * m_vals))


def population_l2(dgp: DiscreteDGP, period: int, fn_a: Fn, fn_b: Fn | None = None) -> float:
    """L2(P) distance between two functions of (S_t, T_t) under the enumerated law."""
    paths = dgp.paths()
    va = fn_a.batch(paths.data.states[period - 1], paths.treatments[:, period - 1])
    vb = 0.0 if fn_b is None else fn_b.batch(
        paths.data.states[period - 1], paths.treatments[:, period - 1]
    )
    return float(np.sqrt(paths.prob @ (va - vb) ** 2))


def random_dgp(
    rng: np.random.Generator,
    periods: int,
    max_states: int = 4,
    treatment_arity: int = 2,
    min_propensity: float = 0.1,
    sigma_y: float = 0.0,
) -> DiscreteDGP:
    """Draw a random well-posed process (used by property and acceptance tests)."""
    arities = [int(rng.integers(2, max_states + 1)) for _ in range(periods)]

    def simplex(shape: tuple[int, ...], floor: float) -> NDArray:
        raw = rng.random(shape) + floor
        return raw / raw.sum(axis=-1, keepdims=True)

    initial = simplex((arities[0],), 0.2)

    def propensity(t: int) -> NDArray:
        raw = np.maximum(simplex((arities[t], treatment_arity), 0.0), min_propensity)
        return raw / raw.sum(axis=-1, keepdims=True)  # entries stay bounded away from 0

    props = tuple(propensity(t) for t in range(periods))
    transitions = tuple(
        simplex((arities[t], treatment_arity, arities[t + 1]), 0.05) for t in range(periods - 1)
    )
    outcome = rng.normal(0.0, 2.0, size=(arities[-1], treatment_arity))
    return DiscreteDGP(
        initial=initial,
        propensities=props,
        transitions=transitions,
        outcome_mean=outcome,
        sigma_y=sigma_y,
    )


def dgp_ref_1() -> DiscreteDGP:
    """One-period binary reference process: Y = S + T exactly."""
    return DiscreteDGP(
        initial=np.array([0.5, 0.5]),
        propensities=(np.array([[0.5, 0.5], [0.75, 0.25]]),),
        transitions=(),
        outcome_mean=np.array([[0.0, 1.0], [1.0, 2.0]]),
        sigma_y=0.0,
    )


def dgp_ref_2(sigma_y: float = 1.0) -> DiscreteDGP:
    """Two-period binary reference process; theta(1,1) = 3.8."""
    return DiscreteDGP(
        initial=np.array([0.5, 0.5]),
        propensities=(
            np.array([[0.5, 0.5], [0.75, 0.25]]),
            np.array([[0.6, 0.4], [0.4, 0.6]]),
        ),
        transitions=(
            np.array(
                [
                    [[0.7, 0.3], [0.3, 0.7]],
                    [[0.5, 0.5], [0.1, 0.9]],
                ]
            ),
        ),
        outcome_mean=np.array([[0.0, 3.0], [1.0, 4.0]]),
        sigma_y=sigma_y,
    )
