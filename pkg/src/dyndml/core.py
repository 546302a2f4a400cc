"""Data model for multi-period panels, counterfactual plans, and linear function classes.

A unit's record is a trajectory (S_1, T_1, ..., S_M, T_M, Y): per-period state
vectors, integer treatment codes, and a final scalar outcome. Counterfactual
plans describe, for each period, a weighted set of treatment points at which a
function of (state, treatment) is evaluated; that evaluation is linear in the
function, which is what makes the whole debiasing pipeline work with a single
linear function-approximation primitive shared by regressions and Riesz
representers.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Callable, Iterator, NamedTuple, Protocol, Sequence, runtime_checkable

import numpy as np
from numpy.typing import NDArray


class ValidationError(ValueError):
    """Invalid inputs: bad shapes, probabilities, configs."""


class PlanError(ValidationError):
    """Invalid counterfactual plan or out-of-range treatment target."""


class SolverError(RuntimeError):
    """Numerical failure in a linear solve."""


class PositivityError(RuntimeError):
    """A targeted treatment has zero propensity on a positive-mass state."""


class Prefix(NamedTuple):
    """Observable history at period t: states S_1..S_t and treatments T_1..T_{t-1}."""

    states: tuple[NDArray, ...]
    treatments: tuple[int, ...]


@dataclass(frozen=True)
class Trajectory:
    """One unit: M state vectors, M treatment codes, and the final outcome."""

    states: tuple[NDArray, ...]
    treatments: tuple[int, ...]
    outcome: float

    def __post_init__(self) -> None:
        if len(self.states) != len(self.treatments) or len(self.states) < 1:
            raise ValidationError(
                "trajectory needs matching, nonempty state and treatment sequences"
            )

    @property
    def num_periods(self) -> int:
        return len(self.states)

    def prefix(self, period: int) -> Prefix:
        """History visible when period `period` (1-based) is evaluated."""
        return Prefix(self.states[:period], self.treatments[: period - 1])


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """n trajectories stored columnwise: per-period state matrices plus code/outcome arrays.

    Invariants: all units share the period count M, the per-period state
    dimensions d_t, and the treatment arities K_t; every code lies in
    0..K_t-1.
    """

    states: tuple[NDArray, ...]          # M arrays of shape (n, d_t)
    treatments: NDArray                  # (n, M) integer codes
    outcome: NDArray                     # (n,)
    treatment_arities: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "states", tuple(np.asarray(s, dtype=float) for s in self.states))
        object.__setattr__(self, "treatments", np.asarray(self.treatments, dtype=np.int64))
        object.__setattr__(self, "outcome", np.asarray(self.outcome, dtype=float))
        object.__setattr__(self, "treatment_arities", tuple(int(k) for k in self.treatment_arities))
        m = len(self.states)
        if m < 1:
            raise ValidationError("dataset needs at least one period")
        if len(self.treatment_arities) != m:
            raise ValidationError("one treatment arity per period required")
        n = self.states[0].shape[0]
        if n < 1:
            raise ValidationError("dataset needs at least one trajectory")
        for t, s in enumerate(self.states):
            if s.ndim != 2 or s.shape[0] != n:
                raise ValidationError(f"state matrix for period {t + 1} must be (n, d_t)")
        if self.treatments.shape != (n, m):
            raise ValidationError("treatments must have shape (n, M)")
        if self.outcome.shape != (n,):
            raise ValidationError("outcome must have shape (n,)")
        for t, k in enumerate(self.treatment_arities):
            col = self.treatments[:, t]
            if col.min() < 0 or col.max() >= k:
                raise ValidationError(
                    f"treatment code out of range 0..{k - 1} in period {t + 1}"
                )

    @property
    def n_units(self) -> int:
        return self.states[0].shape[0]

    @property
    def num_periods(self) -> int:
        return len(self.states)

    @property
    def period_dims(self) -> tuple[int, ...]:
        return tuple(s.shape[1] for s in self.states)

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            states=tuple(s[i] for s in self.states),
            treatments=tuple(int(c) for c in self.treatments[i]),
            outcome=float(self.outcome[i]),
        )

    @property
    def trajectories(self) -> Iterator[Trajectory]:
        return (self.trajectory(i) for i in range(self.n_units))

    def subset(self, idx: NDArray) -> "PanelDataset":
        idx = np.asarray(idx)
        return PanelDataset(
            states=tuple(s[idx] for s in self.states),
            treatments=self.treatments[idx],
            outcome=self.outcome[idx],
            treatment_arities=self.treatment_arities,
        )

    @classmethod
    def from_trajectories(
        cls, trajectories: Sequence[Trajectory], treatment_arities: Sequence[int]
    ) -> "PanelDataset":
        if not trajectories:
            raise ValidationError("dataset needs at least one trajectory")
        m = trajectories[0].num_periods
        for z in trajectories:
            if z.num_periods != m:
                raise ValidationError("all trajectories must share the period count")
        states = tuple(
            np.stack([np.atleast_1d(np.asarray(z.states[t], dtype=float)) for z in trajectories])
            for t in range(m)
        )
        treatments = np.array([z.treatments for z in trajectories], dtype=np.int64)
        outcome = np.array([z.outcome for z in trajectories], dtype=float)
        return cls(states, treatments, outcome, tuple(treatment_arities))


# ---------------------------------------------------------------------------
# Counterfactual plans
# ---------------------------------------------------------------------------

WeightRule = Callable[[Prefix], float]
TargetRule = Callable[[Prefix], int]


@dataclass(frozen=True)
class EvalTerm:
    """One weighted evaluation point inside a period's moment.

    `weight` and `target` consume the observable prefix; the optional batch
    callables consume a PanelDataset and return per-row arrays (used on hot
    paths; when absent, evaluation falls back to a row loop).
    """

    weight: WeightRule
    target: TargetRule
    weight_batch: Callable[[PanelDataset], NDArray] | None = None
    target_batch: Callable[[PanelDataset], NDArray] | None = None

    def weights(self, data: PanelDataset, period: int) -> NDArray:
        if self.weight_batch is not None:
            return np.asarray(self.weight_batch(data), dtype=float)
        return np.array(
            [self.weight(data.trajectory(i).prefix(period)) for i in range(data.n_units)]
        )

    def targets(self, data: PanelDataset, period: int) -> NDArray:
        if self.target_batch is not None:
            return np.asarray(self.target_batch(data), dtype=np.int64)
        return np.array(
            [self.target(data.trajectory(i).prefix(period)) for i in range(data.n_units)],
            dtype=np.int64,
        )


def _const_term(code: int) -> EvalTerm:
    return EvalTerm(
        weight=lambda p: 1.0,
        target=lambda p: code,
        weight_batch=lambda d: np.ones(d.n_units),
        target_batch=lambda d: np.full(d.n_units, code, dtype=np.int64),
    )


@dataclass(frozen=True)
class FixedSequence:
    """Static counterfactual plan: treat with tau_t in every period."""

    treatments: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "treatments", tuple(int(c) for c in self.treatments))
        if len(self.treatments) < 1:
            raise PlanError("fixed sequence needs at least one period")
        if any(c < 0 for c in self.treatments):
            raise PlanError("treatment codes must be nonnegative")

    @property
    def num_periods(self) -> int:
        return len(self.treatments)

    def period_terms(self, period: int) -> tuple[EvalTerm, ...]:
        _check_period(period, self.num_periods)
        return (_const_term(self.treatments[period - 1]),)


Policy = Callable[[NDArray], int]


@dataclass(frozen=True)
class DynamicPolicy:
    """Deterministic state-feedback plan: treat with pi_t(S_t) in period t."""

    policies: tuple[Policy, ...]

    def __post_init__(self) -> None:
        if len(self.policies) < 1:
            raise PlanError("policy plan needs at least one period")

    @property
    def num_periods(self) -> int:
        return len(self.policies)

    def period_terms(self, period: int) -> tuple[EvalTerm, ...]:
        _check_period(period, self.num_periods)
        pi = self.policies[period - 1]

        def target_batch(data: PanelDataset, pi=pi, t=period) -> NDArray:
            s = data.states[t - 1]
            try:
                out = np.asarray(pi(s))
                if out.shape == (data.n_units,):
                    return out.astype(np.int64)
            except Exception:
                pass
            return np.array([int(pi(s[i])) for i in range(s.shape[0])], dtype=np.int64)

        return (
            EvalTerm(
                weight=lambda p: 1.0,
                target=lambda p, pi=pi: int(pi(p.states[-1])),
                weight_batch=lambda d: np.ones(d.n_units),
                target_batch=target_batch,
            ),
        )


def grid_policy(codes: Sequence[int]) -> Policy:
    """Policy over integer-embedded scalar states: state value s maps to codes[round(s)]."""
    table = np.asarray(codes, dtype=np.int64)

    def pi(s: NDArray) -> int | NDArray:
        s = np.asarray(s, dtype=float)
        if s.ndim == 2:
            return table[np.rint(s[:, 0]).astype(int)]
        return int(table[int(round(float(np.atleast_1d(s)[0])))])

    return pi


@dataclass(frozen=True)
class Contrast:
    """General plan: per period, a list of weighted evaluation terms.

    Fixed sequences and deterministic policies are the single-unit-weight
    special case; weighted combinations (contrasts of plans, controlled
    direct effects) carry several terms whose weights may depend on the
    realized treatment prefix.
    """

    terms: tuple[tuple[EvalTerm, ...], ...]
    component_plans: tuple[tuple[float, FixedSequence], ...] | None = None

    def __post_init__(self) -> None:
        if len(self.terms) < 1:
            raise PlanError("contrast needs at least one period")

    @property
    def num_periods(self) -> int:
        return len(self.terms)

    def period_terms(self, period: int) -> tuple[EvalTerm, ...]:
        _check_period(period, self.num_periods)
        return self.terms[period - 1]

    @staticmethod
    def of_plan(plan: "TreatmentPlan") -> "Contrast":
        """Wrap any plan as a contrast with its own terms."""
        terms = tuple(plan.period_terms(t) for t in range(1, plan.num_periods + 1))
        comps = None
        if isinstance(plan, FixedSequence):
            comps = ((1.0, plan),)
        elif isinstance(plan, Contrast):
            comps = plan.component_plans
        return Contrast(terms=terms, component_plans=comps)

    @staticmethod
    def of_sequences(
        coefficients: Sequence[float], sequences: Sequence[Sequence[int]]
    ) -> "Contrast":
        """Weighted combination sum_j c_j * theta(tau_j) of fixed sequences.

        Terms carry weights that look back exactly one treatment (the one the
        nested recursion conditions on): one term per edge (previous target,
        current target) of the plans' layered value graph, weight
        gamma * 1{T_{t-1} == previous target}. A plan's coefficient enters
        where it first occupies an edge alone; edges shared by several plans
        carry unit weight. Plans whose targets merge to a common value and
        split again later are not expressible this way (branch identity is
        not recoverable from (S_t, T_t)) and are rejected; encode treatment
        history into the states to estimate such contrasts.
        """
        if len(coefficients) != len(sequences) or not sequences:
            raise PlanError("need one coefficient per sequence")
        m = len(sequences[0])
        if any(len(s) != m for s in sequences):
            raise PlanError("all sequences must share the period count")
        merged: dict[tuple[int, ...], float] = {}
        for c, s in zip(coefficients, sequences):
            key = tuple(int(v) for v in s)
            merged[key] = merged.get(key, 0.0) + float(c)
        seqs = list(merged)
        coefs = [merged[s] for s in seqs]
        n_plans = len(seqs)

        for j in range(n_plans):
            for k in range(j + 1, n_plans):
                diff = [t for t in range(m) if seqs[j][t] != seqs[k][t]]
                if diff and any(
                    seqs[j][t] == seqs[k][t] for t in range(diff[0], diff[-1] + 1)
                ):
                    raise PlanError(
                        f"sequences {seqs[j]} and {seqs[k]} merge to a shared treatment "
                        "and split again; such contrasts need history-augmented states"
                    )

        applied = [False] * n_plans
        all_terms: list[tuple[EvalTerm, ...]] = []
        for t in range(m):
            edges: dict[tuple[int, int], list[int]] = {}
            for j, s in enumerate(seqs):
                prev = -1 if t == 0 else s[t - 1]
                edges.setdefault((prev, s[t]), []).append(j)
            period_terms: list[EvalTerm] = []
            for (prev, code), members in sorted(edges.items()):
                unapplied = [j for j in members if not applied[j]]
                if len(members) == 1 and len(unapplied) == 1:
                    gamma = coefs[members[0]]
                    applied[members[0]] = True
                elif len(unapplied) in (0, len(members)):
                    gamma = 1.0
                else:
                    raise PlanError(
                        "contrast structure mixes resolved and unresolved plans on one "
                        "edge; encode treatment history into the states instead"
                    )
                if t == 0:
                    period_terms.append(_prefix_term(gamma, (), code))
                else:
                    period_terms.append(_prefix_term(gamma, (prev,), code, lookback=t - 1))
            all_terms.append(tuple(period_terms))
        if not all(applied):
            raise PlanError(
                "some sequences never separate from the rest; their coefficients cannot "
                "be placed (encode treatment history into the states instead)"
            )
        comps = tuple((c, FixedSequence(s)) for c, s in zip(coefs, seqs))
        return Contrast(terms=tuple(all_terms), component_plans=comps)


def _prefix_term(
    scale: float, prefix_codes: tuple[int, ...], code: int, lookback: int = 0
) -> EvalTerm:
    """Term with weight scale * 1{T_{lookback+1}..T_{lookback+len} == prefix_codes}
    and a constant target; `lookback` is the 0-based index of the first
    treatment the indicator inspects."""

    def weight(p: Prefix, pre=prefix_codes, s=scale, off=lookback) -> float:
        return s if tuple(p.treatments[off : off + len(pre)]) == pre else 0.0

    def weight_batch(d: PanelDataset, pre=prefix_codes, s=scale, off=lookback) -> NDArray:
        ok = np.ones(d.n_units, dtype=bool)
        for k, c in enumerate(pre):
            ok &= d.treatments[:, off + k] == c
        return s * ok.astype(float)

    return EvalTerm(
        weight=weight,
        target=lambda p: code,
        weight_batch=weight_batch,
        target_batch=lambda d: np.full(d.n_units, code, dtype=np.int64),
    )


TreatmentPlan = FixedSequence | DynamicPolicy | Contrast


def _check_period(period: int, m: int) -> None:
    if not 1 <= period <= m:
        raise PlanError(f"period {period} outside 1..{m}")


# ---------------------------------------------------------------------------
# Feature maps and linear functions
# ---------------------------------------------------------------------------


@runtime_checkable
class FeatureMap(Protocol):
    """Deterministic map from (period-t state vector, treatment code) to R^p."""

    @property
    def dim(self) -> int: ...

    @property
    def arity(self) -> int: ...

    def __call__(self, state: NDArray, code: int) -> NDArray: ...

    def batch(self, states: NDArray, codes: NDArray) -> NDArray: ...


def _check_codes(codes: NDArray, arity: int, where: str) -> None:
    codes = np.asarray(codes)
    if codes.size and (codes.min() < 0 or codes.max() >= arity):
        bad = int(codes[(codes < 0) | (codes >= arity)][0])
        raise PlanError(f"{where}: treatment code {bad} outside 0..{arity - 1}")


@dataclass(frozen=True, eq=False)
class TabularFeatures:
    """One-hot over a finite grid of (state, treatment) cells; exact on discrete processes.

    States are matched to the nearest grid row, so integer-embedded discrete
    states resolve exactly.
    """

    grid: NDArray                       # (G, d) representative state points
    arity: int

    def __post_init__(self) -> None:
        g = np.asarray(self.grid, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        object.__setattr__(self, "grid", g)
        if self.arity < 1 or g.shape[0] < 1:
            raise ValidationError("tabular features need a nonempty grid and arity >= 1")

    @property
    def dim(self) -> int:
        return self.grid.shape[0] * self.arity

    def state_index(self, states: NDArray) -> NDArray:
        s = np.atleast_2d(np.asarray(states, dtype=float))
        d2 = ((s[:, None, :] - self.grid[None, :, :]) ** 2).sum(axis=2)
        return d2.argmin(axis=1)

    def batch(self, states: NDArray, codes: NDArray) -> NDArray:
        codes = np.asarray(codes, dtype=np.int64)
        _check_codes(codes, self.arity, "tabular features")
        cell = self.state_index(states) * self.arity + codes
        out = np.zeros((cell.shape[0], self.dim))
        out[np.arange(cell.shape[0]), cell] = 1.0
        return out

    def __call__(self, state: NDArray, code: int) -> NDArray:
        return self.batch(np.atleast_2d(state), np.array([code]))[0]


def _monomial_exponents(dim: int, degree: int) -> tuple[tuple[int, ...], ...]:
    exps = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(dim), total):
            e = [0] * dim
            for i in combo:
                e[i] += 1
            exps.append(tuple(e))
    return tuple(exps)


@dataclass(frozen=True, eq=False)
class PolynomialFeatures:
    """State monomials up to a total degree, interacted with treatment indicators."""

    state_dim: int
    degree: int
    arity: int

    def __post_init__(self) -> None:
        if self.state_dim < 1 or self.degree < 0 or self.arity < 1:
            raise ValidationError("bad polynomial feature configuration")
        object.__setattr__(self, "_exponents", _monomial_exponents(self.state_dim, self.degree))

    @property
    def dim(self) -> int:
        return len(self._exponents) * self.arity

    def _monomials(self, states: NDArray) -> NDArray:
        s = np.atleast_2d(np.asarray(states, dtype=float))
        cols = [np.prod(s ** np.array(e), axis=1) for e in self._exponents]
        return np.stack(cols, axis=1)

    def batch(self, states: NDArray, codes: NDArray) -> NDArray:
        codes = np.asarray(codes, dtype=np.int64)
        _check_codes(codes, self.arity, "polynomial features")
        mono = self._monomials(states)
        n, q = mono.shape
        out = np.zeros((n, q * self.arity))
        for k in range(self.arity):
            rows = codes == k
            out[rows, k * q : (k + 1) * q] = mono[rows]
        return out

    def __call__(self, state: NDArray, code: int) -> NDArray:
        return self.batch(np.atleast_2d(state), np.array([code]))[0]


@dataclass(frozen=True, eq=False)
class RandomFourierFeatures:
    """Seeded cosine features of the state, interacted with treatment indicators.

    Frequencies and phases are drawn once at construction from the given
    seed and never change, so evaluation is bit-identical across calls.
    """

    state_dim: int
    n_features: int
    arity: int
    lengthscale: float = 1.0
    seed: int = 0
    include_constant: bool = True

    def __post_init__(self) -> None:
        if self.state_dim < 1 or self.n_features < 1 or self.arity < 1:
            raise ValidationError("bad random Fourier feature configuration")
        if self.lengthscale <= 0:
            raise ValidationError("lengthscale must be positive")
        rng = np.random.Generator(np.random.PCG64(self.seed))
        omega = rng.standard_normal((self.n_features, self.state_dim)) / self.lengthscale
        phase = rng.uniform(0.0, 2.0 * np.pi, self.n_features)
        object.__setattr__(self, "_omega", omega)
        object.__setattr__(self, "_phase", phase)

    @property
    def dim(self) -> int:
        return (self.n_features + int(self.include_constant)) * self.arity

    def _basis(self, states: NDArray) -> NDArray:
        s = np.atleast_2d(np.asarray(states, dtype=float))
        z = np.sqrt(2.0 / self.n_features) * np.cos(s @ self._omega.T + self._phase)
        if self.include_constant:
            z = np.hstack([np.ones((z.shape[0], 1)), z])
        return z

    def batch(self, states: NDArray, codes: NDArray) -> NDArray:
        codes = np.asarray(codes, dtype=np.int64)
        _check_codes(codes, self.arity, "random Fourier features")
        basis = self._basis(states)
        n, q = basis.shape
        out = np.zeros((n, q * self.arity))
        for k in range(self.arity):
            rows = codes == k
            out[rows, k * q : (k + 1) * q] = basis[rows]
        return out

    def __call__(self, state: NDArray, code: int) -> NDArray:
        return self.batch(np.atleast_2d(state), np.array([code]))[0]


@dataclass(frozen=True, eq=False)
class ExtendedFeatures:
    """A base feature map with one extra column given by an arbitrary function.

    Used by the clever-covariate regression, whose design gains the fitted
    representer as an unpenalized regressor.
    """

    base: FeatureMap
    extra: "Fn"

    @property
    def dim(self) -> int:
        return self.base.dim + 1

    @property
    def arity(self) -> int:
        return self.base.arity

    def batch(self, states: NDArray, codes: NDArray) -> NDArray:
        x = self.base.batch(states, codes)
        e = self.extra.batch(states, codes)
        return np.hstack([x, np.asarray(e, dtype=float)[:, None]])

    def __call__(self, state: NDArray, code: int) -> NDArray:
        return self.batch(np.atleast_2d(state), np.array([code]))[0]


class Fn(Protocol):
    """Anything evaluable at (state vector, treatment code), scalar and batched."""

    def __call__(self, state: NDArray, code: int) -> float: ...

    def batch(self, states: NDArray, codes: NDArray) -> NDArray: ...


@dataclass(frozen=True, eq=False)
class LinearFn:
    """weights . features(state, code), optionally truncated to [-clip, clip]."""

    features: FeatureMap
    weights: NDArray
    clip: float | None = None

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.shape != (self.features.dim,):
            raise ValidationError(
                f"weight length {w.shape} does not match feature dimension {self.features.dim}"
            )
        if self.clip is not None and self.clip <= 0:
            raise ValidationError("clip bound must be positive")

    @property
    def arity(self) -> int:
        return self.features.arity

    def batch(self, states: NDArray, codes: NDArray) -> NDArray:
        v = self.features.batch(states, codes) @ self.weights
        if self.clip is not None:
            v = np.clip(v, -self.clip, self.clip)
        return v

    def __call__(self, state: NDArray, code: int) -> float:
        return float(self.batch(np.atleast_2d(state), np.array([code]))[0])


@dataclass(frozen=True)
class ConstantFn:
    """The constant function; stands in for the period-0 representer (== 1)."""

    value: float = 1.0

    @property
    def arity(self) -> int | None:
        return None

    def batch(self, states: NDArray, codes: NDArray) -> NDArray:
        return np.full(np.atleast_2d(states).shape[0], self.value)

    def __call__(self, state: NDArray, code: int) -> float:
        return self.value


def tabular_fn(table: NDArray, grid: NDArray | None = None, clip: float | None = None) -> LinearFn:
    """Wrap a (G, K) value table as a function on the integer-embedded grid."""
    table = np.asarray(table, dtype=float)
    if table.ndim != 2:
        raise ValidationError("value table must be two-dimensional (states x treatments)")
    g = np.arange(table.shape[0], dtype=float) if grid is None else np.asarray(grid, dtype=float)
    fmap = TabularFeatures(grid=g, arity=table.shape[1])
    return LinearFn(features=fmap, weights=table.ravel(), clip=clip)


@dataclass(frozen=True)
class NuisanceSet:
    """Per-fold nuisance bundle: regressions f_1..f_M and representers a_1..a_M.

    The period-0 representer is the constant 1 and is fixed, not a field.
    """

    regressions: tuple[Fn, ...]
    representers: tuple[Fn, ...]

    def __post_init__(self) -> None:
        if len(self.regressions) != len(self.representers) or not self.regressions:
            raise ValidationError("regressions and representers must have equal length M >= 1")

    @property
    def num_periods(self) -> int:
        return len(self.regressions)

    @property
    def a0(self) -> ConstantFn:
        return ConstantFn(1.0)

    def representer_before(self, period: int) -> Fn:
        """a_{t-1} for a 1-based period t (the constant 1 when t == 1)."""
        return self.a0 if period == 1 else self.representers[period - 2]


# ---------------------------------------------------------------------------
# Moment evaluation
# ---------------------------------------------------------------------------


def evaluate_moment(plan: TreatmentPlan, period: int, z: Trajectory, g: Fn) -> float:
    """m_period(z; g) = sum_k w_k(z) * g(S_period, d_k(z)); linear in g."""
    _check_period(period, plan.num_periods)
    if period > z.num_periods:
        raise PlanError(f"trajectory has {z.num_periods} periods, plan asks for {period}")
    prefix = z.prefix(period)
    total = 0.0
    arity = getattr(g, "arity", None)
    for j, term in enumerate(plan.period_terms(period)):
        code = int(term.target(prefix))
        if code < 0 or (arity is not None and code >= arity):
            raise PlanError(
                f"period {period}, term {j}: target code {code} outside the function domain"
            )
        w = float(term.weight(prefix))
        if w != 0.0:
            total += w * g(prefix.states[period - 1], code)
    return total


def moment_batch(plan: TreatmentPlan, period: int, data: PanelDataset, g: Fn) -> NDArray:
    """Vectorized m_period(Z_i; g) over a dataset."""
    _check_period(period, plan.num_periods)
    s = data.states[period - 1]
    out = np.zeros(data.n_units)
    arity = getattr(g, "arity", None)
    bound = data.treatment_arities[period - 1] if arity is None else arity
    for j, term in enumerate(plan.period_terms(period)):
        w = term.weights(data, period)
        d = term.targets(data, period)
        if d.size and (d.min() < 0 or d.max() >= bound):
            raise PlanError(
                f"period {period}, term {j}: target code outside 0..{bound - 1}"
            )
        live = w != 0.0
        if live.all():
            out += w * g.batch(s, d)
        elif live.any():
            vals = np.zeros(data.n_units)
            vals[live] = g.batch(s[live], d[live])
            out += w * vals
    return out


# ---------------------------------------------------------------------------
# Wide CSV schema
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_panel_csv(data: PanelDataset, path: str) -> None:
    """Wide layout: s{t}_{j} columns, then t{t} codes, then y."""
    header: list[str] = []
    for t, d in enumerate(data.period_dims, start=1):
        header.extend(f"s{t}_{j}" for j in range(1, d + 1))
    header.extend(f"t{t}" for t in range(1, data.num_periods + 1))
    header.append("y")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(data.n_units):
            row: list[str] = []
            for t in range(data.num_periods):
                row.extend(_fmt(v) for v in data.states[t][i])
            row.extend(str(int(c)) for c in data.treatments[i])
            row.append(_fmt(data.outcome[i]))
            w.writerow(row)


def read_panel_csv(path: str, treatment_arities: Sequence[int] | None = None) -> PanelDataset:
    """Load the wide schema; arities default to max observed code + 1 per period."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    state_cols: dict[int, list[tuple[int, int]]] = {}
    treat_cols: dict[int, int] = {}
    y_col = None
    for i, name in enumerate(header):
        if name == "y":
            y_col = i
        elif name.startswith("s") and "_" in name:
            t_part, j_part = name[1:].split("_", 1)
            state_cols.setdefault(int(t_part), []).append((int(j_part), i))
        elif name.startswith("t"):
            treat_cols[int(name[1:])] = i
        else:
            raise ValidationError(f"{path}: unrecognized column {name!r}")
    if y_col is None:
        raise ValidationError(f"{path}: missing column y")
    m = max(treat_cols) if treat_cols else 0
    for t in range(1, m + 1):
        if t not in treat_cols:
            raise ValidationError(f"{path}: missing column t{t}")
        if t not in state_cols:
            raise ValidationError(f"{path}: missing columns s{t}_*")
    body = rows[1:]
    if not body:
        raise ValidationError(f"{path}: no data rows")
    ordered = {t: [i for _, i in sorted(cols)] for t, cols in state_cols.items()}
    states = tuple(
        np.array([[float(r[c]) for c in ordered[t]] for r in body]) for t in range(1, m + 1)
    )
    treatments = np.array([[int(r[treat_cols[t]]) for t in range(1, m + 1)] for r in body])
    outcome = np.array([float(r[y_col]) for r in body])
    if treatment_arities is None:
        treatment_arities = tuple(int(treatments[:, t].max()) + 1 for t in range(m))
    return PanelDataset(states, treatments, outcome, tuple(treatment_arities))
