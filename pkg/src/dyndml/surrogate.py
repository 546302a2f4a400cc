"""Long-term treatment effects from a short-term and a long-term sample.

The short sample carries (X, T, S): controls, a binary treatment, and
surrogates. The long sample carries (X, S, Y). Under surrogacy,
conditional exogeneity, and the invariance of E[Y | S, X] across samples,
the effect of T on the unobserved long-term Y is the contrast of
g(T, X) = E_short[h(S, X) | T, X] with h(S, X) = E_long[Y | S, X]. The
debiased moment adds two corrections: the treatment representer a1(T, X) on
the short sample, and the change-of-measure representer a2(S, X), trained
under the long-sample norm against a short-sample functional, on the long
sample.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .core import Fn, LinearFn, SolverError, ValidationError
from .inference import EstimateReport, Z_95, make_folds
from .nuisance import FitConfig, _solve_spd, fit_ridge
from .oracle import mix_seed

_DUMMY_CODE = 0  # h and a2 are functions of (S, X) only; arity-1 treatment slot


@dataclass(frozen=True, eq=False)
class SurrogatePair:
    """The two samples; X and S dimensions must agree across them, T is binary."""

    short_x: NDArray
    short_t: NDArray
    short_s: NDArray
    long_x: NDArray
    long_s: NDArray
    long_y: NDArray

    def __post_init__(self) -> None:
        object.__setattr__(self, "short_x", np.atleast_2d(np.asarray(self.short_x, dtype=float)))
        object.__setattr__(self, "short_t", np.asarray(self.short_t, dtype=np.int64))
        object.__setattr__(self, "short_s", np.atleast_2d(np.asarray(self.short_s, dtype=float)))
        object.__setattr__(self, "long_x", np.atleast_2d(np.asarray(self.long_x, dtype=float)))
        object.__setattr__(self, "long_s", np.atleast_2d(np.asarray(self.long_s, dtype=float)))
        object.__setattr__(self, "long_y", np.asarray(self.long_y, dtype=float))
        if self.n_short < 1 or self.n_long < 1:
            raise ValidationError("both samples must be nonempty")
        if self.short_x.shape[1] != self.long_x.shape[1]:
            raise ValidationError("control dimensions differ across samples")
        if self.short_s.shape[1] != self.long_s.shape[1]:
            raise ValidationError("surrogate dimensions differ across samples")
        if self.short_t.shape != (self.n_short,) or not np.isin(self.short_t, (0, 1)).all():
            raise ValidationError("treatment must be binary codes 0/1")
        if self.long_y.shape != (self.n_long,):
            raise ValidationError("long outcome must be one value per record")

    @property
    def n_short(self) -> int:
        return self.short_x.shape[0]

    @property
    def n_long(self) -> int:
        return self.long_x.shape[0]

    @property
    def short_sx(self) -> NDArray:
        return np.hstack([self.short_s, self.short_x])

    @property
    def long_sx(self) -> NDArray:
        return np.hstack([self.long_s, self.long_x])

    def subset(self, short_idx: NDArray, long_idx: NDArray) -> "SurrogatePair":
        return SurrogatePair(
            short_x=self.short_x[short_idx],
            short_t=self.short_t[short_idx],
            short_s=self.short_s[short_idx],
            long_x=self.long_x[long_idx],
            long_s=self.long_s[long_idx],
            long_y=self.long_y[long_idx],
        )


@dataclass(frozen=True)
class SurrogateNuisances:
    """h = E_long[Y | S, X]; g = E_short[h | T, X]; a1 the treatment
    representer under the short law; a2 the surrogate score: the
    long-law representer of the short-sample functional E_s[a1 * h-eval]."""

    h: Fn
    g: Fn
    a1: Fn
    a2: Fn


def _check_cfg(cfg: FitConfig) -> None:
    if len(cfg.feature_maps) != 2:
        raise ValidationError(
            "surrogate fits need two feature maps: (controls, binary treatment) "
            "and (surrogates+controls)"
        )
    if cfg.feature_maps[0].arity != 2:
        raise ValidationError("the (T, X) feature map must have treatment arity 2")


def surrogate_fit(data: SurrogatePair, cfg: FitConfig) -> SurrogateNuisances:
    """Fit all four nuisances on the given samples.

    a1 minimizes E_s[a(T,X)^2 - 2(a(1,X) - a(0,X))]; a2 minimizes the
    cross-sample risk E_l[a(S,X)^2] - 2 E_s[a1(T,X) a(S,X)], each with a
    ridge penalty on the normalized Gram.
    """
    _check_cfg(cfg)
    phi_tx, phi_sx = cfg.feature_maps
    n_s, n_l = data.n_short, data.n_long
    dummy_l = np.zeros(n_l, dtype=np.int64)
    dummy_s = np.zeros(n_s, dtype=np.int64)

    x_sx_long = phi_sx.batch(data.long_sx, dummy_l)
    lam_h = cfg.stage_ridge(2, x_sx_long.T @ x_sx_long / n_l, n_l)
    try:
        h = LinearFn(phi_sx, fit_ridge(x_sx_long, data.long_y, lam_h * n_l))
    except SolverError as exc:
        raise SolverError(f"h (long-sample regression): {exc}") from exc

    h_short = h.batch(data.short_sx, dummy_s)
    x_tx = phi_tx.batch(data.short_x, data.short_t)
    lam_g = cfg.stage_ridge(1, x_tx.T @ x_tx / n_s, n_s)
    try:
        g = LinearFn(phi_tx, fit_ridge(x_tx, h_short, lam_g * n_s))
    except SolverError as exc:
        raise SolverError(f"g (short-sample projection): {exc}") from exc

    gram_tx = x_tx.T @ x_tx / n_s
    rhs_a1 = (
        phi_tx.batch(data.short_x, np.ones(n_s, dtype=np.int64))
        - phi_tx.batch(data.short_x, np.zeros(n_s, dtype=np.int64))
    ).mean(axis=0)
    try:
        beta1 = _solve_spd(gram_tx + lam_g * np.eye(phi_tx.dim), rhs_a1, lam_g)
    except SolverError as exc:
        raise SolverError(f"a1 (treatment representer): {exc}") from exc
    a1 = LinearFn(phi_tx, beta1, clip=cfg.clip)

    gram_sx = x_sx_long.T @ x_sx_long / n_l
    a1_short = a1.batch(data.short_x, data.short_t)
    rhs_a2 = (a1_short[:, None] * phi_sx.batch(data.short_sx, dummy_s)).mean(axis=0)
    try:
        beta2 = _solve_spd(gram_sx + lam_h * np.eye(phi_sx.dim), rhs_a2, lam_h)
    except SolverError as exc:
        raise SolverError(f"a2 (surrogate score): {exc}") from exc
    a2 = LinearFn(phi_sx, beta2, clip=cfg.clip)

    return SurrogateNuisances(h=h, g=g, a1=a1, a2=a2)


def surrogate_scores(
    data: SurrogatePair, nuisances: SurrogateNuisances
) -> tuple[NDArray, NDArray]:
    """Per-record score contributions: (short-sample terms, long-sample terms)."""
    n_s, n_l = data.n_short, data.n_long
    dummy_s = np.zeros(n_s, dtype=np.int64)
    dummy_l = np.zeros(n_l, dtype=np.int64)
    g1 = nuisances.g.batch(data.short_x, np.ones(n_s, dtype=np.int64))
    g0 = nuisances.g.batch(data.short_x, np.zeros(n_s, dtype=np.int64))
    g_obs = nuisances.g.batch(data.short_x, data.short_t)
    h_short = nuisances.h.batch(data.short_sx, dummy_s)
    a1 = nuisances.a1.batch(data.short_x, data.short_t)
    short_term = g1 - g0 + a1 * (h_short - g_obs)
    h_long = nuisances.h.batch(data.long_sx, dummy_l)
    a2 = nuisances.a2.batch(data.long_sx, dummy_l)
    long_term = a2 * (data.long_y - h_long)
    return short_term, long_term


def surrogate_estimate(
    data: SurrogatePair, cfg: FitConfig, q_folds: int, seed: int
) -> EstimateReport:
    """Cross-fitted two-sample estimate.

    Each sample is split into Q folds independently (the samples share no
    units); fold q of the short sample reuses the h trained on the
    complement of fold q of the long sample. The two samples are treated as
    independent for the variance: the reported sigma^2 is
    V_short + V_long * n_short/n_long under the single-sqrt(n_short) report
    convention, so sigma^2 / n_short = V_s/n_s + V_l/n_l.
    """
    folds_s = make_folds(data.n_short, q_folds, seed)
    folds_l = make_folds(data.n_long, q_folds, mix_seed(seed, 1))
    short_scores = np.empty(data.n_short)
    long_scores = np.empty(data.n_long)
    per_fold: list[dict] = []
    for q in range(q_folds):
        train = data.subset(folds_s.complement(q), folds_l.complement(q))
        try:
            nus = surrogate_fit(train, cfg)
        except (SolverError, ValidationError) as exc:
            raise SolverError(f"fold {q}: {exc}") from exc
        hold = data.subset(folds_s.folds[q], folds_l.folds[q])
        s_term, l_term = surrogate_scores(hold, nus)
        short_scores[folds_s.folds[q]] = s_term
        long_scores[folds_l.folds[q]] = l_term
        per_fold.append(
            {
                "fold": q,
                "short_size": int(folds_s.folds[q].shape[0]),
                "long_size": int(folds_l.folds[q].shape[0]),
                "short_mean": float(s_term.mean()),
                "long_mean": float(l_term.mean()),
            }
        )
    theta = float(short_scores.mean() + long_scores.mean())
    v_short = float(np.mean((short_scores - short_scores.mean()) ** 2))
    v_long = float(np.mean((long_scores - long_scores.mean()) ** 2))
    sigma = math.sqrt(v_short + v_long * data.n_short / data.n_long)
    half = Z_95 * sigma / math.sqrt(data.n_short)
    config = {
        "feature_maps": [
            {"kind": type(fm).__name__, "dim": fm.dim, "arity": fm.arity}
            for fm in cfg.feature_maps
        ],
        "ridge": cfg.ridge if not isinstance(cfg.ridge, tuple) else list(cfg.ridge),
        "clip": cfg.clip,
        "variance_convention": "sigma^2 = V_short + V_long * n_short/n_long; n = n_short",
    }
    return EstimateReport(
        theta_hat=theta,
        sigma_hat=sigma,
        ci_lower=theta - half,
        ci_upper=theta + half,
        n=data.n_short,
        Q=q_folds,
        seed=seed,
        per_fold=per_fold,
        config=config,
        n_short=data.n_short,
        n_long=data.n_long,
    )


# ---------------------------------------------------------------------------
# CSV schemas: short `x_1..x_p,t,s_1..s_q`; long `x_1..x_p,s_1..s_q,y`
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_surrogate_csvs(data: SurrogatePair, short_path: str, long_path: str) -> None:
    p, q = data.short_x.shape[1], data.short_s.shape[1]
    with open(short_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x_{j}" for j in range(1, p + 1)] + ["t"] + [f"s_{j}" for j in range(1, q + 1)])
        for i in range(data.n_short):
            w.writerow(
                [_fmt(v) for v in data.short_x[i]]
                + [str(int(data.short_t[i]))]
                + [_fmt(v) for v in data.short_s[i]]
            )
    with open(long_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(
            [f"x_{j}" for j in range(1, p + 1)]
            + [f"s_{j}" for j in range(1, q + 1)]
            + ["y"]
        )
        for i in range(data.n_long):
            w.writerow(
                [_fmt(v) for v in data.long_x[i]]
                + [_fmt(v) for v in data.long_s[i]]
                + [_fmt(data.long_y[i])]
            )


def _split_columns(header: list[str], path: str) -> tuple[list[int], list[int], int | None, int | None]:
    x_cols: list[tuple[int, int]] = []
    s_cols: list[tuple[int, int]] = []
    t_col = y_col = None
    for i, name in enumerate(h.strip() for h in header):
        if name.startswith("x_"):
            x_cols.append((int(name[2:]), i))
        elif name.startswith("s_"):
            s_cols.append((int(name[2:]), i))
        elif name == "t":
            t_col = i
        elif name == "y":
            y_col = i
        else:
            raise ValidationError(f"{path}: unrecognized column {name!r}")
    return [i for _, i in sorted(x_cols)], [i for _, i in sorted(s_cols)], t_col, y_col


def read_surrogate_csvs(short_path: str, long_path: str) -> SurrogatePair:
    with open(short_path, newline="") as fh:
        short_rows = list(csv.reader(fh))
    with open(long_path, newline="") as fh:
        long_rows = list(csv.reader(fh))
    if len(short_rows) < 2 or len(long_rows) < 2:
        raise ValidationError("surrogate samples must be nonempty")
    xs, ss, t_col, _ = _split_columns(short_rows[0], short_path)
    if t_col is None:
        raise ValidationError(f"{short_path}: missing column t")
    xl, sl, _, y_col = _split_columns(long_rows[0], long_path)
    if y_col is None:
        raise ValidationError(f"{long_path}: missing column y")
    sb, lb = short_rows[1:], long_rows[1:]
    return SurrogatePair(
        short_x=np.array([[float(r[c]) for c in xs] for r in sb]),
        short_t=np.array([int(r[t_col]) for r in sb]),
        short_s=np.array([[float(r[c]) for c in ss] for r in sb]),
        long_x=np.array([[float(r[c]) for c in xl] for r in lb]),
        long_s=np.array([[float(r[c]) for c in sl] for r in lb]),
        long_y=np.array([float(r[y_col]) for r in lb]),
    )
