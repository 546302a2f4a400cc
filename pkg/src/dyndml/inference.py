"""Cross-fitted estimation: folds, point estimate, variance, confidence interval,
and the Monte Carlo coverage harness.

Per fold, both nuisance sequences are trained on the complement and the
debiased score is evaluated on the held-out units; the point estimate is the
grand mean of held-out scores and sigma^2 is the mean squared centered score
(the moment is affine in theta with unit slope, so no Jacobian correction is
needed). The 95% interval uses the conventional 1.96; other levels come from
a built-in Gaussian quantile.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .core import (
    NuisanceSet,
    PanelDataset,
    PositivityError,
    SolverError,
    TreatmentPlan,
    ValidationError,
)
from .moment import moment_scores
from .nuisance import FitConfig, fit_nuisances
from .oracle import (
    DiscreteDGP,
    mix_seed,
    oracle_nested_regressions,
    oracle_riesz,
    oracle_theta,
    population_l2,
    simulate,
)
from .core import tabular_fn

Z_95 = 1.96  # conventional 97.5% Gaussian quantile for the 95% interval


def normal_quantile(p: float) -> float:
    """Inverse standard-normal CDF (rational approximation + one Halley step;
    relative error well below 1e-8)."""
    if not 0.0 < p < 1.0:
        raise ValidationError("quantile level must lie strictly between 0 and 1")
    a = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
    b = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00)
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    elif p <= 1.0 - p_low:
        q = p - 0.5
        r = q * q
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q / (
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
        )
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
            (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0
        )
    err = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
    u = err * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
    return x - u / (1.0 + x * u / 2.0)


@dataclass(frozen=True)
class FoldPlan:
    """Disjoint covering index sets; sizes differ by at most one."""

    folds: tuple[NDArray, ...]
    seed: int

    @property
    def n(self) -> int:
        return sum(f.shape[0] for f in self.folds)

    def complement(self, q: int) -> NDArray:
        return np.sort(np.concatenate([f for i, f in enumerate(self.folds) if i != q]))


def make_folds(n: int, q_folds: int, seed: int) -> FoldPlan:
    """Seeded uniform shuffle, then contiguous split; the first n mod Q folds
    take the remainder observations."""
    if q_folds < 2:
        raise ValidationError("need at least two folds")
    if q_folds > n:
        raise ValidationError(f"cannot split {n} observations into {q_folds} folds")
    rng = np.random.Generator(np.random.PCG64(seed))
    perm = rng.permutation(n)
    base = n // q_folds
    sizes = [base + (1 if q < n % q_folds else 0) for q in range(q_folds)]
    folds = []
    start = 0
    for s in sizes:
        folds.append(perm[start : start + s].copy())
        start += s
    return FoldPlan(folds=tuple(folds), seed=seed)


@dataclass
class EstimateReport:
    """Cross-fitted estimate with its interval and per-fold diagnostics."""

    theta_hat: float
    sigma_hat: float
    ci_lower: float
    ci_upper: float
    n: int
    Q: int
    seed: int
    per_fold: list[dict]
    config: dict
    n_short: int | None = None
    n_long: int | None = None

    def __post_init__(self) -> None:
        if self.sigma_hat < 0:
            raise ValidationError("sigma_hat must be nonnegative")
        half = Z_95 * self.sigma_hat / math.sqrt(self.n)
        if abs(self.ci_lower - (self.theta_hat - half)) > 1e-9 * max(1.0, abs(self.theta_hat)):
            raise ValidationError("interval does not match theta_hat +- 1.96 sigma/sqrt(n)")
        if not self.ci_lower <= self.theta_hat <= self.ci_upper:
            raise ValidationError("interval must contain the point estimate")

    def to_dict(self) -> dict:
        out = asdict(self)
        if self.n_short is None:
            out.pop("n_short")
            out.pop("n_long")
        return out

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=True)

    def interval(self, level: float = 0.95) -> tuple[float, float]:
        """Two-sided interval; 0.95 returns the stored conventional-1.96 bounds,
        other levels use the built-in Gaussian quantile."""
        if level == 0.95:
            return self.ci_lower, self.ci_upper
        if not 0.0 < level < 1.0:
            raise ValidationError("confidence level must lie strictly between 0 and 1")
        half = normal_quantile(0.5 + level / 2.0) * self.sigma_hat / math.sqrt(self.n)
        return self.theta_hat - half, self.theta_hat + half

    @classmethod
    def from_scores(
        cls,
        scores: NDArray,
        q_folds: int,
        seed: int,
        per_fold: list[dict],
        config: dict,
    ) -> "EstimateReport":
        n = scores.shape[0]
        theta = float(scores.mean())
        sigma = float(np.sqrt(np.mean((scores - theta) ** 2)))
        half = Z_95 * sigma / math.sqrt(n)
        return cls(
            theta_hat=theta,
            sigma_hat=sigma,
            ci_lower=theta - half,
            ci_upper=theta + half,
            n=n,
            Q=q_folds,
            seed=seed,
            per_fold=per_fold,
            config=config,
        )


def _config_echo(cfg: FitConfig, clever: bool) -> dict:
    maps = []
    for fm in cfg.feature_maps:
        entry = {"kind": type(fm).__name__, "dim": fm.dim, "arity": fm.arity}
        maps.append(entry)
    ridge = cfg.ridge if not isinstance(cfg.ridge, tuple) else list(cfg.ridge)
    return {
        "feature_maps": maps,
        "ridge": ridge,
        "ridge_default": "1e-3 * n^-0.5 * trace-normalized" if cfg.ridge is None else None,
        "clip": cfg.clip,
        "clever_covariate": clever,
    }


def dml_estimate(
    data: PanelDataset,
    plan: TreatmentPlan,
    cfg: FitConfig,
    q_folds: int = 5,
    seed: int = 0,
    clever: bool = False,
    nuisances: NuisanceSet | None = None,
) -> EstimateReport:
    """Cross-fitted debiased estimate.

    Per fold, nuisances are fitted on the complement (unless an explicit
    `nuisances` bundle is injected, e.g. the enumeration oracle's truth) and
    scores are evaluated out of fold. Deterministic given all inputs.
    """
    plan_folds = make_folds(data.n_units, q_folds, seed)
    scores = np.empty(data.n_units)
    per_fold: list[dict] = []
    for q, idx in enumerate(plan_folds.folds):
        train = None
        if nuisances is not None:
            bundle = nuisances
        else:
            train = data.subset(plan_folds.complement(q))
            try:
                regs, reps = fit_nuisances(train, plan, cfg, clever=clever)
            except (SolverError, ValidationError) as exc:
                raise SolverError(f"fold {q}: {exc}") from exc
            bundle = NuisanceSet(regressions=tuple(regs), representers=tuple(reps))
        vals, _, corrections = moment_scores(data.subset(idx), plan, bundle)
        scores[idx] = vals
        fold_info = {
            "fold": q,
            "size": int(idx.shape[0]),
            "score_mean": float(vals.mean()),
            "correction_means": [float(c.mean()) for c in corrections],
        }
        if clever and train is not None:
            # The unpenalized clever column zeroes the corrections on the
            # sample the regressions were fitted on; report that residual.
            _, _, train_corr = moment_scores(train, plan, bundle)
            fold_info["clever_correction_means"] = [float(c.mean()) for c in train_corr]
        per_fold.append(fold_info)
    return EstimateReport.from_scores(
        scores, q_folds, seed, per_fold, _config_echo(cfg, clever)
    )


# ---------------------------------------------------------------------------
# Monte Carlo experiment harness
# ---------------------------------------------------------------------------

MC_CSV_HEADER = ("rep", "theta_hat", "sigma_hat", "ci_lower", "ci_upper", "covered", "failed")


@dataclass
class MCRow:
    rep: int
    theta_hat: float = math.nan
    sigma_hat: float = math.nan
    ci_lower: float = math.nan
    ci_upper: float = math.nan
    covered: int = 0
    failed: int = 0
    message: str = ""


@dataclass
class MCResult:
    """Replicated-experiment summary against the enumeration oracle."""

    theta_true: float
    reps: int
    bias: float
    rmse: float
    avg_sigma_hat: float
    coverage: float
    n_failed: int
    rows: list[MCRow] = field(repr=False, default_factory=list)

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(MC_CSV_HEADER)
            for r in self.rows:
                w.writerow(
                    [
                        r.rep,
                        format(r.theta_hat, ".17g"),
                        format(r.sigma_hat, ".17g"),
                        format(r.ci_lower, ".17g"),
                        format(r.ci_upper, ".17g"),
                        r.covered,
                        r.failed,
                    ]
                )

    def summary_dict(self) -> dict:
        return {
            "theta_true": self.theta_true,
            "reps": self.reps,
            "bias": self.bias,
            "rmse": self.rmse,
            "avg_sigma_hat": self.avg_sigma_hat,
            "coverage": self.coverage,
            "n_failed": self.n_failed,
        }


def mc_experiment(
    dgp: DiscreteDGP,
    plan: TreatmentPlan,
    cfg: FitConfig,
    reps: int,
    n: int,
    q_folds: int,
    seed: int,
    jobs: int = 1,
    clever: bool = False,
) -> MCResult:
    """Run `reps` independent seed-mixed replicates of dml_estimate.

    Replicate r simulates with mix_seed(seed, r) and folds with a further
    derived seed, so results are identical for any jobs count; failures are
    flagged rows excluded from the coverage summary, never aborts.
    """
    if reps < 1:
        raise ValidationError("need at least one replicate")
    theta_true = oracle_theta(dgp, plan)
    rows: list[MCRow | None] = [None] * reps

    def run(r: int) -> MCRow:
        rep_seed = mix_seed(seed, r)
        try:
            data = simulate(dgp, n, rep_seed)
            report = dml_estimate(data, plan, cfg, q_folds, mix_seed(rep_seed, 1), clever=clever)
        except (SolverError, PositivityError, ValidationError) as exc:
            return MCRow(rep=r, failed=1, message=str(exc))
        covered = int(report.ci_lower <= theta_true <= report.ci_upper)
        return MCRow(
            rep=r,
            theta_hat=report.theta_hat,
            sigma_hat=report.sigma_hat,
            ci_lower=report.ci_lower,
            ci_upper=report.ci_upper,
            covered=covered,
        )

    if jobs <= 1:
        for r in range(reps):
            rows[r] = run(r)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            for r, row in enumerate(pool.map(run, range(reps))):
                rows[r] = row
    done = [row for row in rows if row is not None]
    ok = [row for row in done if not row.failed]
    if ok:
        thetas = np.array([row.theta_hat for row in ok])
        sigmas = np.array([row.sigma_hat for row in ok])
        bias = float(thetas.mean() - theta_true)
        rmse = float(np.sqrt(np.mean((thetas - theta_true) ** 2)))
        avg_sigma = float(sigmas.mean())
        coverage = float(np.mean([row.covered for row in ok]))
    else:
        bias = rmse = avg_sigma = coverage = math.nan
    return MCResult(
        theta_true=theta_true,
        reps=reps,
        bias=bias,
        rmse=rmse,
        avg_sigma_hat=avg_sigma,
        coverage=coverage,
        n_failed=len(done) - len(ok),
        rows=done,
    )


# ---------------------------------------------------------------------------
# Rate diagnostics against the enumeration oracle
# ---------------------------------------------------------------------------


@dataclass
class RateTable:
    """Nuisance-error norms across sample sizes and the scaled product check."""

    ns: tuple[int, ...]
    f_norms: NDArray          # (len(ns), M) L2 errors of the regressions
    a_norms: NDArray          # (len(ns), M) L2 errors of the representers
    scaled_products: NDArray  # (len(ns), M) sqrt(n) * f-err * a-err
    product_slope: float
    products_trend_to_zero: bool

    def summary_dict(self) -> dict:
        return {
            "ns": list(self.ns),
            "f_norms": self.f_norms.tolist(),
            "a_norms": self.a_norms.tolist(),
            "scaled_products": self.scaled_products.tolist(),
            "product_slope": self.product_slope,
            "products_trend_to_zero": self.products_trend_to_zero,
        }


def rate_diagnostics(
    dgp: DiscreteDGP | None,
    plan: TreatmentPlan,
    cfg: FitConfig,
    ns: Sequence[int],
    seed: int,
    reps: int = 1,
) -> RateTable:
    """Track ||f-hat - f||_2, ||a-hat - a||_2 against the enumeration oracle
    across sample sizes, plus the inference-critical scaled products
    sqrt(n) * ||a-err|| * ||f-err||; flags products that fail to trend to 0.

    Needs an enumerable process; norms are exact population L2 distances,
    averaged over `reps` seed-mixed fits per sample size.
    """
    if dgp is None:
        raise ValidationError("rate diagnostics need an enumerable process (oracle mode)")
    if len(ns) < 2:
        raise ValidationError("need at least two sample sizes")
    m = dgp.num_periods
    f_truth = [tabular_fn(tb) for tb in oracle_nested_regressions(dgp, plan)]
    a_truth = [tabular_fn(tb) for tb in oracle_riesz(dgp, plan)]
    f_norms = np.zeros((len(ns), m))
    a_norms = np.zeros((len(ns), m))
    for i, n in enumerate(sorted(ns)):
        for r in range(reps):
            data = simulate(dgp, n, mix_seed(seed, i * 7919 + r))
            regs, reps_fit = fit_nuisances(data, plan, cfg)
            for t in range(1, m + 1):
                f_norms[i, t - 1] += population_l2(dgp, t, regs[t - 1], f_truth[t - 1])
                a_norms[i, t - 1] += population_l2(dgp, t, reps_fit[t - 1], a_truth[t - 1])
    f_norms /= reps
    a_norms /= reps
    ns_sorted = tuple(sorted(int(v) for v in ns))
    scaled = np.sqrt(np.array(ns_sorted))[:, None] * f_norms * a_norms
    worst = scaled.max(axis=1)
    floor = 1e-14
    if np.all(worst <= floor):
        slope = -math.inf
    else:
        slope = float(np.polyfit(np.log(ns_sorted), np.log(np.maximum(worst, floor)), 1)[0])
    return RateTable(
        ns=ns_sorted,
        f_norms=f_norms,
        a_norms=a_norms,
        scaled_products=scaled,
        product_slope=slope,
        products_trend_to_zero=bool(slope < -0.1),
    )
