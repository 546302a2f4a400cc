import math

import numpy as np
import pytest

from conftest import tabular_config
from helpers_surrogate import TwoSampleDGP, two_sample_ref
from dyndml import (
    Contrast,
    FitConfig,
    SurrogatePair,
    ValidationError,
    dgp_ref_1,
    dml_estimate,
    simulate,
    surrogate_estimate,
    surrogate_fit,
    surrogate_scores,
)


@pytest.fixture
def tsd() -> TwoSampleDGP:
    return two_sample_ref()


def fit_cfg(tsd: TwoSampleDGP, ridge=None) -> FitConfig:
    return FitConfig(feature_maps=tsd.feature_maps(), ridge=ridge)


class TestSurrogatePair:
    def test_dimension_checks(self):
        with pytest.raises(ValidationError, match="binary"):
            SurrogatePair(
                short_x=np.zeros((3, 1)),
                short_t=np.array([0, 1, 2]),
                short_s=np.zeros((3, 1)),
                long_x=np.zeros((2, 1)),
                long_s=np.zeros((2, 1)),
                long_y=np.zeros(2),
            )

    def test_nonempty_required(self, tsd):
        data = tsd.simulate(10, 10, 0)
        with pytest.raises(ValidationError):
            SurrogatePair(
                short_x=data.short_x[:0],
                short_t=data.short_t[:0],
                short_s=data.short_s[:0],
                long_x=data.long_x,
                long_s=data.long_s,
                long_y=data.long_y,
            )


class TestSurrogateFit:
    def test_a1_matches_inverse_propensities(self, tsd):
        data = tsd.simulate(60_000, 60_000, 3)
        nus = surrogate_fit(data, fit_cfg(tsd))
        truth = tsd.a1_table()
        for x in range(tsd.gx):
            for t in range(2):
                got = nus.a1(np.array([float(x)]), t)
                assert got == pytest.approx(truth[t, x], abs=0.12)

    def test_randomized_treatment_without_controls(self):
        dgp = TwoSampleDGP(
            px=np.array([1.0]),
            pt=np.array([[0.5, 0.5]]),
            ps=np.array([[[0.7, 0.3]], [[0.2, 0.8]]]),
            long_xs=np.array([[0.5, 0.5]]),
            mu=np.array([[0.0], [1.0]]),
        )
        data = dgp.simulate(40_000, 2000, 5)
        nus = surrogate_fit(data, fit_cfg(dgp))
        assert nus.a1(np.array([0.0]), 1) == pytest.approx(2.0, abs=0.1)
        assert nus.a1(np.array([0.0]), 0) == pytest.approx(-2.0, abs=0.1)

    def test_h_and_g_match_tables(self, tsd):
        data = tsd.simulate(50_000, 50_000, 7)
        nus = surrogate_fit(data, fit_cfg(tsd))
        g_true, h_true = tsd.g_table(), tsd.h_table()
        for x in range(tsd.gx):
            for t in range(2):
                assert nus.g(np.array([float(x)]), t) == pytest.approx(g_true[t, x], abs=0.1)
            for s in range(tsd.gs):
                assert nus.h(np.array([float(s), float(x)]), 0) == pytest.approx(
                    h_true[s, x], abs=0.1
                )

    def test_matched_laws_reduce_a2_to_one_sample_representer(self, tsd):
        # long sample re-uses the short sample's (X, S) rows, so the fitted a2
        # solves exactly the one-sample Riesz problem of E_s[a1 * a(S, X)]
        data = tsd.simulate(5000, 5000, 9)
        matched = SurrogatePair(
            short_x=data.short_x,
            short_t=data.short_t,
            short_s=data.short_s,
            long_x=data.short_x,
            long_s=data.short_s,
            long_y=np.zeros(data.n_short),
        )
        cfg = fit_cfg(tsd)
        nus = surrogate_fit(matched, cfg)
        phi = cfg.feature_maps[1]
        sx = matched.short_sx
        dummy = np.zeros(matched.n_short, dtype=np.int64)
        x_mat = phi.batch(sx, dummy)
        gram = x_mat.T @ x_mat / matched.n_short
        lam = cfg.stage_ridge(2, gram, matched.n_short)
        a1_vals = nus.a1.batch(matched.short_x, matched.short_t)
        rhs = (a1_vals[:, None] * x_mat).mean(axis=0)
        expected = np.linalg.solve(gram + lam * np.eye(phi.dim), rhs)
        np.testing.assert_allclose(nus.a2.weights, expected, atol=1e-10)


class TestPopulationIdentities:
    def test_cross_sample_risk_identity(self, tsd):
        a0 = tsd.a2_table()
        base = tsd.cross_sample_risk(a0)
        rng = np.random.Generator(np.random.PCG64(21))
        for _ in range(10):
            cand = a0 + rng.uniform(-2, 2, size=a0.shape)
            gap = tsd.cross_sample_risk(cand) - base
            assert gap == pytest.approx(tsd.long_l2(cand, a0) ** 2, abs=1e-10)

    def test_mixed_bias_identity(self, tsd):
        theta = tsd.theta()
        h0, g0, a10, a20 = tsd.h_table(), tsd.g_table(), tsd.a1_table(), tsd.a2_table()
        assert tsd.population_moment(h0, g0, a10, a20) == pytest.approx(theta, abs=1e-12)
        rng = np.random.Generator(np.random.PCG64(31))
        for _ in range(20):
            dh = rng.uniform(-1, 1, h0.shape)
            dg = rng.uniform(-1, 1, g0.shape)
            da1 = rng.uniform(-1, 1, a10.shape)
            da2 = rng.uniform(-1, 1, a20.shape)
            direct = tsd.population_moment(h0 + dh, g0 + dg, a10 + da1, a20 + da2) - theta
            formula = tsd.short_expect(
                lambda t, x, s: da1[t, x] * (dh[s, x] - dg[t, x])
            ) - tsd.long_expect(lambda x, s: da2[s, x] * dh[s, x])
            assert direct == pytest.approx(formula, abs=1e-10)

    def test_one_sided_robustness(self, tsd):
        theta = tsd.theta()
        h0, g0, a10, a20 = tsd.h_table(), tsd.g_table(), tsd.a1_table(), tsd.a2_table()
        rng = np.random.Generator(np.random.PCG64(41))
        bad_h = h0 + rng.uniform(-2, 2, h0.shape)
        bad_g = g0 + rng.uniform(-2, 2, g0.shape)
        assert tsd.population_moment(bad_h, bad_g, a10, a20) == pytest.approx(theta, abs=1e-10)
        bad_a1 = a10 + rng.uniform(-2, 2, a10.shape)
        bad_a2 = a20 + rng.uniform(-2, 2, a20.shape)
        assert tsd.population_moment(h0, g0, bad_a1, bad_a2) == pytest.approx(theta, abs=1e-10)


class TestSurrogateEstimate:
    def test_recovers_enumerated_effect(self, tsd):
        data = tsd.simulate(4000, 4000, 17)
        report = surrogate_estimate(data, fit_cfg(tsd), 5, 23)
        band = 4.0 * report.sigma_hat / math.sqrt(report.n_short)
        assert abs(report.theta_hat - tsd.theta()) <= band
        assert report.n_short == 4000 and report.n_long == 4000
        assert "n_short" in report.to_dict()

    def test_deterministic(self, tsd):
        data = tsd.simulate(2000, 1500, 19)
        cfg = fit_cfg(tsd)
        a = surrogate_estimate(data, cfg, 4, 3)
        b = surrogate_estimate(data, cfg, 4, 3)
        assert a.to_json() == b.to_json()

    def test_reduces_to_one_period_aipw(self):
        # append S == Y to a one-period panel and use it as both samples:
        # the two-sample machinery must reproduce the M=1 contrast estimate
        dgp = dgp_ref_1()
        panel = simulate(dgp, 2000, 29)
        x = panel.states[0]
        t = panel.treatments[:, 0]
        y = panel.outcome
        pair = SurrogatePair(
            short_x=x, short_t=t, short_s=y[:, None], long_x=x, long_s=y[:, None], long_y=y
        )
        from dyndml import TabularFeatures

        maps = (
            TabularFeatures(grid=np.arange(2.0), arity=2),
            TabularFeatures(
                grid=np.unique(np.hstack([y[:, None], x]), axis=0), arity=1
            ),
        )
        s_report = surrogate_estimate(pair, FitConfig(feature_maps=maps, ridge=0.0), 5, 31)
        ate_plan = Contrast.of_sequences([1.0, -1.0], [(1,), (0,)])
        d_report = dml_estimate(panel, ate_plan, tabular_config(dgp, ridge=0.0), 5, 31)
        assert s_report.theta_hat == pytest.approx(d_report.theta_hat, abs=1e-8)
        assert s_report.sigma_hat == pytest.approx(d_report.sigma_hat, abs=1e-8)

    def test_scores_split_by_sample(self, tsd):
        data = tsd.simulate(300, 200, 7)
        nus = surrogate_fit(data, fit_cfg(tsd))
        short_term, long_term = surrogate_scores(data, nus)
        assert short_term.shape == (300,)
        assert long_term.shape == (200,)
