"""Hyperparameter selection: BIC, k-fold CV, GA, Halton search, schedule."""

import json

import numpy as np
import pytest

from marxbench.models import fit_elastic_net
from marxbench.tuning import (
    SearchDim,
    TuningResult,
    build_en_grid,
    cv_en_path,
    ga_optimize,
    kfold_cv,
    schedule,
    select_by_bic,
    stochastic_search,
)


def lag_design(y: np.ndarray, p: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows t = p..T-1 with columns y_{t-1}..y_{t-p}."""
    t = len(y)
    z = np.column_stack([y[p - j - 1 : t - j - 1] for j in range(p)])
    return z, y[p:]


class TestSelectByBic:
    def test_scores_match_closed_form(self):
        rng = np.random.default_rng(3)
        y = rng.standard_normal(120)
        pmax = 4
        # common estimation sample so candidate scores are comparable
        yy = y[pmax:]
        t = len(yy)

        def builder(p):
            return np.column_stack([y[pmax - j - 1 : len(y) - j - 1] for j in range(p)])

        res = select_by_bic(builder, yy, candidates=range(1, pmax + 1))
        assert res.method == "BIC"
        for hyper, score in res.scores:
            p = hyper["p"]
            design = np.column_stack([np.ones(t), builder(p)])
            coef, _, _, _ = np.linalg.lstsq(design, yy, rcond=None)
            ssr = float(np.sum((yy - design @ coef) ** 2))
            want = t * np.log(ssr / t) + (p + 1) * np.log(t)
            assert np.isclose(score, want, rtol=1e-12)
        assert res.score == min(s for _, s in res.scores)

    def test_recovers_ar2_order(self):
        hits = 0
        for trial in range(12):
            rng = np.random.default_rng(100 + trial)
            y = np.zeros(430)
            for t in range(2, 430):
                y[t] = 0.5 * y[t - 1] - 0.3 * y[t - 2] + rng.standard_normal()
            y = y[30:]

            def builder(p, y=y):
                return lag_design(y, 8)[0][:, :p]

            res = select_by_bic(builder, lag_design(y, 8)[1], candidates=range(1, 9))
            hits += res.chosen["p"] == 2
        assert hits >= 8

    def test_white_noise_prefers_smallest_lag(self):
        hits = 0
        for trial in range(10):
            rng = np.random.default_rng(500 + trial)
            y = rng.standard_normal(330)

            def builder(p, y=y):
                return lag_design(y, 6)[0][:, :p]

            res = select_by_bic(builder, lag_design(y, 6)[1], candidates=range(1, 7))
            hits += res.chosen["p"] == 1
        assert hits >= 7

    def test_identical_designs_break_ties_deterministically(self):
        rng = np.random.default_rng(7)
        z = rng.standard_normal((60, 3))
        y = rng.standard_normal(60)
        res = select_by_bic(lambda p: z, y, candidates=[1, 2])
        scores = [s for _, s in res.scores]
        assert scores[0] == scores[1]
        assert res.chosen == {"p": 1}

    def test_rank_deficient_candidate_excluded(self):
        rng = np.random.default_rng(11)
        z = rng.standard_normal((50, 2))
        z_dup = np.column_stack([z, z[:, 0]])  # exact copy column
        y = rng.standard_normal(50)
        res = select_by_bic(lambda p: z if p == 1 else z_dup, y, candidates=[1, 2])
        by_p = {h["p"]: s for h, s in res.scores}
        assert np.isfinite(by_p[1])
        assert by_p[2] == np.inf
        assert res.chosen == {"p": 1}

    def test_all_rank_deficient_raises(self):
        z = np.ones((40, 2))
        y = np.arange(40.0)
        with pytest.raises(ValueError, match="rank deficient"):
            select_by_bic(lambda p: z, y, candidates=[1, 2])


class _ConstantFit:
    def __init__(self, c: float):
        self.c = c

    def predict(self, z):
        return np.full(len(z), self.c)


class TestKfoldCv:
    def test_constant_predictor_closed_form(self):
        # a candidate predicting the constant c scores mean((y - c)^2)
        # regardless of the folds, so the oracle is exact
        rng = np.random.default_rng(2)
        y = rng.standard_normal(53) + 1.7
        z = rng.standard_normal((53, 2))
        grid = [{"c": 0.0}, {"c": float(y.mean())}, {"c": 5.0}]
        res = kfold_cv(lambda zz, yy, cand: _ConstantFit(cand["c"]), z, y, grid, k=5, seed=0)
        for hyper, score in res.scores:
            want = float(np.mean((y - hyper["c"]) ** 2))
            assert np.isclose(score, want, rtol=1e-12)
        assert res.chosen == {"c": float(y.mean())}

    def test_fold_partition_matches_seeded_permutation(self):
        t, k, seed = 40, 4, 123
        z = np.arange(t, dtype=float).reshape(-1, 1)
        y = np.zeros(t)
        seen_train = []

        def fit_fn(zz, yy, cand):
            seen_train.append(set(zz[:, 0].astype(int)))
            return _ConstantFit(0.0)

        kfold_cv(fit_fn, z, y, [{"c": 1}], k=k, seed=seed)
        folds = np.array_split(np.random.default_rng(seed).permutation(t), k)
        want = [set(range(t)) - set(f.tolist()) for f in folds]
        assert seen_train == want

    def test_failing_candidate_scored_inf(self):
        rng = np.random.default_rng(5)
        z = rng.standard_normal((30, 2))
        y = rng.standard_normal(30)

        def fit_fn(zz, yy, cand):
            if cand["c"] == 1:
                raise RuntimeError("degenerate")
            return _ConstantFit(0.0)

        res = kfold_cv(fit_fn, z, y, [{"c": 0}, {"c": 1}], k=3, seed=0)
        by_c = {h["c"]: s for h, s in res.scores}
        assert by_c[1] == np.inf and np.isfinite(by_c[0])
        assert res.chosen == {"c": 0}

    def test_input_validation(self):
        z = np.zeros((10, 1))
        y = np.zeros(10)
        with pytest.raises(ValueError, match="2 folds"):
            kfold_cv(lambda *a: _ConstantFit(0), z, y, [{"c": 0}], k=1)
        with pytest.raises(ValueError, match="empty"):
            kfold_cv(lambda *a: _ConstantFit(0), z, y, [], k=2)
        with pytest.raises(ValueError, match="under 2 rows"):
            kfold_cv(lambda *a: _ConstantFit(0), z, y, [{"c": 0}], k=8)


class TestSearchDim:
    def test_linear_endpoints(self):
        d = SearchDim(2.0, 6.0)
        assert d.decode(0.0) == 2.0
        assert d.decode(1.0) == 6.0
        assert d.decode(0.5) == 4.0
        assert d.decode(-3.0) == 2.0  # clipped
        assert d.decode(9.0) == 6.0

    def test_log_scale_midpoint_is_geometric(self):
        d = SearchDim(1e-3, 1e3, log=True)
        assert np.isclose(d.decode(0.5), 1.0)
        assert np.isclose(d.decode(0.0), 1e-3)
        assert np.isclose(d.decode(1.0), 1e3)

    def test_integer_rounding_and_bounds(self):
        d = SearchDim(1, 10, integer=True)
        assert d.decode(0.0) == 1
        assert d.decode(1.0) == 10
        assert isinstance(d.decode(0.33), int)

    def test_validation(self):
        with pytest.raises(ValueError, match="empty range"):
            SearchDim(5.0, 1.0)
        with pytest.raises(ValueError, match="lo > 0"):
            SearchDim(0.0, 1.0, log=True)


class TestGaOptimize:
    SPACE = {"x": SearchDim(0.0, 1.0)}

    def test_finds_quadratic_optimum(self):
        res = ga_optimize(lambda c: (c["x"] - 0.3) ** 2, self.SPACE,
                          generations=25, population=25, seed=0)
        assert res.method == "GA"
        assert abs(res.chosen["x"] - 0.3) < 0.02

    def test_deterministic_for_seed(self):
        a = ga_optimize(lambda c: (c["x"] - 0.6) ** 2, self.SPACE,
                        generations=5, population=8, seed=42)
        b = ga_optimize(lambda c: (c["x"] - 0.6) ** 2, self.SPACE,
                        generations=5, population=8, seed=42)
        assert a.chosen == b.chosen
        assert a.scores == b.scores

    def test_evaluation_count_and_bounds(self):
        space = {"x": SearchDim(-2.0, -1.0), "y": SearchDim(10.0, 20.0, log=True)}
        res = ga_optimize(lambda c: c["x"] ** 2 + c["y"], space,
                          generations=4, population=6, seed=1)
        # initial population plus (generations-1) batches that re-seat the
        # elite without re-evaluating it
        assert len(res.scores) == 6 + 3 * 5
        for hyper, _ in res.scores:
            assert -2.0 <= hyper["x"] <= -1.0
            assert 10.0 <= hyper["y"] <= 20.0

    def test_best_ever_wins_even_if_lost_later(self):
        calls = []

        def objective(c):
            calls.append(c["x"])
            # reward the 3rd evaluation uniquely, punish everything else
            return -1.0 if len(calls) == 3 else 1.0

        res = ga_optimize(objective, self.SPACE, generations=3, population=4, seed=9)
        assert res.score == -1.0
        assert res.chosen["x"] == calls[2]


class TestStochasticSearch:
    def test_budget_and_determinism(self):
        space = {"n": SearchDim(1, 50, integer=True), "eta": SearchDim(0.01, 1.0, log=True)}
        a = stochastic_search(lambda c: (c["n"] - 20) ** 2 + c["eta"], space, budget=30, seed=3)
        b = stochastic_search(lambda c: (c["n"] - 20) ** 2 + c["eta"], space, budget=30, seed=3)
        assert len(a.scores) == 30
        assert a.scores == b.scores
        assert a.score == min(s for _, s in a.scores)
        assert all(isinstance(h["n"], int) for h, _ in a.scores)

    def test_fixed_dimension_pinned_to_lo(self):
        space = {"fixed": SearchDim(7.0, 7.0), "free": SearchDim(0.0, 1.0)}
        res = stochastic_search(lambda c: c["free"], space, budget=10, seed=0)
        assert all(h["fixed"] == 7.0 for h, _ in res.scores)
        frees = {h["free"] for h, _ in res.scores}
        assert len(frees) > 1

    def test_all_fixed_dimensions(self):
        space = {"a": SearchDim(2.0, 2.0), "b": SearchDim(3.0, 3.0)}
        res = stochastic_search(lambda c: c["a"] + c["b"], space, budget=5, seed=0)
        assert res.chosen == {"a": 2.0, "b": 3.0}

    def test_budget_validation(self):
        with pytest.raises(ValueError, match="budget"):
            stochastic_search(lambda c: 0.0, {"x": SearchDim(0, 1)}, budget=0)


class TestSchedule:
    def test_first_origin_always_tunes(self):
        assert schedule(480, None) is True

    def test_interval_boundary(self):
        assert schedule(503, 480, interval=24) is False
        assert schedule(504, 480, interval=24) is True
        assert schedule(505, 480, interval=24) is True

    def test_interval_one_retunes_every_month(self):
        assert schedule(481, 480, interval=1) is True

    def test_bad_interval(self):
        with pytest.raises(ValueError, match="interval"):
            schedule(480, None, interval=0)


class TestEnPathCv:
    def test_matches_generic_cv_over_same_grid(self):
        # the warm-started path solver must reproduce the double-loop CV:
        # same folds, same candidates, same pooled scores, same winner
        rng = np.random.default_rng(8)
        t, k = 60, 7
        z = rng.standard_normal((t, k))
        beta = np.array([1.5, -1.0, 0.0, 0.0, 0.8, 0.0, 0.0])
        y = z @ beta + 0.5 * rng.standard_normal(t)
        alphas = (0.5, 1.0)
        n_lambda, min_ratio, folds, seed = 8, 1e-3, 3, 21

        grid = build_en_grid(z, y, alphas, n_lambda, min_ratio)

        def fit_fn(zz, yy, cand):
            return fit_elastic_net(zz, yy, cand["alpha"], cand["lam"],
                                   max_sweeps=200_000, tol=1e-10)

        slow = kfold_cv(fit_fn, z, y, grid, k=folds, seed=seed)
        fast = cv_en_path(z, y, alphas, n_lambda, min_ratio, k=folds, seed=seed,
                          max_sweeps=200_000, tol=1e-10)
        assert fast.method == slow.method == "KFOLD"
        assert [h for h, _ in fast.scores] == [h for h, _ in slow.scores]
        np.testing.assert_allclose(
            [s for _, s in fast.scores], [s for _, s in slow.scores], rtol=1e-6)
        assert fast.chosen == slow.chosen

    def test_grid_shape_and_lambda_range(self):
        rng = np.random.default_rng(1)
        z = rng.standard_normal((40, 3))
        y = rng.standard_normal(40)
        grid = build_en_grid(z, y, alphas=(0.25, 1.0), n_lambda=5, min_ratio=1e-2)
        assert len(grid) == 10
        for alpha in (0.25, 1.0):
            lams = [g["lam"] for g in grid if g["alpha"] == alpha]
            assert lams == sorted(lams)
            assert np.isclose(lams[0], lams[-1] * 1e-2)
        # at the top of the path every coefficient is zero
        top = max(grid, key=lambda g: g["lam"])
        fit = fit_elastic_net(z, y, top["alpha"], top["lam"] * (1 + 1e-12))
        assert np.count_nonzero(fit.beta) == 0

    def test_input_validation(self):
        z = np.zeros((10, 2))
        y = np.zeros(10)
        with pytest.raises(ValueError, match="2 folds"):
            cv_en_path(z, y, (1.0,), 4, 1e-2, k=1)
        with pytest.raises(ValueError, match="under 2 rows"):
            cv_en_path(z, y, (1.0,), 4, 1e-2, k=8)


class TestTuningResult:
    def test_round_trip_preserves_selection(self):
        month = 2009 * 12  # 2009-01
        res = TuningResult(method="GA", chosen={"eta": 0.3}, score=1.25,
                           scores=[({"eta": 0.3}, 1.25), ({"eta": 0.9}, 2.0)],
                           selected_at=month)
        d = json.loads(json.dumps(res.to_dict()))
        back = TuningResult.from_dict(d)
        assert back.method == res.method
        assert back.chosen == res.chosen
        assert back.score == res.score
        assert back.selected_at == month
        assert [tuple(s) for s in back.scores] == res.scores
        assert d["selected_at_ym"] == "2009-01"
