"""End-to-end acceptance checks, one test (or group) per criterion.

Run ``pytest tests/test_acceptance.py -v`` for a PASS/FAIL line per
criterion in the terminal summary.  The null-recovery check simulates
twenty full seasons and takes several minutes.
"""
import itertools
import os
import time
import warnings

import numpy as np
import pytest

from stopclock.cohort import build_units, prefilter_controls
from stopclock.diagnostics import CausalDag, backdoor_check, smd_from_moments, timeout_dag
from stopclock.inference import bootstrap_mean_test, permutation_test, wilcoxon_one_sample
from stopclock.matching import MatchConfig, greedy_match, optimal_match
from stopclock.pbp import InstantKind, parse_pbp, segment_games
from stopclock.pipeline import naive_treated, run_analysis
from stopclock.propensity import GbmConfig, fit, fit_units
from stopclock.simulator import SimConfig, paired_counterfactual_te, simulate_instants

from helpers import backdoor_oracle, brute_force_by_cardinality, random_dag, random_instance

LAMBDAS = (2, 4, 6)
METHODS = ("no_balance", "mahalanobis", "propensity")
NULL = dict(n_games=1500, delta=0.0, theta=-4, pi1=0.3, pi0=0.01)


def criterion(number, title):
    return pytest.mark.criterion(number, title)


@pytest.fixture(scope="module")
def null_season():
    return simulate_instants(SimConfig(seed=0, **NULL))[0]


# -- 1 -----------------------------------------------------------------------------

@criterion(1, "naive post-timeout momentum is positive, decreasing in lambda, significant")
def test_regression_to_the_mean(evidence):
    start = time.perf_counter()
    games = simulate_instants(SimConfig(seed=0, **NULL))[0]
    means = []
    for lam in LAMBDAS:
        y = [u.y for u in naive_treated(games, lam)]
        mean = float(np.mean(y))
        w = wilcoxon_one_sample(y).p_value
        b = bootstrap_mean_test(y, n_boot=10_000, seed=0).p_value
        evidence(f"lambda={lam}: mean={mean:.3f} n={len(y)} wilcoxon={w:.1e} bootstrap={b:.1e}")
        assert mean > 0
        assert w < 0.01 and b < 0.01
        means.append(mean)
    elapsed = time.perf_counter() - start
    evidence(f"{elapsed:.1f}s")
    assert means[0] > means[1] > means[2]
    assert elapsed < 60


# -- 2 -----------------------------------------------------------------------------

@criterion(2, "null effect recovered: |TE| <= 0.05 and 99% CI covers 0 in >= 17/20 runs")
def test_null_effect_recovery(evidence):
    start = time.perf_counter()
    hits = {(m, lam): 0 for m in METHODS for lam in LAMBDAS}
    te = {(m, lam): [] for m in METHODS for lam in LAMBDAS}
    for seed in range(20):
        games = simulate_instants(SimConfig(seed=seed, **NULL))[0]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            result = run_analysis(games, LAMBDAS, ["home"], METHODS, n_perm=10_000, alpha=0.01, seed=seed)
        for r in result.reports:
            key = (r.method, r.lam)
            te[key].append(r.te)
            if r.te is not None and abs(r.te) <= 0.05 and r.ci_lo <= 0 <= r.ci_hi:
                hits[key] += 1
    elapsed = time.perf_counter() - start
    for key in hits:
        evidence(f"{key[0]}/{key[1]}: {hits[key]}/20 mean TE {np.mean(te[key]):+.3f}")
    evidence(f"{elapsed:.0f}s")
    failing = {k: v for k, v in hits.items() if v < 17}
    assert not failing, f"configurations below 17/20: {failing}"
    assert elapsed < 600


# -- 3 -----------------------------------------------------------------------------

@criterion(3, "injected effect delta=0.5 recovered by propensity matching and the paired oracle")
def test_injected_effect(evidence):
    games = simulate_instants(SimConfig(seed=0, **{**NULL, "delta": 0.5}))[0]
    (report,) = run_analysis(games, [4], ["home"], ["propensity"], n_perm=10_000, seed=0).reports
    evidence(f"TE={report.te:.3f} pairs={report.n_pairs} CI=({report.ci_lo:.3f}, {report.ci_hi:.3f})")
    assert 0.4 <= report.te <= 0.6
    assert report.n_pairs >= 3000
    oracle, se = paired_counterfactual_te(SimConfig(delta=0.5, lam=4), n_rollouts=1_000_000, seed=0)
    evidence(f"oracle={oracle:.4f}+-{se:.4f}")
    assert abs(oracle - 0.5) <= 0.02


# -- 4 -----------------------------------------------------------------------------

SKEWED = dict(n_games=1500, pre_mark_boost=0.3, quarter_weights=(0.5, 0.75, 1.0, 2.0), seed=0)


@criterion(4, "dP_pre exactly balanced; propensity beats no-balance on a skewed scenario")
def test_pre_window_always_exact(null_season, evidence):
    skewed = simulate_instants(SimConfig(**SKEWED))[0]
    checked = 0
    for games in (null_season, skewed):
        for algorithm in ("optimal", "greedy"):
            result = run_analysis(games, LAMBDAS, ["home", "away"], METHODS, algorithm=algorithm, n_perm=1)
            for sample in result.samples:
                assert len(sample) > 0
                assert all(p.treated.dpre_num == p.control.dpre_num for p in sample.pairs)
            rows = [b for b in result.balance if b.stage == "after" and b.covariate == "dP_pre"]
            assert len(rows) == len(result.samples)
            assert all(b.smd == 0.0 for b in rows)
            checked += len(rows)
    evidence(f"{checked} matched samples with dP_pre smd 0")


@criterion(4, "dP_pre exactly balanced; propensity beats no-balance on a skewed scenario")
def test_propensity_balances_skewed_assignment(evidence):
    games = simulate_instants(SimConfig(**SKEWED))[0]
    result = run_analysis(games, [2], ["home"], ["no_balance", "propensity"], n_perm=1)
    smd = {(b.method, b.covariate): b.smd for b in result.balance}
    for cov in ("Q_t", "P_t", "S_t"):
        evidence(f"{cov}: before {smd[('none', cov)]:.3f} nb {smd[('no_balance', cov)]:.3f} "
                 f"prop {smd[('propensity', cov)]:.3f}")
    assert max(smd[("none", c)] for c in ("Q_t", "P_t", "S_t")) > 0.1  # the scenario really is skewed
    for cov in ("Q_t", "P_t", "S_t"):
        assert smd[("propensity", cov)] < 0.1
        assert smd[("propensity", cov)] < smd[("no_balance", cov)]


# -- 5 -----------------------------------------------------------------------------

@criterion(5, "SMD from summary moments reproduces the tabulated 0.253")
def test_smd_fidelity(evidence):
    value = smd_from_moments(363.42, 198.77, 410.03, 168.47)
    evidence(f"{value:.4f}")
    assert value == pytest.approx(0.253, abs=0.001)


# -- 6 -----------------------------------------------------------------------------

@criterion(6, "optimal matching equals brute force on 500 small instances; greedy never better")
def test_matching_optimality(evidence):
    rng = np.random.default_rng(2024)
    worse = 0
    for k in range(500):
        lam = int(rng.choice([2, 4, 6]))
        config = MatchConfig(method="nb", lam=lam, seed=k)
        treated, controls, milli = random_instance(rng, lam=lam)
        table = {(t.t, c.t): int(milli[i, j]) for i, t in enumerate(treated) for j, c in enumerate(controls)}
        oracle = lambda t, c: table[(t.t, c.t)] / 1000.0  # noqa: E731
        ok = [[abs(t.t - c.t) > 2 * lam and t.dpre_num == c.dpre_num for c in controls] for t in treated]
        best = brute_force_by_cardinality([[table[(t.t, c.t)] for c in controls] for t in treated], ok)

        opt = optimal_match(treated, controls, config, oracle)
        greedy = greedy_match(treated, controls, config, oracle)
        opt_total = sum(table[(p.treated.t, p.control.t)] for p in opt.pairs)
        greedy_total = sum(table[(p.treated.t, p.control.t)] for p in greedy.pairs)
        assert len(opt) == max(best)
        assert opt_total == best[len(opt)]
        assert len(greedy) <= len(opt)
        assert greedy_total >= best[len(greedy)]
        if len(greedy) == len(opt):
            assert greedy_total >= opt_total
            worse += greedy_total > opt_total
    evidence(f"greedy strictly worse in {worse}/500")


# -- 7 -----------------------------------------------------------------------------

@criterion(7, "permutation test calibrated at alpha=0.05 and never below its floor")
def test_permutation_calibration(evidence):
    rng = np.random.default_rng(7)
    n_perm = 10_000
    pvals = np.array([permutation_test(rng.normal(0.0, 1.0, 200), n_perm=n_perm, seed=rep)
                      for rep in range(200)])
    rate = float(np.mean(pvals < 0.05))
    floor = permutation_test(np.full(200, 1.0), n_perm=n_perm, seed=0)
    evidence(f"rejection rate {rate:.3f}; min p {pvals.min():.4f}; all-positive p {floor:.2e}")
    assert 0.025 <= rate <= 0.10
    assert pvals.min() >= 1 / (n_perm + 1)
    assert floor == 1 / (n_perm + 1)


# -- 8 -----------------------------------------------------------------------------

@criterion(8, "boosting: monotone training loss, separable AUC, exact base rate at 0 trees")
def test_gbm_loss_monotone(null_season, evidence):
    treated, pool = build_units(null_season, 2, "home")
    units = treated + prefilter_controls(treated, pool)
    model = fit_units(units, GbmConfig(n_trees=500, bag_fraction=1.0))
    loss = np.asarray(model.train_loss)
    evidence(f"loss {loss[0]:.4f} -> {loss[-1]:.4f} over {len(loss) - 1} trees, n={len(units)}")
    assert len(loss) == 501
    assert np.all(np.diff(loss) <= 0)


@criterion(8, "boosting: monotone training loss, separable AUC, exact base rate at 0 trees")
def test_gbm_separable_and_base_rate(evidence):
    rng = np.random.default_rng(8)
    X = np.column_stack([rng.integers(1, 5, 4000), rng.integers(-20, 21, 4000), rng.uniform(0, 720, 4000)])
    a = (X[:, 2] > 360).astype(float)
    score = fit(X, a).predict_proba(X)
    # Mann-Whitney AUC with midranks
    order = np.argsort(score, kind="mergesort")
    ranks = np.empty(len(score))
    ranks[order] = np.arange(1, len(score) + 1)
    for value in np.unique(score):
        tie = score == value
        ranks[tie] = ranks[tie].mean()
    n1, n0 = a.sum(), len(a) - a.sum()
    auc = (ranks[a == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0)
    evidence(f"AUC {auc:.4f}")
    assert auc >= 0.99

    b = (rng.random(4000) < 0.23).astype(float)
    empty = fit(X, b, GbmConfig(n_trees=0))
    assert np.all(empty.predict_proba(X) == b.mean())


# -- 9 -----------------------------------------------------------------------------

@criterion(9, "back-door check on the timeout DAG and against a d-separation oracle")
def test_backdoor(evidence):
    dag = timeout_dag()
    assert backdoor_check(dag, "A_t", "dP_post", {"U", "X_t", "dP_pre"}) is True
    assert backdoor_check(dag, "A_t", "dP_post", {"X_t", "dP_pre"}) is False

    rng = np.random.default_rng(9)
    checks = 0
    for _ in range(1000):
        nodes, edges = random_dag(rng, n_nodes=6, p_edge=float(rng.uniform(0.2, 0.7)))
        x, y = (str(v) for v in rng.choice(nodes, size=2, replace=False))
        ours = CausalDag(nodes, edges)
        others = [n for n in nodes if n not in (x, y)]
        for r in range(len(others) + 1):
            for z in itertools.combinations(others, r):
                assert backdoor_check(ours, x, y, set(z)) == backdoor_oracle(nodes, edges, x, y, z)
                checks += 1
    evidence(f"{checks} adjustment sets on 1000 DAGs")


# -- 10 ----------------------------------------------------------------------------

SEASON = os.environ.get("STOPCLOCK_NBA_PBP")


@criterion(10, "real 2016-17 season: counts, naive means, effect grid (needs STOPCLOCK_NBA_PBP)")
@pytest.mark.skipif(not SEASON, reason="set STOPCLOCK_NBA_PBP to a canonical play-by-play CSV")
def test_real_season(evidence):
    games, failed = segment_games(parse_pbp(SEASON), strict=False)
    instants = sum(len(g) for g in games.values())
    timeouts = sum(1 for g in games.values() for i in g if i.kind is InstantKind.TIMEOUT and not i.official)
    evidence(f"{instants} instants, {timeouts} team timeouts, {len(failed)} games skipped")
    assert abs(instants - 281_373) <= 0.005 * 281_373
    assert abs(timeouts - 17_765) <= 0.005 * 17_765
    for lam, expected in zip(LAMBDAS, (0.629, 0.421, 0.302)):
        mean = float(np.mean([u.y for u in naive_treated(games, lam)]))
        evidence(f"naive lambda={lam}: {mean:.3f}")
        assert abs(mean - expected) <= 0.05
    result = run_analysis(games, LAMBDAS, ["home", "away"], METHODS, n_perm=10_000)
    tes = [r.te for r in result.reports]
    evidence("TE grid " + " ".join(f"{t:+.3f}" for t in tes))
    assert all(abs(t) <= 0.1 for t in tes)
    assert sum(t < 0 for t in tes) > len(tes) / 2
