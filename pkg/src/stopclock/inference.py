"""Effect estimation and randomization inference on matched pairs.

Pairs are the exchangeable unit: a permutation swaps the treated and
control labels inside each pair independently with probability 1/2, which
flips the sign of that pair's outcome difference.  Random signs are drawn in
fixed-size batches whose generators are derived from ``(seed, batch)``, so
results do not depend on how many threads evaluate them.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cohort import Unit
from .matching import MatchedSample

PERM_BATCH = 500
CI_RESOLUTION = 1e-3
CI_SEARCH_SDS = 10.0
EXACT_WILCOXON_MAX_N = 25


@dataclass(frozen=True)
class EffectReport:
    method: str
    lam: int
    side: str
    subgroup: str
    n_pairs: int
    te: float | None
    p_value: float | None
    ci_lo: float | None
    ci_hi: float | None
    level: float
    n_permutations: int
    seed: int
    ci_degenerate: bool = False

    def to_dict(self) -> dict:
        ci = None
        if self.ci_lo is not None:
            ci = {"lo": self.ci_lo, "hi": self.ci_hi, "level": self.level}
        return {
            "method": self.method,
            "lambda": self.lam,
            "side": self.side,
            "subgroup": self.subgroup,
            "n_pairs": self.n_pairs,
            "te": self.te,
            "p_value": self.p_value,
            "ci": ci,
            "n_permutations": self.n_permutations,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class TestResult:
    p_value: float
    statistic: float
    n: int
    degenerate: bool = False

    __test__ = False  # not a pytest class


def _differences(sample: MatchedSample | Sequence[float]) -> np.ndarray:
    if isinstance(sample, MatchedSample):
        return sample.differences
    return np.asarray(sample, dtype=float)


def estimate_te(sample: MatchedSample | Sequence[float]) -> float:
    """Mean treated outcome minus mean control outcome over matched pairs.

    A plain sequence is read as within-pair differences.
    """
    if isinstance(sample, MatchedSample):
        if len(sample) == 0:
            raise ValueError("cannot estimate an effect from an empty matched sample")
        return float(sample.y_treated.mean() - sample.y_control.mean())
    d = _differences(sample)
    if d.size == 0:
        raise ValueError("cannot estimate an effect from an empty matched sample")
    return float(d.mean())


class SignFlipStream:
    """Reusable Monte Carlo sign-flip distribution for one set of differences.

    Only the per-permutation sums ``sum(s * d)`` and ``sum(s)`` are kept,
    which is all that is needed to test any shifted null ``d - tau``.
    """

    def __init__(self, d: Sequence[float], n_perm: int, seed: int, threads: int = 1):
        if n_perm < 1:
            raise ValueError("n_perm must be >= 1")
        self.d = np.asarray(d, dtype=float)
        if self.d.size == 0:
            raise ValueError("need at least one pair")
        self.n = self.d.size
        self.n_perm = n_perm
        self.seed = seed
        self._dsum = float(self.d.sum())
        n_batches = -(-n_perm // PERM_BATCH)
        if threads > 1 and n_batches > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(self._batch, range(n_batches)))
        else:
            parts = [self._batch(b) for b in range(n_batches)]
        self.sd = np.concatenate([p[0] for p in parts])
        self.s1 = np.concatenate([p[1] for p in parts])
        scale = float(np.abs(self.d).max()) if self.n else 0.0
        self._tol = 1e-9 * max(scale, 1.0)

    def _batch(self, b: int) -> tuple[np.ndarray, np.ndarray]:
        size = min(PERM_BATCH, self.n_perm - b * PERM_BATCH)
        rng = np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(b,)))
        raw = rng.integers(0, 256, size=(size, -(-self.n // 8)), dtype=np.uint8)
        bits = np.unpackbits(raw, axis=1, count=self.n).astype(np.float64)
        # sign = 2 * bit - 1
        return 2.0 * (bits @ self.d) - self._dsum, 2.0 * bits.sum(axis=1) - self.n

    def p_value(self, tau: float = 0.0) -> float:
        """Two-sided p-value for H0: effect = ``tau``."""
        obs = abs(self.d.mean() - tau)
        perm = np.abs(self.sd - tau * self.s1) / self.n
        extreme = int(np.count_nonzero(perm >= obs - self._tol))
        return (1 + extreme) / (self.n_perm + 1)


def permutation_test(sample: MatchedSample | Sequence[float], n_perm: int = 10_000, seed: int = 0,
                     threads: int = 1) -> float:
    """Monte Carlo paired permutation p-value for a zero mean difference.

    ``p = (1 + #{|stat_perm| >= |stat_obs|}) / (n_perm + 1)``, so it never
    falls below ``1 / (n_perm + 1)``.
    """
    return SignFlipStream(_differences(sample), n_perm, seed, threads).p_value(0.0)


def _endpoint(stream: SignFlipStream, te: float, direction: int, alpha: float, span: float) -> float:
    """Outermost grid point ``te + direction * k * h`` still accepted at ``alpha``."""
    h = CI_RESOLUTION
    hi = max(1, math.ceil(span / h))
    if stream.p_value(te + direction * hi * h) >= alpha:
        return te + direction * hi * h
    lo = 0
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if stream.p_value(te + direction * mid * h) >= alpha:
            lo = mid
        else:
            hi = mid
    return te + direction * lo * h


def invert_ci(sample: MatchedSample | Sequence[float] | SignFlipStream, alpha: float = 0.01,
              n_perm: int = 10_000, seed: int = 0, threads: int = 1) -> tuple[float, float, bool]:
    """Confidence set ``{tau : p(tau) >= alpha}`` from the shifted permutation test.

    Returns ``(lo, hi, degenerate)``.  Endpoints are located on a grid of
    step 1e-3 anchored at the estimate, searching at most ten standard
    deviations of the pair differences away; one permutation stream is
    shared by every shift.  When all differences are equal the interval
    collapses to the estimate and ``degenerate`` is set.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    stream = sample if isinstance(sample, SignFlipStream) else SignFlipStream(_differences(sample), n_perm, seed, threads)
    d = stream.d
    te = float(d.mean())
    sd = float(np.std(d, ddof=1)) if d.size > 1 else 0.0
    if sd == 0.0:
        return te, te, True
    span = CI_SEARCH_SDS * sd
    return _endpoint(stream, te, -1, alpha, span), _endpoint(stream, te, +1, alpha, span), False


def analyze_sample(sample: MatchedSample, *, subgroup: str = "all", alpha: float = 0.01,
                   n_perm: int = 10_000, seed: int = 0, threads: int = 1) -> EffectReport:
    """Point estimate, permutation p-value and inverted CI for one sample."""
    common = dict(method=sample.method, lam=sample.lam, side=sample.side, subgroup=subgroup,
                  level=1 - alpha, n_permutations=n_perm, seed=seed)
    if len(sample) == 0:
        return EffectReport(n_pairs=0, te=None, p_value=None, ci_lo=None, ci_hi=None, **common)
    stream = SignFlipStream(sample.differences, n_perm, seed, threads)
    te = estimate_te(sample)
    lo, hi, degenerate = invert_ci(stream, alpha)
    return EffectReport(n_pairs=len(sample), te=te, p_value=stream.p_value(0.0),
                        ci_lo=lo, ci_hi=hi, ci_degenerate=degenerate, **common)


# -- naive analysis ----------------------------------------------------------

def _signed_rank_exact_pvalue(ranks2: np.ndarray, w2: int) -> float:
    """Exact two-sided p for the signed-rank sum using doubled (integer) midranks."""
    total = int(ranks2.sum())
    dist = np.zeros(total + 1)
    dist[0] = 1.0
    for r in ranks2:
        r = int(r)
        shifted = np.zeros_like(dist)
        shifted[r:] = dist[: total + 1 - r]
        dist = dist + shifted
    dist /= dist.sum()
    p_lo = float(dist[: w2 + 1].sum())
    p_hi = float(dist[w2:].sum())
    return min(1.0, 2.0 * min(p_lo, p_hi))


def wilcoxon_one_sample(values: Sequence[float]) -> TestResult:
    """Two-sided Wilcoxon signed-rank test of a zero median.

    Zeros are dropped.  Up to 25 non-zero values the null distribution is
    enumerated exactly (midranks for ties); beyond that the normal
    approximation with tie correction is used.
    """
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("wilcoxon_one_sample needs at least one value")
    x = x[x != 0]
    n = x.size
    if n == 0:
        return TestResult(1.0, 0.0, 0, degenerate=True)
    absx = np.abs(x)
    order = np.argsort(absx, kind="mergesort")
    ranks = np.empty(n)
    sorted_abs = absx[order]
    k = 0
    tie_term = 0.0
    while k < n:
        j = k
        while j + 1 < n and sorted_abs[j + 1] == sorted_abs[k]:
            j += 1
        ranks[order[k:j + 1]] = (k + j + 2) / 2.0
        t = j - k + 1
        tie_term += t**3 - t
        k = j + 1
    w_plus = float(ranks[x > 0].sum())
    if n <= EXACT_WILCOXON_MAX_N:
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        p = _signed_rank_exact_pvalue(ranks2, int(round(2 * w_plus)))
        return TestResult(p, w_plus, n)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term / 48.0
    z = (w_plus - mean) / math.sqrt(var)
    return TestResult(math.erfc(abs(z) / math.sqrt(2.0)), w_plus, n)


def bootstrap_mean_test(values: Sequence[float], n_boot: int = 10_000, seed: int = 0) -> TestResult:
    """Two-sided bootstrap test of a zero mean.

    The bootstrap distribution of the mean is recentred at zero and the
    observed mean is compared against it, with the add-one convention.
    """
    if n_boot < 1:
        raise ValueError("n_boot must be >= 1")
    x = np.asarray(values, dtype=float)
    if x.size == 0:
        raise ValueError("bootstrap_mean_test needs at least one value")
    n = x.size
    xbar = float(x.mean())
    rng = np.random.default_rng(seed)
    tol = 1e-12 * max(float(np.abs(x).max()), 1.0)
    extreme = 0
    batch = max(1, min(n_boot, 2_000_000 // n))
    done = 0
    while done < n_boot:
        size = min(batch, n_boot - done)
        means = x[rng.integers(0, n, size=(size, n))].mean(axis=1)
        extreme += int(np.count_nonzero(np.abs(means - xbar) >= abs(xbar) - tol))
        done += size
    return TestResult((1 + extreme) / (n_boot + 1), xbar, n, degenerate=bool(np.all(x == x[0])))


def naive_stmc_summary(treated: Sequence[Unit]) -> tuple[float, int]:
    """Mean momentum change after timeouts and how many there are."""
    if not treated:
        raise ValueError("empty treated set")
    y = np.array([u.y for u in treated], dtype=float)
    return float(y.mean()), int(y.size)
