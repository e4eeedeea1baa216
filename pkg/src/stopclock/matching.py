"""One-to-one matching of timeout units to same-game control possessions.

A treated unit ``i`` and a control ``j`` may be paired only when they come
from the same game, share the exact pre-window numerator, and their
``[t - lam, t + lam]`` windows are disjoint.  Because every edge stays
inside one (game, pre-window) block, the global problem splits into many
tiny assignment problems that are solved exactly and independently.

The optimal matcher maximizes the number of pairs first and minimizes the
total distance second.
"""
from __future__ import annotations

import csv
import warnings
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Callable, Iterable, Sequence

import numpy as np

from .cohort import Unit, covariate_matrix
from .propensity import GbmModel, predict_units
from .stmc import check_lambda

METHODS = ("no_balance", "mahalanobis", "propensity")
ALGORITHMS = ("optimal", "greedy")
PAIR_COLUMNS = ("method", "lambda", "side", "game_id", "t_treated", "t_control",
                "distance", "y_treated", "y_control")

COST_SCALE = 10**6

METHOD_ALIASES = {"nb": "no_balance", "no-balance": "no_balance", "m": "mahalanobis", "p": "propensity"}


def normalize_method(method: str) -> str:
    method = METHOD_ALIASES.get(method, method).replace("-", "_")
    if method not in METHODS:
        raise ValueError(f"unknown matching method {method!r}; expected one of {METHODS}")
    return method


class SingularCovarianceWarning(UserWarning):
    """The pooled covariance was singular; a pseudo-inverse is used."""


@dataclass(frozen=True)
class MatchConfig:
    method: str = "propensity"
    lam: int = 2
    side: str = "home"
    algorithm: str = "optimal"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", normalize_method(self.method))
        check_lambda(self.lam)
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")


@dataclass(slots=True)
class Pair:
    treated: Unit
    control: Unit
    distance: float


@dataclass
class MatchedSample:
    pairs: list[Pair]
    method: str
    lam: int
    side: str
    n_treated_unmatched: int = 0

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def total_distance(self) -> float:
        return float(sum(p.distance for p in self.pairs))

    @property
    def y_treated(self) -> np.ndarray:
        return np.array([p.treated.y for p in self.pairs], dtype=float)

    @property
    def y_control(self) -> np.ndarray:
        return np.array([p.control.y for p in self.pairs], dtype=float)

    @property
    def differences(self) -> np.ndarray:
        return self.y_treated - self.y_control

    @property
    def treated(self) -> list[Unit]:
        return [p.treated for p in self.pairs]

    @property
    def controls(self) -> list[Unit]:
        return [p.control for p in self.pairs]


def feasible(treated: Unit, control: Unit, lam: int) -> bool:
    """Same game, identical pre-window numerator, disjoint windows."""
    return (
        treated.game_id == control.game_id
        and treated.dpre_num == control.dpre_num
        and abs(treated.t - control.t) > 2 * lam
    )


# -- distances ---------------------------------------------------------------

@dataclass
class Mahalanobis:
    cov: np.ndarray
    inv: np.ndarray
    singular: bool = False


def mahalanobis_cov(units: Sequence[Unit] | np.ndarray) -> Mahalanobis:
    """Sample covariance of (q, p, s) over the pooled units and its inverse.

    Falls back to the Moore-Penrose pseudo-inverse, with a
    :class:`SingularCovarianceWarning`, when the covariance is singular.
    """
    X = units if isinstance(units, np.ndarray) else covariate_matrix(units)
    if len(X) < 4:
        raise ValueError("need at least 4 units to estimate the covariance")
    cov = np.cov(X, rowvar=False, ddof=1)
    rank = np.linalg.matrix_rank(cov)
    if rank < cov.shape[0]:
        warnings.warn(
            f"covariate covariance has rank {rank} < {cov.shape[0]}; using pseudo-inverse",
            SingularCovarianceWarning,
            stacklevel=2,
        )
        return Mahalanobis(cov, np.linalg.pinv(cov, hermitian=True), singular=True)
    return Mahalanobis(cov, np.linalg.inv(cov))


def mahalanobis_distance(x: np.ndarray, y: np.ndarray, inv: np.ndarray) -> np.ndarray:
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    q = np.einsum("...i,ij,...j->...", d, inv, d)
    return np.sqrt(np.maximum(q, 0.0))


def distance(
    config: MatchConfig,
    treated: Unit,
    control: Unit,
    model: GbmModel | None = None,
    cov: Mahalanobis | np.ndarray | None = None,
) -> float | None:
    """Distance between one treated and one control unit; ``None`` if the
    pair is infeasible."""
    if config.method == "mahalanobis" and cov is None:
        raise ValueError("mahalanobis matching requires a covariance")
    if config.method == "propensity" and model is None:
        raise ValueError("propensity matching requires a fitted model")
    if not feasible(treated, control, config.lam):
        return None
    if config.method == "no_balance":
        return 0.0
    if config.method == "mahalanobis":
        inv = cov.inv if isinstance(cov, Mahalanobis) else np.asarray(cov)
        return float(mahalanobis_distance(treated.covariates, control.covariates, inv))
    s = model.predict_proba(np.array([treated.covariates, control.covariates]))
    return float(abs(s[0] - s[1]))


class DistanceOracle:
    """Vectorised distances for the units of one analysis.

    Scores or covariates are computed once for every unit, keyed by
    ``(game_id, t, a)``.
    """

    def __init__(self, config: MatchConfig, treated: Sequence[Unit], controls: Sequence[Unit],
                 model: GbmModel | None = None, cov: Mahalanobis | None = None):
        self.config = config
        units = list(treated) + list(controls)
        self._index = {(u.game_id, u.t, u.a): k for k, u in enumerate(units)}
        if config.method == "propensity":
            if model is None:
                raise ValueError("propensity matching requires a fitted model")
            self._feat = predict_units(model, units)[:, None] if units else np.empty((0, 1))
            self._inv = None
        elif config.method == "mahalanobis":
            if cov is None:
                raise ValueError("mahalanobis matching requires a covariance")
            self._feat = covariate_matrix(units)
            self._inv = cov.inv
        else:
            self._feat = None
            self._inv = None

    def matrix(self, treated: Sequence[Unit], controls: Sequence[Unit]) -> np.ndarray:
        """Distances for every treated x control combination (feasibility
        is not checked here)."""
        if self._feat is None:
            return np.zeros((len(treated), len(controls)))
        ti = [self._index[(u.game_id, u.t, u.a)] for u in treated]
        ci = [self._index[(u.game_id, u.t, u.a)] for u in controls]
        xt = self._feat[ti][:, None, :]
        xc = self._feat[ci][None, :, :]
        if self._inv is None:
            return np.abs(xt - xc)[..., 0]
        return mahalanobis_distance(xt, xc, self._inv)


def feasibility_matrix(treated: Sequence[Unit], controls: Sequence[Unit], lam: int) -> np.ndarray:
    tg = np.array([u.game_id for u in treated], dtype=object)
    cg = np.array([u.game_id for u in controls], dtype=object)
    tt = np.array([u.t for u in treated])
    ct = np.array([u.t for u in controls])
    td = np.array([u.dpre_num for u in treated])
    cd = np.array([u.dpre_num for u in controls])
    return (
        (tg[:, None] == cg[None, :])
        & (td[:, None] == cd[None, :])
        & (np.abs(tt[:, None] - ct[None, :]) > 2 * lam)
    )


# -- assignment solver -------------------------------------------------------

def min_cost_assignment(cost: np.ndarray) -> list[int]:
    """Exact rectangular assignment for an integer cost matrix with
    ``n_rows <= n_cols``.  Returns the column assigned to every row.

    Shortest augmenting paths with vertex potentials (the Hungarian method
    in its O(n^2 m) form); every row is augmented in turn via a Dijkstra
    pass on reduced costs.
    """
    n, m = cost.shape
    if n > m:
        raise ValueError("min_cost_assignment expects n_rows <= n_cols")
    if n == 0:
        return []
    a = cost.tolist()
    INF = float("inf")
    u = [0] * (n + 1)
    v = [0] * (m + 1)
    match_col = [0] * (m + 1)  # row (1-based) assigned to each column, 0 = free
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        match_col[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = match_col[j0]
            row = a[i0 - 1]
            ui0 = u[i0]
            delta = INF
            j1 = 0
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[match_col[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if match_col[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match_col[j0] = match_col[j1]
            j0 = j1
    assignment = [-1] * n
    for j in range(1, m + 1):
        if match_col[j]:
            assignment[match_col[j] - 1] = j - 1
    return assignment


def optimal_block(dist: np.ndarray, ok: np.ndarray) -> list[tuple[int, int]]:
    """Maximum-cardinality, minimum-distance matching of one block.

    Distances are scaled to integers; infeasible cells get a penalty larger
    than any feasible total, so the solver prefers one more feasible pair
    over any saving in distance.
    """
    n_t, n_c = dist.shape
    if n_t == 0 or n_c == 0 or not ok.any():
        return []
    scaled = np.where(ok, np.rint(np.asarray(dist, dtype=float) * COST_SCALE), 0).astype(np.int64)
    big = int(scaled.sum()) + 1
    cost = np.where(ok, scaled, big)
    transpose = n_t > n_c
    if transpose:
        cost = cost.T
    assignment = min_cost_assignment(cost)
    pairs = []
    for r, c in enumerate(assignment):
        i, j = (c, r) if transpose else (r, c)
        if ok[i, j]:
            pairs.append((i, j))
    return pairs


def greedy_block(dist: np.ndarray, ok: np.ndarray, order: Sequence[int],
                 control_t: Sequence[int]) -> list[tuple[int, int]]:
    """Nearest available control for each treated unit in ``order``; ties go
    to the control with the lowest instant index."""
    taken = np.zeros(dist.shape[1], dtype=bool)
    tie_rank = np.argsort(np.argsort(np.asarray(control_t), kind="stable"), kind="stable")
    pairs = []
    for i in order:
        cand = np.flatnonzero(ok[i] & ~taken)
        if cand.size == 0:
            continue
        d = dist[i, cand]
        best = cand[np.lexsort((tie_rank[cand], d))[0]]
        taken[best] = True
        pairs.append((int(i), int(best)))
    return pairs


# -- drivers -----------------------------------------------------------------

Block = tuple[list[Unit], list[Unit]]


def _blocks(treated: Sequence[Unit], controls: Sequence[Unit]) -> list[tuple[tuple[str, int], Block]]:
    tb: dict[tuple[str, int], list[Unit]] = defaultdict(list)
    cb: dict[tuple[str, int], list[Unit]] = defaultdict(list)
    for u in treated:
        tb[(u.game_id, u.dpre_num)].append(u)
    for u in controls:
        key = (u.game_id, u.dpre_num)
        if key in tb:
            cb[key].append(u)
    out = []
    for key in sorted(tb):
        ts = sorted(tb[key], key=lambda u: u.t)
        cs = sorted(cb.get(key, []), key=lambda u: u.t)
        out.append((key, (ts, cs)))
    return out


def _run(treated, controls, config: MatchConfig, oracle: DistanceOracle | Callable,
         solve: Callable, threads: int = 1) -> MatchedSample:
    blocks = _blocks(treated, controls)

    def matrix(ts, cs):
        if isinstance(oracle, DistanceOracle):
            return oracle.matrix(ts, cs)
        return np.array([[oracle(t, c) or 0.0 for c in cs] for t in ts], dtype=float).reshape(len(ts), len(cs))

    def work(item):
        key, (ts, cs) = item
        if not cs:
            return []
        ok = feasibility_matrix(ts, cs, config.lam)
        dist = matrix(ts, cs)
        return [Pair(ts[i], cs[j], float(dist[i, j])) for i, j in solve(key, ts, cs, dist, ok)]

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(work, blocks))
    else:
        chunks = [work(b) for b in blocks]
    pairs = [p for chunk in chunks for p in chunk]
    pairs.sort(key=lambda p: (p.treated.game_id, p.treated.t))
    return MatchedSample(pairs, config.method, config.lam, config.side,
                         n_treated_unmatched=len(treated) - len(pairs))


def optimal_match(treated: Sequence[Unit], controls: Sequence[Unit], config: MatchConfig,
                  oracle: DistanceOracle | Callable, threads: int = 1) -> MatchedSample:
    """Optimal 1:1 matching without replacement.

    Every (game, pre-window numerator) block is solved exactly; treated
    units left without a feasible partner are pruned.
    """
    def solve(key, ts, cs, dist, ok):
        return optimal_block(dist, ok)

    return _run(treated, controls, config, oracle, solve, threads)


def greedy_match(treated: Sequence[Unit], controls: Sequence[Unit], config: MatchConfig,
                 oracle: DistanceOracle | Callable, threads: int = 1) -> MatchedSample:
    """Nearest-neighbour matching in a seeded random order of treated units."""
    rng = np.random.default_rng(config.seed)
    order = list(treated)
    perm = rng.permutation(len(order))
    rank = {(order[k].game_id, order[k].t): int(r) for r, k in enumerate(perm)}

    def solve(key, ts, cs, dist, ok):
        local = sorted(range(len(ts)), key=lambda i: rank[(ts[i].game_id, ts[i].t)])
        return greedy_block(dist, ok, local, [c.t for c in cs])

    return _run(treated, controls, config, oracle, solve, threads)


def match(treated: Sequence[Unit], controls: Sequence[Unit], config: MatchConfig,
          model: GbmModel | None = None, cov: Mahalanobis | None = None,
          threads: int = 1) -> MatchedSample:
    oracle = DistanceOracle(config, treated, controls, model=model, cov=cov)
    runner = optimal_match if config.algorithm == "optimal" else greedy_match
    return runner(treated, controls, config, oracle, threads=threads)


def write_pairs_csv(samples: Iterable[MatchedSample], dest: str | Path | IO[str]) -> None:
    own = isinstance(dest, (str, Path))
    handle = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(PAIR_COLUMNS)
        for sample in samples:
            for p in sample.pairs:
                writer.writerow([sample.method, sample.lam, sample.side, p.treated.game_id,
                                 p.treated.t, p.control.t, repr(p.distance),
                                 repr(p.treated.y), repr(p.control.y)])
    finally:
        if own:
            handle.close()
