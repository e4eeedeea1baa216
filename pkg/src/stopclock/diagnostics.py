"""Covariate balance and the back-door check on the timeout causal graph."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .cohort import Unit
from .matching import MatchedSample

SMD_THRESHOLD = 0.1
BALANCE_COLUMNS = ("lambda", "method", "stage", "covariate", "mean_c", "sd_c", "mean_t", "sd_t", "smd")
COVARIATE_NAMES = ("S_t", "Q_t", "P_t", "dP_pre")


def _sd(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1)) if len(x) > 1 else 0.0


def smd(treated: Sequence[float], control: Sequence[float]) -> float:
    """Absolute standardized mean difference with the pooled sd
    ``sqrt((sd_t^2 + sd_c^2) / 2)``.

    Returns 0 when both samples are constant and equal, ``inf`` when they
    are constant but different.
    """
    t = np.asarray(treated, dtype=float)
    c = np.asarray(control, dtype=float)
    if t.size == 0 or c.size == 0:
        raise ValueError("smd needs two non-empty samples")
    return smd_from_moments(float(t.mean()), _sd(t), float(c.mean()), _sd(c))


def smd_from_moments(mean_t: float, sd_t: float, mean_c: float, sd_c: float) -> float:
    diff = abs(mean_t - mean_c)
    pooled = math.sqrt((sd_t**2 + sd_c**2) / 2.0)
    if pooled == 0.0:
        return 0.0 if diff == 0.0 else math.inf
    return diff / pooled


@dataclass(frozen=True)
class BalanceRow:
    lam: int
    method: str
    stage: str
    covariate: str
    mean_c: float
    sd_c: float
    mean_t: float
    sd_t: float
    smd: float

    @property
    def balanced(self) -> bool:
        return self.smd < SMD_THRESHOLD


def _covariate_values(units: Sequence[Unit], name: str, lam: int) -> np.ndarray:
    if name == "S_t":
        return np.array([u.s for u in units], dtype=float)
    if name == "Q_t":
        return np.array([u.q for u in units], dtype=float)
    if name == "P_t":
        return np.array([u.p for u in units], dtype=float)
    if name == "dP_pre":
        return np.array([u.dpre_num for u in units], dtype=float) / lam
    raise KeyError(name)


def _rows(lam, method, stage, treated, controls) -> list[BalanceRow]:
    rows = []
    for name in COVARIATE_NAMES:
        t = _covariate_values(treated, name, lam)
        c = _covariate_values(controls, name, lam)
        if t.size == 0 or c.size == 0:
            continue
        mt, st, mc, sc = float(t.mean()), _sd(t), float(c.mean()), _sd(c)
        rows.append(BalanceRow(lam, method, stage, name, mc, sc, mt, st, smd_from_moments(mt, st, mc, sc)))
    return rows


def balance_table(
    treated: Sequence[Unit],
    controls: Sequence[Unit],
    samples: Iterable[MatchedSample] | MatchedSample = (),
    lam: int | None = None,
) -> list[BalanceRow]:
    """Mean, sd and SMD of every covariate before matching and after each
    matched sample, in the layout of a classic balance table."""
    if isinstance(samples, MatchedSample):
        samples = [samples]
    samples = list(samples)
    if lam is None:
        lam = samples[0].lam if samples else 1
    rows = _rows(lam, "none", "before", treated, controls)
    for sample in samples:
        rows.extend(_rows(sample.lam, sample.method, "after", sample.treated, sample.controls))
    return rows


def write_balance_csv(rows: Iterable[BalanceRow], dest: str | Path | IO[str]) -> None:
    own = isinstance(dest, (str, Path))
    handle = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(BALANCE_COLUMNS)
        for r in rows:
            writer.writerow([r.lam, r.method, r.stage, r.covariate,
                             f"{r.mean_c:.6f}", f"{r.sd_c:.6f}", f"{r.mean_t:.6f}", f"{r.sd_t:.6f}",
                             "inf" if math.isinf(r.smd) else f"{r.smd:.6f}"])
    finally:
        if own:
            handle.close()


# -- causal graph ------------------------------------------------------------

@dataclass
class CausalDag:
    nodes: list[str]
    edges: list[tuple[str, str]]
    latent: set[str] = field(default_factory=set)

    def __post_init__(self):
        known = set(self.nodes)
        for a, b in self.edges:
            if a not in known or b not in known:
                raise ValueError(f"edge {a}->{b} references an unknown node")
        if self._has_cycle():
            raise ValueError("graph contains a directed cycle")

    def parents(self, node: str) -> set[str]:
        return {a for a, b in self.edges if b == node}

    def children(self, node: str) -> set[str]:
        return {b for a, b in self.edges if a == node}

    def descendants(self, node: str) -> set[str]:
        seen: set[str] = set()
        stack = [node]
        while stack:
            for child in self.children(stack.pop()):
                if child not in seen:
                    seen.add(child)
                    stack.append(child)
        return seen

    def _has_cycle(self) -> bool:
        state: dict[str, int] = {}

        def visit(n: str) -> bool:
            state[n] = 1
            for c in self.children(n):
                if state.get(c) == 1 or (c not in state and visit(c)):
                    return True
            state[n] = 2
            return False

        return any(n not in state and visit(n) for n in self.nodes)


def timeout_dag() -> CausalDag:
    """The timeout model: pre-window momentum, in-game covariates and the
    latent game context all drive both the timeout call and the post-window
    momentum.  The deterministic outcome node is left out."""
    A, post, pre, X, U = "A_t", "dP_post", "dP_pre", "X_t", "U"
    return CausalDag(
        nodes=[A, post, pre, X, U],
        edges=[(A, post), (pre, A), (pre, post), (X, A), (X, post), (U, A), (U, pre), (U, post)],
        latent={U},
    )


def _undirected_paths(dag: CausalDag, start: str, end: str):
    adj: dict[str, set[str]] = {n: set() for n in dag.nodes}
    for a, b in dag.edges:
        adj[a].add(b)
        adj[b].add(a)

    path = [start]

    def extend(node: str):
        if node == end:
            yield list(path)
            return
        for nxt in sorted(adj[node]):
            if nxt in path:
                continue
            path.append(nxt)
            yield from extend(nxt)
            path.pop()

    yield from extend(start)


def path_blocked(dag: CausalDag, path: Sequence[str], given: set[str]) -> bool:
    """Whether ``given`` blocks the path: some non-collider on it is in
    ``given``, or some collider has neither itself nor a descendant in it."""
    edges = set(dag.edges)
    for k in range(1, len(path) - 1):
        prev, node, nxt = path[k - 1], path[k], path[k + 1]
        collider = (prev, node) in edges and (nxt, node) in edges
        if collider:
            if node not in given and not (dag.descendants(node) & given):
                return True
        elif node in given:
            return True
    return False


def backdoor_check(dag: CausalDag, treatment: str, outcome: str, adjustment: Iterable[str]) -> bool:
    """Back-door criterion by explicit path enumeration.

    True iff no member of ``adjustment`` descends from ``treatment`` and
    every path from ``treatment`` to ``outcome`` that starts with an arrow
    into ``treatment`` is blocked by ``adjustment``.
    """
    given = set(adjustment)
    for n in (treatment, outcome, *given):
        if n not in dag.nodes:
            raise ValueError(f"unknown node {n!r}")
    if treatment in given or outcome in given:
        raise ValueError("adjustment set must exclude treatment and outcome")
    if dag.descendants(treatment) & given:
        return False
    edges = set(dag.edges)
    for path in _undirected_paths(dag, treatment, outcome):
        if (path[1], treatment) not in edges:
            continue
        if not path_blocked(dag, path, given):
            return False
    return True


# -- distribution export -----------------------------------------------------

DENSITY_COLUMNS = ("covariate", "group", "bin_lo", "bin_hi", "count", "density")


@dataclass
class Histogram:
    covariate: str
    edges: np.ndarray
    counts: dict[str, np.ndarray]

    def density(self, group: str) -> np.ndarray:
        c = self.counts[group]
        widths = np.diff(self.edges)
        total = c.sum()
        return c / (total * widths) if total else np.zeros_like(widths)

    def mean(self, group: str) -> float:
        mid = (self.edges[:-1] + self.edges[1:]) / 2
        c = self.counts[group]
        return float((mid * c).sum() / c.sum())

    def rows(self):
        for group, counts in self.counts.items():
            dens = self.density(group)
            for k in range(len(counts)):
                yield (self.covariate, group, float(self.edges[k]), float(self.edges[k + 1]),
                       int(counts[k]), float(dens[k]))


def distribution_export(groups: Mapping[str, Sequence[float]], covariate: str = "value") -> Histogram:
    """Histogram every group on shared Freedman-Diaconis bins of the pooled data."""
    arrays = {g: np.asarray(v, dtype=float) for g, v in groups.items()}
    pooled = np.concatenate([a for a in arrays.values()]) if arrays else np.empty(0)
    if pooled.size == 0:
        raise ValueError("distribution_export needs at least one value")
    edges = np.histogram_bin_edges(pooled, bins="fd")
    counts = {g: np.histogram(a, bins=edges)[0] for g, a in arrays.items()}
    return Histogram(covariate, edges, counts)


def sample_distributions(sample: MatchedSample) -> list[Histogram]:
    """Shared-bin histograms of S_t, Q_t and P_t for a matched sample."""
    out = []
    for name in ("S_t", "Q_t", "P_t"):
        out.append(distribution_export(
            {"control": _covariate_values(sample.controls, name, sample.lam),
             "treated": _covariate_values(sample.treated, name, sample.lam)},
            covariate=name,
        ))
    return out


def write_density_csv(histograms: Iterable[Histogram], dest: str | Path | IO[str]) -> None:
    own = isinstance(dest, (str, Path))
    handle = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(DENSITY_COLUMNS)
        for h in histograms:
            for cov, group, lo, hi, count, dens in h.rows():
                writer.writerow([cov, group, repr(lo), repr(hi), count, repr(dens)])
    finally:
        if own:
            handle.close()
