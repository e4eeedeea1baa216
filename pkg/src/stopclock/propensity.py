"""Gradient-boosted regression trees for the timeout propensity score.

Binomial deviance boosting in the style of Friedman's TreeBoost: each stage
fits a shallow least-squares tree to the residuals ``a - p`` and replaces
its leaf means with a damped Newton step on the log-loss.  Candidate split
thresholds come from at most ``max_bins`` quantiles of each feature, which
keeps split search to a few ``bincount`` calls per node.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cohort import Unit, covariate_matrix

FEATURES = ("q", "p", "s")
_LOGIT_CLIP = 30.0
_HESS_EPS = 1e-12


class FitError(ValueError):
    """Raised when the training data cannot support a propensity model."""


@dataclass(frozen=True)
class GbmConfig:
    n_trees: int = 500
    max_depth: int = 2
    shrinkage: float = 0.05
    bag_fraction: float = 0.5
    min_leaf: int = 10
    max_bins: int = 255
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.shrinkage <= 1:
            raise ValueError("shrinkage must lie in (0, 1]")
        if not 0 < self.bag_fraction <= 1:
            raise ValueError("bag_fraction must lie in (0, 1]")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


@dataclass
class Tree:
    """Array-encoded binary tree.  ``feature[k] == -1`` marks a leaf."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def add_leaf(self, value: float = 0.0) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    @property
    def depth(self) -> int:
        def walk(k: int) -> int:
            if self.feature[k] < 0:
                return 0
            return 1 + max(walk(self.left[k]), walk(self.right[k]))

        return walk(0)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        return _route(self, lambda k: X[:, self.feature[k]] <= self.threshold[k], len(X))

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.value)[self.apply(X)]


@dataclass
class GbmModel:
    trees: list[Tree]
    shrinkage: float
    base_score: float
    base_rate: float
    train_loss: list[float] = field(default_factory=list)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, len(FEATURES))
        f = np.full(len(X), self.base_score)
        for tree in self.trees:
            # leaf values already carry the shrinkage factor
            f += tree.predict(X)
        return f

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, len(FEATURES))
        if not self.trees:
            return np.full(len(X), self.base_rate)
        return _sigmoid(self.decision_function(X))

    def to_json(self) -> str:
        payload = {
            "features": list(FEATURES),
            "shrinkage": self.shrinkage,
            "base_score": self.base_score,
            "base_rate": self.base_rate,
            "trees": [asdict(t) for t in self.trees],
        }
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "GbmModel":
        payload = json.loads(text)
        return cls(
            trees=[Tree(**t) for t in payload["trees"]],
            shrinkage=payload["shrinkage"],
            base_score=payload["base_score"],
            base_rate=payload["base_rate"],
        )


def _sigmoid(f: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(f, -_LOGIT_CLIP, _LOGIT_CLIP)))


def _softplus(f: np.ndarray) -> np.ndarray:
    return np.log1p(np.exp(-np.abs(f))) + np.maximum(f, 0.0)


def log_loss(a: np.ndarray, f: np.ndarray) -> float:
    """Mean binomial deviance / 2 for labels ``a`` at log-odds ``f``."""
    f = np.clip(f, -_LOGIT_CLIP, _LOGIT_CLIP)
    return float(np.mean(_softplus(f) - a * f))


def _bin_features(X: np.ndarray, max_bins: int) -> tuple[np.ndarray, list[np.ndarray]]:
    """Integer codes per feature plus the cut values separating the codes.

    Code ``k`` holds values in ``(cuts[k-1], cuts[k]]``; a split after code
    ``k`` sends ``x <= cuts[k]`` left.
    """
    dtype = np.uint8 if max_bins <= 256 else np.int64
    codes = np.empty(X.shape, dtype=dtype, order="F")
    cuts = []
    for j in range(X.shape[1]):
        col = X[:, j]
        uniq = np.unique(col)
        if len(uniq) <= max_bins:
            c = uniq[:-1]
        else:
            qs = np.quantile(col, np.linspace(0, 1, max_bins + 1)[1:-1], method="lower")
            c = np.unique(qs)
            c = c[c < uniq[-1]]
        cuts.append(c)
        codes[:, j] = np.searchsorted(c, col, side="left")
    return codes, cuts


def _histograms(cols: list[np.ndarray], r: np.ndarray, local: np.ndarray, n_bins: Sequence[int]):
    """Per-feature residual sums and counts for the rows at ``local``."""
    sub_r = r[local]
    out = []
    for col, nb in zip(cols, n_bins):
        c = col[local]
        out.append((np.bincount(c, weights=sub_r, minlength=nb), np.bincount(c, minlength=nb)))
    return out


def _best_split(hists, total_n: int, min_leaf: int):
    """Least-squares split maximizing the variance reduction, from histograms."""
    best = (0.0, -1, -1)
    for j, (s, n) in enumerate(hists):
        if len(n) < 2:
            continue
        total_s = s.sum()
        base = total_s * total_s / total_n
        sl = np.cumsum(s)[:-1]
        nl = np.cumsum(n)[:-1]
        nr = total_n - nl
        ok = (nl >= min_leaf) & (nr >= min_leaf)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = sl * sl / nl + (total_s - sl) ** 2 / nr - base
        gain = np.where(ok, gain, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[0] + 1e-12:
            best = (float(gain[k]), j, k)
    return best


def _leaf_value(a: np.ndarray, f: np.ndarray, p: np.ndarray, rows: np.ndarray, shrinkage: float) -> float:
    """Damped Newton step for one leaf, halved until the leaf loss does not rise."""
    resid_sum = float(np.sum(a[rows] - p[rows]))
    hess = p[rows] * (1.0 - p[rows])
    step = shrinkage * resid_sum / max(float(hess.sum()), _HESS_EPS)
    if step == 0.0:
        return 0.0
    # the log-loss curvature is at most 1/4, so steps within this bound
    # cannot increase the leaf loss
    if abs(step) <= 8.0 * abs(resid_sum) / len(rows) * (1.0 - 1e-9):
        return float(step)
    fa, fr = a[rows], f[rows]
    before = np.sum(_softplus(fr) - fa * fr)
    for _ in range(60):
        fn = fr + step
        after = np.sum(_softplus(fn) - fa * fn)
        if after <= before:
            return float(step)
        step *= 0.5
    return 0.0


def _route(tree: Tree, goes_left, n: int) -> np.ndarray:
    """Leaf index per row; ``goes_left(k)`` is the boolean test at node ``k``."""
    def walk(k):
        if tree.feature[k] < 0:
            return k
        return np.where(goes_left(k), walk(tree.left[k]), walk(tree.right[k]))

    return np.broadcast_to(np.asarray(walk(0), dtype=np.int64), (n,))


def _route_codes(tree: Tree, split_bins: dict[int, int], codes: np.ndarray) -> np.ndarray:
    return _route(tree, lambda k: codes[:, tree.feature[k]] <= split_bins[k], len(codes))


def _grow_tree(codes, cuts, a, f, rows, cfg: GbmConfig):
    """Grow one tree on the bagged ``rows``; ``a`` and ``f`` are already
    restricted to the bag, and returned leaf index arrays are local to it."""
    tree = Tree()
    split_bins: dict[int, int] = {}
    root = tree.add_leaf()
    p = _sigmoid(f)
    r = a - p
    cols = [codes[rows, j] for j in range(codes.shape[1])]
    n_bins = [len(c) + 1 for c in cuts]
    everything = np.arange(len(rows))
    frontier = [(root, everything, 0, _histograms(cols, r, everything, n_bins))]
    leaves = []
    while frontier:
        node, idx, depth, hists = frontier.pop()
        if depth >= cfg.max_depth or len(idx) < 2 * cfg.min_leaf:
            leaves.append((node, idx))
            continue
        gain, j, k = _best_split(hists, len(idx), cfg.min_leaf)
        if j < 0:
            leaves.append((node, idx))
            continue
        go_left = cols[j][idx] <= k
        left, right = idx[go_left], idx[~go_left]
        lnode, rnode = tree.add_leaf(), tree.add_leaf()
        tree.feature[node] = j
        tree.threshold[node] = float(cuts[j][k])
        split_bins[node] = k
        tree.left[node] = lnode
        tree.right[node] = rnode
        child_hists = [None, None]
        if depth + 1 < cfg.max_depth:
            # histogram the smaller child, subtract for the larger
            small = 0 if len(left) <= len(right) else 1
            h = _histograms(cols, r, (left, right)[small], n_bins)
            child_hists[small] = h
            child_hists[1 - small] = [(ps - s_, pn - n_) for (ps, pn), (s_, n_) in zip(hists, h)]
        frontier.append((rnode, right, depth + 1, child_hists[1]))
        frontier.append((lnode, left, depth + 1, child_hists[0]))
    for node, idx in leaves:
        tree.value[node] = _leaf_value(a, f, p, idx, cfg.shrinkage)
    return tree, leaves, split_bins


def fit(X: np.ndarray, a: np.ndarray, config: GbmConfig | None = None) -> GbmModel:
    """Fit the boosted propensity model on covariates ``X`` (n x 3) and labels ``a``.

    Parameters
    ----------
    X : ndarray of shape (n, 3)
        Quarter, side-perspective margin and seconds into the quarter.
    a : ndarray of shape (n,)
        Treatment labels in {0, 1}.
    config : GbmConfig, optional
        Boosting hyperparameters; defaults to 500 depth-2 trees with
        shrinkage 0.05 and half-sample bagging.

    Returns
    -------
    GbmModel
        The fitted ensemble.  ``train_loss[k]`` is the training log-loss
        after ``k`` trees, so the list has ``n_trees + 1`` entries.

    Raises
    ------
    ValueError
        On empty or malformed input.
    FitError
        When only one label is present.
    """
    cfg = config or GbmConfig()
    X = np.asarray(X, dtype=float)
    a = np.asarray(a, dtype=float)
    if X.size == 0 or len(a) == 0:
        raise ValueError("cannot fit a propensity model on empty input")
    if X.ndim != 2 or X.shape[1] != len(FEATURES) or len(X) != len(a):
        raise ValueError(f"X must have shape (n, {len(FEATURES)}) matching a")
    if not np.all(np.isfinite(X)):
        raise ValueError("covariates must be finite")
    if not np.all((a == 0) | (a == 1)):
        raise ValueError("labels must be 0 or 1")
    n_pos = int(a.sum())
    if n_pos == 0 or n_pos == len(a):
        raise FitError("both treated and control units are required")

    n = len(a)
    rate = n_pos / n
    base = float(np.log(rate / (1.0 - rate)))
    codes, cuts = _bin_features(X, cfg.max_bins)
    rng = np.random.default_rng(cfg.seed)
    n_bag = max(1, int(round(cfg.bag_fraction * n)))

    f = np.full(n, base)
    losses = [log_loss(a, f)]
    trees = []
    all_rows = np.arange(n)
    for _ in range(cfg.n_trees):
        if n_bag < n:
            rows = rng.choice(n, size=n_bag, replace=False)
            tree, leaves, split_bins = _grow_tree(codes, cuts, a[rows], f[rows], rows, cfg)
        else:
            rows = all_rows
            tree, leaves, split_bins = _grow_tree(codes, cuts, a, f, rows, cfg)
        if n_bag < n:
            f += np.asarray(tree.value)[_route_codes(tree, split_bins, codes)]
        else:
            for node, idx in leaves:
                f[idx] += tree.value[node]
        trees.append(tree)
        losses.append(log_loss(a, f))

    return GbmModel(trees=trees, shrinkage=cfg.shrinkage, base_score=base, base_rate=rate, train_loss=losses)


def fit_units(units: Sequence[Unit], config: GbmConfig | None = None) -> GbmModel:
    """Fit on the covariates and treatment labels of ``units``."""
    if not units:
        raise ValueError("cannot fit a propensity model on empty input")
    X = covariate_matrix(units)
    a = np.array([u.a for u in units], dtype=float)
    return fit(X, a, config)


def predict(model: GbmModel, q, p, s) -> np.ndarray | float:
    """Propensity score at the given covariates; scalar in, scalar out."""
    scalar = np.ndim(q) == 0 and np.ndim(p) == 0 and np.ndim(s) == 0
    X = np.column_stack(np.broadcast_arrays(np.atleast_1d(q), np.atleast_1d(p), np.atleast_1d(s))).astype(float)
    out = model.predict_proba(X)
    return float(out[0]) if scalar else out


def predict_units(model: GbmModel, units: Sequence[Unit]) -> np.ndarray:
    return model.predict_proba(covariate_matrix(units))


def save_model(model: GbmModel, path: str | Path) -> None:
    Path(path).write_text(model.to_json(), encoding="utf-8")
