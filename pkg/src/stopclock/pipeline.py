"""Cohort to report in one call, shared by the CLI and the acceptance runs."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .cohort import Unit, build_units, prefilter_controls, subgroup_filter
from .diagnostics import BalanceRow, balance_table
from .inference import EffectReport, analyze_sample
from .matching import MatchConfig, MatchedSample, mahalanobis_cov, match
from .pbp import SIDES, GameInstant
from .propensity import GbmConfig, GbmModel, fit_units


@dataclass
class AnalysisResult:
    reports: list[EffectReport] = field(default_factory=list)
    samples: list[MatchedSample] = field(default_factory=list)
    balance: list[BalanceRow] = field(default_factory=list)
    models: dict[tuple[int, str], GbmModel] = field(default_factory=dict)


def analyze_units(
    treated: Sequence[Unit],
    pool: Sequence[Unit],
    lam: int,
    side: str,
    methods: Sequence[str],
    *,
    algorithm: str = "optimal",
    subgroup: str = "all",
    n_perm: int = 10_000,
    alpha: float = 0.01,
    seed: int = 0,
    threads: int = 1,
    gbm: GbmConfig | None = None,
) -> AnalysisResult:
    """Match and test one (lambda, side) cohort with every requested method.

    Controls are prefiltered to the (game, pre-window) blocks holding a
    treated unit; the propensity model is fitted on treated plus those
    controls, separately for every side.
    """
    out = AnalysisResult()
    treated = subgroup_filter(treated, subgroup)
    pool = subgroup_filter(pool, subgroup)
    controls = prefilter_controls(treated, pool)
    model = cov = None
    for method in methods:
        config = MatchConfig(method=method, lam=lam, side=side, algorithm=algorithm, seed=seed)
        if config.method == "propensity" and model is None and treated and controls:
            model = fit_units(list(treated) + list(controls), gbm or GbmConfig(seed=seed))
            out.models[(lam, side)] = model
        if config.method == "mahalanobis" and cov is None and len(treated) + len(controls) >= 4:
            cov = mahalanobis_cov(list(treated) + list(controls))
        if not treated or not controls:
            sample = MatchedSample([], config.method, lam, side, n_treated_unmatched=len(treated))
        else:
            sample = match(treated, controls, config, model=model, cov=cov, threads=threads)
        if len(sample) == 0:
            warnings.warn(f"empty matched sample for method={config.method} lambda={lam} side={side}",
                          RuntimeWarning, stacklevel=2)
        out.samples.append(sample)
        out.reports.append(analyze_sample(sample, subgroup=subgroup, alpha=alpha, n_perm=n_perm,
                                          seed=seed, threads=threads))
    if treated and controls:
        out.balance = balance_table(treated, controls, [s for s in out.samples if len(s)], lam=lam)
    return out


def run_analysis(
    games: Mapping[str, Sequence[GameInstant]],
    lams: Sequence[int],
    sides: Sequence[str],
    methods: Sequence[str],
    **kwargs,
) -> AnalysisResult:
    """The full grid: every lambda x side x method, in that nesting order."""
    total = AnalysisResult()
    for lam in lams:
        for side in sides:
            if side not in SIDES:
                raise ValueError(f"side must be one of {SIDES}, got {side!r}")
            treated, pool = build_units(games, lam, side)
            part = analyze_units(treated, pool, lam, side, methods, **kwargs)
            total.reports.extend(part.reports)
            total.samples.extend(part.samples)
            total.balance.extend(part.balance)
            total.models.update(part.models)
    return total


def naive_treated(games: Mapping[str, Sequence[GameInstant]], lam: int) -> list[Unit]:
    """Valid team timeouts of both sides, each seen from its caller."""
    units: list[Unit] = []
    for side in SIDES:
        units.extend(build_units(games, lam, side)[0])
    return units
