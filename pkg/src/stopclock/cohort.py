"""Treated and control units for one side of the analysis."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

from .pbp import SIDES, fmt_real, GameInstant, InstantKind, margin_series
from .stmc import check_lambda, window_arrays

UNIT_COLUMNS = ("game_id", "t", "side", "a", "quarter", "seconds", "p_margin", "dpre_num", "y")
SUBGROUPS = ("all", "minus_last5", "only_last5")

LAST_QUARTER = 4
LAST_FIVE_START = 420.0  # seconds elapsed in a 720 s quarter


@dataclass(slots=True)
class Unit:
    game_id: str
    t: int
    side: str
    a: int
    q: int
    p: int
    s: float
    dpre_num: int
    y: float

    @property
    def covariates(self) -> tuple[float, float, float]:
        return (float(self.q), float(self.p), self.s)


def game_units(instants: Sequence[GameInstant], lam: int, side: str) -> tuple[list[Unit], list[Unit]]:
    """Treated and control units of a single game."""
    if not instants:
        return [], []
    P = margin_series(instants, side)
    interruption = np.fromiter((i.is_interruption for i in instants), dtype=bool, count=len(instants))
    dpre, dpost, valid = window_arrays(P, interruption, lam)

    P, dpre, dpost = P.tolist(), dpre.tolist(), dpost.tolist()
    treated, controls = [], []
    for t in np.flatnonzero(valid).tolist():
        ins = instants[t]
        if ins.kind is InstantKind.POSSESSION:
            bucket, a = controls, 0
        elif ins.kind is InstantKind.TIMEOUT and not ins.official and ins.team == side:
            bucket, a = treated, 1
        else:
            continue
        bucket.append(
            Unit(
                game_id=ins.game_id,
                t=t,
                side=side,
                a=a,
                q=ins.quarter,
                p=P[t],
                s=ins.seconds_elapsed,
                dpre_num=dpre[t],
                y=(dpost[t] - dpre[t]) / lam,
            )
        )
    return treated, controls


def build_units(
    games: Mapping[str, Sequence[GameInstant]], lam: int, side: str
) -> tuple[list[Unit], list[Unit]]:
    """Valid non-official timeouts called by ``side`` and the pool of valid
    possession instants, all seen from ``side``'s perspective.

    Official timeouts and period ends are in neither group, but they still
    break the windows of neighbouring instants.
    """
    lam = check_lambda(lam)
    if side not in SIDES:
        raise ValueError(f"side must be one of {SIDES}, got {side!r}")
    treated: list[Unit] = []
    controls: list[Unit] = []
    for instants in games.values():
        tr, co = game_units(instants, lam, side)
        treated.extend(tr)
        controls.extend(co)
    return treated, controls


def prefilter_controls(treated: Iterable[Unit], control_pool: Iterable[Unit]) -> list[Unit]:
    """Drop controls that share their pre-window numerator with no treated
    unit of the same game.  Such controls can never be matched."""
    keys = {(u.game_id, u.dpre_num) for u in treated}
    return [c for c in control_pool if (c.game_id, c.dpre_num) in keys]


def in_last_five(unit: Unit) -> bool:
    return unit.q == LAST_QUARTER and unit.s > LAST_FIVE_START


def subgroup_filter(units: Iterable[Unit], mode: str) -> list[Unit]:
    """Restrict units to a game phase.

    ``minus_last5`` drops the last five minutes of the 4th quarter and
    ``only_last5`` keeps just those; overtime counts as outside the window.
    """
    mode = mode.replace("-", "_")
    if mode == "all":
        return list(units)
    if mode == "minus_last5":
        return [u for u in units if not in_last_five(u)]
    if mode == "only_last5":
        return [u for u in units if in_last_five(u)]
    raise ValueError(f"unknown subgroup mode {mode!r}; expected one of {SUBGROUPS}")


def units_by_game(units: Iterable[Unit]) -> dict[str, list[Unit]]:
    grouped: dict[str, list[Unit]] = defaultdict(list)
    for u in units:
        grouped[u.game_id].append(u)
    return grouped


def covariate_matrix(units: Sequence[Unit]) -> np.ndarray:
    if not units:
        return np.empty((0, 3))
    return np.array([(u.q, u.p, u.s) for u in units], dtype=float)


def write_units_csv(units: Iterable[Unit], dest: str | Path | IO[str]) -> None:
    own = isinstance(dest, (str, Path))
    handle = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(UNIT_COLUMNS)
        for u in units:
            writer.writerow([u.game_id, u.t, u.side, u.a, u.q, fmt_real(u.s), u.p, u.dpre_num, repr(u.y)])
    finally:
        if own:
            handle.close()


def read_units_csv(source: str | Path | IO[str]) -> list[Unit]:
    own = isinstance(source, (str, Path))
    handle = open(source, newline="", encoding="utf-8") if own else source
    try:
        return [
            Unit(
                game_id=row["game_id"],
                t=int(row["t"]),
                side=row["side"],
                a=int(row["a"]),
                q=int(row["quarter"]),
                p=int(row["p_margin"]),
                s=float(row["seconds"]),
                dpre_num=int(row["dpre_num"]),
                y=float(row["y"]),
            )
            for row in csv.DictReader(handle)
        ]
    finally:
        if own:
            handle.close()

