"""Short-term momentum change around a game instant.

For an instant ``t`` and an even window ``lam`` the pre-window rate is
``(P[t-1] - P[t-lam-1]) / lam`` and the post-window rate is
``(P[t+lam] - P[t]) / lam``; the outcome ``y`` is post minus pre.  The
margin change produced by instant ``t`` itself is deliberately left out.

Numerators are kept as integers so matching can require exact equality of
pre-window momentum without a float tolerance.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .pbp import GameInstant, margin_series


@dataclass(frozen=True, slots=True)
class WindowStats:
    t: int
    lam: int
    dpre_num: int
    dpost_num: int
    valid: bool
    y: float | None

    @property
    def dpre(self) -> float:
        return self.dpre_num / self.lam

    @property
    def dpost(self) -> float:
        return self.dpost_num / self.lam


def check_lambda(lam: int) -> int:
    if isinstance(lam, bool) or int(lam) != lam or lam <= 0 or lam % 2:
        raise ValueError(f"lambda must be a positive even integer, got {lam!r}")
    return int(lam)


def window_stats(P: Sequence[int], instants: Sequence[GameInstant], t: int, lam: int) -> WindowStats:
    """Momentum windows around a single instant ``t``.

    The window is valid when ``t - lam - 1 >= 0``, ``t + lam`` is a real
    instant, and no interruption other than ``t`` itself lies in
    ``[t - lam, t + lam]``.  Numerators that fall outside the game are
    reported as 0.
    """
    lam = check_lambda(lam)
    n = len(P)
    if not 0 <= t < max(n, 1):
        raise ValueError(f"t={t} outside the game (n={n})")

    lo, hi = t - lam - 1, t + lam
    dpre = int(P[t - 1] - P[lo]) if lo >= 0 else 0
    dpost = int(P[hi] - P[t]) if hi < n else 0

    valid = lo >= 0 and hi < n
    if valid:
        for k in range(t - lam, t + lam + 1):
            if k != t and instants[k].is_interruption:
                valid = False
                break
    y = (dpost - dpre) / lam if valid else None
    return WindowStats(t, lam, dpre, dpost, valid, y)


def window_arrays(P: np.ndarray, interruption: np.ndarray, lam: int):
    """Vectorised windows for every instant of one game.

    Returns ``(dpre_num, dpost_num, valid)`` as arrays of length ``n``.
    """
    lam = check_lambda(lam)
    P = np.asarray(P, dtype=np.int64)
    n = len(P)
    dpre = np.zeros(n, dtype=np.int64)
    dpost = np.zeros(n, dtype=np.int64)
    valid = np.zeros(n, dtype=bool)
    if n > lam + 1:
        dpre[lam + 1:] = P[lam:n - 1] - P[: n - lam - 1]
    if n > lam:
        dpost[: n - lam] = P[lam:] - P[: n - lam]
    if n < 2 * lam + 2:
        return dpre, dpost, valid

    t = np.arange(lam + 1, n - lam)

    # interruptions in [t-lam, t+lam] excluding t
    csum = np.concatenate(([0], np.cumsum(interruption.astype(np.int64))))
    in_window = csum[t + lam + 1] - csum[t - lam] - interruption[t].astype(np.int64)
    valid[t] = in_window == 0
    return dpre, dpost, valid


def batch_stmc(instants: Sequence[GameInstant], lam: int, side: str) -> list[tuple[int, WindowStats]]:
    """Window statistics for every instant of one game, from ``side``'s view."""
    if not instants:
        return []
    P = margin_series(instants, side)
    interruption = np.fromiter((i.is_interruption for i in instants), dtype=bool, count=len(instants))
    dpre, dpost, valid = window_arrays(P, interruption, lam)
    out = []
    for t in range(len(instants)):
        ok = bool(valid[t])
        y = (int(dpost[t]) - int(dpre[t])) / lam if ok else None
        out.append((t, WindowStats(t, lam, int(dpre[t]), int(dpost[t]), ok, y)))
    return out
