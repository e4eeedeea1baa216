"""Synthetic seasons with a momentum-driven timeout policy.

Each game is four quarters of strictly alternating possessions.  Points per
possession are i.i.d. draws from a small categorical distribution, so a
scoring run carries no information about what follows: any apparent
post-timeout recovery is regression to the mean unless a true effect is
injected with ``delta``.

With ``delta != 0`` a timeout shifts the caller's expected scoring margin by
``delta`` points per possession for the next ``lam`` possessions: on each of
the benefiting team's possessions in that span an extra point is added with
probability ``2 * |delta|``.  Possessions alternate, so the benefiting team
has exactly half of them and the margin moves by ``delta`` per possession on
average, which is also the true effect on the momentum-change outcome.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .pbp import AWAY, HOME, NEUTRAL, EventKind, PlayEvent, opponent, segment_games
from .stmc import check_lambda

QUARTERS = 4
QUARTER_SECONDS = 720.0


@dataclass(frozen=True)
class SimConfig:
    """Parameters of a synthetic season.

    ``official_marks`` are clock-remaining marks per quarter; if no timeout
    has been called in the stretch ending at a mark, the first break after
    it gets an official timeout.  ``pre_mark_boost`` adds call probability
    during the ``pre_mark_window`` seconds before a still-uncovered mark,
    ``quarter_weights`` scales call probability per quarter, and
    ``strength_sd`` draws a per-game home/away scoring imbalance.
    ``possessions_per_quarter`` counts each team's possessions, and the call
    policy compares the margin run over the last ``policy_window``
    possessions with ``theta``.
    """

    n_games: int = 100
    possessions_per_quarter: int = 24
    score_probs: tuple[float, float, float, float] = (0.52, 0.06, 0.34, 0.08)
    theta: int = -4
    pi0: float = 0.01
    pi1: float = 0.3
    official_marks: tuple[float, ...] = (419.0, 179.0)
    delta: float = 0.0
    lam: int = 4
    seed: int = 0
    policy_window: int = 3
    timeouts_per_half: int = 7
    strength_sd: float = 0.0
    pre_mark_boost: float = 0.0
    pre_mark_window: float = 60.0
    quarter_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)

    def __post_init__(self):
        probs = np.asarray(self.score_probs, dtype=float)
        if probs.shape != (4,) or np.any(probs < 0) or np.any(probs > 1) or abs(probs.sum() - 1) > 1e-9:
            raise ValueError("score_probs must be four probabilities summing to 1")
        for name in ("pi0", "pi1", "pre_mark_boost"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.pi0 > self.pi1:
            raise ValueError("pi0 must not exceed pi1")
        if abs(self.delta) > 0.5:
            raise ValueError("|delta| must be at most 0.5")
        if self.n_games < 0 or self.possessions_per_quarter < 1:
            raise ValueError("n_games must be >= 0 and possessions_per_quarter >= 1")
        if len(self.quarter_weights) != QUARTERS or min(self.quarter_weights) < 0:
            raise ValueError("quarter_weights needs four non-negative values")
        if self.strength_sd < 0:
            raise ValueError("strength_sd must be >= 0")
        check_lambda(self.lam)
        if self.policy_window < 1:
            raise ValueError("policy_window must be >= 1")


@dataclass
class SimTruth:
    true_te: float
    timeouts: list[dict] = field(default_factory=list)


def true_te(config: SimConfig) -> float:
    """The injected effect on the momentum-change outcome (points per possession)."""
    return float(config.delta)


def _cumulative(probs) -> np.ndarray:
    c = np.cumsum(probs)
    c[-1] = 1.0
    return c


def _draw_points(u, cumprobs: np.ndarray):
    return np.searchsorted(cumprobs, u, side="right")


def _bonus_hit(u, delta: float):
    return u < 2.0 * abs(delta)


def _game_probs(base: np.ndarray, strength: float) -> dict[str, np.ndarray]:
    """Shift mass between 0 and 2 points by +strength for home, -strength for away."""
    out = {}
    for side, sign in ((HOME, 1.0), (AWAY, -1.0)):
        p = base.copy()
        shift = float(np.clip(sign * strength, -p[2], p[0]))
        p[0] -= shift
        p[2] += shift
        out[side] = _cumulative(p)
    return out


class _Game:
    def __init__(self, config: SimConfig, index: int):
        self.cfg = config
        self.gid = f"sim{index:05d}"
        self.rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(index,)))
        strength = self.rng.normal(0.0, config.strength_sd) if config.strength_sd > 0 else 0.0
        self.cum = _game_probs(np.asarray(config.score_probs, dtype=float), strength)
        self.events: list[PlayEvent] = []
        self.margins: list[int] = []  # home-perspective margin after each instant
        self.pos_margins: list[int] = []  # same, possessions only
        self.score = {HOME: 0, AWAY: 0}
        self.boost = {HOME: 0, AWAY: 0}
        self.log: list[dict] = []

    def _ev(self, period, clock, kind, team, **kw):
        self.events.append(PlayEvent(self.gid, period, clock, kind, team, **kw))

    def _possession_events(self, q, clock, off, points, style):
        d = opponent(off)
        ev = self._ev
        if style[2] < 0.15:
            ev(q, clock, EventKind.SUBSTITUTION, d if style[3] < 0.5 else off)
        if points >= 2 and style[4] < 0.1:
            ev(q, clock, EventKind.SHOT_MISSED, off)
            ev(q, clock, EventKind.REBOUND, off, offensive=True)
        if points == 0:
            if style[0] < 0.25:
                ev(q, clock, EventKind.TURNOVER, off)
            else:
                ev(q, clock, EventKind.SHOT_MISSED, off)
                ev(q, clock, EventKind.REBOUND, d, offensive=False)
        elif points == 1:
            ev(q, clock, EventKind.FOUL, d)
            ev(q, clock, EventKind.FREE_THROW, off, made=False)
            ev(q, clock, EventKind.FREE_THROW, off, points=1, made=True, last_in_trip=True)
        elif points == 2:
            if style[0] < 0.8:
                ev(q, clock, EventKind.SHOT_MADE, off, points=2)
            else:
                ev(q, clock, EventKind.FOUL, d)
                ev(q, clock, EventKind.FREE_THROW, off, points=1, made=True, last_in_trip=False)
                ev(q, clock, EventKind.FREE_THROW, off, points=1, made=True, last_in_trip=True)
        else:
            # 3 points, or 4 with an injected extra point
            base = 3 if points == 4 or style[0] < 0.9 else 2
            ev(q, clock, EventKind.SHOT_MADE, off, points=base)
            if points - base == 1:
                ev(q, clock, EventKind.FOUL, d)
                ev(q, clock, EventKind.FREE_THROW, off, points=1, made=True, last_in_trip=True)

    def _run(self, side: str) -> int:
        """Margin change over the last ``policy_window`` possessions."""
        k = self.cfg.policy_window
        m = self.pos_margins
        last = m[-1] if m else 0
        base = m[-1 - k] if len(m) > k else 0
        value = last - base
        return value if side == HOME else -value

    def _add_timeout(self, q, clock, team, official):
        self._ev(q, clock, EventKind.TIMEOUT, team, official=official)
        self.margins.append(self.margins[-1] if self.margins else 0)
        self.log.append({"game_id": self.gid, "period": q, "clock": clock, "team": team,
                         "official": official, "instant": len(self.margins) - 1})

    def play(self) -> tuple[list[PlayEvent], list[dict]]:
        cfg = self.cfg
        n_pos = 2 * cfg.possessions_per_quarter
        marks = sorted(cfg.official_marks, reverse=True)
        budget = {(s, h): cfg.timeouts_per_half for s in (HOME, AWAY) for h in (0, 1)}
        for q in range(1, QUARTERS + 1):
            half = 0 if q <= 2 else 1
            ends = np.sort(self.rng.uniform(0.0, QUARTER_SECONDS, n_pos))
            clocks = np.round(QUARTER_SECONDS - ends, 1)
            draws = self.rng.random((n_pos, 10))
            first = HOME if q in (1, 4) else AWAY
            offense = [first if k % 2 == 0 else opponent(first) for k in range(n_pos)]
            home_off = np.array([o == HOME for o in offense])
            base_points = np.where(home_off, _draw_points(draws[:, 0], self.cum[HOME]),
                                   _draw_points(draws[:, 0], self.cum[AWAY])).tolist()
            clocks, draws = clocks.tolist(), draws.tolist()
            covered = [False] * len(marks)
            for k in range(n_pos):
                clock = clocks[k]
                u = draws[k]
                off = offense[k]
                points = base_points[k]
                for caller in (HOME, AWAY):
                    if self.boost[caller] > 0:
                        beneficiary = caller if cfg.delta > 0 else opponent(caller)
                        if off == beneficiary and _bonus_hit(u[1], cfg.delta):
                            points += 1
                        self.boost[caller] -= 1
                self._possession_events(q, clock, off, points, u[2:7])
                self.score[off] += points
                self.margins.append(self.score[HOME] - self.score[AWAY])
                self.pos_margins.append(self.margins[-1])
                if k == n_pos - 1:
                    break

                # timeout break
                pending = next((i for i, m in enumerate(marks) if not covered[i]), None)
                order = (HOME, AWAY) if u[7] < 0.5 else (AWAY, HOME)
                called = None
                for side, ud in zip(order, (u[8], u[9])):
                    if budget[(side, half)] <= 0:
                        continue
                    prob = cfg.pi1 if self._run(side) <= cfg.theta else cfg.pi0
                    if pending is not None and 0 < clock - marks[pending] <= cfg.pre_mark_window:
                        prob += cfg.pre_mark_boost
                    prob = min(1.0, prob * cfg.quarter_weights[q - 1])
                    if ud < prob:
                        called = side
                        break
                if called is not None:
                    budget[(called, half)] -= 1
                    self._add_timeout(q, clock, called, False)
                    if cfg.delta != 0:
                        self.boost[called] = cfg.lam
                    seg = next((i for i, m in enumerate(marks) if clock > m), None)
                    for i in range(len(marks)):
                        if not covered[i] and (i == seg or clock <= marks[i]):
                            covered[i] = True
                            break
                elif pending is not None and clock <= marks[pending]:
                    covered[pending] = True
                    self._add_timeout(q, clock, NEUTRAL, True)
            self._ev(q, 0.0, EventKind.PERIOD_END, NEUTRAL)
            self.margins.append(self.margins[-1])
            self.boost = {HOME: 0, AWAY: 0}
        return self.events, self.log


def generate(config: SimConfig) -> tuple[dict[str, list[PlayEvent]], SimTruth]:
    """Simulate ``config.n_games`` games.

    Returns per-game event lists in play-by-play order and the ground truth
    (injected effect plus every timeout called).  Each game draws from its
    own generator seeded by ``(seed, game index)``.
    """
    games: dict[str, list[PlayEvent]] = {}
    truth = SimTruth(true_te=true_te(config))
    for g in range(config.n_games):
        game = _Game(config, g)
        events, log = game.play()
        games[game.gid] = events
        truth.timeouts.extend(log)
    return games, truth


def simulate_instants(config: SimConfig):
    """Generate a season and segment it straight into game instants."""
    games, truth = generate(config)
    instants, _ = segment_games(games, strict=True)
    return instants, truth


def paired_counterfactual_te(config: SimConfig, n_rollouts: int = 1_000_000, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate of the timeout effect from paired rollouts.

    Every rollout starts from a random game state and plays the next
    ``lam`` possessions twice with common random numbers: once after a
    timeout by a random caller and once without it.  Both arms share the
    pre-window history, so the difference of their momentum-change outcomes
    is the difference of post-window rates.  Returns ``(mean, standard error)``.
    """
    lam = config.lam
    rng = np.random.default_rng(seed)
    base = np.asarray(config.score_probs, dtype=float)
    caller_home = rng.random(n_rollouts) < 0.5
    caller_first = rng.random(n_rollouts) < 0.5  # caller has the first post-window possession
    strength = rng.normal(0.0, config.strength_sd, n_rollouts) if config.strength_sd > 0 else np.zeros(n_rollouts)
    u_pts = rng.random((n_rollouts, lam))
    u_bonus = rng.random((n_rollouts, lam))

    # per-rollout cumulative probabilities for caller and opponent
    sign = np.where(caller_home, 1.0, -1.0)
    def cum_for(s):
        shift = np.clip(s, -base[2], base[0])
        p = np.tile(base, (n_rollouts, 1))
        p[:, 0] -= shift
        p[:, 2] += shift
        c = np.cumsum(p, axis=1)
        c[:, -1] = 1.0
        return c

    cum_caller = cum_for(sign * strength)
    cum_opp = cum_for(-sign * strength)

    margin_diff = np.zeros(n_rollouts)
    for k in range(lam):
        caller_on_offense = caller_first if k % 2 == 0 else ~caller_first
        cum = np.where(caller_on_offense[:, None], cum_caller, cum_opp)
        points = (u_pts[:, k][:, None] >= cum).sum(axis=1)
        beneficiary_on_offense = caller_on_offense if config.delta > 0 else ~caller_on_offense
        extra = _bonus_hit(u_bonus[:, k], config.delta) & beneficiary_on_offense
        sign_k = np.where(caller_on_offense, 1.0, -1.0)
        treated = points + extra
        margin_diff += sign_k * (treated - points)
    diffs = margin_diff / lam
    return float(diffs.mean()), float(diffs.std(ddof=1) / np.sqrt(n_rollouts))


def write_truth_json(config: SimConfig, path: str | Path) -> None:
    payload = {
        "delta": config.delta,
        "theta": config.theta,
        "pi0": config.pi0,
        "pi1": config.pi1,
        "n_games": config.n_games,
        "seed": config.seed,
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def config_dict(config: SimConfig) -> dict:
    return asdict(config)
