"""Play-by-play ingestion and segmentation into game instants.

A game is modelled as a discrete sequence of *game instants*: every ball
possession plus every major interruption (team timeout, official timeout,
end of period).  Substitutions, fouls, jump balls and other bookkeeping rows
never create an instant.

The input is a flat CSV with one row per play event::

    game_id,period,clock_remaining_s,event_kind,points,team,official,raw_text

and the segmented output is written as::

    game_id,t,kind,caller,official,quarter,seconds_elapsed,margin_home

where ``caller`` holds the offensive side for possession instants, the
calling side for timeouts and is blank for period ends.
"""
from __future__ import annotations

import csv
import io
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator, Mapping, Sequence

import numpy as np

PBP_COLUMNS = (
    "game_id",
    "period",
    "clock_remaining_s",
    "event_kind",
    "points",
    "team",
    "official",
    "raw_text",
)
INSTANT_COLUMNS = (
    "game_id",
    "t",
    "kind",
    "caller",
    "official",
    "quarter",
    "seconds_elapsed",
    "margin_home",
)

REGULATION_PERIODS = 4
REGULATION_LENGTH = 720.0
OVERTIME_LENGTH = 300.0
MAX_POSSESSION_SWING = 4

HOME, AWAY, NEUTRAL = "home", "away", "neutral"
SIDES = (HOME, AWAY)


class PbpError(ValueError):
    """Base class for ingestion failures."""


class SchemaError(PbpError):
    """The CSV header is missing a required column."""

    def __init__(self, column: str):
        super().__init__(f"missing required column: {column}")
        self.column = column


class RowError(PbpError):
    """A single row could not be parsed."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class IntegrityError(PbpError):
    """A game's event stream is internally inconsistent."""

    def __init__(self, game_id: str, message: str):
        super().__init__(f"game {game_id}: {message}")
        self.game_id = game_id


class EventKind(str, Enum):
    SHOT_MADE = "shot_made"
    SHOT_MISSED = "shot_missed"
    FREE_THROW = "free_throw"
    REBOUND = "rebound"
    TURNOVER = "turnover"
    FOUL = "foul"
    SUBSTITUTION = "substitution"
    TIMEOUT = "timeout"
    PERIOD_END = "period_end"
    OTHER = "other"


class InstantKind(str, Enum):
    POSSESSION = "possession"
    TIMEOUT = "timeout"
    PERIOD_END = "period_end"


def period_length(period: int) -> float:
    return REGULATION_LENGTH if period <= REGULATION_PERIODS else OVERTIME_LENGTH


def opponent(side: str) -> str:
    return AWAY if side == HOME else HOME


@dataclass(slots=True)
class PlayEvent:
    """One play-by-play row.

    ``points`` is set for made shots and made free throws.  ``made`` and
    ``last_in_trip`` qualify free throws (``last_in_trip`` is ``None`` for
    misses, whose position in the trip the schema does not record),
    ``offensive`` qualifies rebounds and ``official`` qualifies timeouts.
    """

    game_id: str
    period: int
    clock_remaining: float
    kind: EventKind
    team: str
    points: int | None = None
    made: bool | None = None
    last_in_trip: bool | None = None
    offensive: bool | None = None
    official: bool | None = None
    raw_text: str = ""
    line: int | None = None

    @property
    def csv_kind(self) -> str:
        if self.kind is EventKind.FREE_THROW:
            if not self.made:
                return "free_throw_missed"
            return "free_throw_made_last" if self.last_in_trip else "free_throw_made"
        if self.kind is EventKind.REBOUND:
            return "rebound_off" if self.offensive else "rebound_def"
        return self.kind.value


@dataclass(slots=True)
class GameInstant:
    game_id: str
    t: int
    kind: InstantKind
    quarter: int
    seconds_elapsed: float
    margin_home: int
    team: str | None = None  # offense for possessions, caller for timeouts
    official: bool = False

    @property
    def is_interruption(self) -> bool:
        return self.kind is not InstantKind.POSSESSION


# CSV event_kind -> (kind, extra fields)
_KIND_TABLE: dict[str, tuple[EventKind, dict]] = {
    "shot_made": (EventKind.SHOT_MADE, {}),
    "shot_missed": (EventKind.SHOT_MISSED, {}),
    "free_throw_made": (EventKind.FREE_THROW, {"made": True, "last_in_trip": False}),
    "free_throw_made_last": (EventKind.FREE_THROW, {"made": True, "last_in_trip": True}),
    "free_throw_missed": (EventKind.FREE_THROW, {"made": False}),
    "rebound_off": (EventKind.REBOUND, {"offensive": True}),
    "rebound_def": (EventKind.REBOUND, {"offensive": False}),
    "turnover": (EventKind.TURNOVER, {}),
    "foul": (EventKind.FOUL, {}),
    "substitution": (EventKind.SUBSTITUTION, {}),
    "timeout": (EventKind.TIMEOUT, {}),
    "period_end": (EventKind.PERIOD_END, {}),
    "other": (EventKind.OTHER, {}),
}


def _parse_row(row: Mapping[str, str], line: int) -> PlayEvent:
    try:
        period = int(row["period"])
    except (TypeError, ValueError):
        raise RowError(line, f"non-numeric period {row['period']!r}") from None
    try:
        clock = float(row["clock_remaining_s"])
    except (TypeError, ValueError):
        raise RowError(line, f"non-numeric clock {row['clock_remaining_s']!r}") from None
    if period < 1:
        raise RowError(line, f"period must be >= 1, got {period}")
    if not np.isfinite(clock) or clock < 0 or clock > period_length(period):
        raise RowError(line, f"clock {clock} out of range for period {period}")

    kind_text = (row["event_kind"] or "").strip()
    kind, extra = _KIND_TABLE.get(kind_text, (EventKind.OTHER, {}))
    team = (row["team"] or "").strip().lower() or NEUTRAL
    if team not in (HOME, AWAY, NEUTRAL):
        raise RowError(line, f"unknown team {team!r}")

    points_text = (row["points"] or "").strip()
    points = None
    if points_text:
        try:
            points = int(points_text)
        except ValueError:
            raise RowError(line, f"non-integer points {points_text!r}") from None
    if kind is EventKind.SHOT_MADE and points is None:
        raise RowError(line, "shot_made requires points")
    if kind is EventKind.FREE_THROW and extra["made"] and points is None:
        points = 1

    official = None
    if kind is EventKind.TIMEOUT:
        official_text = (row["official"] or "").strip()
        if official_text not in ("", "0", "1"):
            raise RowError(line, f"official must be 0 or 1, got {official_text!r}")
        official = official_text == "1"

    return PlayEvent(
        game_id=row["game_id"],
        period=period,
        clock_remaining=clock,
        kind=kind,
        team=team,
        points=points,
        official=official,
        raw_text=row.get("raw_text") or "",
        line=line,
        **extra,
    )


def parse_pbp(source: str | Path | IO[str] | IO[bytes] | bytes) -> dict[str, list[PlayEvent]]:
    """Parse a play-by-play CSV into per-game event lists.

    Events are grouped by ``game_id`` (in order of first appearance) and
    sorted by period, then clock descending, then input order.

    Raises
    ------
    SchemaError
        If a required column is missing from the header.
    RowError
        If a row has a malformed period, clock, points or team.
    """
    if isinstance(source, bytes):
        handle: IO[str] = io.StringIO(source.decode("utf-8"))
    elif isinstance(source, (str, Path)):
        handle = open(source, newline="", encoding="utf-8")
    elif isinstance(source, io.TextIOBase):
        handle = source
    else:
        handle = io.TextIOWrapper(source, encoding="utf-8", newline="")
    try:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        for column in PBP_COLUMNS:
            if column not in header:
                raise SchemaError(column)
        games: dict[str, list[PlayEvent]] = defaultdict(list)
        # line 1 is the header
        for line, row in enumerate(reader, start=2):
            event = _parse_row(row, line)
            games[event.game_id].append(event)
    finally:
        if isinstance(source, (str, Path)):
            handle.close()

    return {gid: sort_events(events) for gid, events in games.items()}


def sort_events(events: Iterable[PlayEvent]) -> list[PlayEvent]:
    indexed = list(enumerate(events))
    indexed.sort(key=lambda pair: (pair[1].period, -pair[1].clock_remaining, pair[0]))
    return [event for _, event in indexed]


def fmt_real(value: float) -> str:
    """Compact, round-trippable text for clock-like reals."""
    value = round(float(value), 6)
    return str(int(value)) if value.is_integer() else repr(value)


def write_pbp_csv(games: Mapping[str, Sequence[PlayEvent]], dest: str | Path | IO[str]) -> None:
    """Write events in the canonical play-by-play schema."""
    own = isinstance(dest, (str, Path))
    handle = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(PBP_COLUMNS)
        for gid, events in games.items():
            for ev in events:
                writer.writerow(
                    [
                        gid,
                        ev.period,
                        fmt_real(ev.clock_remaining),
                        ev.csv_kind,
                        "" if ev.points is None else ev.points,
                        ev.team,
                        "" if ev.official is None else int(ev.official),
                        ev.raw_text,
                    ]
                )
    finally:
        if own:
            handle.close()


class _Segmenter:
    """Stateful walk over one game's events."""

    def __init__(self, game_id: str):
        self.game_id = game_id
        self.instants: list[GameInstant] = []
        self.score = {HOME: 0, AWAY: 0}
        self.offense: str | None = None
        # a made field goal ends the possession, but an and-one free throw
        # by the same team still belongs to it
        self.fg_pending = False
        self.end_period = 1
        self.end_clock = REGULATION_LENGTH
        # side whose made-FG possession was flushed by an interruption
        self.interrupted_scorer: str | None = None

    @property
    def margin(self) -> int:
        return self.score[HOME] - self.score[AWAY]

    @property
    def last_margin(self) -> int:
        return self.instants[-1].margin_home if self.instants else 0

    def _emit(self, kind: InstantKind, period: int, clock: float, margin: int,
              team: str | None = None, official: bool = False) -> None:
        self.instants.append(
            GameInstant(
                game_id=self.game_id,
                t=len(self.instants),
                kind=kind,
                quarter=period,
                # clocks carry at most microsecond precision
                seconds_elapsed=round(period_length(period) - clock, 6),
                margin_home=margin,
                team=team,
                official=official,
            )
        )

    def _touch(self, ev: PlayEvent) -> None:
        self.end_period = ev.period
        self.end_clock = ev.clock_remaining

    def flush(self) -> None:
        """Close the open possession, if any, as a possession instant."""
        if self.offense is None:
            return
        swing = abs(self.margin - self.last_margin)
        if swing > MAX_POSSESSION_SWING:
            raise IntegrityError(
                self.game_id,
                f"possession ending period {self.end_period} clock {self.end_clock:g} "
                f"moves the margin by {swing} (> {MAX_POSSESSION_SWING})",
            )
        self._emit(InstantKind.POSSESSION, self.end_period, self.end_clock,
                   self.margin, team=self.offense)
        self.offense = None
        self.fg_pending = False

    def _open(self, team: str, ev: PlayEvent) -> None:
        """Make ``team`` the offense, closing a possession of the other side."""
        if self.interrupted_scorer == team and ev.kind is EventKind.FREE_THROW:
            raise IntegrityError(
                self.game_id,
                f"free throw at line {ev.line} follows an interruption after the "
                f"same team's made field goal (and-one straddling a timeout)",
            )
        self.interrupted_scorer = None
        if self.offense is not None and self.offense != team:
            self.flush()
        self.offense = team

    def _score(self, team: str, points: int, ev: PlayEvent) -> None:
        if points < 0 or points > 3:
            raise IntegrityError(
                self.game_id, f"line {ev.line}: score decreasing or invalid points {points}"
            )
        self.score[team] += points

    def feed(self, ev: PlayEvent) -> None:
        kind, team = ev.kind, ev.team
        if kind in (EventKind.FOUL, EventKind.SUBSTITUTION, EventKind.OTHER):
            return
        if kind is EventKind.PERIOD_END:
            self.flush()
            self.interrupted_scorer = None
            self._emit(InstantKind.PERIOD_END, ev.period, ev.clock_remaining, self.margin)
            return
        if kind is EventKind.TIMEOUT:
            if self.fg_pending:
                self.interrupted_scorer = self.offense
                self.flush()
            caller = team if team in SIDES else None
            # a timeout inside a live possession scores nothing; the open
            # possession's points are credited when it closes
            self._emit(InstantKind.TIMEOUT, ev.period, ev.clock_remaining,
                       self.last_margin, team=caller, official=bool(ev.official))
            return
        if team not in SIDES:
            return

        if kind is EventKind.FREE_THROW:
            if self.fg_pending and self.offense == team:
                # and-one
                self.fg_pending = False
            elif self.offense is not None and self.offense != team and not self.fg_pending:
                # technical free throw during the opponent's possession
                if ev.made:
                    self._score(team, ev.points or 1, ev)
                return
            else:
                if self.fg_pending:
                    self.flush()
                self._open(team, ev)
            self._touch(ev)
            if ev.made:
                self._score(team, ev.points or 1, ev)
                if ev.last_in_trip:
                    self.flush()
            return

        if self.fg_pending:
            self.flush()

        if kind is EventKind.SHOT_MADE:
            self._open(team, ev)
            self._touch(ev)
            self._score(team, ev.points or 0, ev)
            self.fg_pending = True
        elif kind is EventKind.SHOT_MISSED:
            self._open(team, ev)
            self._touch(ev)
        elif kind is EventKind.REBOUND:
            if ev.offensive:
                self._open(team, ev)
                self._touch(ev)
            elif self.offense is not None:
                self.flush()
        elif kind is EventKind.TURNOVER:
            self._open(team, ev)
            self._touch(ev)
            self.flush()

    def finish(self) -> list[GameInstant]:
        if not any(i.kind is InstantKind.PERIOD_END for i in self.instants):
            raise IntegrityError(self.game_id, "no period_end event")
        if self.offense is not None:
            raise IntegrityError(self.game_id, "possession still open after the final period_end")
        return self.instants


def segment_instants(events: Sequence[PlayEvent]) -> list[GameInstant]:
    """Turn one game's ordered events into its sequence of game instants.

    A possession ends on a made field goal (plus any and-one free throw),
    the made last free throw of a trip, a defensive rebound, a turnover or
    the end of the period.  Offensive rebounds and non-final free throws
    keep it alive.

    Raises
    ------
    IntegrityError
        If the game has no period end, a possession swings the margin by
        more than four points, points are negative, or an and-one free throw
        is separated from its field goal by a timeout.
    """
    if not events:
        raise IntegrityError("?", "no events")
    seg = _Segmenter(events[0].game_id)
    for ev in events:
        seg.feed(ev)
    return seg.finish()


def segment_games(
    games: Mapping[str, Sequence[PlayEvent]], *, strict: bool = True
) -> tuple[dict[str, list[GameInstant]], dict[str, str]]:
    """Segment every game.  With ``strict=False`` broken games are skipped
    and returned in the second dict as ``game_id -> error message``."""
    out: dict[str, list[GameInstant]] = {}
    failed: dict[str, str] = {}
    for gid, events in games.items():
        try:
            out[gid] = segment_instants(events)
        except IntegrityError as exc:
            if strict:
                raise
            failed[gid] = str(exc)
    return out, failed


def margin_series(instants: Sequence[GameInstant], side: str) -> np.ndarray:
    """Scoring margin ``P_t`` from the perspective of ``side``."""
    margins = np.fromiter((i.margin_home for i in instants), dtype=np.int64, count=len(instants))
    return margins if side == HOME else -margins


def write_instants_csv(games: Mapping[str, Sequence[GameInstant]], dest: str | Path | IO[str]) -> None:
    own = isinstance(dest, (str, Path))
    handle = open(dest, "w", newline="", encoding="utf-8") if own else dest
    try:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(INSTANT_COLUMNS)
        for gid, instants in games.items():
            for ins in instants:
                writer.writerow(
                    [
                        gid,
                        ins.t,
                        ins.kind.value,
                        ins.team or "",
                        int(ins.official) if ins.kind is InstantKind.TIMEOUT else "",
                        ins.quarter,
                        fmt_real(ins.seconds_elapsed),
                        ins.margin_home,
                    ]
                )
    finally:
        if own:
            handle.close()


def read_instants_csv(source: str | Path | IO[str]) -> dict[str, list[GameInstant]]:
    """Read an instants CSV back into per-game instant lists."""
    own = isinstance(source, (str, Path))
    handle = open(source, newline="", encoding="utf-8") if own else source
    try:
        reader = csv.DictReader(handle)
        for column in INSTANT_COLUMNS:
            if column not in (reader.fieldnames or []):
                raise SchemaError(column)
        games: dict[str, list[GameInstant]] = defaultdict(list)
        for line, row in enumerate(reader, start=2):
            try:
                kind = InstantKind(row["kind"])
                ins = GameInstant(
                    game_id=row["game_id"],
                    t=int(row["t"]),
                    kind=kind,
                    quarter=int(row["quarter"]),
                    seconds_elapsed=float(row["seconds_elapsed"]),
                    margin_home=int(row["margin_home"]),
                    team=row["caller"] or None,
                    official=row["official"] == "1",
                )
            except ValueError as exc:
                raise RowError(line, str(exc)) from None
            games[ins.game_id].append(ins)
    finally:
        if own:
            handle.close()
    for gid, instants in games.items():
        instants.sort(key=lambda i: i.t)
        if [i.t for i in instants] != list(range(len(instants))):
            raise IntegrityError(gid, "instant indices are not consecutive from 0")
    return dict(games)


def iter_instants(games: Mapping[str, Sequence[GameInstant]]) -> Iterator[GameInstant]:
    for instants in games.values():
        yield from instants
