"""Race-log data model, (de)serialization and mass-start scoring.

A race log records every skater crossing every boundary of the oval.  Lap ``L``
has boundaries ``1 .. B-1`` inside the lap followed by boundary ``0`` (the
finish line), which completes lap ``L``.  The crossing ``(n_laps, 0)`` is
therefore the finish of the race.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable, Mapping, Sequence

import numpy as np

OFFENCE = "offence"
FINISH_POINTS = (60, 40, 20)
PREMIUM_POINTS = (5, 3, 1)
PREMIUM_LAPS = (4, 8, 12)
EVENT_COLUMNS = ("race_id", "skater_id", "lap", "boundary", "time", "observed")
RANK_COLUMNS = ("race_id", "skater_id", "finish_rank", "points", "final_rank")


class RaceLogError(ValueError):
    """Raised for malformed or inconsistent race logs."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class RaceMeta:
    race_id: str
    n_skaters: int
    sex: str | None = None
    n_laps: int = 16
    track_length: float = 400.0
    boundaries_per_lap: int = 4
    provenance: Mapping[str, object] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.sex not in (None, "men", "women"):
            raise RaceLogError(f"sex must be 'men' or 'women', got {self.sex!r}")
        if self.n_laps < 1 or self.boundaries_per_lap < 1:
            raise RaceLogError("n_laps and boundaries_per_lap must be >= 1")
        if not self.track_length > 0:
            raise RaceLogError("track_length must be positive")
        if not 2 <= self.n_skaters <= 24:
            raise RaceLogError(f"n_skaters must be in [2, 24], got {self.n_skaters}")

    def to_dict(self) -> dict:
        out = {
            "race_id": self.race_id,
            "sex": self.sex,
            "n_laps": self.n_laps,
            "track_length": self.track_length,
            "boundaries_per_lap": self.boundaries_per_lap,
            "n_skaters": self.n_skaters,
        }
        if self.provenance:
            out["provenance"] = dict(self.provenance)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "RaceMeta":
        return cls(
            race_id=str(d["race_id"]),
            sex=d.get("sex"),
            n_laps=int(d.get("n_laps", 16)),
            track_length=float(d.get("track_length", 400.0)),
            boundaries_per_lap=int(d.get("boundaries_per_lap", 4)),
            n_skaters=int(d["n_skaters"]),
            provenance=dict(d.get("provenance", {})),
        )


@dataclass(frozen=True)
class PassageEvent:
    skater_id: str
    lap: int
    boundary: int
    time: float
    observed: bool = True


@dataclass(frozen=True)
class RaceLog:
    meta: RaceMeta
    events: tuple[PassageEvent, ...]
    disqualifications: tuple[tuple[str, float | str], ...] = ()

    def __post_init__(self) -> None:
        events = tuple(sorted(self.events, key=lambda e: (e.time, e.skater_id, e.lap, e.boundary)))
        object.__setattr__(self, "events", events)
        object.__setattr__(
            self,
            "disqualifications",
            tuple((str(s), t if t == OFFENCE else float(t)) for s, t in self.disqualifications),
        )
        validate(self)

    @property
    def skaters(self) -> tuple[str, ...]:
        return tuple(sorted({e.skater_id for e in self.events}))

    @property
    def disqualified(self) -> frozenset[str]:
        return frozenset(s for s, _ in self.disqualifications)

    def progress(self, lap: int, boundary: int) -> int:
        """Ordinal of a crossing along the race, 1 for (lap 1, boundary 1)."""
        return progress_index(lap, boundary, self.meta.boundaries_per_lap)

    def crossing(self, lap: int, boundary: int) -> dict[str, PassageEvent]:
        return dict(self._crossing_sets.get((lap, boundary), {}))

    def by_skater(self) -> dict[str, list[PassageEvent]]:
        """Events per skater, in race order."""
        return {s: list(evs) for s, evs in self._by_skater.items()}

    def crossing_sets(self) -> dict[tuple[int, int], dict[str, PassageEvent]]:
        return {k: dict(v) for k, v in self._crossing_sets.items()}

    @cached_property
    def _by_skater(self) -> dict[str, tuple[PassageEvent, ...]]:
        bpl = self.meta.boundaries_per_lap
        out: dict[str, list[PassageEvent]] = {}
        for e in self.events:
            out.setdefault(e.skater_id, []).append(e)
        return {
            s: tuple(sorted(evs, key=lambda e: progress_index(e.lap, e.boundary, bpl)))
            for s, evs in out.items()
        }

    @cached_property
    def _crossing_sets(self) -> dict[tuple[int, int], dict[str, PassageEvent]]:
        out: dict[tuple[int, int], dict[str, PassageEvent]] = {}
        for e in self.events:
            out.setdefault((e.lap, e.boundary), {})[e.skater_id] = e
        return out

    def replace_events(self, events: Iterable[PassageEvent]) -> "RaceLog":
        return RaceLog(self.meta, tuple(events), self.disqualifications)


def progress_index(lap: int, boundary: int, boundaries_per_lap: int) -> int:
    b = boundary if boundary > 0 else boundaries_per_lap
    return (lap - 1) * boundaries_per_lap + b


def position_of(progress: int, boundaries_per_lap: int) -> tuple[int, int]:
    """Inverse of :func:`progress_index`."""
    lap, b = divmod(progress - 1, boundaries_per_lap)
    b += 1
    if b == boundaries_per_lap:
        return lap + 1, 0
    return lap + 1, b


def validate(log: RaceLog) -> None:
    meta = log.meta
    bpl = meta.boundaries_per_lap
    seen: set[tuple[str, int, int]] = set()
    for e in log.events:
        if not 1 <= e.lap <= meta.n_laps:
            raise RaceLogError(f"lap {e.lap} out of range for skater {e.skater_id}")
        if not 0 <= e.boundary < bpl:
            raise RaceLogError(f"boundary {e.boundary} out of range for skater {e.skater_id}")
        if not (e.time >= 0 and np.isfinite(e.time)):
            raise RaceLogError(f"invalid time {e.time} for skater {e.skater_id}")
        key = (e.skater_id, e.lap, e.boundary)
        if key in seen:
            raise RaceLogError(f"duplicate event {key}")
        seen.add(key)

    roster = {e.skater_id for e in log.events}
    if len(roster) != meta.n_skaters:
        raise RaceLogError(f"meta declares {meta.n_skaters} skaters but events name {len(roster)}")

    for skater, evs in log.by_skater().items():
        for a, b in zip(evs, evs[1:]):
            if not b.time > a.time:
                raise RaceLogError(
                    f"non-monotone times for skater {skater} at lap {b.lap} boundary {b.boundary}"
                )

    dq_ids = set()
    for skater, when in log.disqualifications:
        if skater not in roster:
            raise RaceLogError(f"unknown skater_id {skater!r} in disqualifications")
        if skater in dq_ids:
            raise RaceLogError(f"skater {skater!r} disqualified twice")
        if when != OFFENCE and not (isinstance(when, float) and when >= 0):
            raise RaceLogError(f"invalid overtaken time {when!r} for {skater!r}")
        dq_ids.add(skater)

    finish = log.crossing(meta.n_laps, 0)
    for skater in roster - dq_ids:
        if skater not in finish:
            raise RaceLogError(f"skater {skater} has no finish crossing and is not disqualified")


# --------------------------------------------------------------------------- #
# Serialization


def format_time(t: float) -> str:
    return np.format_float_positional(t, unique=True, min_digits=3, trim="k")


def _dq_to_json(dqs: Sequence[tuple[str, float | str]]) -> list:
    return [[s, t] for s, t in dqs]


def _dq_from_json(raw, line: int | None) -> list[tuple[str, float | str]]:
    out = []
    try:
        for s, t in raw:
            out.append((str(s), OFFENCE if t == OFFENCE else float(t)))
    except (TypeError, ValueError) as exc:
        raise RaceLogError(f"malformed disqualification list: {exc}", line) from exc
    return out


def serialize_race_log(log: RaceLog, fmt: str = "csv") -> bytes:
    """Serialize in race order; ``parse_race_log`` inverts this exactly."""
    rid = log.meta.race_id
    order = log.events
    if fmt == "csv":
        buf = io.StringIO()
        buf.write("# meta: " + json.dumps(log.meta.to_dict(), sort_keys=True) + "\n")
        buf.write("# dq: " + json.dumps(_dq_to_json(log.disqualifications)) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for e in order:
            w.writerow([rid, e.skater_id, e.lap, e.boundary, format_time(e.time), int(e.observed)])
        return buf.getvalue().encode("utf-8")
    if fmt in ("jsonl", "json-lines"):
        lines = [json.dumps({"meta": log.meta.to_dict()}, sort_keys=True)]
        for e in order:
            lines.append(
                '{"race_id": %s, "skater_id": %s, "lap": %d, "boundary": %d, "time": %s, "observed": %s}'
                % (
                    json.dumps(rid),
                    json.dumps(e.skater_id),
                    e.lap,
                    e.boundary,
                    format_time(e.time),
                    "true" if e.observed else "false",
                )
            )
        lines.append(json.dumps({"dq": _dq_to_json(log.disqualifications)}))
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise ValueError(f"unknown format {fmt!r}")


def _parse_bool(raw: str, line: int) -> bool:
    if raw in ("1", "true", "True"):
        return True
    if raw in ("0", "false", "False"):
        return False
    raise RaceLogError(f"observed must be 0 or 1, got {raw!r}", line)


def _infer_meta(race_id: str, events: list[PassageEvent]) -> RaceMeta:
    return RaceMeta(
        race_id=race_id,
        n_skaters=len({e.skater_id for e in events}),
        n_laps=max(e.lap for e in events),
        boundaries_per_lap=max(e.boundary for e in events) + 1,
    )


def _parse_csv(text: str) -> RaceLog:
    meta_raw = None
    dq: list = []
    body: list[tuple[int, str]] = []
    for i, line in enumerate(text.splitlines(), start=1):
        if line.startswith("#"):
            tag, _, payload = line[1:].strip().partition(":")
            try:
                if tag.strip() == "meta":
                    meta_raw = json.loads(payload)
                elif tag.strip() == "dq":
                    dq = _dq_from_json(json.loads(payload), i)
            except json.JSONDecodeError as exc:
                raise RaceLogError(f"bad {tag.strip()} comment: {exc}", i) from exc
        elif line.strip():
            body.append((i, line))
    if not body:
        raise RaceLogError("missing CSV header")
    header_line, header = body[0]
    cols = next(csv.reader([header]))
    if tuple(cols) != EVENT_COLUMNS:
        raise RaceLogError(f"expected header {','.join(EVENT_COLUMNS)}", header_line)

    events = []
    race_ids = set()
    for i, line in body[1:]:
        row = next(csv.reader([line]))
        if len(row) != len(EVENT_COLUMNS):
            raise RaceLogError(f"expected {len(EVENT_COLUMNS)} fields, got {len(row)}", i)
        rid, sid, lap, boundary, t, obs = row
        try:
            events.append(PassageEvent(sid, int(lap), int(boundary), float(t), _parse_bool(obs, i)))
        except ValueError as exc:
            raise RaceLogError(str(exc), i) from exc
        race_ids.add(rid)
    if len(race_ids) > 1:
        raise RaceLogError(f"multiple race ids in one log: {sorted(race_ids)}")
    if not events:
        raise RaceLogError("log has no events")
    rid = race_ids.pop()
    meta = RaceMeta.from_dict(meta_raw) if meta_raw else _infer_meta(rid, events)
    if meta.race_id != rid:
        raise RaceLogError(f"race id {rid!r} in events differs from meta {meta.race_id!r}")
    return _checked(meta, events, dq)


def _parse_jsonl(text: str) -> RaceLog:
    meta_raw = None
    dq: list = []
    events = []
    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RaceLogError(f"invalid JSON: {exc.msg}", i) from exc
        if not isinstance(obj, dict):
            raise RaceLogError("expected a JSON object", i)
        if "meta" in obj:
            meta_raw = obj["meta"]
        elif "dq" in obj:
            dq = _dq_from_json(obj["dq"], i)
        else:
            try:
                events.append(
                    PassageEvent(
                        str(obj["skater_id"]),
                        int(obj["lap"]),
                        int(obj["boundary"]),
                        float(obj["time"]),
                        bool(obj.get("observed", True)),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise RaceLogError(f"malformed event record: {exc!r}", i) from exc
    if meta_raw is None:
        raise RaceLogError("missing leading meta object")
    if not events:
        raise RaceLogError("log has no events")
    return _checked(RaceMeta.from_dict(meta_raw), events, dq)


def _checked(meta: RaceMeta, events, dq) -> RaceLog:
    try:
        return RaceLog(meta, tuple(events), tuple(dq))
    except KeyError as exc:
        raise RaceLogError(f"missing field {exc}") from exc


def parse_race_log(data: bytes | str | IO, fmt: str = "csv") -> RaceLog:
    """Parse and validate a race log; raises :class:`RaceLogError` on any defect."""
    if hasattr(data, "read"):
        data = data.read()
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    if fmt == "csv":
        return _parse_csv(text)
    if fmt in ("jsonl", "json-lines"):
        return _parse_jsonl(text)
    raise ValueError(f"unknown format {fmt!r}")


# --------------------------------------------------------------------------- #
# Ranks and points


@dataclass(frozen=True)
class RankEntry:
    finish_rank: int
    points: float = 0.0
    final_rank: int | None = None


RankTable = dict[str, RankEntry]


def assign_finish_ranks(log: RaceLog) -> RankTable:
    """Finishers by finish time, then lapped skaters (overtaken later ranks better),
    then offence disqualifications in the order they were recorded."""
    meta = log.meta
    finish = log.crossing(meta.n_laps, 0)
    dq = dict(log.disqualifications)
    finishers = [s for s in log.skaters if s not in dq]
    missing = [s for s in finishers if s not in finish]
    if missing:
        raise RaceLogError(f"missing final crossing for {missing}")
    order = sorted(finishers, key=lambda s: (finish[s].time, s))
    lapped = [s for s, t in log.disqualifications if t != OFFENCE]
    order += sorted(lapped, key=lambda s: (-dq[s], s))
    order += [s for s, t in log.disqualifications if t == OFFENCE]
    return {s: RankEntry(finish_rank=i) for i, s in enumerate(order, start=1)}


def premium_laps(n_laps: int) -> tuple[int, ...]:
    return tuple(lap for lap in PREMIUM_LAPS if lap < n_laps)


def score_race(log: RaceLog, ranks: RankTable) -> RankTable:
    """Add points and final ranks to a finish-rank table."""
    points = {s: 0.0 for s in ranks}
    for s, entry in ranks.items():
        if entry.finish_rank <= len(FINISH_POINTS):
            points[s] += FINISH_POINTS[entry.finish_rank - 1]
    for lap in premium_laps(log.meta.n_laps):
        crossing = log.crossing(lap, 0)
        leaders = sorted(crossing.values(), key=lambda e: (e.time, e.skater_id))
        for e, pts in zip(leaders, PREMIUM_POINTS):
            points[e.skater_id] += pts
    order = sorted(ranks, key=lambda s: (-points[s], ranks[s].finish_rank))
    return {
        s: RankEntry(ranks[s].finish_rank, points[s], final)
        for final, s in enumerate(order, start=1)
    }


def rank_race(log: RaceLog) -> RankTable:
    return score_race(log, assign_finish_ranks(log))


def normalize_rank(rank: float, n_skaters: int) -> float:
    if n_skaters < 1 or not 1 <= rank <= n_skaters:
        raise ValueError(f"rank {rank} outside 1..{n_skaters}")
    return rank / n_skaters


def write_rank_csv(tables: Mapping[str, RankTable], fh: IO[str]) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(RANK_COLUMNS)
    for race_id, table in tables.items():
        for s in sorted(table, key=lambda s: table[s].finish_rank):
            e = table[s]
            w.writerow([race_id, s, e.finish_rank, f"{e.points:g}", e.final_rank])
