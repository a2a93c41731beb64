"""Exposed time, intermediate ranks, checker reconciliation and race classification.

Shelter is decided from boundary timestamps alone: a skater is sheltered at a
boundary when another skater crossed it no more than ``gap_threshold`` seconds
earlier.  Everything here is a pure function of an immutable :class:`RaceLog`.
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass
from typing import IO, Iterable, Mapping, Sequence

from .racelog import (
    PassageEvent,
    RaceLog,
    RaceLogError,
    normalize_rank,
    position_of,
    progress_index,
    rank_race,
)

# Absorbs float noise in differences of millisecond timestamps, so a gap written
# as exactly 0.200 s is treated as equal to the threshold.
TIME_EPS = 1e-9

METRIC_COLUMNS = (
    "race_id",
    "skater_id",
    "tau",
    "imputed_fraction",
    "rank_L3",
    "rank_L2",
    "rank_L1",
    "finish_rank",
    "norm_finish_rank",
    "breakaway",
)


@dataclass(frozen=True)
class DraftingParams:
    gap_threshold: float = 0.2
    equivalent_distance: float = 2.5
    # "nearest": sheltered if the closest earlier crosser is within the threshold.
    # "group_head": additionally require the head of the drafting chain within it.
    shelter_rule: str = "nearest"

    def __post_init__(self) -> None:
        if not self.gap_threshold > 0:
            raise ValueError("gap_threshold must be positive")
        if self.shelter_rule not in ("nearest", "group_head"):
            raise ValueError(f"unknown shelter_rule {self.shelter_rule!r}")


@dataclass(frozen=True)
class AnalysisWindow:
    start: float
    end: float

    def __post_init__(self) -> None:
        if not self.end > self.start:
            raise ValueError(f"window end {self.end} must exceed start {self.start}")

    @property
    def length(self) -> float:
        return self.end - self.start


@dataclass(frozen=True)
class ExposureSummary:
    skater_id: str
    tau: float
    window: AnalysisWindow
    imputed_fraction: float
    sheltered: float = 0.0


@dataclass(frozen=True)
class Segment:
    start: float
    end: float
    exposed: bool
    imputed: bool


def _first_crossing(log: RaceLog, lap: int, boundary: int) -> float:
    crossing = log.crossing(lap, boundary)
    if not crossing:
        raise RaceLogError(f"no crossings at lap {lap} boundary {boundary}")
    return min(e.time for e in crossing.values())


def lap_completed(log: RaceLog, laps_to_go: int) -> int:
    lap = log.meta.n_laps - laps_to_go
    if lap < 1:
        raise RaceLogError(f"race of {log.meta.n_laps} laps has no point {laps_to_go} laps to go")
    return lap


def analysis_window(log: RaceLog, from_laps_to_go: int = 3, to_laps_to_go: int = 1) -> AnalysisWindow:
    """From the leader entering the last ``from_laps_to_go`` laps to the leader
    entering the last ``to_laps_to_go`` laps."""
    start = _first_crossing(log, lap_completed(log, from_laps_to_go), 0)
    end = _first_crossing(log, lap_completed(log, to_laps_to_go), 0)
    return AnalysisWindow(start, end)


def crossing_order(crossing: Mapping[str, PassageEvent]) -> list[PassageEvent]:
    return sorted(crossing.values(), key=lambda e: (e.time, e.skater_id))


def _sheltered_in_order(order: Sequence[PassageEvent], params: DraftingParams) -> list[bool]:
    thr = params.gap_threshold + TIME_EPS
    out = [False]
    head = 0
    for i in range(1, len(order)):
        close = order[i].time - order[i - 1].time <= thr
        if not close:
            head = i
        if params.shelter_rule == "group_head":
            out.append(close and order[i].time - order[head].time <= thr)
        else:
            out.append(close)
    return out


def shelter_map(log: RaceLog, params: DraftingParams = DraftingParams()) -> dict[tuple[str, int, int], bool]:
    """Raw timestamp-based shelter state of every event, keyed by (skater, lap, boundary)."""
    out = {}
    for (lap, boundary), crossing in log.crossing_sets().items():
        order = crossing_order(crossing)
        for e, sheltered in zip(order, _sheltered_in_order(order, params)):
            out[(e.skater_id, lap, boundary)] = sheltered
    return out


def is_sheltered(
    log: RaceLog, skater: str, lap: int, boundary: int, params: DraftingParams = DraftingParams()
) -> bool:
    crossing = log.crossing(lap, boundary)
    if skater not in crossing:
        raise RaceLogError(f"skater {skater} has no crossing at lap {lap} boundary {boundary}")
    order = crossing_order(crossing)
    flags = _sheltered_in_order(order, params)
    return flags[[e.skater_id for e in order].index(skater)]


def exposure_states(log: RaceLog, params: DraftingParams = DraftingParams()) -> dict[str, list[bool]]:
    """Per-skater exposure flags in race order, with carry-forward for unobserved events.

    An unobserved crossing keeps the state of the skater's last observed crossing;
    before the first observation the first observed state is used.
    """
    raw = shelter_map(log, params)
    out = {}
    for skater, evs in log.by_skater().items():
        observed = [i for i, e in enumerate(evs) if e.observed]
        if not observed:
            raise RaceLogError(f"skater {skater} was never observed")
        state = not raw[(skater, evs[observed[0]].lap, evs[observed[0]].boundary)]
        flags = []
        for e in evs:
            if e.observed:
                state = not raw[(skater, e.lap, e.boundary)]
            flags.append(state)
        out[skater] = flags
    return out


def exposure_segments(
    log: RaceLog,
    skater: str,
    params: DraftingParams = DraftingParams(),
    window: AnalysisWindow | None = None,
    states: Mapping[str, list[bool]] | None = None,
) -> list[Segment]:
    """Boundary-to-boundary segments of one skater, clipped to the window."""
    window = window or analysis_window(log)
    states = states if states is not None else exposure_states(log, params)
    evs = log.by_skater().get(skater)
    if evs is None:
        raise RaceLogError(f"unknown skater {skater}")
    flags = states[skater]
    out = []
    for i in range(len(evs) - 1):
        t0 = max(evs[i].time, window.start)
        t1 = min(evs[i + 1].time, window.end)
        if t1 > t0:
            out.append(Segment(t0, t1, flags[i], not evs[i].observed))
    return out


def exposed_time(
    log: RaceLog,
    skater: str,
    params: DraftingParams = DraftingParams(),
    window: AnalysisWindow | None = None,
    states: Mapping[str, list[bool]] | None = None,
) -> ExposureSummary:
    window = window or analysis_window(log)
    segs = exposure_segments(log, skater, params, window, states)
    tau = math.fsum(s.end - s.start for s in segs if s.exposed)
    imputed = math.fsum(s.end - s.start for s in segs if s.exposed and s.imputed)
    sheltered = math.fsum(s.end - s.start for s in segs if not s.exposed)
    return ExposureSummary(skater, tau, window, imputed / tau if tau > 0 else 0.0, sheltered)


def covers_window(log: RaceLog, skater: str, window: AnalysisWindow) -> bool:
    evs = log.by_skater()[skater]
    return evs[0].time <= window.start and evs[-1].time >= window.end


# --------------------------------------------------------------------------- #
# Imputation


def _visible(t: float, intervals: Sequence[tuple[float, float]]) -> bool:
    return any(a <= t <= b for a, b in intervals)


def impute_carry_forward(
    log: RaceLog, visibility: Mapping[str, Sequence[tuple[float, float]]]
) -> RaceLog:
    """Fill unobserved crossings for skaters with declared visibility intervals.

    Crossings outside a skater's intervals, crossings already flagged unobserved,
    and crossings missing from the log are replaced by times interpolated (in
    boundary count) between the neighbouring observed crossings and flagged
    ``observed=False``.  Exposure and rank states for those events are carried
    forward by :func:`exposure_states` and :func:`intermediate_ranks`.
    Skaters without an entry in ``visibility`` are taken as fully visible.
    """
    bpl = log.meta.boundaries_per_lap
    final = progress_index(log.meta.n_laps, 0, bpl)
    unknown = set(visibility) - set(log.skaters)
    if unknown:
        raise RaceLogError(f"visibility given for unknown skaters {sorted(unknown)}")
    dq = log.disqualified
    events: list[PassageEvent] = []
    for skater, evs in log.by_skater().items():
        intervals = visibility.get(skater)
        anchors = [
            (progress_index(e.lap, e.boundary, bpl), e.time)
            for e in evs
            if e.observed and (intervals is None or _visible(e.time, intervals))
        ]
        if not anchors:
            raise RaceLogError(f"skater {skater} was never observed")
        if intervals is None and len(anchors) == len(evs) and (skater in dq or len(evs) == final):
            events.extend(evs)
            continue
        last = max(progress_index(e.lap, e.boundary, bpl) for e in evs)
        if skater not in dq:
            last = final
        by_progress = dict(anchors)
        ks = [k for k, _ in anchors]
        for k in range(1, last + 1):
            lap, boundary = position_of(k, bpl)
            if k in by_progress:
                events.append(PassageEvent(skater, lap, boundary, by_progress[k], True))
                continue
            events.append(PassageEvent(skater, lap, boundary, _interpolate(anchors, ks, k), False))
    return log.replace_events(events)


def _interpolate(anchors: list[tuple[int, float]], ks: list[int], k: int) -> float:
    j = bisect.bisect_left(ks, k)
    if j == 0:
        (k1, t1) = anchors[0]
        return t1 * k / k1
    if j == len(ks):
        k1, t1 = anchors[-1]
        k0, t0 = anchors[-2] if len(anchors) > 1 else (0, 0.0)
        return t1 + (t1 - t0) / (k1 - k0) * (k - k1)
    (k0, t0), (k1, t1) = anchors[j - 1], anchors[j]
    return t0 + (t1 - t0) * (k - k0) / (k1 - k0)


# --------------------------------------------------------------------------- #
# Ranks


def crossing_ranks(log: RaceLog, lap: int, boundary: int) -> dict[str, int]:
    order = crossing_order(log.crossing(lap, boundary))
    return {e.skater_id: i for i, e in enumerate(order, start=1)}


def intermediate_ranks(log: RaceLog, laps_to_finish: int) -> dict[str, int]:
    """Order of crossing the finish line with ``laps_to_finish`` laps remaining.

    A skater whose crossing is unobserved keeps the rank held at their last
    observed crossing; the remaining skaters are ordered by time around them.
    """
    if laps_to_finish not in (1, 2, 3):
        raise ValueError("laps_to_finish must be 1, 2 or 3")
    lap = lap_completed(log, laps_to_finish)
    crossing = log.crossing(lap, 0)
    if not crossing:
        raise RaceLogError(f"no crossings at lap {lap} boundary 0")
    hidden = {s for s, e in crossing.items() if not e.observed}
    if not hidden:
        return crossing_ranks(log, lap, 0)

    bpl = log.meta.boundaries_per_lap
    target = progress_index(lap, 0, bpl)
    per_skater = log.by_skater()
    carried = {}
    for s in hidden:
        prior = [e for e in per_skater[s] if e.observed and progress_index(e.lap, e.boundary, bpl) < target]
        if prior:
            last = prior[-1]
            carried[s] = crossing_ranks(log, last.lap, last.boundary)[s]
        else:
            carried[s] = crossing_ranks(log, lap, 0)[s]
    order = [e.skater_id for e in crossing_order(crossing) if e.skater_id not in hidden]
    for s in sorted(hidden, key=lambda s: (carried[s], s)):
        order.insert(min(carried[s], len(order) + 1) - 1, s)
    return {s: i for i, s in enumerate(order, start=1)}


def reconcile_ranks(rank_1: float, rank_2: float) -> float:
    """Two checkers' intermediate ranks: agreement is kept, disagreement averaged."""
    return rank_1 if rank_1 == rank_2 else (rank_1 + rank_2) / 2


def relative_discrepancy(tau_1: float, tau_2: float) -> float:
    if tau_1 < 0 or tau_2 < 0:
        raise ValueError("exposed times must be non-negative")
    total = tau_1 + tau_2
    return 0.0 if total == 0 else abs(tau_1 - tau_2) / total


def reconcile_checkers(tau_1: float, tau_2: float, tolerance: float = 0.1) -> float | None:
    """Mean of two independent exposed-time measurements, or ``None`` if they
    disagree by a relative discrepancy of ``tolerance`` or more (re-measure)."""
    if relative_discrepancy(tau_1, tau_2) < tolerance:
        return (tau_1 + tau_2) / 2
    return None


# --------------------------------------------------------------------------- #
# Race type


def breakaway_gaps(log: RaceLog, max_position: int = 3) -> dict[int, float]:
    """Minimum gap between the nth and (n+1)th skater over the second-last lap.

    Sampled at every boundary crossing set from the leader entering the last two
    laps to the leader entering the last lap.
    """
    bpl = log.meta.boundaries_per_lap
    first = progress_index(lap_completed(log, 2), 0, bpl)
    last = progress_index(lap_completed(log, 1), 0, bpl)
    sets = log.crossing_sets()
    gaps: dict[int, float] = {}
    for k in range(first, last + 1):
        crossing = sets.get(position_of(k, bpl))
        if not crossing:
            raise RaceLogError(f"no crossings at {position_of(k, bpl)}")
        times = sorted(e.time for e in crossing.values())
        for n in range(1, min(max_position, len(times) - 1) + 1):
            gap = times[n] - times[n - 1]
            gaps[n] = min(gaps.get(n, math.inf), gap)
    return gaps


def classify_breakaway(log: RaceLog, gap: float = 2.0, max_position: int = 3) -> str:
    gaps = breakaway_gaps(log, max_position)
    return "breakaway" if any(g > gap + TIME_EPS for g in gaps.values()) else "bunch"


# --------------------------------------------------------------------------- #
# Per-race table


@dataclass(frozen=True)
class MetricRow:
    race_id: str
    skater_id: str
    tau: float | None
    imputed_fraction: float | None
    rank_L3: int | None
    rank_L2: int | None
    rank_L1: int | None
    finish_rank: int
    norm_finish_rank: float
    breakaway: bool


def race_metrics(
    log: RaceLog,
    params: DraftingParams = DraftingParams(),
    breakaway_gap: float = 2.0,
) -> list[MetricRow]:
    """One row per skater; exposure and ranks are blank for skaters who left the
    race before the analysis window closed."""
    window = analysis_window(log)
    states = exposure_states(log, params)
    ranks = {k: intermediate_ranks(log, k) for k in (3, 2, 1)}
    finish = rank_race(log)
    kind = classify_breakaway(log, breakaway_gap) == "breakaway"
    rows = []
    for s in sorted(finish, key=lambda s: finish[s].finish_rank):
        if covers_window(log, s, window):
            summary = exposed_time(log, s, params, window, states)
            tau, imp = summary.tau, summary.imputed_fraction
        else:
            tau = imp = None
        rows.append(
            MetricRow(
                log.meta.race_id,
                s,
                tau,
                imp,
                ranks[3].get(s),
                ranks[2].get(s),
                ranks[1].get(s),
                finish[s].finish_rank,
                normalize_rank(finish[s].finish_rank, log.meta.n_skaters),
                kind,
            )
        )
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_metrics_csv(rows: Iterable[MetricRow], fh: IO[str], comment: str | None = None) -> None:
    if comment:
        fh.write(f"# {comment}\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([_fmt(getattr(r, c)) for c in METRIC_COLUMNS])


def read_metrics_csv(fh: IO[str]) -> list[MetricRow]:
    """Inverse of :func:`write_metrics_csv`; leading ``#`` lines are skipped."""
    lines = fh.read().splitlines()
    skipped = 0
    while skipped < len(lines) and lines[skipped].startswith("#"):
        skipped += 1
    reader = csv.DictReader(lines[skipped:])
    missing = set(METRIC_COLUMNS) - set(reader.fieldnames or ())
    if missing:
        raise RaceLogError(f"metrics CSV lacks columns {sorted(missing)}")

    def opt(v: str, cast):
        return cast(v) if v != "" else None

    rows = []
    for i, rec in enumerate(reader, start=skipped + 2):
        try:
            rows.append(
                MetricRow(
                    rec["race_id"],
                    rec["skater_id"],
                    opt(rec["tau"], float),
                    opt(rec["imputed_fraction"], float),
                    opt(rec["rank_L3"], float),
                    opt(rec["rank_L2"], float),
                    opt(rec["rank_L1"], float),
                    int(rec["finish_rank"]),
                    float(rec["norm_finish_rank"]),
                    rec["breakaway"] in ("1", "True", "true"),
                )
            )
        except ValueError as exc:
            raise RaceLogError(str(exc), i) from exc
    return rows
