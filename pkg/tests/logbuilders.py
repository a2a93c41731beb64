"""Tiny hand-built race logs for tests."""

from __future__ import annotations

from peloton.racelog import PassageEvent, RaceLog, RaceMeta, position_of


def make_log(times, n_laps=None, bpl=1, dq=(), hidden=(), race_id="r1", track=400.0):
    """``times[skater]`` lists crossing times in race order (progress 1, 2, ...).

    ``hidden`` holds (skater, progress) pairs recorded as unobserved.
    """
    if n_laps is None:
        n_laps = max(len(ts) for ts in times.values()) // bpl
    events = []
    for sid, ts in times.items():
        for k, t in enumerate(ts, start=1):
            lap, b = position_of(k, bpl)
            events.append(PassageEvent(sid, lap, b, float(t), (sid, k) not in hidden))
    meta = RaceMeta(race_id, n_skaters=len(times), n_laps=n_laps, track_length=track, boundaries_per_lap=bpl)
    return RaceLog(meta, tuple(events), tuple(dq))


# A leads throughout, B sits 0.125 s behind, C is exposed for one lap.
TIGHT = {
    "A": [4, 8, 16, 24, 32],
    "B": [4.125, 8.125, 16.125, 24.125, 32.125],
    "C": [4.25, 9, 16.25, 24.5, 33],
}


def gap_log(position: int, gap: float, n_skaters: int = 5, base_gap: float = 0.5, race_id: str = "r1"):
    """Log where the gap behind the ``position``-th skater is ``gap`` at every
    crossing of the second-last lap and ``base_gap`` elsewhere."""
    n_laps, bpl = 5, 2
    times = {f"S{i + 1}": [] for i in range(n_skaters)}
    for k in range(1, n_laps * bpl + 1):
        t = 30.0 * k
        for i in range(n_skaters):
            times[f"S{i + 1}"].append(t)
            t += gap if i + 1 == position and k >= 6 else base_gap
    return make_log(times, n_laps=n_laps, bpl=bpl, race_id=race_id)


# Exposed time by hand.  Five laps of one boundary each, so the analysis window
# runs from the first lap-2 crossing to the first lap-4 crossing.  Non-dyadic
# answers are written as the arithmetic that produces them so that equality is
# exact.
LEADER = [4, 8, 16, 24, 32]


HAND_CASES = {
    "tight group": (make_log(TIGHT), {"A": 16.0, "B": 0.0, "C": 7.25}),
    "gap of exactly 0.2 s is sheltered": (
        make_log({"A": LEADER, "B": [4.5, 8.2, 16.25, 24.5, 32.5]}),
        {"A": 16.0, "B": 7.75 + (8.2 - 8)},
    ),
    "0.2 s at a large clock reading": (
        make_log({"A": [1000, 1008, 1016, 1024, 1032], "B": [1000.5, 1008.2, 1016.2, 1024.2, 1032.2]}),
        {"A": 16.0, "B": 1008.2 - 1008},
    ),
    "segments clipped at both window edges": (
        make_log({"A": LEADER, "B": [6, 8.125, 20, 28, 36]}),
        {"A": 16.0, "B": 4.125},
    ),
    "unobserved crossing carries exposure forward": (
        make_log({"A": LEADER, "B": [4.125, 12, 16.125, 24.125, 32.125]}, hidden=[("B", 3)]),
        {"A": 16.0, "B": 12.0},
    ),
    "leader swap mid-window": (
        make_log({"A": [4, 8, 16.125, 24.125, 32.125], "B": [4.125, 8.125, 16, 24, 32]}),
        {"A": 8.125, "B": 8.0},
    ),
}
