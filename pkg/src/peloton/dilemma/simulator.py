"""Agent-based mass-start race on a ring with drafting.

Each skater is a point on a 1-D track.  Holding speed ``v`` costs power
``drag_coefficient * v**3``, discounted by ``draft_drag_multiplier`` while the
skater is within ``drafting_gap`` seconds behind someone.  All work is drawn
from a finite energy budget that scales with the skater's ability; an
exhausted skater is limited to a fraction of base power.

Skaters within ``group_gap`` seconds of each other form a group.  The group
head either leads (pacing at its base power) or stalls, easing off by
``stall_decay`` per second so that somebody else has to take the front.  During
a stall every member accepts the front at a rate proportional to its lead
propensity.  A follower that accepts surges past the head and becomes the new
leader, and the old head drifts back to the tail of the group.  Leaders hand
over after exponentially distributed turns.  On the final lap everyone sprints
with the power their remaining energy can fund over one lap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .. import __version__
from ..racelog import PassageEvent, RaceLog, RaceMeta, position_of
from .config import SimConfig, ensure_ids

FOLLOW, LEAD, STALL, SURGE, DRIFT = 0, 1, 2, 3, 4


class SimulationFault(RuntimeError):
    """The integrator produced non-finite values or the race did not finish."""


@numba.njit(cache=True)
def _integrate(
    n_laps, track, bpl, dt, gap, drag, mult, base, sprint, prop, budget, offsets, uniforms,
    turn_mean, accept_rate, stall_decay, stall_floor, exhausted_frac, follow_gap, follow_tc, group_gap,
    surge_speed, drift_speed,
):
    n = base.shape[0]
    max_steps = uniforms.shape[1]
    total = n_laps * bpl
    seg = track / bpl
    sprint_at = (n_laps - 1) * track

    x = -offsets.copy()
    v_pace = (base / drag) ** (1.0 / 3.0)
    v_max = 1.1 * (sprint / drag) ** (1.0 / 3.0)
    v = v_pace * stall_floor
    energy = budget.copy()
    work = np.zeros(n)
    unfunded = np.zeros(n)
    exposed_truth = np.zeros(n)
    sprint_cap = np.zeros(n)
    role = np.full(n, STALL)
    active = np.ones(n, dtype=np.bool_)
    sprinting = np.zeros(n, dtype=np.bool_)
    next_k = np.ones(n, dtype=np.int64)
    crossings = np.full((n, total), np.nan)
    dq_time = np.full(n, np.nan)
    sheltered = np.zeros(n, dtype=np.bool_)
    head_of = np.arange(n)
    group_size = np.zeros(n, dtype=np.int64)
    surging = np.zeros(n, dtype=np.bool_)
    v_new = np.zeros(n)
    last_in_group = np.zeros(n, dtype=np.bool_)
    min_exposed = n
    max_speed_ratio = 0.0
    p_end = dt / turn_mean
    fault = 0

    step = 0
    t = 0.0
    while step < max_steps:
        n_act = 0
        for i in range(n):
            if active[i]:
                n_act += 1
        if n_act == 0:
            break

        key = np.where(active, x, -np.inf)
        order = np.argsort(-key, kind="mergesort")[:n_act]

        group_size[:] = 0
        surging[:] = False
        n_exposed = 0
        for idx in range(n_act):
            i = order[idx]
            if idx == 0:
                sheltered[i] = False
                head_of[i] = i
            else:
                a = order[idx - 1]
                tg = (x[a] - x[i]) / max(v[i], 1.0)
                sheltered[i] = tg <= gap
                head_of[i] = head_of[a] if tg <= group_gap else i
            if not sheltered[i]:
                n_exposed += 1
            group_size[head_of[i]] += 1
        min_exposed = min(min_exposed, n_exposed)
        for idx in range(n_act):
            i = order[idx]
            last_in_group[i] = idx == n_act - 1 or head_of[order[idx + 1]] != head_of[i]

        for idx in range(n_act):
            i = order[idx]
            if sprinting[i]:
                continue
            if head_of[i] == i:
                if group_size[i] == 1 or role[i] == SURGE:
                    role[i] = LEAD
                elif role[i] == FOLLOW:
                    role[i] = STALL
            elif role[i] == LEAD or role[i] == STALL:
                role[i] = DRIFT
            elif role[i] == DRIFT and last_in_group[i]:
                role[i] = FOLLOW
            if role[i] == SURGE:
                surging[head_of[i]] = True

        for idx in range(n_act):
            i = order[idx]
            if sprinting[i]:
                continue
            h = head_of[i]
            u = uniforms[i, step]
            if h == i and role[i] == LEAD:
                if group_size[i] > 1 and u < p_end:
                    role[i] = STALL
            elif role[h] == STALL and not surging[h] and not sprinting[h]:
                if u < prop[i] * accept_rate * dt:
                    if h == i:
                        role[i] = LEAD
                    else:
                        role[i] = SURGE
                        surging[h] = True

        for idx in range(n_act):
            i = order[idx]
            m = mult if sheltered[i] else 1.0
            if energy[i] <= 0.0:
                cap = exhausted_frac * base[i]
            elif sprinting[i]:
                cap = sprint_cap[i]
            else:
                cap = base[i]
            v_cap = min((cap / (drag * m)) ** (1.0 / 3.0), v_max[i])
            if sprinting[i] or role[i] == LEAD:
                vt = v_cap
            elif role[i] == STALL:
                vt = max(v[i] * (1.0 - stall_decay * dt), stall_floor * v_pace[i])
            elif role[i] == SURGE:
                vt = v[head_of[i]] + surge_speed
            else:
                # Follow the nearest skater ahead that is not drifting back.
                j = idx - 1
                while j > 0 and role[order[j]] == DRIFT and not sprinting[order[j]]:
                    j -= 1
                a = order[j]
                if role[i] == DRIFT:
                    vt = v[a] - drift_speed
                else:
                    vt = v[a] + (x[a] - x[i] - follow_gap * v[a]) / follow_tc
            v_new[i] = min(max(vt, 0.0), v_cap)

        t_next = t + dt
        lead_x = -np.inf
        for idx in range(n_act):
            i = order[idx]
            m = mult if sheltered[i] else 1.0
            vi = v_new[i]
            power = drag * m * vi * vi * vi
            spent = power * dt
            work[i] += spent
            if energy[i] >= spent:
                energy[i] -= spent
            else:
                unfunded[i] += spent - energy[i]
                energy[i] = 0.0
            if not sheltered[i]:
                exposed_truth[i] += dt
            max_speed_ratio = max(max_speed_ratio, vi / v_max[i])
            x_old = x[i]
            x[i] = x_old + vi * dt
            v[i] = vi
            if not (math.isfinite(x[i]) and math.isfinite(energy[i])):
                fault = 1
            while next_k[i] <= total and x[i] >= next_k[i] * seg:
                frac = (next_k[i] * seg - x_old) / (x[i] - x_old)
                crossings[i, next_k[i] - 1] = t + dt * frac
                next_k[i] += 1
            if next_k[i] > total:
                active[i] = False
            elif not sprinting[i] and x[i] >= sprint_at:
                sprinting[i] = True
                # Power that spends exactly the remaining energy over one solo lap.
                funded = (energy[i] / (track * drag ** (1.0 / 3.0))) ** 1.5
                sprint_cap[i] = min(max(funded, exhausted_frac * base[i]), sprint[i])
            if active[i]:
                lead_x = max(lead_x, x[i])
        for i in range(n):
            if active[i] and lead_x - x[i] >= track:
                active[i] = False
                dq_time[i] = t_next
        if fault:
            break
        t = t_next
        step += 1

    unfinished = 0
    for i in range(n):
        if active[i]:
            unfinished += 1
    return (crossings, dq_time, exposed_truth, work, unfunded, energy, min_exposed,
            max_speed_ratio, step, fault, unfinished)


@dataclass(frozen=True)
class SimResult:
    log: RaceLog | None
    abilities: dict[str, float]
    exposed_truth: dict[str, float]
    finish_times: dict[str, float]
    diagnostics: dict = field(default_factory=dict, compare=False)


def steady_speed(power: float, drag_coefficient: float) -> float:
    return (power / drag_coefficient) ** (1.0 / 3.0)


def agent_streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def simulate_race(
    config: SimConfig,
    skater_ids: list[str] | None = None,
    abilities: list[float] | None = None,
    race_id: str | None = None,
    provenance: dict | None = None,
) -> SimResult:
    """Run one race.  ``abilities`` (relative intrinsic power) are drawn from the
    seeded agent streams unless given; the run is a pure function of its inputs.
    ``provenance`` entries are merged into the log's metadata."""
    n = config.n_skaters
    ids = ensure_ids(skater_ids, n)
    streams = agent_streams(config.seed, n)
    dt = config.timestep
    v_slow = min(config.stall_floor, config.exhausted_power_fraction ** (1 / 3)) * steady_speed(
        config.base_power * 0.5, config.drag_coefficient
    )
    max_steps = int(math.ceil(1.5 * config.n_laps * config.track_length / v_slow / dt)) + 10

    offsets = np.empty(n)
    drawn = np.empty(n)
    uniforms = np.empty((n, max_steps))
    for i, g in enumerate(streams):
        offsets[i] = config.start_spread * g.random()
        drawn[i] = math.exp(config.ability_spread * g.standard_normal())
        uniforms[i] = g.random(max_steps)
    ability = np.asarray(abilities, float) if abilities is not None else drawn
    if ability.shape != (n,) or np.any(ability <= 0):
        raise ValueError("abilities must be one positive factor per skater")

    out = _integrate(
        config.n_laps, config.track_length, config.boundaries_per_lap, dt, config.drafting_gap,
        config.drag_coefficient, config.draft_drag_multiplier, config.base_power * ability,
        config.sprint_power * ability, np.asarray(config.propensities(), float),
        config.energy_budget * ability, offsets, uniforms, config.lead_turn_mean, config.accept_rate,
        config.stall_decay, config.stall_floor, config.exhausted_power_fraction, config.follow_gap,
        config.follow_response, config.group_gap, config.surge_speed, config.drift_speed,
    )
    (crossings, dq_time, exposed, work, unfunded, energy, min_exposed, max_ratio,
     steps, fault, unfinished) = out
    if fault:
        raise SimulationFault("non-finite state in integrator")
    if unfinished:
        raise SimulationFault(f"{unfinished} skaters still racing after {steps} steps")

    crossings = np.round(crossings, 6)
    bpl = config.boundaries_per_lap
    events = []
    finish = {}
    for i, sid in enumerate(ids):
        for k in range(crossings.shape[1]):
            t = crossings[i, k]
            if not np.isnan(t):
                lap, b = position_of(k + 1, bpl)
                events.append(PassageEvent(sid, lap, b, float(t), True))
        if not np.isnan(crossings[i, -1]):
            finish[sid] = float(crossings[i, -1])
    dqs = tuple(
        (ids[i], float(np.round(dq_time[i], 6))) for i in np.argsort(dq_time, kind="stable")
        if not np.isnan(dq_time[i])
    )

    log = None
    if n >= 2:
        meta = RaceMeta(
            race_id=race_id or f"sim-{config.seed}",
            n_skaters=n,
            sex=config.sex,
            n_laps=config.n_laps,
            track_length=config.track_length,
            boundaries_per_lap=bpl,
            provenance={
                "tool": "peloton",
                "version": __version__,
                "seed": config.seed,
                "config_hash": config.config_hash(),
                **(provenance or {}),
            },
        )
        log = RaceLog(meta, tuple(events), dqs)

    diagnostics = {
        "steps": int(steps),
        "min_exposed_per_step": int(min_exposed),
        "max_speed_ratio": float(max_ratio),
        "work": dict(zip(ids, work.tolist())),
        "unfunded_work": dict(zip(ids, unfunded.tolist())),
        "energy_left": dict(zip(ids, energy.tolist())),
        "events": len(events),
    }
    return SimResult(
        log=log,
        abilities=dict(zip(ids, ability.tolist())),
        exposed_truth=dict(zip(ids, exposed.tolist())),
        finish_times=finish,
        diagnostics=diagnostics,
    )
