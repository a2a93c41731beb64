"""End-to-end harness: simulate races, measure them, and fit the three models.

A roster of skaters with fixed abilities and lead propensities is drawn once;
each race enters ``n_skaters`` of them, so skaters recur across races and the
random intercept has something to estimate.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..metrics import DraftingParams, MetricRow, race_metrics
from ..racelog import RaceLog
from ..stats.lmm import LmmConvergenceError, LmmDataset, LmmError, LmmFit, fit_lmm
from .config import SimConfig, roster_ids
from .simulator import SimResult, simulate_race, steady_speed

MODELS = ("eq1", "eq2", "eq3")


@dataclass(frozen=True)
class RosterEntry:
    skater_id: str
    ability: float
    lead_propensity: float
    best_time: float


@dataclass
class ExperimentResult:
    config: SimConfig
    roster: list[RosterEntry]
    logs: list[RaceLog]
    metrics: list[MetricRow]
    excluded: dict[str, str]
    fits: dict[str, LmmFit | str] = field(default_factory=dict)

    def time_trials(self) -> dict[str, float]:
        return {r.skater_id: r.best_time for r in self.roster}


def draw_roster(config: SimConfig, size: int, rng: np.random.Generator) -> list[RosterEntry]:
    """Skaters with log-normal ability, uniform propensity around the configured
    value, and the best of several noisy solo time trials."""
    if isinstance(config.lead_propensity, tuple):
        raise ValueError("roster experiments take a scalar lead_propensity")
    out = []
    for sid in roster_ids(size, prefix="K"):
        ability = math.exp(config.ability_spread * rng.standard_normal())
        half = config.propensity_spread / 2
        prop = float(np.clip(config.lead_propensity + rng.uniform(-half, half), 0.0, 1.0))
        solo = config.time_trial_distance / steady_speed(
            config.base_power * ability, config.drag_coefficient
        )
        trials = solo * np.exp(config.time_trial_noise * rng.standard_normal(config.time_trial_races))
        out.append(RosterEntry(sid, ability, prop, float(trials.min())))
    return out


def model_dataset(
    model: str,
    rows: list[MetricRow],
    time_trials: dict[str, float] | None = None,
) -> LmmDataset:
    """Rows for one of the three models.

    eq1: normalized intermediate rank ~ laps to finish + finish rank, top three only.
    eq2: normalized finish rank ~ exposed time.
    eq3: normalized finish rank ~ time-trial best (skaters without one are dropped).
    """
    subjects, response, covs = [], [], []
    if model == "eq1":
        names = ("laps_to_finish", "finish_rank")
        n_by_race = {}
        for r in rows:
            n_by_race[r.race_id] = n_by_race.get(r.race_id, 0) + 1
        for r in rows:
            if r.finish_rank > 3:
                continue
            for laps, rank in ((3, r.rank_L3), (2, r.rank_L2), (1, r.rank_L1)):
                if rank is None:
                    continue
                subjects.append(r.skater_id)
                response.append(rank / n_by_race[r.race_id])
                covs.append((laps, r.finish_rank))
    elif model == "eq2":
        names = ("tau",)
        for r in rows:
            if r.tau is None:
                continue
            subjects.append(r.skater_id)
            response.append(r.norm_finish_rank)
            covs.append((r.tau,))
    elif model == "eq3":
        names = ("time_trial",)
        if not time_trials:
            raise LmmError("eq3 needs time-trial records")
        for r in rows:
            if r.skater_id not in time_trials:
                continue
            subjects.append(r.skater_id)
            response.append(r.norm_finish_rank)
            covs.append((time_trials[r.skater_id],))
        if not subjects:
            raise LmmError("no skater in the metrics joins a time-trial record")
    else:
        raise ValueError(f"unknown model {model!r}")
    if not subjects:
        raise LmmError(f"no usable rows for {model}")
    return LmmDataset(tuple(subjects), np.array(response), np.array(covs, dtype=float), names)


def simulate_races(
    config: SimConfig,
    n_races: int,
    roster_size: int | None = None,
    jobs: int = 1,
) -> tuple[list[RosterEntry], list[SimResult]]:
    """Draw a roster and race it ``n_races`` times; results come back in race order."""
    if n_races < 1:
        raise ValueError("n_races must be >= 1")
    roster_size = roster_size or 2 * config.n_skaters
    if roster_size < config.n_skaters:
        raise ValueError("roster smaller than the field")
    roster_seq, *race_seqs = np.random.SeedSequence(config.seed).spawn(n_races + 1)
    rng = np.random.default_rng(roster_seq)
    roster = draw_roster(config, roster_size, rng)

    tag = {"experiment_seed": config.seed, "config_hash": config.config_hash()}
    jobs_args = []
    for j, seq in enumerate(race_seqs):
        pick = np.sort(rng.choice(roster_size, size=config.n_skaters, replace=False))
        entrants = [roster[k] for k in pick]
        race_seed = int(seq.generate_state(1, dtype=np.uint64)[0])
        cfg = config.with_(seed=race_seed, lead_propensity=tuple(e.lead_propensity for e in entrants))
        jobs_args.append(
            (cfg, [e.skater_id for e in entrants], [e.ability for e in entrants], f"race-{j + 1:03d}", tag)
        )
    if jobs > 1 and n_races > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_simulate_one, jobs_args))
    else:
        results = [_simulate_one(a) for a in jobs_args]
    return roster, results


def _simulate_one(args) -> SimResult:
    cfg, ids, abilities, race_id, tag = args
    return simulate_race(cfg, skater_ids=ids, abilities=abilities, race_id=race_id, provenance=tag)


def run_experiment(
    config: SimConfig,
    n_races: int,
    roster_size: int | None = None,
    params: DraftingParams | None = None,
    breakaway_gap: float = 2.0,
    method: str = "reml",
    models: tuple[str, ...] = MODELS,
    jobs: int = 1,
) -> ExperimentResult:
    """Simulate, measure every race, drop breakaway races and fit the models.

    Fits that cannot be made (no rows, degenerate design) are reported as strings.
    """
    params = params or DraftingParams(gap_threshold=config.drafting_gap)
    roster, results = simulate_races(config, n_races, roster_size, jobs)
    logs, rows, excluded = [], [], {}
    for result in results:
        logs.append(result.log)
        race_rows = race_metrics(result.log, params, breakaway_gap)
        if race_rows[0].breakaway:
            excluded[result.log.meta.race_id] = "breakaway"
            continue
        rows.extend(race_rows)

    res = ExperimentResult(config, roster, logs, rows, excluded)
    tt = res.time_trials()
    for model in models:
        try:
            res.fits[model] = fit_lmm(model_dataset(model, rows, tt), method=method)
        except (LmmError, LmmConvergenceError) as exc:
            res.fits[model] = f"{type(exc).__name__}: {exc}"
    return res


STRATEGY_DOMINANT = dict(ability_spread=0.003, propensity_spread=0.9, lead_propensity=0.5)
ABILITY_DOMINANT = dict(ability_spread=0.05, propensity_spread=0.0, lead_propensity=0.5)
NULL_SCENARIO = dict(ability_spread=0.0, propensity_spread=0.0, lead_propensity=0.5)


def scenario(name: str, **overrides) -> SimConfig:
    presets = {
        "strategy": STRATEGY_DOMINANT,
        "ability": ABILITY_DOMINANT,
        "null": NULL_SCENARIO,
    }
    return SimConfig(**{**presets[name], **overrides})
