"""Simulation configuration and its ``key = value`` file format."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Sequence

SOLO_SPEED = 13.5  # m/s held by a lone skater at base power with default drag


@dataclass(frozen=True)
class SimConfig:
    n_skaters: int = 20
    n_laps: int = 16
    track_length: float = 400.0
    boundaries_per_lap: int = 4
    drafting_gap: float = 0.2
    drag_coefficient: float = 250.0 / SOLO_SPEED**3
    draft_drag_multiplier: float = 0.7
    energy_budget: float = 80000.0
    base_power: float = 250.0
    sprint_power: float = 375.0
    ability_spread: float = 0.01
    lead_propensity: float | tuple[float, ...] = 0.3
    seed: int = 0
    # Integration and behaviour knobs.
    timestep: float = 0.1
    lead_turn_mean: float = 20.0
    accept_rate: float = 0.25
    stall_decay: float = 0.02
    stall_floor: float = 0.6
    exhausted_power_fraction: float = 0.5
    follow_gap: float = 0.1
    follow_response: float = 2.0
    group_gap: float = 1.0
    surge_speed: float = 0.8
    drift_speed: float = 0.5
    start_spread: float = 3.0
    sex: str | None = None
    # Experiment harness: roster heterogeneity and synthetic time trials.
    propensity_spread: float = 0.0
    time_trial_distance: float = 5000.0
    time_trial_noise: float = 0.01
    time_trial_races: int = 3

    def __post_init__(self) -> None:
        if isinstance(self.lead_propensity, (list, tuple)):
            object.__setattr__(self, "lead_propensity", tuple(float(p) for p in self.lead_propensity))
        errors = self.problems()
        if errors:
            raise ValueError("invalid SimConfig: " + "; ".join(errors))

    def problems(self) -> list[str]:
        out = []
        if not 1 <= self.n_skaters <= 24:
            out.append("n_skaters must be in [1, 24]")
        for name in ("n_laps", "boundaries_per_lap", "time_trial_races"):
            if getattr(self, name) < 1:
                out.append(f"{name} must be >= 1")
        for name in (
            "track_length",
            "drafting_gap",
            "drag_coefficient",
            "energy_budget",
            "base_power",
            "sprint_power",
            "timestep",
            "lead_turn_mean",
            "accept_rate",
            "follow_response",
            "group_gap",
            "time_trial_distance",
        ):
            if not getattr(self, name) > 0:
                out.append(f"{name} must be > 0")
        for name in ("ability_spread", "stall_decay", "follow_gap", "surge_speed", "drift_speed", "start_spread",
                     "propensity_spread", "time_trial_noise"):
            if not getattr(self, name) >= 0:
                out.append(f"{name} must be >= 0")
        for name in ("draft_drag_multiplier", "stall_floor", "exhausted_power_fraction"):
            if not 0 < getattr(self, name) < 1:
                out.append(f"{name} must be in (0, 1)")
        if self.sprint_power < self.base_power:
            out.append("sprint_power must be >= base_power")
        props = self.propensities()
        if len(props) != self.n_skaters:
            out.append("lead_propensity list must have one entry per skater")
        if any(not 0 <= p <= 1 for p in props):
            out.append("lead_propensity values must be in [0, 1]")
        if not 0 <= self.seed < 2**64:
            out.append("seed must be a 64-bit unsigned integer")
        if self.sex not in (None, "men", "women"):
            out.append("sex must be men or women")
        return out

    def propensities(self) -> tuple[float, ...]:
        if isinstance(self.lead_propensity, tuple):
            return self.lead_propensity
        return (float(self.lead_propensity),) * self.n_skaters

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(d["lead_propensity"], tuple):
            d["lead_propensity"] = list(d["lead_propensity"])
        return d

    def config_hash(self) -> str:
        """Digest of every field except the seed."""
        d = self.to_dict()
        d.pop("seed")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if isinstance(v, tuple):
                v = ", ".join(repr(p) for p in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    if name == "lead_propensity":
        parts = [p for p in raw.split(",") if p.strip()]
        return float(parts[0]) if len(parts) == 1 else tuple(float(p) for p in parts)
    if name == "sex":
        return raw or None
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    return float(raw)


def parse_config(text: str, base: SimConfig | None = None) -> SimConfig:
    """Read ``key = value`` lines (``#`` starts a comment) over ``base`` defaults."""
    base = base or SimConfig()
    known = {f.name for f in fields(SimConfig)}
    changes = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key = value'")
        if key not in known:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        try:
            changes[key] = _coerce(key, value, getattr(base, key))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: bad value for {key}: {exc}") from exc
    return replace(base, **changes)


def load_config(path: str | Path) -> SimConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"))


def roster_ids(n: int, prefix: str = "S") -> list[str]:
    return [f"{prefix}{i + 1:02d}" for i in range(n)]


def ensure_ids(ids: Sequence[str] | None, n: int) -> list[str]:
    ids = list(ids) if ids is not None else roster_ids(n)
    if len(ids) != n or len(set(ids)) != n:
        raise ValueError("need one distinct skater id per skater")
    return ids
