"""The skater's dilemma as a symmetric two-strategy chicken game.

Cooperation means leading the group (taking the air resistance), defection means
drafting behind someone else.  In the multi-person version every skater plays
the two-person game against every other skater, so a player's expected payoff is
its payoff against a random opponent drawn from the population.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class NotChickenError(ValueError):
    pass


@dataclass(frozen=True)
class PayoffMatrix:
    """Row-player payoffs: T (defect vs cooperator), R (mutual cooperation),
    S (cooperate vs defector), P (mutual defection)."""

    T: float
    R: float
    S: float
    P: float

    def violations(self) -> list[str]:
        out = []
        for hi, lo in (("T", "R"), ("R", "S"), ("S", "P")):
            if not getattr(self, hi) > getattr(self, lo):
                out.append(f"{hi} > {lo}")
        return out

    @property
    def is_chicken(self) -> bool:
        return not self.violations()

    def check_chicken(self) -> None:
        bad = self.violations()
        if bad:
            raise NotChickenError(
                f"not a chicken game (T > R > S > P required); violated: {', '.join(bad)}"
            )


def nash_cooperation_fraction(m: PayoffMatrix) -> float:
    """Share of cooperators in the mixed equilibrium, (S - P) / (T - R + S - P)."""
    m.check_chicken()
    return (m.S - m.P) / ((m.T - m.R) + (m.S - m.P))


def expected_payoffs(m: PayoffMatrix, coop_fraction: float) -> tuple[float, float]:
    x = coop_fraction
    return x * m.R + (1 - x) * m.S, x * m.T + (1 - x) * m.P


def best_response_dynamics(
    m: PayoffMatrix, x0: float, step: float = 0.01, iterations: int = 1000
) -> np.ndarray:
    """Move the cooperator share by ``step`` toward the better-paying strategy.

    Returns the trajectory including ``x0`` (length ``iterations + 1``).
    """
    if not 0.0 <= x0 <= 1.0:
        raise ValueError("x0 must lie in [0, 1]")
    if step <= 0:
        raise ValueError("step must be positive")
    traj = np.empty(iterations + 1)
    x = traj[0] = x0
    for k in range(1, iterations + 1):
        pc, pd = expected_payoffs(m, x)
        x = min(1.0, max(0.0, x + step * np.sign(pc - pd)))
        traj[k] = x
    return traj
