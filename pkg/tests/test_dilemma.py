import numpy as np
import pytest
from hypothesis import given, strategies as st

from peloton.dilemma.game import (
    NotChickenError,
    PayoffMatrix,
    best_response_dynamics,
    expected_payoffs,
    nash_cooperation_fraction,
)

payoff = st.floats(-100, 100, allow_nan=False)


@st.composite
def chicken(draw):
    vals = draw(st.lists(payoff, min_size=4, max_size=4, unique=True))
    T, R, S, P = sorted(vals, reverse=True)
    return PayoffMatrix(T, R, S, P)


@pytest.mark.parametrize(
    "T,R,S,P,x",
    [(3, 2, 1, 0, 0.5), (2, 1.5, 1, 0, 2 / 3), (10, 9, 1, 0, 0.5), (4, 1, 0.5, 0, 0.5 / 3.5)],
)
def test_known_equilibria(T, R, S, P, x):
    assert nash_cooperation_fraction(PayoffMatrix(T, R, S, P)) == pytest.approx(x, abs=1e-15)


@given(chicken())
def test_indifference_at_equilibrium(m):
    x = nash_cooperation_fraction(m)
    assert 0 <= x <= 1
    pc, pd = expected_payoffs(m, x)
    assert abs(pc - pd) <= 1e-12 * max(1.0, abs(m.T), abs(m.P))


@given(chicken(), st.floats(0, 1))
def test_payoff_gap_sign(m, x):
    pc, pd = expected_payoffs(m, x)
    x_star = nash_cooperation_fraction(m)
    if x < x_star - 1e-9:
        assert pc > pd
    elif x > x_star + 1e-9:
        assert pc < pd


@pytest.mark.parametrize(
    "vals,broken",
    [((5, 3, 0, 1), "S > P"), ((3, 5, 1, 0), "T > R"), ((3, 1, 2, 0), "R > S"), ((1, 1, 1, 1), "T > R")],
)
def test_non_chicken_names_violation(vals, broken):
    m = PayoffMatrix(*vals)
    assert not m.is_chicken
    with pytest.raises(NotChickenError, match=broken):
        nash_cooperation_fraction(m)


@given(chicken(), st.floats(0, 1))
def test_dynamics_reach_equilibrium(m, x0):
    step = 0.01
    traj = best_response_dynamics(m, x0, step=step, iterations=200)
    assert len(traj) == 201 and traj[0] == x0
    assert np.all((traj >= 0) & (traj <= 1))
    assert abs(traj[-1] - nash_cooperation_fraction(m)) <= step + 1e-12


def test_prisoners_dilemma_collapses_to_defection():
    m = PayoffMatrix(T=5, R=3, S=0, P=1)
    assert best_response_dynamics(m, 0.9, iterations=200)[-1] == 0.0


def test_dynamics_argument_checks():
    m = PayoffMatrix(3, 2, 1, 0)
    with pytest.raises(ValueError):
        best_response_dynamics(m, 1.5)
    with pytest.raises(ValueError):
        best_response_dynamics(m, 0.5, step=0)
