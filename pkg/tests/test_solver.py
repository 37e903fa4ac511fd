import itertools
from fractions import Fraction

import numpy as np
import pytest

from netadopt.common import NEVER, STATE_HIGH, ImpossibleHistoryError, is_never
from netadopt.engine import run_profile
from netadopt.networks import build_line
from netadopt.signals import binary_model
from netadopt.solver import (
    SolveConfig,
    best_response,
    enumerate_scenarios,
    exact_posterior,
    is_equilibrium,
    solve_equilibrium,
    verify_structure,
)
from netadopt.strategies import Strategy, ThresholdRule, myopic_rule

Q = Fraction(3, 4)
MODEL = binary_model(Q)


def test_solve_config_validation():
    with pytest.raises(ValueError, match="delta"):
        SolveConfig(delta=Fraction(1), horizon=2)
    with pytest.raises(ValueError, match="horizon"):
        SolveConfig(delta=Fraction(1, 2), horizon=-1)


def test_enumerate_scenarios_weights_sum_to_one():
    net = build_line(2, directed=True)
    scen = enumerate_scenarios(net, MODEL, myopic_rule(MODEL), horizon=2)
    assert sum(s.weight_high for s in scen) == 1
    assert sum(s.weight_low for s in scen) == 1


def test_exact_posterior_isolated_is_own_belief():
    net = build_line(1)
    cfg = SolveConfig(delta=Fraction(1, 2), horizon=2)
    post = exact_posterior(net, MODEL, myopic_rule(MODEL), 0, (0, ()), Q, cfg)
    assert post == Q


def test_exact_posterior_opposing_evidence_cancels():
    # agent 1 observes a myopic agent 0; one adoption carries exactly the
    # weight of one high signal, so a low own signal brings it back to 1/2
    net = build_line(2, directed=True)
    cfg = SolveConfig(delta=Fraction(1, 2), horizon=2)
    adopted = exact_posterior(net, MODEL, myopic_rule(MODEL), 1,
                              (1, ((0, 0),)), 1 - Q, cfg)
    assert adopted == Fraction(1, 2)
    silent = exact_posterior(net, MODEL, myopic_rule(MODEL), 1, (1, ()), Q, cfg)
    assert silent == Fraction(1, 2)


def test_exact_posterior_impossible_history():
    net = build_line(2, directed=True)
    cfg = SolveConfig(delta=Fraction(1, 2), horizon=3)
    # the myopic neighbor can only adopt at period 0
    with pytest.raises(ImpossibleHistoryError):
        exact_posterior(net, MODEL, myopic_rule(MODEL), 1, (2, ((0, 1),)), Q, cfg)


def test_best_response_two_line_thresholds():
    net = build_line(2, directed=True)
    cfg = SolveConfig(delta=Fraction(1, 2), horizon=2)
    table = best_response(net, MODEL, myopic_rule(MODEL), 1, cfg)
    # period 0: adopting on the high atom beats waiting (1/2 > delta/2 + 0)
    assert table.lookup(1, (0, ())) == (Q, Fraction(1))
    # after seeing an adoption, a low own signal is exactly indifferent and
    # ties resolve toward adopting, so both atoms adopt
    assert table.lookup(1, (1, ((0, 0),))) == (1 - Q, Fraction(1))


def test_best_response_size_guard():
    net = build_line(13)
    cfg = SolveConfig(delta=Fraction(1, 2), horizon=2)
    with pytest.raises(ValueError, match="max_agents"):
        best_response(net, MODEL, myopic_rule(MODEL), 0, cfg)


def _doubled_value(net, profile, horizon):
    """Exact doubled utility of agent 1 by forward simulation over all atoms."""
    total = Fraction(0)
    rng = np.random.default_rng(0)  # never consulted: all decisions are pure
    for a0, a1 in itertools.product(range(2), range(2)):
        trace = run_profile(net, MODEL, profile, horizon, rng,
                            state=STATE_HIGH, atoms=[a0, a1])
        tau = trace.times[1]
        if is_never(tau):
            continue
        w_high = MODEL.atoms[a0][0] * MODEL.atoms[a1][0]
        w_low = MODEL.atoms[a0][1] * MODEL.atoms[a1][1]
        total += Fraction(1, 2) ** tau * (w_high - w_low)
    return total


def test_best_response_matches_exhaustive_policy_search():
    # Independent oracle: enumerate every deterministic threshold policy of
    # agent 1 over its reachable histories and score it by exact forward
    # simulation; backward induction must attain the maximum.
    net = build_line(2, directed=True)
    cfg = SolveConfig(delta=Fraction(1, 2), horizon=2)
    keys = [(0, ()), (1, ()), (1, ((0, 0),)), (2, ()), (2, ((0, 0),))]
    choices = [
        None,                        # never adopt here
        (Q, Fraction(1)),            # adopt on the high atom only
        (1 - Q, Fraction(1)),        # adopt on both atoms
    ]
    best_val = None
    for combo in itertools.product(choices, repeat=len(keys)):
        entries = {(1, k): c for k, c in zip(keys, combo) if c is not None}
        policy = ThresholdRule(entries=entries)
        val = _doubled_value(net, {0: myopic_rule(MODEL), 1: policy}, cfg.horizon)
        if best_val is None or val > best_val:
            best_val = val
    br = best_response(net, MODEL, myopic_rule(MODEL), 1, cfg)
    br_val = _doubled_value(net, {0: myopic_rule(MODEL), 1: br}, cfg.horizon)
    assert br_val == best_val


def test_solve_single_agent_behaves_myopically():
    net = build_line(1)
    cfg = SolveConfig(delta=Fraction(9, 10), horizon=3)
    report = solve_equilibrium(net, MODEL, cfg)
    assert report.converged
    assert is_equilibrium(net, MODEL, report.profile, cfg)
    table = report.profile[0]
    hit = table.lookup(0, (0, ()))
    assert hit is not None and hit[0] <= Q  # the high atom adopts at once
    assert hit[0] > 1 - Q                   # the low atom never does


def test_solve_two_line_fixed_point_and_idempotence():
    net = build_line(2, directed=True)
    cfg = SolveConfig(delta=Fraction(1, 2), horizon=3)
    report = solve_equilibrium(net, MODEL, cfg)
    assert report.converged
    assert report.checks is not None and report.checks.threshold_form_ok
    assert is_equilibrium(net, MODEL, report.profile, cfg)
    again = solve_equilibrium(net, MODEL, cfg, initial=report.profile)
    assert again.converged and again.sweeps == 1
    for i in net.agents:
        assert again.profile[i].entries == report.profile[i].entries


def test_solve_three_path_structural_checks():
    net = build_line(3)
    cfg = SolveConfig(delta=Fraction(9, 10), horizon=3, raise_horizon=True,
                      max_horizon=10)
    report = solve_equilibrium(net, MODEL, cfg)
    assert report.converged
    assert report.horizon_stabilized
    checks = report.checks
    assert checks.threshold_form_ok
    assert checks.state_monotone_ok
    assert checks.no_spontaneous_ok
    assert checks.violations == ()


def test_non_equilibrium_detected():
    net = build_line(2, directed=True)
    cfg = SolveConfig(delta=Fraction(1, 2), horizon=2)
    # an agent that never adopts forgoes the immediate gain on a high signal
    lazy = {0: myopic_rule(MODEL), 1: ThresholdRule(entries={})}
    assert not is_equilibrium(net, MODEL, lazy, cfg)


def test_verify_structure_flags_contrarian_rule():
    class Contrarian(Strategy):
        # adopts at period 0 exactly on the low atom
        def adopt_probability(self, ctx):
            return Fraction(1) if ctx.period == 0 and ctx.atom == 1 else Fraction(0)

    net = build_line(2, directed=True)
    cfg = SolveConfig(delta=Fraction(1, 2), horizon=2)
    checks = verify_structure(net, MODEL, {0: myopic_rule(MODEL), 1: Contrarian()}, cfg)
    assert not checks.threshold_form_ok
    assert not checks.state_monotone_ok
    assert any("threshold-form" in v for v in checks.violations)


def test_verify_structure_flags_spontaneous_adoption():
    spooky = ThresholdRule(entries={(None, (1, ())): (1 - Q, Fraction(1))})
    net = build_line(2, directed=True)
    cfg = SolveConfig(delta=Fraction(1, 2), horizon=2)
    checks = verify_structure(net, MODEL, {0: myopic_rule(MODEL), 1: spooky}, cfg)
    # adopting at period 1 after pure silence has no observed cue
    assert checks.no_spontaneous_ok is False
    assert any("spontaneous" in v for v in checks.violations)


def test_solved_tables_round_trip_as_text():
    net = build_line(2, directed=True)
    cfg = SolveConfig(delta=Fraction(1, 2), horizon=3)
    report = solve_equilibrium(net, MODEL, cfg)
    for i in net.agents:
        table = report.profile[i]
        back = ThresholdRule.from_text(table.to_text())
        assert back.entries == table.entries
