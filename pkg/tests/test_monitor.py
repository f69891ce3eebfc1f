import itertools
import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdqkd.channel import ChannelParams
from cdqkd.errors import DegenerateConfigurationError, DomainError
from cdqkd.monitor import (
    TABLE3_HEADER,
    CoincidenceExpectation,
    abort_test,
    expected_coincidences,
    pattern_probs,
    pattern_probs_given_n,
    sifted_expectation,
    table3_report,
    write_table3,
)
from cdqkd.sim import CoincidenceStats, EveStrategy


def _landing(state: str, e: float) -> list[float]:
    """Alice-frame slot probabilities built from the receiver rules, not from the package."""
    half = 0.5
    if state == "aligned":
        matching = [(1 - e), e, 0.0, 0.0]
        other = [0.0, 0.0, 0.5, 0.5]
    else:
        v = 0 if state == "conj0" else 1
        matching = [0.5, 0.5, 0.0, 0.0]
        other = [0.0, 0.0, (1 - e) if v == 0 else e, e if v == 0 else (1 - e)]
    return [half * a + half * b for a, b in zip(matching, other)]


def brute_force(m: int, survival: float, state: str, e: float, p_dark: float) -> np.ndarray:
    out = np.zeros(16)
    land = _landing(state, e)
    outcomes = [(None, 1 - survival)] + [(j, survival * land[j]) for j in range(4)]
    for route in itertools.product(outcomes, repeat=m):
        prob = math.prod(p for _, p in route)
        mask = 0
        for j, _ in route:
            if j is not None:
                mask |= 1 << j
        for dark in range(16):
            k = bin(dark).count("1")
            out[mask | dark] += prob * p_dark**k * (1 - p_dark) ** (4 - k)
    return out


def oracle_given_n(n: int, ch: ChannelParams, eve: EveStrategy | None) -> np.ndarray:
    s = ch.eta * ch.eta_detector
    args = (ch.e_detector, ch.p_dark)
    if eve is None or n == 0:
        return brute_force(n, s, "aligned", *args)
    if eve.kind == "intercept_resend":
        f = eve.fraction
        return (1 - f) * brute_force(n, s, "aligned", *args) + f * (
            0.5 * brute_force(1, s, "aligned", *args)
            + 0.25 * brute_force(1, s, "conj0", *args)
            + 0.25 * brute_force(1, s, "conj1", *args)
        )
    m = max(n - 1, 0)
    if eve.max_forward is not None:
        m = min(m, eve.max_forward)
    return brute_force(m, eve.forward_eta * ch.eta_detector, "aligned", *args)


CHANNELS = [
    ChannelParams(0.7),
    ChannelParams(0.3, p_dark=0.05, e_detector=0.1, eta_detector=0.9),
    ChannelParams(1.0, p_dark=0.0, e_detector=0.0, eta_detector=1.0),
]
EVES = [None, EveStrategy.intercept_resend(1.0), EveStrategy.intercept_resend(0.3), EveStrategy.pns(), EveStrategy.pns(0.8, 1)]


@pytest.mark.parametrize("ch", CHANNELS)
@pytest.mark.parametrize("eve", EVES)
@pytest.mark.parametrize("n", [0, 1, 2, 3, 4, 5])
def test_enumeration_matches_brute_force(ch, eve, n):
    assert np.allclose(pattern_probs_given_n(n, ch, eve), oracle_given_n(n, ch, eve), atol=1e-14, rtol=0)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.0, 1.0), st.floats(0.0, 0.2), st.floats(0.0, 0.5))
def test_pattern_distribution_normalised(mu, eta, p_dark, e_det):
    p = pattern_probs(mu, ChannelParams(eta, p_dark, e_det, 1.0))
    assert p.min() >= 0
    assert p.sum() == pytest.approx(1.0, abs=1e-9)


def test_single_photon_without_darks_never_coincides():
    p = pattern_probs_given_n(1, ChannelParams(0.9, p_dark=0.0))
    assert p[[b for b in range(16) if bin(b).count("1") >= 2]].sum() == pytest.approx(0.0, abs=1e-14)


def test_expectation_scales_with_pulses():
    one = expected_coincidences(0.41, ChannelParams(0.7), 1)
    many = expected_coincidences(0.41, ChannelParams(0.7), 1000)
    assert many.expected_total == pytest.approx(1000 * one.expected_total)
    assert many.expected_2fold == pytest.approx(many.expected_same_basis_2fold + many.expected_conjugate_2fold)
    assert isinstance(many.expected_total, float)
    with pytest.raises(DomainError):
        expected_coincidences(0.41, ChannelParams(0.7), -1)


def test_dead_channel_expects_nothing():
    exp = expected_coincidences(0.41, ChannelParams(0.0, p_dark=0.0), 10**6)
    assert exp.expected_total == 0.0 and exp.expected_singles == 0.0


def test_sifted_expectation_intercept_resend():
    ch = ChannelParams(0.7, p_dark=0.0, e_detector=0.02, eta_detector=1.0)
    _, e = sifted_expectation(0.41, ch, EveStrategy.intercept_resend())
    assert e == pytest.approx(0.25 + 0.02 / 2, abs=1e-12)
    # without Eve the QBER is E_det up to same-arm double clicks of 3+ photon pulses
    _, e0 = sifted_expectation(0.41, ch)
    assert 0.02 < e0 < 0.0201


def _exp(total_mean: float) -> CoincidenceExpectation:
    return CoincidenceExpectation(
        n_pulses=1,
        expected_same_basis_2fold=0.0,
        expected_conjugate_2fold=total_mean,
        expected_3fold=0.0,
        expected_4fold=0.0,
        expected_singles=0.0,
        per_pulse=np.zeros(16),
    )


def test_abort_z_score_and_verdicts():
    exp = _exp(10_000.0)
    ok = abort_test(exp, CoincidenceStats(conjugate_2fold=10_300))
    assert ok.z_score == pytest.approx(3.0) and not ok.abort
    high = abort_test(exp, CoincidenceStats(conjugate_2fold=10_600))
    assert high.abort and high.verdict == "abort"
    assert not abort_test(exp, CoincidenceStats(conjugate_2fold=10_600), sided="lower").abort
    assert abort_test(exp, CoincidenceStats(conjugate_2fold=9_400), sided="lower").abort
    assert abort_test(exp, CoincidenceStats(conjugate_2fold=10_300), threshold_sigma=2.0).abort


def test_abort_tallies():
    exp = _exp(100.0)
    d = abort_test(exp, CoincidenceStats(conjugate_2fold=100, threefold=50), tally="twofold")
    assert d.z_score == 0 and d.tally == "twofold"
    assert d.per_class_z["total"] == pytest.approx(5.0)
    with pytest.raises(DomainError):
        abort_test(exp, CoincidenceStats(), tally="singles")
    with pytest.raises(DomainError):
        abort_test(exp, CoincidenceStats(), sided="upper")


def test_zero_variance_with_counts_is_degenerate():
    with pytest.raises(DegenerateConfigurationError):
        abort_test(_exp(0.0), CoincidenceStats(conjugate_2fold=1))
    assert not abort_test(_exp(0.0), CoincidenceStats()).abort


def test_abort_logs_one_json_line(caplog):
    with caplog.at_level(logging.INFO, logger="cdqkd.monitor"):
        abort_test(_exp(100.0), CoincidenceStats(conjugate_2fold=100))
    record = json.loads(caplog.records[-1].getMessage())
    assert set(record) == {"ts", "z", "verdict", "tally"}
    assert record["verdict"] == "continue"


def test_table3_report_rows(tmp_path):
    rows = table3_report([0.13, 0.19, 0.22, 0.32, 0.41], ChannelParams(0.7, eta_detector=0.2), 100_000, seed=1)
    assert [r.mu for r in rows] == [0.13, 0.19, 0.22, 0.32, 0.41]
    assert all(r.c_act_sigma == pytest.approx(math.sqrt(r.c_act)) for r in rows)
    path = tmp_path / "t.csv"
    with open(path, "w", newline="") as fh:
        write_table3(rows, fh)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(TABLE3_HEADER) and len(lines) == 6
    with pytest.raises(DomainError):
        table3_report([], ChannelParams(0.7), 10)
