"""Key-rate formulas against an independent 50-digit implementation, plus optimizer behaviour."""

import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdqkd.calibration import KEYRATE_CALIBRATION
from cdqkd.channel import ChannelParams, gain_profile
from cdqkd.errors import DomainError
from cdqkd.keyrates import (
    default_mu_grid,
    key_rate_report,
    optimal_mu,
    privacy_term,
    rate_at,
    rate_cd,
    rate_decoy,
    rate_gllp,
    rate_ideal,
)
from cdqkd.stats import CdCoefficients

CAL = KEYRATE_CALIBRATION


@pytest.mark.parametrize(
    "channel, f_ec, expected",
    [
        (CAL.channel, 1.16, (0.049776856562284361, 0.030648154575352662, 0.029052410567831524)),
        (ChannelParams(0.70), 1.22, (0.037584818499669324, 0.022357951668779289, 0.021655063511773062)),
    ],
)
def test_rates_against_high_precision(channel, f_ec, expected):
    p = gain_profile(0.41, channel)
    got = (rate_cd(p, f_ec=f_ec), rate_decoy(p, f_ec=f_ec), rate_gllp(p, f_ec=f_ec))
    assert got == pytest.approx(expected, rel=1e-12)


def test_ideal_rate():
    assert rate_ideal(0.0) == 1.0
    assert rate_ideal(0.11) == pytest.approx(1 - 2 * 0.499915958164528)
    assert rate_ideal(0.2) == 0.0
    assert rate_ideal(0.2, raw=True) < 0
    with pytest.raises(DomainError):
        rate_ideal(1.5)


def test_privacy_term_zero_above_half():
    assert privacy_term(0.5) == 0.0
    assert privacy_term(0.7) == 0.0
    assert privacy_term(0.0) == 1.0


def test_custom_coefficients_reduce_to_decoy():
    p = gain_profile(0.41, CAL.channel)
    decoy_like = CdCoefficients(Fraction(1, 2), Fraction(0), Fraction(0))
    assert rate_cd(p, decoy_like, f_ec=1.2, raw=True) == pytest.approx(rate_decoy(p, f_ec=1.2, raw=True))


@given(st.floats(0.01, 2.0), st.floats(1e-6, 1.0), st.floats(0.0, 0.1))
def test_cd_never_below_decoy(mu, eta, e_det):
    p = gain_profile(mu, ChannelParams(eta, 1e-6, e_det, 1.0))
    assert rate_cd(p, raw=True) >= rate_decoy(p, raw=True) - 1e-15


def test_report_flags_no_key_far_away():
    far = CAL.channel.with_eta(1e-7)
    r = key_rate_report(gain_profile(0.41, far), f_ec=CAL.f_ec)
    assert r.r_decoy == 0.0 and "decoy" in r.no_key
    near = key_rate_report(gain_profile(0.41, CAL.channel), f_ec=CAL.f_ec)
    assert near.no_key == frozenset()
    assert len(near.q_n) == 5
    assert not near.gllp_arg_clamped


def test_rate_at_zero_mu():
    assert rate_at("cd", 0.0, CAL.channel) == 0.0


def test_optimal_mu_refines_inside_grid():
    coarse = optimal_mu("decoy", CAL.channel, default_mu_grid(20), f_ec=CAL.f_ec)
    fine = optimal_mu("decoy", CAL.channel, f_ec=CAL.f_ec)
    assert coarse.mu == pytest.approx(fine.mu, abs=1e-6)
    # the refined point is a local maximum
    for d in (-1e-3, 1e-3):
        assert rate_at("decoy", fine.mu + d, CAL.channel, CAL.f_ec) <= fine.rate


def test_optimal_mu_at_boundary_returns_grid_end():
    opt = optimal_mu("cd", CAL.channel, f_ec=CAL.f_ec)
    assert opt.mu == 2.0 and opt.secure


def test_optimal_mu_without_key():
    opt = optimal_mu(rate_decoy, CAL.channel.with_eta(1e-9), f_ec=CAL.f_ec)
    assert math.isnan(opt.mu) and opt.rate == 0.0 and not opt.secure


@pytest.mark.parametrize("grid", [[], [0.0, 1.0], [0.5, 2.5]])
def test_optimal_mu_grid_validation(grid):
    with pytest.raises(DomainError):
        optimal_mu("cd", CAL.channel, grid)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.005, 0.7))
def test_optimizer_matches_scan(eta):
    ch = CAL.channel.with_eta(eta)
    grid = np.linspace(0.002, 2.0, 1000)
    scan = grid[int(np.argmax([rate_at("decoy", m, ch, CAL.f_ec) for m in grid]))]
    assert optimal_mu("decoy", ch, f_ec=CAL.f_ec).mu == pytest.approx(scan, abs=1.5e-3)
