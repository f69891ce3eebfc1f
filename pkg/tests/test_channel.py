import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from cdqkd.channel import (
    E_VACUUM,
    ChannelParams,
    LinkBudget,
    error_n,
    eta_n,
    gain_profile,
    transmissivity_at,
    yield_n,
)
from cdqkd.errors import DegenerateChannelError, DomainError
from cdqkd.stats import PhotonDistribution


def test_params_validation_lists_every_problem():
    with pytest.raises(DomainError) as exc:
        ChannelParams(eta=1.5, p_dark=-1, e_detector=0.7)
    msg = str(exc.value)
    assert "eta=1.5" in msg and "p_dark=-1" in msg and "e_detector=0.7" in msg


def test_eta_total_and_with_eta():
    ch = ChannelParams(0.7)
    assert ch.eta_total == pytest.approx(0.42)
    assert ch.with_eta(0.1).eta == 0.1
    assert ch.with_eta(0.1).eta_detector == ch.eta_detector


def test_link_budget():
    budget = LinkBudget(0.7, 0.2)
    assert transmissivity_at(budget, 0) == 0.7
    assert transmissivity_at(budget, 50) == pytest.approx(0.07)
    with pytest.raises(DomainError):
        transmissivity_at(budget, -1)
    with pytest.raises(DomainError):
        LinkBudget(0.0)


@given(st.floats(0.0, 1.0), st.integers(0, 30))
def test_eta_n_monotone_in_photons(eta, n):
    assert eta_n(eta, 0) == 0.0
    assert eta_n(eta, n + 1) >= eta_n(eta, n)


def test_yield_conventions():
    ch = ChannelParams(0.7, p_dark=1e-5, eta_detector=1.0)
    assert yield_n(ch, 1) == pytest.approx((0.7 + 1e-5) / 2)
    assert yield_n(ch, 1, "standard") == pytest.approx(1e-5 + 0.7 - 0.7e-5)
    with pytest.raises(DomainError):
        yield_n(ch, 1, "other")


def test_vacuum_error_is_quarter():
    assert error_n(ChannelParams(0.5), 0) == E_VACUUM == 0.25


def test_profile_against_high_precision():
    """Default channel at mu = 0.41, against an independent 50-digit summation to n = 20."""
    p = gain_profile(0.41, ChannelParams(0.70))
    assert p.q_mu == pytest.approx(0.079099602913836446, rel=1e-13)
    assert p.e_mu == pytest.approx(0.010015486350469986, rel=1e-13)
    assert p.q[1] == pytest.approx(0.057141647019749869, rel=1e-13)
    assert p.e[1] == pytest.approx(0.010006666507940287, rel=1e-13)
    assert p.e[2] == pytest.approx(0.01000238393032052, rel=1e-13)


def test_profile_arrays_are_frozen():
    p = gain_profile(0.41, ChannelParams(0.7))
    with pytest.raises(ValueError):
        p.q[0] = 0


def test_profile_accepts_distribution():
    p = gain_profile(PhotonDistribution(0.41, n_max=40), ChannelParams(0.7))
    assert p.n_max == 40


@given(
    st.floats(0.01, 2.0),
    st.floats(1e-4, 1.0),
    st.floats(0.0, 1e-3),
    st.floats(0.0, 0.5),
    st.sampled_from(["sifted", "standard"]),
)
def test_weighted_error_identity(mu, eta, p_dark, e_det, conv):
    p = gain_profile(mu, ChannelParams(eta, p_dark, e_det, 1.0), conv)
    assert abs(p.weighted_error_residual()) < 1e-12
    assert all(0 <= e <= 0.5 for e in p.e)


def test_degenerate_channel():
    dead = ChannelParams(0.0, p_dark=0.0)
    with pytest.raises(DegenerateChannelError):
        gain_profile(0.41, dead)
    with pytest.raises(DegenerateChannelError):
        error_n(dead, 1)


def test_dark_only_channel_has_defined_errors():
    p = gain_profile(0.41, ChannelParams(0.0, p_dark=1e-5))
    assert p.e[1] == pytest.approx(0.5)
    assert math.isfinite(p.e_mu)
