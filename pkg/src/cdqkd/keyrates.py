"""Secret-key-rate formulas (ideal, GLLP, decoy, coincidence detection) and optimal mu search."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize_scalar

from .channel import ChannelParams, GainErrorProfile, gain_profile
from .errors import DegenerateChannelError, DomainError
from .stats import CdCoefficients, binary_entropy, cd_coefficients

Q_PASSIVE = 0.5
F_EC_DEFAULT = 1.22


def privacy_term(error_rate: float) -> float:
    """1 - H2(e), set to zero once the error rate reaches 1/2."""
    if error_rate >= 0.5:
        return 0.0
    return 1.0 - binary_entropy(error_rate)


def rate_ideal(e_b: float, raw: bool = False) -> float:
    if not 0 <= e_b <= 1:
        raise DomainError(f"QBER must lie in [0, 1], got {e_b}")
    r = 1.0 - 2.0 * binary_entropy(e_b)
    return r if raw else max(0.0, r)


def gllp_argument(profile: GainErrorProfile) -> float:
    """Error rate attributed to single photons when all errors are pinned on them."""
    q1 = profile.q[1]
    if q1 <= 0:
        raise DegenerateChannelError("single-photon gain Q_1 is zero")
    return profile.q_mu * profile.e_mu / q1


def rate_gllp(
    profile: GainErrorProfile, q: float = Q_PASSIVE, f_ec: float = F_EC_DEFAULT, raw: bool = False
) -> float:
    x = min(max(gllp_argument(profile), 0.0), 1.0)
    leak = f_ec * binary_entropy(profile.e_mu)
    r = q * profile.q_mu * (-leak + profile.q[1] / profile.q_mu * privacy_term(x))
    return r if raw else max(0.0, r)


def rate_decoy(
    profile: GainErrorProfile, q: float = Q_PASSIVE, f_ec: float = F_EC_DEFAULT, raw: bool = False
) -> float:
    """Asymptotic decoy-state rate using the true single-photon gain and error."""
    leak = profile.q_mu * f_ec * binary_entropy(profile.e_mu)
    r = q * (-leak + profile.q[1] * privacy_term(profile.e[1]))
    return r if raw else max(0.0, r)


def rate_cd(
    profile: GainErrorProfile,
    coeffs: CdCoefficients | None = None,
    f_ec: float = F_EC_DEFAULT,
    raw: bool = False,
) -> float:
    """Coincidence-detection rate: 1-, 2- and 3-photon pulses credited with weights c1..c3.

    The sifting factor lives inside the weights, so the leakage term uses c1.
    """
    if profile.n_max < 3:
        raise DomainError("profile must be populated through n = 3")
    c1, c2, c3 = (coeffs or cd_coefficients()).as_floats()
    r = -c1 * profile.q_mu * f_ec * binary_entropy(profile.e_mu)
    for c, n in ((c1, 1), (c2, 2), (c3, 3)):
        r += c * profile.q[n] * privacy_term(profile.e[n])
    return r if raw else max(0.0, r)


@dataclass(frozen=True)
class KeyRateReport:
    """All four rates for one operating point.

    Rates are clamped at zero; ``no_key`` names the formulas whose raw value was
    negative. ``gllp_arg_clamped`` marks a GLLP entropy argument outside [0, 1].
    """

    q_mu: float
    e_mu: float
    q_n: tuple[float, ...]
    e_n: tuple[float, ...]
    r_ideal: float
    r_gllp: float
    r_decoy: float
    r_cd: float
    q_factor: float = Q_PASSIVE
    f_ec: float = F_EC_DEFAULT
    no_key: frozenset[str] = field(default_factory=frozenset)
    gllp_arg_clamped: bool = False


def key_rate_report(
    profile: GainErrorProfile,
    f_ec: float = F_EC_DEFAULT,
    q: float = Q_PASSIVE,
    coeffs: CdCoefficients | None = None,
    n_report: int = 4,
) -> KeyRateReport:
    raws = {
        "ideal": rate_ideal(profile.e_mu, raw=True),
        "gllp": rate_gllp(profile, q, f_ec, raw=True),
        "decoy": rate_decoy(profile, q, f_ec, raw=True),
        "cd": rate_cd(profile, coeffs, f_ec, raw=True),
    }
    x = gllp_argument(profile)
    k = min(n_report, profile.n_max) + 1
    return KeyRateReport(
        q_mu=profile.q_mu,
        e_mu=profile.e_mu,
        q_n=tuple(float(v) for v in profile.q[:k]),
        e_n=tuple(float(v) for v in profile.e[:k]),
        r_ideal=max(0.0, raws["ideal"]),
        r_gllp=max(0.0, raws["gllp"]),
        r_decoy=max(0.0, raws["decoy"]),
        r_cd=max(0.0, raws["cd"]),
        q_factor=q,
        f_ec=f_ec,
        no_key=frozenset(name for name, r in raws.items() if r < 0),
        gllp_arg_clamped=not 0 <= x <= 1,
    )


RATE_FUNCTIONS: dict[str, Callable[..., float]] = {
    "gllp": rate_gllp,
    "decoy": rate_decoy,
    "cd": rate_cd,
}


def rate_at(
    rate_fn: Callable[..., float] | str,
    mu: float,
    params: ChannelParams,
    f_ec: float = F_EC_DEFAULT,
    convention: str = "sifted",
) -> float:
    if isinstance(rate_fn, str):
        rate_fn = RATE_FUNCTIONS[rate_fn]
    if mu <= 0:
        return 0.0
    return rate_fn(gain_profile(mu, params, convention), f_ec=f_ec)


@dataclass(frozen=True)
class OptimalMu:
    mu: float
    rate: float

    @property
    def secure(self) -> bool:
        return self.rate > 0


def default_mu_grid(n: int = 200, mu_max: float = 2.0) -> np.ndarray:
    return np.linspace(mu_max / n, mu_max, n)


def optimal_mu(
    rate_fn: Callable[..., float] | str,
    params: ChannelParams,
    mu_grid=None,
    f_ec: float = F_EC_DEFAULT,
    convention: str = "sifted",
    xtol: float = 1e-9,
) -> OptimalMu:
    """Maximise a rate over mu: grid scan, then golden-section refinement.

    Ties on the grid go to the smaller mu. When every grid rate is zero the
    result has ``mu = nan`` and ``rate = 0``.
    """
    grid = default_mu_grid() if mu_grid is None else np.sort(np.asarray(mu_grid, dtype=float))
    if grid.size == 0 or grid[0] <= 0 or grid[-1] > 2.0:
        raise DomainError("mu grid must be nonempty and lie within (0, 2]")

    def rate(mu: float) -> float:
        return rate_at(rate_fn, mu, params, f_ec, convention)

    values = np.array([rate(m) for m in grid])
    i = int(np.argmax(values))
    if values[i] <= 0:
        return OptimalMu(math.nan, 0.0)
    if i == 0 or i == grid.size - 1:
        return OptimalMu(float(grid[i]), float(values[i]))
    bracket = (grid[i - 1], grid[i], grid[i + 1])
    res = minimize_scalar(lambda m: -rate(m), bracket=bracket, method="golden", tol=xtol)
    if grid[i - 1] <= res.x <= grid[i + 1] and -res.fun >= values[i]:
        return OptimalMu(float(res.x), float(-res.fun))
    return OptimalMu(float(grid[i]), float(values[i]))
