"""Analytic gains, yields and error rates of a lossy channel with a 4-detector receiver."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateChannelError, DomainError
from .stats import PhotonDistribution

# Error rate of a vacuum (dark-count-only) detection; fixed by the 4-detector geometry.
E_VACUUM = 0.25

YIELD_CONVENTIONS = ("sifted", "standard")


@dataclass(frozen=True)
class ChannelParams:
    """Channel and receiver parameters.

    Attributes:
        eta: channel transmissivity, excluding the receiver.
        p_dark: dark/background click probability per detector per window.
        e_detector: probability a photon exits the wrong port of a matching-basis analyser.
        eta_detector: detector and fibre-coupling efficiency.
    """

    eta: float
    p_dark: float = 1e-5
    e_detector: float = 0.01
    eta_detector: float = 0.60

    def __post_init__(self):
        problems = self.problems()
        if problems:
            raise DomainError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        for name, lo, hi in (
            ("eta", 0.0, 1.0),
            ("p_dark", 0.0, 1.0),
            ("e_detector", 0.0, 0.5),
            ("eta_detector", 0.0, 1.0),
        ):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and lo <= value <= hi):
                out.append(f"{name}={value!r} outside [{lo}, {hi}]")
        return out

    @property
    def eta_total(self) -> float:
        return self.eta * self.eta_detector

    def with_eta(self, eta: float) -> ChannelParams:
        return ChannelParams(eta, self.p_dark, self.e_detector, self.eta_detector)


@dataclass(frozen=True)
class LinkBudget:
    """Exponential attenuation model mapping channel length to transmissivity."""

    eta0: float = 0.70
    alpha_db_per_km: float = 0.2

    def __post_init__(self):
        if not 0 < self.eta0 <= 1:
            raise DomainError(f"eta0 must lie in (0, 1], got {self.eta0}")
        if self.alpha_db_per_km < 0:
            raise DomainError(f"alpha_db_per_km must be >= 0, got {self.alpha_db_per_km}")


def transmissivity_at(budget: LinkBudget, length_km: float) -> float:
    if length_km < 0:
        raise DomainError(f"length_km must be >= 0, got {length_km}")
    return budget.eta0 * 10 ** (-budget.alpha_db_per_km * length_km / 10)


def eta_n(eta_total: float, n: int) -> float:
    """Probability that at least one of ``n`` photons is detected."""
    if not 0 <= eta_total <= 1:
        raise DomainError(f"eta_total must lie in [0, 1], got {eta_total}")
    if n < 0:
        raise DomainError(f"photon count must be >= 0, got {n}")
    return 1.0 - (1.0 - eta_total) ** n


def _check_convention(convention: str) -> None:
    if convention not in YIELD_CONVENTIONS:
        raise DomainError(f"unknown yield convention {convention!r}; use one of {YIELD_CONVENTIONS}")


def yield_n(params: ChannelParams, n: int, convention: str = "sifted") -> float:
    """Sifted detection probability given an ``n``-photon pulse.

    ``"sifted"`` is (eta_n + p_dark) / 2, the sifting half included.
    ``"standard"`` is the unsifted p_dark + eta_n - p_dark * eta_n.
    """
    _check_convention(convention)
    en = eta_n(params.eta_total, n)
    if convention == "sifted":
        return (en + params.p_dark) / 2
    return params.p_dark + en - params.p_dark * en


def _error_numerator(params: ChannelParams, en: float, convention: str) -> float:
    if convention == "sifted":
        return en * params.e_detector / 2 + (1 - en) * params.p_dark / 4
    return en * params.e_detector + (1 - en) * params.p_dark / 2


def error_n(params: ChannelParams, n: int, convention: str = "sifted") -> float:
    """Bit error rate of ``n``-photon detections; 1/4 for vacuum."""
    if n == 0:
        return E_VACUUM
    y = yield_n(params, n, convention)
    if y == 0:
        raise DegenerateChannelError(f"yield of {n}-photon pulses is zero; error rate undefined")
    return _error_numerator(params, eta_n(params.eta_total, n), convention) / y


@dataclass(frozen=True)
class GainErrorProfile:
    """Per-photon-number yields, gains and errors plus their Poisson-weighted totals."""

    mu: float
    y: np.ndarray
    q: np.ndarray
    e: np.ndarray
    q_mu: float
    e_mu: float
    convention: str = "sifted"

    @property
    def n_max(self) -> int:
        return len(self.q) - 1

    def weighted_error_residual(self) -> float:
        """E_mu * Q_mu minus the sum of Q_n * E_n."""
        return self.e_mu * self.q_mu - float(np.dot(self.q, self.e))


def gain_profile(
    source: PhotonDistribution | float,
    params: ChannelParams,
    convention: str = "sifted",
) -> GainErrorProfile:
    """Yields Y_n, gains Q_n = p_n Y_n, errors E_n and the totals Q_mu, E_mu."""
    _check_convention(convention)
    if not isinstance(source, PhotonDistribution):
        source = PhotonDistribution(float(source))
    n = np.arange(source.n_max + 1)
    en = 1.0 - (1.0 - params.eta_total) ** n
    if convention == "sifted":
        y = (en + params.p_dark) / 2
    else:
        y = params.p_dark + en - params.p_dark * en
    if np.any(y[1:] == 0):
        raise DegenerateChannelError("channel delivers no detections (eta_total = p_dark = 0)")
    e = np.empty_like(y)
    e[0] = E_VACUUM
    e[1:] = _error_numerator(params, en[1:], convention) / y[1:]
    q = source.pmf * y
    q_mu = float(q.sum())
    if q_mu == 0:
        raise DegenerateChannelError("total gain is zero; QBER undefined")
    e_mu = float(np.dot(q, e)) / q_mu
    for arr in (y, q, e):
        arr.setflags(write=False)
    return GainErrorProfile(source.mu, y, q, e, q_mu, e_mu, convention)
