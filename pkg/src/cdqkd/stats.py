"""Photon statistics, binary entropy and beam-splitter combinatorics.

Everything here is pure; exact quantities (splitting probabilities and the
coincidence-detection weights) are returned as :class:`fractions.Fraction`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np

from .errors import DomainError

# Inputs to the entropy within this distance of [0, 1] are treated as rounding drift.
ENTROPY_CLAMP = 1e-12


def poisson_pmf(mu: float, n: int) -> float:
    """Probability that a pulse of mean photon number ``mu`` carries ``n`` photons.

    Evaluated in log space so large ``n`` does not overflow the factorial.

    >>> poisson_pmf(0.0, 0)
    1.0
    """
    if mu < 0 or not math.isfinite(mu):
        raise DomainError(f"mean photon number must be finite and >= 0, got {mu}")
    if n < 0 or int(n) != n:
        raise DomainError(f"photon count must be a non-negative integer, got {n}")
    n = int(n)
    if mu == 0:
        return 1.0 if n == 0 else 0.0
    return math.exp(n * math.log(mu) - mu - math.lgamma(n + 1))


def default_n_max(mu: float) -> int:
    """Series truncation order: 20 for mu <= 1, otherwise ceil(20 * mu)."""
    return 20 if mu <= 1 else int(math.ceil(20 * mu))


@dataclass(frozen=True)
class PhotonDistribution:
    """Poissonian photon-number distribution of a phase-randomised weak coherent pulse."""

    mu: float
    n_max: int | None = None

    def __post_init__(self):
        if not math.isfinite(self.mu) or self.mu < 0:
            raise DomainError(f"mu must be finite and >= 0, got {self.mu}")
        if self.n_max is None:
            object.__setattr__(self, "n_max", default_n_max(self.mu))
        if self.n_max < 3:
            raise DomainError(f"n_max must be >= 3, got {self.n_max}")

    @cached_property
    def pmf(self) -> np.ndarray:
        """Probabilities for n = 0..n_max (read-only array)."""
        out = np.array([poisson_pmf(self.mu, n) for n in range(self.n_max + 1)])
        out.setflags(write=False)
        return out

    @property
    def tail_mass(self) -> float:
        """Probability of more than ``n_max`` photons, never negative."""
        return max(0.0, 1.0 - float(self.pmf.sum()))


@dataclass(frozen=True)
class SourceParams:
    """Weak-coherent-pulse source: mean photon number and repetition rate."""

    mu: float
    rep_rate_hz: float = 80e6

    def __post_init__(self):
        if not math.isfinite(self.mu) or self.mu < 0:
            raise DomainError(f"mu must be finite and >= 0, got {self.mu}")
        if not self.rep_rate_hz > 0:
            raise DomainError(f"rep_rate_hz must be > 0, got {self.rep_rate_hz}")

    def distribution(self, n_max: int | None = None) -> PhotonDistribution:
        return PhotonDistribution(self.mu, n_max)


def binary_entropy(x: float) -> float:
    """Binary Shannon entropy in bits, with 0 log 0 = 0.

    Values within 1e-12 outside [0, 1] are clamped; anything further is an error.
    """
    if not (-ENTROPY_CLAMP <= x <= 1 + ENTROPY_CLAMP):
        raise DomainError(f"binary entropy needs 0 <= x <= 1, got {x}")
    if x <= 0 or x >= 1:
        return 0.0
    return -x * math.log2(x) - (1 - x) * math.log2(1 - x)


def splitting_probability(n: int, k: int) -> Fraction:
    """Chance that ``k`` of ``n`` photons leave the transmitted port of a balanced splitter."""
    if n < 1:
        raise DomainError(f"splitting needs n >= 1 photons, got {n}")
    if not 0 <= k <= n:
        raise DomainError(f"transmitted count must satisfy 0 <= k <= n, got k={k}, n={n}")
    return Fraction(math.comb(n, k), 2**n)


@dataclass(frozen=True)
class SplittingTable:
    """All ways ``n`` photons divide between the two splitter ports.

    ``entries`` holds ``(k_transmitted, n_minus_k_reflected, probability)``.
    """

    n: int
    entries: tuple[tuple[int, int, Fraction], ...]

    @property
    def total(self) -> Fraction:
        return sum((p for _, _, p in self.entries), Fraction(0))


def splitting_table(n: int) -> SplittingTable:
    entries = tuple((k, n - k, splitting_probability(n, k)) for k in range(n + 1))
    return SplittingTable(n, entries)


@dataclass(frozen=True)
class CdCoefficients:
    """Key-contribution weights of 1-, 2- and 3-photon pulses (sifting factor absorbed)."""

    c1: Fraction
    c2: Fraction
    c3: Fraction

    def as_floats(self) -> tuple[float, float, float]:
        return float(self.c1), float(self.c2), float(self.c3)


def contribution_weight(table: SplittingTable) -> Fraction:
    """Fraction of ``n``-photon pulses that leave a photon in the correct-basis arm.

    A split pulse always reaches both arms and contributes fully. A bunched
    pulse sits entirely in one arm, which is the correct basis half the time.
    """
    weight = Fraction(0)
    for k_t, k_r, p in table.entries:
        weight += p if (k_t and k_r) else p / 2
    return weight


def cd_coefficients() -> CdCoefficients:
    """Weights derived from the balanced-splitter tables: (1/2, 3/4, 7/8)."""
    c1, c2, c3 = (contribution_weight(splitting_table(n)) for n in (1, 2, 3))
    return CdCoefficients(c1, c2, c3)
