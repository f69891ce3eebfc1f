"""Expected coincidence counts for a characterised channel and the abort rule.

The expectation enumerates, for every photon number, the probability of each
4-detector click pattern: photons are thinned by the channel and detector,
routed independently through the balanced splitter and the polarisation
analysers, and each detector may also dark-fire. Patterns are in the Alice
frame described in :mod:`cdqkd.sim`.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from itertools import combinations
from typing import IO, Iterable, Sequence

import numpy as np

from .channel import ChannelParams
from .errors import DegenerateConfigurationError, DomainError
from .sim import CoincidenceStats, EveStrategy, derive_seed, run_simulation
from .stats import PhotonDistribution, SourceParams

log = logging.getLogger(__name__)

TALLIES = ("total", "twofold", "threefold", "conjugate_2fold", "same_basis_2fold")

_SUBSETS = [
    [sum(1 << j for j in sub) for r in range(len(members) + 1) for sub in combinations(members, r)]
    for members in ([j for j in range(4) if m >> j & 1] for m in range(16))
]
_POP = [bin(m).count("1") for m in range(16)]


def state_slot_probs(e: float) -> dict[str, np.ndarray]:
    """Alice-frame landing probabilities of one detected photon, by its polarisation."""
    return {
        "aligned": np.array([(1 - e) / 2, e / 2, 0.25, 0.25]),
        "conj0": np.array([0.25, 0.25, (1 - e) / 2, e / 2]),
        "conj1": np.array([0.25, 0.25, e / 2, (1 - e) / 2]),
    }


def signal_pattern_probs(m: int, survival: float, slot_probs: np.ndarray) -> np.ndarray:
    """P(set of detectors hit by at least one of ``m`` photons), by inclusion-exclusion."""
    out = np.zeros(16)
    for s in range(16):
        total = 0.0
        for t in _SUBSETS[s]:
            w = sum(slot_probs[j] for j in range(4) if t >> j & 1)
            total += (-1) ** (_POP[s] - _POP[t]) * (1 - survival + survival * w) ** m
        out[s] = total
    return np.clip(out, 0.0, None)


def add_dark_counts(signal: np.ndarray, p_dark: float) -> np.ndarray:
    """Fold independent per-detector dark counts into a signal-pattern distribution."""
    out = np.zeros(16)
    for click in range(16):
        for s in _SUBSETS[click]:
            out[click] += signal[s] * p_dark ** (_POP[click] - _POP[s]) * (1 - p_dark) ** (4 - _POP[click])
    return out


def _arrivals(n: int, channel: ChannelParams, eve: EveStrategy | None):
    """(weight, photons reaching the receiver, transmissivity, polarisation) for n emitted photons."""
    if n == 0 or eve is None or eve.kind == "none":
        return [(1.0, n, channel.eta, "aligned")]
    if eve.kind == "intercept_resend":
        f = eve.fraction
        return [
            (1 - f, n, channel.eta, "aligned"),
            (f / 2, 1, channel.eta, "aligned"),
            (f / 4, 1, channel.eta, "conj0"),
            (f / 4, 1, channel.eta, "conj1"),
        ]
    m = n - 1 if n >= 2 else 0
    if eve.max_forward is not None:
        m = min(m, eve.max_forward)
    return [(1.0, m, eve.forward_eta, "aligned")]


def pattern_probs_given_n(n: int, channel: ChannelParams, eve: EveStrategy | None = None) -> np.ndarray:
    """Alice-frame click-pattern distribution for a pulse that left Alice with ``n`` photons."""
    probs = state_slot_probs(channel.e_detector)
    signal = np.zeros(16)
    for weight, m, eta, state in _arrivals(n, channel, eve):
        if weight:
            signal += weight * signal_pattern_probs(m, eta * channel.eta_detector, probs[state])
    return add_dark_counts(signal, channel.p_dark)


def pattern_probs(
    source: SourceParams | PhotonDistribution | float,
    channel: ChannelParams,
    eve: EveStrategy | None = None,
) -> np.ndarray:
    """Per-pulse click-pattern distribution, Poisson-averaged over n = 0..n_max."""
    if isinstance(source, SourceParams):
        dist = source.distribution()
    elif isinstance(source, PhotonDistribution):
        dist = source
    else:
        dist = PhotonDistribution(float(source))
    return sum(p * pattern_probs_given_n(n, channel, eve) for n, p in enumerate(dist.pmf))


def _sifting_weights() -> tuple[np.ndarray, np.ndarray]:
    masks = np.arange(16)
    match, conj = masks & 0b0011, masks & 0b1100
    keep = np.where((match != 0) & (conj != 0), 0.5, (match != 0).astype(float))
    wrong = np.where(match == 0b0010, 1.0, np.where(match == 0b0011, 0.5, 0.0))
    return keep, wrong


def sifted_expectation(
    source: SourceParams | PhotonDistribution | float,
    channel: ChannelParams,
    eve: EveStrategy | None = None,
) -> tuple[float, float]:
    """Exact (Q_mu, E_mu) of the simulator's receiver and sifting rule.

    Differs from the closed-form profile at order p_dark: here every detector
    dark-fires independently and a sifted vacuum click is a coin flip.
    """
    p = pattern_probs(source, channel, eve)
    keep, wrong = _sifting_weights()
    q = float(np.dot(p, keep))
    return q, float(np.dot(p, keep * wrong)) / q if q > 0 else 0.0


@dataclass(frozen=True)
class CoincidenceExpectation:
    """Mean coincidence counts over ``n_pulses``; counting variance equals the mean."""

    n_pulses: int
    expected_same_basis_2fold: float
    expected_conjugate_2fold: float
    expected_3fold: float
    expected_4fold: float
    expected_singles: float
    per_pulse: np.ndarray = field(repr=False)

    @property
    def expected_2fold(self) -> float:
        return self.expected_same_basis_2fold + self.expected_conjugate_2fold

    @property
    def expected_total(self) -> float:
        return self.expected_2fold + self.expected_3fold

    def expected(self, tally: str = "total") -> float:
        return {
            "total": self.expected_total,
            "twofold": self.expected_2fold,
            "threefold": self.expected_3fold,
            "conjugate_2fold": self.expected_conjugate_2fold,
            "same_basis_2fold": self.expected_same_basis_2fold,
        }[tally]

    def variance(self, tally: str = "total") -> float:
        return self.expected(tally)


def expected_coincidences(
    source: SourceParams | float,
    channel: ChannelParams,
    n_pulses: int,
    eve: EveStrategy | None = None,
) -> CoincidenceExpectation:
    """Expected 2-, 3- and 4-fold counts at Bob for ``n_pulses`` pulses.

    ``eve`` predicts the counts under an attack; the abort rule uses ``None``.
    """
    if n_pulses < 0:
        raise DomainError(f"n_pulses must be >= 0, got {n_pulses}")
    p = pattern_probs(source, channel, eve)
    pop = np.array(_POP)
    same = p[0b0011] + p[0b1100]
    return CoincidenceExpectation(
        n_pulses=n_pulses,
        expected_same_basis_2fold=float(n_pulses * same),
        expected_conjugate_2fold=float(n_pulses * (p[pop == 2].sum() - same)),
        expected_3fold=float(n_pulses * p[pop == 3].sum()),
        expected_4fold=float(n_pulses * p[15]),
        expected_singles=float(n_pulses * p[pop == 1].sum()),
        per_pulse=p,
    )


def observed(stats: CoincidenceStats, tally: str = "total") -> int:
    return {
        "total": stats.total,
        "twofold": stats.twofold,
        "threefold": stats.threefold,
        "conjugate_2fold": stats.conjugate_2fold,
        "same_basis_2fold": stats.same_basis_2fold,
    }[tally]


@dataclass(frozen=True)
class AbortDecision:
    verdict: str
    z_score: float
    threshold: float
    tally: str = "total"
    sided: str = "two-sided"
    per_class_z: dict = field(default_factory=dict)

    @property
    def abort(self) -> bool:
        return self.verdict == "abort"


def _z(actual: float, mean: float) -> float:
    if mean > 0:
        return float((actual - mean) / math.sqrt(mean))
    return 0.0 if actual == 0 else math.inf


def abort_test(
    expected: CoincidenceExpectation,
    actual: CoincidenceStats,
    threshold_sigma: float = 5.0,
    sided: str = "two-sided",
    tally: str = "total",
) -> AbortDecision:
    """Compare observed coincidences with the expectation.

    Two-sided mode aborts when |z| exceeds the threshold; ``"lower"`` aborts
    only on a deficit.
    """
    if sided not in ("two-sided", "lower"):
        raise DomainError(f"sided must be 'two-sided' or 'lower', got {sided!r}")
    if tally not in TALLIES:
        raise DomainError(f"unknown tally {tally!r}")
    mean, count = expected.expected(tally), observed(actual, tally)
    if mean <= 0 and count:
        raise DegenerateConfigurationError(f"zero expected {tally} coincidences but {count} observed")
    z = _z(count, mean)
    hit = abs(z) > threshold_sigma if sided == "two-sided" else z < -threshold_sigma
    decision = AbortDecision(
        verdict="abort" if hit else "continue",
        z_score=z,
        threshold=threshold_sigma,
        tally=tally,
        sided=sided,
        per_class_z={t: _z(observed(actual, t), expected.expected(t)) for t in TALLIES},
    )
    log.info(json.dumps({"ts": round(time.time(), 3), "z": round(z, 6), "verdict": decision.verdict, "tally": tally}))
    return decision


@dataclass(frozen=True)
class Table3Row:
    mu: float
    c_exp: float
    c_act: int
    c_act_sigma: float
    z: float


def table3_report(
    mu_list: Sequence[float],
    channel: ChannelParams,
    n_pulses: int,
    seed: int = 0,
    *,
    eve: EveStrategy | None = None,
    engine: str = "grouped",
    threads: int = 1,
) -> list[Table3Row]:
    """Expected vs simulated 2+3-fold coincidences for each mean photon number."""
    if not len(mu_list):
        raise DomainError("mu list must be nonempty")
    rows = []
    for i, mu in enumerate(mu_list):
        exp = expected_coincidences(mu, channel, n_pulses)
        sim = run_simulation(mu, channel, eve, derive_seed(seed, i), n_pulses, engine=engine, threads=threads)
        act = sim.coincidences.total
        rows.append(Table3Row(mu, exp.expected_total, act, math.sqrt(act), _z(act, exp.expected_total)))
    return rows


TABLE3_HEADER = ("mu", "c_exp", "c_act", "c_act_sigma", "z")


def write_table3(rows: Iterable[Table3Row], out: IO[str]) -> None:
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(TABLE3_HEADER)
    for r in rows:
        writer.writerow((r.mu, r.c_exp, r.c_act, r.c_act_sigma, r.z))

