"""Coincidence-detection BB84 with weak coherent pulses: analytic key rates and Monte Carlo."""

__version__ = "0.1.0"

from .channel import ChannelParams, GainErrorProfile, LinkBudget, gain_profile, transmissivity_at
from .errors import ConfigError, DegenerateChannelError, DegenerateConfigurationError, DomainError
from .keyrates import key_rate_report, optimal_mu, rate_cd, rate_decoy, rate_gllp, rate_ideal
from .monitor import abort_test, expected_coincidences, table3_report
from .sim import CoincidenceStats, EveStrategy, SimResult, run_simulation, tally_coincidences
from .stats import PhotonDistribution, SourceParams, binary_entropy, cd_coefficients, poisson_pmf, splitting_table

__all__ = [
    "ChannelParams",
    "CoincidenceStats",
    "ConfigError",
    "DegenerateChannelError",
    "DegenerateConfigurationError",
    "DomainError",
    "EveStrategy",
    "GainErrorProfile",
    "LinkBudget",
    "PhotonDistribution",
    "SimResult",
    "SourceParams",
    "abort_test",
    "binary_entropy",
    "cd_coefficients",
    "expected_coincidences",
    "gain_profile",
    "key_rate_report",
    "optimal_mu",
    "poisson_pmf",
    "rate_cd",
    "rate_decoy",
    "rate_gllp",
    "rate_ideal",
    "splitting_table",
    "table3_report",
]
