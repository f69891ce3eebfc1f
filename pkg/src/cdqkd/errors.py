"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DegenerateChannelError(ValueError):
    """A quantity is undefined because the channel delivers no detections."""


class DegenerateConfigurationError(ValueError):
    """The abort statistic cannot be formed (zero variance, nonzero count)."""


class ConfigError(ValueError):
    """Raised with every validation failure found in an experiment config."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
