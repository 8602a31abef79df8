"""Exception taxonomy shared across the package.

ConfigError maps to CLI exit code 2, everything else to 3.
"""


class ConfigError(Exception):
    """Bad configuration: malformed files, inconsistent sizes, unknown keys."""


class ValidationError(Exception):
    """Runtime-value violations: dimension mismatches, non-finite inputs, bad ranges."""


class TrainingError(Exception):
    """Learning-loop failures, e.g. a non-finite PPO loss."""
