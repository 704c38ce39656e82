"""Error taxonomy shared by every module.

Exit-code mapping for the CLI: contract/usage problems exit 2, numeric or
runtime failures exit 3.
"""


class ShapeFuseError(Exception):
    """Base class; `exit_code` drives the CLI's process exit status."""

    exit_code = 1


class ContractError(ShapeFuseError):
    """A documented precondition was violated by the caller."""

    exit_code = 2


class ConfigError(ContractError):
    """Bad config file, unknown key, or contradictory flags."""


class FormatError(ContractError):
    """A persisted file (PVT1/PVD1/manifest) failed to parse."""


class DimensionError(ShapeFuseError):
    """Operand shapes are incompatible. Message names both shapes."""

    exit_code = 3


class NumericError(ShapeFuseError):
    """A computation produced NaN/Inf, or diverged. Message names the op."""

    exit_code = 3


class LoadError(ShapeFuseError):
    """Checkpoint/config mismatch at load time. Message names the parameter."""

    exit_code = 3
