"""Exception hierarchy shared by every module; each class maps to a CLI exit code."""


class UecctError(Exception):
    exit_code = 1


class ConfigError(UecctError, ValueError):
    """Unknown keys, bad value types, schema violations, bad CLI usage."""

    exit_code = 2


class DataError(UecctError, ValueError):
    """Malformed matrix files, length mismatches, unknown codes, bad checkpoints."""

    exit_code = 3


class NumericalError(UecctError, ArithmeticError):
    """Non-finite gradients, training divergence, intractable oracle sizes."""

    exit_code = 4


def bullet_list(title: str, problems: list[str]) -> str:
    """Format several problems as one message: ``title:\\n  - a\\n  - b``."""
    return title + ":\n" + "\n".join(f"  - {p}" for p in problems)
