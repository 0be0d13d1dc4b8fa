"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, everything else -> 3.
"""


class ShareguardError(Exception):
    pass


class DomainError(ShareguardError, ValueError):
    """An operation received values outside its domain (non-finite, wrong dims)."""


class ConfigError(ShareguardError, ValueError):
    """Invalid or degenerate configuration (unknown keys, bad bounds, ...)."""


class IllConditionedError(ShareguardError, RuntimeError):
    """A least-squares fit with ridge=0 hit rank-deficient normal equations."""
