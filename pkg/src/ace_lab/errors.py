"""Exception types shared across the package.

Every failure a caller can act on raises a subclass of AceLabError, so the
CLI can turn any of them into a clean exit message instead of a traceback.
ContractError covers violated preconditions; ShapeError and GraphError are
its tensor-specific refinements.
"""

from __future__ import annotations


class AceLabError(Exception):
    """Base class for all errors raised by this package."""


class ContractError(AceLabError):
    """An input violates a documented precondition."""


class ShapeError(ContractError):
    """Operands have incompatible shapes. The message names both shapes."""


class GraphError(ContractError):
    """A backward-pass contract was violated (non-scalar loss, detached latent, ...)."""


class DomainError(AceLabError):
    """A value is outside an operation's numeric domain (e.g. log of ~0)."""


class GenerationError(AceLabError):
    """Data synthesis could not satisfy its constraints within budget."""


class TrainingDiverged(AceLabError):
    """A loss became non-finite. The message carries the step index and term name."""


class AttackError(AceLabError):
    """An adversarial attack hit non-finite gradients or losses."""


class ConfigError(AceLabError):
    """An experiment config failed validation. The message lists offending keys."""


class MissingArtifactError(AceLabError):
    """A pipeline stage needs an output of an earlier stage that does not exist."""
