"""Exception hierarchy shared across the package."""

from __future__ import annotations


class ThinkstopError(Exception):
    """Base class for all package errors."""


class ConfigError(ThinkstopError):
    """A search or experiment configuration violates its invariants."""


class InvalidBudget(ConfigError):
    """A token or step budget is non-positive."""


class SpecValidation(ThinkstopError):
    """A synthetic policy spec violates an invariant; message names the first violation."""


class PolicyError(ThinkstopError):
    """Base class for failures while querying a policy."""


class TransportError(PolicyError):
    """Network-level failure talking to a remote policy.

    ``retryable`` distinguishes transient faults (connection reset, timeout)
    from permanent ones (authentication rejection).
    """

    def __init__(self, message: str, *, kind: str = "network", retryable: bool = True):
        super().__init__(message)
        self.kind = kind
        self.retryable = retryable


class RemoteCapabilityExceeded(PolicyError):
    """A query asked for more top-logprobs than the endpoint can report."""


class EmptyCandidate(ThinkstopError):
    """An operation that needs at least one generated token got an empty candidate."""


class ShapeMismatch(ThinkstopError):
    """Aligned arrays (old/new log-probs, ratios vs. advantages) differ in shape."""


class GroupTooSmall(ThinkstopError):
    """Advantage normalization needs a group of at least two rewards."""


class VerifierError(ThinkstopError):
    """A gold answer cannot be interpreted by the requested verifier."""


class IngestError(ThinkstopError):
    """A problem file is malformed; ``line`` is the offending 1-based line number."""

    def __init__(self, message: str, *, line: int | None = None):
        super().__init__(message)
        self.line = line


class EmptyResponse(ThinkstopError):
    """A metric over response text received an empty response."""


class ZeroLength(ThinkstopError):
    """Token efficiency is undefined for a non-positive mean length."""


class EmptyGrid(ThinkstopError):
    """A result grid with no runs or no problems has no mean accuracy."""


class NoObservations(ThinkstopError):
    """Rank-ratio statistics need at least one end-of-thinking observation."""


class BindError(ThinkstopError):
    """The mock inference server could not bind its port."""
