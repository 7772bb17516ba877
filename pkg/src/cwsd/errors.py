"""Exception hierarchy shared across the toolkit."""


class CwsdError(Exception):
    """Base class for all domain errors raised by this package."""


class DatasetFormatError(CwsdError):
    """A dataset file is missing, malformed, or internally inconsistent."""


class CacheFormatError(CwsdError):
    """An embedding cache file failed validation (magic, version, counts)."""


class ProtocolError(CwsdError):
    """The embedding provider returned a response violating the protocol."""


class TransportError(CwsdError):
    """The embedding provider could not be reached after retries."""


class TruncatedTargetError(CwsdError):
    """The provider truncated away the target token of one or more instances."""

    def __init__(self, instance_ids):
        self.instance_ids = list(instance_ids)
        super().__init__(
            "target token truncated away for instances: "
            + ", ".join(self.instance_ids)
        )


class MissingEmbeddingError(CwsdError):
    """A required instance embedding is absent from the cache."""


class TrainingError(CwsdError):
    """Linear-baseline training failed (non-finite loss, empty train set)."""


class BuildError(CwsdError):
    """Dataset construction from annotated sentences failed."""
