"""Exception hierarchy shared across the harness."""

from __future__ import annotations


class HarnessError(Exception):
    """Base class for every error raised by vlnharness."""


# navigation graph / simulator
class GraphError(HarnessError):
    pass


class MalformedDocument(GraphError):
    pass


class AsymmetricAdjacency(GraphError):
    pass


class UnknownNodeReference(GraphError):
    pass


class MissingObservation(GraphError):
    pass


class IsolatedNode(GraphError):
    pass


class IllegalMove(GraphError):
    pass


class Disconnected(GraphError):
    pass


# datasets
class DatasetError(HarnessError):
    pass


class MalformedRecord(DatasetError):
    pass


class PathNotInGraph(DatasetError):
    pass


class PlaceholderLost(DatasetError):
    """A translation dropped an identifier token present in the source text."""

    def __init__(self, source: str, translated: str, missing: list[str]):
        self.source = source
        self.translated = translated
        self.missing = missing
        super().__init__(f"translation dropped identifier(s) {missing!r}")


class MissingCounterpart(DatasetError):
    pass


class StructuralMismatch(DatasetError):
    pass


class LanguageMismatch(HarnessError):
    pass


# language-model backends
class BackendFailure(HarnessError):
    pass


class TransportFailure(BackendFailure):
    pass


class RateLimited(BackendFailure):
    pass


class ContextOverflow(BackendFailure):
    pass


# prompting / scoring
class EmptyCandidates(HarnessError):
    pass


class EmptySuite(HarnessError):
    pass


class ConfigError(HarnessError):
    pass
