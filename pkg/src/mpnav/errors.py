"""Exception hierarchy.

``ValidationError`` subclasses signal bad input data (CLI exit code 1);
``ClientError`` and ``OSError`` signal unreachable services or I/O trouble
(CLI exit code 2).
"""


class MpnavError(Exception):
    pass


class ValidationError(MpnavError, ValueError):
    pass


# instructions
class EmptyInstruction(ValidationError):
    pass


class SpanOutOfRange(ValidationError):
    pass


class OverlappingSpans(ValidationError):
    pass


class UnsortedSpans(ValidationError):
    pass


class EmptyPath(ValidationError):
    pass


class RepeatedPathNode(ValidationError):
    pass


class InvalidBoundingBox(ValidationError):
    pass


class DuplicatePhraseIndex(ValidationError):
    pass


class InvalidPhraseIndex(ValidationError):
    pass


class SettingViolation(ValidationError):
    pass


# alignment
class EmptyCandidateSet(ValidationError):
    def __init__(self, phrase_index):
        super().__init__(f"phrase {phrase_index} has no candidates")
        self.phrase_index = phrase_index


class SearchSpaceTooLarge(ValidationError):
    pass


class EmptySelection(ValidationError):
    pass


# graphs and metrics
class UnknownNode(ValidationError):
    def __init__(self, node_id):
        super().__init__(f"unknown node {node_id!r}")
        self.node_id = node_id


class NotAdjacent(ValidationError):
    pass


class TrajectoryStartMismatch(ValidationError):
    pass


class EmptyResultSet(ValidationError):
    pass


# pipeline and io
class InvalidSpanFromClient(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, line, reason, path=None):
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {reason}")
        self.line = line
        self.reason = reason
        self.path = path


class ClientError(MpnavError):
    pass


class ClientUnavailable(ClientError):
    pass
