"""Exception types raised across the pipeline."""


class CredrankError(Exception):
    """Base class for every error the pipeline raises on bad input."""


class ParseError(CredrankError, ValueError):
    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class EmptyLexiconError(CredrankError, ValueError):
    pass


class DuplicateKeyError(CredrankError, ValueError):
    def __init__(self, key, lines):
        self.key = key
        self.lines = tuple(lines)
        where = " and ".join(str(n) for n in self.lines)
        super().__init__(f"duplicate id {key!r} on lines {where}")


class UnknownCompanyError(CredrankError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DegenerateNormalizationError(CredrankError, ValueError):
    """Min-max normalization over a set whose values are all equal."""


class ZeroMentionError(CredrankError, ValueError):
    pass


class ShapeError(CredrankError, ValueError):
    pass


class ArtifactError(CredrankError):
    """A pipeline stage found a missing or mismatched upstream artifact."""

    def __init__(self, stage, message):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")
