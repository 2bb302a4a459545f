"""Exception hierarchy shared across the package."""


class BienError(Exception):
    """Base class for all package-specific errors."""


class DataError(BienError):
    """Problems with corpus files, annotations, or resources."""


class MalformedTag(DataError):
    """Inline tag markup is unmatched or nested."""

    def __init__(self, message, line=None, offset=None):
        super().__init__(message)
        self.line = line
        self.offset = offset


class UnknownField(DataError):
    """A tag names a field outside the configured field set."""


class AlignmentError(DataError):
    """Annotation rows do not align with document tokens."""

    def __init__(self, message, index=None, expected=None, got=None):
        super().__init__(message)
        self.index = index
        self.expected = expected
        self.got = got


class MissingColumn(DataError):
    """A requested annotation column is absent."""


class InvalidPlan(DataError):
    """Split plan parameters are out of range for the corpus."""


class EmptyCorpus(DataError):
    """No documents found where a corpus was expected."""


class EmptyVocabulary(DataError):
    """Gazetteer construction produced no entries."""


class MissingResource(DataError):
    """A feature is enabled but its backing resource is unavailable."""


class UnknownTag(DataError):
    """A part-of-speech tag outside the known tag set (strict mode)."""


class InvalidSpec(BienError):
    """Model declaration is inconsistent (empty fields, duplicate observables)."""


class ModelFormatError(BienError):
    """Model or gazetteer file cannot be read back."""


class VersionMismatch(ModelFormatError):
    """Serialized file carries an unsupported format version."""


class ChecksumMismatch(ModelFormatError):
    """Serialized file content does not match its checksum."""


class NumericError(BienError):
    """Numerical invariants violated during inference or training."""


class ZeroProbabilityEvidence(NumericError):
    """No state path is consistent with the evidence and clamps."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InconsistentGold(DataError):
    """A document's gold tag path has zero probability under the model."""

    def __init__(self, message, doc_id=None, step=None):
        super().__init__(message)
        self.doc_id = doc_id
        self.step = step


class OverlappingSpans(DataError):
    """Gold spans assign one token to more than one field."""
