"""Domain exceptions shared across the package."""


class FormseqError(Exception):
    """Base class for all formseq domain errors."""


class MalformedDocument(FormseqError):
    """Input JSON document cannot be mapped onto the form schema."""


class UnknownBlockType(FormseqError):
    """Block type string is not one of the eight known types."""


class InvalidForm(FormseqError):
    """Form fails validation; carries the violation report."""

    def __init__(self, violations):
        super().__init__("; ".join(violations))
        self.violations = list(violations)


class EmptyCorpus(FormseqError):
    """Corpus operation received no forms."""


class InvalidTokenId(FormseqError):
    """Token id outside the vocabulary."""


class MalformedSequence(FormseqError):
    """Token sequence violates the serialization grammar."""


class AnnotationMismatch(FormseqError):
    """Re-derived token annotations disagree with the carried ones."""


class ContextOverflow(FormseqError):
    """Task context cannot fit the maximum source length."""


class DegenerateRow(FormseqError):
    """An attention row has no allowed key (all entries -inf)."""


class EmptyLossSupport(FormseqError):
    """Loss has no non-padding positions to average over."""


class EmptyInput(FormseqError):
    """Metric or evaluation received an empty input."""


class MissingCheckpoint(FormseqError):
    """A required checkpoint file does not exist."""
