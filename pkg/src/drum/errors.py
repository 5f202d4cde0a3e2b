"""Exception hierarchy shared across the engine."""


class DrumError(Exception):
    """Base class for all engine errors."""


class ValidationError(DrumError):
    """A value violates a structural invariant (shape, range, uniqueness)."""


class CorpusFormatError(DrumError):
    """Corpus file has bad magic bytes, version, or manifest."""


class TruncatedCorpusError(DrumError):
    """Corpus payload ends before the header-declared content."""


class DegenerateInputError(DrumError):
    """Numerically degenerate input, e.g. a zero-norm vector where cosine is undefined."""


class DegenerateGuidanceError(DrumError):
    """Guidance cannot allocate reference mass: alpha > 0 with no usable reference."""
