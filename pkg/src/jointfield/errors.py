"""Exception types shared across the package.

Every error carries an ``exit_code`` so the CLI can map failures onto its
exit-code contract without a lookup table.
"""


class JointFieldError(Exception):
    exit_code = 1
    kind = "error"

    def to_dict(self):
        return {"error": self.kind, "message": str(self)}


class ValidationError(JointFieldError):
    """A document or value violates a structural or numeric invariant."""

    kind = "validation"

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)

    def to_dict(self):
        d = super().to_dict()
        if self.path:
            d["path"] = self.path
        return d


class InvalidKnotsError(ValidationError):
    kind = "invalid_knots"


class InsufficientKnotsError(ValidationError):
    kind = "insufficient_knots"


class OutOfSpanError(ValidationError):
    kind = "out_of_span"


class DegenerateRangeError(ValidationError):
    kind = "degenerate_range"


class UnknownTemplateError(ValidationError):
    kind = "unknown_template"


class UnknownLabelError(ValidationError):
    kind = "unknown_label"


class ParseError(ValidationError):
    """Malformed JSON. ``offset`` is a byte offset into the input."""

    kind = "parse"

    def __init__(self, message, offset):
        self.offset = offset
        super().__init__(f"{message} at byte {offset}")

    def to_dict(self):
        d = super().to_dict()
        d["offset"] = self.offset
        return d


class UnsupportedVersionError(ValidationError):
    kind = "unsupported_version"


class FileIOError(JointFieldError):
    exit_code = 2
    kind = "io"


class TransportError(JointFieldError):
    exit_code = 3
    kind = "network"

    def __init__(self, message, status=None):
        self.status = status
        super().__init__(f"{message} (status {status})" if status is not None else message)

    def to_dict(self):
        d = super().to_dict()
        d["status"] = self.status
        return d


class UnparseableProposalError(JointFieldError):
    exit_code = 1
    kind = "unparseable_proposal"

    def __init__(self, message, raw_text, transcript=None):
        self.raw_text = raw_text
        self.transcript = transcript
        super().__init__(message)


class IntegrationDiverged(JointFieldError):
    exit_code = 4
    kind = "diverged"

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)
