"""Exception taxonomy.

Three families, mapped to CLI exit codes: validation errors (bad flags,
bad manifests, bad configs) exit 1, data errors (corrupt or inconsistent
files, degenerate inputs, empty retained sets) exit 2, and gradient
verification failures exit 3.
"""


class ResadaptError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 2


class ValidationError(ResadaptError):
    """Caller-side misuse: bad arguments, configs, or manifests."""

    exit_code = 1


class DataError(ResadaptError):
    """Runtime data problem: corrupt files, inconsistent shapes, empty sets."""

    exit_code = 2


class ConfigInvalid(ValidationError):
    pass


class MalformedTemplate(ValidationError):
    pass


class ManifestInvalid(ValidationError):
    pass


class MissingLabels(ValidationError):
    pass


class DimMismatch(DataError):
    pass


class DegenerateVector(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyEvaluation(DataError):
    pass


class DomainIndexOutOfRange(DataError):
    pass


class NoRetainedSamples(DataError):
    """Every candidate fell below the confidence threshold."""

    def __init__(self, gamma, max_confidence=None):
        self.gamma = gamma
        self.max_confidence = max_confidence
        if max_confidence is None:
            msg = f"no samples retained at gamma={gamma} (no candidates)"
        else:
            msg = (
                f"no samples retained at gamma={gamma}; "
                f"max observed confidence was {max_confidence:.6f}"
            )
        super().__init__(msg)


class BadMagic(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class TruncatedFile(DataError):
    pass


class SizeMismatch(DataError):
    pass


class NonFinitePayload(DataError):
    pass


class MissingDomainTable(DataError):
    pass


class GradientMismatch(ResadaptError):
    """Analytic gradient disagrees with the finite-difference reference."""

    exit_code = 3

    def __init__(self, message, worst=None):
        super().__init__(message)
        self.worst = worst
