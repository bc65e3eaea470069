"""Exporter errors, mapped to CLI exit codes 1 (job) and 2 (runtime)."""


class ExporterError(Exception):
    exit_code = 2


class JobInvalid(ExporterError):
    """Bad job description: templates, class list, paths."""

    exit_code = 1


class EncoderLoadFailure(ExporterError):
    """The requested encoder cannot be constructed."""


class UndecodableImage(ExporterError):
    """A file could not be decoded as an image (skipped, recorded)."""
