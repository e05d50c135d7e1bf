"""Exception types. Each carries the CLI exit code it maps to."""


class TeleauthError(Exception):
    exit_code = 1


class UsageError(TeleauthError, ValueError):
    """Bad arguments: wrong shapes, empty inputs, out-of-range sizes."""

    exit_code = 2


class ConfigurationError(TeleauthError, ValueError):
    exit_code = 2


class InvalidModelError(TeleauthError, ValueError):
    exit_code = 3


class TrainingDataError(TeleauthError, ValueError):
    exit_code = 3


class TrainingError(TeleauthError, RuntimeError):
    exit_code = 3


class ParseError(TeleauthError, ValueError):
    exit_code = 3


class SchemaError(ParseError):
    pass


class SegmentationError(TeleauthError, ValueError):
    exit_code = 3
