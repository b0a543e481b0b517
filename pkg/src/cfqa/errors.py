"""Exception types shared across the toolkit."""


class CfqaError(Exception):
    """Base class for all toolkit errors."""


class FormatError(CfqaError):
    """A file does not start with the expected magic / dtype code."""


class CorruptError(CfqaError):
    """A file's declared structure and its actual bytes disagree."""


class ShapeError(CfqaError):
    """Array shapes violate an operation's contract."""


class RangeError(CfqaError):
    """A value lies outside its permitted range."""


class ConfigError(CfqaError):
    """A codec or policy configuration is invalid."""


class DegenerateError(CfqaError):
    """The requested quantity is undefined for this input (e.g. zero norm)."""
