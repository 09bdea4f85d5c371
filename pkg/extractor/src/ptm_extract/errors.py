class ExtractError(Exception):
    pass


class AudioDecodeError(ExtractError):
    """Audio file unreadable or malformed."""


class DimMismatchError(ExtractError):
    """A model produced a different width than its registry entry promises."""


class AlignmentError(ExtractError):
    """Banks fed to the manifest builder are not row-aligned."""
