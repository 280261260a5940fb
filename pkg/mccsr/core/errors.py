"""
Module responsible for designating custom errors for input
validation throughout the super-resolution library.

Every error derives from ColorSRError so that the command layer can
separate data/format failures from usage failures.
"""


class ColorSRError(Exception):
    """Base class of every error raised by the mccsr library."""


class ColorSpaceError(ColorSRError):
    """
    Raised when an image carries the wrong color-space tag.

    Attributes:
        expected: The tag the operation requires.
        actual: The tag found on the image.
    """
    def __init__(self, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(
            f"Expected an image in the {expected} color space "
            f"(got {actual})."
        )


class DimensionMismatchError(ColorSRError):
    """
    Raised when two operands do not agree in shape.

    Conditions:
        - Images of different sizes compared or combined.
        - Dictionaries, codes or signals with incompatible dimensions.
    """
    def __init__(self, what, expected, actual):
        self.what = what
        super().__init__(
            f"Dimension mismatch for {what}: expected {expected}, "
            f"got {actual}."
        )


class PatchGeometryError(ColorSRError):
    """
    Raised when a patch grid cannot be laid over an image.

    Conditions:
        - The patch side exceeds the image width or height.
        - The overlap is not smaller than the patch side.
    """
    def __init__(self, side, overlap, width, height):
        super().__init__(
            f"Cannot lay {side}x{side} patches with overlap {overlap} "
            f"over a {width}x{height} image."
        )


class InvalidParameterError(ColorSRError):
    """
    Raised when a numeric or categorical parameter is out of range.

    Attributes:
        name: Name of the parameter.
        value: The invalid value provided.
    """
    def __init__(self, name, value, requirement):
        self.name = name
        self.value = value
        super().__init__(
            f'The parameter "{name}" ({value!r}) must be {requirement}.'
        )


class NonFiniteValueError(ColorSRError):
    """Raised when a matrix or vector contains NaN or infinite entries."""
    def __init__(self, what):
        super().__init__(f"{what} contains non-finite entries.")


class OracleSizeError(ColorSRError):
    """Raised when the brute-force oracle is asked to enumerate too much."""
    def __init__(self, dimension, limit):
        super().__init__(
            f"Brute-force enumeration supports at most {limit} "
            f"variables (got {dimension})."
        )


class InsufficientPatchesError(ColorSRError):
    """
    Raised when too few patches are available for training.

    Conditions:
        - Fewer textured patches than requested samples.
        - Fewer samples than dictionary atoms.
    """
    def __init__(self, found, requested):
        self.found = found
        self.requested = requested
        super().__init__(
            f"Only {found} qualifying patches available, "
            f"{requested} required."
        )


class DictionaryFormatError(ColorSRError):
    """Raised when a dictionary file cannot be parsed."""
    def __init__(self, path, reason):
        super().__init__(f'Dictionary file "{path}" is invalid: {reason}.')


class DictionaryMismatchError(ColorSRError):
    """
    Raised when trained dictionaries do not fit the reconstruction
    configuration (patch side, scale or feature count).
    """
    def __init__(self, field, dictionary_value, config_value):
        super().__init__(
            f"Dictionary {field} is {dictionary_value} but the "
            f"configuration requires {config_value}."
        )
