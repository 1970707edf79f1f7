"""Exception types shared across the navigation stack."""


class TerraNavError(Exception):
    pass


class InvalidArgument(TerraNavError, ValueError):
    pass


class GridFormatError(TerraNavError):
    """Malformed binary file; ``offset`` is the byte where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnsupportedFormat(TerraNavError):
    pass


class UnsupportedVersion(TerraNavError):
    pass


class InsufficientSupport(TerraNavError):
    pass


class DegenerateFit(TerraNavError):
    pass


class InvalidEndpoint(TerraNavError):
    pass


class Unreachable(TerraNavError):
    pass


class InvalidScenario(TerraNavError):
    pass


class GenerationFailure(TerraNavError):
    pass
