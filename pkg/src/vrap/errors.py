"""Exception hierarchy shared by the library and the CLI."""


class VrapError(Exception):
    """Base class for every error raised by this package."""


class InvalidPlacementError(VrapError, ValueError):
    pass


class ShapeMismatchError(VrapError, ValueError):
    pass


class DomainError(VrapError, ValueError):
    """A parameter lies outside the domain an operation is defined on."""


class EmptyDatasetError(VrapError, ValueError):
    pass


class DegenerateGridError(VrapError, ValueError):
    """The PIR placement grid has a zero-sized axis."""


class UnsupportedModelError(VrapError):
    pass


class ZeroMassError(VrapError, ValueError):
    pass


class MissingWeightsError(VrapError, FileNotFoundError):
    pass


class DatasetMissingError(VrapError, FileNotFoundError):
    pass


class AccuracyGateError(VrapError):
    """A trained classifier did not reach the required clean accuracy."""

    def __init__(self, accuracy: float, required: float):
        super().__init__(f"clean accuracy {accuracy:.4f} below required {required:.2f}")
        self.accuracy = accuracy
        self.required = required


class ConfigError(VrapError, ValueError):
    pass


class BundleCorruptError(VrapError):
    pass
