"""
Exception hierarchy for the iterdeconv toolkit.

Library code raises these; only the CLI turns them into exit codes.
"""


class DeconvError(ValueError):
    """Base class for every error raised by the toolkit"""


class ShapeMismatchError(DeconvError):
    """Fields that must share dimensions do not"""


class NonFiniteError(DeconvError):
    """Input contains NaN or infinity"""


class SymmetryError(DeconvError):
    """Spectrum is not conjugate symmetric, so its inverse is not real"""


class FormatError(DeconvError):
    """File content does not follow the expected format"""


class LengthMismatchError(FormatError):
    """Declared payload length differs from the bytes present"""


class VersionMismatchError(FormatError):
    """Archive version is not recognized"""


class ArchitectureMismatchError(DeconvError):
    """Denoiser layer list does not match the required architecture"""


class KernelError(DeconvError):
    """Blur kernel violates its invariants"""


class ConfigError(DeconvError):
    """Invalid configuration or flag values"""


class EmptyDatasetError(DeconvError):
    """Training was asked to run on no data"""
