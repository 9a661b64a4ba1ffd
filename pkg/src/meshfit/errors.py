"""Exception types shared across the package."""


class MeshFitError(Exception):
    """Base class for all errors raised by this package."""


class MeshIOError(MeshFitError):
    """File could not be parsed. Carries the offending line number when known."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        prefix = ""
        if path is not None:
            prefix += f"{path}"
        if line is not None:
            prefix += f":{line}"
        if prefix:
            message = f"{prefix}: {message}"
        super().__init__(message)


class ValidationError(MeshFitError):
    """Input data violates a structural requirement (bad index, empty region, ...)."""


class DegenerateFrameError(MeshFitError):
    """Region normals cancel out; the caller must supply a normal explicitly."""


class DegenerateRotationError(MeshFitError):
    """6D rotation inputs are too close to parallel/zero to orthonormalize."""


class InversionError(MeshFitError):
    """A deformation Jacobian lost positive determinant."""

    def __init__(self, face_index, det):
        self.face_index = face_index
        self.det = det
        super().__init__(f"jacobian of face {face_index} has det {det:.3e} <= 1e-9")


class ContractViolationError(MeshFitError):
    """A stage received input that an upstream stage was required to certify."""


class SamplingError(MeshFitError):
    """Candidate sampling could not find any non-intersecting transform."""
