"""Exception types raised across the toolkit."""


class BimanualAugError(Exception):
    """Base class for all toolkit errors."""


# geometry
class NonPositiveDepth(BimanualAugError, ValueError):
    pass


class InvalidDepth(BimanualAugError, ValueError):
    pass


# kinematics
class ParseError(BimanualAugError):
    pass


class UnsupportedElement(ParseError):
    pass


class CycleError(ParseError):
    pass


class MissingJointValue(BimanualAugError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class NoConvergence(BimanualAugError):
    """IK gave up. ``best_q`` and ``error_history`` describe the best iterate seen."""

    def __init__(self, best_error, best_q=None, error_history=None, pos_error=None, rot_error=None):
        self.best_error = float(best_error)
        self.best_q = best_q
        self.error_history = list(error_history or [])
        self.pos_error = pos_error
        self.rot_error = rot_error
        super().__init__(
            f"IK did not converge (best error {self.best_error:.3g}, "
            f"pos {pos_error if pos_error is None else f'{pos_error:.3g}'} m, "
            f"rot {rot_error if rot_error is None else f'{rot_error:.3g}'} rad)"
        )


# registration
class DegenerateCorrespondences(BimanualAugError, ValueError):
    pass


class NoCorrespondences(BimanualAugError):
    pass


# hand retargeting
class DegenerateHand(BimanualAugError, ValueError):
    pass


class RegistrationFailed(BimanualAugError):
    pass


class SourceUnavailable(BimanualAugError):
    pass


# rendering
class MissingMesh(BimanualAugError, FileNotFoundError):
    pass


# crosspaint
class BackgroundMissing(BimanualAugError):
    pass


class NoFillAvailable(BimanualAugError):
    pass


class IkFailed(BimanualAugError):
    def __init__(self, message, side=None, pos_error=None, rot_error=None, best_q=None):
        super().__init__(message)
        self.side = side
        self.best_q = best_q
        self.pos_error = pos_error
        self.rot_error = rot_error


# dataset
class ManifestError(BimanualAugError):
    pass


class SchemaError(BimanualAugError):
    """Schema violation; ``locus`` names the offending file/frame."""

    def __init__(self, message, locus=None):
        self.locus = locus
        super().__init__(f"{locus}: {message}" if locus else message)


class MissingAction(BimanualAugError):
    pass
