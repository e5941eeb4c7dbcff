"""Exception types shared across the pipeline."""


class PosePipeError(Exception):
    """Base class for every error raised by this package."""


# -- storage ---------------------------------------------------------------

class NotFound(PosePipeError):
    pass


class DuplicateKey(PosePipeError):
    pass


class ChecksumMismatch(PosePipeError):
    """The on-disk payload no longer matches its recorded digest."""


class StorageFull(PosePipeError):
    pass


class StoreRootUnwritable(PosePipeError):
    pass


class ProbeFailed(PosePipeError):
    pass


class CorruptFile(PosePipeError):
    pass


# -- computed-table engine --------------------------------------------------

class CycleDetected(PosePipeError):
    pass


class UnknownParent(PosePipeError):
    pass


class DuplicateTable(PosePipeError):
    pass


class InvalidDefinition(PosePipeError):
    pass


class ForeignKeyViolation(PosePipeError):
    pass


class DuplicatePrimaryKey(PosePipeError):
    pass


# -- geometry ----------------------------------------------------------------

class NonFinite(PosePipeError):
    pass


class NotARotation(PosePipeError):
    pass


class ZeroQuaternion(PosePipeError):
    pass


class DegenerateInput(PosePipeError):
    pass


class BehindCamera(PosePipeError):
    pass


class NoMapping(PosePipeError):
    pass


# -- adapters ----------------------------------------------------------------

class UnsupportedMethod(PosePipeError):
    pass


class DuplicateMethod(PosePipeError):
    pass


class AdapterCrashed(PosePipeError):
    """An adapter process died or reported a failure mid-run."""


class ProtocolViolation(PosePipeError):
    """An adapter reply did not conform to the wire protocol."""


# -- scenes, annotation, rendering -------------------------------------------

class SpecInvalid(PosePipeError):
    pass


class InvalidSubject(PosePipeError):
    pass


class UnknownTrackId(PosePipeError):
    pass


class InsufficientData(PosePipeError):
    pass


class EncoderFailed(PosePipeError):
    pass
