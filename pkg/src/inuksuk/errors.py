"""Exception hierarchy shared by every simulated component."""


class InuksukError(Exception):
    """Base class for all simulator errors."""


# --- self-encrypting drive ------------------------------------------------

class SedError(InuksukError):
    pass


class BadCredential(SedError):
    pass


class BadPsid(SedError):
    pass


class OverlappingRange(SedError):
    pass


class OutOfBounds(SedError):
    pass


class NoSuchRange(SedError):
    pass


class WriteLocked(SedError):
    def __init__(self, range_id):
        super().__init__(f"range {range_id} is write-locked")
        self.range_id = range_id


class ReadLocked(SedError):
    def __init__(self, range_id):
        super().__init__(f"range {range_id} is read-locked")
        self.range_id = range_id


# --- TPM ---------------------------------------------------------------------

class TpmError(InuksukError):
    pass


class BadIndex(TpmError):
    pass


class LocalityError(TpmError):
    pass


class PolicyMismatch(TpmError):
    pass


class CorruptBlob(TpmError):
    pass


class Undefined(TpmError):
    pass


class AlreadyDefined(TpmError):
    pass


# --- TEE runtime ---------------------------------------------------------------

class TeeError(InuksukError):
    pass


class SessionActive(TeeError):
    pass


class WorldSuspended(TeeError):
    pass


class ProgramFault(TeeError):
    """The launched program raised; the epilogue has already run."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# --- filesystem ----------------------------------------------------------------

class FsError(InuksukError):
    pass


class TooSmall(FsError):
    pass


class NoSpace(FsError):
    pass


class Exists(FsError):
    pass


class NotFound(FsError):
    pass


class CorruptFs(FsError):
    pass


# --- time authority ------------------------------------------------------------

class TimeError(InuksukError):
    pass


class BadSignature(TimeError):
    pass


class StaleToken(TimeError):
    pass


# --- trusted updater -------------------------------------------------------------

class UpdaterError(InuksukError):
    pass


class UnsealFailed(UpdaterError):
    pass


class AlreadyProvisioned(UpdaterError):
    pass


class Aborted(UpdaterError):
    pass


class PolicyError(UpdaterError):
    """Malformed or incomplete policy text."""

    def __init__(self, message, missing=()):
        super().__init__(message)
        self.missing = tuple(missing)
