"""Semantic error vocabulary shared by every layer.

Inside the package errors travel as one of five semantic codes; numeric
host errnos appear only at the two boundaries (the passthrough store maps
host errors in, the kernel bridge maps codes back out).
"""

from __future__ import annotations

import enum
import errno


class ErrorCode(enum.Enum):
    NOT_FOUND = "NotFound"
    PERMISSION_DENIED = "PermissionDenied"
    QUOTA_EXCEEDED = "QuotaExceeded"
    NOT_A_DIRECTORY = "NotADirectory"
    IO_FAILURE = "IOFailure"


class EagerFSError(Exception):
    """Base class for all failures raised by stores and the shim."""

    code: ErrorCode = ErrorCode.IO_FAILURE

    def __init__(self, message: str = "", path: str | None = None):
        self.message = message
        self.path = path
        super().__init__(message if path is None else f"{message}: {path}")


class NotFound(EagerFSError):
    code = ErrorCode.NOT_FOUND


class PermissionDenied(EagerFSError):
    code = ErrorCode.PERMISSION_DENIED


class QuotaExceeded(EagerFSError):
    code = ErrorCode.QUOTA_EXCEEDED


class NotADirectory(EagerFSError):
    code = ErrorCode.NOT_A_DIRECTORY


class IOFailure(EagerFSError):
    code = ErrorCode.IO_FAILURE


_EXC_BY_CODE = {
    ErrorCode.NOT_FOUND: NotFound,
    ErrorCode.PERMISSION_DENIED: PermissionDenied,
    ErrorCode.QUOTA_EXCEEDED: QuotaExceeded,
    ErrorCode.NOT_A_DIRECTORY: NotADirectory,
    ErrorCode.IO_FAILURE: IOFailure,
}

# Host errno -> semantic code, used when a passthrough store surfaces an
# OSError.  Anything unlisted degrades to the generic I/O failure.
_CODE_BY_ERRNO = {
    errno.ENOENT: ErrorCode.NOT_FOUND,
    errno.EACCES: ErrorCode.PERMISSION_DENIED,
    errno.EPERM: ErrorCode.PERMISSION_DENIED,
    errno.EDQUOT: ErrorCode.QUOTA_EXCEEDED,
    errno.ENOSPC: ErrorCode.QUOTA_EXCEEDED,
    errno.ENOTDIR: ErrorCode.NOT_A_DIRECTORY,
}


def make_error(code: ErrorCode, message: str = "", path: str | None = None) -> EagerFSError:
    return _EXC_BY_CODE[code](message, path)


def from_errno(err: int, message: str = "", path: str | None = None) -> EagerFSError:
    code = _CODE_BY_ERRNO.get(err, ErrorCode.IO_FAILURE)
    return make_error(code, message or errno.errorcode.get(err, str(err)), path)


def from_oserror(exc: OSError, path: str | None = None) -> EagerFSError:
    return from_errno(exc.errno or errno.EIO, exc.strerror or str(exc), path)
