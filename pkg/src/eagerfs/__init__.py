"""eagerfs: a write-behind filesystem shim.

Mutating operations are acknowledged immediately and executed
asynchronously in per-path order against a backing store; reads flush the
affected path first.  Failures of already-acknowledged operations are
ledgered and reported to stderr twice: once when they happen and once at
teardown, which also drives the process exit status.
"""

from .engine import Engine, ErrorLedger, LedgerRecord, PendingOp, ThrottleGate
from .errors import (
    EagerFSError,
    ErrorCode,
    IOFailure,
    NotADirectory,
    NotFound,
    PermissionDenied,
    QuotaExceeded,
)
from .ops import AttrRecord, NodeKind, OpKind, StoreRequest
from .policy import EagerPolicy
from .shim import AttrCache, EagerShim
from .store import DirectoryStore, ExecLog, FaultRule, MemoryStore, Store

__version__ = "0.1.0"

__all__ = [
    "AttrCache",
    "AttrRecord",
    "DirectoryStore",
    "EagerFSError",
    "EagerPolicy",
    "EagerShim",
    "Engine",
    "ErrorCode",
    "ErrorLedger",
    "ExecLog",
    "FaultRule",
    "IOFailure",
    "LedgerRecord",
    "MemoryStore",
    "NodeKind",
    "NotADirectory",
    "NotFound",
    "OpKind",
    "PendingOp",
    "PermissionDenied",
    "QuotaExceeded",
    "Store",
    "StoreRequest",
    "ThrottleGate",
    "__version__",
]
