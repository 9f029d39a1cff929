"""Operation and data vocabulary shared by the shim, engine and stores."""

from __future__ import annotations

import enum
import stat as statmod
from dataclasses import dataclass


class OpKind(enum.Enum):
    # Mutating kinds; each one has an independent eager/synchronous flag.
    CREATE = "create"
    OPEN_TRUNCATING = "open-truncating"
    WRITE = "write"
    TRUNCATE = "truncate"
    FLUSH = "flush"
    RELEASE = "release"
    FSYNC = "fsync"
    MKDIR = "mkdir"
    RMDIR = "rmdir"
    UNLINK = "unlink"
    RENAME = "rename"
    SYMLINK = "symlink"
    LINK = "link"
    MKNOD = "mknod"
    CHMOD = "chmod"
    CHOWN = "chown"
    UTIMENS = "utimens"
    SETXATTR = "setxattr"
    REMOVEXATTR = "removexattr"
    FALLOCATE = "fallocate"
    # Reading kinds; never eager.
    READ = "read"
    READDIR = "readdir"
    GETATTR = "getattr"
    READLINK = "readlink"
    GETXATTR = "getxattr"
    LISTXATTR = "listxattr"
    STATFS = "statfs"


# Order matters: this is the order the CLI help lists the per-kind flags in.
MUTATION_KINDS: tuple[OpKind, ...] = (
    OpKind.CREATE,
    OpKind.OPEN_TRUNCATING,
    OpKind.WRITE,
    OpKind.TRUNCATE,
    OpKind.FLUSH,
    OpKind.RELEASE,
    OpKind.FSYNC,
    OpKind.MKDIR,
    OpKind.RMDIR,
    OpKind.UNLINK,
    OpKind.RENAME,
    OpKind.SYMLINK,
    OpKind.LINK,
    OpKind.MKNOD,
    OpKind.CHMOD,
    OpKind.CHOWN,
    OpKind.UTIMENS,
    OpKind.SETXATTR,
    OpKind.REMOVEXATTR,
    OpKind.FALLOCATE,
)

MUTATION_KIND_SET = frozenset(MUTATION_KINDS)

READ_KINDS = frozenset(OpKind) - MUTATION_KIND_SET

# Everything except bulk data transfer; the set a latency profile means by
# "metadata operations".
METADATA_KINDS = frozenset(OpKind) - {OpKind.READ, OpKind.WRITE}


@dataclass
class StoreRequest:
    """One operation for a backing store to apply.

    `paths` carries every path the operation touches (two for rename/link,
    one otherwise).  `args` is the kind-specific argument tuple, e.g.
    (offset, data) for a write or (mode,) for mkdir.  `seq` is filled in by
    the ordering engine for deferred requests so execution logs can be
    matched against acknowledgement order.
    """

    kind: OpKind
    paths: tuple[str, ...]
    args: tuple = ()
    seq: int | None = None


class NodeKind(enum.Enum):
    FILE = "file"
    DIR = "dir"
    SYMLINK = "symlink"


_IFMT = {
    NodeKind.FILE: statmod.S_IFREG,
    NodeKind.DIR: statmod.S_IFDIR,
    NodeKind.SYMLINK: statmod.S_IFLNK,
}


@dataclass
class AttrRecord:
    """The attribute tuple surfaced for one path."""

    kind: NodeKind
    mode: int
    size: int
    nlink: int = 1
    uid: int = 0
    gid: int = 0
    atime: float = 0.0
    mtime: float = 0.0
    ctime: float = 0.0

    def as_stat_dict(self) -> dict[str, float | int]:
        """Shape expected by FUSE getattr handlers."""
        return {
            "st_mode": _IFMT[self.kind] | statmod.S_IMODE(self.mode),
            "st_nlink": self.nlink,
            "st_size": self.size,
            "st_uid": self.uid,
            "st_gid": self.gid,
            "st_atime": self.atime,
            "st_mtime": self.mtime,
            "st_ctime": self.ctime,
        }

    def copy(self) -> "AttrRecord":
        return AttrRecord(**self.__dict__)
