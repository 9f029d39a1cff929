"""Kernel bridge.

Adapts the host's user-space filesystem protocol (FUSE) to the shim: pure
marshalling, no semantics.  `FuseAdapter` follows the high-level protocol's
calling convention (dispatch through ``adapter(opname, *args)``), raises
plain OSError with translated errnos, and triggers the full drain on
unmount via `destroy`.  Everything here is testable without a kernel
mount; the optional `fusepy` dependency is imported only inside `mount`.
"""

from __future__ import annotations

import errno
import os
import stat as statmod
import subprocess
from dataclasses import dataclass, field

from .errors import EagerFSError, ErrorCode, NotFound
from .policy import EagerPolicy
from .shim import EagerShim
from .store import DirectoryStore

# Semantic code -> host errno.  This is the only place numeric error codes
# leave the package.
_ERRNO_BY_CODE = {
    ErrorCode.NOT_FOUND: errno.ENOENT,
    ErrorCode.PERMISSION_DENIED: errno.EACCES,
    ErrorCode.QUOTA_EXCEEDED: errno.EDQUOT,
    ErrorCode.NOT_A_DIRECTORY: errno.ENOTDIR,
    ErrorCode.IO_FAILURE: errno.EIO,
}


def translate_error(code: ErrorCode) -> int:
    return _ERRNO_BY_CODE[code]


class MountError(Exception):
    """Mounting could not even start (bad config, no FUSE support)."""


@dataclass
class MountConfig:
    source: str
    mountpoint: str
    policy: EagerPolicy = field(default_factory=EagerPolicy)
    big_writes: bool = True      # request the protocol's largest write size
    max_write: int = 65536
    foreground: bool = True

    def validate(self) -> None:
        src = os.path.realpath(self.source)
        mnt = os.path.realpath(self.mountpoint)
        if not os.path.isdir(src):
            raise MountError(f"source is not a directory: {self.source}")
        if not os.path.isdir(mnt):
            raise MountError(f"mount point is not a directory: {self.mountpoint}")
        if src == mnt:
            raise MountError("source and mount point must be distinct")
        st = os.stat(mnt)
        if st.st_uid != os.getuid() or statmod.S_IMODE(st.st_mode) & 0o077:
            raise MountError(
                f"mount point must be accessible only to the mounting user "
                f"(owned by uid {os.getuid()}, mode 0o700-style): {self.mountpoint}")


class FuseAdapter:
    """Protocol-facing operation table over one shim.

    The protocol host invokes operations as ``adapter(opname, *args)``;
    anything outside the registered table gets ENOSYS instead of a crash.
    Semantic errors become OSErrors with host errnos here and nowhere else.
    """

    _OPS = frozenset({
        "access", "chmod", "chown", "create", "destroy", "fallocate",
        "flush", "fsync", "fsyncdir", "getattr", "getxattr", "init", "link",
        "listxattr", "mkdir", "mknod", "open", "opendir", "read", "readdir",
        "readlink", "release", "releasedir", "removexattr", "rename",
        "rmdir", "setxattr", "statfs", "symlink", "truncate", "unlink",
        "utimens", "write",
    })

    def __init__(self, shim: EagerShim):
        self.shim = shim
        self._exit_status: int | None = None

    def __call__(self, op: str, *args):
        if op not in self._OPS:
            raise OSError(errno.ENOSYS, f"operation not supported: {op}")
        try:
            return getattr(self, op)(*args)
        except EagerFSError as exc:
            raise OSError(translate_error(exc.code), str(exc)) from exc

    # -- lifecycle ---------------------------------------------------------

    def init(self, path: str = "/"):
        return None

    def destroy(self, path: str = "/") -> None:
        """Unmount hook: blocks until every pending op has executed, then
        the ledger is re-reported and the exit status fixed."""
        ledger = self.shim.drain()
        self._exit_status = ledger.exit_status()

    def exit_status(self) -> int:
        """0 iff the ledger was empty at teardown; valid after destroy."""
        return self._exit_status if self._exit_status is not None else 0

    # -- metadata ---------------------------------------------------------

    def getattr(self, path: str, fh=None) -> dict:
        return self.shim.getattr(path).as_stat_dict()

    def readdir(self, path: str, fh=None) -> list[str]:
        return [".", ".."] + [name for name, _ in self.shim.readdir(path)]

    def readlink(self, path: str) -> str:
        return self.shim.readlink(path)

    def statfs(self, path: str) -> dict:
        return self.shim.statfs(path)

    def access(self, path: str, amode: int) -> int:
        return 0  # permission modeling is out of scope; the kernel re-checks

    # -- directories --------------------------------------------------------

    def opendir(self, path: str) -> int:
        return 0

    def releasedir(self, path: str, fh=None) -> int:
        return 0

    def fsyncdir(self, path: str, datasync, fh=None) -> int:
        return 0

    def mkdir(self, path: str, mode: int) -> None:
        self.shim.mkdir(path, mode)

    def rmdir(self, path: str) -> None:
        self.shim.rmdir(path)

    # -- files --------------------------------------------------------------

    def create(self, path: str, mode: int, fi=None) -> int:
        return self.shim.create(path, mode)

    def open(self, path: str, flags: int) -> int:
        return self.shim.open(path, flags)

    def read(self, path: str, size: int, offset: int, fh=None) -> bytes:
        return self.shim.read(path, offset, size, fh=fh)

    def write(self, path: str, data: bytes, offset: int, fh=None) -> int:
        return self.shim.write(path, data, offset)

    def truncate(self, path: str, length: int, fh=None) -> None:
        self.shim.truncate(path, length)

    def flush(self, path: str, fh=None) -> None:
        self.shim.flush(path, fh)

    def fsync(self, path: str, datasync, fh=None) -> None:
        self.shim.fsync(path, bool(datasync), fh)

    def release(self, path: str, fh=None) -> None:
        self.shim.release(path, fh)

    def unlink(self, path: str) -> None:
        self.shim.unlink(path)

    def rename(self, old: str, new: str) -> None:
        self.shim.rename(old, new)

    def symlink(self, target: str, source: str) -> None:
        # protocol convention: `target` is the new link path, `source` the
        # string it points to
        self.shim.symlink(source, target)

    def link(self, target: str, source: str) -> None:
        # `target` is the new name, `source` the existing file
        self.shim.link(source, target)

    def mknod(self, path: str, mode: int, dev=0) -> None:
        if statmod.S_IFMT(mode) not in (0, statmod.S_IFREG):
            raise OSError(errno.ENOSYS, "only regular files can be created")
        self.shim.mknod(path, statmod.S_IMODE(mode))

    def fallocate(self, path: str, mode: int, offset: int, length: int,
                  fh=None) -> None:
        if mode != 0:
            raise OSError(errno.ENOSYS, "fallocate modes not supported")
        self.shim.fallocate(path, offset, length)

    # -- attributes ---------------------------------------------------------

    def chmod(self, path: str, mode: int) -> None:
        self.shim.chmod(path, statmod.S_IMODE(mode))

    def chown(self, path: str, uid: int, gid: int) -> None:
        self.shim.chown(path, uid, gid)

    def utimens(self, path: str, times=None) -> None:
        self.shim.utimens(path, times)

    def setxattr(self, path: str, name: str, value: bytes, options,
                 position=0) -> None:
        self.shim.setxattr(path, name, value)

    def _missing_attr_errno(self, path: str) -> int:
        """Missing attribute vs missing file: the protocol distinguishes,
        our error vocabulary does not, so probe whether the node exists."""
        try:
            self.shim.getattr(path)
        except NotFound:
            return errno.ENOENT
        return errno.ENODATA

    def getxattr(self, path: str, name: str, position=0) -> bytes:
        try:
            return self.shim.getxattr(path, name)
        except NotFound as exc:
            raise OSError(self._missing_attr_errno(path), str(exc)) from exc

    def listxattr(self, path: str) -> list[str]:
        return self.shim.listxattr(path)

    def removexattr(self, path: str, name: str) -> None:
        try:
            self.shim.removexattr(path, name)
        except NotFound as exc:
            raise OSError(self._missing_attr_errno(path), str(exc)) from exc


def build_adapter(cfg: MountConfig, err_stream=None) -> FuseAdapter:
    """Everything mount() sets up except the kernel protocol itself."""
    cfg.validate()
    store = DirectoryStore(cfg.source)
    shim = EagerShim(store, cfg.policy, err_stream=err_stream)
    return FuseAdapter(shim)


def mount(cfg: MountConfig, adapter: FuseAdapter | None = None) -> FuseAdapter:
    """Mount and serve until unmounted; returns the adapter afterwards.

    Requires the optional `fusepy` dependency and kernel FUSE support;
    raises MountError when either is missing or the mount is rejected.
    """
    if adapter is None:
        adapter = build_adapter(cfg)
    else:
        cfg.validate()
    try:
        from fuse import FUSE  # fusepy: optional, imported only here
    except ImportError as exc:
        raise MountError(
            "FUSE support requires the optional 'fusepy' dependency "
            "(pip install eagerfs[fuse])") from exc
    options = {"foreground": cfg.foreground, "nothreads": False,
               "fsname": "eagerfs"}
    if cfg.big_writes:
        options["big_writes"] = True
        options["max_write"] = cfg.max_write
    try:
        FUSE(adapter, cfg.mountpoint, raw_fi=False, **options)
    except RuntimeError as exc:  # fusepy signals mount failure this way
        raise MountError(f"mount failed: {exc}") from exc
    return adapter


def unmount(mountpoint: str) -> bool:
    """Ask the host to unmount; used for orderly signal-driven teardown."""
    for cmd in (["fusermount3", "-u", mountpoint],
                ["fusermount", "-u", mountpoint],
                ["umount", mountpoint]):
        try:
            if subprocess.run(cmd, capture_output=True).returncode == 0:
                return True
        except FileNotFoundError:
            continue
    return False
