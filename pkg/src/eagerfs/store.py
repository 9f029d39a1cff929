"""Backing stores.

Two implementations of the same single-entry-point contract:

* `MemoryStore` — a hierarchical in-memory fake with injectable latency and
  faults plus an execution log.  All concurrency experiments and the
  benchmark run against it.
* `DirectoryStore` — passthrough onto a host directory.

A store executes exactly what it is told, one request at a time per call;
ordering is the caller's problem.  Failures are raised as the semantic
error types from `errors`.
"""

from __future__ import annotations

import fnmatch
import hashlib
import os
import random
import stat as statmod
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .errors import (
    EagerFSError,
    ErrorCode,
    IOFailure,
    NotADirectory,
    NotFound,
    PermissionDenied,
    from_oserror,
    make_error,
)
from .ops import AttrRecord, NodeKind, OpKind, StoreRequest
from . import pathutil


# --------------------------------------------------------------------------
# instrumentation


@dataclass
class LogEntry:
    """One applied request, recorded in execution order."""

    request: StoreRequest
    started: float
    finished: float
    result: str  # "ok" or the semantic code name


class ExecLog:
    """Append-only record of every request a store has applied.

    Entries are appended under the store's mutation lock, so their order is
    the store's actual execution order.
    """

    def __init__(self):
        self._mu = threading.Lock()
        self._entries: list[LogEntry] = []

    def append(self, entry: LogEntry) -> None:
        with self._mu:
            self._entries.append(entry)

    def entries(self) -> list[LogEntry]:
        with self._mu:
            return list(self._entries)

    def count(self, kind: OpKind | None = None) -> int:
        with self._mu:
            if kind is None:
                return len(self._entries)
            return sum(1 for e in self._entries if e.request.kind is kind)

    def for_path(self, path: str) -> list[LogEntry]:
        path = pathutil.normalize(path)
        with self._mu:
            return [e for e in self._entries if path in e.request.paths]

    def clear(self) -> None:
        with self._mu:
            self._entries.clear()

    def __len__(self) -> int:
        with self._mu:
            return len(self._entries)


@dataclass
class FaultRule:
    """Injected failure: fire on the nth matching request (1-based).

    `kind=None` and `path_glob=None` are wildcards.  A one-shot rule fires
    once and disarms; a persistent rule fails every matching request from
    the nth onwards.
    """

    code: ErrorCode
    kind: OpKind | None = None
    path_glob: str | None = None
    nth: int = 1
    one_shot: bool = True
    message: str = "injected fault"
    _seen: int = field(default=0, repr=False)
    _spent: bool = field(default=False, repr=False)

    def matches(self, request: StoreRequest) -> bool:
        if self._spent:
            return False
        if self.kind is not None and request.kind is not self.kind:
            return False
        if self.path_glob is not None:
            if not any(fnmatch.fnmatchcase(p, self.path_glob) for p in request.paths):
                return False
        self._seen += 1
        if self._seen < self.nth:
            return False
        if self.one_shot:
            self._spent = True
        return True


class LatencyProfile:
    """Per-kind artificial delay, fixed or uniform over a range."""

    def __init__(self):
        self._ranges: dict[OpKind, tuple[float, float]] = {}

    def set(self, seconds: float | tuple[float, float], kinds: Iterable[OpKind]) -> None:
        lo, hi = (seconds, seconds) if isinstance(seconds, (int, float)) else seconds
        if lo < 0 or hi < lo:
            raise ValueError(f"bad latency range: {(lo, hi)}")
        for kind in kinds:
            self._ranges[kind] = (lo, hi)

    def clear(self) -> None:
        self._ranges.clear()

    def sample(self, kind: OpKind, rng: random.Random) -> float:
        rng_range = self._ranges.get(kind)
        if rng_range is None:
            return 0.0
        lo, hi = rng_range
        return lo if hi == lo else rng.uniform(lo, hi)


# --------------------------------------------------------------------------
# contract


class Store:
    """Single-entry-point backing store."""

    def apply(self, request: StoreRequest):
        raise NotImplementedError

    def snapshot_tree(self) -> str:
        """Stable digest of the full tree; only valid while quiescent."""
        raise NotImplementedError


def _digest_entries(entries: Iterable[tuple[str, str, int, int, str]]) -> str:
    """Collapse (path, kind, mode, size, content-hash) rows into one digest.

    Rows are sorted by path so the digest is independent of walk order; the
    root itself is not a row, so an empty tree always hashes the same.
    """
    h = hashlib.sha256()
    for path, kind, mode, size, content in sorted(entries):
        h.update(f"{path}\0{kind}\0{mode:o}\0{size}\0{content}\n".encode())
    return h.hexdigest()


def _hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


# --------------------------------------------------------------------------
# in-memory fake


class _File:
    __slots__ = ("data", "mode", "uid", "gid", "atime", "mtime", "ctime", "nlink", "xattrs")

    def __init__(self, mode: int, now: float):
        self.data = bytearray()
        self.mode = mode
        self.uid = os.getuid()
        self.gid = os.getgid()
        self.atime = self.mtime = self.ctime = now
        self.nlink = 1
        self.xattrs: dict[str, bytes] = {}


class _Dir:
    __slots__ = ("children", "mode", "uid", "gid", "atime", "mtime", "ctime", "xattrs")

    def __init__(self, mode: int, now: float):
        self.children: dict[str, object] = {}
        self.mode = mode
        self.uid = os.getuid()
        self.gid = os.getgid()
        self.atime = self.mtime = self.ctime = now
        self.xattrs: dict[str, bytes] = {}


class _Symlink:
    __slots__ = ("target", "mode", "uid", "gid", "atime", "mtime", "ctime", "xattrs")

    def __init__(self, target: str, now: float):
        self.target = target
        self.mode = 0o777
        self.uid = os.getuid()
        self.gid = os.getgid()
        self.atime = self.mtime = self.ctime = now
        self.xattrs: dict[str, bytes] = {}


def _node_kind(node) -> NodeKind:
    if isinstance(node, _Dir):
        return NodeKind.DIR
    if isinstance(node, _Symlink):
        return NodeKind.SYMLINK
    return NodeKind.FILE


class MemoryStore(Store):
    """Hierarchical in-memory POSIX-like tree.

    Paths are treated lexically: symlinks are plain nodes holding a target
    string and are never followed during lookup.  Injected latency is slept
    *before* the tree lock is taken so configured delays overlap across
    threads the way real backend latency would; fault rules are consulted
    after the delay, and the execution log is appended under the lock.
    """

    def __init__(self, seed: int = 0):
        self._mu = threading.RLock()
        self._root = _Dir(0o755, time.time())
        self._latency = LatencyProfile()
        self._faults: list[FaultRule] = []
        self._rng = random.Random(seed)
        self._rng_mu = threading.Lock()
        self.log = ExecLog()
        self._observer: Callable[[StoreRequest, str], None] | None = None

    # -- configuration ------------------------------------------------

    def set_latency(self, seconds: float | tuple[float, float],
                    kinds: Iterable[OpKind]) -> None:
        self._latency.set(seconds, kinds)

    def clear_latency(self) -> None:
        self._latency.clear()

    def add_fault(self, rule: FaultRule) -> None:
        with self._mu:
            self._faults.append(rule)

    def clear_faults(self) -> None:
        with self._mu:
            self._faults.clear()

    def set_observer(self, cb: Callable[[StoreRequest, str], None] | None) -> None:
        """Callback invoked at request entry and exit ("enter"/"exit")."""
        self._observer = cb

    # -- contract -------------------------------------------------------

    def apply(self, request: StoreRequest):
        started = time.time()
        if self._observer:
            self._observer(request, "enter")
        try:
            with self._rng_mu:
                delay = self._latency.sample(request.kind, self._rng)
            if delay > 0.0:
                time.sleep(delay)
            with self._mu:
                fault = self._match_fault(request)
                if fault is not None:
                    self.log.append(LogEntry(request, started, time.time(),
                                             fault.code.value))
                    raise make_error(fault.code, fault.message, request.paths[0])
                try:
                    result = self._execute(request)
                except EagerFSError as exc:
                    self.log.append(LogEntry(request, started, time.time(),
                                             exc.code.value))
                    raise
                self.log.append(LogEntry(request, started, time.time(), "ok"))
                return result
        finally:
            if self._observer:
                self._observer(request, "exit")

    def snapshot_tree(self) -> str:
        with self._mu:
            rows: list[tuple[str, str, int, int, str]] = []

            def walk(path: str, node) -> None:
                if isinstance(node, _Dir):
                    if path != "/":
                        rows.append((path, "dir", statmod.S_IMODE(node.mode), 0, ""))
                    for name, child in node.children.items():
                        walk(pathutil.join(path, name), child)
                elif isinstance(node, _Symlink):
                    rows.append((path, "symlink", 0o777, len(node.target),
                                 _hash_bytes(node.target.encode())))
                else:
                    rows.append((path, "file", statmod.S_IMODE(node.mode),
                                 len(node.data), _hash_bytes(bytes(node.data))))

            walk("/", self._root)
            return _digest_entries(rows)

    # -- lookup helpers ---------------------------------------------------

    def _lookup(self, path: str):
        if path == "/":
            return self._root
        node = self._root
        for part in path.strip("/").split("/"):
            if not isinstance(node, _Dir):
                raise NotADirectory("ancestor is not a directory", path)
            nxt = node.children.get(part)
            if nxt is None:
                raise NotFound("no such path", path)
            node = nxt
        return node

    def _lookup_dir(self, path: str) -> _Dir:
        node = self._lookup(path)
        if not isinstance(node, _Dir):
            raise NotADirectory("not a directory", path)
        return node

    def _parent_and_name(self, path: str) -> tuple[_Dir, str]:
        parent = pathutil.parent_of(path)
        if parent is None:
            raise IOFailure("operation on the root", path)
        return self._lookup_dir(parent), path.rsplit("/", 1)[1]

    def _match_fault(self, request: StoreRequest) -> FaultRule | None:
        for rule in self._faults:
            if rule.matches(request):
                return rule
        return None

    # -- execution --------------------------------------------------------

    def _execute(self, request: StoreRequest):
        kind, paths, args = request.kind, request.paths, request.args
        now = time.time()
        path = paths[0]

        if kind is OpKind.CREATE:
            parent, name = self._parent_and_name(path)
            existing = parent.children.get(name)
            if existing is None:
                parent.children[name] = _File(args[0] if args else 0o644, now)
            elif isinstance(existing, _File):
                existing.data = bytearray()  # create over existing truncates
                existing.mtime = now
            else:
                raise IOFailure("exists and is not a regular file", path)
            return None

        if kind is OpKind.MKNOD:
            parent, name = self._parent_and_name(path)
            if name in parent.children:
                raise IOFailure("path already exists", path)
            parent.children[name] = _File(args[0] if args else 0o644, now)
            return None

        if kind is OpKind.OPEN_TRUNCATING:
            node = self._lookup(path)
            if not isinstance(node, _File):
                raise IOFailure("not a regular file", path)
            node.data = bytearray()
            node.mtime = now
            return None

        if kind is OpKind.WRITE:
            offset, data = args
            node = self._lookup(path)
            if not isinstance(node, _File):
                raise IOFailure("not a regular file", path)
            if offset > len(node.data):
                node.data.extend(b"\0" * (offset - len(node.data)))
            node.data[offset:offset + len(data)] = data
            node.mtime = now
            return len(data)

        if kind is OpKind.READ:
            offset, length = args
            node = self._lookup(path)
            if not isinstance(node, _File):
                raise IOFailure("not a regular file", path)
            node.atime = now
            if length is None:
                return bytes(node.data[offset:])
            return bytes(node.data[offset:offset + length])

        if kind is OpKind.TRUNCATE:
            (length,) = args
            node = self._lookup(path)
            if not isinstance(node, _File):
                raise IOFailure("not a regular file", path)
            if length <= len(node.data):
                del node.data[length:]
            else:
                node.data.extend(b"\0" * (length - len(node.data)))
            node.mtime = now
            return None

        if kind is OpKind.FALLOCATE:
            offset, length = args
            node = self._lookup(path)
            if not isinstance(node, _File):
                raise IOFailure("not a regular file", path)
            end = offset + length
            if end > len(node.data):
                node.data.extend(b"\0" * (end - len(node.data)))
            return None

        if kind in (OpKind.FLUSH, OpKind.RELEASE, OpKind.FSYNC):
            self._lookup(path)  # must still exist; otherwise a no-op
            return None

        if kind is OpKind.MKDIR:
            parent, name = self._parent_and_name(path)
            if name in parent.children:
                raise IOFailure("path already exists", path)
            parent.children[name] = _Dir(args[0] if args else 0o755, now)
            return None

        if kind is OpKind.RMDIR:
            parent, name = self._parent_and_name(path)
            node = parent.children.get(name)
            if node is None:
                raise NotFound("no such path", path)
            if not isinstance(node, _Dir):
                raise NotADirectory("not a directory", path)
            if node.children:
                raise IOFailure("directory not empty", path)
            del parent.children[name]
            return None

        if kind is OpKind.UNLINK:
            parent, name = self._parent_and_name(path)
            node = parent.children.get(name)
            if node is None:
                raise NotFound("no such path", path)
            if isinstance(node, _Dir):
                raise IOFailure("is a directory", path)
            if isinstance(node, _File):
                node.nlink -= 1
            del parent.children[name]
            return None

        if kind is OpKind.RENAME:
            src, dst = paths
            if dst == src or dst.startswith(src + "/"):
                raise IOFailure("rename into own subtree", dst)
            sparent, sname = self._parent_and_name(src)
            node = sparent.children.get(sname)
            if node is None:
                raise NotFound("no such path", src)
            dparent, dname = self._parent_and_name(dst)
            existing = dparent.children.get(dname)
            if isinstance(existing, _Dir) and existing.children:
                raise IOFailure("destination directory not empty", dst)
            del sparent.children[sname]
            dparent.children[dname] = node
            return None

        if kind is OpKind.SYMLINK:
            (target,) = args
            parent, name = self._parent_and_name(path)
            if name in parent.children:
                raise IOFailure("path already exists", path)
            parent.children[name] = _Symlink(target, now)
            return None

        if kind is OpKind.READLINK:
            node = self._lookup(path)
            if not isinstance(node, _Symlink):
                raise IOFailure("not a symlink", path)
            return node.target

        if kind is OpKind.LINK:
            src, dst = paths
            node = self._lookup(src)
            if not isinstance(node, _File):
                raise IOFailure("hard links only between regular files", src)
            parent, name = self._parent_and_name(dst)
            if name in parent.children:
                raise IOFailure("path already exists", dst)
            node.nlink += 1
            parent.children[name] = node
            return None

        if kind is OpKind.CHMOD:
            (mode,) = args
            node = self._lookup(path)
            node.mode = statmod.S_IMODE(mode) | (node.mode & ~0o7777)
            node.ctime = now
            return None

        if kind is OpKind.CHOWN:
            uid, gid = args
            node = self._lookup(path)
            if uid != -1:
                node.uid = uid
            if gid != -1:
                node.gid = gid
            node.ctime = now
            return None

        if kind is OpKind.UTIMENS:
            node = self._lookup(path)
            if args and args[0] is not None:
                atime, mtime = args[0]
            else:
                atime = mtime = now
            node.atime, node.mtime = atime, mtime
            return None

        if kind is OpKind.SETXATTR:
            name, value = args
            node = self._lookup(path)
            node.xattrs[name] = bytes(value)
            return None

        if kind is OpKind.GETXATTR:
            (name,) = args
            node = self._lookup(path)
            if name not in node.xattrs:
                raise NotFound("no such attribute", path)
            return node.xattrs[name]

        if kind is OpKind.LISTXATTR:
            node = self._lookup(path)
            return sorted(node.xattrs)

        if kind is OpKind.REMOVEXATTR:
            (name,) = args
            node = self._lookup(path)
            if name not in node.xattrs:
                raise NotFound("no such attribute", path)
            del node.xattrs[name]
            return None

        if kind is OpKind.GETATTR:
            node = self._lookup(path)
            if isinstance(node, _Dir):
                size, nlink = 0, 2 + sum(isinstance(c, _Dir)
                                         for c in node.children.values())
            elif isinstance(node, _Symlink):
                size, nlink = len(node.target), 1
            else:
                size, nlink = len(node.data), node.nlink
            return AttrRecord(kind=_node_kind(node), mode=node.mode, size=size,
                              nlink=nlink, uid=node.uid, gid=node.gid,
                              atime=node.atime, mtime=node.mtime, ctime=node.ctime)

        if kind is OpKind.READDIR:
            node = self._lookup_dir(path)
            return sorted((name, _node_kind(child))
                          for name, child in node.children.items())

        if kind is OpKind.STATFS:
            return {"f_bsize": 4096, "f_frsize": 4096, "f_blocks": 1 << 20,
                    "f_bfree": 1 << 19, "f_bavail": 1 << 19,
                    "f_files": 1 << 20, "f_ffree": 1 << 19, "f_namemax": 255}

        raise IOFailure(f"unsupported operation: {kind.value}", path)


# --------------------------------------------------------------------------
# passthrough


class DirectoryStore(Store):
    """Passthrough onto a host directory.

    Every request path is joined under the root; anything that would escape
    it is refused.  Host OSErrors are mapped into the semantic vocabulary at
    this boundary and nowhere else.
    """

    def __init__(self, root: str):
        self.root = os.path.realpath(root)
        if not os.path.isdir(self.root):
            raise NotADirectory("store root is not a directory", root)

    def _host(self, path: str) -> str:
        # Request paths arrive canonical; anything else (`..` segments,
        # duplicate slashes) is the only way to spell an escape, so refuse
        # rather than silently reinterpret.
        if not pathutil.is_normalized(path):
            raise PermissionDenied("path escapes store root or is not canonical", path)
        full = os.path.normpath(self.root + path)
        if full != self.root and not full.startswith(self.root + os.sep):
            raise PermissionDenied("path escapes store root", path)
        return full

    def apply(self, request: StoreRequest):
        try:
            return self._execute(request)
        except EagerFSError:
            raise
        except OSError as exc:
            raise from_oserror(exc, request.paths[0]) from exc

    def _execute(self, request: StoreRequest):
        kind, args = request.kind, request.args
        path = self._host(request.paths[0])

        if kind is OpKind.CREATE:
            mode = args[0] if args else 0o644
            existed = os.path.lexists(path)
            fd = os.open(path, os.O_CREAT | os.O_WRONLY | os.O_TRUNC, mode)
            try:
                if not existed:
                    os.fchmod(fd, mode)  # pin bits regardless of umask
            finally:
                os.close(fd)
            return None

        if kind is OpKind.MKNOD:
            mode = args[0] if args else 0o644
            fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, mode)
            try:
                os.fchmod(fd, mode)
            finally:
                os.close(fd)
            return None

        if kind is OpKind.OPEN_TRUNCATING:
            fd = os.open(path, os.O_WRONLY | os.O_TRUNC)
            os.close(fd)
            return None

        if kind is OpKind.WRITE:
            offset, data = args
            fd = os.open(path, os.O_WRONLY)
            try:
                return os.pwrite(fd, data, offset)
            finally:
                os.close(fd)

        if kind is OpKind.READ:
            offset, length = args
            fd = os.open(path, os.O_RDONLY)
            try:
                if length is None:
                    length = max(os.fstat(fd).st_size - offset, 0)
                return os.pread(fd, length, offset)
            finally:
                os.close(fd)

        if kind is OpKind.TRUNCATE:
            os.truncate(path, args[0])
            return None

        if kind is OpKind.FALLOCATE:
            offset, length = args
            fd = os.open(path, os.O_WRONLY)
            try:
                os.posix_fallocate(fd, offset, length)
            finally:
                os.close(fd)
            return None

        if kind in (OpKind.FLUSH, OpKind.RELEASE):
            os.lstat(path)
            return None

        if kind is OpKind.FSYNC:
            fd = os.open(path, os.O_RDONLY)
            try:
                os.fsync(fd)
            finally:
                os.close(fd)
            return None

        if kind is OpKind.MKDIR:
            mode = args[0] if args else 0o755
            os.mkdir(path, mode)
            os.chmod(path, mode)
            return None

        if kind is OpKind.RMDIR:
            os.rmdir(path)
            return None

        if kind is OpKind.UNLINK:
            os.unlink(path)
            return None

        if kind is OpKind.RENAME:
            os.rename(path, self._host(request.paths[1]))
            return None

        if kind is OpKind.SYMLINK:
            os.symlink(args[0], path)
            return None

        if kind is OpKind.READLINK:
            return os.readlink(path)

        if kind is OpKind.LINK:
            os.link(path, self._host(request.paths[1]), follow_symlinks=False)
            return None

        if kind is OpKind.CHMOD:
            os.chmod(path, args[0])
            return None

        if kind is OpKind.CHOWN:
            os.chown(path, args[0], args[1], follow_symlinks=False)
            return None

        if kind is OpKind.UTIMENS:
            times = args[0] if args else None
            os.utime(path, times, follow_symlinks=False)
            return None

        if kind is OpKind.SETXATTR:
            os.setxattr(path, args[0], args[1], follow_symlinks=False)
            return None

        if kind is OpKind.GETXATTR:
            return os.getxattr(path, args[0], follow_symlinks=False)

        if kind is OpKind.LISTXATTR:
            return sorted(os.listxattr(path, follow_symlinks=False))

        if kind is OpKind.REMOVEXATTR:
            os.removexattr(path, args[0], follow_symlinks=False)
            return None

        if kind is OpKind.GETATTR:
            st = os.lstat(path)
            return _record_from_stat(st)

        if kind is OpKind.READDIR:
            out = []
            with os.scandir(path) as it:
                for entry in it:
                    if entry.is_symlink():
                        nk = NodeKind.SYMLINK
                    elif entry.is_dir(follow_symlinks=False):
                        nk = NodeKind.DIR
                    else:
                        nk = NodeKind.FILE
                    out.append((entry.name, nk))
            return sorted(out)

        if kind is OpKind.STATFS:
            sv = os.statvfs(path)
            return {name: getattr(sv, name)
                    for name in ("f_bsize", "f_frsize", "f_blocks", "f_bfree",
                                 "f_bavail", "f_files", "f_ffree", "f_namemax")}

        raise IOFailure(f"unsupported operation: {kind.value}", request.paths[0])

    def snapshot_tree(self) -> str:
        rows: list[tuple[str, str, int, int, str]] = []
        for cur, dirs, files in os.walk(self.root):
            rel = "/" + os.path.relpath(cur, self.root).replace(os.sep, "/")
            rel = pathutil.normalize(rel if rel != "/." else "/")
            if rel != "/":
                st = os.lstat(cur)
                rows.append((rel, "dir", statmod.S_IMODE(st.st_mode), 0, ""))
            for name in files + [d for d in dirs if os.path.islink(os.path.join(cur, d))]:
                full = os.path.join(cur, name)
                p = pathutil.join(rel, name)
                st = os.lstat(full)
                if statmod.S_ISLNK(st.st_mode):
                    target = os.readlink(full)
                    rows.append((p, "symlink", 0o777, len(target),
                                 _hash_bytes(target.encode())))
                else:
                    with open(full, "rb") as fh:
                        content = fh.read()
                    rows.append((p, "file", statmod.S_IMODE(st.st_mode),
                                 len(content), _hash_bytes(content)))
        return _digest_entries(rows)


def _record_from_stat(st: os.stat_result) -> AttrRecord:
    if statmod.S_ISDIR(st.st_mode):
        nk = NodeKind.DIR
    elif statmod.S_ISLNK(st.st_mode):
        nk = NodeKind.SYMLINK
    else:
        nk = NodeKind.FILE
    return AttrRecord(kind=nk, mode=statmod.S_IMODE(st.st_mode), size=st.st_size,
                      nlink=st.st_nlink, uid=st.st_uid, gid=st.st_gid,
                      atime=st.st_atime, mtime=st.st_mtime, ctime=st.st_ctime)
