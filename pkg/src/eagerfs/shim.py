"""Filesystem-operation layer.

Implements the POSIX-style operation surface against a backing store,
consulting the EagerPolicy per operation kind: eager kinds are enqueued on
the ordering engine and acknowledged immediately, synchronous kinds barrier
the affected paths and execute in place.  Reads always barrier.  Metadata
may be answered from an attribute cache filled by optimistic synthesis (at
enqueue time) and by the readdir prefetcher.

An acknowledged mutation — including fsync — carries NO durability
guarantee; failures surface later through the error ledger.
"""

from __future__ import annotations

import itertools
import os
import threading
import time
from dataclasses import dataclass, replace
from typing import TextIO

from .engine import Engine, ErrorLedger, PendingOp
from .errors import EagerFSError
from .ops import (
    AttrRecord,
    MUTATION_KIND_SET,
    NodeKind,
    OpKind,
    StoreRequest,
)
from .pathutil import join as path_join, normalize
from .policy import EagerPolicy
from .store import Store

PREFETCHED = "prefetched"
SYNTHESIZED = "synthesized"


@dataclass
class CacheEntry:
    record: AttrRecord
    source: str  # PREFETCHED | SYNTHESIZED


class AttrCache:
    """Path → attribute record map with per-entry atomicity.

    Records are replaced, never mutated in place, so readers can use a
    returned record without holding the lock.  Every enqueued mutation bumps
    the path's version; the prefetcher refuses to fill an entry whose
    version moved under it, which keeps stale backing-store answers out.
    """

    def __init__(self):
        self._mu = threading.Lock()
        self._entries: dict[str, CacheEntry] = {}
        self._opt_size: dict[str, int] = {}
        self._versions: dict[str, int] = {}
        # Bumped on every rename: a directory move re-homes paths that may
        # have no per-path version yet, so in-flight prefetches anywhere
        # must not land across one.
        self._epoch = 0

    def get(self, path: str) -> CacheEntry | None:
        with self._mu:
            return self._entries.get(path)

    def version(self, path: str) -> tuple[int, int]:
        """Opaque freshness token for a prefetch in flight."""
        with self._mu:
            return (self._versions.get(path, 0), self._epoch)

    def optimistic_size(self, path: str) -> int:
        with self._mu:
            return self._opt_size.get(path, 0)

    def __len__(self) -> int:
        with self._mu:
            return len(self._entries)

    def _bump(self, path: str) -> None:
        self._versions[path] = self._versions.get(path, 0) + 1

    def touch(self, path: str) -> None:
        """Version bump without changing the entry (mutations that cannot
        affect the attributes we serve)."""
        with self._mu:
            self._bump(path)

    def seed_synthesized(self, path: str, record: AttrRecord) -> None:
        with self._mu:
            self._bump(path)
            self._entries[path] = CacheEntry(record, SYNTHESIZED)
            self._opt_size[path] = record.size

    def fill_prefetched(self, path: str, record: AttrRecord,
                        expected_version: tuple[int, int]) -> bool:
        """Install a prefetched record unless the path changed meanwhile or
        optimistic state already covers it."""
        with self._mu:
            if (self._versions.get(path, 0), self._epoch) != expected_version:
                return False
            existing = self._entries.get(path)
            if existing is not None and existing.source == SYNTHESIZED:
                return False
            self._entries[path] = CacheEntry(record, PREFETCHED)
            return True

    def note_write(self, path: str, end: int, now: float) -> None:
        """An enqueued write/fallocate reaching byte offset `end`."""
        with self._mu:
            self._bump(path)
            opt = max(self._opt_size.get(path, 0), end)
            self._opt_size[path] = opt
            entry = self._entries.get(path)
            if entry is not None:
                rec = replace(entry.record,
                              size=max(entry.record.size, end), mtime=now)
                self._entries[path] = CacheEntry(rec, entry.source)

    def note_truncate(self, path: str, length: int, now: float) -> None:
        with self._mu:
            self._bump(path)
            self._opt_size[path] = length
            entry = self._entries.get(path)
            if entry is not None:
                rec = replace(entry.record, size=length, mtime=now)
                self._entries[path] = CacheEntry(rec, entry.source)

    def note_attr(self, path: str, now: float, **fields) -> None:
        """chmod/chown/utimens-style attribute change on a cached entry."""
        with self._mu:
            self._bump(path)
            entry = self._entries.get(path)
            if entry is not None:
                rec = replace(entry.record, ctime=now, **fields)
                self._entries[path] = CacheEntry(rec, entry.source)

    def remove(self, path: str) -> None:
        with self._mu:
            self._bump(path)
            self._entries.pop(path, None)
            self._opt_size.pop(path, None)

    def move(self, old: str, new: str) -> None:
        """Rename: re-home the entry and everything cached under it; a
        directory move carries its whole subtree, and whatever lived under
        the destination is gone."""
        with self._mu:
            self._bump(old)
            self._bump(new)
            self._epoch += 1
            old_pre, new_pre = old + "/", new + "/"

            def rekey(table: dict) -> None:
                moved = {new + k[len(old):]: table.pop(k)
                         for k in list(table)
                         if k == old or k.startswith(old_pre)}
                for k in list(table):
                    if k == new or k.startswith(new_pre):
                        del table[k]
                table.update(moved)

            rekey(self._entries)
            rekey(self._opt_size)
            for k in list(self._versions):
                if k.startswith(old_pre) or k.startswith(new_pre):
                    self._bump(k)

    def copy_entry(self, src: str, dst: str) -> None:
        """Hard link: destination mirrors the source's record if cached."""
        with self._mu:
            self._bump(dst)
            entry = self._entries.get(src)
            if entry is not None:
                self._entries[dst] = CacheEntry(entry.record.copy(), entry.source)
            else:
                self._entries.pop(dst, None)

    def invalidate(self, path: str) -> None:
        self.remove(path)


class EagerShim:
    """The operation surface the kernel bridge and benchmarks drive."""

    def __init__(self, store: Store, policy: EagerPolicy | None = None,
                 err_stream: TextIO | None = None):
        self.store = store
        self.policy = policy or EagerPolicy()
        self.engine = Engine(self.policy, err_stream=err_stream)
        self.cache = AttrCache()
        self._handles: dict[int, str] = {}
        self._handle_ids = itertools.count(1)
        self._handles_mu = threading.Lock()

    # -- dispatch core ------------------------------------------------------

    def dispatch_mutation(self, kind: OpKind, paths: tuple[str, ...],
                          args: tuple = ()):
        """Enqueue-and-acknowledge or barrier-and-execute one mutation.

        Eager path: returns the trivially-knowable result immediately (the
        payload length for writes, None otherwise).  Synchronous path:
        returns the backing store's real result or raises its real error.
        """
        if kind not in MUTATION_KIND_SET:
            raise ValueError(f"not a mutating kind: {kind.value}")
        npaths = tuple(normalize(p) for p in paths)
        args = self._frozen_args(kind, args)
        if self.policy.is_eager(kind):
            req = StoreRequest(kind, npaths, args)
            op = PendingOp(kind=kind, paths=npaths, payload=args)

            def run(op=op, req=req):
                req.seq = op.seq
                return self.store.apply(req)

            op.thunk = run
            self.engine.enqueue(op)
            self._note_enqueued(kind, npaths, args)
            return len(args[1]) if kind is OpKind.WRITE else None
        for target in self.engine.barrier_targets(kind, npaths):
            self.engine.barrier(target)
        result = self.store.apply(StoreRequest(kind, npaths, args))
        for p in npaths:
            self.cache.invalidate(p)
        return result

    @staticmethod
    def _frozen_args(kind: OpKind, args: tuple) -> tuple:
        # Payload buffers are copied at enqueue time; later caller reuse of
        # the buffer cannot alter a pending op.
        if kind is OpKind.WRITE:
            offset, data = args
            return (offset, bytes(data))
        if kind is OpKind.SETXATTR:
            name, value = args
            return (name, bytes(value))
        return args

    def _note_enqueued(self, kind: OpKind, paths: tuple[str, ...],
                       args: tuple) -> None:
        """Optimistic cache maintenance, same call that enqueued the op."""
        if not self.policy.mock_attr:
            for p in paths:
                self.cache.invalidate(p)
            return
        now = time.time()
        path = paths[0]
        if kind in (OpKind.CREATE, OpKind.MKNOD):
            mode = args[0] if args else 0o644
            self.cache.seed_synthesized(path, self._fresh_record(
                NodeKind.FILE, mode, 0, now))
        elif kind is OpKind.MKDIR:
            mode = args[0] if args else 0o755
            self.cache.seed_synthesized(path, self._fresh_record(
                NodeKind.DIR, mode, 0, now))
        elif kind is OpKind.SYMLINK:
            target = args[0]
            self.cache.seed_synthesized(path, self._fresh_record(
                NodeKind.SYMLINK, 0o777, len(target), now))
        elif kind is OpKind.WRITE:
            offset, data = args
            self.cache.note_write(path, offset + len(data), now)
        elif kind is OpKind.FALLOCATE:
            offset, length = args
            self.cache.note_write(path, offset + length, now)
        elif kind in (OpKind.TRUNCATE, OpKind.OPEN_TRUNCATING):
            length = args[0] if kind is OpKind.TRUNCATE else 0
            self.cache.note_truncate(path, length, now)
        elif kind in (OpKind.UNLINK, OpKind.RMDIR):
            self.cache.remove(path)
        elif kind is OpKind.RENAME:
            self.cache.move(paths[0], paths[1])
        elif kind is OpKind.LINK:
            self.cache.copy_entry(paths[0], paths[1])
        elif kind is OpKind.CHMOD:
            self.cache.note_attr(path, now, mode=args[0])
        elif kind is OpKind.CHOWN:
            uid, gid = args
            fields = {}
            if uid != -1:
                fields["uid"] = uid
            if gid != -1:
                fields["gid"] = gid
            self.cache.note_attr(path, now, **fields)
        elif kind is OpKind.UTIMENS:
            if args and args[0] is not None:
                atime, mtime = args[0]
            else:
                atime = mtime = now
            self.cache.note_attr(path, now, atime=atime, mtime=mtime)
        else:  # flush/release/fsync/setxattr/removexattr: attrs unaffected
            self.cache.touch(path)

    @staticmethod
    def _fresh_record(kind: NodeKind, mode: int, size: int,
                      now: float) -> AttrRecord:
        return AttrRecord(kind=kind, mode=mode, size=size, nlink=1,
                          uid=os.getuid(), gid=os.getgid(),
                          atime=now, mtime=now, ctime=now)

    # -- mutating operations ------------------------------------------------

    def create(self, path: str, mode: int = 0o644) -> int:
        self.dispatch_mutation(OpKind.CREATE, (path,), (mode,))
        return self._new_handle(normalize(path))

    def mknod(self, path: str, mode: int = 0o644) -> None:
        self.dispatch_mutation(OpKind.MKNOD, (path,), (mode,))

    def write(self, path: str, data: bytes, offset: int = 0) -> int:
        result = self.dispatch_mutation(OpKind.WRITE, (path,), (offset, data))
        return result if result is not None else len(data)

    def truncate(self, path: str, length: int, fh: int | None = None) -> None:
        self.dispatch_mutation(OpKind.TRUNCATE, (path,), (length,))

    def fallocate(self, path: str, offset: int, length: int) -> None:
        self.dispatch_mutation(OpKind.FALLOCATE, (path,), (offset, length))

    def flush(self, path: str, fh: int | None = None) -> None:
        self.dispatch_mutation(OpKind.FLUSH, (self._handle_path(fh, path),))

    def fsync(self, path: str, datasync: bool = False,
              fh: int | None = None) -> None:
        # Acknowledged eagerly by default: NO durability guarantee.
        self.dispatch_mutation(OpKind.FSYNC, (self._handle_path(fh, path),))

    def release(self, path: str, fh: int | None = None) -> None:
        target = self._handle_path(fh, path)
        if fh is not None:
            with self._handles_mu:
                self._handles.pop(fh, None)
        self.dispatch_mutation(OpKind.RELEASE, (target,))

    def mkdir(self, path: str, mode: int = 0o755) -> None:
        self.dispatch_mutation(OpKind.MKDIR, (path,), (mode,))

    def rmdir(self, path: str) -> None:
        self.dispatch_mutation(OpKind.RMDIR, (path,))

    def unlink(self, path: str) -> None:
        self.dispatch_mutation(OpKind.UNLINK, (path,))

    def rename(self, old: str, new: str) -> None:
        self.dispatch_mutation(OpKind.RENAME, (old, new))

    def symlink(self, target: str, link_path: str) -> None:
        # `target` is stored verbatim; only the link itself has a queue.
        self.dispatch_mutation(OpKind.SYMLINK, (link_path,), (target,))

    def link(self, src: str, dst: str) -> None:
        self.dispatch_mutation(OpKind.LINK, (src, dst))

    def chmod(self, path: str, mode: int) -> None:
        self.dispatch_mutation(OpKind.CHMOD, (path,), (mode,))

    def chown(self, path: str, uid: int, gid: int) -> None:
        self.dispatch_mutation(OpKind.CHOWN, (path,), (uid, gid))

    def utimens(self, path: str, times: tuple[float, float] | None = None) -> None:
        self.dispatch_mutation(OpKind.UTIMENS, (path,), (times,))

    def setxattr(self, path: str, name: str, value: bytes) -> None:
        self.dispatch_mutation(OpKind.SETXATTR, (path,), (name, value))

    def removexattr(self, path: str, name: str) -> None:
        self.dispatch_mutation(OpKind.REMOVEXATTR, (path,), (name,))

    # -- handles --------------------------------------------------------

    def _new_handle(self, npath: str) -> int:
        with self._handles_mu:
            handle = next(self._handle_ids)
            self._handles[handle] = npath
            return handle

    def _handle_path(self, fh: int | None, fallback: str) -> str:
        if fh is not None:
            with self._handles_mu:
                path = self._handles.get(fh)
            if path is not None:
                return path
        return normalize(fallback)

    def open(self, path: str, flags: int = os.O_RDONLY,
             mode: int = 0o644) -> int:
        """Create/truncate opens may be eager; a plain open is synchronous
        (barrier + real lookup) so subsequent reads are valid."""
        npath = normalize(path)
        if flags & os.O_CREAT:
            self.dispatch_mutation(OpKind.CREATE, (npath,), (mode,))
        elif flags & os.O_TRUNC:
            self.dispatch_mutation(OpKind.OPEN_TRUNCATING, (npath,))
        else:
            self._read_barrier(npath)
            self.store.apply(StoreRequest(OpKind.GETATTR, (npath,)))
        return self._new_handle(npath)

    # -- reading operations (never eager) ---------------------------------

    def _read_barrier(self, npath: str) -> None:
        """Wait out everything a synchronous op on this path would: its own
        queue plus any busy ancestor (a pending mkdir/rename/rmdir above
        decides whether this path exists at all)."""
        for target in self.engine.barrier_targets(OpKind.READ, (npath,)):
            self.engine.barrier(target)

    def read(self, path: str, offset: int = 0, length: int | None = None,
             fh: int | None = None) -> bytes:
        npath = self._handle_path(fh, path)
        self._read_barrier(npath)
        return self.store.apply(StoreRequest(OpKind.READ, (npath,),
                                             (offset, length)))

    def getattr(self, path: str) -> AttrRecord:
        npath = normalize(path)
        entry = self.cache.get(npath)
        if entry is not None:
            return entry.record
        self._read_barrier(npath)
        return self.store.apply(StoreRequest(OpKind.GETATTR, (npath,)))

    def readdir(self, path: str) -> list[tuple[str, NodeKind]]:
        """List a directory, then prefetch every entry's attributes in the
        background; the listing returns without waiting for the prefetch."""
        npath = normalize(path)
        self._read_barrier(npath)
        # Pending creates/unlinks *inside* the directory live on the
        # children's queues; the listing must reflect them too.
        for child in self.engine.busy_child_queues(npath):
            self.engine.barrier(child)
        entries = self.store.apply(StoreRequest(OpKind.READDIR, (npath,)))
        if self.policy.mock_attr and entries:
            self._start_prefetch(npath, [name for name, _ in entries])
        return entries

    def readlink(self, path: str) -> str:
        npath = normalize(path)
        self._read_barrier(npath)
        return self.store.apply(StoreRequest(OpKind.READLINK, (npath,)))

    def getxattr(self, path: str, name: str) -> bytes:
        npath = normalize(path)
        self._read_barrier(npath)
        return self.store.apply(StoreRequest(OpKind.GETXATTR, (npath,), (name,)))

    def listxattr(self, path: str) -> list[str]:
        npath = normalize(path)
        self._read_barrier(npath)
        return self.store.apply(StoreRequest(OpKind.LISTXATTR, (npath,)))

    def statfs(self, path: str = "/") -> dict:
        return self.store.apply(StoreRequest(OpKind.STATFS, (normalize(path),)))

    # -- readdir prefetch ---------------------------------------------------

    def _start_prefetch(self, directory: str, names: list[str]) -> None:
        self.engine.aux_started()
        threading.Thread(target=self._prefetch, args=(directory, names),
                         name=f"eagerfs-prefetch:{directory}",
                         daemon=True).start()

    def _prefetch(self, directory: str, names: list[str]) -> None:
        try:
            workers = []
            for name in names:
                path = path_join(directory, name)
                t = threading.Thread(target=self._prefetch_one, args=(path,),
                                     daemon=True)
                t.start()
                workers.append(t)
            for t in workers:
                t.join()
        finally:
            self.engine.aux_finished()

    def _prefetch_one(self, path: str) -> None:
        # Shares the mutation throttle so total in-flight work stays bounded.
        self.engine.throttle.acquire()
        try:
            executed, enqueued = self.engine.watermark(path)
            if executed != enqueued:
                return  # in flux; optimistic state already covers it
            version = self.cache.version(path)
            try:
                record = self.store.apply(StoreRequest(OpKind.GETATTR, (path,)))
            except EagerFSError:
                return
            self.cache.fill_prefetched(path, record, version)
        finally:
            self.engine.throttle.release()

    def wait_for_prefetch(self) -> None:
        self.engine.wait_aux()

    # -- lifecycle ----------------------------------------------------------

    def drain(self) -> ErrorLedger:
        """Flush everything; the teardown half of error reporting."""
        return self.engine.drain_all()

    def stats(self) -> dict:
        out = self.engine.stats()
        out["cache_entries"] = len(self.cache)
        with self._handles_mu:
            out["open_handles"] = len(self._handles)
        return out
