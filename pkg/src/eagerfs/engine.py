"""The ordering engine.

Accepts deferred operations, serializes them per normalized path, drains
them on background workers, enforces the pending-op throttle, tracks
watermarks for barriers, and ledgers failures.

Ordering rules
--------------
Each op joins the queue of every path it names (two for rename/link) and
executes exactly once, when it reaches the head of *all* its queues.

Ordering across *distinct* paths rides on explicit dependencies rather
than queue membership, so that siblings stay parallel (the whole point of
eagerness) while structure is never reordered:

* an op depends on the last pending *structural* op (create/remove/move of
  the node itself) on each of its ancestor paths — a file create never
  overtakes the mkdir or rename it needs, however deep the nesting, yet
  sibling creates under that mkdir still drain in parallel;
* a directory removal depends on the last pending op of every direct child
  (an rmdir never overtakes the unlinks emptying it);
* a rename depends on the last pending op of every queue at or under
  either endpoint (the whole subtree moves with it).

Dependencies are fixed atomically under one lock at enqueue time and only
ever point at lower-seq ops, so the wait graph is a DAG ordered by seq:
the protocol cannot deadlock.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, TextIO

import sys

from .errors import EagerFSError, ErrorCode, IOFailure
from .ops import OpKind
from .pathutil import is_normalized, parent_of
from .policy import EagerPolicy

# Kinds that leave a node's existence and identity untouched: content and
# metadata edits.  Anything else creates, removes or moves the node at its
# path, and is what an op deeper in the tree must never overtake.
_NONSTRUCTURAL = frozenset({
    OpKind.WRITE, OpKind.TRUNCATE, OpKind.FALLOCATE, OpKind.OPEN_TRUNCATING,
    OpKind.FLUSH, OpKind.RELEASE, OpKind.FSYNC,
    OpKind.CHMOD, OpKind.CHOWN, OpKind.UTIMENS,
    OpKind.SETXATTR, OpKind.REMOVEXATTR,
})


@dataclass
class PendingOp:
    """One deferred mutation awaiting execution."""

    kind: OpKind
    paths: tuple[str, ...]
    thunk: Callable[[], object] | None = None
    payload: object = None
    seq: int = 0
    enqueued_at: float = 0.0
    # Filled by the engine: the queues this op occupies (its paths, deduped).
    queue_paths: tuple[str, ...] = ()
    # Seqs of the lower-numbered ops this one must let finish first.
    dep_seqs: tuple[int, ...] = ()
    _deps: tuple[threading.Event, ...] = field(default=(), repr=False)
    _arrivals: int = field(default=0, repr=False)
    _done: threading.Event = field(default_factory=threading.Event, repr=False)


@dataclass(frozen=True)
class LedgerRecord:
    seq: int
    kind: OpKind
    paths: tuple[str, ...]
    code: ErrorCode
    message: str
    time: float

    def diagnostic(self, phase: str) -> str:
        """The stderr line for this record; identical across phases apart
        from the phase field itself."""
        msg = " ".join(self.message.split()) or "-"
        return (f"EAGERFS-ERR seq={self.seq} op={self.kind.value} "
                f"path={'->'.join(self.paths)} errno={self.code.value} "
                f"msg={msg} phase={phase}")


class ErrorLedger:
    """Append-only record of deferred-operation failures."""

    def __init__(self):
        self._mu = threading.Lock()
        self._records: list[LedgerRecord] = []
        self.reported_at_teardown = False

    def append(self, record: LedgerRecord) -> None:
        with self._mu:
            self._records.append(record)

    @property
    def records(self) -> tuple[LedgerRecord, ...]:
        with self._mu:
            return tuple(sorted(self._records, key=lambda r: r.seq))

    def __len__(self) -> int:
        with self._mu:
            return len(self._records)

    def __bool__(self) -> bool:
        return len(self) > 0

    def exit_status(self) -> int:
        return 1 if self else 0


class ThrottleGate:
    """Counting gate bounding simultaneously pending deferred ops.

    acquire blocks (never fails) at the limit; release wakes a waiter.
    Wait metrics are kept so saturation is observable from the outside.
    """

    def __init__(self, limit: int):
        if limit < 1:
            raise ValueError("throttle limit must be at least 1")
        self.limit = limit
        self._cond = threading.Condition()
        self._in_flight = 0
        self.peak = 0
        self.wait_count = 0
        self.wait_seconds = 0.0

    def acquire(self) -> None:
        with self._cond:
            if self._in_flight >= self.limit:
                self.wait_count += 1
                t0 = time.monotonic()
                while self._in_flight >= self.limit:
                    self._cond.wait()
                self.wait_seconds += time.monotonic() - t0
            self._in_flight += 1
            if self._in_flight > self.peak:
                self.peak = self._in_flight

    def release(self) -> None:
        with self._cond:
            self._in_flight -= 1
            self._cond.notify()

    @property
    def in_flight(self) -> int:
        with self._cond:
            return self._in_flight


class _PathQueue:
    __slots__ = ("path", "ops", "enqueued", "watermark", "worker_active")

    def __init__(self, path: str):
        self.path = path
        self.ops: deque[PendingOp] = deque()
        self.enqueued = 0
        self.watermark = 0
        self.worker_active = False


class Engine:
    """See module docstring."""

    def __init__(self, policy: EagerPolicy | None = None,
                 err_stream: TextIO | None = None):
        self.policy = policy or EagerPolicy()
        self.throttle = ThrottleGate(self.policy.max_pending)
        self.ledger = ErrorLedger()
        self._mu = threading.Lock()
        self._retired = threading.Condition(self._mu)
        self._queues: dict[str, _PathQueue] = {}
        self._next_seq = 1
        self._aborted = False
        self._torn_down = False
        self._pending = 0        # ops enqueued but not yet executed
        self._unpopped = 0       # (op, queue) memberships not yet retired
        self._aux = 0            # auxiliary background tasks (attr prefetch)
        self._enqueued_total = 0
        self._executed_total = 0
        self._err_stream = err_stream

    # -- enqueue ----------------------------------------------------------

    def enqueue(self, op: PendingOp) -> int:
        if not op.paths:
            raise ValueError("op touches no path")
        for p in op.paths:
            if not is_normalized(p):
                raise ValueError(f"path not normalized: {p!r}")
        self._check_accepting()
        self.throttle.acquire()
        try:
            with self._mu:
                self._check_accepting()
                op.seq = self._next_seq
                self._next_seq += 1
                op.enqueued_at = time.monotonic()
                op.queue_paths = tuple(dict.fromkeys(op.paths))
                deps = self._dependencies(op)
                op.dep_seqs = tuple(d.seq for d in deps)
                op._deps = tuple(d._done for d in deps)
                for path in op.queue_paths:
                    q = self._queues.get(path)
                    if q is None:
                        q = self._queues[path] = _PathQueue(path)
                    q.ops.append(op)
                    q.enqueued += 1
                    self._unpopped += 1
                    if not q.worker_active:
                        self._spawn_worker(q)
                self._pending += 1
                self._enqueued_total += 1
        except BaseException:
            self.throttle.release()
            raise
        return op.seq

    def _check_accepting(self) -> None:
        if self._torn_down:
            raise RuntimeError("engine is torn down; no new operations accepted")
        if self._aborted:
            raise IOFailure("engine aborted after a deferred failure")

    def _dependencies(self, op: PendingOp) -> list[PendingOp]:
        """The already-pending ops this one must let finish before it runs;
        caller holds the lock and has not yet appended `op` to any queue.

        Same-queue order is FIFO and needs no entry here.  Across queues:
        the last structural op pending on each ancestor path (a child op
        never overtakes the mkdir/rename/rmdir it depends on — but sibling
        content ops stay mutually unordered and drain in parallel); for
        rmdir the last op of every busy direct-child queue (it never
        overtakes the unlinks emptying the directory); for rename the last
        op of every busy queue strictly under either endpoint (the whole
        subtree moves with it).
        """
        picked: dict[int, PendingOp] = {}

        def add(dep: PendingOp) -> None:
            if not dep._done.is_set():
                picked[dep.seq] = dep

        for path in op.queue_paths:
            ancestor = parent_of(path)
            while ancestor is not None:
                q = self._queues.get(ancestor)
                if q is not None and q.ops:
                    for cand in reversed(q.ops):
                        if cand.kind not in _NONSTRUCTURAL:
                            add(cand)
                            break
                ancestor = parent_of(ancestor)
        if op.kind is OpKind.RMDIR:
            target = op.paths[0]
            for path, q in self._queues.items():
                if q.ops and parent_of(path) == target:
                    add(q.ops[-1])
        elif op.kind is OpKind.RENAME:
            prefixes = tuple(p + "/" for p in op.paths)
            for path, q in self._queues.items():
                if q.ops and path.startswith(prefixes):
                    add(q.ops[-1])
        return [picked[s] for s in sorted(picked)]

    def _wait_paths(self, kind: OpKind, paths: tuple[str, ...]) -> tuple[str, ...]:
        """Every queue a *synchronous* op of this kind must drain before it
        can run; caller holds the lock.  Deliberately coarser than the
        dependency rule for enqueued ops — the blocking caller only spends
        its own time, so it waits out whole queues: its own paths, every
        busy ancestor, for rmdir every busy direct child, and for rename
        everything at or under either endpoint.
        """
        members = list(dict.fromkeys(paths))
        extra = []
        for path in members:
            ancestor = parent_of(path)
            while ancestor is not None:
                pq = self._queues.get(ancestor)
                if pq is not None and pq.ops:
                    extra.append(ancestor)
                ancestor = parent_of(ancestor)
        if kind is OpKind.RMDIR:
            target = paths[0]
            for path, q in self._queues.items():
                if q.ops and parent_of(path) == target:
                    extra.append(path)
        elif kind is OpKind.RENAME:
            prefixes = tuple(p + "/" for p in paths)
            for path, q in self._queues.items():
                if q.ops and path.startswith(prefixes):
                    extra.append(path)
        members.extend(p for p in extra if p not in members)
        return tuple(members)

    # -- drain workers ------------------------------------------------------

    def _spawn_worker(self, q: _PathQueue) -> None:
        q.worker_active = True
        threading.Thread(target=self._drain_queue, args=(q,),
                         name=f"eagerfs-drain:{q.path}", daemon=True).start()

    def _drain_queue(self, q: _PathQueue) -> None:
        while True:
            with self._mu:
                if not q.ops:
                    q.worker_active = False  # retire; respawned on demand
                    return
                op = q.ops[0]
            self._execute_or_wait(op)
            with self._mu:
                q.ops.popleft()
                q.watermark += 1
                self._unpopped -= 1
                self._retired.notify_all()

    def _execute_or_wait(self, op: PendingOp) -> None:
        with self._mu:
            op._arrivals += 1
            runs_here = op._arrivals == len(op.queue_paths)
        if not runs_here:
            # Another queue's worker still has the op before its head; the
            # last worker to arrive executes it.
            op._done.wait()
            return
        failure: tuple[ErrorCode, str] | None = None
        try:
            for event in op._deps:
                event.wait()
            try:
                if op.thunk is not None:
                    op.thunk()
            except EagerFSError as exc:
                failure = (exc.code, str(exc))
            except Exception as exc:  # a thunk bug must not kill the worker
                failure = (ErrorCode.IO_FAILURE, f"{type(exc).__name__}: {exc}")
            if failure is not None:
                self.record_failure(op, failure[0], failure[1])
        finally:
            # Always runs, so ops depending on this one can never hang.
            with self._mu:
                self._pending -= 1
                self._executed_total += 1
            self.throttle.release()
            op._done.set()

    # -- observation ------------------------------------------------------

    def watermark(self, path: str) -> tuple[int, int]:
        """(executed, enqueued) for a path; (0, 0) if never seen."""
        with self._mu:
            q = self._queues.get(path)
            if q is None:
                return (0, 0)
            return (q.watermark, q.enqueued)

    def barrier(self, path: str) -> None:
        """Wait until everything enqueued on `path` so far has executed."""
        with self._mu:
            q = self._queues.get(path)
            if q is None:
                return
            target = q.enqueued
            while q.watermark < target:
                self._retired.wait()

    def busy_child_queues(self, directory: str) -> list[str]:
        """Paths directly under `directory` with ops pending right now."""
        with self._mu:
            return [p for p, q in self._queues.items()
                    if q.ops and parent_of(p) == directory]

    def barrier_targets(self, kind: OpKind, paths: tuple[str, ...]) -> tuple[str, ...]:
        """The queues a synchronous op of this kind must wait on before it
        may run against the store directly."""
        with self._mu:
            return self._wait_paths(kind, tuple(paths))

    @property
    def aborted(self) -> bool:
        return self._aborted

    @property
    def torn_down(self) -> bool:
        return self._torn_down

    @property
    def pending(self) -> int:
        return self._pending

    def stats(self) -> dict:
        with self._mu:
            return {
                "enqueued_total": self._enqueued_total,
                "executed_total": self._executed_total,
                "pending": self._pending,
                "queues": len(self._queues),
                "active_queues": sum(q.worker_active for q in self._queues.values()),
                "throttle_limit": self.throttle.limit,
                "throttle_peak": self.throttle.peak,
                "throttle_waits": self.throttle.wait_count,
                "throttle_wait_seconds": self.throttle.wait_seconds,
                "ledger_records": len(self.ledger),
                "aborted": self._aborted,
            }

    # -- failures -----------------------------------------------------------

    def record_failure(self, op: PendingOp, code: ErrorCode, message: str) -> None:
        record = LedgerRecord(seq=op.seq, kind=op.kind, paths=op.paths,
                              code=code, message=message, time=time.time())
        self.ledger.append(record)
        self._emit(record, "immediate")
        if self.policy.abort_on_error:
            with self._mu:
                self._aborted = True

    def _emit(self, record: LedgerRecord, phase: str) -> None:
        stream = self._err_stream if self._err_stream is not None else sys.stderr
        # single write call so concurrent reporters cannot interleave
        stream.write(record.diagnostic(phase) + "\n")
        stream.flush()

    # -- auxiliary task tracking (attr prefetch etc.) -----------------------

    def aux_started(self) -> None:
        with self._mu:
            self._aux += 1

    def aux_finished(self) -> None:
        with self._mu:
            self._aux -= 1
            self._retired.notify_all()

    def wait_aux(self) -> None:
        with self._mu:
            while self._aux > 0:
                self._retired.wait()

    # -- teardown -----------------------------------------------------------

    def drain_all(self) -> ErrorLedger:
        """Block until every queue is fully executed, then re-emit the
        ledger (the second of the two report times) and return it."""
        with self._mu:
            self._torn_down = True
            while self._unpopped > 0 or self._aux > 0:
                self._retired.wait()
        for record in self.ledger.records:
            self._emit(record, "teardown")
        self.ledger.reported_at_teardown = True
        return self.ledger
