"""Benchmark harness.

Reproduces the write-behind experiments at desk scale against the
latency-injected in-memory store: tree extraction, recursive removal and
traversal, each in three storage modes —

* ``eager``  — through the shim with all mutations deferred; timing
  includes the final drain, matching the way the full teardown was part of
  the measured task in the original experiments;
* ``direct`` — synchronous calls straight at the backing store;
* ``staged`` — extraction only: write to a zero-latency staging store
  first, then copy everything out to the real store (the tmpfs+rsync
  baseline), with the copy-out inside the timed window.

Replicates are interleaved round-robin across modes so background noise
spreads evenly, and every replicate's final tree digest is checked against
the first one seen for the scenario; mismatching or failing replicates are
flagged and excluded from the summary statistics.
"""

from __future__ import annotations

import io
import math
import random
import statistics
import time
from dataclasses import dataclass

from .errors import EagerFSError
from .ops import METADATA_KINDS, NodeKind, OpKind, StoreRequest
from .pathutil import join as path_join
from .policy import EagerPolicy
from .shim import EagerShim
from .store import MemoryStore, Store

SCENARIOS = ("extract", "remove", "traverse")
MODES = ("eager", "direct", "staged")

_WRITE_CHUNK = 65536
_MAX_FILE_SIZE = 4 << 20  # tail cap keeps single replicates desk-sized


@dataclass(frozen=True)
class Workload:
    """Deterministic tree description: `files` regular files spread over a
    directory tree of the given fanout, sizes lognormal with the given mean
    (so the default matches a many-small-files archive: 36 kB average)."""

    files: int = 1000
    fanout: int = 16
    mean_size: int = 36_000
    sigma: float = 1.0
    symlink_fraction: float = 0.0
    seed: int = 0


@dataclass
class TreePlan:
    dirs: list[str]
    files: list[tuple[str, int]]  # (path, size)
    symlinks: list[tuple[str, str]]  # (path, target)

    @property
    def entry_count(self) -> int:
        return len(self.dirs) + len(self.files) + len(self.symlinks)


def plan_tree(w: Workload) -> TreePlan:
    """Fully deterministic in the workload (same seed → same plan)."""
    rng = random.Random(w.seed)
    ndirs = math.ceil(w.files / w.fanout) if w.files else 0
    dirs: list[str] = []
    for i in range(ndirs):
        parent = "/" if i == 0 else dirs[(i - 1) // w.fanout]
        dirs.append(path_join(parent, f"d{i:04d}"))
    files: list[tuple[str, int]] = []
    mu = math.log(w.mean_size) - w.sigma ** 2 / 2  # lognormal mean = mean_size
    for j in range(w.files):
        size = min(int(rng.lognormvariate(mu, w.sigma)), _MAX_FILE_SIZE)
        files.append((path_join(dirs[j // w.fanout], f"f{j:05d}.dat"), size))
    symlinks: list[tuple[str, str]] = []
    for k in range(round(w.files * w.symlink_fraction)):
        target_path, _ = files[rng.randrange(len(files))]
        directory = dirs[rng.randrange(len(dirs))]
        symlinks.append((path_join(directory, f"s{k:04d}"), target_path))
    return TreePlan(dirs, files, symlinks)


class ShimOps:
    """Drive a workload through the shim (the eager path)."""

    def __init__(self, shim: EagerShim):
        self.shim = shim

    def mkdir(self, path, mode=0o755):
        self.shim.mkdir(path, mode)

    def create(self, path, mode=0o644):
        self.shim.create(path, mode)

    def write(self, path, data, offset):
        self.shim.write(path, data, offset)

    def release(self, path):
        self.shim.release(path)

    def symlink(self, target, path):
        self.shim.symlink(target, path)

    def readdir(self, path):
        return self.shim.readdir(path)

    def getattr(self, path):
        return self.shim.getattr(path)

    def readlink(self, path):
        return self.shim.readlink(path)

    def unlink(self, path):
        self.shim.unlink(path)

    def rmdir(self, path):
        self.shim.rmdir(path)


class DirectOps:
    """Drive the identical operation stream synchronously at a store."""

    def __init__(self, store: Store):
        self.store = store

    def _apply(self, kind, paths, args=()):
        return self.store.apply(StoreRequest(kind, paths, args))

    def mkdir(self, path, mode=0o755):
        self._apply(OpKind.MKDIR, (path,), (mode,))

    def create(self, path, mode=0o644):
        self._apply(OpKind.CREATE, (path,), (mode,))

    def write(self, path, data, offset):
        self._apply(OpKind.WRITE, (path,), (offset, data))

    def release(self, path):
        self._apply(OpKind.RELEASE, (path,))

    def symlink(self, target, path):
        self._apply(OpKind.SYMLINK, (path,), (target,))

    def readdir(self, path):
        return self._apply(OpKind.READDIR, (path,))

    def getattr(self, path):
        return self._apply(OpKind.GETATTR, (path,))

    def readlink(self, path):
        return self._apply(OpKind.READLINK, (path,))

    def unlink(self, path):
        self._apply(OpKind.UNLINK, (path,))

    def rmdir(self, path):
        self._apply(OpKind.RMDIR, (path,))

    def read(self, path, offset, length):
        return self._apply(OpKind.READ, (path,), (offset, length))


def generate_tree(w: Workload, fs) -> int:
    """Write the planned tree through `fs`; returns the entry count.

    The destination must be empty.  The operation stream and every content
    byte are functions of the workload alone, so two runs (or two modes)
    produce byte-identical trees.
    """
    plan = plan_tree(w)
    rng = random.Random(w.seed ^ 0x5EED)
    for d in plan.dirs:
        fs.mkdir(d, 0o755)
    for path, size in plan.files:
        fs.create(path, 0o644)
        written = 0
        while written < size:
            chunk = min(_WRITE_CHUNK, size - written)
            fs.write(path, rng.randbytes(chunk), written)
            written += chunk
        fs.release(path)
    for path, target in plan.symlinks:
        fs.symlink(target, path)
    return plan.entry_count


def remove_tree(fs, directory: str = "/") -> None:
    """Recursive removal in readdir order (the `rm -rf` shape)."""
    for name, kind in fs.readdir(directory):
        path = path_join(directory, name)
        if kind is NodeKind.DIR:
            remove_tree(fs, path)
            fs.rmdir(path)
        else:
            fs.unlink(path)


def traverse_tree(fs, directory: str = "/") -> int:
    """readdir + per-entry getattr walk (the `find`/`du` shape)."""
    seen = 0
    for name, kind in fs.readdir(directory):
        path = path_join(directory, name)
        fs.getattr(path)
        seen += 1
        if kind is NodeKind.DIR:
            seen += traverse_tree(fs, path)
    return seen


def copy_tree(src, dst, directory: str = "/") -> None:
    """Replay a finished tree from one store onto another (stage copy-out)."""
    for name, kind in src.readdir(directory):
        path = path_join(directory, name)
        if kind is NodeKind.DIR:
            dst.mkdir(path, src.getattr(path).mode)
            copy_tree(src, dst, path)
        elif kind is NodeKind.SYMLINK:
            dst.symlink(src.readlink(path), path)
        else:
            record = src.getattr(path)
            dst.create(path, record.mode)
            offset = 0
            while offset < record.size:
                data = src.read(path, offset, _WRITE_CHUNK)
                if not data:
                    break
                dst.write(path, data, offset)
                offset += len(data)
            dst.release(path)


# --------------------------------------------------------------------------
# report


@dataclass
class BenchRow:
    scenario: str
    mode: str
    replicate: int
    seconds: float
    ok: bool = True


class BenchReport:
    def __init__(self):
        self.rows: list[BenchRow] = []

    def add(self, row: BenchRow) -> None:
        self.rows.append(row)

    def _ok_samples(self, scenario: str, mode: str) -> list[float]:
        return [r.seconds for r in self.rows
                if r.ok and r.scenario == scenario and r.mode == mode]

    def summary(self) -> dict[tuple[str, str], dict[str, float]]:
        out: dict[tuple[str, str], dict[str, float]] = {}
        keys = list(dict.fromkeys((r.scenario, r.mode) for r in self.rows))
        for scenario, mode in keys:
            samples = self._ok_samples(scenario, mode)
            if not samples:
                out[(scenario, mode)] = {"n": 0}
                continue
            out[(scenario, mode)] = {
                "n": len(samples),
                "min": min(samples),
                "mean": statistics.mean(samples),
                "median": statistics.median(samples),
                "max": max(samples),
            }
        return out

    def median(self, scenario: str, mode: str) -> float:
        return statistics.median(self._ok_samples(scenario, mode))

    def to_csv(self) -> str:
        lines = ["scenario,mode,replicate,seconds,ok"]
        for r in self.rows:
            lines.append(f"{r.scenario},{r.mode},{r.replicate},"
                         f"{r.seconds:.6f},{int(r.ok)}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        lines = ["Timing results (in seconds)",
                 f"{'scenario':<10} {'mode':<8} {'n':>3} {'min':>9} "
                 f"{'mean':>9} {'median':>9} {'max':>9}"]
        for (scenario, mode), stats in self.summary().items():
            if stats["n"] == 0:
                lines.append(f"{scenario:<10} {mode:<8} {0:>3} "
                             "(no successful replicates)")
                continue
            lines.append(
                f"{scenario:<10} {mode:<8} {stats['n']:>3} "
                f"{stats['min']:>9.3f} {stats['mean']:>9.3f} "
                f"{stats['median']:>9.3f} {stats['max']:>9.3f}")
        failed = [r for r in self.rows if not r.ok]
        if failed:
            lines.append(f"excluded replicates: "
                         + ", ".join(f"{r.scenario}/{r.mode}#{r.replicate}"
                                     for r in failed))
        return "\n".join(lines) + "\n"


def emit_report(report: BenchReport, fmt: str = "table") -> str:
    if fmt == "table":
        return report.to_table()
    if fmt == "csv":
        return report.to_csv()
    raise ValueError(f"unknown report format: {fmt}")


# --------------------------------------------------------------------------
# scenario execution


def _latencied_store(latency: float, seed: int) -> MemoryStore:
    store = MemoryStore(seed=seed)
    if latency > 0:
        store.set_latency(latency, METADATA_KINDS)
    return store


def _populated_store(w: Workload, latency: float, seed: int) -> MemoryStore:
    """Target tree built with latency off (setup is not part of the task)."""
    store = MemoryStore(seed=seed)
    generate_tree(w, DirectOps(store))
    if latency > 0:
        store.set_latency(latency, METADATA_KINDS)
    return store


def _eager_shim(store: MemoryStore, max_pending: int) -> EagerShim:
    policy = EagerPolicy(max_pending=max_pending)
    # deferred-error reports from a replicate go to the ledger check, not
    # the process stderr
    return EagerShim(store, policy, err_stream=io.StringIO())


def _run_one(scenario: str, mode: str, w: Workload, latency: float,
             max_pending: int, seed: int) -> tuple[float, bool, str]:
    """One replicate; returns (seconds, ok, final-digest)."""
    if scenario == "extract":
        if mode == "eager":
            store = _latencied_store(latency, seed)
            shim = _eager_shim(store, max_pending)
            t0 = time.perf_counter()
            generate_tree(w, ShimOps(shim))
            ledger = shim.drain()
            elapsed = time.perf_counter() - t0
            return elapsed, len(ledger) == 0, store.snapshot_tree()
        if mode == "direct":
            store = _latencied_store(latency, seed)
            t0 = time.perf_counter()
            generate_tree(w, DirectOps(store))
            elapsed = time.perf_counter() - t0
            return elapsed, True, store.snapshot_tree()
        if mode == "staged":
            stage = MemoryStore(seed=seed)  # fast local staging area
            target = _latencied_store(latency, seed)
            t0 = time.perf_counter()
            generate_tree(w, DirectOps(stage))
            copy_tree(DirectOps(stage), DirectOps(target))
            elapsed = time.perf_counter() - t0
            return elapsed, True, target.snapshot_tree()

    if scenario == "remove":
        store = _populated_store(w, latency, seed)
        if mode == "eager":
            shim = _eager_shim(store, max_pending)
            t0 = time.perf_counter()
            remove_tree(ShimOps(shim))
            ledger = shim.drain()
            elapsed = time.perf_counter() - t0
            return elapsed, len(ledger) == 0, store.snapshot_tree()
        if mode == "direct":
            t0 = time.perf_counter()
            remove_tree(DirectOps(store))
            elapsed = time.perf_counter() - t0
            return elapsed, True, store.snapshot_tree()

    if scenario == "traverse":
        store = _populated_store(w, latency, seed)
        expected = plan_tree(w).entry_count
        if mode == "eager":
            shim = _eager_shim(store, max_pending)
            t0 = time.perf_counter()
            seen = traverse_tree(ShimOps(shim))
            ledger = shim.drain()  # drain also waits out the prefetchers
            elapsed = time.perf_counter() - t0
            return elapsed, len(ledger) == 0 and seen == expected, store.snapshot_tree()
        if mode == "direct":
            t0 = time.perf_counter()
            seen = traverse_tree(DirectOps(store))
            elapsed = time.perf_counter() - t0
            return elapsed, seen == expected, store.snapshot_tree()

    raise ValueError(f"mode {mode!r} is not runnable for scenario {scenario!r}")


def modes_for(scenario: str,
              requested: str | tuple[str, ...] = "all") -> tuple[str, ...]:
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario: {scenario}")
    available = MODES if scenario == "extract" else ("eager", "direct")
    if requested == "all":
        return tuple(available)
    wanted = (requested,) if isinstance(requested, str) else tuple(requested)
    for m in wanted:
        if m not in MODES:
            raise ValueError(f"unknown mode: {m}")
        if m not in available:
            raise ValueError(
                f"mode {m!r} only applies to extraction, not {scenario!r}")
    return wanted


def run_scenario(scenario: str, mode: str | tuple[str, ...] = "all",
                 workload: Workload | None = None, latency: float = 0.002,
                 replicates: int = 5, max_pending: int = 4000,
                 report: BenchReport | None = None) -> BenchReport:
    """Run `replicates` timed replicates per mode, interleaved round-robin.

    Each replicate covers the full task including drain/flush (and the
    copy-out step for staged extraction).  Every replicate's resulting tree
    digest must match the scenario's first; mismatches or deferred errors
    flag the row as failed.
    """
    w = workload or Workload()
    mode_list = modes_for(scenario, mode)
    report = report or BenchReport()
    reference_digest: str | None = None
    for rep in range(replicates):
        for m in mode_list:
            try:
                seconds, ok, digest = _run_one(scenario, m, w, latency,
                                               max_pending, seed=w.seed + rep)
            except EagerFSError:
                report.add(BenchRow(scenario, m, rep, 0.0, ok=False))
                continue
            if reference_digest is None:
                reference_digest = digest
            ok = ok and digest == reference_digest
            report.add(BenchRow(scenario, m, rep, seconds, ok))
    return report
