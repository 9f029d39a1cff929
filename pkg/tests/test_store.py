"""Backing-store contract: semantics, latency, faults, log, digests."""

import random
import threading
import time

import pytest

from eagerfs import (DirectoryStore, FaultRule, MemoryStore, NodeKind, OpKind,
                     StoreRequest)
from eagerfs.errors import (EagerFSError, ErrorCode, IOFailure, NotADirectory,
                            NotFound, PermissionDenied)
from eagerfs.store import LatencyProfile

from trace_support import generate_trace, replay_sync, seed_roots


def req(kind, *paths, args=()):
    return StoreRequest(kind, tuple(paths), tuple(args))


# -- basic semantics -------------------------------------------------------


def test_mkdir_then_getattr_directory_record(store):
    store.apply(req(OpKind.MKDIR, "/d", args=(0o750,)))
    rec = store.apply(req(OpKind.GETATTR, "/d"))
    assert rec.kind is NodeKind.DIR
    assert rec.mode == 0o750
    assert rec.size == 0


def test_create_write_read_roundtrip(store):
    store.apply(req(OpKind.CREATE, "/f", args=(0o644,)))
    n = store.apply(req(OpKind.WRITE, "/f", args=(0, b"hello")))
    assert n == 5
    assert store.apply(req(OpKind.READ, "/f", args=(0, 5))) == b"hello"
    assert store.apply(req(OpKind.READ, "/f", args=(0, None))) == b"hello"
    assert store.apply(req(OpKind.READ, "/f", args=(3, 100))) == b"lo"


def test_sparse_write_zero_fills_gap(store):
    store.apply(req(OpKind.CREATE, "/f"))
    store.apply(req(OpKind.WRITE, "/f", args=(4, b"xy")))
    assert store.apply(req(OpKind.READ, "/f", args=(0, None))) == b"\0\0\0\0xy"


def test_truncate_shrinks_and_extends(store):
    store.apply(req(OpKind.CREATE, "/f"))
    store.apply(req(OpKind.WRITE, "/f", args=(0, b"abcdef")))
    store.apply(req(OpKind.TRUNCATE, "/f", args=(2,)))
    assert store.apply(req(OpKind.READ, "/f", args=(0, None))) == b"ab"
    store.apply(req(OpKind.TRUNCATE, "/f", args=(4,)))
    assert store.apply(req(OpKind.READ, "/f", args=(0, None))) == b"ab\0\0"


def test_create_over_existing_file_truncates_and_keeps_mode(store):
    store.apply(req(OpKind.CREATE, "/f", args=(0o600,)))
    store.apply(req(OpKind.WRITE, "/f", args=(0, b"old")))
    store.apply(req(OpKind.CREATE, "/f", args=(0o644,)))
    rec = store.apply(req(OpKind.GETATTR, "/f"))
    assert rec.size == 0
    assert rec.mode == 0o600  # O_CREAT on an existing file ignores mode


def test_mknod_is_exclusive(store):
    store.apply(req(OpKind.MKNOD, "/f"))
    with pytest.raises(IOFailure):
        store.apply(req(OpKind.MKNOD, "/f"))


def test_structural_errors(store):
    store.apply(req(OpKind.MKDIR, "/d"))
    store.apply(req(OpKind.CREATE, "/d/f"))
    with pytest.raises(IOFailure):
        store.apply(req(OpKind.CREATE, "/d"))          # create over a dir
    with pytest.raises(IOFailure):
        store.apply(req(OpKind.UNLINK, "/d"))          # unlink a dir
    with pytest.raises(NotADirectory):
        store.apply(req(OpKind.RMDIR, "/d/f"))         # rmdir a file
    with pytest.raises(IOFailure):
        store.apply(req(OpKind.RMDIR, "/d"))           # rmdir nonempty
    with pytest.raises(NotFound):
        store.apply(req(OpKind.GETATTR, "/missing"))
    with pytest.raises(NotFound):
        store.apply(req(OpKind.READ, "/d/zzz", args=(0, 1)))
    with pytest.raises(NotADirectory):
        store.apply(req(OpKind.GETATTR, "/d/f/deeper"))


def test_rename_semantics(store):
    store.apply(req(OpKind.MKDIR, "/d"))
    store.apply(req(OpKind.CREATE, "/d/a"))
    store.apply(req(OpKind.WRITE, "/d/a", args=(0, b"payload")))
    store.apply(req(OpKind.RENAME, "/d/a", "/d/b"))
    assert store.apply(req(OpKind.READ, "/d/b", args=(0, None))) == b"payload"
    with pytest.raises(NotFound):
        store.apply(req(OpKind.GETATTR, "/d/a"))
    # overwrite of an existing file is allowed
    store.apply(req(OpKind.CREATE, "/d/c"))
    store.apply(req(OpKind.RENAME, "/d/b", "/d/c"))
    assert store.apply(req(OpKind.READ, "/d/c", args=(0, None))) == b"payload"
    # moving a directory into its own subtree is refused
    store.apply(req(OpKind.MKDIR, "/d/sub"))
    with pytest.raises(IOFailure):
        store.apply(req(OpKind.RENAME, "/d", "/d/sub/d2"))
    # overwriting a nonempty directory is refused
    store.apply(req(OpKind.MKDIR, "/e"))
    with pytest.raises(IOFailure):
        store.apply(req(OpKind.RENAME, "/e", "/d"))


def test_rename_moves_whole_subtree(store):
    store.apply(req(OpKind.MKDIR, "/d"))
    store.apply(req(OpKind.MKDIR, "/d/sub"))
    store.apply(req(OpKind.CREATE, "/d/sub/f"))
    store.apply(req(OpKind.WRITE, "/d/sub/f", args=(0, b"x")))
    store.apply(req(OpKind.RENAME, "/d", "/e"))
    assert store.apply(req(OpKind.READ, "/e/sub/f", args=(0, None))) == b"x"
    with pytest.raises(NotFound):
        store.apply(req(OpKind.GETATTR, "/d"))


def test_symlink_and_readlink(store):
    store.apply(req(OpKind.SYMLINK, "/ln", args=("/target",)))
    assert store.apply(req(OpKind.READLINK, "/ln")) == "/target"
    rec = store.apply(req(OpKind.GETATTR, "/ln"))
    assert rec.kind is NodeKind.SYMLINK
    assert rec.size == len("/target")
    store.apply(req(OpKind.CREATE, "/f"))
    with pytest.raises(IOFailure):
        store.apply(req(OpKind.READLINK, "/f"))


def test_hard_link_shares_content_and_counts(store):
    store.apply(req(OpKind.CREATE, "/a"))
    store.apply(req(OpKind.WRITE, "/a", args=(0, b"shared")))
    store.apply(req(OpKind.LINK, "/a", "/b"))
    assert store.apply(req(OpKind.GETATTR, "/a")).nlink == 2
    store.apply(req(OpKind.WRITE, "/b", args=(0, b"SH")))
    assert store.apply(req(OpKind.READ, "/a", args=(0, None))) == b"SHared"
    store.apply(req(OpKind.UNLINK, "/a"))
    assert store.apply(req(OpKind.GETATTR, "/b")).nlink == 1


def test_chmod_chown_utimens(store):
    store.apply(req(OpKind.CREATE, "/f"))
    store.apply(req(OpKind.CHMOD, "/f", args=(0o4755,)))
    assert store.apply(req(OpKind.GETATTR, "/f")).mode == 0o4755
    store.apply(req(OpKind.CHOWN, "/f", args=(-1, -1)))  # keep both
    rec = store.apply(req(OpKind.GETATTR, "/f"))
    store.apply(req(OpKind.UTIMENS, "/f", args=((5.0, 7.0),)))
    rec = store.apply(req(OpKind.GETATTR, "/f"))
    assert (rec.atime, rec.mtime) == (5.0, 7.0)


def test_xattrs(store):
    store.apply(req(OpKind.CREATE, "/f"))
    store.apply(req(OpKind.SETXATTR, "/f", args=("user.k", b"v")))
    assert store.apply(req(OpKind.GETXATTR, "/f", args=("user.k",))) == b"v"
    assert store.apply(req(OpKind.LISTXATTR, "/f")) == ["user.k"]
    store.apply(req(OpKind.REMOVEXATTR, "/f", args=("user.k",)))
    with pytest.raises(NotFound):
        store.apply(req(OpKind.GETXATTR, "/f", args=("user.k",)))
    with pytest.raises(NotFound):
        store.apply(req(OpKind.REMOVEXATTR, "/f", args=("user.k",)))


def test_readdir_sorted_with_kinds(store):
    store.apply(req(OpKind.MKDIR, "/d"))
    store.apply(req(OpKind.CREATE, "/d/b"))
    store.apply(req(OpKind.MKDIR, "/d/a"))
    store.apply(req(OpKind.SYMLINK, "/d/c", args=("b",)))
    assert store.apply(req(OpKind.READDIR, "/d")) == [
        ("a", NodeKind.DIR), ("b", NodeKind.FILE), ("c", NodeKind.SYMLINK)]


def test_directory_nlink_counts_subdirs(store):
    store.apply(req(OpKind.MKDIR, "/d"))
    store.apply(req(OpKind.MKDIR, "/d/x"))
    store.apply(req(OpKind.MKDIR, "/d/y"))
    store.apply(req(OpKind.CREATE, "/d/f"))
    assert store.apply(req(OpKind.GETATTR, "/d")).nlink == 4  # 2 + subdirs


def test_statfs_shape(store):
    sv = store.apply(req(OpKind.STATFS, "/"))
    for key in ("f_bsize", "f_blocks", "f_bavail", "f_namemax"):
        assert key in sv


# -- latency ---------------------------------------------------------------


def test_fixed_latency_delays_apply(store):
    store.set_latency(0.005, [OpKind.MKDIR])
    t0 = time.monotonic()
    store.apply(req(OpKind.MKDIR, "/d"))
    assert time.monotonic() - t0 >= 0.005


def test_zero_latency_is_passthrough_timing(store):
    t0 = time.monotonic()
    for i in range(50):
        store.apply(req(OpKind.CREATE, f"/f{i}"))
    assert time.monotonic() - t0 < 0.5


def test_metadata_latency_leaves_writes_unaffected(store):
    from eagerfs.ops import METADATA_KINDS
    store.apply(req(OpKind.CREATE, "/f"))
    store.set_latency(0.02, METADATA_KINDS)
    t0 = time.monotonic()
    store.apply(req(OpKind.WRITE, "/f", args=(0, b"x")))
    write_elapsed = time.monotonic() - t0
    assert write_elapsed < 0.015
    t0 = time.monotonic()
    store.apply(req(OpKind.GETATTR, "/f"))
    assert time.monotonic() - t0 >= 0.02


def test_uniform_latency_mean_within_range(store):
    """Uniform 1-10 ms: the measured per-op mean over 1000 ops must land
    inside [1, 10] ms (the true mean is 5.5 ms; sleep overshoot cannot
    push it past the upper bound)."""
    store.set_latency((0.001, 0.010), [OpKind.GETATTR])
    durations = []
    mu = threading.Lock()

    def worker(count):
        for _ in range(count):
            t0 = time.monotonic()
            store.apply(req(OpKind.GETATTR, "/"))
            dt = time.monotonic() - t0
            with mu:
                durations.append(dt)

    threads = [threading.Thread(target=worker, args=(25,)) for _ in range(40)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(durations) == 1000
    mean = sum(durations) / len(durations)
    assert 0.001 <= mean <= 0.010
    assert min(durations) >= 0.001


def test_latency_profile_validation_and_sampling():
    prof = LatencyProfile()
    with pytest.raises(ValueError):
        prof.set(-0.001, [OpKind.READ])
    with pytest.raises(ValueError):
        prof.set((0.005, 0.001), [OpKind.READ])
    prof.set((0.002, 0.004), [OpKind.READ])
    rng = random.Random(7)
    samples = [prof.sample(OpKind.READ, rng) for _ in range(500)]
    assert all(0.002 <= s <= 0.004 for s in samples)
    assert prof.sample(OpKind.WRITE, rng) == 0.0
    prof.clear()
    assert prof.sample(OpKind.READ, rng) == 0.0


# -- faults ------------------------------------------------------------------


def test_one_shot_fault_fires_once(store):
    store.apply(req(OpKind.CREATE, "/f"))
    store.add_fault(FaultRule(code=ErrorCode.PERMISSION_DENIED,
                              kind=OpKind.UNLINK, path_glob="/f"))
    with pytest.raises(PermissionDenied):
        store.apply(req(OpKind.UNLINK, "/f"))
    store.apply(req(OpKind.UNLINK, "/f"))  # second attempt succeeds


def test_persistent_fault_from_nth_onwards(store):
    store.add_fault(FaultRule(code=ErrorCode.QUOTA_EXCEEDED, kind=OpKind.CREATE,
                              nth=2, one_shot=False))
    store.apply(req(OpKind.CREATE, "/a"))  # first matching call passes
    for path in ("/b", "/c"):
        with pytest.raises(EagerFSError) as ei:
            store.apply(req(OpKind.CREATE, path))
        assert ei.value.code is ErrorCode.QUOTA_EXCEEDED


def test_fault_glob_and_wildcards(store):
    store.add_fault(FaultRule(code=ErrorCode.IO_FAILURE, path_glob="/logs/*"))
    store.apply(req(OpKind.MKDIR, "/logs"))
    store.apply(req(OpKind.MKDIR, "/data"))
    store.apply(req(OpKind.CREATE, "/data/f"))
    with pytest.raises(IOFailure):
        store.apply(req(OpKind.CREATE, "/logs/f"))
    store.apply(req(OpKind.CREATE, "/logs/f"))  # rule spent
    store.clear_faults()


def test_faulted_request_leaves_tree_unchanged(store):
    store.apply(req(OpKind.CREATE, "/f"))
    before = store.snapshot_tree()
    store.add_fault(FaultRule(code=ErrorCode.PERMISSION_DENIED,
                              kind=OpKind.UNLINK))
    with pytest.raises(PermissionDenied):
        store.apply(req(OpKind.UNLINK, "/f"))
    assert store.snapshot_tree() == before


# -- execution log -----------------------------------------------------------


def test_exec_log_appends_in_order(store):
    store.apply(req(OpKind.CREATE, "/f"))
    store.apply(req(OpKind.WRITE, "/f", args=(0, b"ab")))
    store.apply(req(OpKind.GETATTR, "/f"))
    kinds = [e.request.kind for e in store.log.entries()]
    assert kinds == [OpKind.CREATE, OpKind.WRITE, OpKind.GETATTR]
    assert store.log.count(OpKind.WRITE) == 1
    assert [e.request.kind for e in store.log.for_path("/f")] == kinds
    assert all(e.result == "ok" for e in store.log.entries())
    store.log.clear()
    assert len(store.log) == 0


def test_exec_log_records_failures(store):
    with pytest.raises(NotFound):
        store.apply(req(OpKind.GETATTR, "/nope"))
    entry = store.log.entries()[-1]
    assert entry.result == ErrorCode.NOT_FOUND.value


# -- digests -----------------------------------------------------------------


def test_empty_digest_is_a_shared_constant(tmp_path):
    a, b = MemoryStore(), MemoryStore()
    assert a.snapshot_tree() == b.snapshot_tree()
    d = DirectoryStore(str(tmp_path))
    assert d.snapshot_tree() == a.snapshot_tree()


def test_digest_covers_content_mode_and_kind(store):
    store.apply(req(OpKind.CREATE, "/f"))
    base = store.snapshot_tree()
    store.apply(req(OpKind.WRITE, "/f", args=(0, b"x")))
    with_content = store.snapshot_tree()
    assert with_content != base
    store.apply(req(OpKind.CHMOD, "/f", args=(0o600,)))
    assert store.snapshot_tree() != with_content


def test_same_trace_replayed_twice_gives_equal_digests():
    trace = generate_trace(random.Random(42), nops=250, include_xattrs=True)
    digests = []
    for _ in range(2):
        s = MemoryStore()
        seed_roots(s)
        replay_sync(trace, s)
        digests.append(s.snapshot_tree())
    assert digests[0] == digests[1]


# -- the real-directory passthrough ------------------------------------------


@pytest.fixture
def dstore(tmp_path):
    return DirectoryStore(str(tmp_path))


def test_directory_store_basic_roundtrip(dstore, tmp_path):
    dstore.apply(req(OpKind.MKDIR, "/d", args=(0o750,)))
    dstore.apply(req(OpKind.CREATE, "/d/f", args=(0o600,)))
    dstore.apply(req(OpKind.WRITE, "/d/f", args=(0, b"bytes")))
    assert (tmp_path / "d" / "f").read_bytes() == b"bytes"
    rec = dstore.apply(req(OpKind.GETATTR, "/d/f"))
    assert rec.kind is NodeKind.FILE
    assert rec.mode == 0o600  # created mode pinned regardless of umask
    assert dstore.apply(req(OpKind.GETATTR, "/d")).mode == 0o750


def test_directory_store_maps_host_errors(dstore):
    with pytest.raises(NotFound):
        dstore.apply(req(OpKind.GETATTR, "/missing"))
    dstore.apply(req(OpKind.CREATE, "/f"))
    with pytest.raises(EagerFSError) as ei:
        dstore.apply(req(OpKind.READDIR, "/f"))
    assert ei.value.code is ErrorCode.NOT_A_DIRECTORY


def test_directory_store_refuses_root_escape(dstore):
    for escapee in ("/../outside", "/..", "/d/../../etc"):
        with pytest.raises(PermissionDenied):
            dstore.apply(req(OpKind.GETATTR, escapee))


def test_stores_agree_on_random_sync_traces(tmp_path):
    """Fake and passthrough are behaviorally equivalent on fault-free,
    latency-free traces: same per-op outcomes, same final digest."""
    for seed in (11, 12, 13):
        mem = MemoryStore()
        seed_roots(mem)
        (tmp_path / f"t{seed}").mkdir()
        disk = DirectoryStore(str(tmp_path / f"t{seed}"))
        seed_roots(disk)
        trace = generate_trace(random.Random(seed), nops=220)
        mem_out = replay_sync(trace, mem)
        disk_out = replay_sync(trace, disk)
        for i, (a, b) in enumerate(zip(mem_out, disk_out)):
            assert a == b, f"seed {seed} op {i} {trace[i]!r}: fake {a} vs real {b}"
        assert mem.snapshot_tree() == disk.snapshot_tree()
