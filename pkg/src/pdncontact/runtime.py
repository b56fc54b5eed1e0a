"""Rank runtime: ordered point-to-point channels, barriers, global sums.

Two interchangeable backends execute a world of ranks split into a rigid
group and a deformable group: "thread" (default; queues and threading
barriers) and "process" (fork + multiprocessing, for genuinely parallel
runs). The contract is deliberately tiny: ordered reliable delivery per
directed channel, a barrier per scope, and a deterministic global sum built
on top of the channels (gather to the lowest rank in fixed order, then
broadcast), so results do not depend on the backend.

Every context carries a trace recorder; the launcher returns the merged
per-rank interval records alongside the rank results.
"""

import queue
import threading
import time
import traceback
from dataclasses import dataclass, field

import numpy as np


class CommTimeout(RuntimeError):
    """A receive or barrier waited past the deadlock-detection timeout."""


class ProtocolError(RuntimeError):
    """Out-of-order message on an ordered channel (collective mismatch)."""


class RemoteRankError(RuntimeError):
    """Another rank failed; this rank was aborted."""


@dataclass
class TraceInterval:
    rank: int
    instance: str
    kind: str      # compute | idle | localize | exchange
    t_start: float
    t_end: float
    step: int


class TraceRecorder:
    def __init__(self, rank, instance):
        self.rank = rank
        self.instance = instance
        self.records = []
        self.step = 0

    def add(self, kind, t_start, t_end, step=None):
        self.records.append(
            TraceInterval(self.rank, self.instance, kind,
                          float(t_start), float(t_end),
                          self.step if step is None else int(step))
        )

    class _Span:
        def __init__(self, recorder, kind):
            self.recorder = recorder
            self.kind = kind

        def __enter__(self):
            self.t0 = time.perf_counter()
            return self

        def __exit__(self, *exc):
            self.recorder.add(self.kind, self.t0, time.perf_counter())
            return False

    def span(self, kind):
        """Context manager recording one interval of the given kind."""
        return TraceRecorder._Span(self, kind)


class RankContext:
    """One rank's handle on the world: messaging, collectives, trace."""

    def __init__(self, rank, instance, instance_ranks, peer_ranks, fabric):
        self.rank = rank
        self.instance = instance
        self.instance_ranks = tuple(instance_ranks)
        self.peer_ranks = tuple(peer_ranks)
        self.world_size = len(instance_ranks) + len(peer_ranks)
        self._fabric = fabric
        self.trace = TraceRecorder(rank, instance)

    # -- point to point ------------------------------------------------------

    def send(self, dst, tag, payload):
        self._fabric.send(self.rank, int(dst), tag, payload)

    def recv(self, src, tag):
        got_tag, payload = self._fabric.recv(self.rank, int(src))
        if got_tag != tag:
            raise ProtocolError(
                f"rank {self.rank} expected {tag!r} from rank {src}, got {got_tag!r}"
            )
        return payload

    # -- collectives ----------------------------------------------------------

    def barrier(self, scope="world"):
        self._fabric.barrier(self.rank, self._scope_name(scope))

    def _scope_name(self, scope):
        return scope if scope == "world" else f"instance/{self.instance}"

    def _scope_ranks(self, scope):
        if scope == "world":
            return sorted(self.instance_ranks + self.peer_ranks)
        return sorted(self.instance_ranks)

    def allreduce_sum(self, value, scope="instance"):
        """Deterministic sum over the scope: gather in rank order at the
        lowest rank, accumulate sequentially, broadcast back."""
        ranks = self._scope_ranks(scope)
        root = ranks[0]
        tag = f"reduce/{scope}"
        if self.rank == root:
            total = value
            for r in ranks[1:]:
                total = total + self.recv(r, tag)
            for r in ranks[1:]:
                self.send(r, tag + "/bcast", total)
            return total
        self.send(root, tag, value)
        return self.recv(root, tag + "/bcast")


# ---------------------------------------------------------------------------
# thread backend
# ---------------------------------------------------------------------------

class _ThreadFabric:
    def __init__(self, world_size, scopes, timeout):
        self.timeout = timeout
        self.queues = {
            (s, d): queue.SimpleQueue()
            for s in range(world_size)
            for d in range(world_size)
        }
        self.barriers = {name: threading.Barrier(len(ranks)) for name, ranks in scopes.items()}
        self.abort = threading.Event()

    def send(self, src, dst, tag, payload):
        self.queues[(src, dst)].put((tag, payload))

    def recv(self, me, src):
        return _fabric_recv(self, me, src)

    def barrier(self, rank, scope_name):
        try:
            self.barriers[scope_name].wait(timeout=self.timeout)
        except threading.BrokenBarrierError:
            if self.abort.is_set():
                raise RemoteRankError("aborted while waiting at barrier")
            raise CommTimeout(f"barrier {scope_name!r} timed out (scope mismatch?)")

    def fail(self):
        self.abort.set()
        for b in self.barriers.values():
            b.abort()


def _fabric_recv(fabric, me, src):
    q = fabric.queues[(src, me)]
    deadline = time.monotonic() + fabric.timeout
    while True:
        try:
            return q.get(timeout=0.05)
        except queue.Empty:
            if fabric.abort.is_set():
                raise RemoteRankError(f"rank {me} aborted while receiving from {src}")
            if time.monotonic() > deadline:
                raise CommTimeout(
                    f"rank {me} timed out receiving from rank {src} (deadlock?)"
                )


# ---------------------------------------------------------------------------
# process backend
# ---------------------------------------------------------------------------

class _ProcessFabric:
    def __init__(self, world_size, scopes, timeout, mp):
        self.timeout = timeout
        self.queues = {
            (s, d): mp.Queue()
            for s in range(world_size)
            for d in range(world_size)
        }
        self.barriers = {name: mp.Barrier(len(ranks)) for name, ranks in scopes.items()}
        self.abort = mp.Event()

    def send(self, src, dst, tag, payload):
        self.queues[(src, dst)].put((tag, payload))

    def recv(self, me, src):
        return _fabric_recv(self, me, src)

    def barrier(self, rank, scope_name):
        try:
            self.barriers[scope_name].wait(timeout=self.timeout)
        except threading.BrokenBarrierError:
            if self.abort.is_set():
                raise RemoteRankError("aborted while waiting at barrier")
            raise CommTimeout(f"barrier {scope_name!r} timed out (scope mismatch?)")

    def fail(self):
        self.abort.set()
        for b in self.barriers.values():
            try:
                b.abort()
            except Exception:
                pass


@dataclass
class WorldSpec:
    """Rank layout: rigid ranks come first, then deformable ranks."""

    n_rigid: int
    n_deformable: int

    def __post_init__(self):
        if self.n_rigid < 1 or self.n_deformable < 1:
            raise ValueError("both instances need at least one rank")

    @property
    def world_size(self):
        return self.n_rigid + self.n_deformable

    @property
    def rigid_ranks(self):
        return tuple(range(self.n_rigid))

    @property
    def deformable_ranks(self):
        return tuple(range(self.n_rigid, self.n_rigid + self.n_deformable))

    def instance_of(self, rank):
        return "rigid" if rank < self.n_rigid else "deformable"


def _make_context(rank, spec, fabric):
    if spec.instance_of(rank) == "rigid":
        return RankContext(rank, "rigid", spec.rigid_ranks, spec.deformable_ranks, fabric)
    return RankContext(rank, "deformable", spec.deformable_ranks, spec.rigid_ranks, fabric)


def _scopes(spec):
    return {
        "world": list(range(spec.world_size)),
        "instance/rigid": list(spec.rigid_ranks),
        "instance/deformable": list(spec.deformable_ranks),
    }


def launch(spec, rank_main, args=(), backend="thread", timeout=120.0):
    """Run `rank_main(ctx, *args)` on every rank; gather results and traces.

    Returns (results, trace_records): results indexed by rank, trace_records
    a flat list of TraceInterval from all ranks. The first rank failure
    aborts the world and is re-raised with rank attribution.
    """
    if backend == "thread":
        return _launch_threads(spec, rank_main, args, timeout)
    if backend == "process":
        return _launch_processes(spec, rank_main, args, timeout)
    raise ValueError(f"unknown backend {backend!r}")


def _launch_threads(spec, rank_main, args, timeout):
    fabric = _ThreadFabric(spec.world_size, _scopes(spec), timeout)
    results = [None] * spec.world_size
    traces = [None] * spec.world_size
    errors = {}

    def run(rank):
        ctx = _make_context(rank, spec, fabric)
        try:
            results[rank] = rank_main(ctx, *args)
        except BaseException as exc:  # noqa: BLE001 - rank attribution
            errors[rank] = exc
            fabric.fail()
        finally:
            traces[rank] = ctx.trace.records

    threads = [threading.Thread(target=run, args=(r,), name=f"rank-{r}")
               for r in range(spec.world_size)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    _raise_first(errors)
    return results, [rec for recs in traces for rec in recs]


def _process_entry(rank, spec, fabric, rank_main, args, result_q):
    ctx = _make_context(rank, spec, fabric)
    try:
        out = rank_main(ctx, *args)
        result_q.put((rank, "ok", out, ctx.trace.records))
    except BaseException as exc:  # noqa: BLE001
        fabric.fail()
        result_q.put((rank, "error",
                      f"{type(exc).__name__}: {exc}\n{traceback.format_exc()}",
                      ctx.trace.records))


def _launch_processes(spec, rank_main, args, timeout):
    import multiprocessing as mp

    ctx_mp = mp.get_context("fork")
    fabric = _ProcessFabric(spec.world_size, _scopes(spec), timeout, ctx_mp)
    result_q = ctx_mp.Queue()
    procs = [
        ctx_mp.Process(target=_process_entry,
                       args=(r, spec, fabric, rank_main, args, result_q))
        for r in range(spec.world_size)
    ]
    for p in procs:
        p.start()
    results = [None] * spec.world_size
    traces = [[] for _ in range(spec.world_size)]
    errors = {}
    for _ in range(spec.world_size):
        rank, status, payload, recs = result_q.get(timeout=timeout + 30.0)
        traces[rank] = recs
        if status == "ok":
            results[rank] = payload
        else:
            errors[rank] = RuntimeError(payload)
    for p in procs:
        p.join(timeout=30.0)
    _raise_first(errors)
    return results, [rec for recs in traces for rec in recs]


def _raise_first(errors):
    if not errors:
        return
    real = {r: e for r, e in errors.items() if not isinstance(e, RemoteRankError)}
    pick = real if real else errors
    rank = sorted(pick)[0]
    exc = pick[rank]
    raise RuntimeError(f"rank {rank} failed: {exc}") from exc
