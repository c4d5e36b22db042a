"""Persistent subdomain workers driven by message passing.

Each worker is a separate process that owns one subdomain and a private state
dict (its local mesh, factorizations, row blocks). The orchestrator talks to a
worker only through its pipe; replies are always collected in rank order.

Two float vectors of global length ("input" and "output") live in shared
memory. Operator and preconditioner applications read the input vector and
write the rows each worker owns into the output vector, so no array data
crosses the pipes inside a Krylov iteration.
"""

import ctypes
import importlib
import multiprocessing as mp
import pickle
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from src.config import settings
from src.utils import CorrolabError, WorkerError, logger

Handler = Callable[..., Any]

# op name -> handler(state, **payload); filled by the modules that define work
HANDLERS: Dict[str, Handler] = {}

# imported by every worker process so that their handlers are registered
WORKER_MODULES = ("src.services",)

VECTOR_NAMES = ("input", "output")

STOP_OP = "__stop__"


def handler(op: str):
    """Register a function as the handler of worker op `op`"""

    def decorator(fn: Handler) -> Handler:
        HANDLERS[op] = fn
        return fn

    return decorator


@dataclass
class Message:
    op: str
    payload: Dict[str, Any] = field(default_factory=dict)


@dataclass
class Reply:
    rank: int
    value: Any = None
    error: Optional[BaseException] = None


def dispatch(state: Dict[str, Any], op: str, payload: Dict[str, Any]) -> Any:
    fn = HANDLERS.get(op)
    if fn is None:
        raise CorrolabError(f"unknown worker op '{op}'")
    return fn(state, **payload)


def reraise(error: WorkerError):
    """Raise a library error from a worker as itself; anything else stays a WorkerError"""
    if isinstance(error.cause, CorrolabError):
        raise error.cause from error
    raise error


@handler("ping")
def _ping(state):
    return state["rank"]


class SharedVectors:
    """Named float64 vectors of one length, shared with the worker processes.

    Without a multiprocessing context the vectors are plain arrays, which is
    what the inline pool uses.
    """

    def __init__(self, size: int, context=None):
        self.size = size
        self._raw = {}
        if context is not None:
            for name in VECTOR_NAMES:
                self._raw[name] = context.RawArray(ctypes.c_double, max(size, 1))
        self._attach()

    def _attach(self) -> None:
        if self._raw:
            self.arrays = {
                name: np.frombuffer(raw, dtype=np.float64)[: self.size]
                for name, raw in self._raw.items()
            }
        else:
            self.arrays = {name: np.zeros(self.size) for name in VECTOR_NAMES}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __getstate__(self):
        return {"size": self.size, "_raw": self._raw}

    def __setstate__(self, state) -> None:
        self.__dict__.update(state)
        self._attach()


def _serve(rank: int, conn, context: Any, vectors: SharedVectors, modules: Sequence[str]) -> None:
    """Worker process main loop"""
    for module in modules:
        importlib.import_module(module)
    state: Dict[str, Any] = {"rank": rank, "context": context, "vectors": vectors}
    while True:
        try:
            message = conn.recv()
        except EOFError:
            break
        if message.op == STOP_OP:
            break
        try:
            reply = Reply(rank, value=dispatch(state, message.op, message.payload))
        except Exception as e:
            reply = Reply(rank, error=e)
        try:
            conn.send(reply)
        except (pickle.PicklingError, TypeError, AttributeError) as e:
            conn.send(Reply(rank, error=CorrolabError(f"reply to '{message.op}' not picklable: {e}")))
    conn.close()


class WorkerPool:
    """N persistent worker processes, one per subdomain.

    Usable as a context manager; workers are started once and reused for
    every operation of the time loop. Each worker receives its context once,
    at start-up.
    """

    def __init__(
        self,
        size: int,
        contexts: Optional[Sequence[Any]] = None,
        vector_size: int = 0,
        modules: Sequence[str] = WORKER_MODULES,
    ):
        if size < 1:
            raise CorrolabError(f"worker pool needs at least one worker, got {size}")
        if size > settings.max_workers:
            raise CorrolabError(f"{size} workers exceeds the limit of {settings.max_workers}")
        if contexts is not None and len(contexts) != size:
            raise CorrolabError("one context per worker required")
        self.size = size
        self.contexts = [None] * size if contexts is None else list(contexts)
        self.modules = tuple(modules)
        self._mp = mp.get_context(settings.worker_start_method)
        self.vectors = SharedVectors(vector_size, self._mp)
        self._processes: List[Any] = []
        self._conns: List[Any] = []
        self.running = False

    def start(self) -> None:
        """Start all workers and wait until each answers"""
        if self.running:
            return
        for rank in range(self.size):
            parent, child = self._mp.Pipe()
            process = self._mp.Process(
                target=_serve,
                args=(rank, child, self.contexts[rank], self.vectors, self.modules),
                name=f"subdomain-worker-{rank}",
                daemon=True,
            )
            process.start()
            child.close()
            self._processes.append(process)
            self._conns.append(parent)
        self.running = True
        try:
            self.broadcast("ping")
        except BaseException:
            self.stop()
            raise
        logger.debug(f"Started {self.size} subdomain worker processes")

    def stop(self) -> None:
        """Stop all workers and wait for them to exit"""
        if not self._processes:
            self.running = False
            return
        for conn in self._conns:
            try:
                conn.send(Message(STOP_OP))
            except (BrokenPipeError, OSError):
                pass
        for process in self._processes:
            process.join(timeout=10)
            if process.is_alive():
                process.terminate()
                process.join()
        for conn in self._conns:
            conn.close()
        self._processes, self._conns = [], []
        self.running = False
        logger.debug("Subdomain workers stopped")

    def __enter__(self) -> "WorkerPool":
        self.start()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.stop()

    def _receive(self, rank: int) -> Reply:
        try:
            return self._conns[rank].recv()
        except (EOFError, OSError) as e:
            self.running = False
            raise WorkerError(rank, CorrolabError("worker process exited")) from e

    def scatter(self, op: str, payloads: Sequence[Dict[str, Any]]) -> List[Any]:
        """Send payloads[i] to worker i; results come back in rank order"""
        if not self.running:
            raise CorrolabError("worker pool is not running")
        if len(payloads) != self.size:
            raise CorrolabError(f"{len(payloads)} payloads for {self.size} workers")
        for conn, payload in zip(self._conns, payloads):
            conn.send(Message(op, dict(payload)))
        replies = [self._receive(rank) for rank in range(self.size)]
        for reply in replies:
            if reply.error is not None:
                raise WorkerError(reply.rank, reply.error) from reply.error
        return [reply.value for reply in replies]

    def broadcast(self, op: str, **payload: Any) -> List[Any]:
        """Send the same payload to every worker"""
        return self.scatter(op, [payload] * self.size)


class InlinePool:
    """Same contract as WorkerPool, executed in the calling process"""

    def __init__(
        self,
        size: int,
        contexts: Optional[Sequence[Any]] = None,
        vector_size: int = 0,
        modules: Sequence[str] = WORKER_MODULES,
    ):
        if contexts is not None and len(contexts) != size:
            raise CorrolabError("one context per worker required")
        self.size = size
        self.vectors = SharedVectors(vector_size)
        self._states = [
            {
                "rank": rank,
                "context": None if contexts is None else contexts[rank],
                "vectors": self.vectors,
            }
            for rank in range(size)
        ]
        self.running = True

    def start(self) -> None:
        pass

    def stop(self) -> None:
        pass

    def __enter__(self) -> "InlinePool":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        pass

    def scatter(self, op: str, payloads: Sequence[Dict[str, Any]]) -> List[Any]:
        if len(payloads) != self.size:
            raise CorrolabError(f"{len(payloads)} payloads for {self.size} workers")
        results = []
        for rank, payload in enumerate(payloads):
            try:
                results.append(dispatch(self._states[rank], op, dict(payload)))
            except Exception as e:
                raise WorkerError(rank, e) from e
        return results

    def broadcast(self, op: str, **payload: Any) -> List[Any]:
        return self.scatter(op, [payload] * self.size)
