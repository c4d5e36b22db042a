import os
import pickle
from functools import partial

import numpy as np
import pytest

from src.services.workers import HANDLERS, InlinePool, WorkerPool, handler, reraise
from src.utils import CorrolabError, SubdomainSolveError, WorkerError

# worker processes import this module so the handlers below exist there too
MODULES = ("src.services", "tests.test_workers")


@handler("test_echo")
def _echo(state, value):
    return (state["rank"], state["context"], value)


@handler("test_pid")
def _pid(state):
    return os.getpid()


@handler("test_fail")
def _fail(state, bad_rank):
    if state["rank"] == bad_rank:
        raise ValueError("boom")
    return state["rank"]


@handler("test_subdomain_fail")
def _subdomain_fail(state):
    raise SubdomainSolveError("singular block", state["rank"])


@handler("test_remember")
def _remember(state, value=None):
    if value is not None:
        state["memory"] = value
    return state.get("memory")


@handler("test_write_rank")
def _write_rank(state):
    vectors = state["vectors"]
    rank = state["rank"]
    vectors["output"][rank] = 2.0 * vectors["input"][rank] + rank
    return None


def test_handlers_are_registered():
    assert HANDLERS["test_echo"] is _echo


POOLS = [partial(WorkerPool, modules=MODULES), partial(InlinePool, modules=MODULES)]


@pytest.mark.parametrize("make_pool", POOLS, ids=["process", "inline"])
class TestPools:
    def test_replies_come_back_in_rank_order(self, make_pool):
        with make_pool(3, contexts=["a", "b", "c"]) as pool:
            replies = pool.scatter("test_echo", [{"value": 10}, {"value": 11}, {"value": 12}])
        assert replies == [(0, "a", 10), (1, "b", 11), (2, "c", 12)]

    def test_broadcast(self, make_pool):
        with make_pool(2) as pool:
            assert pool.broadcast("test_echo", value="x") == [(0, None, "x"), (1, None, "x")]

    def test_worker_error_names_the_rank(self, make_pool):
        with make_pool(3) as pool:
            with pytest.raises(WorkerError) as err:
                pool.broadcast("test_fail", bad_rank=1)
            assert err.value.rank == 1
            assert isinstance(err.value.cause, ValueError)
            # the pool survives a failed operation
            assert pool.broadcast("test_fail", bad_rank=-1) == [0, 1, 2]

    def test_library_error_keeps_its_type(self, make_pool):
        with make_pool(2) as pool:
            with pytest.raises(WorkerError) as err:
                pool.broadcast("test_subdomain_fail")
        with pytest.raises(SubdomainSolveError) as solve_err:
            reraise(err.value)
        assert solve_err.value.subdomain == 0

    def test_state_persists_between_messages(self, make_pool):
        with make_pool(2) as pool:
            pool.scatter("test_remember", [{"value": "p"}, {"value": "q"}])
            assert pool.broadcast("test_remember") == ["p", "q"]

    def test_shared_vectors(self, make_pool):
        with make_pool(3, vector_size=5) as pool:
            pool.vectors["input"][:] = np.arange(5.0)
            pool.vectors["output"][:] = -1.0
            pool.broadcast("test_write_rank")
            np.testing.assert_array_equal(pool.vectors["output"], [0.0, 3.0, 6.0, -1.0, -1.0])

    def test_wrong_payload_count(self, make_pool):
        with make_pool(2) as pool:
            with pytest.raises(CorrolabError):
                pool.scatter("test_echo", [{"value": 1}])


def test_workers_are_separate_processes():
    with WorkerPool(2, modules=MODULES) as pool:
        pids = pool.broadcast("test_pid")
    assert len(set(pids)) == 2
    assert os.getpid() not in pids


def test_unknown_op_is_reported():
    with WorkerPool(1, modules=MODULES) as pool:
        with pytest.raises(WorkerError):
            pool.broadcast("no_such_op")


def test_stopped_pool_refuses_work():
    pool = WorkerPool(1, modules=MODULES)
    pool.start()
    pool.stop()
    with pytest.raises(CorrolabError):
        pool.broadcast("test_echo", value=1)


def test_worker_limit():
    with pytest.raises(CorrolabError):
        WorkerPool(10_000)


@pytest.mark.parametrize(
    "error",
    [
        SubdomainSolveError("zero pivot", 3),
        WorkerError(2, SubdomainSolveError("zero pivot", 2)),
        CorrolabError("plain"),
    ],
)
def test_errors_cross_the_process_boundary(error):
    copy = pickle.loads(pickle.dumps(error))
    assert type(copy) is type(error)
    assert str(copy) == str(error)
    if isinstance(error, WorkerError):
        assert copy.rank == 2
        assert copy.cause.subdomain == 2
