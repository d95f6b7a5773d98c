import threading
import time

import pytest

from async_utils import run_blocking_tasks


def _slow(value, delay):
    def work():
        time.sleep(delay)
        return value
    return work


@pytest.mark.parametrize("threads", [1, 2, 8])
def test_results_come_back_in_submission_order(threads):
    funcs = [_slow(i, 0.01 * (5 - i)) for i in range(5)]
    assert run_blocking_tasks(funcs, threads=threads) == [0, 1, 2, 3, 4]


def test_empty_input():
    assert run_blocking_tasks([], threads=4) == []


def test_work_runs_on_several_threads():
    seen = set()
    barrier = threading.Barrier(2, timeout=5)

    def work():
        seen.add(threading.get_ident())
        barrier.wait()
        return True

    assert run_blocking_tasks([work, work], threads=2) == [True, True]
    assert len(seen) == 2


def _fail():
    raise RuntimeError("task failed")


@pytest.mark.parametrize("threads", [1, 3])
def test_first_failure_is_raised(threads):
    with pytest.raises(RuntimeError, match="task failed"):
        run_blocking_tasks([_slow(1, 0.0), _fail, _slow(3, 0.0)], threads=threads)


@pytest.mark.parametrize("threads", [1, 3])
def test_failures_can_be_returned(threads):
    results = run_blocking_tasks([_slow(1, 0.0), _fail, _slow(3, 0.0)], threads=threads, return_exceptions=True)
    assert results[0] == 1 and results[2] == 3
    assert isinstance(results[1], RuntimeError)


def test_thread_count_must_be_positive():
    with pytest.raises(ValueError):
        run_blocking_tasks([_slow(1, 0.0)], threads=0)
