"""Discrete-event kernel: a (time, sequence) priority queue and
generator-based processes.

A process is a generator that yields

* an ``int``: sleep that many simulated milliseconds,
* a ``Future``: resume with its value, or have its error thrown in,
* a ``list`` of futures: resume with a list of values, where failed
  futures contribute their exception object instead of raising.
"""

from __future__ import annotations

import heapq
from typing import Any, Callable, Generator

from ..core import Clock


class SimTimeout(Exception):
    pass


class Future:
    __slots__ = ("done", "value", "error", "_callbacks")

    def __init__(self):
        self.done = False
        self.value: Any = None
        self.error: BaseException | None = None
        self._callbacks: list[Callable[["Future"], None]] = []

    def set_result(self, value: Any = None) -> None:
        if self.done:
            return
        self.done, self.value = True, value
        self._fire()

    def set_error(self, error: BaseException) -> None:
        if self.done:
            return
        self.done, self.error = True, error
        self._fire()

    def _fire(self) -> None:
        callbacks, self._callbacks = self._callbacks, []
        for cb in callbacks:
            cb(self)

    def add_done_callback(self, cb: Callable[["Future"], None]) -> None:
        if self.done:
            cb(self)
        else:
            self._callbacks.append(cb)

    @classmethod
    def resolved(cls, value: Any = None) -> "Future":
        f = cls()
        f.set_result(value)
        return f


class Kernel:
    def __init__(self, clock: Clock | None = None):
        self.clock = clock or Clock()
        self._queue: list[tuple[int, int, Callable, tuple]] = []
        self._seq = 0
        self.stopped = False

    @property
    def now(self) -> int:
        return self.clock.now()

    def at(self, t: int, fn: Callable, *args) -> None:
        if t < self.now:
            t = self.now
        heapq.heappush(self._queue, (t, self._seq, fn, args))
        self._seq += 1

    def schedule(self, delay: int, fn: Callable, *args) -> None:
        self.at(self.now + max(0, int(delay)), fn, *args)

    def sleep(self, ms: int) -> Future:
        f = Future()
        self.schedule(ms, f.set_result, None)
        return f

    def with_timeout(self, fut: Future, ms: int, what: str = "request") -> Future:
        out = Future()
        fut.add_done_callback(lambda f: out.set_error(f.error) if f.error else out.set_result(f.value))
        self.schedule(ms, lambda: out.set_error(SimTimeout(f"{what} timed out after {ms} ms")))
        return out

    def spawn(self, gen: Generator) -> Future:
        result = Future()
        self.schedule(0, self._step, gen, result, None, None)
        return result

    def _step(self, gen: Generator, result: Future, value: Any, error: BaseException | None) -> None:
        if self.stopped:
            return
        try:
            yielded = gen.throw(error) if error is not None else gen.send(value)
        except StopIteration as stop:
            result.set_result(stop.value)
            return
        except Exception as exc:  # surfaced through the process future
            result.set_error(exc)
            return
        if isinstance(yielded, int):
            self.schedule(yielded, self._step, gen, result, None, None)
        elif isinstance(yielded, Future):
            yielded.add_done_callback(
                lambda f: self.schedule(0, self._step, gen, result, f.value, f.error))
        elif isinstance(yielded, list):
            gathered = gather(yielded)
            gathered.add_done_callback(
                lambda f: self.schedule(0, self._step, gen, result, f.value, None))
        else:
            self.schedule(0, self._step, gen, result, None,
                          TypeError(f"process yielded unsupported {type(yielded).__name__}"))

    def run(self, until: int) -> None:
        while self._queue and not self.stopped:
            t, _, fn, args = self._queue[0]
            if t > until:
                break
            heapq.heappop(self._queue)
            self.clock.set(t)
            fn(*args)
        if self.now < until:
            self.clock.set(until)


def gather(futures: list[Future]) -> Future:
    out = Future()
    if not futures:
        out.set_result([])
        return out
    remaining = [len(futures)]

    def done(_f):
        remaining[0] -= 1
        if remaining[0] == 0:
            out.set_result([f.error if f.error is not None else f.value for f in futures])

    for f in futures:
        f.add_done_callback(done)
    return out
