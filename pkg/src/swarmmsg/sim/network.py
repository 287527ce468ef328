"""Lossy latency network between simulated endpoints.

Endpoints register a handler ``handler(src, body) -> value | Future | NO_REPLY``.
``request`` delivers ``body`` and resolves with the handler's reply after
the return trip, or fails with ``SimTimeout``.
"""

from __future__ import annotations

import random
from typing import Any, Callable

from .kernel import Future, Kernel, SimTimeout

NO_REPLY = object()


class Unreachable(Exception):
    pass


class Network:
    def __init__(self, kernel: Kernel, rng: random.Random, latency_ms: int = 40,
                 jitter_ms: int = 10, drop_rate: float = 0.0):
        self.kernel = kernel
        self.rng = rng
        self.latency_ms = latency_ms
        self.jitter_ms = jitter_ms
        self.drop_rate = drop_rate
        self.handlers: dict[str, Callable[[str, Any], Any]] = {}
        self.online: dict[str, bool] = {}
        self.sent = 0
        self.dropped = 0

    def register(self, endpoint: str, handler: Callable[[str, Any], Any]) -> None:
        self.handlers[endpoint] = handler
        self.online[endpoint] = True

    def set_online(self, endpoint: str, up: bool) -> None:
        self.online[endpoint] = up

    def is_up(self, endpoint: str) -> bool:
        return self.online.get(endpoint, False)

    def _delay(self) -> int:
        return self.latency_ms + (self.rng.randint(0, self.jitter_ms) if self.jitter_ms else 0)

    def _lost(self) -> bool:
        # always draw so the rng stream does not depend on drop_rate being 0
        roll = self.rng.random()
        return roll < self.drop_rate

    def deliver(self, src: str, dst: str, fn: Callable[[], None]) -> None:
        """Run ``fn`` at ``dst`` after one link delay, unless lost."""
        self.sent += 1
        lost = self._lost()
        delay = self._delay()
        if lost or not self.is_up(src) or not self.is_up(dst):
            self.dropped += 1
            return

        def arrive():
            if self.is_up(dst):
                fn()
            else:
                self.dropped += 1

        self.kernel.schedule(delay, arrive)

    def send(self, src: str, dst: str, body: Any) -> None:
        """One-way message; the reply, if any, is discarded."""
        self.deliver(src, dst, lambda: self.handlers[dst](src, body))

    def request(self, src: str, dst: str, body: Any, timeout_ms: int) -> Future:
        reply = Future()
        if dst not in self.handlers:
            reply.set_error(Unreachable(dst))
            return reply

        def at_dst():
            out = self.handlers[dst](src, body)
            if out is NO_REPLY:
                return
            if isinstance(out, Future):
                out.add_done_callback(lambda f: None if f.error or f.value is NO_REPLY
                                      else self.deliver(dst, src, lambda: reply.set_result(f.value)))
            else:
                self.deliver(dst, src, lambda: reply.set_result(out))

        self.deliver(src, dst, at_dst)
        return self.kernel.with_timeout(reply, timeout_ms, f"{src}->{dst}")


__all__ = ["Network", "NO_REPLY", "SimTimeout", "Unreachable"]
