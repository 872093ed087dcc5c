"""Method-of-lines time loop and the hand-off of levels to diagnostics."""
from __future__ import annotations

import logging
import queue
import threading
from dataclasses import dataclass
from typing import Iterable, Iterator, Protocol, Sequence

import numpy as np

from .grid import Grid, cone_mask, ensure_finite

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Level:
    """One accepted time level: values, first and second time derivatives.

    Arrays have shape ``(C, nx, ny)`` in the order of ``names`` and are
    read-only.
    """

    index: int
    t: float
    names: tuple[str, ...]
    value: np.ndarray
    rate: np.ndarray
    accel: np.ndarray

    def comp(self, name: str) -> int:
        return self.names.index(name)


class System(Protocol):
    names: tuple[str, ...]
    grid: Grid
    order: int

    def rhs(self, t: float, U: np.ndarray) -> np.ndarray: ...

    def accel(self, t: float, U: np.ndarray, k1: np.ndarray) -> np.ndarray: ...

    def accept(self, t: float, U: np.ndarray) -> None: ...


class Consumer(Protocol):
    def consume(self, level: Level) -> None: ...

    def finish(self) -> None: ...


def _freeze(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def evolve(system: System, U0: np.ndarray, t0: float, dt: float, t_final: float,
           mask: bool = True) -> Iterator[Level]:
    """Classical RK4 stepping; yields every accepted level including the first.

    The cone mask is re-applied after each step.  Level times are
    ``t0 + k dt`` exactly.
    """
    C = len(system.names)
    nsteps = int(round((t_final - t0) / dt))
    if abs(t0 + nsteps * dt - t_final) > 1e-9 * max(1.0, t_final):
        raise ValueError(f"t_final - t0 = {t_final - t0} is not a multiple of dt = {dt}")
    U = np.array(U0, dtype=float)
    system.accept(t0, U)
    for k in range(nsteps + 1):
        t = t0 + k * dt
        k1 = system.rhs(t, U)
        yield Level(k, t, system.names, _freeze(U[:C]), _freeze(U[C:]),
                    _freeze(np.array(system.accel(t, U, k1))))
        if k == nsteps:
            break
        U = rk4_step(system, t, U, dt, k1)
        t_new = t0 + (k + 1) * dt
        if mask:
            U[:, ~cone_mask(system.grid, t_new)] = 0.0
        ensure_finite(U, t=t_new, what="state")
        system.accept(t_new, U)


def rk4_step(system: System, t: float, U: np.ndarray, dt: float, k1: np.ndarray | None = None) -> np.ndarray:
    if k1 is None:
        k1 = system.rhs(t, U)
    k2 = system.rhs(t + 0.5 * dt, U + 0.5 * dt * k1)
    k3 = system.rhs(t + 0.5 * dt, U + 0.5 * dt * k2)
    k4 = system.rhs(t + dt, U + dt * k3)
    return U + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_STOP = object()


def pump(levels: Iterable[Level], consumers: Sequence[Consumer], threads: int = 1,
         queue_size: int = 4) -> int:
    """Feed levels to consumers in order; returns the number of levels.

    With ``threads > 1`` the consumers run on a worker thread behind a
    bounded queue, so the evolution blocks when diagnostics fall behind and
    no level is dropped.
    """
    count = 0
    if threads <= 1:
        for lev in levels:
            for c in consumers:
                c.consume(lev)
            count += 1
        for c in consumers:
            c.finish()
        return count

    q: queue.Queue = queue.Queue(maxsize=queue_size)
    errors: list[BaseException] = []

    def work():
        try:
            while True:
                item = q.get()
                if item is _STOP:
                    break
                for c in consumers:
                    c.consume(item)
            for c in consumers:
                c.finish()
        except BaseException as exc:  # re-raised on the producer side
            errors.append(exc)
            while q.get() is not _STOP:
                pass

    worker = threading.Thread(target=work, name="diagnostics", daemon=True)
    worker.start()
    try:
        for lev in levels:
            if errors:
                break
            q.put(lev)
            count += 1
    finally:
        q.put(_STOP)
        worker.join()
    if errors:
        raise errors[0]
    return count
