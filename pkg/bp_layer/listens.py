"""Synchronous status broadcasting for long-running drivers."""

from typing import Any, Callable, List

from bp_layer import log


class RawListens:
    def __get__(self, obj: "Listens", objtype=None) -> Any:
        return obj._status

    def __set__(self, obj: "Listens", value: Any) -> None:
        obj._status = value
        if obj._listeners:
            log.debug(f"Notifying {len(obj._listeners)} listeners of update {obj._count}...")
            for listener in obj._listeners:
                listener(value)
            obj._count = obj._count + 1


class Listens:
    """Holds a status; every assignment is handed to all listeners in order.

    Drivers assign progress records (training steps, iteration states) to
    ``status``; callers register callbacks to record them.
    """

    _listeners: List[Callable[[Any], None]]
    status: RawListens = RawListens()
    _count: int = 0

    def __init__(self) -> None:
        self._listeners = []
        self._status = None

    def add_listener(self, callback: Callable[[Any], None]) -> None:
        self._listeners.append(callback)

    def stop_listening(self) -> None:
        self._listeners = []


class Recorder(Listens):
    """A Listens that keeps every status it was given."""

    def __init__(self) -> None:
        super().__init__()
        self.history: List[Any] = []
        self.add_listener(self.history.append)
