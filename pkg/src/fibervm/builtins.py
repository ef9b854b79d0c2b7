"""Native builtins and the mutable store they operate on.

Builtins behave like C abstractions: applying one from OCaml code crosses to
a fresh C segment and the native transition runs there (traced as CallPrim).
A zero-arity builtin is invoked by applying it to one ignored argument.

Failures raise reserved exception labels in the object language:
Queue_Empty, Assert_failure, Not_ready, and Invalid_argument for arguments
of the wrong kind.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

from .values import CellRef, IntVal, Value

READY_ALWAYS = 0
READY_ALTERNATE = 1


class BuiltinRaise(Exception):
    """Signal from a native transition that behaves like (raise label 0)."""

    def __init__(self, label_name: str):
        super().__init__(label_name)
        self.label_name = label_name


@dataclass
class Store:
    """Cells, queues, simulated input channels, and the observable output log."""

    cells: dict[int, Value] = field(default_factory=dict)
    queues: dict[int, deque] = field(default_factory=dict)
    output: list[str] = field(default_factory=list)
    chan_reads: dict[int, int] = field(default_factory=dict)
    ready_policy: int = READY_ALTERNATE
    poll_count: int = 0
    _next_id: int = 0

    def new_cell(self, value: Value) -> CellRef:
        self._next_id += 1
        self.cells[self._next_id] = value
        return CellRef(self._next_id, "cell")

    def new_queue(self) -> CellRef:
        self._next_id += 1
        self.queues[self._next_id] = deque()
        return CellRef(self._next_id, "queue")


@dataclass(frozen=True)
class Builtin:
    name: str
    arity: int
    fn: Callable[[Store, tuple], Value]

    @property
    def needed_args(self) -> int:
        return max(self.arity, 1)


def _int_arg(v: Value) -> int:
    if not isinstance(v, IntVal):
        raise BuiltinRaise("Invalid_argument")
    return v.n


def _cell_arg(store: Store, v: Value) -> int:
    if not isinstance(v, CellRef) or v.cid not in store.cells:
        raise BuiltinRaise("Invalid_argument")
    return v.cid


def _queue_arg(store: Store, v: Value) -> int:
    if not isinstance(v, CellRef) or v.cid not in store.queues:
        raise BuiltinRaise("Invalid_argument")
    return v.cid


def _ref_new(store, args):
    return store.new_cell(args[0])


def _ref_get(store, args):
    return store.cells[_cell_arg(store, args[0])]


def _ref_set(store, args):
    store.cells[_cell_arg(store, args[0])] = args[1]
    return IntVal(0)


def _queue_new(store, args):
    return store.new_queue()


def _queue_push(store, args):
    store.queues[_queue_arg(store, args[0])].append(args[1])
    return IntVal(0)


def _queue_push_front(store, args):
    store.queues[_queue_arg(store, args[0])].appendleft(args[1])
    return IntVal(0)


def _queue_pop(store, args):
    q = store.queues[_queue_arg(store, args[0])]
    if not q:
        raise BuiltinRaise("Queue_Empty")
    return q.popleft()


def _print_int(store, args):
    store.output.append(str(_int_arg(args[0])))
    return IntVal(0)


def _assert_eq(store, args):
    if _int_arg(args[0]) != _int_arg(args[1]):
        raise BuiltinRaise("Assert_failure")
    return IntVal(0)


def _assert_lt(store, args):
    if not _int_arg(args[0]) < _int_arg(args[1]):
        raise BuiltinRaise("Assert_failure")
    return IntVal(0)


def _chan_read(store, args):
    # Simulated input: channel c yields c*100+1, c*100+2, ...
    chan = _int_arg(args[0])
    n = store.chan_reads.get(chan, 0) + 1
    store.chan_reads[chan] = n
    return IntVal(chan * 100 + n)


def _check_ready(store, args):
    _int_arg(args[0])
    store.poll_count += 1
    if store.ready_policy == READY_ALWAYS:
        return IntVal(0)
    if store.poll_count % 2 == 1:  # every other poll completes a read
        return IntVal(0)
    raise BuiltinRaise("Not_ready")


def _set_ready_policy(store, args):
    policy = _int_arg(args[0])
    if policy not in (READY_ALWAYS, READY_ALTERNATE):
        raise BuiltinRaise("Invalid_argument")
    store.ready_policy = policy
    return IntVal(0)


def _close_channel(store, args):
    _int_arg(args[0])
    store.output.append("closed")
    return IntVal(0)


def builtin_table() -> dict[str, Builtin]:
    table = [
        Builtin("ref_new", 1, _ref_new),
        Builtin("ref_get", 1, _ref_get),
        Builtin("ref_set", 2, _ref_set),
        Builtin("queue_new", 0, _queue_new),
        Builtin("queue_push", 2, _queue_push),
        Builtin("queue_push_front", 2, _queue_push_front),
        Builtin("queue_pop", 1, _queue_pop),
        Builtin("print_int", 1, _print_int),
        Builtin("assert_eq", 2, _assert_eq),
        Builtin("assert_lt", 2, _assert_lt),
        Builtin("chan_read", 1, _chan_read),
        Builtin("check_ready", 1, _check_ready),
        Builtin("set_ready_policy", 1, _set_ready_policy),
        Builtin("close_channel", 1, _close_channel),
    ]
    return {b.name: b for b in table}


BUILTINS = builtin_table()
