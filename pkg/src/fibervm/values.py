"""Runtime values, environments, and the persistent lists the engine is built on.

Frame lists, continuations, and stack segments are all persistent singly
linked lists so that capturing a continuation never copies frames: a cell is
a plain ``(head, tail)`` tuple and the empty list is ``None``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Iterator, Optional

from .syntax import Expr, Label, Lam, LamKind

# ---------------------------------------------------------------------------
# Persistent list helpers ("cons cells").
# ---------------------------------------------------------------------------

Cell = Optional[tuple]


def cons(head: Any, tail: Cell) -> Cell:
    return (head, tail)


def citer(cell: Cell) -> Iterator[Any]:
    while cell is not None:
        yield cell[0]
        cell = cell[1]


def clen(cell: Cell) -> int:
    n = 0
    while cell is not None:
        n += 1
        cell = cell[1]
    return n


def clist(*items: Any) -> Cell:
    return cfrom(items)


def cfrom(items) -> Cell:
    out: Cell = None
    for item in reversed(list(items)):
        out = (item, out)
    return out


def cappend(front: Cell, back: Cell) -> Cell:
    """front @ back without mutating either."""
    out = back
    for item in reversed(list(citer(front))):
        out = (item, out)
    return out


def ctolist(cell: Cell) -> list:
    return list(citer(cell))


# ---------------------------------------------------------------------------
# Environments: persistent association chains, innermost binding first.
# ---------------------------------------------------------------------------

EMPTY_ENV = None


class Env:
    """One binding layer; lookups walk outwards. The empty environment is None."""

    __slots__ = ("name", "value", "parent")

    def __init__(self, name: str, value: "Value", parent: Optional["Env"]):
        self.name = name
        self.value = value
        self.parent = parent

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Env):
            return NotImplemented
        return (
            self.name == other.name
            and self.value == other.value
            and self.parent == other.parent
        )

    def __repr__(self) -> str:
        pairs = ", ".join(f"{n}={value_repr(v)}" for n, v in env_items(self))
        return "{" + pairs + "}"


def env_bind(env: Optional[Env], name: str, value: "Value") -> Env:
    return Env(name, value, env)


def env_lookup(env: Optional[Env], name: str) -> "Value":
    e = env
    while e is not None:
        if e.name == name:
            return e.value
        e = e.parent
    raise KeyError(name)


def env_items(env: Optional[Env]):
    e = env
    while e is not None:
        yield e.name, e.value
        e = e.parent


# ---------------------------------------------------------------------------
# Values.
# ---------------------------------------------------------------------------


class Value:
    __slots__ = ()


@dataclass(frozen=True)
class IntVal(Value):
    n: int


@dataclass(frozen=True)
class Closure(Value):
    kind: LamKind
    param: str
    body: Expr
    env: Optional[Env]


@dataclass(frozen=True)
class Kont(Value):
    """A captured continuation: a fiber list plus a one-shot identity."""

    fibers: Cell  # cons list of machine.Fiber, innermost first
    kid: int


@dataclass(frozen=True)
class EffVal(Value):
    """An effect in flight; ``fibers`` grows as it crosses non-matching handlers."""

    label: Label
    fibers: Cell


@dataclass(frozen=True)
class ExnVal(Value):
    label: Label


@dataclass(frozen=True)
class PrimRef(Value):
    """A builtin, possibly partially applied."""

    name: str
    applied: tuple = ()


@dataclass(frozen=True)
class CellRef(Value):
    """Handle into the store; ``kind`` is "cell" or "queue"."""

    cid: int
    kind: str = "cell"


def closure_of(lam: Lam, env: Optional[Env]) -> Closure:
    return Closure(lam.kind, lam.param, lam.body, env)


def value_repr(v: Value) -> str:
    if isinstance(v, IntVal):
        return str(v.n)
    if isinstance(v, Closure):
        tag = "fun" if v.kind is LamKind.OCAML else "cfun"
        return f"<{tag} {v.param}>"
    if isinstance(v, Kont):
        return f"<kont #{v.kid}>"
    if isinstance(v, EffVal):
        return f"<eff {v.label.name}>"
    if isinstance(v, ExnVal):
        return f"<exn {v.label.name}>"
    if isinstance(v, PrimRef):
        if v.applied:
            return f"<prim {v.name}/{len(v.applied)}>"
        return f"<prim {v.name}>"
    if isinstance(v, CellRef):
        return f"<{v.kind} {v.cid}>"
    return repr(v)
