"""The small-step reduction engine over alternating C and OCaml stack segments.

A configuration is <term, environment, stack>. The stack alternates C
segments (plain frame lists, unaccounted) and OCaml segments (a non-empty
list of fibers over a C segment), terminating in the empty OCaml stack.
Each step fires exactly one named rule:

  administrative  Var Arith1 Arith2 Arith3 App1 App2 App3
                  Resume1 Resume2 Perform Raise
  C segment       CallC Callback RetToO ExnFwdO CallPrim
  OCaml segment   CallO ExtCall RetToC RetFib Handle ExnHn ExnFwdC
                  ExnFwdFib EffHn EffFwd EffUnHn Resume
  exn fast path   HandleFast RetFast ExnHnFast ExnFwdFast   (opt_exn only)

CallPrim is the native transition of a builtin on a C segment; the fast-path
rules implement exception-only handlers as linked marker frames on the
current fiber instead of fresh fibers. Everything else is exactly the named
reduction it is traced as.

Notable behaviours:
  * deep handlers: a captured continuation always ends with the handler's
    own fiber, so resumed code is handled by the same handler again;
  * effects never cross a C segment: an effect reaching the bottom fiber of
    an OCaml segment reinstates the suspended computation and raises
    Unhandled at the perform site; an effect value surfacing on a C segment
    is a fatal error;
  * continuations are one-shot unless the runtime is in multishot mode, in
    which case every resume clones the captured fibers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, auto
from typing import Optional, Union

from .builtins import BUILTINS, BuiltinRaise, Store
from .runtime import (
    FiberMeta,
    FiberRuntime,
    FiberState,
    LeakEntry,
    OneShotViolation,
    RuntimeConfig,
    RuntimeMode,
)
from .syntax import (
    ArithOp,
    App,
    Arith,
    Expr,
    Handle,
    HandlerSpec,
    IntConst,
    Label,
    Lam,
    LamKind,
    Perform,
    Raise,
    Var,
    parse,
    wrap_entry,
)
from .values import (
    cappend,
    Cell,
    citer,
    clen,
    Closure,
    closure_of,
    cons,
    EffVal,
    Env,
    env_bind,
    env_lookup,
    ExnVal,
    IntVal,
    Kont,
    PrimRef,
    Value,
    value_repr,
)

UNHANDLED = Label("Unhandled")
INVALID_ARGUMENT = Label("Invalid_argument")
DIVISION_BY_ZERO = Label("Division_by_zero")

Term = Union[Expr, Value]


# ---------------------------------------------------------------------------
# Frames, fibers, stacks, configurations.
# ---------------------------------------------------------------------------


class Frame:
    __slots__ = ()


@dataclass(frozen=True)
class ArgFrame(Frame):
    expr: Expr
    env: Optional[Env]


@dataclass(frozen=True)
class FunFrame(Frame):
    value: Value


@dataclass(frozen=True)
class Arith1Frame(Frame):
    op: ArithOp
    rhs: Expr
    env: Optional[Env]


@dataclass(frozen=True)
class Arith2Frame(Frame):
    op: ArithOp
    lhs: int


@dataclass(frozen=True)
class MarkerFrame(Frame):
    """Linked exception-handler frame used by the exn fast path."""

    spec: HandlerSpec
    env: Optional[Env]


@dataclass(frozen=True)
class HandlerClosure:
    spec: HandlerSpec
    env: Optional[Env]


@dataclass(frozen=True)
class Fiber:
    """One heap stack segment: frames plus the handler that delimits it.

    ``meta`` is None for the identity seed fiber an effect value is born
    with; those carry no runtime accounting.
    """

    frames: Cell  # cons list of Frame
    handler: HandlerClosure
    meta: Optional[FiberMeta]


@dataclass(frozen=True)
class CStack:
    frames: Cell  # cons list of Frame, never word-accounted
    below: Optional["OStack"]  # None is the empty OCaml stack terminator


@dataclass(frozen=True)
class OStack:
    k: Cell  # non-empty cons list of Fiber, innermost first
    below: CStack


Stack = Union[CStack, OStack]


@dataclass(frozen=True)
class Configuration:
    term: Term
    env: Optional[Env]
    stack: Stack
    store: Store


IDENTITY_SPEC = HandlerSpec("x", Var("x"))
IDENTITY_HC = HandlerClosure(IDENTITY_SPEC, None)
SEED_FIBER = Fiber(None, IDENTITY_HC, None)


def is_identity_handler(hc: HandlerClosure) -> bool:
    spec = hc.spec
    return (
        hc.env is None
        and not spec.exn_cases
        and not spec.eff_cases
        and isinstance(spec.value_body, Var)
        and spec.value_body.name == spec.value_param
    )


def initial_config(entry: Expr, store: Optional[Store] = None) -> Configuration:
    """<e, empty env, one empty C segment over the empty OCaml stack>."""
    return Configuration(_focus(entry), None, CStack(None, None), store or Store())


def _focus(term: Term) -> Term:
    return IntVal(term.n) if isinstance(term, IntConst) else term


# ---------------------------------------------------------------------------
# Step outcomes.
# ---------------------------------------------------------------------------


class FatalKind(Enum):
    UNCAUGHT_EXCEPTION = auto()
    STUCK_IN_C = auto()
    STUCK_OTHER = auto()


class StepOutcome:
    __slots__ = ()


@dataclass
class Next(StepOutcome):
    config: Configuration
    rule: str


@dataclass
class Done(StepOutcome):
    value: Value


@dataclass
class Fatal(StepOutcome):
    kind: FatalKind
    label: Optional[Label]
    message: str
    config: Configuration

    def describe(self) -> str:
        if self.kind is FatalKind.UNCAUGHT_EXCEPTION:
            return f"uncaught exception {self.label}"
        if self.kind is FatalKind.STUCK_IN_C:
            return f"stuck in C context: {self.message}"
        return f"stuck: {self.message}"


class _Stuck(Exception):
    def __init__(self, kind: FatalKind, message: str, label: Optional[Label] = None):
        super().__init__(message)
        self.kind = kind
        self.message = message
        self.label = label


def _trunc_div(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


_ARITH = {
    ArithOp.ADD: lambda a, b: a + b,
    ArithOp.SUB: lambda a, b: a - b,
    ArithOp.MUL: lambda a, b: a * b,
}


# ---------------------------------------------------------------------------
# Administrative reductions, shared by C and OCaml segments.
# ---------------------------------------------------------------------------


def admin_step(
    term: Term,
    env: Optional[Env],
    frames: Cell,
    meta: Optional[FiberMeta],
    runtime: FiberRuntime,
):
    """Try one administrative rule; returns (term', env', frames', rule) or None."""
    if isinstance(term, Var):
        try:
            val = env_lookup(env, term.name)
        except KeyError:
            if term.name in BUILTINS:
                val = PrimRef(term.name)
            else:
                raise _Stuck(
                    FatalKind.STUCK_OTHER, f"unbound variable '{term.name}'"
                ) from None
        return val, env, frames, "Var"

    if isinstance(term, Arith):
        runtime.charge_push(meta)
        return term.lhs, env, cons(Arith1Frame(term.op, term.rhs, env), frames), "Arith1"

    if isinstance(term, App):
        runtime.charge_push(meta)
        return term.fn, env, cons(ArgFrame(term.arg, env), frames), "App1"

    if isinstance(term, Lam):
        return closure_of(term, env), env, frames, "App2"

    if isinstance(term, Perform):
        runtime.charge_push(meta)
        eff = EffVal(term.label, cons(SEED_FIBER, None))
        return term.payload, env, cons(FunFrame(eff), frames), "Perform"

    if isinstance(term, Raise):
        runtime.charge_push(meta)
        return term.payload, env, cons(FunFrame(ExnVal(term.label)), frames), "Raise"

    if not isinstance(term, Value) or frames is None:
        return None
    head, rest = frames

    if isinstance(term, IntVal):
        if isinstance(head, Arith1Frame):
            frames2 = cons(Arith2Frame(head.op, term.n), rest)
            return head.rhs, head.env, frames2, "Arith2"
        if isinstance(head, Arith2Frame):
            runtime.charge_pop(meta)
            if head.op is ArithOp.DIV:
                if term.n == 0:
                    # behaves as if the source had been (raise Division_by_zero 0)
                    return Raise(DIVISION_BY_ZERO, IntConst(0)), env, rest, "Arith3"
                return IntVal(_trunc_div(head.lhs, term.n)), env, rest, "Arith3"
            return IntVal(_ARITH[head.op](head.lhs, term.n)), env, rest, "Arith3"
        return None

    if isinstance(term, (Closure, PrimRef)):
        if isinstance(head, ArgFrame):
            frames2 = cons(FunFrame(term), rest)
            return head.expr, head.env, frames2, "App3"
        if (
            isinstance(term, Closure)
            and isinstance(head, FunFrame)
            and isinstance(head.value, Kont)
            and rest is not None
            and isinstance(rest[0], ArgFrame)
        ):
            arg = rest[0]
            frames2 = cons(head, cons(FunFrame(term), rest[1]))
            return arg.expr, arg.env, frames2, "Resume2"
        return None

    if isinstance(term, Kont):
        if (
            isinstance(head, ArgFrame)
            and rest is not None
            and isinstance(rest[0], ArgFrame)
        ):
            frames2 = cons(FunFrame(term), rest)
            return head.expr, head.env, frames2, "Resume1"
        return None

    return None


# ---------------------------------------------------------------------------
# C reductions.
# ---------------------------------------------------------------------------


def _c_step(config: Configuration, runtime: FiberRuntime) -> StepOutcome:
    term, env, store = config.term, config.env, config.store
    stack: CStack = config.stack  # type: ignore[assignment]
    frames, below = stack.frames, stack.below

    admin = admin_step(term, env, frames, None, runtime)
    if admin is not None:
        term2, env2, frames2, rule = admin
        return Next(Configuration(_focus(term2), env2, CStack(frames2, below), store), rule)

    if not isinstance(term, Value):
        raise _Stuck(
            FatalKind.STUCK_OTHER,
            f"no C rule for expression {type(term).__name__}",
        )

    if frames is None:
        if below is None:
            return Done(term)
        return Next(Configuration(term, env, below, store), "RetToO")

    head, rest = frames
    if isinstance(head, FunFrame):
        callee = head.value
        if isinstance(callee, Closure) and callee.kind is LamKind.C:
            env2 = env_bind(callee.env, callee.param, term)
            return Next(
                Configuration(_focus(callee.body), env2, CStack(rest, below), store),
                "CallC",
            )
        if isinstance(callee, Closure) and callee.kind is LamKind.OCAML:
            parent = _locus_fiber_id(below)
            meta = runtime.alloc_fiber(parent=parent)
            fiber = Fiber(None, IDENTITY_HC, meta)
            env2 = env_bind(callee.env, callee.param, term)
            stack2 = OStack(cons(fiber, None), CStack(rest, below))
            return Next(Configuration(_focus(callee.body), env2, stack2, store), "Callback")
        if isinstance(callee, PrimRef):
            return _call_prim(callee, term, env, rest, below, store)
        if isinstance(callee, ExnVal):
            if below is None:
                raise _Stuck(
                    FatalKind.UNCAUGHT_EXCEPTION,
                    f"uncaught exception {callee.label}",
                    callee.label,
                )
            top_fiber, k_rest = below.k
            runtime.charge_push(top_fiber.meta)
            fwd = Fiber(cons(head, top_fiber.frames), top_fiber.handler, top_fiber.meta)
            stack2 = OStack(cons(fwd, k_rest), below.below)
            return Next(Configuration(term, env, stack2, store), "ExnFwdO")
        if isinstance(callee, EffVal):
            raise _Stuck(
                FatalKind.STUCK_IN_C,
                f"effect {callee.label} performed in C context",
            )
        if isinstance(callee, Kont):
            raise _Stuck(
                FatalKind.STUCK_IN_C, "continuation resumed in C context"
            )
        raise _Stuck(
            FatalKind.STUCK_OTHER, f"cannot apply {value_repr(callee)}"
        )

    raise _Stuck(
        FatalKind.STUCK_OTHER,
        f"value {value_repr(term)} meets {type(head).__name__} on the C stack",
    )


def _call_prim(
    prim: PrimRef,
    arg: Value,
    env: Optional[Env],
    rest: Cell,
    below: Optional[OStack],
    store: Store,
) -> StepOutcome:
    builtin = BUILTINS[prim.name]
    args = prim.applied + (arg,)
    if len(args) < builtin.needed_args:
        result: Value = PrimRef(prim.name, args)
    else:
        if builtin.arity == 0:
            args = ()
        try:
            result = builtin.fn(store, args)
        except BuiltinRaise as exc:
            frames2 = cons(FunFrame(ExnVal(Label(exc.label_name))), rest)
            return Next(
                Configuration(IntVal(0), env, CStack(frames2, below), store), "CallPrim"
            )
    return Next(Configuration(result, env, CStack(rest, below), store), "CallPrim")


# ---------------------------------------------------------------------------
# OCaml reductions.
# ---------------------------------------------------------------------------


def _o_step(config: Configuration, runtime: FiberRuntime, opt_exn: bool) -> StepOutcome:
    term, env, store = config.term, config.env, config.store
    stack: OStack = config.stack  # type: ignore[assignment]
    fiber, k_rest = stack.k
    below = stack.below

    admin = admin_step(term, env, fiber.frames, fiber.meta, runtime)
    if admin is not None:
        term2, env2, frames2, rule = admin
        fiber2 = Fiber(frames2, fiber.handler, fiber.meta)
        stack2 = OStack(cons(fiber2, k_rest), below)
        return Next(Configuration(_focus(term2), env2, stack2, store), rule)

    if isinstance(term, Handle):
        spec = term.handler
        if opt_exn and not spec.eff_cases:
            # Exception-only handler: a linked marker frame, no fiber.
            runtime.charge_push(fiber.meta)
            fiber2 = Fiber(cons(MarkerFrame(spec, env), fiber.frames), fiber.handler, fiber.meta)
            runtime.overflow_check(fiber.meta)
            stack2 = OStack(cons(fiber2, k_rest), below)
            return Next(Configuration(_focus(term.body), env, stack2, store), "HandleFast")
        meta = runtime.alloc_fiber(parent=fiber.meta.id if fiber.meta else None)
        new_fiber = Fiber(None, HandlerClosure(spec, env), meta)
        runtime.overflow_check(meta)
        stack2 = OStack(cons(new_fiber, stack.k), below)
        return Next(Configuration(_focus(term.body), env, stack2, store), "Handle")

    if not isinstance(term, Value):
        raise _Stuck(
            FatalKind.STUCK_OTHER,
            f"no OCaml rule for expression {type(term).__name__}",
        )

    if fiber.frames is None:
        hc = fiber.handler
        if k_rest is None:
            if is_identity_handler(hc):
                if fiber.meta is not None:
                    runtime.free_fiber(fiber.meta)
                return Next(Configuration(term, env, below, store), "RetToC")
            raise _Stuck(
                FatalKind.STUCK_OTHER,
                "value returned to a lone non-identity fiber",
            )
        if fiber.meta is not None:
            runtime.free_fiber(fiber.meta)
        env2 = env_bind(hc.env, hc.spec.value_param, term)
        stack2 = OStack(k_rest, below)
        return Next(Configuration(_focus(hc.spec.value_body), env2, stack2, store), "RetFib")

    head, rest = fiber.frames

    if isinstance(head, MarkerFrame):
        # Fast-path value return: pop the marker, run the value case in place.
        runtime.charge_pop(fiber.meta)
        env2 = env_bind(head.env, head.spec.value_param, term)
        fiber2 = Fiber(rest, fiber.handler, fiber.meta)
        stack2 = OStack(cons(fiber2, k_rest), below)
        return Next(
            Configuration(_focus(head.spec.value_body), env2, stack2, store), "RetFast"
        )

    if isinstance(head, FunFrame):
        callee = head.value

        if isinstance(callee, Closure) and callee.kind is LamKind.OCAML:
            runtime.charge_pop(fiber.meta)
            env2 = env_bind(callee.env, callee.param, term)
            fiber2 = Fiber(rest, fiber.handler, fiber.meta)
            runtime.overflow_check(fiber.meta)
            stack2 = OStack(cons(fiber2, k_rest), below)
            return Next(Configuration(_focus(callee.body), env2, stack2, store), "CallO")

        if isinstance(callee, Closure) and callee.kind is LamKind.C:
            runtime.charge_pop(fiber.meta)
            env2 = env_bind(callee.env, callee.param, term)
            fiber2 = Fiber(rest, fiber.handler, fiber.meta)
            stack2 = CStack(None, OStack(cons(fiber2, k_rest), below))
            return Next(Configuration(_focus(callee.body), env2, stack2, store), "ExtCall")

        if isinstance(callee, PrimRef):
            # Builtins behave like C abstractions: run on an empty C segment.
            runtime.charge_pop(fiber.meta)
            fiber2 = Fiber(rest, fiber.handler, fiber.meta)
            stack2 = CStack(cons(head, None), OStack(cons(fiber2, k_rest), below))
            return Next(Configuration(term, env, stack2, store), "ExtCall")

        if isinstance(callee, Kont):
            return _resume(callee, term, env, fiber, rest, k_rest, below, store, runtime)

        if isinstance(callee, ExnVal):
            return _exn_dispatch(
                callee, term, env, fiber, rest, k_rest, below, store, runtime, opt_exn
            )

        if isinstance(callee, EffVal):
            return _eff_dispatch(callee, term, env, fiber, rest, k_rest, below, store, runtime)

        raise _Stuck(FatalKind.STUCK_OTHER, f"cannot apply {value_repr(callee)}")

    raise _Stuck(
        FatalKind.STUCK_OTHER,
        f"value {value_repr(term)} meets {type(head).__name__}",
    )


def _resume(
    kont: Kont,
    value: Value,
    env: Optional[Env],
    fiber: Fiber,
    rest: Cell,
    k_rest: Cell,
    below: CStack,
    store: Store,
    runtime: FiberRuntime,
) -> StepOutcome:
    if rest is None or not isinstance(rest[0], FunFrame):
        raise _Stuck(FatalKind.STUCK_OTHER, "continuation applied without a resumption closure")
    clos = rest[0].value
    if not (isinstance(clos, Closure) and clos.kind is LamKind.OCAML):
        raise _Stuck(FatalKind.STUCK_OTHER, "resumption closure must be an OCaml abstraction")
    after = rest[1]

    runtime.charge_pop(fiber.meta, 2)
    fiber2 = Fiber(after, fiber.handler, fiber.meta)
    current = cons(fiber2, k_rest)

    metas = [f.meta for f in citer(kont.fibers) if f.meta is not None]
    if runtime.config.mode is RuntimeMode.ONESHOT:
        try:
            runtime.resume(kont.kid, metas, fiber2.meta.id if fiber2.meta else None)
        except OneShotViolation:
            # Surfaces as (raise Invalid_argument 0) at the resume site.
            frames2 = cons(FunFrame(ExnVal(INVALID_ARGUMENT)), after)
            fiber3 = Fiber(frames2, fiber.handler, fiber.meta)
            runtime.charge_push(fiber.meta)
            stack2 = OStack(cons(fiber3, k_rest), below)
            return Next(Configuration(IntVal(0), env, stack2, store), "Resume")
        resumed = kont.fibers
    else:
        copies = []
        for f in citer(kont.fibers):
            if f.meta is None:
                copies.append(f)
            else:
                copies.append(Fiber(f.frames, f.handler, runtime.clone_meta(f.meta)))
        runtime.metrics.resume_copies += len([f for f in copies if f.meta is not None])
        runtime.reactivate(
            [f.meta for f in copies if f.meta is not None],
            fiber2.meta.id if fiber2.meta else None,
        )
        resumed = None
        for f in reversed(copies):
            resumed = cons(f, resumed)

    spliced = cappend(resumed, current)
    env2 = env_bind(clos.env, clos.param, value)
    runtime.overflow_check(_locus_meta(spliced))
    stack2 = OStack(spliced, below)
    return Next(Configuration(_focus(clos.body), env2, stack2, store), "Resume")


def _exn_dispatch(
    exn: ExnVal,
    value: Value,
    env: Optional[Env],
    fiber: Fiber,
    rest: Cell,
    k_rest: Cell,
    below: CStack,
    store: Store,
    runtime: FiberRuntime,
    opt_exn: bool,
) -> StepOutcome:
    if opt_exn:
        # Unwind to the nearest linked marker, one marker per step.
        dropped = 0
        node = rest
        while node is not None and not isinstance(node[0], MarkerFrame):
            dropped += 1
            node = node[1]
        if node is not None:
            marker: MarkerFrame = node[0]
            after = node[1]
            runtime.charge_pop(fiber.meta, dropped + 2)  # frames + marker + exn frame
            case = marker.spec.exn_case(exn.label)
            if case is not None:
                env2 = env_bind(marker.env, case.param, value)
                fiber2 = Fiber(after, fiber.handler, fiber.meta)
                stack2 = OStack(cons(fiber2, k_rest), below)
                return Next(Configuration(_focus(case.body), env2, stack2, store), "ExnHnFast")
            runtime.charge_push(fiber.meta)  # the exn frame is re-pushed
            fiber2 = Fiber(cons(FunFrame(exn), after), fiber.handler, fiber.meta)
            stack2 = OStack(cons(fiber2, k_rest), below)
            return Next(Configuration(value, env, stack2, store), "ExnFwdFast")

    hc = fiber.handler
    case = hc.spec.exn_case(exn.label)
    if case is not None:
        if fiber.meta is not None:
            runtime.free_fiber(fiber.meta)
        env2 = env_bind(hc.env, case.param, value)
        stack2 = OStack(k_rest, below)
        return Next(Configuration(_focus(case.body), env2, stack2, store), "ExnHn")

    if k_rest is not None:
        if fiber.meta is not None:
            runtime.free_fiber(fiber.meta)
        nxt, k_tail = k_rest
        runtime.charge_push(nxt.meta)
        fwd = Fiber(cons(FunFrame(exn), nxt.frames), nxt.handler, nxt.meta)
        stack2 = OStack(cons(fwd, k_tail), below)
        return Next(Configuration(value, env, stack2, store), "ExnFwdFib")

    if fiber.meta is not None:
        runtime.free_fiber(fiber.meta)
    stack2 = CStack(cons(FunFrame(exn), below.frames), below.below)
    return Next(Configuration(value, env, stack2, store), "ExnFwdC")


def _eff_dispatch(
    eff: EffVal,
    value: Value,
    env: Optional[Env],
    fiber: Fiber,
    rest: Cell,
    k_rest: Cell,
    below: CStack,
    store: Store,
    runtime: FiberRuntime,
) -> StepOutcome:
    hc = fiber.handler
    case = hc.spec.eff_case(eff.label)
    runtime.charge_pop(fiber.meta)  # the effect's fun frame leaves the fiber
    captured = Fiber(rest, hc, fiber.meta)
    depth = clen(eff.fibers)

    if case is not None:
        # Deep capture: the handler's own fiber is the last captured fiber.
        k2 = cappend(eff.fibers, cons(captured, None))
        metas = [f.meta for f in citer(k2) if f.meta is not None]
        kid = runtime.capture(metas, k2)
        runtime.metrics.handler_search_depths[depth] += 1
        kont = Kont(k2, kid)
        env2 = env_bind(env_bind(hc.env, case.kont_param, kont), case.param, value)
        stack2 = OStack(k_rest, below)
        return Next(Configuration(_focus(case.body), env2, stack2, store), "EffHn")

    if k_rest is not None:
        runtime.mark_captured(fiber.meta)
        k2 = cappend(eff.fibers, cons(captured, None))
        nxt, k_tail = k_rest
        runtime.charge_push(nxt.meta)
        fwd = Fiber(cons(FunFrame(EffVal(eff.label, k2)), nxt.frames), nxt.handler, nxt.meta)
        stack2 = OStack(cons(fwd, k_tail), below)
        return Next(Configuration(value, env, stack2, store), "EffFwd")

    # Bottom fiber of this OCaml stack: reinstate the suspended computation
    # and raise Unhandled where the effect was performed.
    runtime.metrics.handler_search_depths[depth] += 1
    reinstated = cappend(eff.fibers, cons(captured, None))
    runtime.reactivate(
        [f.meta for f in citer(eff.fibers) if f.meta is not None],
        fiber.meta.id if fiber.meta else None,
    )
    stack2 = OStack(reinstated, below)
    term2 = Raise(UNHANDLED, IntConst(0))
    return Next(Configuration(term2, None, stack2, store), "EffUnHn")


# ---------------------------------------------------------------------------
# Dispatch, locus tracking, tracing.
# ---------------------------------------------------------------------------


def step_config(
    config: Configuration, runtime: FiberRuntime, opt_exn: bool = True
) -> StepOutcome:
    """Fire the single applicable rule, or report Done or a fatal outcome."""
    try:
        if isinstance(config.stack, CStack):
            return _c_step(config, runtime)
        return _o_step(config, runtime, opt_exn)
    except _Stuck as stuck:
        return Fatal(stuck.kind, stuck.label, stuck.message, config)


def c_step(config: Configuration, runtime: FiberRuntime) -> StepOutcome:
    """One reduction of a configuration whose current segment is a C stack."""
    if not isinstance(config.stack, CStack):
        raise TypeError("c_step requires a C segment on top")
    return step_config(config, runtime)


def o_step(
    config: Configuration, runtime: FiberRuntime, opt_exn: bool = True
) -> StepOutcome:
    """One reduction of a configuration whose current segment is an OCaml stack."""
    if not isinstance(config.stack, OStack):
        raise TypeError("o_step requires an OCaml segment on top")
    return step_config(config, runtime, opt_exn)


def _locus_meta(k: Cell) -> Optional[FiberMeta]:
    for f in citer(k):
        if f.meta is not None:
            return f.meta
    return None


def _locus_fiber_id(stack: Optional[Stack]) -> Optional[int]:
    node = stack
    while node is not None:
        if isinstance(node, OStack):
            meta = _locus_meta(node.k)
            return meta.id if meta else None
        node = node.below
    return None


def execution_locus(stack: Stack) -> tuple:
    """Identity of the fiber a step runs on behalf of.

    C segments and identity seed fibers are transparent: external calls and
    callbacks execute for the nearest enclosing fiber, and the seed fiber only
    routes a resumed value back to the perform site.
    """
    fid = _locus_fiber_id(stack)
    return ("top",) if fid is None else ("fiber", fid)


@dataclass(frozen=True)
class TraceEvent:
    step: int
    rule: str
    where: str  # fiber id or "C"
    depth: int
    head_meta_id: Optional[int]

    def line(self) -> str:
        return f"{self.step}\t{self.rule}\t{self.where}"


@dataclass
class RunResult:
    status: str  # "done" | "fatal" | "budget"
    value: Optional[Value]
    fatal: Optional[Fatal]
    output: list[str]
    metrics: dict[str, int]
    leaks: list[LeakEntry]
    trace: Optional[list[TraceEvent]]
    steps: int
    final_config: Optional[Configuration]
    runtime: FiberRuntime


class Machine:
    """Drives step_config over a configuration, with metrics and tracing."""

    def __init__(
        self,
        entry: Expr,
        *,
        runtime_config: Optional[RuntimeConfig] = None,
        opt_exn: bool = True,
        trace: bool = False,
        validate_every: int = 0,
    ):
        self.runtime = FiberRuntime(runtime_config)
        self.store = Store()
        self.config = initial_config(entry, self.store)
        self.opt_exn = opt_exn
        self.events: Optional[list[TraceEvent]] = [] if trace else None
        self.validate_every = validate_every
        self.steps = 0
        self._locus = execution_locus(self.config.stack)

    def step(self) -> StepOutcome:
        before = self.config
        outcome = step_config(before, self.runtime, self.opt_exn)
        if isinstance(outcome, Next):
            self.steps += 1
            metrics = self.runtime.metrics
            metrics.steps_total += 1
            metrics.rule_counts[outcome.rule] += 1
            if self.events is not None:
                self.events.append(self._trace_event(before, outcome.rule))
            locus = execution_locus(outcome.config.stack)
            if locus != self._locus:
                metrics.fiber_switches += 1
                self._locus = locus
            self.config = outcome.config
            if self.validate_every and self.steps % self.validate_every == 0:
                validate_config(self.config, self.runtime)
        return outcome

    def _trace_event(self, config: Configuration, rule: str) -> TraceEvent:
        stack = config.stack
        if isinstance(stack, CStack):
            where = "C"
            depth = clen(stack.frames)
            head_meta = None
        else:
            head = stack.k[0]
            head_meta = head.meta.id if head.meta else None
            locus = execution_locus(stack)
            where = str(locus[1]) if locus[0] == "fiber" else "top"
            depth = clen(head.frames)
        return TraceEvent(self.steps, rule, where, depth, head_meta)

    def run(self, max_steps: int = 10_000_000) -> RunResult:
        outcome: StepOutcome = Next(self.config, "")
        for _ in range(max_steps):
            outcome = self.step()
            if isinstance(outcome, (Done, Fatal)):
                break
        else:
            outcome = None  # type: ignore[assignment]

        leaks = self.runtime.leak_report()
        metrics = self.runtime.metrics.to_dict(self.runtime.live_fiber_count())
        if isinstance(outcome, Done):
            return RunResult(
                "done", outcome.value, None, self.store.output, metrics, leaks,
                self.events, self.steps, self.config, self.runtime,
            )
        if isinstance(outcome, Fatal):
            return RunResult(
                "fatal", None, outcome, self.store.output, metrics, leaks,
                self.events, self.steps, outcome.config, self.runtime,
            )
        return RunResult(
            "budget", None, None, self.store.output, metrics, leaks,
            self.events, self.steps, self.config, self.runtime,
        )


def run_expr(
    expr: Expr,
    *,
    mode: RuntimeMode = RuntimeMode.ONESHOT,
    opt_exn: bool = True,
    trace: bool = False,
    max_steps: int = 10_000_000,
    stack_init: int = 16,
    red_zone: int = 16,
    cache_cap: int = 64,
    wrap: bool = True,
    validate_every: int = 0,
) -> RunResult:
    """Run an expression tree to completion under the given options."""
    config = RuntimeConfig(
        initial_words=stack_init,
        red_zone_words=red_zone,
        cache_capacity=cache_cap,
        mode=mode,
    )
    entry = wrap_entry(expr) if wrap else expr
    machine = Machine(
        entry, runtime_config=config, opt_exn=opt_exn, trace=trace,
        validate_every=validate_every,
    )
    return machine.run(max_steps=max_steps)


def run_source(source: str, **options) -> RunResult:
    return run_expr(parse(source), **options)


# ---------------------------------------------------------------------------
# Debug validation.
# ---------------------------------------------------------------------------


def validate_config(config: Configuration, runtime: FiberRuntime) -> None:
    """Assert the stack alternation shape and fiber liveness invariants.

    Dead fibers must not be reachable from the stack or from any fresh
    continuation; fibers on the stack must account exactly for their frames.
    """
    frame_words = runtime.config.frame_words
    seen_konts: set[int] = set()

    def check_value(v: Value) -> None:
        if isinstance(v, Kont):
            if v.kid in seen_konts:
                return
            seen_konts.add(v.kid)
            if runtime.kont_state(v.kid) == "USED":
                return  # consumed continuations are tombstones
            for f in citer(v.fibers):
                if f.meta is not None:
                    assert f.meta.state is not FiberState.DEAD, (
                        f"dead fiber {f.meta.id} reachable from kont {v.kid}"
                    )
                check_frames(f.frames)
        elif isinstance(v, EffVal):
            for f in citer(v.fibers):
                if f.meta is not None:
                    assert f.meta.state is not FiberState.DEAD
                check_frames(f.frames)
        elif isinstance(v, Closure):
            check_env(v.env)

    def check_env(env: Optional[Env]) -> None:
        e = env
        while e is not None:
            check_value(e.value)
            e = e.parent

    def check_frames(frames: Cell) -> None:
        for fr in citer(frames):
            if isinstance(fr, FunFrame):
                check_value(fr.value)
            elif isinstance(fr, (ArgFrame, Arith1Frame, MarkerFrame)):
                check_env(fr.env)

    node: Optional[Stack] = config.stack
    expect_c = isinstance(node, CStack)
    while node is not None:
        if isinstance(node, CStack):
            assert expect_c, "two adjacent C segments"
            check_frames(node.frames)
            expect_c = False
        else:
            assert not expect_c, "two adjacent OCaml segments"
            assert node.k is not None, "empty OCaml segment"
            for f in citer(node.k):
                if f.meta is not None:
                    assert f.meta.state is FiberState.ACTIVE, (
                        f"stack fiber {f.meta.id} is {f.meta.state.name}"
                    )
                    assert f.meta.used_words == frame_words * clen(f.frames), (
                        f"fiber {f.meta.id} accounts {f.meta.used_words} words "
                        f"for {clen(f.frames)} frames"
                    )
                check_frames(f.frames)
            expect_c = True
        node = node.below

    if isinstance(config.term, Value):
        check_value(config.term)
    check_env(config.env)
    for v in config.store.cells.values():
        check_value(v)
    for q in config.store.queues.values():
        for v in q:
            check_value(v)
