"""Random program generator for differential testing.

Generated programs are closed, structurally terminating (no general
application, so no self-application loops), and resume every captured
continuation at most once: effect-case bodies come from templates that
mention the continuation parameter zero or one times. Leaking a
continuation is allowed; resuming twice is not.

Raises and performs are biased toward labels some enclosing handler
actually covers, so most programs run deep instead of dying at the first
unhandled control transfer; a tail of genuinely fatal programs remains on
purpose.
"""

from __future__ import annotations

import random

from fibervm.syntax import (
    App,
    Arith,
    ArithOp,
    EffCase,
    ExnCase,
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
)

EFF_LABELS = [Label("P"), Label("Q")]
EXN_LABELS = [Label("A"), Label("B")]
RESERVED_EXNS = [Label("Division_by_zero"), Label("Unhandled"), Label("Invalid_argument")]


class Ctx:
    """Lexical context: variables in scope and labels with enclosing cases."""

    __slots__ = ("scope", "effs", "exns")

    def __init__(self, scope=(), effs=frozenset(), exns=frozenset()):
        self.scope = tuple(scope)
        self.effs = frozenset(effs)
        self.exns = frozenset(exns)

    def bind(self, name):
        return Ctx(self.scope + (name,), self.effs, self.exns)

    def under(self, handler: HandlerSpec):
        return Ctx(
            self.scope,
            self.effs | {c.label for c in handler.eff_cases},
            self.exns | {c.label for c in handler.exn_cases},
        )


class ProgramGen:
    def __init__(self, seed: int):
        self.rng = random.Random(seed)
        self.counter = 0

    def fresh(self, prefix: str) -> str:
        self.counter += 1
        return f"{prefix}{self.counter}"

    def program(self, depth: int = 5) -> Expr:
        # usually wrap the whole program in one or two covering handlers
        ctx = Ctx()
        wraps = self.rng.choices([0, 1, 2], weights=[1, 5, 4])[0]
        expr_depth = depth
        handlers = []
        for i in range(wraps):
            handler = self.handler_spec(expr_depth, ctx, covering=i == 0)
            handlers.append(handler)
            ctx = ctx.under(handler)
            expr_depth -= 1
        body = self.expr(expr_depth, ctx)
        for handler in reversed(handlers):
            body = Handle(body, handler)
        return body

    def expr(self, depth: int, ctx: Ctx) -> Expr:
        rng = self.rng
        if depth <= 0:
            if ctx.scope and rng.random() < 0.4:
                return Var(rng.choice(ctx.scope))
            return IntConst(rng.randint(-3, 9))
        choice = rng.random()
        if choice < 0.14:
            return IntConst(rng.randint(-3, 9))
        if choice < 0.22 and ctx.scope:
            return Var(rng.choice(ctx.scope))
        if choice < 0.40:
            op = rng.choice(list(ArithOp))
            return Arith(op, self.expr(depth - 1, ctx), self.expr(depth - 1, ctx))
        if choice < 0.52:
            name = self.fresh("v")
            bound = self.expr(depth - 1, ctx)
            body = self.expr(depth - 1, ctx.bind(name))
            return App(Lam(LamKind.OCAML, name, body), bound)
        if choice < 0.58:
            # external call; effects cannot cross it, so keep C bodies effect-free
            name = self.fresh("c")
            inner = Ctx(ctx.scope + (name,), frozenset(), ctx.exns)
            return App(Lam(LamKind.C, name, self.pure_expr(depth - 2, inner)),
                       self.expr(depth - 1, ctx))
        if choice < 0.66:
            label = self.pick_label(EXN_LABELS, ctx.exns, hit_rate=0.85)
            return Raise(label, self.expr(depth - 1, ctx))
        if choice < 0.80:
            label = self.pick_label(EFF_LABELS, ctx.effs, hit_rate=0.9)
            return Perform(label, self.expr(depth - 1, ctx))
        if choice < 0.86:
            return App(Var("print_int"), self.expr(depth - 1, ctx))
        handler = self.handler_spec(depth, ctx)
        return Handle(self.expr(depth - 1, ctx.under(handler)), handler)

    def pure_expr(self, depth: int, ctx: Ctx) -> Expr:
        """Arithmetic/let/print only: safe on a C segment."""
        rng = self.rng
        if depth <= 0:
            if ctx.scope and rng.random() < 0.5:
                return Var(rng.choice(ctx.scope))
            return IntConst(rng.randint(-3, 9))
        roll = rng.random()
        if roll < 0.5:
            op = rng.choice([ArithOp.ADD, ArithOp.SUB, ArithOp.MUL])
            return Arith(op, self.pure_expr(depth - 1, ctx), self.pure_expr(depth - 1, ctx))
        if roll < 0.7:
            return App(Var("print_int"), self.pure_expr(depth - 1, ctx))
        name = self.fresh("v")
        return App(
            Lam(LamKind.OCAML, name, self.pure_expr(depth - 1, ctx.bind(name))),
            self.pure_expr(depth - 1, ctx),
        )

    def pick_label(self, pool, covered, hit_rate):
        covered = [l for l in pool if l in covered]
        if covered and self.rng.random() < hit_rate:
            return self.rng.choice(covered)
        return self.rng.choice(pool)

    def handler_spec(self, depth: int, ctx: Ctx, covering: bool = False) -> HandlerSpec:
        rng = self.rng
        sub = max(depth - 2, 0)
        vparam = self.fresh("x")
        if covering:
            # The outermost layer is a safety net: it catches every label the
            # generator can produce and its own case bodies cannot escape.
            vbody = self.pure_expr(sub, ctx.bind(vparam))
            exn_labels = EXN_LABELS + RESERVED_EXNS
            eff_labels = list(EFF_LABELS)
            exn_cases = []
            for label in exn_labels:
                p = self.fresh("e")
                exn_cases.append(ExnCase(label, p, self.pure_expr(sub, ctx.bind(p))))
        else:
            vbody = self.expr(sub, ctx.bind(vparam))
            exn_labels = rng.sample(EXN_LABELS + RESERVED_EXNS, rng.randint(0, 2))
            eff_labels = rng.sample(EFF_LABELS, rng.randint(0, 2))
            exn_cases = []
            for label in exn_labels:
                p = self.fresh("e")
                exn_cases.append(ExnCase(label, p, self.expr(sub, ctx.bind(p))))
        eff_cases = [self.eff_case(label, sub, ctx) for label in eff_labels]
        return HandlerSpec(vparam, vbody, tuple(exn_cases), tuple(eff_cases))

    def eff_case(self, label: Label, sub_depth: int, ctx: Ctx) -> EffCase:
        rng = self.rng
        param = self.fresh("p")
        kont = self.fresh("k")
        inner = ctx.bind(param)  # nested code never sees the continuation
        roll = rng.random()
        if roll < 0.15:
            body = self.expr(sub_depth, inner)  # drop it (a leak is fine)
        elif roll < 0.85:
            # continue kont <expr>
            body = App(
                App(Var(kont), Lam(LamKind.OCAML, "rx", Var("rx"))),
                self.expr(sub_depth, inner),
            )
        else:
            # discontinue kont <label> <expr>
            lbl = rng.choice(EXN_LABELS)
            body = App(
                App(Var(kont), Lam(LamKind.OCAML, "rx", Raise(lbl, Var("rx")))),
                self.expr(sub_depth, inner),
            )
        return EffCase(label, param, kont, body)
