"""Object-language syntax: core expression trees, the .fib reader, and sugar.

Concrete syntax is parenthesized prefix notation, whitespace separated, with
";" line comments:

    e ::= INT | IDENT
        | (lambda (IDENT) e) | (clambda (IDENT) e)
        | (e e) | (OP e e)                        OP in + - * /
        | (raise IDENT e) | (perform IDENT e)
        | (handle e valcase exncase* effcase*)
        | (let (IDENT e) e)
        | (continue e e) | (discontinue e IDENT e)

    valcase ::= (val IDENT e)
    exncase ::= (exn IDENT IDENT e)
    effcase ::= (eff IDENT IDENT IDENT e)

``let``, ``continue``, and ``discontinue`` are sugar: they are expanded while
reading and never appear in core trees. Keywords are reserved and cannot be
used as identifiers.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Union


class ParseError(Exception):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{message} (line {line}, col {col})" if line else message)
        self.message = message
        self.line = line
        self.col = col


class LamKind(Enum):
    OCAML = "lambda"
    C = "clambda"


class ArithOp(Enum):
    ADD = "+"
    SUB = "-"
    MUL = "*"
    DIV = "/"


@dataclass(frozen=True)
class Label:
    """Exception and effect labels; compared by name."""

    name: str

    def __str__(self) -> str:
        return self.name


class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class IntConst(Expr):
    n: int


@dataclass(frozen=True)
class Var(Expr):
    name: str


@dataclass(frozen=True)
class App(Expr):
    fn: Expr
    arg: Expr


@dataclass(frozen=True)
class Lam(Expr):
    kind: LamKind
    param: str
    body: Expr


@dataclass(frozen=True)
class Arith(Expr):
    op: ArithOp
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class Raise(Expr):
    label: Label
    payload: Expr


@dataclass(frozen=True)
class Perform(Expr):
    label: Label
    payload: Expr


@dataclass(frozen=True)
class ExnCase:
    label: Label
    param: str
    body: Expr


@dataclass(frozen=True)
class EffCase:
    label: Label
    param: str
    kont_param: str
    body: Expr


@dataclass(frozen=True)
class HandlerSpec:
    """One value case, at most one exn case per label, at most one eff case per label."""

    value_param: str
    value_body: Expr
    exn_cases: tuple = ()
    eff_cases: tuple = ()

    def exn_case(self, label: Label) -> Optional[ExnCase]:
        for case in self.exn_cases:
            if case.label == label:
                return case
        return None

    def eff_case(self, label: Label) -> Optional[EffCase]:
        for case in self.eff_cases:
            if case.label == label:
                return case
        return None

    def case_labels(self) -> str:
        names = [c.label.name for c in self.exn_cases]
        names += [c.label.name for c in self.eff_cases]
        return ",".join(names) if names else "val"


@dataclass(frozen=True)
class Handle(Expr):
    body: Expr
    handler: HandlerSpec


@dataclass(frozen=True)
class SourceProgram:
    path: str
    text: str
    entry: Expr  # already wrapped, see wrap_entry


# ---------------------------------------------------------------------------
# Desugaring and entry wrapping.
# ---------------------------------------------------------------------------


def desugar_continue(k: Expr, v: Expr) -> Expr:
    """continue k v  ==  ((k (lambda (x) x)) v)"""
    return App(App(k, Lam(LamKind.OCAML, "x", Var("x"))), v)


def desugar_discontinue(k: Expr, label: Label, v: Expr) -> Expr:
    """discontinue k l v  ==  ((k (lambda (x) (raise l x))) v)"""
    return App(App(k, Lam(LamKind.OCAML, "x", Raise(label, Var("x")))), v)


def wrap_entry(e: Expr) -> Expr:
    """Wrap a program so evaluation begins with a callback out of the entry
    C segment; handlers and effects only work on an OCaml stack."""
    return App(Lam(LamKind.OCAML, "_", e), IntConst(0))


# ---------------------------------------------------------------------------
# Reader.
# ---------------------------------------------------------------------------

_KEYWORDS = {
    "lambda",
    "clambda",
    "raise",
    "perform",
    "handle",
    "let",
    "continue",
    "discontinue",
    "val",
    "exn",
    "eff",
}

_OPS = {op.value: op for op in ArithOp}

_INT_RE = re.compile(r"-?[0-9]+\Z")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_']*\Z")


@dataclass(frozen=True)
class _Token:
    text: str
    line: int
    col: int


def _tokenize(source: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    i, n = 0, len(source)
    while i < n:
        ch = source[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
        elif ch in " \t\r":
            col += 1
            i += 1
        elif ch == ";":
            while i < n and source[i] != "\n":
                i += 1
        elif ch in "()":
            tokens.append(_Token(ch, line, col))
            col += 1
            i += 1
        else:
            start = i
            start_col = col
            while i < n and source[i] not in " \t\r\n();":
                i += 1
                col += 1
            tokens.append(_Token(source[start:i], line, start_col))
    return tokens


class _Reader:
    def __init__(self, tokens: list[_Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Optional[_Token]:
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def next(self) -> _Token:
        tok = self.peek()
        if tok is None:
            last = self.tokens[-1] if self.tokens else _Token("", 1, 1)
            raise ParseError("unexpected end of input", last.line, last.col)
        self.pos += 1
        return tok

    def read(self) -> Union[_Token, list]:
        tok = self.next()
        if tok.text == "(":
            items = []
            while True:
                nxt = self.peek()
                if nxt is None:
                    raise ParseError("missing ')'", tok.line, tok.col)
                if nxt.text == ")":
                    self.next()
                    return items
                items.append(self.read())
        if tok.text == ")":
            raise ParseError("unexpected ')'", tok.line, tok.col)
        return tok


def _head_of(sexp) -> tuple:
    """(line, col) of a token or nested form, for error reporting."""
    while isinstance(sexp, list):
        if not sexp:
            return (0, 0)
        sexp = sexp[0]
    return (sexp.line, sexp.col)


def _ident(sexp, what: str) -> str:
    if isinstance(sexp, list) or not _IDENT_RE.match(sexp.text):
        line, col = _head_of(sexp)
        raise ParseError(f"expected {what}", line, col)
    if sexp.text in _KEYWORDS:
        raise ParseError(f"'{sexp.text}' is reserved", sexp.line, sexp.col)
    return sexp.text


def _label(sexp) -> Label:
    return Label(_ident(sexp, "label"))


def _param_list(sexp, line: int, col: int) -> str:
    if not isinstance(sexp, list) or len(sexp) != 1:
        raise ParseError("expected a one-identifier parameter list", line, col)
    return _ident(sexp[0], "parameter")


def _build(sexp) -> Expr:
    if not isinstance(sexp, list):
        text = sexp.text
        if _INT_RE.match(text):
            return IntConst(int(text))
        if text in _KEYWORDS or text in _OPS:
            raise ParseError(f"'{text}' cannot appear here", sexp.line, sexp.col)
        if _IDENT_RE.match(text):
            return Var(text)
        raise ParseError(f"bad token '{text}'", sexp.line, sexp.col)

    if not sexp:
        raise ParseError("empty form", 0, 0)
    head = sexp[0]
    line, col = _head_of(head)
    hd = head.text if not isinstance(head, list) else None

    if hd in _OPS:
        if len(sexp) != 3:
            raise ParseError(f"'{hd}' takes two expressions", line, col)
        return Arith(_OPS[hd], _build(sexp[1]), _build(sexp[2]))

    if hd in ("lambda", "clambda"):
        if len(sexp) != 3:
            raise ParseError(f"'{hd}' takes a parameter list and a body", line, col)
        param = _param_list(sexp[1], line, col)
        kind = LamKind.OCAML if hd == "lambda" else LamKind.C
        return Lam(kind, param, _build(sexp[2]))

    if hd in ("raise", "perform"):
        if len(sexp) != 3:
            raise ParseError(f"'{hd}' takes a label and a payload", line, col)
        label = _label(sexp[1])
        payload = _build(sexp[2])
        return Raise(label, payload) if hd == "raise" else Perform(label, payload)

    if hd == "let":
        if len(sexp) != 3 or not isinstance(sexp[1], list) or len(sexp[1]) != 2:
            raise ParseError("'let' takes a (name expr) binding and a body", line, col)
        name = _ident(sexp[1][0], "binding name")
        return App(Lam(LamKind.OCAML, name, _build(sexp[2])), _build(sexp[1][1]))

    if hd == "continue":
        if len(sexp) != 3:
            raise ParseError("'continue' takes a continuation and a value", line, col)
        return desugar_continue(_build(sexp[1]), _build(sexp[2]))

    if hd == "discontinue":
        if len(sexp) != 4:
            raise ParseError(
                "'discontinue' takes a continuation, a label, and a value", line, col
            )
        return desugar_discontinue(_build(sexp[1]), _label(sexp[2]), _build(sexp[3]))

    if hd == "handle":
        if len(sexp) < 3:
            raise ParseError("'handle' takes a body and at least a value case", line, col)
        body = _build(sexp[1])
        handler = _build_handler(sexp[2:], line, col)
        return Handle(body, handler)

    # Plain application: exactly two expressions.
    if len(sexp) != 2:
        raise ParseError("application takes exactly two expressions", line, col)
    return App(_build(sexp[0]), _build(sexp[1]))


def _build_handler(case_forms, line: int, col: int) -> HandlerSpec:
    value_case = None
    exn_cases: list[ExnCase] = []
    eff_cases: list[EffCase] = []
    for form in case_forms:
        if not isinstance(form, list) or not form or isinstance(form[0], list):
            raise ParseError("handler case must be (val|exn|eff ...)", line, col)
        cline, ccol = form[0].line, form[0].col
        kind = form[0].text
        if kind == "val":
            if len(form) != 3:
                raise ParseError("value case is (val IDENT e)", cline, ccol)
            if value_case is not None:
                raise ParseError("duplicate value case", cline, ccol)
            value_case = (_ident(form[1], "parameter"), _build(form[2]))
        elif kind == "exn":
            if len(form) != 4:
                raise ParseError("exception case is (exn LABEL IDENT e)", cline, ccol)
            label = _label(form[1])
            if any(c.label == label for c in exn_cases):
                raise ParseError(f"duplicate exn case for '{label}'", cline, ccol)
            exn_cases.append(ExnCase(label, _ident(form[2], "parameter"), _build(form[3])))
        elif kind == "eff":
            if len(form) != 5:
                raise ParseError("effect case is (eff LABEL IDENT IDENT e)", cline, ccol)
            label = _label(form[1])
            if any(c.label == label for c in eff_cases):
                raise ParseError(f"duplicate eff case for '{label}'", cline, ccol)
            eff_cases.append(
                EffCase(
                    label,
                    _ident(form[2], "parameter"),
                    _ident(form[3], "continuation parameter"),
                    _build(form[4]),
                )
            )
        else:
            raise ParseError(f"unknown handler case '{kind}'", cline, ccol)
    if value_case is None:
        raise ParseError("handler needs a value case", line, col)
    return HandlerSpec(value_case[0], value_case[1], tuple(exn_cases), tuple(eff_cases))


def parse(source: str) -> Expr:
    """Read one expression; sugar is expanded, handler cases validated."""
    tokens = _tokenize(source)
    if not tokens:
        raise ParseError("empty program", 1, 1)
    reader = _Reader(tokens)
    expr = _build(reader.read())
    extra = reader.peek()
    if extra is not None:
        raise ParseError("trailing input after program", extra.line, extra.col)
    return expr


def load_program(path: str) -> SourceProgram:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return SourceProgram(path=path, text=text, entry=wrap_entry(parse(text)))


def program_from_source(text: str, path: str = "<string>") -> SourceProgram:
    return SourceProgram(path=path, text=text, entry=wrap_entry(parse(text)))


# ---------------------------------------------------------------------------
# Printer. parse(pretty(e)) == e for every core expression.
# ---------------------------------------------------------------------------


def pretty(e: Expr) -> str:
    if isinstance(e, IntConst):
        return str(e.n)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, App):
        return f"({pretty(e.fn)} {pretty(e.arg)})"
    if isinstance(e, Lam):
        return f"({e.kind.value} ({e.param}) {pretty(e.body)})"
    if isinstance(e, Arith):
        return f"({e.op.value} {pretty(e.lhs)} {pretty(e.rhs)})"
    if isinstance(e, Raise):
        return f"(raise {e.label} {pretty(e.payload)})"
    if isinstance(e, Perform):
        return f"(perform {e.label} {pretty(e.payload)})"
    if isinstance(e, Handle):
        h = e.handler
        parts = [f"(val {h.value_param} {pretty(h.value_body)})"]
        parts += [f"(exn {c.label} {c.param} {pretty(c.body)})" for c in h.exn_cases]
        parts += [
            f"(eff {c.label} {c.param} {c.kont_param} {pretty(c.body)})"
            for c in h.eff_cases
        ]
        return f"(handle {pretty(e.body)} {' '.join(parts)})"
    raise TypeError(f"not a core expression: {e!r}")


_CORE_NODES = (IntConst, Var, App, Lam, Arith, Raise, Perform, Handle)


def core_nodes(e: Expr):
    """Iterate every node of a core tree (used by structural checks)."""
    stack = [e]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, App):
            stack += [node.fn, node.arg]
        elif isinstance(node, Lam):
            stack.append(node.body)
        elif isinstance(node, Arith):
            stack += [node.lhs, node.rhs]
        elif isinstance(node, (Raise, Perform)):
            stack.append(node.payload)
        elif isinstance(node, Handle):
            stack.append(node.body)
            h = node.handler
            stack.append(h.value_body)
            stack += [c.body for c in h.exn_cases]
            stack += [c.body for c in h.eff_cases]
        elif isinstance(node, (IntConst, Var)):
            pass
        else:
            raise TypeError(f"not a core expression node: {node!r}")
