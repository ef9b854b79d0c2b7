"""Reader, desugaring, printer round-trip, and handler validation."""

from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from fibervm.syntax import (
    App,
    Arith,
    ArithOp,
    EffCase,
    ExnCase,
    Handle,
    HandlerSpec,
    IntConst,
    Label,
    Lam,
    LamKind,
    ParseError,
    Perform,
    Raise,
    Var,
    core_nodes,
    desugar_continue,
    desugar_discontinue,
    parse,
    pretty,
    wrap_entry,
)


def test_parse_arith():
    assert parse("(+ 1 2)") == Arith(ArithOp.ADD, IntConst(1), IntConst(2))


def test_parse_negative_int():
    assert parse("-5") == IntConst(-5)


def test_parse_lambda_kinds():
    assert parse("(lambda (x) x)") == Lam(LamKind.OCAML, "x", Var("x"))
    assert parse("(clambda (x) x)") == Lam(LamKind.C, "x", Var("x"))


def test_parse_raise_perform():
    assert parse("(raise E 1)") == Raise(Label("E"), IntConst(1))
    assert parse("(perform E x)") == Perform(Label("E"), Var("x"))


def test_parse_application_is_binary():
    assert parse("(f x)") == App(Var("f"), Var("x"))
    with pytest.raises(ParseError):
        parse("(f x y)")


def test_let_expands_to_application():
    assert parse("(let (x 1) x)") == App(Lam(LamKind.OCAML, "x", Var("x")), IntConst(1))


def test_continue_desugars():
    # continue k 5  ==  ((k (lambda (x) x)) 5)
    expected = App(
        App(Var("k"), Lam(LamKind.OCAML, "x", Var("x"))),
        IntConst(5),
    )
    assert parse("(continue k 5)") == expected
    assert desugar_continue(Var("k"), IntConst(0)) == App(
        App(Var("k"), Lam(LamKind.OCAML, "x", Var("x"))), IntConst(0)
    )


def test_discontinue_desugars():
    expected = App(
        App(Var("k"), Lam(LamKind.OCAML, "x", Raise(Label("Unwind"), Var("x")))),
        IntConst(0),
    )
    assert parse("(discontinue k Unwind 0)") == expected
    got = desugar_discontinue(Var("k"), Label("End_of_file"), Var("y"))
    assert got.fn.arg.body == Raise(Label("End_of_file"), Var("x"))
    assert got.arg == Var("y")  # payload propagates unevaluated


def test_desugar_yields_distinct_trees():
    a = desugar_continue(Var("k1"), IntConst(0))
    b = desugar_continue(Var("k2"), IntConst(0))
    assert a != b


def test_wrap_entry_shape():
    wrapped = wrap_entry(IntConst(42))
    assert wrapped == App(Lam(LamKind.OCAML, "_", IntConst(42)), IntConst(0))


def test_handle_cases():
    e = parse("(handle 1 (val x x) (exn E y 0) (eff F z k 2))")
    assert isinstance(e, Handle)
    h = e.handler
    assert h.value_param == "x"
    assert h.exn_case(Label("E")).param == "y"
    assert h.eff_case(Label("F")).kont_param == "k"
    assert h.exn_case(Label("Nope")) is None


def test_duplicate_value_case_rejected():
    with pytest.raises(ParseError, match="duplicate value case"):
        parse("(handle 1 (val x x) (val y y))")


def test_duplicate_labels_rejected():
    with pytest.raises(ParseError, match="duplicate exn case"):
        parse("(handle 1 (val x x) (exn E a 0) (exn E b 1))")
    with pytest.raises(ParseError, match="duplicate eff case"):
        parse("(handle 1 (val x x) (eff E a k 0) (eff E b k 1))")


def test_missing_value_case_rejected():
    with pytest.raises(ParseError, match="value case"):
        parse("(handle 1 (exn E x 0))")


def test_reserved_words_rejected():
    with pytest.raises(ParseError):
        parse("(lambda (val) 1)")
    with pytest.raises(ParseError):
        parse("handle")


def test_syntax_error_has_position():
    with pytest.raises(ParseError) as err:
        parse("(+ 1")
    assert err.value.line == 1


def test_comments_ignored():
    assert parse("; hello\n(+ 1 2) ; tail") == parse("(+ 1 2)")


def test_load_program_wraps_entry():
    from fibervm.corpus import corpus_path
    from fibervm.syntax import load_program

    prog = load_program(corpus_path("meander"))
    assert prog.path.endswith("meander.fib")
    assert prog.entry == wrap_entry(parse(prog.text))


# --- printer round-trip ------------------------------------------------------

_idents = st.sampled_from(["x", "y", "f", "g", "k", "self", "acc_1", "v'"])
_labels = st.sampled_from(["E", "F", "Queue_Empty", "Unhandled"]).map(Label)


def _exprs(depth: int):
    if depth == 0:
        return st.one_of(
            st.integers(-99, 999).map(IntConst),
            _idents.map(Var),
        )
    sub = _exprs(depth - 1)
    handler = st.builds(
        HandlerSpec,
        _idents,
        sub,
        st.lists(st.builds(ExnCase, _labels, _idents, sub), max_size=1).map(tuple),
        st.lists(st.builds(EffCase, _labels, _idents, _idents, sub), max_size=1).map(tuple),
    )
    return st.one_of(
        st.integers(-99, 999).map(IntConst),
        _idents.map(Var),
        st.builds(App, sub, sub),
        st.builds(Lam, st.sampled_from(list(LamKind)), _idents, sub),
        st.builds(Arith, st.sampled_from(list(ArithOp)), sub, sub),
        st.builds(Raise, _labels, sub),
        st.builds(Perform, _labels, sub),
        st.builds(Handle, sub, handler),
    )


@settings(max_examples=150, deadline=None)
@given(_exprs(3))
def test_pretty_parse_round_trip(expr):
    assert parse(pretty(expr)) == expr


@settings(max_examples=50, deadline=None)
@given(_exprs(3))
def test_core_trees_contain_only_core_nodes(expr):
    for node in core_nodes(expr):
        assert type(node).__name__ in {
            "IntConst", "Var", "App", "Lam", "Arith", "Raise", "Perform", "Handle",
        }
