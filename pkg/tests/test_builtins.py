"""Native builtin semantics and store behaviour, driven through programs."""

from __future__ import annotations

import pytest

from fibervm.builtins import BUILTINS, BuiltinRaise, Store, builtin_table
from fibervm.machine import run_source
from fibervm.syntax import Label
from fibervm.values import IntVal


def run(src, **kw):
    return run_source(src, **kw)


def test_table_provides_required_builtins():
    names = set(builtin_table())
    assert {
        "ref_new", "ref_get", "ref_set",
        "queue_new", "queue_push", "queue_pop",
        "print_int", "assert_eq",
    } <= names


def test_ref_roundtrip():
    r = run("(let (r (ref_new 5)) (let (_ ((ref_set r) 7)) (ref_get r)))")
    assert r.value == IntVal(7)


def test_queue_fifo_order():
    src = """
    (let (q (queue_new 0))
    (let (_ ((queue_push q) 1))
    (let (_ ((queue_push q) 2))
    (let (_ (print_int (queue_pop q)))
    (print_int (queue_pop q))))))
    """
    r = run(src)
    assert r.output == ["1", "2"]


def test_queue_push_front_is_lifo():
    src = """
    (let (q (queue_new 0))
    (let (_ ((queue_push_front q) 1))
    (let (_ ((queue_push_front q) 2))
    (print_int (queue_pop q)))))
    """
    assert run(src).output == ["2"]


def test_queue_pop_empty_raises_queue_empty():
    r = run("(queue_pop (queue_new 0))")
    assert r.status == "fatal" and r.fatal.label == Label("Queue_Empty")


def test_print_int_appends_in_call_order():
    r = run("(let (_ (print_int 3)) (print_int 4))")
    assert r.output == ["3", "4"]


def test_assert_eq_and_lt():
    assert run("((assert_eq 3) 3)").status == "done"
    r = run("((assert_eq 3) 4)")
    assert r.fatal.label == Label("Assert_failure")
    assert run("((assert_lt 3) 4)").status == "done"
    assert run("((assert_lt 4) 3)").fatal.label == Label("Assert_failure")


def test_wrong_kind_raises_invalid_argument():
    r = run("(print_int (lambda (x) x))")
    assert r.fatal.label == Label("Invalid_argument")
    r = run("(ref_get 3)")
    assert r.fatal.label == Label("Invalid_argument")


def test_chan_read_sequence_per_channel():
    src = """
    (let (_ (print_int (chan_read 1)))
    (let (_ (print_int (chan_read 2)))
    (print_int (chan_read 1))))
    """
    assert run(src).output == ["101", "201", "102"]


def test_close_channel_logs_closed():
    assert run("(close_channel 1)").output == ["closed"]


def test_ready_policy_alternate_by_default():
    store = Store()
    check = BUILTINS["check_ready"]
    assert check.fn(store, (IntVal(1),)) == IntVal(0)  # first poll ready
    with pytest.raises(BuiltinRaise, match="Not_ready"):
        check.fn(store, (IntVal(1),))
    assert check.fn(store, (IntVal(1),)) == IntVal(0)


def test_ready_policy_always():
    store = Store()
    BUILTINS["set_ready_policy"].fn(store, (IntVal(0),))
    check = BUILTINS["check_ready"]
    for _ in range(5):
        assert check.fn(store, (IntVal(1),)) == IntVal(0)


def test_builtin_shadowed_by_user_binding():
    r = run("(let (print_int (lambda (x) (+ x 1))) (print_int 4))")
    assert r.value == IntVal(5)
    assert r.output == []


def test_zero_arity_builtin_takes_dummy_argument():
    r = run("(queue_new 99)")
    assert r.status == "done"
    assert r.value.kind == "queue"


def test_closures_and_konts_are_storable():
    src = """
    (let (c (ref_new (lambda (x) (+ x 1))))
    ((ref_get c) 41))
    """
    assert run(src).value == IntVal(42)
