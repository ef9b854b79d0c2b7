"""The shipped example programs: golden outputs and corpus-wide properties."""

from __future__ import annotations

import io

import pytest

from fibervm import cli
from fibervm.corpus import DONE_EXCEPTIONS, corpus, corpus_names
from fibervm.machine import run_source
from fibervm.runtime import RuntimeMode
from fibervm.values import value_repr

ENTRIES = {e.name: e for e in corpus()}


def run_cli(*argv) -> tuple[int, str]:
    buf = io.StringIO()
    code = cli.main(list(argv), out=buf)
    return code, buf.getvalue()


@pytest.mark.parametrize("name", corpus_names())
def test_golden_output(name):
    entry = ENTRIES[name]
    assert entry.expected is not None, f"{name} is missing its .expected file"
    code, got = run_cli("run", entry.path)
    assert got == entry.expected
    assert code == (1 if name in DONE_EXCEPTIONS else 0)


@pytest.mark.parametrize("name", sorted(set(corpus_names()) - DONE_EXCEPTIONS))
def test_runs_to_done_within_budget(name):
    r = run_source(ENTRIES[name].source, max_steps=1_000_000)
    assert r.status == "done"


@pytest.mark.parametrize("name", corpus_names())
def test_deterministic_output_and_metrics(name):
    a = run_source(ENTRIES[name].source)
    b = run_source(ENTRIES[name].source)
    assert a.output == b.output
    assert a.metrics == b.metrics
    assert a.steps == b.steps


@pytest.mark.parametrize("name", corpus_names())
def test_fiber_accounting_balances(name):
    m = run_source(ENTRIES[name].source).metrics
    assert m["fiber_allocs"] == m["fiber_frees"] + m["live_fibers_at_exit"]
    assert m["cache_hits"] + m["cache_misses"] == m["fiber_allocs"]


# leak_drop exists to leak; everything else must come back clean
@pytest.mark.parametrize(
    "name", sorted(set(corpus_names()) - DONE_EXCEPTIONS - {"leak_drop"})
)
def test_corpus_leak_free(name):
    assert run_source(ENTRIES[name].source).leaks == []


def test_leak_drop_reports_exactly_one():
    assert len(run_source(ENTRIES["leak_drop"].source).leaks) == 1


@pytest.mark.parametrize("name", sorted(set(corpus_names()) - DONE_EXCEPTIONS))
def test_mode_and_flag_equivalence_over_corpus(name):
    source = ENTRIES[name].source
    outcomes = []
    for mode in (RuntimeMode.ONESHOT, RuntimeMode.MULTISHOT):
        for opt_exn in (True, False):
            r = run_source(source, mode=mode, opt_exn=opt_exn)
            outcomes.append((r.status, value_repr(r.value) if r.value else None, tuple(r.output)))
    assert len(set(outcomes)) == 1


def test_scheduler_interleavings():
    fifo = run_source(ENTRIES["scheduler_fifo"].source)
    lifo = run_source(ENTRIES["scheduler_lifo"].source)
    assert fifo.output == ["1", "2", "1", "2"]
    assert lifo.output == ["1", "1", "2", "2"]


def _per_thread(output, tid):
    return [x for x in output if x != "closed" and int(x) // 100 == tid]


def test_async_io_transparency():
    sync = run_source(ENTRIES["sync_io"].source)
    async_ = run_source(ENTRIES["async_io"].source)
    for tid in (1, 2):
        assert _per_thread(sync.output, tid) == _per_thread(async_.output, tid)


def test_async_io_transparency_under_deferring_policy():
    deferred = ENTRIES["async_io"].source.replace(
        "(set_ready_policy 0)", "(set_ready_policy 1)"
    )
    sync = run_source(ENTRIES["sync_io"].source)
    r = run_source(deferred)
    assert r.status == "done"
    for tid in (1, 2):
        assert _per_thread(sync.output, tid) == _per_thread(r.output, tid)


def test_cleanup_emits_closed_before_termination():
    r = run_source(ENTRIES["cleanup"].source)
    assert r.status == "done"
    assert "closed" in r.output


def test_generator_visits_all_nodes():
    r = run_source(ENTRIES["generator_tree"].source)
    assert r.output == ["1023", str(1023 * 1024 // 2)]


def test_generator_switches_scale_with_nodes():
    r = run_source(ENTRIES["generator_tree"].source)
    n = 1023
    assert 2 * n <= r.metrics["fiber_switches"] <= 2 * n + 16


def test_chameneos_meeting_invariants():
    r = run_source(ENTRIES["chameneos_lite"].source)
    counts = [int(x) for x in r.output]
    assert len(counts) == 3
    assert sum(counts) == 2 * 12  # both parties credited per meeting
    assert all(c >= 0 for c in counts)
    assert r.steps < 1_000_000


def test_corpus_entries_build_programs():
    for entry in ENTRIES.values():
        prog = entry.program()
        assert prog.path == entry.path
        assert prog.entry is not None
        assert entry.description  # every program carries a header comment


def test_no_sugar_in_parsed_corpus():
    from fibervm.syntax import core_nodes, parse

    for entry in ENTRIES.values():
        for node in core_nodes(parse(entry.source)):
            assert type(node).__name__ in {
                "IntConst", "Var", "App", "Lam", "Arith", "Raise", "Perform", "Handle",
            }


def test_corpus_validates_invariants_under_debug_walks():
    # spot-check a few programs with per-step structural validation
    for name in ("meander", "cleanup", "scheduler_fifo", "phase_bench"):
        r = run_source(ENTRIES[name].source, validate_every=1)
        assert r.status == "done"
