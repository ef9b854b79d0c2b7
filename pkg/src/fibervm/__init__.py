"""fibervm: an executable abstract machine for effect handlers over
alternating C/OCaml stack segments, with a word-accounted fiber runtime,
cooperative-concurrency example programs, diagnostics, a CLI, and an HTTP
service."""

from .syntax import (
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
    ParseError,
    Perform,
    Raise,
    SourceProgram,
    Var,
    desugar_continue,
    desugar_discontinue,
    load_program,
    parse,
    pretty,
    program_from_source,
    wrap_entry,
)
from .machine import (
    Configuration,
    Done,
    Fatal,
    FatalKind,
    Machine,
    Next,
    RunResult,
    initial_config,
    run_expr,
    run_source,
    step_config,
)
from .runtime import FiberRuntime, Metrics, RuntimeConfig, RuntimeMode
from .diagnostics import (
    BacktraceEntry,
    PhaseCounts,
    PhaseShapeError,
    backtrace,
    continuation_backtrace,
    format_backtrace,
    format_trace,
    phase_counters,
)

__version__ = "0.1.0"
