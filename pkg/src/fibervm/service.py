"""HTTP service wrapping the machine: run or trace programs, browse examples.

POST /run     execute source text (or a shipped example) under chosen options
POST /parse   check a program and return its canonical form
GET  /examples  list the shipped corpus
GET  /health
"""

from __future__ import annotations

from typing import Literal, Optional

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field, model_validator

from . import corpus as corpus_pkg
from .diagnostics import backtrace, continuation_backtrace, format_backtrace
from .machine import run_source
from .runtime import RuntimeMode
from .syntax import ParseError, parse, pretty
from .values import Kont, value_repr

MAX_TRACE_EVENTS = 20_000

app = FastAPI(title="fibervm", version="0.1.0")


class RunOptions(BaseModel):
    mode: Literal["oneshot", "multishot"] = "oneshot"
    opt_exn: bool = True
    trace: bool = False
    max_steps: int = Field(default=10_000_000, gt=0)
    stack_init: int = Field(default=16, ge=1)
    red_zone: int = Field(default=16, ge=0)
    cache_cap: int = Field(default=64, ge=0)


class RunRequest(BaseModel):
    source: Optional[str] = None
    example: Optional[str] = None
    options: RunOptions = RunOptions()

    @model_validator(mode="after")
    def _exactly_one_input(self):
        if (self.source is None) == (self.example is None):
            raise ValueError("provide exactly one of 'source' or 'example'")
        return self


class TraceLine(BaseModel):
    step: int
    rule: str
    where: str


class LeakReport(BaseModel):
    kid: int
    backtrace: list[str]


class RunResponse(BaseModel):
    status: Literal["done", "fatal", "budget"]
    value: Optional[str] = None
    error: Optional[str] = None
    steps: int
    output: list[str]
    metrics: dict[str, int]
    leaks: list[LeakReport]
    backtrace: Optional[list[str]] = None
    trace: Optional[list[TraceLine]] = None
    trace_truncated: bool = False


class ParseRequest(BaseModel):
    source: str


class ParseResponse(BaseModel):
    ok: bool
    pretty: Optional[str] = None
    error: Optional[str] = None


class ExampleInfo(BaseModel):
    name: str
    description: str


@app.get("/health")
def health() -> dict:
    return {"status": "ok"}


@app.get("/examples", response_model=list[ExampleInfo])
def examples() -> list[ExampleInfo]:
    return [
        ExampleInfo(name=e.name, description=e.description) for e in corpus_pkg.corpus()
    ]


@app.post("/parse", response_model=ParseResponse)
def parse_program(req: ParseRequest) -> ParseResponse:
    try:
        expr = parse(req.source)
    except ParseError as exc:
        return ParseResponse(ok=False, error=str(exc))
    return ParseResponse(ok=True, pretty=pretty(expr))


@app.post("/run", response_model=RunResponse)
def run_program(req: RunRequest) -> RunResponse:
    if req.example is not None:
        try:
            entry = corpus_pkg.corpus_entry(req.example)
        except (KeyError, FileNotFoundError):
            raise HTTPException(status_code=404, detail=f"no example '{req.example}'")
        source = entry.source
    else:
        source = req.source

    opts = req.options
    try:
        result = run_source(
            source,
            mode=RuntimeMode(opts.mode),
            opt_exn=opts.opt_exn,
            trace=opts.trace,
            max_steps=opts.max_steps,
            stack_init=opts.stack_init,
            red_zone=opts.red_zone,
            cache_cap=opts.cache_cap,
        )
    except ParseError as exc:
        raise HTTPException(status_code=422, detail=f"parse error: {exc}")

    leaks = [
        LeakReport(
            kid=leak.kid,
            backtrace=format_backtrace(continuation_backtrace(Kont(leak.fibers, leak.kid))),
        )
        for leak in result.leaks
    ]
    trace = None
    truncated = False
    if result.trace is not None:
        events = result.trace[:MAX_TRACE_EVENTS]
        truncated = len(result.trace) > len(events)
        trace = [TraceLine(step=e.step, rule=e.rule, where=e.where) for e in events]

    if result.status == "done":
        return RunResponse(
            status="done",
            value=value_repr(result.value),
            steps=result.steps,
            output=result.output,
            metrics=result.metrics,
            leaks=leaks,
            trace=trace,
            trace_truncated=truncated,
        )
    if result.status == "fatal":
        return RunResponse(
            status="fatal",
            error=result.fatal.describe(),
            steps=result.steps,
            output=result.output,
            metrics=result.metrics,
            leaks=leaks,
            backtrace=format_backtrace(backtrace(result.fatal.config)),
            trace=trace,
            trace_truncated=truncated,
        )
    return RunResponse(
        status="budget",
        error=f"step budget exceeded after {result.steps} steps",
        steps=result.steps,
        output=result.output,
        metrics=result.metrics,
        leaks=leaks,
        trace=trace,
        trace_truncated=truncated,
    )
