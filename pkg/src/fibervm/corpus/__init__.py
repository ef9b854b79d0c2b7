"""The example-program corpus: .fib sources with golden .expected outputs.

Every program runs to completion under default flags except double_resume,
which deliberately violates one-shot linearity and only completes in
multishot mode; its golden output is the default-flag (one-shot) failure.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

from ..syntax import SourceProgram, parse, wrap_entry

_HERE = os.path.dirname(__file__)

# double_resume is excluded from "runs to Done" style corpus-wide checks.
DONE_EXCEPTIONS = {"double_resume"}


@dataclass(frozen=True)
class CorpusEntry:
    name: str
    path: str
    source: str
    expected: Optional[str]  # golden stdout of `fibervm run <file>`, if present
    description: str

    def program(self) -> SourceProgram:
        return SourceProgram(self.path, self.source, wrap_entry(parse(self.source)))


def corpus_names() -> list[str]:
    return sorted(
        os.path.splitext(f)[0] for f in os.listdir(_HERE) if f.endswith(".fib")
    )


def corpus_entry(name: str) -> CorpusEntry:
    path = os.path.join(_HERE, name + ".fib")
    with open(path, "r", encoding="utf-8") as fh:
        source = fh.read()
    expected = None
    expected_path = os.path.join(_HERE, name + ".expected")
    if os.path.exists(expected_path):
        with open(expected_path, "r", encoding="utf-8") as fh:
            expected = fh.read()
    description = ""
    for line in source.splitlines():
        if line.startswith(";"):
            description = line.lstrip("; ").strip()
            break
    return CorpusEntry(name, path, source, expected, description)


def corpus() -> list[CorpusEntry]:
    return [corpus_entry(name) for name in corpus_names()]


def corpus_path(name: str) -> str:
    path = os.path.join(_HERE, name + ".fib")
    if not os.path.exists(path):
        raise KeyError(name)
    return path
