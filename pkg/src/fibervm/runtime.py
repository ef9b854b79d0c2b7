"""Word-accounted fiber runtime: allocation, stack cache, growth, one-shot.

Every handler gets its own heap-simulated stack (a fiber). Usage is counted
in words (a flat cost per frame); a fiber starts with its configured usable
area plus a red zone on top, and doubles whenever a checked point finds usage
inside the red zone. Frames pushed between checked points ride on the red
zone; only exceeding the full capacity forces an immediate resize.

Continuations are one-shot by default: resuming twice raises, surfaced to the
object language as an Invalid_argument exception. Multishot mode instead
clones fiber metadata on every resume and never consumes the continuation.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import Enum, auto
from typing import Any, Optional


class RuntimeMode(Enum):
    ONESHOT = "oneshot"
    MULTISHOT = "multishot"


class FiberState(Enum):
    ACTIVE = auto()
    CAPTURED = auto()
    DEAD = auto()


@dataclass(frozen=True)
class RuntimeConfig:
    initial_words: int = 16
    red_zone_words: int = 16
    frame_words: int = 4
    cache_capacity: int = 64
    mode: RuntimeMode = RuntimeMode.ONESHOT

    def __post_init__(self):
        if self.initial_words < 1:
            raise ValueError("initial_words must be >= 1")
        if self.red_zone_words < 0:
            raise ValueError("red_zone_words must be >= 0")
        if self.frame_words < 1:
            raise ValueError("frame_words must be >= 1")

    @property
    def effective_initial_words(self) -> int:
        # The usable area sits below the red zone, so a fresh fiber's capacity
        # is initial + red zone; with initial == red zone the threshold would
        # otherwise be zero and every fiber would resize immediately.
        return self.initial_words + self.red_zone_words


class FiberMeta:
    """Mutable per-fiber accounting record; identity of a fiber is its id."""

    __slots__ = ("id", "capacity_words", "used_words", "state", "parent")

    def __init__(self, fid: int, capacity_words: int, parent: Optional[int]):
        self.id = fid
        self.capacity_words = capacity_words
        self.used_words = 0
        self.state = FiberState.ACTIVE
        self.parent = parent

    def __repr__(self) -> str:
        return (
            f"FiberMeta(id={self.id}, cap={self.capacity_words}, "
            f"used={self.used_words}, {self.state.name})"
        )


@dataclass
class Metrics:
    steps_total: int = 0
    fiber_allocs: int = 0
    fiber_frees: int = 0
    cache_hits: int = 0
    cache_misses: int = 0
    resizes: int = 0
    fiber_switches: int = 0
    resume_copies: int = 0
    rule_counts: Counter = field(default_factory=Counter)
    handler_search_depths: Counter = field(default_factory=Counter)

    def to_dict(self, live_fibers: int = 0) -> dict[str, int]:
        out = {
            "steps_total": self.steps_total,
            "fiber_allocs": self.fiber_allocs,
            "fiber_frees": self.fiber_frees,
            "live_fibers_at_exit": live_fibers,
            "cache_hits": self.cache_hits,
            "cache_misses": self.cache_misses,
            "resizes": self.resizes,
            "fiber_switches": self.fiber_switches,
            "resume_copies": self.resume_copies,
        }
        for rule, count in self.rule_counts.items():
            out[f"rule_{rule}"] = count
        for depth, count in self.handler_search_depths.items():
            out[f"handler_search_depth_{depth}"] = count
        return dict(sorted(out.items()))


class StackCache:
    """Bounded free list of (capacity, recycled id), most recently freed first.

    Reuse requires an exact capacity match.
    """

    def __init__(self, capacity: int, metrics: Metrics):
        self.capacity = capacity
        self.metrics = metrics
        self.entries: list[tuple[int, int]] = []

    def acquire(self, capacity_words: int) -> bool:
        for i, (cap, _recycled) in enumerate(self.entries):
            if cap == capacity_words:
                del self.entries[i]
                self.metrics.cache_hits += 1
                return True
        self.metrics.cache_misses += 1
        return False

    def release(self, capacity_words: int, recycled_id: int) -> None:
        if len(self.entries) < self.capacity:
            self.entries.insert(0, (capacity_words, recycled_id))

    def __len__(self) -> int:
        return len(self.entries)


class OneShotViolation(Exception):
    """A continuation was resumed a second time in oneshot mode."""


class UsedContinuation(Exception):
    """A consumed continuation was asked for a backtrace."""


FRESH = "FRESH"
USED = "USED"


@dataclass
class LeakEntry:
    kid: int
    fibers: Any  # cons list of machine.Fiber frozen at capture time


class FiberRuntime:
    """Owns fiber metadata, the stack cache, and the one-shot registry."""

    def __init__(self, config: Optional[RuntimeConfig] = None):
        self.config = config or RuntimeConfig()
        self.metrics = Metrics()
        self.cache = StackCache(self.config.cache_capacity, self.metrics)
        self.fibers: dict[int, FiberMeta] = {}
        self.registry: dict[int, str] = {}
        self._kont_fibers: dict[int, Any] = {}
        self._next_fiber_id = 0
        self._next_kont_id = 0

    # -- fibers ------------------------------------------------------------

    def alloc_fiber(
        self, parent: Optional[int] = None, capacity: Optional[int] = None
    ) -> FiberMeta:
        cap = capacity if capacity is not None else self.config.effective_initial_words
        self.cache.acquire(cap)
        self._next_fiber_id += 1
        meta = FiberMeta(self._next_fiber_id, cap, parent)
        self.fibers[meta.id] = meta
        self.metrics.fiber_allocs += 1
        return meta

    def free_fiber(self, meta: FiberMeta) -> None:
        if meta.state is FiberState.DEAD:
            raise RuntimeError(f"double free of fiber {meta.id}")
        meta.state = FiberState.DEAD
        self.cache.release(meta.capacity_words, meta.id)
        self.metrics.fiber_frees += 1

    def clone_meta(self, meta: FiberMeta, parent: Optional[int] = None) -> FiberMeta:
        """Multishot resume: a fresh fiber with the original's size and usage."""
        copy = self.alloc_fiber(parent=parent, capacity=meta.capacity_words)
        copy.used_words = meta.used_words
        return copy

    def live_fiber_count(self) -> int:
        return sum(1 for m in self.fibers.values() if m.state is not FiberState.DEAD)

    # -- word accounting ----------------------------------------------------

    def charge_push(self, meta: Optional[FiberMeta], n_frames: int = 1) -> None:
        if meta is None:
            return  # C segments and identity seed fibers are not accounted
        meta.used_words += n_frames * self.config.frame_words
        while meta.used_words > meta.capacity_words:  # hard limit safety net
            meta.capacity_words *= 2
            self.metrics.resizes += 1

    def charge_pop(self, meta: Optional[FiberMeta], n_frames: int = 1) -> None:
        if meta is None:
            return
        meta.used_words -= n_frames * self.config.frame_words

    def overflow_check(self, meta: Optional[FiberMeta]) -> None:
        if meta is None:
            return
        threshold = meta.capacity_words - self.config.red_zone_words
        while meta.used_words > threshold:
            meta.capacity_words *= 2
            threshold = meta.capacity_words - self.config.red_zone_words
            self.metrics.resizes += 1

    # -- continuations -------------------------------------------------------

    def mark_captured(self, meta: Optional[FiberMeta]) -> None:
        """A fiber left the stack and entered an in-flight effect value."""
        if meta is None:
            return
        meta.state = FiberState.CAPTURED
        meta.parent = None

    def capture(self, metas: list[FiberMeta], fibers: Any) -> int:
        """Register a full continuation; returns its one-shot identity."""
        for meta in metas:
            meta.state = FiberState.CAPTURED
            meta.parent = None
        self._next_kont_id += 1
        kid = self._next_kont_id
        if self.config.mode is RuntimeMode.ONESHOT:
            self.registry[kid] = FRESH
        self._kont_fibers[kid] = fibers
        return kid

    def resume(self, kid: int, metas: list[FiberMeta], current: Optional[int]) -> None:
        """Oneshot consume-and-reactivate; raises on the second resume."""
        if self.config.mode is RuntimeMode.ONESHOT:
            if self.registry.get(kid) != FRESH:
                raise OneShotViolation(f"continuation {kid} already used")
            self.registry[kid] = USED
        self.reactivate(metas, current)

    def reactivate(self, metas: list[FiberMeta], current: Optional[int]) -> None:
        """Re-parent a fiber chain onto the current fiber and mark it live."""
        below = current
        for meta in reversed(metas):
            meta.state = FiberState.ACTIVE
            meta.parent = below
            below = meta.id

    def kont_state(self, kid: int) -> Optional[str]:
        return self.registry.get(kid)

    def leak_report(self) -> list[LeakEntry]:
        return [
            LeakEntry(kid, self._kont_fibers[kid])
            for kid, state in sorted(self.registry.items())
            if state == FRESH
        ]
