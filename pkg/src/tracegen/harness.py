"""Built-in systems under test, a random baseline, and the campaign runner.

Handlers are small stateful objects implementing the effect-handler
interface ``(trace, op, args) -> return constant``; buggy variants model
published bugs (a fixed-size stack that silently drops pushes, a key-value
store that answers asynchronous reads with the value at response time).

A run counts as a *violation* when its own assertion fires, when the
handler faults where the paired reference handler would not, or when a
supplied trace-level property oracle rejects the completed trace.
"""

from __future__ import annotations

import random
import statistics
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

from .config import DEFAULT_CONFIG, Config
from .errors import SUTFaultError, UnknownOp
from .dsl import (
    Assert,
    AssumeBind,
    AssertViolated,
    AssumeExhausted,
    Choice,
    ChoicePolicy,
    Completed,
    Const,
    Diverged,
    EffApp,
    EffectHandler,
    Expr,
    Faulted,
    Fix,
    Let,
    RunOutcome,
    UNIT_CONST,
    VarE,
    run,
    seq,
)
from .logic import INT, TRUE, Constant, Domain
from .trace import Event, Trace
from .typesys import OperatorContext

# --------------------------------------------------------------------------
# Stack handlers
# --------------------------------------------------------------------------


class StackOk:
    """Unbounded LIFO stack; pop on empty is the SUT's own exception."""

    def __init__(self):
        self.items: List[Constant] = []

    def __call__(self, alpha: Trace, op: str, args: Tuple[Constant, ...]) -> Constant:
        if op == "push":
            self.items.append(args[0])
            return ()
        if op == "pop":
            if not self.items:
                raise SUTFaultError("stack is empty")
            return self.items.pop()
        raise UnknownOp(op)


class StackBuggy:
    """Fixed-capacity stack that mishandles overflow.

    With ``overwrite=False`` (default) a push onto a full stack is silently
    dropped; with ``overwrite=True`` it replaces the top element.  Either
    way a later pop returns the wrong value or hits a spurious "empty".
    """

    def __init__(self, capacity: int = 2, overwrite: bool = False):
        self.capacity = capacity
        self.overwrite = overwrite
        self.items: List[Constant] = []

    def __call__(self, alpha: Trace, op: str, args: Tuple[Constant, ...]) -> Constant:
        if op == "push":
            if len(self.items) >= self.capacity:
                if self.overwrite:
                    self.items[-1] = args[0]
                return ()
            self.items.append(args[0])
            return ()
        if op == "pop":
            if not self.items:
                raise SUTFaultError("stack is empty")
            return self.items.pop()
        raise UnknownOp(op)


# --------------------------------------------------------------------------
# Set handler
# --------------------------------------------------------------------------


class SetBuggy:
    """Fixed-capacity set that silently drops inserts when full."""

    def __init__(self, capacity: int = 2):
        self.capacity = capacity
        self.items: set = set()

    def __call__(self, alpha: Trace, op: str, args: Tuple[Constant, ...]) -> Constant:
        if op == "insert":
            if args[0] not in self.items and len(self.items) < self.capacity:
                self.items.add(args[0])
            return ()
        if op == "member":
            return args[0] in self.items
        raise UnknownOp(op)


# --------------------------------------------------------------------------
# Key-value store handlers (single elided key, async reads)
# --------------------------------------------------------------------------


class KvOk:
    """Read-atomic store: a response returns the snapshot at request time."""

    def __init__(self):
        self.store: Constant = 0
        self.snapshots: Dict[Constant, Constant] = {}
        self.next_tag = 0

    def __call__(self, alpha: Trace, op: str, args: Tuple[Constant, ...]) -> Constant:
        if op == "write":
            self.store = args[0]
            return ()
        if op == "readReq":
            tag = self.next_tag
            self.next_tag += 1
            self.snapshots[tag] = self.store
            return tag
        if op == "readRsp":
            tag = args[0]
            if tag not in self.snapshots:
                raise SUTFaultError("unknown request id")
            return self.snapshots[tag]
        raise UnknownOp(op)


class KvRaBuggy(KvOk):
    """Violates read atomicity: responds with the value at response time."""

    def __call__(self, alpha: Trace, op: str, args: Tuple[Constant, ...]) -> Constant:
        if op == "readRsp":
            tag = args[0]
            if tag not in self.snapshots:
                raise SUTFaultError("unknown request id")
            return self.store
        return super().__call__(alpha, op, args)


#: name -> zero-argument handler factory
HANDLERS: Dict[str, Callable[[], EffectHandler]] = {
    "stack_ok": StackOk,
    "stack_buggy": StackBuggy,
    "stack_buggy_overwrite": lambda: StackBuggy(overwrite=True),
    "set_buggy": SetBuggy,
    "kv_ra_ok": KvOk,
    "kv_ra_buggy": KvRaBuggy,
}

#: buggy handler -> its conforming reference, for fault attribution
REFERENCE_FOR: Dict[str, str] = {
    "stack_ok": "stack_ok",
    "stack_buggy": "stack_ok",
    "stack_buggy_overwrite": "stack_ok",
    "kv_ra_ok": "kv_ra_ok",
    "kv_ra_buggy": "kv_ra_ok",
}


def make_handler(name: str) -> EffectHandler:
    if name not in HANDLERS:
        raise UnknownOp(f"unknown handler {name!r}")
    return HANDLERS[name]()


# --------------------------------------------------------------------------
# Violation detection
# --------------------------------------------------------------------------


def replay_faults(
    factory: Callable[[], EffectHandler],
    events: Trace,
    final_op: Optional[str] = None,
    final_args: Tuple[Constant, ...] = (),
) -> bool:
    """Does the factory's handler fault on the same operation sequence?"""
    handler = factory()
    trace: List[Event] = []
    try:
        for ev in events:
            if ev.ghost:
                continue
            ret = handler(tuple(trace), ev.op, ev.args)
            trace.append(Event(ev.op, ev.args, ret, False))
        if final_op is not None:
            handler(tuple(trace), final_op, final_args)
    except SUTFaultError:
        return True
    return False


def read_atomicity_holds(trace: Trace) -> bool:
    """Every response returns the last write before its matching request."""
    store: Constant = 0
    snapshots: Dict[Constant, Constant] = {}
    for ev in trace:
        if ev.op == "write":
            store = ev.args[0]
        elif ev.op == "readReq":
            snapshots[ev.ret] = store
        elif ev.op == "readRsp":
            tag = ev.args[0]
            if tag in snapshots and ev.ret != snapshots[tag]:
                return False
    return True


TraceOracle = Callable[[Trace], bool]

#: property-specific trace oracles usable by model-free generators
TRACE_ORACLES: Dict[str, TraceOracle] = {
    "kv_ra": read_atomicity_holds,
}


def is_violation(
    outcome: RunOutcome,
    reference_factory: Callable[[], EffectHandler],
    trace_oracle: Optional[TraceOracle] = None,
) -> bool:
    if isinstance(outcome, AssertViolated):
        return True
    if isinstance(outcome, Faulted):
        return not replay_faults(
            reference_factory, outcome.trace, outcome.op, outcome.args
        )
    if trace_oracle is not None and isinstance(outcome, Completed):
        return not trace_oracle(outcome.trace)
    return False


# --------------------------------------------------------------------------
# Random baseline
# --------------------------------------------------------------------------


def random_baseline(
    delta: OperatorContext, max_len: int = 10, seed: int = 0
) -> Expr:
    """A generator sampling uniform operation sequences up to ``max_len``.

    Arguments are drawn uniformly from the bounded domain; returns are
    ignored (a model-free tester has nothing to assert about them), so
    violations surface through handler faults or a trace oracle.
    """
    rng = random.Random(seed)
    ops = [op for op in delta.ops() if delta.require(op).kind == "effect"]
    rng.shuffle(ops)

    def one_op(k: int) -> Expr:
        choices = []
        for op in ops:
            params = delta.require(op).params
            binders = tuple((f"a{k}_{i}", INT) for i in range(len(params)))
            call = EffApp(op, tuple(VarE(n) for n, _ in binders))
            if binders:
                choices.append(AssumeBind(binders, TRUE, Let("_", call, UNIT_CONST)))
            else:
                choices.append(Let("_", call, UNIT_CONST))
        out = choices[-1]
        for c in reversed(choices[:-1]):
            out = Choice(c, out)
        return out

    # max_len slots, each independently an operation or a skip, so run
    # lengths concentrate around max_len/2 instead of collapsing to the
    # geometric tail a stop/continue loop would give.
    slots = [Choice(one_op(k), UNIT_CONST) for k in range(max_len)]
    return seq(*slots) if slots else UNIT_CONST


# --------------------------------------------------------------------------
# Campaigns
# --------------------------------------------------------------------------

# Campaign default: bias choices toward the right branch.  Derived
# programs put their stop branch on the left of every loop choice and
# (via ``combine_programs``) their recursive variants deepest on the
# right, so a low left bias both reaches those variants often and drives
# the nondeterministic loops to the depth most bugs need.
CAMPAIGN_POLICY = ChoicePolicy(left_bias=0.12)


def _contains_fix(e: Expr) -> bool:
    stack = [e]
    while stack:
        node = stack.pop()
        if isinstance(node, Fix):
            return True
        if hasattr(node, "__dataclass_fields__"):
            for name in node.__dataclass_fields__:
                child = getattr(node, name)
                if hasattr(child, "__dataclass_fields__"):
                    stack.append(child)
    return False


def combine_programs(programs: Sequence) -> Expr:
    """One nondeterministic generator over every derived variant.

    Flattens each program's top-level choice chain and rebuilds it with
    the recursive variants last, i.e. deepest on the right, where the
    right-leaning ``CAMPAIGN_POLICY`` visits them most often.  The sort
    is stable, so the result is deterministic in the input order.
    """
    variants: List[Expr] = []
    for p in programs:
        e = p.expr if hasattr(p, "expr") else p
        while isinstance(e, Choice):
            variants.append(e.left)
            e = e.right
        variants.append(e)
    if not variants:
        return UNIT_CONST
    variants.sort(key=_contains_fix)
    out = variants[-1]
    for v in reversed(variants[:-1]):
        out = Choice(v, out)
    return out


@dataclass(frozen=True)
class CampaignReport:
    runs: int
    violations: int
    gaps: Tuple[int, ...]  # executions between consecutive violations
    outcome_counts: Dict[str, int]
    assume_retries: int

    @property
    def median_to_violation(self) -> Optional[float]:
        if not self.gaps:
            return None
        return statistics.median(self.gaps)

    @property
    def violation_rate(self) -> float:
        return self.violations / self.runs if self.runs else 0.0


def run_campaign(
    program: Expr,
    handler_name: str,
    delta: OperatorContext,
    runs: int,
    seed: int = 0,
    config: Config = DEFAULT_CONFIG,
    policy=None,
    trace_oracle: Optional[TraceOracle] = None,
    max_assume_retries: int = 50,
) -> CampaignReport:
    """Seeded independent runs with executions-to-violation bookkeeping.

    Runs that die in an exhausted assume are retried under fresh seeds and
    tallied separately — they are sampling misfires, not executions.
    """
    policy = policy or CAMPAIGN_POLICY
    factory = HANDLERS[handler_name]
    reference = HANDLERS[REFERENCE_FOR.get(handler_name, handler_name)]
    counts: Dict[str, int] = {}
    gaps: List[int] = []
    since_last = 0
    retries = 0
    next_seed = seed
    executed = 0
    while executed < runs:
        outcome = run(
            program, factory(), delta, seed=next_seed, config=config, policy=policy
        )
        next_seed += 1
        if isinstance(outcome, AssumeExhausted):
            retries += 1
            if retries % max_assume_retries == 0:
                # persistent dead assume: count it so campaigns terminate
                counts["AssumeExhausted"] = counts.get("AssumeExhausted", 0) + 1
                executed += 1
                since_last += 1
            continue
        executed += 1
        since_last += 1
        name = type(outcome).__name__
        counts[name] = counts.get(name, 0) + 1
        if is_violation(outcome, reference, trace_oracle):
            gaps.append(since_last)
            since_last = 0
    return CampaignReport(
        runs=runs,
        violations=len(gaps),
        gaps=tuple(gaps),
        outcome_counts=counts,
        assume_retries=retries,
    )
