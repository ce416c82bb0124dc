"""Exception hierarchy shared across the toolkit."""


class TracegenError(Exception):
    """Base class for all toolkit errors."""


class SortError(TracegenError):
    """A qualifier or event is ill-sorted, or a valuation is incomplete."""


class UnsupportedTheory(TracegenError):
    """A formula falls outside the supported logic fragment."""


class UnknownOp(TracegenError):
    """An operation name is not declared in the operator context."""


class CapacityExceeded(TracegenError):
    """A configured cap (minterms, branches, search states) was hit."""


class BasicTypeError(TracegenError):
    """A term fails basic (sort-level) type checking.

    Carries the name of the violated rule as the first argument.
    """


class StuckError(TracegenError):
    """The small-step interpreter reached a non-value it cannot reduce."""


class SUTFaultError(TracegenError):
    """The system under test signalled its own fault (e.g. pop on empty).

    ``op``/``args`` identify the faulting operation when known; the
    interpreter fills them in so campaigns can replay the call against a
    reference handler.
    """

    def __init__(self, message: str = "SUT fault", op=None, args=()):
        self.op = op
        self.args = tuple(args)
        super().__init__(message)


class WellFormednessError(TracegenError):
    """A type violates a well-formedness rule; carries the rule name."""

    def __init__(self, rule: str, detail: str = ""):
        self.rule = rule
        super().__init__(f"{rule}: {detail}" if detail else rule)


class ErasureMismatch(TracegenError):
    """Two types compared for subtyping have different erasures."""


class SpecializationRejected(TracegenError):
    """A history specialization violated a premise (inclusion or emptiness)."""

    def __init__(self, premise: str):
        self.premise = premise
        super().__init__(premise)


class SynthesisFailed(TracegenError):
    """The refinement loop exhausted its budget with no resolved candidate."""

    def __init__(self, diagnostics: str = ""):
        self.diagnostics = diagnostics
        super().__init__(diagnostics or "synthesis failed")


class InternalError(TracegenError):
    """An invariant that should be unreachable was violated."""


class ParseError(TracegenError):
    """Surface-syntax parse failure; carries line/column information."""

    def __init__(self, message: str, line: int, col: int):
        self.line = line
        self.col = col
        super().__init__(f"{line}:{col}: {message}")


class SemanticError(TracegenError):
    """A parsed specification references unknown ops or wrong arities."""
