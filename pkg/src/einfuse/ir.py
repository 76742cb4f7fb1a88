"""Core data model for extended Einsums.

Ranks are named dimensions with integer extents, globally scoped per
cascade: two Einsums that mention rank ``D`` always mean the same extent.
An Einsum writes one output tensor from an expression tree over tensor
accesses, with sum-reductions over the ranks that appear only on the
right-hand side. A generational rank extends this with iteration: an
Einsum may read a tensor at offset ``i-1`` (or write at ``i+1``) provided
an initialization clause pins the boundary value.

Everything here is immutable after construction; operations are pure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterator, Optional, Union


class RankKind(Enum):
    SPATIAL = "spatial"
    GENERATIONAL = "generational"


@dataclass(frozen=True)
class RankDecl:
    """A named dimension. Generational ranks carry the iteration bound."""

    name: str
    shape: int
    kind: RankKind = RankKind.SPATIAL
    step: int = 1
    stop_bound: Optional[int] = None

    @property
    def extent(self) -> int:
        if self.kind is RankKind.GENERATIONAL and self.stop_bound is not None:
            return max(1, self.stop_bound // self.step)
        return self.shape

    def is_generational(self) -> bool:
        return self.kind is RankKind.GENERATIONAL


# ---------------------------------------------------------------------------
# index expressions


@dataclass(frozen=True)
class Affine:
    """a*v + b over a single rank variable."""

    var: str
    scale: int = 1
    offset: int = 0

    def __str__(self) -> str:
        s = self.var if self.scale == 1 else f"{self.scale}{self.var}"
        if self.offset > 0:
            return f"{s}+{self.offset}"
        if self.offset < 0:
            return f"{s}{self.offset}"
        return s


@dataclass(frozen=True)
class Diff:
    """v - w, the causal correlation window form."""

    var: str
    win: str

    def __str__(self) -> str:
        return f"{self.var}-{self.win}"


@dataclass(frozen=True)
class ConstIndex:
    """A literal index, used by initialization clauses (e.g. H[-1])."""

    value: int

    def __str__(self) -> str:
        return str(self.value)


Index = Union[Affine, Diff, ConstIndex]


def index_vars(ix: Index) -> tuple[str, ...]:
    if isinstance(ix, Affine):
        return (ix.var,)
    if isinstance(ix, Diff):
        return (ix.var, ix.win)
    return ()


# ---------------------------------------------------------------------------
# expression trees

BINARY_OPS = ("add", "sub", "mul", "div")
UNARY_OPS = (
    "exp",
    "log",
    "sqrt",
    "rsqrt",
    "silu",
    "sigmoid",
    "softplus",
    "square",
    "negate",
)


@dataclass(frozen=True)
class Access:
    tensor: str
    idx: tuple[Index, ...]

    def __str__(self) -> str:
        return f"{self.tensor}[{', '.join(str(i) for i in self.idx)}]"


@dataclass(frozen=True)
class Bin:
    op: str
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Un:
    op: str
    x: "Expr"


@dataclass(frozen=True)
class Const:
    value: float


Expr = Union[Access, Bin, Un, Const]


def walk_exprs(e: Expr) -> Iterator[Expr]:
    yield e
    if isinstance(e, Bin):
        yield from walk_exprs(e.lhs)
        yield from walk_exprs(e.rhs)
    elif isinstance(e, Un):
        yield from walk_exprs(e.x)


def expr_accesses(e: Expr) -> list[Access]:
    return [n for n in walk_exprs(e) if isinstance(n, Access)]


def expr_vars(e: Expr) -> set[str]:
    out: set[str] = set()
    for a in expr_accesses(e):
        for ix in a.idx:
            out.update(index_vars(ix))
    return out


def expr_op_count(e: Expr) -> int:
    """Operator nodes in the tree; the cost model charges one cycle each."""
    return sum(1 for n in walk_exprs(e) if isinstance(n, (Bin, Un)))


def format_expr(e: Expr) -> str:
    if isinstance(e, Access):
        return str(e)
    if isinstance(e, Const):
        v = e.value
        return str(int(v)) if float(v).is_integer() else repr(v)
    if isinstance(e, Un):
        return f"{e.op}({format_expr(e.x)})"
    sym = {"add": "+", "sub": "-", "mul": "*", "div": "/"}[e.op]
    lhs, rhs = format_expr(e.lhs), format_expr(e.rhs)
    if isinstance(e.lhs, Bin) and e.lhs.op in ("add", "sub") and e.op in ("mul", "div"):
        lhs = f"({lhs})"
    if isinstance(e.rhs, Bin) and (e.op in ("mul", "div", "sub") and e.rhs.op in ("add", "sub")):
        rhs = f"({rhs})"
    return f"{lhs} {sym} {rhs}"


# ---------------------------------------------------------------------------
# tensor / einsum / cascade declarations


@dataclass(frozen=True)
class TensorDecl:
    name: str
    signature: tuple[str, ...]
    # set when the tensor is a concatenation of other inputs along one axis
    # (produced by shared-input merging so stores can synthesize it coherently)
    concat_axis: Optional[int] = None
    concat_members: tuple[tuple[str, int], ...] = ()  # (member name, extent)


@dataclass(frozen=True)
class InitClause:
    target: Access
    body: Expr


@dataclass(frozen=True)
class EinsumDecl:
    """One extended Einsum.

    ``reduction_ranks`` are summed; ``post`` is an optional term added once
    per output point after the reduction completes (bias-style). ``init``
    and ``stop`` carry generational boundary semantics. ``boundary``
    selects how out-of-range window/shift accesses resolve.
    """

    eid: int
    output: Access
    body: Expr
    reduction_ranks: frozenset[str] = frozenset()
    post: Optional[Expr] = None
    init: Optional[InitClause] = None
    stop: Optional[tuple[str, int]] = None
    boundary: str = "error"  # "zero" | "error"

    def output_vars(self) -> tuple[str, ...]:
        seen: list[str] = []
        for ix in self.output.idx:
            for v in index_vars(ix):
                if v not in seen:
                    seen.append(v)
        return tuple(seen)

    def read_accesses(self) -> list[Access]:
        acc = expr_accesses(self.body)
        if self.post is not None:
            acc += expr_accesses(self.post)
        return acc

    def read_tensors(self) -> list[str]:
        seen: list[str] = []
        for a in self.read_accesses():
            if a.tensor not in seen:
                seen.append(a.tensor)
        return seen


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str
    eid: Optional[int] = None
    line: Optional[int] = None
    col: Optional[int] = None

    def __str__(self) -> str:
        loc = f"einsum {self.eid}: " if self.eid is not None else ""
        pos = f"{self.line}:{self.col}: " if self.line is not None else ""
        return f"{self.severity}: {pos}{loc}{self.message}"


class ValidationError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


@dataclass(frozen=True)
class Cascade:
    """An ordered DAG of Einsums plus rank/tensor declarations.

    The forward edge set is derived: (u, v, tensor) whenever u's output is
    read by a later v. Recurrent reads (an earlier Einsum reading a tensor
    produced later, through a generational shift) are kept separately.
    """

    ranks: dict[str, RankDecl]
    tensors: dict[str, TensorDecl]
    einsums: tuple[EinsumDecl, ...]

    def __post_init__(self):
        object.__setattr__(self, "_producer", None)
        object.__setattr__(self, "_edges", None)

    # -- derived structure ---------------------------------------------------

    @property
    def producer(self) -> dict[str, int]:
        """tensor name -> eid of the Einsum writing it."""
        if self._producer is None:
            p = {}
            for e in self.einsums:
                p.setdefault(e.output.tensor, e.eid)
            object.__setattr__(self, "_producer", p)
        return self._producer

    @property
    def edges(self) -> list[tuple[int, int, str]]:
        """(producer eid, consumer eid, tensor) forward edges."""
        if self._edges is None:
            pos = {e.eid: i for i, e in enumerate(self.einsums)}
            out = []
            for v in self.einsums:
                for t in v.read_tensors():
                    u = self.producer.get(t)
                    if u is not None and pos[u] < pos[v.eid]:
                        out.append((u, v.eid, t))
            object.__setattr__(self, "_edges", out)
        return self._edges

    def recurrent_reads(self) -> list[tuple[int, int, str]]:
        """(reader eid, producer eid, tensor) where the producer comes later."""
        pos = {e.eid: i for i, e in enumerate(self.einsums)}
        out = []
        for v in self.einsums:
            for t in v.read_tensors():
                u = self.producer.get(t)
                if u is not None and pos[u] >= pos[v.eid]:
                    out.append((v.eid, u, t))
        return out

    def einsum(self, eid: int) -> EinsumDecl:
        for e in self.einsums:
            if e.eid == eid:
                return e
        raise KeyError(f"no einsum with id {eid}")

    def consumers(self, tensor: str) -> list[int]:
        return [e.eid for e in self.einsums if tensor in e.read_tensors()]

    def input_tensors(self) -> list[str]:
        """Tensors never produced by any Einsum (cascade inputs)."""
        return [t for t in self.tensors if t not in self.producer]

    def terminal_tensors(self) -> list[str]:
        """Produced tensors never read by any Einsum (cascade outputs)."""
        read = {t for e in self.einsums for t in e.read_tensors()}
        return [t for t in self.producer if t not in read]

    def generational_rank(self) -> Optional[RankDecl]:
        for r in self.ranks.values():
            if r.is_generational():
                return r
        return None

    def extent(self, rank: str) -> int:
        return self.ranks[rank].extent


# ---------------------------------------------------------------------------
# iteration space


def var_rank(cascade: Cascade, einsum: EinsumDecl, var: str) -> str:
    """Map a rank variable to its rank name (lowercase var binds same-letter rank)."""
    if var.upper() in cascade.ranks:
        return var.upper()
    if var in cascade.ranks:
        return var
    raise ValidationError(
        [Diagnostic("error", f"undeclared rank variable '{var}'", einsum.eid)]
    )


def iteration_space(cascade: Cascade, einsum: EinsumDecl) -> dict[str, int]:
    """Ranks an Einsum traverses, with extents.

    Union of the output access ranks, reduction ranks, and window ranks of
    difference indices. Deterministic order: output ranks first, then the
    remaining right-hand-side ranks in first-appearance order.
    """
    names: list[str] = []

    def add(var: str) -> None:
        rn = var_rank(cascade, einsum, var)
        if rn not in names:
            names.append(rn)

    for v in einsum.output_vars():
        add(v)
    for a in einsum.read_accesses():
        for ix in a.idx:
            for v in index_vars(ix):
                add(v)
    for rn in sorted(einsum.reduction_ranks):
        if rn not in names:
            names.append(rn)
    return {rn: cascade.ranks[rn].extent for rn in names}


def iteration_points(space: dict[str, int]) -> int:
    return math.prod(space.values()) if space else 1


# ---------------------------------------------------------------------------
# validation


def validate(cascade: Cascade) -> list[Diagnostic]:
    """Check every structural invariant; returns diagnostics, never raises."""
    diags: list[Diagnostic] = []

    for r in cascade.ranks.values():
        if r.shape < 1:
            diags.append(Diagnostic("error", f"rank {r.name} has extent {r.shape} < 1"))
        if r.step < 1:
            diags.append(Diagnostic("error", f"rank {r.name} has step {r.step} < 1"))

    for t in cascade.tensors.values():
        if len(set(t.signature)) != len(t.signature):
            diags.append(Diagnostic("error", f"tensor {t.name} repeats a rank in its signature"))
        for rn in t.signature:
            if rn not in cascade.ranks:
                diags.append(Diagnostic("error", f"tensor {t.name} uses undeclared rank {rn}"))

    producers: dict[str, list[int]] = {}
    for e in cascade.einsums:
        producers.setdefault(e.output.tensor, []).append(e.eid)
    for t, eids in producers.items():
        if len(eids) > 1:
            diags.append(
                Diagnostic("error", f"multiple producers for tensor {t}: einsums {eids}")
            )

    gen = cascade.generational_rank()
    pos = {e.eid: i for i, e in enumerate(cascade.einsums)}

    for e in cascade.einsums:
        diags.extend(_validate_einsum(cascade, e, gen, pos))

    return diags


def _validate_einsum(
    cascade: Cascade,
    e: EinsumDecl,
    gen: Optional[RankDecl],
    pos: dict[int, int],
) -> list[Diagnostic]:
    diags: list[Diagnostic] = []

    def check_access(a: Access, writing: bool) -> None:
        t = cascade.tensors.get(a.tensor)
        if t is None:
            diags.append(Diagnostic("error", f"undeclared tensor {a.tensor}", e.eid))
            return
        if len(a.idx) != len(t.signature):
            diags.append(
                Diagnostic(
                    "error",
                    f"access {a} has {len(a.idx)} indices, tensor has rank {len(t.signature)}",
                    e.eid,
                )
            )
            return
        for ix in a.idx:
            for v in index_vars(ix):
                if v.upper() not in cascade.ranks and v not in cascade.ranks:
                    diags.append(Diagnostic("error", f"undeclared rank variable '{v}'", e.eid))

    check_access(e.output, writing=True)
    for a in e.read_accesses():
        check_access(a, writing=False)
    if diags:
        return diags

    for rn in e.reduction_ranks:
        if rn not in cascade.ranks:
            diags.append(Diagnostic("error", f"reduction over undeclared rank {rn}", e.eid))

    # RHS-only ranks must be reductions or window ranks
    out_ranks = {var_rank(cascade, e, v) for v in e.output_vars()}
    window_ranks = set()
    for a in e.read_accesses():
        for ix in a.idx:
            if isinstance(ix, Diff):
                window_ranks.add(var_rank(cascade, e, ix.win))
    rhs_ranks = {var_rank(cascade, e, v) for v in expr_vars(e.body)}
    if e.post is not None:
        post_ranks = {var_rank(cascade, e, v) for v in expr_vars(e.post)}
        if not post_ranks <= out_ranks:
            diags.append(
                Diagnostic("error", f"post term uses non-output ranks {sorted(post_ranks - out_ranks)}", e.eid)
            )
    for rn in rhs_ranks - out_ranks:
        if rn not in e.reduction_ranks and rn not in window_ranks:
            diags.append(
                Diagnostic(
                    "error",
                    f"rank {rn} appears only on the right-hand side but is not reduced",
                    e.eid,
                )
            )

    # generational discipline
    gen_count = 0
    if gen is not None and gen.name in iteration_space_names(cascade, e):
        gen_count = 1
    shifted = _shifted_reads(cascade, e, gen)
    writes_ahead = _writes_ahead(cascade, e, gen)
    if shifted or writes_ahead:
        if gen is None:
            diags.append(
                Diagnostic("error", "recurrent access requires a generational rank", e.eid)
            )
        recurrent = [
            t
            for t in shifted
            if cascade.producer.get(t) is not None and pos[cascade.producer[t]] >= pos[e.eid]
        ]
        if (recurrent or writes_ahead) and e.init is None:
            diags.append(
                Diagnostic(
                    "error",
                    "missing initialization: recurrent access needs an init clause",
                    e.eid,
                )
            )
    if e.boundary not in ("zero", "error"):
        diags.append(Diagnostic("error", f"unknown boundary policy {e.boundary!r}", e.eid))
    del gen_count
    return diags


def iteration_space_names(cascade: Cascade, e: EinsumDecl) -> set[str]:
    return set(iteration_space(cascade, e).keys())


def _shifted_reads(cascade: Cascade, e: EinsumDecl, gen: Optional[RankDecl]) -> list[str]:
    """Tensors read at a negative generational offset (e.g. H[i-1])."""
    if gen is None:
        return []
    out = []
    for a in e.read_accesses():
        t = cascade.tensors.get(a.tensor)
        if t is None:
            continue
        for axis, ix in enumerate(a.idx):
            if axis < len(t.signature) and t.signature[axis] == gen.name:
                if isinstance(ix, Affine) and ix.offset < 0:
                    out.append(a.tensor)
    return out


def _writes_ahead(cascade: Cascade, e: EinsumDecl, gen: Optional[RankDecl]) -> bool:
    """True when the output is written at a positive generational offset (Z[i+1])."""
    if gen is None:
        return False
    t = cascade.tensors.get(e.output.tensor)
    if t is None:
        return False
    for axis, ix in enumerate(e.output.idx):
        if axis < len(t.signature) and t.signature[axis] == gen.name:
            if isinstance(ix, Affine) and ix.offset > 0:
                return True
    return False


def validated(cascade: Cascade) -> Cascade:
    diags = [d for d in validate(cascade) if d.severity == "error"]
    if diags:
        raise ValidationError(diags)
    return cascade


# ---------------------------------------------------------------------------
# scalar semantics of the unary ops (double precision, numerically stable)


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def silu(x: float) -> float:
    return x * sigmoid(x)


def softplus(x: float) -> float:
    # log(1 + exp(x)) without overflow
    return max(x, 0.0) + math.log1p(math.exp(-abs(x)))


def apply_unary(op: str, x: float) -> float:
    """IEEE semantics: domain errors yield nan/inf, never raise."""
    if op == "exp":
        try:
            return math.exp(x)
        except OverflowError:
            return math.inf
    if op == "log":
        if x > 0:
            return math.log(x)
        return -math.inf if x == 0 else math.nan
    if op == "sqrt":
        return math.sqrt(x) if x >= 0 else math.nan
    if op == "rsqrt":
        if x > 0:
            return 1.0 / math.sqrt(x)
        return math.inf if x == 0 else math.nan
    if op == "silu":
        return silu(x)
    if op == "sigmoid":
        return sigmoid(x)
    if op == "softplus":
        return softplus(x)
    if op == "square":
        return x * x
    if op == "negate":
        return -x
    raise ValueError(f"unknown unary op {op!r}")


def apply_binary(op: str, a: float, b: float) -> float:
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        if b == 0:
            return math.nan if a == 0 else math.copysign(math.inf, a) * math.copysign(1.0, b)
        return a / b
    raise ValueError(f"unknown binary op {op!r}")


# ---------------------------------------------------------------------------
# serialization to the line-oriented cascade description format


def serialize(cascade: Cascade) -> str:
    lines = []
    for t in cascade.tensors.values():
        dims = ", ".join(f"{rn}({cascade.ranks[rn].shape})" for rn in t.signature)
        lines.append(f"tensor {t.name} : {dims}" if dims else f"tensor {t.name} :")
    for r in cascade.ranks.values():
        if r.is_generational():
            lines.append(f"rank {r.name} generational step={r.step} stop={r.stop_bound}")
    for e in cascade.einsums:
        op = "+=" if e.reduction_ranks else "="
        body = format_expr(e.body)
        if e.post is not None:
            body = f"{body} + {format_expr(e.post)}"
        lines.append(f"einsum {e.eid}: {e.output} {op} {body}")
        if e.init is not None:
            lines.append(f"init: {e.init.target} = {format_expr(e.init.body)}")
        if e.stop is not None:
            lines.append(f"stop: {e.stop[0]} <= {e.stop[1]}")
    return "\n".join(lines) + "\n"


def rename_einsum(e: EinsumDecl, **changes) -> EinsumDecl:
    return replace(e, **changes)
