"""Cascade sources: the line-oriented description format, the builtin
parameterized Mamba-1 layer, and the shared-input merging transform.

Format (one declaration per line, ``#`` comments):

    tensor A : M(4), K(8)
    rank I generational step=1 stop=16
    einsum 1: Z[m, n] += A[m, k] * B[k, n]
    init: Z[0] = A[0] * B[0]
    stop: i <= 16

``+=`` infers sum-reductions over right-hand-side-only ranks; top-level
additive terms that touch no reduced rank are bias-style post terms,
added once per output point. Functions: exp log sqrt rsqrt silu sigmoid
softplus square negate. Window indices are spelled ``i-w``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Optional

from .ir import (
    Access,
    Affine,
    Bin,
    Cascade,
    Const,
    ConstIndex,
    Diagnostic,
    Diff,
    EinsumDecl,
    Expr,
    InitClause,
    RankDecl,
    RankKind,
    TensorDecl,
    Un,
    UNARY_OPS,
    expr_accesses,
    expr_vars,
    index_vars,
    validate,
)

# ---------------------------------------------------------------------------
# parameter sets and model presets


@dataclass(frozen=True)
class ParamSet:
    """User-facing shape parameters of the builtin layer cascade."""

    B: int = 64
    I: int = 2048
    E: int = 1024
    D: int = 2048
    N: int = 16
    R: int = 64
    W: int = 4
    L: int = 48
    phase: str = "prefill"  # "prefill" | "decode"

    def __post_init__(self):
        for f in ("B", "I", "E", "D", "N", "R", "W", "L"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be >= 1")
        if self.phase not in ("prefill", "decode"):
            raise ValueError(f"unknown phase {self.phase!r}")
        if self.phase == "decode" and self.I != 1:
            raise ValueError("decode phase requires I = 1")


#: public checkpoint shapes; N=16 and the layer counts are fixed by the model family
PRESETS = {
    "mamba-370m": dict(E=1024, D=2048, R=64, W=4, N=16, L=48),
    "mamba-2.8b": dict(E=2560, D=5120, R=160, W=4, N=16, L=64),
}

TINY = dict(B=2, I=8, E=8, D=16, N=4, R=4, W=4, L=2)

RMSNORM_EPS = 1e-5


def make_params(preset: Optional[str] = None, phase: str = "prefill", **overrides) -> ParamSet:
    base: dict = {}
    if preset == "tiny":
        base.update(TINY)
    elif preset is not None:
        base.update(PRESETS[preset])
    base.update(overrides)
    if phase == "decode":
        base["I"] = 1
    return ParamSet(phase=phase, **base)


# ---------------------------------------------------------------------------
# tokenizer / parser


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""(?P<ws>[ \t]+)
      | (?P<comment>\#[^\n]*)
      | (?P<nl>\n)
      | (?P<num>\d+\.\d+(e-?\d+)?|\d+e-?\d+|\d+)
      | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<pluseq>\+=)
      | (?P<le><=)
      | (?P<sym>[:\[\](),+\-*/=])
    """,
    re.VERBOSE,
)


def _tokenize(text: str) -> tuple[list[list[_Tok]], list[Diagnostic]]:
    lines: list[list[_Tok]] = [[]]
    diags: list[Diagnostic] = []
    line, col, i = 1, 1, 0
    while i < len(text):
        m = _TOKEN_RE.match(text, i)
        if m is None:
            diags.append(Diagnostic("error", f"unexpected character {text[i]!r}", line=line, col=col))
            i += 1
            col += 1
            continue
        kind = m.lastgroup
        tok = m.group(0)
        if kind == "nl":
            lines.append([])
            line += 1
            col = 1
        else:
            if kind not in ("ws", "comment"):
                lines[-1].append(_Tok(kind, tok, line, col))
            col += len(tok)
        i = m.end()
    return [ln for ln in lines if ln], diags


class _LineParser:
    def __init__(self, toks: list[_Tok], diags: list[Diagnostic]):
        self.toks = toks
        self.pos = 0
        self.diags = diags

    def peek(self) -> Optional[_Tok]:
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def next(self) -> Optional[_Tok]:
        t = self.peek()
        if t is not None:
            self.pos += 1
        return t

    def error(self, msg: str) -> None:
        t = self.peek() or self.toks[-1]
        self.diags.append(Diagnostic("error", msg, line=t.line, col=t.col))
        raise _Bail()

    def expect(self, text: str) -> _Tok:
        t = self.peek()
        if t is None or t.text != text:
            self.error(f"expected {text!r}" + (f", got {t.text!r}" if t else ""))
        return self.next()

    def accept(self, text: str) -> bool:
        t = self.peek()
        if t is not None and t.text == text:
            self.next()
            return True
        return False

    # expression grammar: additive < multiplicative < unary/atom
    def parse_expr(self) -> Expr:
        e = self.parse_term()
        while True:
            t = self.peek()
            if t is not None and t.text in ("+", "-"):
                self.next()
                rhs = self.parse_term()
                e = Bin("add" if t.text == "+" else "sub", e, rhs)
            else:
                return e

    def parse_term(self) -> Expr:
        e = self.parse_atom()
        while True:
            t = self.peek()
            if t is not None and t.text in ("*", "/"):
                self.next()
                rhs = self.parse_atom()
                e = Bin("mul" if t.text == "*" else "div", e, rhs)
            else:
                return e

    def parse_atom(self) -> Expr:
        t = self.peek()
        if t is None:
            self.error("expected expression")
        if t.text == "(":
            self.next()
            e = self.parse_expr()
            self.expect(")")
            return e
        if t.text == "-":
            self.next()
            inner = self.parse_atom()
            if isinstance(inner, Const):
                return Const(-inner.value)
            return Un("negate", inner)
        if t.kind == "num":
            self.next()
            return Const(float(t.text))
        if t.kind == "ident":
            self.next()
            nxt = self.peek()
            if nxt is not None and nxt.text == "(" and t.text in UNARY_OPS:
                self.next()
                e = self.parse_expr()
                self.expect(")")
                return Un(t.text, e)
            if nxt is not None and nxt.text == "[":
                return self.parse_access(t.text)
            self.error(f"bare identifier {t.text!r}; expected access or function call")
        self.error(f"unexpected token {t.text!r}")

    def parse_access(self, tensor: str) -> Access:
        self.expect("[")
        idx = []
        if not self.accept("]"):
            while True:
                idx.append(self.parse_index())
                if self.accept("]"):
                    break
                self.expect(",")
        return Access(tensor, tuple(idx))

    def parse_index(self):
        t = self.peek()
        if t is None:
            self.error("expected index")
        neg = False
        if t.text == "-":
            self.next()
            neg = True
            t = self.peek()
        if t is not None and t.kind == "num":
            self.next()
            return ConstIndex(-int(t.text) if neg else int(t.text))
        if t is not None and t.kind == "ident":
            self.next()
            var = t.text
            nxt = self.peek()
            if nxt is not None and nxt.text in ("+", "-"):
                sign = 1 if nxt.text == "+" else -1
                self.next()
                t2 = self.next()
                if t2 is None:
                    self.error("expected offset or window variable")
                if t2.kind == "num":
                    return Affine(var, 1, sign * int(t2.text))
                if t2.kind == "ident" and sign == -1:
                    return Diff(var, t2.text)
                self.error("bad index expression")
            return Affine(var)
        self.error("bad index expression")


class _Bail(Exception):
    pass


@dataclass
class ParseResult:
    cascade: Optional[Cascade]
    diagnostics: list[Diagnostic] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.cascade is not None and not any(
            d.severity == "error" for d in self.diagnostics
        )


def parse(text: str) -> ParseResult:
    """Parse a cascade description; total — never raises on bad input."""
    lines, diags = _tokenize(text)
    ranks: dict[str, RankDecl] = {}
    tensors: dict[str, TensorDecl] = {}
    einsums: list[EinsumDecl] = []

    for toks in lines:
        p = _LineParser(toks, diags)
        head = p.peek()
        try:
            if head.text == "tensor":
                _parse_tensor(p, ranks, tensors)
            elif head.text == "rank":
                _parse_rank(p, ranks)
            elif head.text == "einsum":
                _parse_einsum(p, ranks, tensors, einsums)
            elif head.text == "init":
                _parse_init(p, einsums)
            elif head.text == "stop":
                _parse_stop(p, ranks, einsums)
            else:
                p.error(f"unknown declaration {head.text!r}")
        except _Bail:
            continue

    if not einsums:
        diags.append(Diagnostic("error", "no Einsums in cascade source"))
        return ParseResult(None, diags)
    cascade = Cascade(ranks, tensors, tuple(einsums))
    diags.extend(validate(cascade))
    if any(d.severity == "error" for d in diags):
        return ParseResult(None, diags)
    return ParseResult(cascade, diags)


def _parse_tensor(p: _LineParser, ranks, tensors) -> None:
    p.expect("tensor")
    name = p.next()
    if name is None or name.kind != "ident":
        p.error("expected tensor name")
    p.expect(":")
    sig = []
    while p.peek() is not None:
        rn = p.next()
        if rn.kind != "ident":
            p.error("expected rank name")
        p.expect("(")
        ext = p.next()
        if ext is None or ext.kind != "num":
            p.error("expected rank extent")
        p.expect(")")
        sig.append(rn.text)
        if rn.text not in ranks:
            ranks[rn.text] = RankDecl(rn.text, int(ext.text))
        elif ranks[rn.text].shape != int(ext.text):
            p.diags.append(
                Diagnostic(
                    "error",
                    f"rank {rn.text} redeclared with extent {ext.text} != {ranks[rn.text].shape}",
                    line=rn.line,
                    col=rn.col,
                )
            )
        if not p.accept(","):
            break
    tensors[name.text] = TensorDecl(name.text, tuple(sig))


def _parse_rank(p: _LineParser, ranks) -> None:
    p.expect("rank")
    name = p.next()
    if name is None or name.kind != "ident":
        p.error("expected rank name")
    p.expect("generational")
    step, stop = 1, None
    while p.peek() is not None:
        key = p.next()
        p.expect("=")
        val = p.next()
        if val is None or val.kind != "num":
            p.error("expected integer")
        if key.text == "step":
            step = int(val.text)
        elif key.text == "stop":
            stop = int(val.text)
        else:
            p.error(f"unknown generational attribute {key.text!r}")
    shape = ranks[name.text].shape if name.text in ranks else (max(1, (stop or 1) // step))
    ranks[name.text] = RankDecl(
        name.text, shape, RankKind.GENERATIONAL, step=step, stop_bound=stop
    )


def _parse_einsum(p: _LineParser, ranks, tensors, einsums) -> None:
    p.expect("einsum")
    eid = p.next()
    if eid is None or eid.kind != "num":
        p.error("expected einsum id")
    p.expect(":")
    out_name = p.next()
    if out_name is None or out_name.kind != "ident":
        p.error("expected output tensor")
    output = p.parse_access(out_name.text)
    reducing = False
    if p.accept("+="):
        reducing = True
    else:
        p.expect("=")
    expr = p.parse_expr()
    if p.peek() is not None:
        p.error(f"trailing tokens after expression")

    out_vars = set()
    for ix in output.idx:
        out_vars.update(index_vars(ix))
    out_ranks = {v.upper() for v in out_vars}
    body, post, red = _split_post(expr, out_ranks) if reducing else (expr, None, frozenset())
    has_window = any(
        isinstance(ix, Diff) for a in expr_accesses(expr) for ix in a.idx
    )
    einsums.append(
        EinsumDecl(
            int(eid.text),
            output,
            body,
            red,
            post=post,
            boundary="zero" if has_window else "error",
        )
    )


def _split_post(expr: Expr, out_ranks: set[str]) -> tuple[Expr, Optional[Expr], frozenset]:
    """For ``+=``: reduced terms form the body, reduction-free terms the post."""
    terms: list[Expr] = []

    def flatten(e: Expr) -> None:
        if isinstance(e, Bin) and e.op == "add":
            flatten(e.lhs)
            flatten(e.rhs)
        else:
            terms.append(e)

    flatten(expr)
    red_all = set()
    body_terms, post_terms = [], []
    for t in terms:
        tr = {v.upper() for v in expr_vars(t)} - out_ranks
        if tr:
            red_all |= tr
            body_terms.append(t)
        else:
            post_terms.append(t)
    if not body_terms:  # accumulation with no reduced rank: keep everything in body
        return expr, None, frozenset()

    def join(ts: list[Expr]) -> Expr:
        e = ts[0]
        for t in ts[1:]:
            e = Bin("add", e, t)
        return e

    return join(body_terms), (join(post_terms) if post_terms else None), frozenset(red_all)


def _parse_init(p: _LineParser, einsums) -> None:
    p.expect("init")
    p.expect(":")
    name = p.next()
    if name is None or name.kind != "ident":
        p.error("expected tensor name")
    target = p.parse_access(name.text)
    p.expect("=")
    body = p.parse_expr()
    if not einsums:
        p.error("init clause before any einsum")
    einsums[-1] = replace(einsums[-1], init=InitClause(target, body))


def _parse_stop(p: _LineParser, ranks, einsums) -> None:
    p.expect("stop")
    p.expect(":")
    var = p.next()
    if var is None or var.kind != "ident":
        p.error("expected rank variable")
    p.expect("<=")
    bound = p.next()
    if bound is None or bound.kind != "num":
        p.error("expected bound")
    if not einsums:
        p.error("stop clause before any einsum")
    einsums[-1] = replace(einsums[-1], stop=(var.text.upper(), int(bound.text)))


# ---------------------------------------------------------------------------
# builtin Mamba-1 layer cascade


def _v(*names: str) -> tuple[Affine, ...]:
    return tuple(Affine(n) for n in names)


def _acc(t: str, *names: str) -> Access:
    return Access(t, _v(*names))


def build_mamba1(params: ParamSet) -> Cascade:
    """The canonical 24-Einsum Mamba-1 layer cascade.

    Ids are fixed; the 7 GEMM-like Einsums are 7, 8, 11, 12, 13, 14, 24;
    the SSM recurrence is Einsums 19-20 over the generational rank I.
    """
    p = params
    ranks = {
        "B": RankDecl("B", p.B),
        "I": RankDecl("I", p.I, RankKind.GENERATIONAL, step=1, stop_bound=p.I),
        "E": RankDecl("E", p.E),
        "D": RankDecl("D", p.D),
        "N": RankDecl("N", p.N),
        "R": RankDecl("R", p.R),
        "W": RankDecl("W", p.W),
    }
    sigs = {
        "IN": ("B", "I", "E"),
        "X": ("B", "I", "E"),
        "SQ": ("B", "I", "E"),
        "NUM": ("B", "I"),
        "MEAN": ("B", "I"),
        "SQEX": ("B", "I"),
        "G": ("E",),
        "NEX": ("B", "I", "E"),
        "WIN": ("E", "D"),
        "TX": ("B", "I", "D"),
        "WRES": ("E", "D"),
        "RX": ("B", "I", "D"),
        "WC": ("D", "W"),
        "TTX": ("B", "I", "D"),
        "LEX": ("B", "I", "D"),
        "WB": ("D", "N"),
        "XB": ("B", "I", "N"),
        "WXC": ("D", "N"),
        "XC": ("B", "I", "N"),
        "WD1": ("D", "R"),
        "TTD": ("B", "I", "R"),
        "WD2": ("R", "D"),
        "BD": ("D",),
        "DTP": ("B", "I", "D"),
        "DT": ("B", "I", "D"),
        "A": ("D", "N"),
        "AB": ("B", "I", "D", "N"),
        "BB": ("B", "I", "D", "N"),
        "BX": ("B", "I", "D", "N"),
        "HH": ("B", "I", "D", "N"),
        "H": ("B", "I", "D", "N"),
        "S": ("B", "I", "D"),
        "DSKIP": ("D",),
        "SD": ("B", "I", "D"),
        "Y": ("B", "I", "D"),
        "WOUT": ("D", "E"),
        "O": ("B", "I", "E"),
    }
    tensors = {n: TensorDecl(n, s) for n, s in sigs.items()}

    mul = lambda a, b: Bin("mul", a, b)
    es = [
        EinsumDecl(1, _acc("X", "b", "i", "e"), _acc("IN", "b", "i", "e")),
        EinsumDecl(2, _acc("SQ", "b", "i", "e"), Un("square", _acc("X", "b", "i", "e"))),
        EinsumDecl(3, _acc("NUM", "b", "i"), _acc("SQ", "b", "i", "e"), frozenset({"E"})),
        EinsumDecl(4, _acc("MEAN", "b", "i"), Bin("div", _acc("NUM", "b", "i"), Const(float(p.E)))),
        EinsumDecl(
            5,
            _acc("SQEX", "b", "i"),
            Un("rsqrt", Bin("add", _acc("MEAN", "b", "i"), Const(RMSNORM_EPS))),
        ),
        EinsumDecl(
            6,
            _acc("NEX", "b", "i", "e"),
            mul(mul(_acc("X", "b", "i", "e"), _acc("SQEX", "b", "i")), _acc("G", "e")),
        ),
        EinsumDecl(7, _acc("TX", "b", "i", "d"), mul(_acc("NEX", "b", "i", "e"), _acc("WIN", "e", "d")), frozenset({"E"})),
        EinsumDecl(8, _acc("RX", "b", "i", "d"), mul(_acc("NEX", "b", "i", "e"), _acc("WRES", "e", "d")), frozenset({"E"})),
        EinsumDecl(
            9,
            _acc("TTX", "b", "i", "d"),
            mul(Access("TX", (Affine("b"), Diff("i", "w"), Affine("d"))), _acc("WC", "d", "w")),
            frozenset({"W"}),
            boundary="zero",
        ),
        EinsumDecl(10, _acc("LEX", "b", "i", "d"), Un("silu", _acc("TTX", "b", "i", "d"))),
        EinsumDecl(11, _acc("XB", "b", "i", "n"), mul(_acc("LEX", "b", "i", "d"), _acc("WB", "d", "n")), frozenset({"D"})),
        EinsumDecl(12, _acc("XC", "b", "i", "n"), mul(_acc("LEX", "b", "i", "d"), _acc("WXC", "d", "n")), frozenset({"D"})),
        EinsumDecl(13, _acc("TTD", "b", "i", "r"), mul(_acc("LEX", "b", "i", "d"), _acc("WD1", "d", "r")), frozenset({"D"})),
        EinsumDecl(
            14,
            _acc("DTP", "b", "i", "d"),
            mul(_acc("TTD", "b", "i", "r"), _acc("WD2", "r", "d")),
            frozenset({"R"}),
            post=_acc("BD", "d"),
        ),
        EinsumDecl(15, _acc("DT", "b", "i", "d"), Un("softplus", _acc("DTP", "b", "i", "d"))),
        EinsumDecl(
            16,
            _acc("AB", "b", "i", "d", "n"),
            Un("exp", mul(_acc("DT", "b", "i", "d"), _acc("A", "d", "n"))),
        ),
        EinsumDecl(17, _acc("BB", "b", "i", "d", "n"), mul(_acc("DT", "b", "i", "d"), _acc("XB", "b", "i", "n"))),
        EinsumDecl(18, _acc("BX", "b", "i", "d", "n"), mul(_acc("BB", "b", "i", "d", "n"), _acc("LEX", "b", "i", "d"))),
        EinsumDecl(
            19,
            _acc("HH", "b", "i", "d", "n"),
            mul(
                _acc("AB", "b", "i", "d", "n"),
                Access("H", (Affine("b"), Affine("i", offset=-1), Affine("d"), Affine("n"))),
            ),
            init=InitClause(
                Access("H", (Affine("b"), ConstIndex(-1), Affine("d"), Affine("n"))), Const(0.0)
            ),
            stop=("I", p.I),
        ),
        EinsumDecl(20, _acc("H", "b", "i", "d", "n"), Bin("add", _acc("HH", "b", "i", "d", "n"), _acc("BX", "b", "i", "d", "n"))),
        EinsumDecl(21, _acc("S", "b", "i", "d"), mul(_acc("H", "b", "i", "d", "n"), _acc("XC", "b", "i", "n")), frozenset({"N"})),
        EinsumDecl(
            22,
            _acc("SD", "b", "i", "d"),
            Bin("add", _acc("S", "b", "i", "d"), mul(_acc("DSKIP", "d"), _acc("LEX", "b", "i", "d"))),
        ),
        EinsumDecl(23, _acc("Y", "b", "i", "d"), mul(_acc("SD", "b", "i", "d"), Un("silu", _acc("RX", "b", "i", "d")))),
        EinsumDecl(24, _acc("O", "b", "i", "e"), mul(_acc("Y", "b", "i", "d"), _acc("WOUT", "d", "e")), frozenset({"D"})),
    ]
    return Cascade(ranks, tensors, tuple(es))


def gemm_like(cascade: Cascade, e: EinsumDecl) -> bool:
    """GEMM shape: a product of exactly two accesses whose only shared
    ranks are the reduction ranks (weights meet activations on the reduced
    rank alone). The causal correlation and the state contraction fail this."""
    if not e.reduction_ranks:
        return False
    b = e.body
    if not (isinstance(b, Bin) and b.op == "mul" and isinstance(b.lhs, Access) and isinstance(b.rhs, Access)):
        return False
    if any(isinstance(ix, Diff) for a in (b.lhs, b.rhs) for ix in a.idx):
        return False
    r1 = {v.upper() for ix in b.lhs.idx for v in index_vars(ix)}
    r2 = {v.upper() for ix in b.rhs.idx for v in index_vars(ix)}
    return r1 & r2 == set(e.reduction_ranks)


def gemm_like_ids(cascade: Cascade) -> list[int]:
    return [e.eid for e in cascade.einsums if gemm_like(cascade, e)]


# ---------------------------------------------------------------------------
# shared-input merging


@dataclass(frozen=True)
class MergeInfo:
    fused_eid: int
    member_eids: tuple[int, ...]
    fused_tensor: str
    fused_rank: str
    members: tuple[tuple[str, int, int], ...]  # (member output, offset, extent)


@dataclass
class MergedCascade:
    cascade: Cascade
    merges: tuple[MergeInfo, ...] = ()
    diagnostics: list[Diagnostic] = field(default_factory=list)


def _merge_shape(cascade: Cascade, eids: list[int]) -> Optional[dict]:
    """Structural compatibility of one merge group; None when incompatible."""
    members = [cascade.einsum(i) for i in eids]
    common = set(members[0].read_tensors())
    for e in members[1:]:
        common &= set(e.read_tensors())
    if len(common) != 1:
        return None
    shared_name = common.pop()
    shapes = []
    for e in members:
        b = e.body
        if not (
            isinstance(b, Bin)
            and b.op == "mul"
            and isinstance(b.lhs, Access)
            and isinstance(b.rhs, Access)
            and e.post is None
        ):
            return None
        shared, weight = b.lhs, b.rhs
        if weight.tensor == shared_name:
            shared, weight = weight, shared
        if shared.tensor != shared_name:
            return None
        out_sig = cascade.tensors[e.output.tensor].signature
        shared_sig = cascade.tensors[shared.tensor].signature
        local = [rn for rn in out_sig if rn not in shared_sig]
        if len(local) != 1:
            return None
        shapes.append(dict(e=e, shared=shared, weight=weight, local=local[0], out_sig=out_sig))
    first = shapes[0]
    for s in shapes[1:]:
        if s["shared"].tensor != first["shared"].tensor or s["shared"].idx != first["shared"].idx:
            return None
        if [rn for rn in s["out_sig"] if rn != s["local"]] != [
            rn for rn in first["out_sig"] if rn != first["local"]
        ]:
            return None
        if set(s["e"].reduction_ranks) != set(first["e"].reduction_ranks):
            return None
    return dict(members=shapes)


def _fresh_name(base: str, taken) -> str:
    name = base
    k = 0
    while name in taken:
        k += 1
        name = f"{base}{k}"
    return name


def merge_shared_inputs(cascade: Cascade, groups: list[list[int]]) -> MergedCascade:
    """Replace each group of structurally-identical shared-input Einsums by
    one Einsum concatenating the member outputs along a fresh fused rank.

    Downstream consumers are rewritten to read offset slices of the fused
    output. Incompatible groups leave the cascade unchanged (diagnostic).
    """
    diags: list[Diagnostic] = []
    shaped = []
    for g in groups:
        if len(g) <= 1:
            continue  # identity transform
        info = _merge_shape(cascade, list(g))
        if info is None:
            diags.append(
                Diagnostic("error", f"merge group {sorted(g)} has incompatible member shapes")
            )
            return MergedCascade(cascade, (), diags)
        shaped.append((list(g), info))

    ranks = dict(cascade.ranks)
    tensors = dict(cascade.tensors)
    einsums = list(cascade.einsums)
    merges: list[MergeInfo] = []

    for g, info in shaped:
        members = info["members"]
        first = members[0]["e"]
        fused_rank = _fresh_name("F" + str(first.eid), ranks)
        extent = sum(cascade.ranks[m["local"]].extent for m in members)
        ranks[fused_rank] = RankDecl(fused_rank, extent)

        fused_tensor = "".join(m["e"].output.tensor for m in members)
        fused_tensor = _fresh_name(fused_tensor, tensors)
        out_sig = tuple(
            fused_rank if rn == members[0]["local"] else rn for rn in members[0]["out_sig"]
        )
        tensors[fused_tensor] = TensorDecl(fused_tensor, out_sig)

        # fused weight: concatenation of the member weights along the local axis
        w_sigs = [cascade.tensors[m["weight"].tensor].signature for m in members]
        axis = w_sigs[0].index(members[0]["local"])
        fused_weight = _fresh_name("W" + fused_tensor, tensors)
        tensors[fused_weight] = TensorDecl(
            fused_weight,
            tuple(fused_rank if i == axis else rn for i, rn in enumerate(w_sigs[0])),
            concat_axis=axis,
            concat_members=tuple(
                (m["weight"].tensor, cascade.ranks[m["local"]].extent) for m in members
            ),
        )

        fvar = fused_rank.lower()
        weight_idx = tuple(
            Affine(fvar) if i == axis else ix
            for i, ix in enumerate(members[0]["weight"].idx)
        )
        local_var = None
        for ix in first.output.idx:
            for v in index_vars(ix):
                if v.upper() == members[0]["local"]:
                    local_var = v
        out_idx = tuple(
            Affine(fvar) if (local_var and index_vars(ix) == (local_var,)) else ix
            for ix in first.output.idx
        )
        fused_einsum = EinsumDecl(
            first.eid,
            Access(fused_tensor, out_idx),
            Bin("mul", members[0]["shared"], Access(fused_weight, weight_idx)),
            first.reduction_ranks,
            boundary=first.boundary,
        )

        # slice table and consumer rewrite
        offsets = []
        off = 0
        for m in members:
            ext = cascade.ranks[m["local"]].extent
            offsets.append((m["e"].output.tensor, off, ext))
            off += ext
        local_axis = members[0]["out_sig"].index(members[0]["local"])

        member_ids = [m["e"].eid for m in members]
        new_einsums = []
        for e in einsums:
            if e.eid in member_ids:
                if e.eid == first.eid:
                    new_einsums.append(fused_einsum)
                continue
            new_einsums.append(_rewrite_reads(e, dict((t, (o, x)) for t, o, x in offsets), fused_tensor, local_axis))
        einsums = new_einsums
        for m in members:
            tensors.pop(m["e"].output.tensor, None)
            tensors.pop(m["weight"].tensor, None)
        merges.append(
            MergeInfo(first.eid, tuple(member_ids), fused_tensor, fused_rank, tuple(offsets))
        )

    merged = Cascade(ranks, tensors, tuple(einsums))
    diags.extend(d for d in validate(merged) if d.severity == "error")
    if any(d.severity == "error" for d in diags):
        return MergedCascade(cascade, (), diags)
    return MergedCascade(merged, tuple(merges), diags)


def _rewrite_reads(e: EinsumDecl, slices: dict, fused_tensor: str, axis: int) -> EinsumDecl:
    def rw_expr(x):
        if isinstance(x, Access):
            if x.tensor in slices:
                off, _ = slices[x.tensor]
                idx = list(x.idx)
                ix = idx[axis]
                if isinstance(ix, Affine):
                    idx[axis] = Affine(ix.var, ix.scale, ix.offset + off)
                elif isinstance(ix, ConstIndex):
                    idx[axis] = ConstIndex(ix.value + off)
                else:
                    raise ValueError("cannot offset a window index through a merge")
                return Access(fused_tensor, tuple(idx))
            return x
        if isinstance(x, Bin):
            return Bin(x.op, rw_expr(x.lhs), rw_expr(x.rhs))
        if isinstance(x, Un):
            return Un(x.op, rw_expr(x.x))
        return x

    changes: dict = {"body": rw_expr(e.body)}
    if e.post is not None:
        changes["post"] = rw_expr(e.post)
    if e.init is not None and e.init.target.tensor in slices:
        changes["init"] = InitClause(rw_expr(e.init.target), rw_expr(e.init.body))
    return replace(e, **changes)


def default_merge_groups(cascade: Cascade, include_ab: bool = False) -> list[list[int]]:
    """The Mamba groupings {7,8}, {11,12,13}, and optionally {16,17}.

    {16,17} only merges when structurally compatible, which the standard
    layer's exp-vs-product bodies are not; it stays split by default.
    """
    groups = [[7, 8], [11, 12, 13]]
    if include_ab and _merge_shape(cascade, [16, 17]) is not None:
        groups.append([16, 17])
    return groups


def mamba1_merged(params: ParamSet, include_ab: bool = False) -> MergedCascade:
    c = build_mamba1(params)
    return merge_shared_inputs(c, default_merge_groups(c, include_ab))
