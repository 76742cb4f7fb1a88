"""Lowering fusion groups to executable loop nests.

A group lowers to one nest: the surviving stationary ranks open outermost,
then members place their statements left to right. Before each member the
cursor closes the deepest loops its iteration space does not contain and
opens the missing ones, ordering ranks shared with the next member first,
then output ranks, then reduction/window ranks innermost. This yields the
per-class shapes: RI statements interleave under shared loops, RSb
consumers sit at the reduction-complete depth, RSp consumers open their
broadcast ranks inside the producer's point, and RD consumers follow the
upstream register reduction at the shared depth.

Fully-fused bridged groups lower as one chain; their boundary tensors live
in the backing store and carry a trigger that fires on the final write of
each granule.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Union

from .fusion import (
    FusionGroup,
    Residency,
    StitchPolicy,
    plan_residency,
    shared_prefix_ranks,
    stationary_ranks,
)
from .ir import (
    Access,
    Affine,
    Cascade,
    ConstIndex,
    Diagnostic,
    Diff,
    EinsumDecl,
    format_expr,
    index_vars,
    iteration_space,
)


class ScheduleError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


@dataclass
class Stmt:
    eid: int
    group: int


@dataclass
class Comment:
    text: str


@dataclass
class Loop:
    rank: str
    extent: int
    tile: int = 1
    body: list = field(default_factory=list)


Node = Union[Loop, Stmt, Comment]


@dataclass(frozen=True)
class TriggerSpec:
    tensor: str
    granule_ranks: tuple[str, ...]
    downstream: int  # einsum id started by the trigger
    group: int


@dataclass
class LoopNest:
    roots: list
    groups: list[FusionGroup]
    group_of: dict
    triggers: list[TriggerSpec] = field(default_factory=list)
    tiles: dict = field(default_factory=dict)
    label: str = ""

    def statements(self) -> list[Stmt]:
        out = []

        def walk(items):
            for it in items:
                if isinstance(it, Loop):
                    walk(it.body)
                elif isinstance(it, Stmt):
                    out.append(it)

        walk(self.roots)
        return out


# ---------------------------------------------------------------------------
# lowering


def _space_ranks(cascade: Cascade, e: EinsumDecl) -> list[str]:
    return list(iteration_space(cascade, e).keys())


def _output_ranks(cascade: Cascade, e: EinsumDecl) -> set[str]:
    return {v.upper() for v in e.output_vars()}


def _gen_shift(cascade: Cascade, e: EinsumDecl) -> int:
    """Positive offset of the output index on the generational rank."""
    gen = cascade.generational_rank()
    if gen is None:
        return 0
    sig = cascade.tensors[e.output.tensor].signature
    for axis, ix in enumerate(e.output.idx):
        if axis < len(sig) and sig[axis] == gen.name and isinstance(ix, Affine):
            if ix.offset > 0:
                return ix.offset
    return 0


def lower(
    cascade: Cascade,
    group: FusionGroup,
    tiles: Optional[dict] = None,
    stationary_order: Optional[tuple] = None,
    force: bool = False,
    group_index: int = 0,
) -> LoopNest:
    """Lower one fusion group to a loop nest.

    ``stationary_order`` overrides the loop order of the outer stationary
    block; unless ``force`` is set it must be a permutation of the group's
    surviving ranks (anything else breaks the output/input-stationary
    guarantee and is rejected).
    """
    tiles = dict(tiles or {})
    required = stationary_ranks(cascade, group)
    if stationary_order is not None:
        order = tuple(stationary_order)
        if not force and set(order) != set(required):
            raise ScheduleError(
                [
                    Diagnostic(
                        "error",
                        f"stationary order {list(order)} breaks stationarity; "
                        f"the mapping must keep {list(required)} stationary",
                    )
                ]
            )
    else:
        # a surviving rank that a member reduces over while feeding a later
        # member cannot stay in the shared prefix: its accumulation must
        # complete before the consumer, so it opens per member instead
        order = shared_prefix_ranks(cascade, group)
    nest = _lower_chain(cascade, group, order, tiles, group_index, refine=not force)
    bad = [rn for rn in tiles if rn not in cascade.ranks]
    if bad:
        raise ScheduleError([Diagnostic("error", f"tile on undeclared rank {bad[0]}")])
    if tiles and not force:
        diags = check_stationarity(nest, cascade)
        if diags:
            raise ScheduleError(diags)
    return nest


def _lower_chain(
    cascade: Cascade,
    group: FusionGroup,
    stationary: tuple,
    tiles: dict,
    group_index: int,
    refine: bool = True,
) -> LoopNest:
    members = [cascade.einsum(m) for m in group.members]
    roots: list = []
    path: list[Loop] = []
    triggers: list[TriggerSpec] = []
    bridge_by_dwn = {b.dwn: b for b in group.bridges}

    def container() -> list:
        return path[-1].body if path else roots

    def open_loop(rank: str, extent_override: Optional[int] = None) -> None:
        lp = Loop(
            rank,
            extent_override if extent_override is not None else cascade.ranks[rank].extent,
            tiles.get(rank, 1),
        )
        container().append(lp)
        path.append(lp)

    gen = cascade.generational_rank()
    shifts = [_gen_shift(cascade, e) for e in members]
    gen_extent = None
    if gen is not None and any(shifts):
        gen_extent = gen.extent - max(shifts)

    for rank in stationary:
        ext = gen_extent if (gen is not None and rank == gen.name and gen_extent) else None
        open_loop(rank, ext)

    producer_of = {cascade.einsum(m).output.tensor: m for m in group.members}
    stmt_paths: dict[int, list[Loop]] = {}

    for k, e in enumerate(members):
        space = set(_space_ranks(cascade, e))
        # a producer's output is final only once its reduction loops close:
        # any still-open loop that enclosed the producer's statement and
        # carries one of its reduction ranks must be closed first
        blocked: set[str] = set()
        for t in e.read_tensors():
            u = producer_of.get(t)
            if u is None or u == e.eid:
                continue
            u_decl = cascade.einsum(u)
            for lp in path:
                if lp in stmt_paths.get(u, ()) and lp.rank in u_decl.reduction_ranks:
                    blocked.add(lp.rank)
        keep = 0
        for lp in path:
            if lp.rank in space and lp.rank not in blocked:
                keep += 1
            else:
                break
        del path[keep:]

        opened = {lp.rank for lp in path}
        remaining = [rn for rn in _space_ranks(cascade, e) if rn not in opened]
        nxt_space = set(_space_ranks(cascade, members[k + 1])) if k + 1 < len(members) else set()
        outs = _output_ranks(cascade, e)
        shared_next = [rn for rn in cascade.ranks if rn in remaining and rn in nxt_space]
        out_rest = [rn for rn in cascade.ranks if rn in remaining and rn in outs and rn not in shared_next]
        red_rest = [rn for rn in cascade.ranks if rn in remaining and rn not in shared_next and rn not in out_rest]

        if e.eid in bridge_by_dwn:
            b = bridge_by_dwn[e.eid]
            granule = tuple(
                rn
                for rn in cascade.tensors[b.tensor].signature
                if rn not in {lp.rank for lp in path}
            )
            triggers.append(TriggerSpec(b.tensor, granule, e.eid, group_index))
            container().append(
                Comment(
                    f"final {'x'.join(granule) if granule else 'element'} granule of "
                    f"{b.tensor} ready here; triggers E{e.eid}"
                )
            )

        for rn in shared_next + out_rest + red_rest:
            ext = gen_extent if (gen is not None and rn == gen.name and gen_extent) else None
            open_loop(rn, ext)
        stmt_paths[e.eid] = list(path)
        container().append(Stmt(e.eid, group_index))

    if refine:
        _refine_footprints(cascade, group, stmt_paths)
    return LoopNest(
        roots,
        [group],
        {m: group_index for m in group.members},
        triggers,
        tiles,
    )


def _refine_footprints(
    cascade: Cascade, group: FusionGroup, stmt_paths: dict[int, list[Loop]]
) -> None:
    """Tighten on-chip residency to the footprint the emitted structure
    implies: an accumulator whose reduction loops sit above some of its own
    ranks, or whose consumer lives outside the producing loop instances,
    keeps a tile of those cycling ranks live rather than a unit element."""
    recurrent = {t for _r, _p, t in cascade.recurrent_reads()}
    members = set(group.members)
    for m in group.members:
        e = cascade.einsum(m)
        t = e.output.tensor
        res = group.residency.get(t)
        if res is None or res.state != "on-chip-unit" or t in recurrent:
            continue
        t_ranks = set(cascade.tensors[t].signature)
        p_u = stmt_paths[m]
        cycling: set[str] = set()
        if e.reduction_ranks:
            red_ix = [k for k, lp in enumerate(p_u) if lp.rank in e.reduction_ranks]
            if red_ix:
                for lp in p_u[min(red_ix) + 1 :]:
                    if lp.rank in t_ranks:
                        cycling.add(lp.rank)
        for c in cascade.consumers(t):
            if c not in members or c == m:
                continue
            p_c = stmt_paths.get(c, [])
            common = 0
            for a, b in zip(p_u, p_c):
                if a is b:
                    common += 1
                else:
                    break
            for lp in p_u[common:]:
                if lp.rank in t_ranks:
                    cycling.add(lp.rank)
        if cycling:
            elems = 1
            for rn in cycling:
                elems *= cascade.ranks[rn].extent
            group.residency[t] = Residency("on-chip-tile", elems=elems)


def lower_fully_fused(
    groups: list[FusionGroup],
    cascade: Cascade,
    tiles: Optional[dict] = None,
) -> LoopNest:
    """Lower a (possibly bridged) group list into a single nest; bridged
    groups are already merged chains, so this concatenates sequential
    nests and carries every trigger across."""
    return lower_variant(cascade, groups, tiles)


def lower_variant(
    cascade: Cascade,
    groups: list[FusionGroup],
    tiles: Optional[dict] = None,
    label: str = "",
) -> LoopNest:
    roots: list = []
    group_of: dict = {}
    triggers: list[TriggerSpec] = []
    for gi, g in enumerate(groups):
        sub = lower(cascade, g, tiles=tiles, group_index=gi)
        if len(groups) > 1:
            roots.append(Comment(f"group {gi + 1}: einsums {_squash_ids(g.members)}"))
        roots.extend(sub.roots)
        group_of.update(sub.group_of)
        triggers.extend(sub.triggers)
    return LoopNest(roots, list(groups), group_of, triggers, dict(tiles or {}), label)


def _squash_ids(ids) -> str:
    ids = list(ids)
    runs = []
    start = prev = ids[0]
    for x in ids[1:]:
        if x == prev + 1:
            prev = x
            continue
        runs.append((start, prev))
        start = prev = x
    runs.append((start, prev))
    return ", ".join(f"{a}-{b}" if a != b else f"{a}" for a, b in runs)


# ---------------------------------------------------------------------------
# unfused baseline


def unfused_schedule(cascade: Cascade) -> LoopNest:
    """One nest per Einsum in declared order, everything in the backing
    store. Recurrence clusters share their generational loop so reads of
    the previous generation see the producer's writes."""
    singles = []
    for e in cascade.einsums:
        g = FusionGroup((e.eid,), ())
        singles.append(
            FusionGroup((e.eid,), (), stationary=stationary_ranks(cascade, g))
        )
    plan_residency(cascade, singles)

    pos = {e.eid: k for k, e in enumerate(cascade.einsums)}
    spans: list[list[int]] = []
    for reader, producer, _t in cascade.recurrent_reads():
        lo, hi = pos[reader], pos[producer]
        for s in spans:
            if not (hi < s[0] or lo > s[1]):
                s[0], s[1] = min(s[0], lo), max(s[1], hi)
                break
        else:
            spans.append([lo, hi])

    gen = cascade.generational_rank()
    roots: list = []
    group_of: dict = {}
    k = 0
    es = cascade.einsums
    while k < len(es):
        span = next((s for s in spans if s[0] == k), None)
        if span is not None and gen is not None:
            cluster = [es[i] for i in range(span[0], span[1] + 1)]
            shift = max(_gen_shift(cascade, e) for e in cluster)
            wrapper = Loop(gen.name, gen.extent - shift)
            for e in cluster:
                wrapper.body.append(_single_nest(cascade, e, pos[e.eid], skip={gen.name}))
            roots.append(wrapper)
            k = span[1] + 1
        else:
            roots.append(_single_nest(cascade, es[k], k))
            k += 1
    group_of = {e.eid: pos[e.eid] for e in es}

    return LoopNest(roots, singles, group_of, [], {}, "unfused")


def _single_nest(cascade: Cascade, e: EinsumDecl, group_index: int, skip=frozenset()):
    outs = _output_ranks(cascade, e)
    space = _space_ranks(cascade, e)
    order = [rn for rn in space if rn in outs and rn not in skip] + [
        rn for rn in space if rn not in outs and rn not in skip
    ]
    top: Optional[Loop] = None
    cur: Optional[Loop] = None
    for rn in order:
        lp = Loop(rn, cascade.ranks[rn].extent)
        if cur is None:
            top = lp
        else:
            cur.body.append(lp)
        cur = lp
    stmt = Stmt(e.eid, group_index)
    if cur is None:
        return stmt
    cur.body.append(stmt)
    return top


# ---------------------------------------------------------------------------
# liveness dry-run: stationarity checker and footprint measurement


def _iter_env(nest_items, cascade, visit):
    """Walk the nest executing ``visit(stmt, env)`` at every statement
    visit, with env mapping rank variable -> index."""
    env: dict[str, int] = {}

    def walk(items):
        for it in items:
            if isinstance(it, Loop):
                var = it.rank.lower()
                for v in range(it.extent):
                    env[var] = v
                    walk(it.body)
                env.pop(var, None)
            elif isinstance(it, Stmt):
                visit(it, env)

    walk(nest_items)


def _resolve(cascade: Cascade, a: Access, env: dict) -> Optional[tuple]:
    sig = cascade.tensors[a.tensor].signature
    out = []
    for axis, ix in enumerate(a.idx):
        if isinstance(ix, ConstIndex):
            v = ix.value
        elif isinstance(ix, Diff):
            v = env[ix.var] - env[ix.win]
        else:
            v = ix.scale * env[ix.var] + ix.offset
        if v < 0 or v >= cascade.ranks[sig[axis]].extent:
            return None
        out.append(v)
    return tuple(out)


def measure_liveness(nest: LoopNest, cascade: Cascade) -> dict[str, int]:
    """Max simultaneously-live elements per group-internal intermediate
    (live from first write to last in-group read). Pure index streams, no
    tensor data."""
    group_tensors: dict[str, int] = {}
    for gi, g in enumerate(nest.groups):
        for m in g.members:
            group_tensors[cascade.einsum(m).output.tensor] = gi

    first_write: dict[tuple, int] = {}
    last_read: dict[tuple, int] = {}
    step = 0

    def visit(stmt: Stmt, env: dict) -> None:
        nonlocal step
        e = cascade.einsum(stmt.eid)
        for a in e.read_accesses():
            gi = group_tensors.get(a.tensor)
            if gi is None or gi != stmt.group:
                continue
            coords = _resolve(cascade, a, env)
            if coords is not None:
                last_read[(a.tensor, coords)] = step
        coords = _resolve(cascade, e.output, env)
        if coords is not None:
            key = (e.output.tensor, coords)
            if key not in first_write:
                first_write[key] = step
        step += 1

    _iter_env(nest.roots, cascade, visit)

    intervals: dict[str, list[tuple[int, int]]] = {}
    for (tensor, coords), w in first_write.items():
        r = last_read.get((tensor, coords), w)
        intervals.setdefault(tensor, []).append((w, max(w, r)))
    out: dict[str, int] = {}
    for tensor, ivs in intervals.items():
        events = []
        for w, r in ivs:
            events.append((w, 1))
            events.append((r + 1, -1))
        events.sort()
        live = peak = 0
        for _t, d in events:
            live += d
            peak = max(peak, live)
        out[tensor] = peak
    return out


def check_stationarity(nest: LoopNest, cascade: Cascade) -> list[Diagnostic]:
    """Static check that every fused link keeps the upstream
    output-stationary / downstream input-stationary property: each
    on-chip-unit intermediate's footprint stays within its tile volume."""
    diags: list[Diagnostic] = []
    live = measure_liveness(nest, cascade)
    recurrent = {t for _reader, _producer, t in cascade.recurrent_reads()}
    for gi, g in enumerate(nest.groups):
        for m in g.members:
            t = cascade.einsum(m).output.tensor
            res = g.residency.get(t)
            if res is None or t in recurrent:
                continue
            if res.state not in ("on-chip-unit", "on-chip-tile"):
                continue
            allowed = res.elems
            for rn in cascade.tensors[t].signature:
                allowed *= nest.tiles.get(rn, 1)
            got = live.get(t, 0)
            if got > allowed:
                diags.append(
                    Diagnostic(
                        "error",
                        f"intermediate {t} needs {got} live elements but its "
                        f"on-chip residency allows {allowed}; stationarity violated",
                    )
                )
    return diags


# ---------------------------------------------------------------------------
# pretty printer / JSON dump


def pretty(nest: LoopNest, cascade: Cascade) -> str:
    lines: list[str] = []
    if nest.label:
        lines.append(f"# schedule: {nest.label}")

    def emit(items, depth):
        pad = "  " * depth
        for it in items:
            if isinstance(it, Comment):
                lines.append(f"{pad}# {it.text}")
            elif isinstance(it, Loop):
                tile = f"  # tile {it.tile}" if it.tile != 1 else ""
                lines.append(f"{pad}for {it.rank.lower()} in range({it.extent}):{tile}")
                emit(it.body, depth + 1)
            else:
                e = cascade.einsum(it.eid)
                op = "+=" if e.reduction_ranks else "="
                body = format_expr(e.body)
                if e.post is not None:
                    body += f" + {format_expr(e.post)}"
                lines.append(f"{pad}{e.output} {op} {body}  # E{it.eid}")

    emit(nest.roots, 0)
    return "\n".join(lines) + "\n"


def to_json(nest: LoopNest, cascade: Cascade) -> str:
    def conv(it):
        if isinstance(it, Loop):
            return {
                "loop": it.rank,
                "extent": it.extent,
                "tile": it.tile,
                "body": [conv(x) for x in it.body],
            }
        if isinstance(it, Comment):
            return {"comment": it.text}
        return {"einsum": it.eid, "group": it.group}

    doc = {
        "label": nest.label,
        "roots": [conv(it) for it in nest.roots],
        "groups": [
            {
                "einsums": list(g.members),
                "stationary": list(g.stationary),
                "residency": {
                    t: {"state": r.state, "passes": r.passes, "trigger": r.trigger}
                    for t, r in sorted(g.residency.items())
                },
            }
            for g in nest.groups
        ],
        "triggers": [
            {
                "tensor": t.tensor,
                "granule": list(t.granule_ranks),
                "downstream": t.downstream,
            }
            for t in nest.triggers
        ],
    }
    return json.dumps(doc, indent=2)
