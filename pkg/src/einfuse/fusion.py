"""Pairwise fusion classification and greedy stitching.

A pair of Einsums falls into one of four classes by comparing iteration
spaces as rank-name sets: RI (equal), RSb (upstream proper superset),
RSp (upstream proper subset), RD (incomparable). Stitching walks the
cascade's declared order and greedily grows a group while three gates
hold: the candidate shares a tensor with the group, the consecutive-pair
class is enabled by the policy, and the running pairwise-intersection
chain satisfies the enabled equal/subset/superset condition. The
fully-fused policy additionally bridges adjacent groups whose boundary
pair is RD by spilling the boundary intermediate with a trigger.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional

from .ir import (
    Access,
    Affine,
    Cascade,
    ConstIndex,
    Diagnostic,
    Diff,
    EinsumDecl,
    index_vars,
    iteration_space,
)


class FusionClass(Enum):
    RI = "RI"
    RSB = "RSb"
    RSP = "RSp"
    RD = "RD"
    NOT_ADJACENT = "NotAdjacent"


class ChainRel(Enum):
    EQUAL = "equal"
    SUBSET = "subset"      # I_curr strictly inside I_prev
    SUPERSET = "superset"  # I_curr strictly outside I_prev
    DISJOINT = "incomparable"


class StitchPolicy(Enum):
    RI_ONLY = "ri"
    RI_RSB = "ri-rsb"
    RI_RSB_RSP = "ri-rsb-rsp"
    FULLY_FUSED = "fully-fused"


_ALL_CLASSES = frozenset({FusionClass.RI, FusionClass.RSB, FusionClass.RSP, FusionClass.RD})

#: per policy: (classes a seed pair may have, classes an admitted link may
#: have, chain conditions accepted by Alg. 1's test)
_POLICY_GATES = {
    StitchPolicy.RI_ONLY: (
        frozenset({FusionClass.RI}),
        frozenset({FusionClass.RI}),
        frozenset({ChainRel.EQUAL}),
    ),
    StitchPolicy.RI_RSB: (
        frozenset({FusionClass.RI, FusionClass.RSB}),
        frozenset({FusionClass.RI, FusionClass.RSB}),
        frozenset({ChainRel.EQUAL, ChainRel.SUBSET}),
    ),
    StitchPolicy.RI_RSB_RSP: (
        _ALL_CLASSES,
        frozenset({FusionClass.RI, FusionClass.RSB, FusionClass.RSP}),
        frozenset({ChainRel.EQUAL, ChainRel.SUBSET, ChainRel.SUPERSET}),
    ),
    StitchPolicy.FULLY_FUSED: (
        _ALL_CLASSES,
        frozenset({FusionClass.RI, FusionClass.RSB, FusionClass.RSP}),
        frozenset({ChainRel.EQUAL, ChainRel.SUBSET, ChainRel.SUPERSET}),
    ),
}


def classify_spaces(up: set[str], dwn: set[str]) -> FusionClass:
    if up == dwn:
        return FusionClass.RI
    if up > dwn:
        return FusionClass.RSB
    if up < dwn:
        return FusionClass.RSP
    return FusionClass.RD


def chain_rel(prev: set[str], curr: set[str]) -> ChainRel:
    if prev == curr:
        return ChainRel.EQUAL
    if curr < prev:
        return ChainRel.SUBSET
    if curr > prev:
        return ChainRel.SUPERSET
    return ChainRel.DISJOINT


def classify_pair(up: EinsumDecl, dwn: EinsumDecl, cascade: Cascade) -> FusionClass:
    """Fusion class of an upstream/downstream pair; NotAdjacent without an
    output→input tensor edge."""
    if up.output.tensor not in dwn.read_tensors():
        return FusionClass.NOT_ADJACENT
    return classify_spaces(
        set(iteration_space(cascade, up)), set(iteration_space(cascade, dwn))
    )


# ---------------------------------------------------------------------------
# fusion groups


@dataclass(frozen=True)
class Link:
    up: int
    dwn: int
    cls: FusionClass
    i_curr: tuple[str, ...]


@dataclass(frozen=True)
class Bridge:
    tensor: str
    up: int
    dwn: int


@dataclass(frozen=True)
class Residency:
    state: str  # "on-chip-unit" | "on-chip-tile" | "spilled" | "multi-pass"
    passes: int = 1
    elems: int = 1
    trigger: bool = False
    demoted: bool = False  # spilled by the buffer-feasibility check


@dataclass(frozen=True)
class GenAnnotation:
    tensor: str
    tile_i: int
    state: str       # "unit" | "tile"
    slab_elems: int  # on-chip elements implied for the binding check


@dataclass(frozen=True)
class FusionGroup:
    members: tuple[int, ...]
    links: tuple[Link, ...] = ()
    stationary: tuple[str, ...] = ()
    residency: dict = field(default_factory=dict, compare=False)
    bridges: tuple[Bridge, ...] = ()
    gen: Optional[GenAnnotation] = None

    def intersection_chain(self) -> list[tuple[str, ...]]:
        return [l.i_curr for l in self.links]


def _ordered(cascade: Cascade, names: set[str]) -> tuple[str, ...]:
    return tuple(rn for rn in cascade.ranks if rn in names)


def _tensors_of(e: EinsumDecl) -> set[str]:
    return set(e.read_tensors()) | {e.output.tensor}


def _shares_tensor(group_tensors: set[str], e: EinsumDecl) -> bool:
    return bool(group_tensors & _tensors_of(e))


def stationary_ranks(cascade: Cascade, group: FusionGroup) -> tuple[str, ...]:
    """Ranks surviving the whole pairwise-intersection chain, declaration
    order (these must be the outermost loops of the fused traversal)."""
    if not group.links:
        e = cascade.einsum(group.members[0])
        out = {v.upper() for v in e.output_vars()}
        return _ordered(cascade, out)
    survived = set(group.links[0].i_curr)
    for l in group.links[1:]:
        survived &= set(l.i_curr)
    return _ordered(cascade, survived)


def consumed_in_group(cascade: Cascade, group: FusionGroup) -> set[int]:
    """Members whose output some later member of the group reads."""
    members = list(group.members)
    out = set()
    for k, m in enumerate(members):
        t = cascade.einsum(m).output.tensor
        for later in members[k + 1 :]:
            if t in cascade.einsum(later).read_tensors():
                out.add(m)
                break
    return out


def shared_prefix_ranks(cascade: Cascade, group: FusionGroup) -> tuple[str, ...]:
    """Stationary ranks that can actually stay open across the whole group:
    a surviving rank that a member reduces over while feeding a later member
    must instead close (and reopen) around the handoff."""
    excluded: set[str] = set()
    for m in consumed_in_group(cascade, group):
        excluded |= set(cascade.einsum(m).reduction_ranks)
    return tuple(rn for rn in stationary_ranks(cascade, group) if rn not in excluded)


def greedy_stitch(cascade: Cascade, policy: StitchPolicy) -> list[FusionGroup]:
    """Greedy stitching over the cascade's declared order."""
    es = cascade.einsums
    if len(es) == 0:
        return []
    seed_classes, admit_classes, chain_conds = _POLICY_GATES[policy]
    spaces = {e.eid: set(iteration_space(cascade, e)) for e in es}

    groups: list[FusionGroup] = []
    i = 0
    while i < len(es):
        if i == len(es) - 1:
            groups.append(_finish(cascade, [es[i].eid], []))
            break
        a, b = es[i], es[i + 1]
        seed_cls = classify_spaces(spaces[a.eid], spaces[b.eid])
        if not (_shares_tensor(_tensors_of(a), b) and seed_cls in seed_classes):
            groups.append(_finish(cascade, [a.eid], []))
            i += 1
            continue
        i_prev = spaces[a.eid] & spaces[b.eid]
        members = [a.eid, b.eid]
        links = [Link(a.eid, b.eid, seed_cls, _ordered(cascade, i_prev))]
        group_tensors = _tensors_of(a) | _tensors_of(b)
        j = i + 2
        while j < len(es):
            prev_e, cand = es[j - 1], es[j]
            cls = classify_spaces(spaces[prev_e.eid], spaces[cand.eid])
            i_curr = spaces[prev_e.eid] & spaces[cand.eid]
            rel = chain_rel(i_prev, i_curr)
            if (
                _shares_tensor(group_tensors, cand)
                and cls in admit_classes
                and rel in chain_conds
            ):
                members.append(cand.eid)
                links.append(Link(prev_e.eid, cand.eid, cls, _ordered(cascade, i_curr)))
                group_tensors |= _tensors_of(cand)
                i_prev = i_curr
                j += 1
            else:
                break
        groups.append(_finish(cascade, members, links))
        i = j

    if policy is StitchPolicy.FULLY_FUSED:
        groups = _bridge_rd_boundaries(cascade, groups, spaces)
    plan_residency(cascade, groups, policy)
    return groups


def _finish(cascade: Cascade, members: list[int], links: list[Link]) -> FusionGroup:
    g = FusionGroup(tuple(members), tuple(links))
    return replace(g, stationary=stationary_ranks(cascade, g))


def _bridge_rd_boundaries(
    cascade: Cascade, groups: list[FusionGroup], spaces: dict[int, set[str]]
) -> list[FusionGroup]:
    """Merge adjacent groups whose boundary pair classifies RD, marking the
    boundary intermediates as spilled-with-trigger."""
    out = [groups[0]] if groups else []
    for g in groups[1:]:
        prev = out[-1]
        up_eid, dwn_eid = prev.members[-1], g.members[0]
        cls = classify_spaces(spaces[up_eid], spaces[dwn_eid])
        seam_curr = spaces[up_eid] & spaces[dwn_eid]
        chain_broke = bool(prev.links) and (
            chain_rel(set(prev.links[-1].i_curr), seam_curr) is ChainRel.DISJOINT
        )
        bridge_tensors = _boundary_tensors(cascade, prev, g)
        if (cls is FusionClass.RD or chain_broke) and bridge_tensors:
            seam = Link(up_eid, dwn_eid, cls, _ordered(cascade, spaces[up_eid] & spaces[dwn_eid]))
            merged = FusionGroup(
                prev.members + g.members,
                prev.links + (seam,) + g.links,
                bridges=prev.bridges
                + tuple(Bridge(t, up_eid, dwn_eid) for t in bridge_tensors)
                + g.bridges,
            )
            out[-1] = replace(merged, stationary=stationary_ranks(cascade, merged))
        else:
            out.append(g)
    return out


def _boundary_tensors(cascade: Cascade, g1: FusionGroup, g2: FusionGroup) -> list[str]:
    """The boundary pair's own intermediate: the last upstream Einsum's
    output read by the first downstream Einsum."""
    up_out = cascade.einsum(g1.members[-1]).output.tensor
    if up_out in cascade.einsum(g2.members[0]).read_tensors():
        return [up_out]
    return []


# ---------------------------------------------------------------------------
# residency planning: which tensors stay on-chip, spill, or need passes


def _touched_box(cascade: Cascade, a: Access) -> tuple[tuple[int, int], ...]:
    """Per-axis [lo, hi) index box an access touches over its full range."""
    sig = cascade.tensors[a.tensor].signature
    box = []
    for axis, ix in enumerate(a.idx):
        ext = cascade.ranks[sig[axis]].extent
        if isinstance(ix, ConstIndex):
            box.append((ix.value, ix.value + 1))
        elif isinstance(ix, Diff):
            box.append((0, ext))
        else:
            var_ext = cascade.ranks[ix.var.upper()].extent
            lo = ix.offset
            hi = ix.scale * (var_ext - 1) + ix.offset + 1
            box.append((max(0, lo), min(ext, hi)))
    return tuple(box)


def _boxes_overlap(b1, b2) -> bool:
    return all(lo1 < hi2 and lo2 < hi1 for (lo1, hi1), (lo2, hi2) in zip(b1, b2))


def _consumer_box(cascade: Cascade, e: EinsumDecl, tensor: str):
    boxes = [
        _touched_box(cascade, a) for a in e.read_accesses() if a.tensor == tensor
    ]
    return boxes


def _is_recurrent_read(cascade: Cascade, reader: EinsumDecl, tensor: str) -> bool:
    pos = {e.eid: k for k, e in enumerate(cascade.einsums)}
    prod = cascade.producer.get(tensor)
    return prod is not None and pos[prod] >= pos[reader.eid]


def _reduction_path_exists(
    cascade: Cascade, group: set[int], src: int, dst: int, tensor_ranks: set[str]
) -> bool:
    """Is there a dependency path src -> dst inside the group that passes a
    reduction over one of the tensor's ranks (src's own reduction counts)?"""
    adj: dict[int, list[int]] = {m: [] for m in group}
    for u, v, _t in cascade.edges:
        if u in group and v in group:
            adj[u].append(v)

    def reduces(eid: int) -> bool:
        return bool(set(cascade.einsum(eid).reduction_ranks) & tensor_ranks)

    seen = set()
    stack = [(src, reduces(src))]
    while stack:
        node, flag = stack.pop()
        if (node, flag) in seen:
            continue
        seen.add((node, flag))
        for nxt in adj.get(node, ()):
            nf = flag or reduces(nxt)
            if nxt == dst and flag:
                return True
            stack.append((nxt, nf))
    return False


def pass_partition(
    cascade: Cascade, group: FusionGroup, tensor: str
) -> tuple[int, dict[int, int]]:
    """Partition a group's consumers of a tensor into passes: a consumer
    opens a new pass when a reduction over one of the tensor's ranks
    separates it from an overlapping consumer of the current pass.
    Returns (pass count, consumer eid -> pass index)."""
    members = set(group.members)
    pos = {e.eid: k for k, e in enumerate(cascade.einsums)}
    t_ranks = set(cascade.tensors[tensor].signature)
    consumers = [
        eid
        for eid in group.members
        if tensor in cascade.einsum(eid).read_tensors()
        and not _is_recurrent_read(cascade, cascade.einsum(eid), tensor)
    ]
    consumers.sort(key=lambda eid: pos[eid])
    if not consumers:
        return 1, {}
    part = {consumers[0]: 0}
    passes = 1
    current = [consumers[0]]
    for c in consumers[1:]:
        opens = False
        c_boxes = _consumer_box(cascade, cascade.einsum(c), tensor)
        for prev in current:
            p_boxes = _consumer_box(cascade, cascade.einsum(prev), tensor)
            overlap = any(_boxes_overlap(b1, b2) for b1 in p_boxes for b2 in c_boxes)
            if overlap and _reduction_path_exists(cascade, members, prev, c, t_ranks):
                opens = True
                break
        if opens:
            passes += 1
            current = [c]
        else:
            current.append(c)
        part[c] = passes - 1
    return passes, part


def pass_count(cascade: Cascade, group: FusionGroup, tensor: str) -> int:
    return pass_partition(cascade, group, tensor)[0]


def plan_residency(
    cascade: Cascade, groups: list[FusionGroup], policy: Optional[StitchPolicy] = None
) -> None:
    """Fill each group's residency map for its produced tensors (in place)."""
    eid_group: dict[int, int] = {}
    for gi, g in enumerate(groups):
        for m in g.members:
            eid_group[m] = gi
    for gi, g in enumerate(groups):
        bridge_names = {b.tensor for b in g.bridges}
        for m in g.members:
            e = cascade.einsum(m)
            t = e.output.tensor
            consumers = [
                c
                for c in cascade.consumers(t)
                if not _is_recurrent_read(cascade, cascade.einsum(c), t)
            ]
            out_group = [c for c in consumers if eid_group.get(c) != gi]
            passes = pass_count(cascade, g, t)
            if t in bridge_names:
                g.residency[t] = Residency("spilled", passes=max(1, passes), trigger=True)
            elif passes >= 2:
                g.residency[t] = Residency("multi-pass", passes=passes)
            elif out_group or not consumers:
                g.residency[t] = Residency("spilled")
            else:
                g.residency[t] = Residency("on-chip-unit")


# ---------------------------------------------------------------------------
# generational ranks


def recurrent_tensors(cascade: Cascade, group: FusionGroup) -> list[str]:
    members = set(group.members)
    return sorted(
        {
            t
            for (reader, producer, t) in cascade.recurrent_reads()
            if reader in members and producer in members
        }
    )


def handle_generational(
    cascade: Cascade, group: FusionGroup, tile_i: int
) -> tuple[FusionGroup, list[Diagnostic]]:
    """Annotate a group containing the recurrence with an I-partition size
    and the implied on-chip residency of the state tensor."""
    diags: list[Diagnostic] = []
    gen = cascade.generational_rank()
    recs = recurrent_tensors(cascade, group)
    if gen is None or not recs:
        return group, [Diagnostic("warning", "group has no recurrence to partition")]
    if tile_i > gen.extent:
        diags.append(
            Diagnostic(
                "warning",
                f"tile_I={tile_i} exceeds {gen.name} extent {gen.extent}; clamped",
            )
        )
        tile_i = gen.extent
    tile_i = max(1, tile_i)
    tensor = recs[0]
    sig = cascade.tensors[tensor].signature
    non_gen = [rn for rn in sig if rn != gen.name]
    slab = 1
    for rn in non_gen:
        slab *= cascade.ranks[rn].extent
    if tile_i == 1 or gen.extent == 1:
        # fully stationary on the non-generational ranks: unit element of
        # state on-chip, no spill possible
        ann = GenAnnotation(tensor, tile_i, "unit", 1)
    else:
        ann = GenAnnotation(tensor, tile_i, "tile", slab)
    out = replace(group, gen=ann)
    out.residency.update(group.residency)
    return out, diags


# ---------------------------------------------------------------------------
# plan report


def fusion_plan(cascade: Cascade, groups: list[FusionGroup]) -> dict:
    """JSON-ready fusion plan: groups, link classes, chains, residency."""
    multi_producer_notes = []
    for e in cascade.einsums:
        srcs = [
            u for (u, v, _t) in cascade.edges if v == e.eid
        ]
        if len(srcs) > 1:
            multi_producer_notes.append(
                {"einsum": e.eid, "producers": sorted(set(srcs))}
            )
    return {
        "groups": [
            {
                "id": gi + 1,
                "einsums": list(g.members),
                "links": [
                    {"up": l.up, "dwn": l.dwn, "class": l.cls.value, "intersection": list(l.i_curr)}
                    for l in g.links
                ],
                "stationary": list(g.stationary),
                "residency": {
                    t: {"state": r.state, "passes": r.passes, "trigger": r.trigger}
                    for t, r in sorted(g.residency.items())
                },
                "bridges": [
                    {"tensor": b.tensor, "up": b.up, "dwn": b.dwn} for b in g.bridges
                ],
            }
            for gi, g in enumerate(groups)
        ],
        "group_count": len(groups),
        "multi_producer_consumers": multi_producer_notes,
    }
