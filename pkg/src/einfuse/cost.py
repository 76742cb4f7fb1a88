"""Analytical DRAM-traffic and roofline-latency evaluation.

Traffic is algorithmic-minimum accounting driven by each group's residency
plan: fused on-chip intermediates move no bytes, spilled tensors write
once and are read once per consuming group's pass, multi-pass tensors are
loaded once per pass, and rank-disjoint bridges pay a spill write, a
partial-product surplus (reported with intra-Einsum bytes), and refill
reads. Tensors with no producer (weights, layer input) and terminal
outputs are intra-Einsum traffic; everything shared between Einsums is
inter-Einsum. Recurrent state crossing an invocation boundary (the decode
initial-state read) is outside the per-layer model for every variant.

The best-unfused family (unfused, the two prior-accelerator baselines)
gets the benefit of sufficient on-chip buffering: a tensor is loaded once
for its first consuming Einsum and later consumers reuse it. Fusion
variants pay per consuming group.

Latency: per group, compute time is the pipelined max over the compute
resources its Einsums bind to, memory time is bytes over bandwidth, and
the group takes the larger; groups execute sequentially.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Optional

from .frontend import ParamSet, build_mamba1, gemm_like, mamba1_merged
from .fusion import (
    Bridge,
    FusionGroup,
    Link,
    Residency,
    StitchPolicy,
    greedy_stitch,
    pass_partition,
    plan_residency,
    stationary_ranks,
)
from .ir import (
    Access,
    Affine,
    Bin,
    Cascade,
    ConstIndex,
    Diagnostic,
    Diff,
    EinsumDecl,
    expr_op_count,
    index_vars,
    iteration_space,
)

VARIANTS = ("unfused", "marca", "geens", "ri", "ri-rsb", "ri-rsb-rsp", "fully-fused")

_POLICY_BY_VARIANT = {
    "ri": StitchPolicy.RI_ONLY,
    "ri-rsb": StitchPolicy.RI_RSB,
    "ri-rsb-rsp": StitchPolicy.RI_RSB_RSP,
    "fully-fused": StitchPolicy.FULLY_FUSED,
}


# ---------------------------------------------------------------------------
# hardware configuration


@dataclass(frozen=True)
class HardwareConfig:
    bandwidth: float = 2039e9          # bytes/s
    clock: float = 1.75e9              # Hz
    pes_2d: int = 65536                # 256x256 array
    pes_1d: int = 8192                 # 1D mode of the 2D array
    pes_small: int = 256               # standalone 1D array
    global_buffer: int = 32 * 2**20    # bytes
    register_file: int = int(4.25 * 2**20)
    element_size: int = 2
    ops_per_mac: int = 2

    def __post_init__(self):
        for f in ("bandwidth", "clock", "pes_2d", "pes_1d", "pes_small",
                  "global_buffer", "register_file", "element_size"):
            if getattr(self, f) <= 0:
                raise ValueError(f"{f} must be positive")
        if self.pes_1d > self.pes_2d:
            raise ValueError("1D-mode PE subset cannot exceed the 2D array")

    def peak_flops(self, resource: str) -> float:
        return self.pes(resource) * self.ops_per_mac * self.clock

    def pes(self, resource: str) -> int:
        return {"2d": self.pes_2d, "1d": self.pes_1d, "small-1d": self.pes_small}[resource]


def parse_hw_config(text: str) -> HardwareConfig:
    kw = {}
    for ln in text.splitlines():
        ln = ln.split("#", 1)[0].strip()
        if not ln:
            continue
        key, _, val = ln.partition("=")
        key = key.strip()
        if key not in HardwareConfig.__dataclass_fields__:
            raise ValueError(f"unknown hardware config key {key!r}")
        f = HardwareConfig.__dataclass_fields__[key]
        kw[key] = float(val) if f.type == "float" else int(float(val))
    return HardwareConfig(**kw)


def hw_config_text(cfg: HardwareConfig) -> str:
    return "".join(
        f"{name}={getattr(cfg, name)!r}\n".replace("'", "")
        for name in cfg.__dataclass_fields__
    )


# ---------------------------------------------------------------------------
# access volumes (exact touched-element counts)


def _axis_count(cascade: Cascade, ix, axis_extent: int) -> int:
    if isinstance(ix, ConstIndex):
        return 1 if 0 <= ix.value < axis_extent else 0
    if isinstance(ix, Diff):
        return cascade.ranks[ix.var.upper()].extent
    ve = cascade.ranks[ix.var.upper()].extent
    return sum(1 for v in range(ve) if 0 <= ix.scale * v + ix.offset < axis_extent) if (
        ix.scale != 1
    ) else max(0, min(axis_extent, ve + ix.offset) - max(0, ix.offset))


def _axis_interval(cascade: Cascade, ix, axis_extent: int) -> Optional[tuple[int, int]]:
    """[lo, hi) touched interval; None when not a contiguous unit-stride set."""
    if isinstance(ix, ConstIndex):
        return (ix.value, ix.value + 1) if 0 <= ix.value < axis_extent else (0, 0)
    if isinstance(ix, Diff):
        return (0, cascade.ranks[ix.var.upper()].extent)
    if ix.scale != 1:
        return None
    ve = cascade.ranks[ix.var.upper()].extent
    return (max(0, ix.offset), max(0, min(axis_extent, ve + ix.offset)))


def access_volume(cascade: Cascade, a: Access) -> int:
    sig = cascade.tensors[a.tensor].signature
    vol = 1
    for axis, ix in enumerate(a.idx):
        vol *= _axis_count(cascade, ix, cascade.ranks[sig[axis]].extent)
    return vol


def union_volume(cascade: Cascade, accesses: list[Access]) -> int:
    """Unique elements touched by a set of accesses to one tensor."""
    if not accesses:
        return 0
    if len(accesses) == 1:
        return access_volume(cascade, accesses[0])
    sig = cascade.tensors[accesses[0].tensor].signature
    boxes = []
    for a in accesses:
        box = []
        for axis, ix in enumerate(a.idx):
            iv = _axis_interval(cascade, ix, cascade.ranks[sig[axis]].extent)
            if iv is None:  # strided unions degrade to a sum (not in corpus)
                return sum(access_volume(cascade, x) for x in accesses)
            box.append(iv)
        boxes.append(tuple(box))
    total = 0
    for k in range(1, len(boxes) + 1):
        for combo in combinations(boxes, k):
            inter = 1
            for axis in range(len(sig)):
                lo = max(b[axis][0] for b in combo)
                hi = min(b[axis][1] for b in combo)
                inter *= max(0, hi - lo)
            total += (-1) ** (k + 1) * inter
    return total


# ---------------------------------------------------------------------------
# compute model


def compute_class(cascade: Cascade, e: EinsumDecl) -> str:
    """gemm | linear (other MAC-structured reductions) | ew."""
    if gemm_like(cascade, e):
        return "gemm"
    b = e.body
    if (
        e.reduction_ranks
        and isinstance(b, Bin)
        and b.op == "mul"
        and isinstance(b.lhs, Access)
        and isinstance(b.rhs, Access)
    ):
        return "linear"
    return "ew"


def einsum_points(cascade: Cascade, e: EinsumDecl) -> int:
    return math.prod(iteration_space(cascade, e).values())


def einsum_cycles(cascade: Cascade, e: EinsumDecl) -> int:
    return einsum_points(cascade, e) * max(1, expr_op_count(e.body))


def einsum_flops(cascade: Cascade, e: EinsumDecl) -> int:
    factor = expr_op_count(e.body) + (1 if e.reduction_ranks else 0)
    return einsum_points(cascade, e) * max(1, factor)


@dataclass(frozen=True)
class GroupBinding:
    resource: str              # group-level: "2d" | "1d"
    member_resource: dict      # eid -> "2d" | "1d" | "small-1d"
    rationale: str


def bind_group(cascade: Cascade, group: FusionGroup) -> GroupBinding:
    classes = {m: compute_class(cascade, cascade.einsum(m)) for m in group.members}
    gemms = [m for m in group.members if classes[m] == "gemm"]
    if not gemms:
        res = {m: "1d" for m in group.members}
        return GroupBinding("1d", res, "no GEMM: 1D mode of the 2D array")
    first_gemm_pos = group.members.index(gemms[0])
    res = {}
    for k, m in enumerate(group.members):
        if classes[m] in ("gemm", "linear"):
            res[m] = "2d"
        elif k < first_gemm_pos:
            res[m] = "small-1d"  # feeds a GEMM: broadcast from the small array
        else:
            res[m] = "2d"
    return GroupBinding("2d", res, "contains GEMM: 2D mode; leading elementwise on the small 1D array")


# ---------------------------------------------------------------------------
# traffic plan


@dataclass(frozen=True)
class ReadDetail:
    group: int
    tensor: str
    pass_idx: int
    elements: int
    counted: bool
    kind: str  # "intra" | "inter"


@dataclass(frozen=True)
class WriteDetail:
    group: int
    tensor: str
    elements: int
    counted: bool
    kind: str           # "intra" | "inter"
    surplus_elements: int = 0  # bridge partial products, reported as intra/spill


@dataclass
class TrafficPlan:
    reads: list[ReadDetail]
    writes: list[WriteDetail]
    warnings: list[Diagnostic] = field(default_factory=list)

    def group_bytes(self, gi: int, esize: int) -> tuple[float, float, float]:
        intra = inter_r = inter_w = 0
        for r in self.reads:
            if r.group != gi or not r.counted:
                continue
            if r.kind == "intra":
                intra += r.elements
            else:
                inter_r += r.elements
        for w in self.writes:
            if w.group != gi or not w.counted:
                continue
            if w.kind == "intra":
                intra += w.elements
            else:
                inter_w += w.elements
            intra += w.surplus_elements
        return intra * esize, inter_r * esize, inter_w * esize


def variant_traffic(
    cascade: Cascade,
    groups: list[FusionGroup],
    buffered_rereads: bool = False,
) -> TrafficPlan:
    """Element-exact traffic for a grouped cascade."""
    producer_group: dict[str, int] = {}
    for gi, g in enumerate(groups):
        for m in g.members:
            producer_group[cascade.einsum(m).output.tensor] = gi
    inputs = set(cascade.input_tensors())
    terminals = set(cascade.terminal_tensors())

    reads: list[ReadDetail] = []
    writes: list[WriteDetail] = []
    loaded: set[str] = set()

    for gi, g in enumerate(groups):
        tensors = {}
        for m in g.members:
            for a in cascade.einsum(m).read_accesses():
                tensors.setdefault(a.tensor, []).append((m, a))
        for t in sorted(tensors):
            npass, part = pass_partition(cascade, g, t)
            res = g.residency.get(t)
            same_group = producer_group.get(t) == gi
            kind = "intra" if t in inputs else "inter"
            for p in range(max(1, npass)):
                accesses = [a for (m, a) in tensors[t] if part.get(m, 0) == p]
                if not accesses:
                    continue
                vol = union_volume(cascade, accesses)
                if same_group:
                    counted = res is not None and (
                        res.state == "multi-pass"
                        or res.trigger
                        or getattr(res, "demoted", False)
                    )
                else:
                    counted = True
                    if buffered_rereads:
                        if t in loaded:
                            counted = False
                        else:
                            loaded.add(t)
                reads.append(ReadDetail(gi, t, p, vol, counted, kind))
        for m in g.members:
            e = cascade.einsum(m)
            t = e.output.tensor
            res = g.residency.get(t, Residency("spilled"))
            vol = access_volume(cascade, e.output)
            counted = res.state in ("spilled", "multi-pass")
            surplus = vol if res.trigger else 0
            kind = "intra" if t in terminals else "inter"
            writes.append(WriteDetail(gi, t, vol, counted, kind, surplus))
    return TrafficPlan(reads, writes)


# ---------------------------------------------------------------------------
# variant construction


@dataclass
class VariantPlan:
    name: str
    cascade: Cascade
    groups: list[FusionGroup]
    buffered_rereads: bool
    warnings: list[Diagnostic] = field(default_factory=list)


def _ssm_region(cascade: Cascade) -> list[int]:
    """Maximal contiguous run of Einsums sharing the recurrence's iteration
    space and containing it (the state-update region)."""
    rec = cascade.recurrent_reads()
    if not rec:
        return []
    pos = {e.eid: k for k, e in enumerate(cascade.einsums)}
    reader = rec[0][0]
    space = set(iteration_space(cascade, cascade.einsum(reader)))
    k0 = k1 = pos[reader]
    es = cascade.einsums
    while k0 > 0 and set(iteration_space(cascade, es[k0 - 1])) == space:
        k0 -= 1
    while k1 + 1 < len(es) and set(iteration_space(cascade, es[k1 + 1])) == space:
        k1 += 1
    return [es[k].eid for k in range(k0, k1 + 1)]


def _singles(cascade: Cascade, skip: frozenset = frozenset()) -> list[FusionGroup]:
    out = []
    for e in cascade.einsums:
        if e.eid in skip:
            continue
        g = FusionGroup((e.eid,), ())
        out.append(replace(g, stationary=stationary_ranks(cascade, g)))
    return out


def _region_groups(
    cascade: Cascade, fused: list[tuple[int, ...]]
) -> list[FusionGroup]:
    """Singleton groups everywhere, with the given member runs fused."""
    fused_ids = {m for run in fused for m in run}
    pos = {e.eid: k for k, e in enumerate(cascade.einsums)}
    groups: list[FusionGroup] = []
    for e in cascade.einsums:
        run = next((r for r in fused if r[0] == e.eid), None)
        if run is not None:
            links = []
            for a, b in zip(run, run[1:]):
                inter = set(iteration_space(cascade, cascade.einsum(a))) & set(
                    iteration_space(cascade, cascade.einsum(b))
                )
                links.append(
                    Link(a, b, _pair_class(cascade, a, b), tuple(rn for rn in cascade.ranks if rn in inter))
                )
            g = FusionGroup(run, tuple(links))
            groups.append(replace(g, stationary=stationary_ranks(cascade, g)))
        elif e.eid not in fused_ids:
            g = FusionGroup((e.eid,), ())
            groups.append(replace(g, stationary=stationary_ranks(cascade, g)))
    groups.sort(key=lambda g: pos[g.members[0]])
    return groups


def _pair_class(cascade: Cascade, a: int, b: int):
    from .fusion import classify_spaces

    return classify_spaces(
        set(iteration_space(cascade, cascade.einsum(a))),
        set(iteration_space(cascade, cascade.einsum(b))),
    )


def _annotate_generational(
    cascade: Cascade, groups: list[FusionGroup], config: HardwareConfig, tile_i: int = 1
) -> list[Diagnostic]:
    """Attach the state-partition annotation to recurrence groups and demote
    on-chip residency that cannot fit the global buffer."""
    from .fusion import handle_generational, recurrent_tensors

    warnings: list[Diagnostic] = []
    for gi, g in enumerate(groups):
        if recurrent_tensors(cascade, g):
            annotated, diags = handle_generational(cascade, g, tile_i)
            warnings.extend(d for d in diags if d.severity == "warning")
            groups[gi] = annotated
            g = annotated
        onchip = sum(
            r.elems for r in g.residency.values() if r.state == "on-chip-tile"
        )
        if g.gen is not None:
            onchip += g.gen.slab_elems
        if onchip * config.element_size > config.global_buffer:
            for t, r in list(g.residency.items()):
                if r.state == "on-chip-tile":
                    g.residency[t] = Residency("spilled", demoted=True)
                    warnings.append(
                        Diagnostic(
                            "warning",
                            f"on-chip tile of {t} exceeds the global buffer; demoted",
                        )
                    )
    return warnings


def build_variant(name: str, params: ParamSet, config: HardwareConfig) -> VariantPlan:
    """A named fusion variant of the builtin layer cascade."""
    if name in _POLICY_BY_VARIANT:
        merged = mamba1_merged(params)
        groups = greedy_stitch(merged.cascade, _POLICY_BY_VARIANT[name])
        warnings = _annotate_generational(merged.cascade, groups, config)
        return VariantPlan(
            name, merged.cascade, groups, buffered_rereads=False, warnings=warnings
        )

    cascade = build_mamba1(params)
    if name == "unfused":
        groups = _singles(cascade)
        plan_residency(cascade, groups)
        return VariantPlan(name, cascade, groups, buffered_rereads=True)

    region = _ssm_region(cascade)
    warnings: list[Diagnostic] = []
    if name == "marca":
        # RI fusion of the back-to-back elementwise pairs in the state
        # region, with whole-tensor tile granularity: demoted to spills
        # whenever a tile exceeds the global buffer.
        pairs = []
        pos = {e.eid: k for k, e in enumerate(cascade.einsums)}
        for a, b in zip(region, region[1:]):
            ea, eb = cascade.einsum(a), cascade.einsum(b)
            edge = ea.output.tensor in eb.read_tensors()
            elementwise = not ea.reduction_ranks and not eb.reduction_ranks
            if edge and elementwise and not any(a in run or b in run for run in pairs):
                pairs.append((a, b))
        groups = _region_groups(cascade, pairs)
        plan_residency(cascade, groups)
        for g in groups:
            if len(g.members) < 2:
                continue
            for t, res in list(g.residency.items()):
                if res.state != "on-chip-unit":
                    continue
                tile_bytes = _tensor_elems(cascade, t) * config.element_size
                if tile_bytes > config.global_buffer:
                    g.residency[t] = Residency("spilled", demoted=True)
                    warnings.append(
                        Diagnostic(
                            "warning",
                            f"marca-like tile of {t} ({tile_bytes} B) exceeds the "
                            f"global buffer; demoted to spilled",
                        )
                    )
        return VariantPlan(name, cascade, groups, buffered_rereads=True, warnings=warnings)

    if name == "geens":
        groups = _region_groups(cascade, [tuple(region)] if region else [])
        plan_residency(cascade, groups)
        gen = cascade.generational_rank()
        if gen is not None and region:
            rec_t = next(
                t for (_r, _p, t) in cascade.recurrent_reads()
            )
            slab = _tensor_elems(cascade, rec_t) // cascade.ranks[gen.name].extent
            if slab * config.element_size > config.global_buffer:
                warnings.append(
                    Diagnostic(
                        "warning",
                        f"unit-{gen.name} state slab exceeds the buffer; "
                        f"falling back to sub-tiling along the state ranks",
                    )
                )
        return VariantPlan(name, cascade, groups, buffered_rereads=True, warnings=warnings)

    raise ValueError(f"unknown variant {name!r} (expected one of {VARIANTS})")


def _tensor_elems(cascade: Cascade, t: str) -> int:
    return math.prod(cascade.ranks[rn].extent for rn in cascade.tensors[t].signature)


# ---------------------------------------------------------------------------
# cost report


@dataclass(frozen=True)
class CostRow:
    variant: str
    phase: str
    group_id: int
    einsum_ids: tuple[int, ...]
    bound: str
    flops: int
    bytes_intra: float
    bytes_inter_read: float
    bytes_inter_write: float
    t_compute: float
    t_memory: float
    t_start: float
    t_end: float

    @property
    def latency(self) -> float:
        return self.t_end - self.t_start

    @property
    def bytes_total(self) -> float:
        return self.bytes_intra + self.bytes_inter_read + self.bytes_inter_write


@dataclass
class CostReport:
    variant: str
    phase: str
    rows: list[CostRow]
    bindings: list[GroupBinding]
    warnings: list[Diagnostic] = field(default_factory=list)
    ideal: Optional["CostReport"] = None

    @property
    def latency(self) -> float:
        return self.rows[-1].t_end if self.rows else 0.0

    @property
    def bytes_inter(self) -> float:
        return sum(r.bytes_inter_read + r.bytes_inter_write for r in self.rows)

    @property
    def bytes_intra(self) -> float:
        return sum(r.bytes_intra for r in self.rows)

    @property
    def bytes_total(self) -> float:
        return self.bytes_inter + self.bytes_intra

    @property
    def read_bytes(self) -> float:
        return self._rw[0]

    @property
    def write_bytes(self) -> float:
        return self._rw[1]

    _rw_cache: Optional[tuple] = None

    @property
    def _rw(self) -> tuple:
        return self._rw_cache or (0.0, 0.0)

    def to_csv(self) -> str:
        out = [
            "variant,phase,group_id,einsum_ids,bound,flops,bytes_intra,"
            "bytes_inter_read,bytes_inter_write,t_compute_s,t_memory_s,t_start_s,t_end_s"
        ]
        for r in self.rows:
            ids = "+".join(str(i) for i in r.einsum_ids)
            out.append(
                f"{r.variant},{r.phase},{r.group_id},{ids},{r.bound},{r.flops},"
                f"{r.bytes_intra:.0f},{r.bytes_inter_read:.0f},{r.bytes_inter_write:.0f},"
                f"{r.t_compute:.9e},{r.t_memory:.9e},{r.t_start:.9e},{r.t_end:.9e}"
            )
        return "\n".join(out) + "\n"

    def util_csv(self, config: HardwareConfig) -> str:
        out = [
            "variant,phase,group_id,einsum_ids,t_start_s,t_end_s,flops_frac,bw_frac,bound"
        ]
        for r, b in zip(self.rows, self.bindings):
            lat = max(r.latency, 1e-300)
            peak = config.peak_flops(b.resource)
            ff = min(1.0, (r.flops / lat) / peak)
            bf = min(1.0, (r.bytes_total / lat) / config.bandwidth)
            ids = "+".join(str(i) for i in r.einsum_ids)
            out.append(
                f"{r.variant},{r.phase},{r.group_id},{ids},{r.t_start:.9e},"
                f"{r.t_end:.9e},{ff:.6f},{bf:.6f},{r.bound}"
            )
        return "\n".join(out) + "\n"


def roofline(
    cascade: Cascade,
    groups: list[FusionGroup],
    plan: TrafficPlan,
    config: HardwareConfig,
    variant: str,
    phase: str,
    zero_inter: bool = False,
) -> CostReport:
    rows: list[CostRow] = []
    bindings: list[GroupBinding] = []
    t = 0.0
    for gi, g in enumerate(groups):
        binding = bind_group(cascade, g)
        bucket_cycles: dict[str, float] = {}
        flops = 0
        for m in g.members:
            e = cascade.einsum(m)
            res = binding.member_resource[m]
            bucket_cycles[res] = bucket_cycles.get(res, 0) + einsum_cycles(cascade, e)
            flops += einsum_flops(cascade, e)
        t_comp = max(
            cyc / (config.pes(res) * config.clock) for res, cyc in bucket_cycles.items()
        )
        intra, inter_r, inter_w = plan.group_bytes(gi, config.element_size)
        if zero_inter:
            inter_r = inter_w = 0.0
        total_bytes = intra + inter_r + inter_w
        t_mem = total_bytes / config.bandwidth
        lat = max(t_comp, t_mem)
        bound = "compute" if t_comp >= t_mem else "memory"
        rows.append(
            CostRow(
                variant,
                phase,
                gi + 1,
                g.members,
                bound,
                flops,
                intra,
                inter_r,
                inter_w,
                t_comp,
                t_mem,
                t,
                t + lat,
            )
        )
        bindings.append(binding)
        t += lat
    report = CostReport(variant, phase, rows, bindings)
    read_b = sum(r.elements * config.element_size for r in plan.reads if r.counted)
    write_b = sum(
        (w.elements + w.surplus_elements) * config.element_size
        for w in plan.writes
        if w.counted or w.surplus_elements
    )
    report._rw_cache = (read_b, write_b)
    return report


def evaluate_variant(
    name: str,
    params: ParamSet,
    config: HardwareConfig,
    include_ideal: bool = True,
) -> CostReport:
    """Full cost report for one fusion variant of the builtin cascade,
    including the ideal bound (all inter-Einsum bytes zeroed)."""
    vp = build_variant(name, params, config)
    plan = variant_traffic(vp.cascade, vp.groups, vp.buffered_rereads)
    report = roofline(vp.cascade, vp.groups, plan, config, name, params.phase)
    report.warnings = vp.warnings + plan.warnings
    if include_ideal:
        report.ideal = roofline(
            vp.cascade, vp.groups, plan, config, name, params.phase, zero_inter=True
        )
    return report


# ---------------------------------------------------------------------------
# layer traffic split (the best-unfused table) and end-to-end scenarios


def traffic_split(params: ParamSet, config: HardwareConfig) -> dict:
    """Read/write and inter/intra shares of Best-Unfused layer traffic,
    with the per-consumer-reload sensitivity alongside."""
    vp = build_variant("unfused", params, config)
    plan = variant_traffic(vp.cascade, vp.groups, buffered_rereads=True)
    esize = config.element_size

    def tally(p: TrafficPlan) -> dict:
        read = sum(r.elements for r in p.reads if r.counted) * esize
        write = sum(w.elements for w in p.writes if w.counted) * esize
        intra = sum(r.elements for r in p.reads if r.counted and r.kind == "intra") * esize
        intra += sum(w.elements for w in p.writes if w.counted and w.kind == "intra") * esize
        total = read + write
        return {
            "read_bytes": read,
            "write_bytes": write,
            "total_bytes": total,
            "read_pct": 100.0 * read / total,
            "write_pct": 100.0 * write / total,
            "inter_pct": 100.0 * (total - intra) / total,
            "intra_pct": 100.0 * intra / total,
        }

    out = tally(plan)
    per_consumer = variant_traffic(vp.cascade, vp.groups, buffered_rereads=False)
    out["sensitivity"] = {
        "per_consumer_reload_read_pct": tally(per_consumer)["read_pct"],
        "note": "reloading shared tensors per consuming Einsum shifts the read share",
    }
    return out


@dataclass(frozen=True)
class Scenario:
    name: str
    prefill_tokens: int
    decode_steps: int


REFERENCE_SCENARIOS = (
    Scenario("large-context-short-generation", 2048, 64),
    Scenario("balanced", 512, 512),
    Scenario("small-context-long-generation", 64, 2048),
)


def end_to_end(
    params: ParamSet,
    config: HardwareConfig,
    scenarios: tuple[Scenario, ...] = REFERENCE_SCENARIOS,
    variants: tuple[str, ...] = VARIANTS,
) -> dict:
    """Per-scenario totals: L x prefill-layer latency + steps x L x
    decode-layer latency, with speedups over unfused and geomeans."""
    results: dict = {"scenarios": [], "geomean_speedup": {}}
    per_variant_speedups: dict[str, list[float]] = {v: [] for v in variants}
    for sc in scenarios:
        row: dict = {"scenario": sc.name, "prefill": sc.prefill_tokens, "decode": sc.decode_steps}
        totals = {}
        for v in variants:
            pre = replace(params, I=max(1, sc.prefill_tokens), phase="prefill")
            lat = params.L * evaluate_variant(v, pre, config, include_ideal=False).latency
            if sc.decode_steps > 0:
                dec = replace(params, I=1, phase="decode")
                lat += sc.decode_steps * params.L * evaluate_variant(
                    v, dec, config, include_ideal=False
                ).latency
            totals[v] = lat
        base = totals.get("unfused")
        row["latency_s"] = totals
        row["speedup"] = {v: (base / t if base else 1.0) for v, t in totals.items()}
        for v in variants:
            per_variant_speedups[v].append(row["speedup"][v])
        results["scenarios"].append(row)
    for v in variants:
        xs = per_variant_speedups[v]
        results["geomean_speedup"][v] = math.exp(sum(math.log(x) for x in xs) / len(xs))
    return results


def e2e_csv(results: dict) -> str:
    out = ["scenario,prefill_tokens,decode_steps,variant,latency_s,speedup_vs_unfused"]
    for row in results["scenarios"]:
        for v, lat in row["latency_s"].items():
            out.append(
                f"{row['scenario']},{row['prefill']},{row['decode']},{v},"
                f"{lat:.9e},{row['speedup'][v]:.4f}"
            )
    return "\n".join(out) + "\n"
