"""Reference execution of loop nests on dense double-precision tensors.

Runs are single-threaded and bit-deterministic for a given seed. Besides
producing outputs, a run collects an execution trace: unique backing-store
elements touched per (group, tensor, pass), statement visit counts,
trigger fires, and non-finite flags. Footprint measurement reuses the
schedule module's liveness dry-run.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fusion import FusionGroup, pass_partition
from .ir import (
    Access,
    Affine,
    Bin,
    Cascade,
    Const,
    ConstIndex,
    Diff,
    EinsumDecl,
    Un,
    apply_binary,
    apply_unary,
)
from .schedule import Comment, Loop, LoopNest, Stmt, measure_liveness


@dataclass
class TensorStore:
    arrays: dict[str, np.ndarray]
    seed: int = 0

    def copy(self) -> "TensorStore":
        return TensorStore({k: v.copy() for k, v in self.arrays.items()}, self.seed)


def _tensor_rng(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(name.encode())])


def synthesize(
    cascade: Cascade, seed: int, ranges: Optional[dict[str, tuple[float, float]]] = None
) -> TensorStore:
    """Seeded uniform(-1, 1) inputs; per-tensor ranges may override (the
    state-transition tensor is kept negative so the exp discretization
    stays well-conditioned)."""
    ranges = ranges or {}
    arrays: dict[str, np.ndarray] = {}
    for name in cascade.input_tensors():
        decl = cascade.tensors[name]
        if decl.concat_members:
            continue  # synthesized from members in the second pass
        shape = tuple(cascade.ranks[rn].extent for rn in decl.signature)
        lo, hi = ranges.get(name, (-1.0, 1.0))
        arrays[name] = _tensor_rng(seed, name).uniform(lo, hi, size=shape)
    # second pass: concatenations of already-synthesized members
    for name in cascade.input_tensors():
        decl = cascade.tensors[name]
        if not decl.concat_members:
            continue
        parts = []
        for member, extent in decl.concat_members:
            if member in arrays:
                parts.append(arrays[member])
            else:
                shape = list(cascade.ranks[rn].extent for rn in decl.signature)
                shape[decl.concat_axis] = extent
                lo, hi = ranges.get(member, (-1.0, 1.0))
                parts.append(_tensor_rng(seed, member).uniform(lo, hi, size=tuple(shape)))
        arrays[name] = np.concatenate(parts, axis=decl.concat_axis)
    return TensorStore(arrays, seed)


MAMBA_RANGES = {"A": (-1.0, -0.05)}


# ---------------------------------------------------------------------------
# trace


@dataclass
class ExecutionTrace:
    reads: dict = field(default_factory=dict)   # (group, tensor, pass) -> unique elements
    writes: dict = field(default_factory=dict)  # (group, tensor) -> unique elements
    stmt_visits: dict = field(default_factory=dict)
    trigger_fires: dict = field(default_factory=dict)  # tensor -> fires
    itf: dict = field(default_factory=dict)
    nonfinite: list = field(default_factory=list)

    def to_csv(self) -> str:
        rows = ["counter,group,tensor,detail,value"]
        for (g, t, p), v in sorted(self.reads.items()):
            rows.append(f"read_elems,{g},{t},pass{p},{v}")
        for (g, t), v in sorted(self.writes.items()):
            rows.append(f"write_elems,{g},{t},,{v}")
        for eid, v in sorted(self.stmt_visits.items()):
            rows.append(f"stmt_visits,,,E{eid},{v}")
        for t, v in sorted(self.trigger_fires.items()):
            rows.append(f"trigger_fires,,{t},,{v}")
        for t, v in sorted(self.itf.items()):
            rows.append(f"itf,,{t},,{v}")
        for t in self.nonfinite:
            rows.append(f"nonfinite,,{t},,1")
        return "\n".join(rows) + "\n"


# ---------------------------------------------------------------------------
# expression compilation


def _index_fn(ix) -> Callable:
    if isinstance(ix, ConstIndex):
        v = ix.value
        return lambda env: v
    if isinstance(ix, Diff):
        a, b = ix.var, ix.win
        return lambda env: env[a] - env[b]
    var, scale, off = ix.var, ix.scale, ix.offset
    if scale == 1 and off == 0:
        return lambda env: env[var]
    return lambda env: scale * env[var] + off


def _may_underflow(ix) -> bool:
    return isinstance(ix, Diff) or (isinstance(ix, (Affine, ConstIndex)) and getattr(ix, "offset", getattr(ix, "value", 0)) < 0)


class _Runner:
    def __init__(self, nest: LoopNest, cascade: Cascade, store: TensorStore, trace_traffic: bool = True):
        self.nest = nest
        self.cascade = cascade
        self.trace = ExecutionTrace()
        self.trace_traffic = trace_traffic
        self.arrays: dict[str, np.ndarray] = dict(store.arrays)
        self.boundary: dict[str, tuple[int, np.ndarray]] = {}
        for name, decl in cascade.tensors.items():
            if name not in self.arrays:
                shape = tuple(cascade.ranks[rn].extent for rn in decl.signature)
                self.arrays[name] = np.zeros(shape)
        self._passes = self._pass_maps()
        self._read_sets: dict = {}
        self._write_sets: dict = {}
        self._trigger_state: dict = {}
        self._prepare_inits()
        self._executors = {
            (s.eid, s.group): self._compile_stmt(s) for s in {(st.eid, st.group): st for st in nest.statements()}.values()
        }

    def _pass_maps(self):
        out: dict[tuple[int, str], int] = {}
        for g in self.nest.groups:
            tensors = {t for m in g.members for t in self.cascade.einsum(m).read_tensors()}
            for t in tensors:
                _count, part = pass_partition(self.cascade, g, t)
                for eid, p in part.items():
                    out[(eid, t)] = p
        return out

    def _prepare_inits(self) -> None:
        gen = self.cascade.generational_rank()
        for e in self.cascade.einsums:
            if e.init is None:
                continue
            target = e.init.target
            sig = self.cascade.tensors[target.tensor].signature
            gen_axis = next(
                (
                    ax
                    for ax, ix in enumerate(target.idx)
                    if isinstance(ix, ConstIndex) and gen is not None and sig[ax] == gen.name
                ),
                None,
            )
            body_fn = self._compile_expr(e.init.body, e, guard=True)
            var_axes = [
                (ax, ix.var) for ax, ix in enumerate(target.idx) if isinstance(ix, Affine)
            ]
            shape = tuple(self.cascade.ranks[sig[ax]].extent for ax, _v in var_axes)
            vals = np.zeros(shape if shape else ())
            env: dict[str, int] = {}

            def fill(d, idx):
                if d == len(var_axes):
                    vals[tuple(idx)] = body_fn(env)
                    return
                ax, var = var_axes[d]
                for v in range(self.cascade.ranks[sig[ax]].extent):
                    env[var] = v
                    fill(d + 1, idx + [v])

            fill(0, [])
            if gen_axis is not None and target.idx[gen_axis].value < 0:
                self.boundary[target.tensor] = (gen_axis, vals)
            else:
                coords = [slice(None)] * len(sig)
                for ax, ix in enumerate(target.idx):
                    if isinstance(ix, ConstIndex):
                        coords[ax] = ix.value
                arr = self.arrays[target.tensor]
                if vals.shape == ():
                    arr[tuple(coords)] = float(vals)
                else:
                    arr[tuple(coords)] = vals

    # -- compilation --------------------------------------------------------

    def _compile_expr(self, expr, e: EinsumDecl, guard: bool = False) -> Callable:
        if isinstance(expr, Const):
            v = expr.value
            return lambda env: v
        if isinstance(expr, Un):
            f = self._compile_expr(expr.x, e, guard)
            op = expr.op
            return lambda env: apply_unary(op, f(env))
        if isinstance(expr, Bin):
            fl = self._compile_expr(expr.lhs, e, guard)
            fr = self._compile_expr(expr.rhs, e, guard)
            op = expr.op
            return lambda env: apply_binary(op, fl(env), fr(env))
        return self._compile_read(expr, e)

    def _compile_read(self, a: Access, e: EinsumDecl) -> Callable:
        arr = self.arrays[a.tensor]
        sig = self.cascade.tensors[a.tensor].signature
        fns = [_index_fn(ix) for ix in a.idx]
        extents = [self.cascade.ranks[rn].extent for rn in sig]
        needs_guard = any(_may_underflow(ix) for ix in a.idx)
        tensor = a.tensor
        zero_ok = e.boundary == "zero"
        boundary = self.boundary
        counting = self.trace_traffic
        read_set = self._read_sets.setdefault((tensor, a, e.eid), set()) if counting else None

        if not needs_guard and not counting:
            return lambda env: arr[tuple(f(env) for f in fns)]

        def read(env):
            coords = tuple(f(env) for f in fns)
            if needs_guard:
                for k, c in enumerate(coords):
                    if c < 0 or c >= extents[k]:
                        b = boundary.get(tensor)
                        if b is not None and c == -1 and k == b[0]:
                            other = tuple(cc for kk, cc in enumerate(coords) if kk != k)
                            return float(b[1][other]) if b[1].shape != () else float(b[1])
                        if zero_ok:
                            return 0.0
                        raise IndexError(
                            f"einsum {e.eid}: access {a} out of range at {coords}"
                        )
            if counting:
                read_set.add(coords)
            return arr[coords]

        return read

    def _compile_stmt(self, s: Stmt) -> Callable:
        e = self.cascade.einsum(s.eid)
        arr = self.arrays[e.output.tensor]
        sig = self.cascade.tensors[e.output.tensor].signature
        extents = [self.cascade.ranks[rn].extent for rn in sig]
        out_fns = [_index_fn(ix) for ix in e.output.idx]
        may_overflow = any(
            isinstance(ix, Affine) and ix.offset > 0 for ix in e.output.idx
        )
        body = self._compile_expr(e.body, e)
        post = self._compile_expr(e.post, e) if e.post is not None else None
        red_vars = sorted(rn.lower() for rn in e.reduction_ranks)
        red_ext = {rn.lower(): self.cascade.ranks[rn].extent for rn in e.reduction_ranks}
        reduce = bool(e.reduction_ranks)
        counting = self.trace_traffic
        write_set = self._write_sets.setdefault((s.group, e.output.tensor), set()) if counting else None
        visits = self.trace.stmt_visits
        eid = s.eid
        watchers = [t for t in self.nest.triggers if t.tensor == e.output.tensor]
        trigger_state = self._trigger_state
        if watchers:
            spec = watchers[0]
            granule_axes = [k for k, rn in enumerate(sig) if rn in spec.granule_ranks]
            granule_vol = 1
            for ax in granule_axes:
                granule_vol *= extents[ax]
        else:
            spec = None

        def run(env):
            visits[eid] = visits.get(eid, 0) + 1
            coords = tuple(f(env) for f in out_fns)
            if may_overflow:
                for k, c in enumerate(coords):
                    if c >= extents[k] or c < 0:
                        return
            val = body(env)
            if reduce:
                arr[coords] += val
                final = all(env[v] == red_ext[v] - 1 for v in red_vars)
                if final and post is not None:
                    arr[coords] += post(env)
            else:
                arr[coords] = val
                if post is not None:
                    arr[coords] += post(env)
                final = True
            if counting:
                write_set.add(coords)
            if spec is not None and final:
                key = tuple(c for k, c in enumerate(coords) if k not in granule_axes)
                st = trigger_state.setdefault(spec.tensor, {})
                st[key] = st.get(key, 0) + 1
                if st[key] == granule_vol:
                    self.trace.trigger_fires[spec.tensor] = (
                        self.trace.trigger_fires.get(spec.tensor, 0) + 1
                    )

        return run

    # -- execution -----------------------------------------------------------

    def run(self) -> None:
        def walk(items, env):
            for it in items:
                if isinstance(it, Loop):
                    var = it.rank.lower()
                    for v in range(it.extent):
                        env[var] = v
                        walk(it.body, env)
                    env.pop(var, None)
                elif isinstance(it, Stmt):
                    self._executors[(it.eid, it.group)](env)

        walk(self.nest.roots, {})
        self._finalize()

    def _finalize(self) -> None:
        group_of = self.nest.group_of
        for (tensor, _a, eid), coords in self._read_sets.items():
            gi = group_of.get(eid, 0)
            p = self._passes.get((eid, tensor), 0)
            key = (gi, tensor, p)
            prev = self.trace.reads.get(key)
            if prev is None:
                self.trace.reads[key] = set(coords)
            else:
                prev.update(coords)
        self.trace.reads = {k: len(v) for k, v in self.trace.reads.items()}
        self.trace.writes = {k: len(v) for k, v in self._write_sets.items()}
        for name in sorted({self.cascade.einsum(s.eid).output.tensor for s in self.nest.statements()}):
            if not np.isfinite(self.arrays[name]).all():
                self.trace.nonfinite.append(name)


def run(
    nest: LoopNest,
    cascade: Cascade,
    store: TensorStore,
    trace_traffic: bool = True,
) -> tuple[TensorStore, ExecutionTrace]:
    r = _Runner(nest, cascade, store, trace_traffic)
    r.run()
    return TensorStore(r.arrays, store.seed), r.trace


def measure_itf(nest: LoopNest, cascade: Cascade) -> dict[str, int]:
    """Max live elements per group-internal intermediate (liveness spans
    first write to last in-group read)."""
    return measure_liveness(nest, cascade)


# ---------------------------------------------------------------------------
# comparisons


def max_rel_err(
    a: TensorStore, b: TensorStore, tensors: Optional[list[str]] = None
) -> float:
    names = tensors if tensors is not None else sorted(set(a.arrays) & set(b.arrays))
    worst = 0.0
    for n in names:
        x, y = a.arrays.get(n), b.arrays.get(n)
        if x is None or y is None or x.shape != y.shape:
            return float("inf")
        err = np.abs(x - y) / (np.abs(y) + 1e-300)
        if err.size:
            worst = max(worst, float(err.max()))
    return worst


# ---------------------------------------------------------------------------
# binary tensor dump (little-endian doubles with a small header)


def dump_tensor(name: str, arr: np.ndarray) -> bytes:
    head = name.encode()
    out = struct.pack("<I", len(head)) + head + struct.pack("<I", arr.ndim)
    for d in arr.shape:
        out += struct.pack("<Q", d)
    return out + arr.astype("<f8").tobytes()


def load_tensor(buf: bytes) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack_from("<I", buf, 0)
    name = buf[4 : 4 + nlen].decode()
    off = 4 + nlen
    (ndim,) = struct.unpack_from("<I", buf, off)
    off += 4
    shape = []
    for _ in range(ndim):
        (d,) = struct.unpack_from("<Q", buf, off)
        shape.append(d)
        off += 8
    arr = np.frombuffer(buf, dtype="<f8", offset=off).reshape(shape).copy()
    return name, arr
