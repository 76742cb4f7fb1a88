"""Acceptance suite: one test per criterion, one printed verdict line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""
import math
import random
import time

import numpy as np
import pytest

from einfuse.cost import (
    VARIANTS,
    HardwareConfig,
    evaluate_variant,
    traffic_split,
)
from einfuse.frontend import build_mamba1, make_params, mamba1_merged
from einfuse.fusion import StitchPolicy, greedy_stitch, stationary_ranks
from einfuse.interp import MAMBA_RANGES, max_rel_err, measure_itf, run, synthesize
from einfuse.schedule import check_stationarity, lower, lower_variant, unfused_schedule

from cascades import FIG4_RI, FIG5_RSB, FIG6_RSP, FIG7_RD, FIG8, load
from mamba_oracle import mamba1_layer
from test_fusion import random_chain_cascade

CFG = HardwareConfig()
P370 = make_params("mamba-370m", B=64, I=2048)
PDEC = make_params("mamba-370m", B=64, phase="decode")
TINY_KW = dict(B=2, I=8, E=8, D=16, N=4, R=4, W=4)
POLICY_VARIANTS = ("ri", "ri-rsb", "ri-rsb-rsp", "fully-fused")


def verdict(num: int, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")
    assert ok, f"criterion {num}: {detail}"


def test_criterion_1_fig8_golden():
    t0 = time.perf_counter()
    c = load(FIG8)
    groups = greedy_stitch(c, StitchPolicy.RI_RSB_RSP)
    ok = [g.members for g in groups] == [(1, 2, 3), (4, 5)]
    chains = [g.intersection_chain() for g in groups]
    ok &= chains[0] == [("M", "N"), ("M", "N", "P")] and chains[1] == [("N",)]
    dt = time.perf_counter() - t0
    ok &= dt < 1.0
    verdict(1, ok, f"groups {[g.members for g in groups]}, chains {chains}, {dt:.3f}s")


def test_criterion_2_mamba_group_counts():
    t0 = time.perf_counter()
    c = mamba1_merged(make_params(**TINY_KW)).cascade
    counts = [
        len(greedy_stitch(c, p))
        for p in (
            StitchPolicy.RI_ONLY,
            StitchPolicy.RI_RSB,
            StitchPolicy.RI_RSB_RSP,
            StitchPolicy.FULLY_FUSED,
        )
    ]
    dt = time.perf_counter() - t0
    ok = counts == [12, 8, 3, 1] and dt < 1.0
    verdict(2, ok, f"group counts {counts} (want [12, 8, 3, 1]), {dt:.3f}s")


def test_criterion_3_itf_suite():
    t0 = time.perf_counter()
    ok = True
    details = []
    for text, name in ((FIG4_RI, "RI"), (FIG5_RSB, "RSb"), (FIG6_RSP, "RSp"), (FIG7_RD, "RD")):
        c = load(text)
        (g,) = greedy_stitch(c, StitchPolicy.RI_RSB_RSP)
        itf = measure_itf(lower(c, g), c)["Z"]
        details.append(f"{name}={itf}")
        ok &= itf == 1
    c = load(FIG5_RSB)
    (g,) = greedy_stitch(c, StitchPolicy.RI_RSB_RSP)
    forced = lower(c, g, stationary_order=("K", "M"), force=True)
    m_fiber = measure_itf(forced, c)["Z"]
    ok &= m_fiber == c.ranks["M"].extent
    dt = time.perf_counter() - t0
    ok &= dt < 10.0
    verdict(3, ok, f"fused ITF {{{', '.join(details)}}}, forced-KM ITF={m_fiber} (=M), {dt:.3f}s")


def test_criterion_4_oracle_equivalence():
    t0 = time.perf_counter()
    params = make_params(**TINY_KW)
    plain = build_mamba1(params)
    store = synthesize(plain, seed=2024, ranges=MAMBA_RANGES)
    unfused_out, _ = run(unfused_schedule(plain), plain, store.copy(), trace_traffic=False)
    oracle = mamba1_layer(store.arrays, W=params.W)
    worst_oracle = max(
        float(
            (np.abs(unfused_out.arrays[n] - oracle[n]) / (np.abs(oracle[n]) + 1e-300)).max()
        )
        for n in ("H", "S", "Y", "O")
    )

    merged = mamba1_merged(params).cascade
    mstore = synthesize(merged, seed=2024, ranges=MAMBA_RANGES)
    ref, _ = run(unfused_schedule(merged), merged, mstore.copy(), trace_traffic=False)
    worst_fused = 0.0
    for policy in StitchPolicy:
        nest = lower_variant(merged, greedy_stitch(merged, policy), label=policy.value)
        got, _ = run(nest, merged, mstore.copy(), trace_traffic=False)
        worst_fused = max(worst_fused, max_rel_err(got, ref))
    dt = time.perf_counter() - t0
    ok = worst_oracle <= 1e-10 and worst_fused <= 1e-10 and dt < 60.0
    verdict(
        4,
        ok,
        f"oracle err {worst_oracle:.2e}, fused-vs-unfused err {worst_fused:.2e} "
        f"(tol 1e-10), {dt:.1f}s",
    )


def test_criterion_5_traffic_split():
    t0 = time.perf_counter()
    ts = traffic_split(P370, CFG)
    dt = time.perf_counter() - t0
    ok = abs(ts["inter_pct"] - 99.1) <= 1.5 and abs(ts["read_pct"] - 47.3) <= 3.0 and dt < 5.0
    verdict(
        5,
        ok,
        f"inter {ts['inter_pct']:.2f}% (99.1±1.5), read {ts['read_pct']:.2f}% (47.3±3); "
        f"per-consumer-reload sensitivity {ts['sensitivity']['per_consumer_reload_read_pct']:.2f}%, {dt:.2f}s",
    )


def test_criterion_6_ideal_fusion_bound():
    t0 = time.perf_counter()
    pre = evaluate_variant("unfused", P370, CFG)
    dec = evaluate_variant("unfused", PDEC, CFG)
    s_pre = pre.latency / pre.ideal.latency
    s_dec = dec.latency / dec.ideal.latency
    dt = time.perf_counter() - t0
    ok = abs(s_pre - 5.79) <= 0.15 * 5.79 and abs(s_dec - 3.8) <= 0.15 * 3.8 and dt < 5.0
    verdict(6, ok, f"ideal speedup prefill {s_pre:.2f}x (5.79±15%), decode {s_dec:.2f}x (3.8±15%), {dt:.2f}s")


def test_criterion_7_variant_ordering():
    base = evaluate_variant("unfused", P370, CFG, include_ideal=False).latency
    speedups = [
        base / evaluate_variant(v, P370, CFG, include_ideal=False).latency
        for v in POLICY_VARIANTS
    ]
    increasing = all(a < b for a, b in zip(speedups, speedups[1:]))
    targets = (2.72, 2.99, 3.35, 4.9)
    in_band = [abs(s - t) <= 0.2 * t for s, t in zip(speedups, targets)]
    band_note = ", ".join(
        f"{v}={s:.2f}{'' if b else '!'}" for v, s, b in zip(POLICY_VARIANTS, speedups, in_band)
    )
    if not all(in_band):
        print(
            "[NOTE] criterion 7: ±20% band (soft) missed without the authors' "
            f"mapper; targets {targets}, got {tuple(round(s, 2) for s in speedups)}"
        )
    verdict(7, increasing, f"strictly increasing (hard) {increasing}; speedups {band_note} (! = outside soft band)")


def test_criterion_8_baseline_deltas():
    t0 = time.perf_counter()
    pre = {v: evaluate_variant(v, P370, CFG, include_ideal=False).latency for v in VARIANTS}
    dec = {v: evaluate_variant(v, PDEC, CFG, include_ideal=False).latency for v in VARIANTS}
    ff_vs_marca = pre["marca"] / pre["fully-fused"]
    ff_vs_geens = pre["geens"] / pre["fully-fused"]
    best_dec = min(dec[v] for v in POLICY_VARIANTS)
    dec_vs_marca = dec["marca"] / best_dec
    dt = time.perf_counter() - t0
    ok = ff_vs_marca >= 4.0 and ff_vs_geens >= 1.3 and dec_vs_marca >= 1.5 and dt < 10.0
    verdict(
        8,
        ok,
        f"prefill FF/MARCA-like {ff_vs_marca:.2f}x (>=4), FF/Geens-like {ff_vs_geens:.2f}x (>=1.3), "
        f"decode best/MARCA-like {dec_vs_marca:.2f}x (>=1.5), {dt:.2f}s",
    )


def test_criterion_9_traffic_reduction():
    t0 = time.perf_counter()
    ratios = []
    ok = True
    for params in (P370, PDEC):
        base = evaluate_variant("unfused", params, CFG, include_ideal=False).bytes_inter
        for v in POLICY_VARIANTS:
            r = base / evaluate_variant(v, params, CFG, include_ideal=False).bytes_inter
            ratios.append(round(r, 1))
            ok &= r >= 4.0
    dt = time.perf_counter() - t0
    ok &= dt < 5.0
    verdict(9, ok, f"inter-traffic reductions {ratios} (all >= 4x), {dt:.2f}s")


def test_criterion_10_property_corpus():
    t0 = time.perf_counter()
    rng = random.Random(20240809)
    policies = list(StitchPolicy)
    cascades = [random_chain_cascade(rng) for _ in range(1000)]

    mono = determ = checked = 0
    for c in cascades:
        counts = []
        for p in policies:
            g1 = greedy_stitch(c, p)
            g2 = greedy_stitch(c, p)
            assert [g.members for g in g1] == [g.members for g in g2]
            counts.append(len(g1))
            nest = lower_variant(c, g1)
            assert check_stationarity(nest, c) == [], (p, [g.members for g in g1])
            checked += 1
        determ += 1
        assert counts[0] >= counts[1] >= counts[2] >= counts[3], counts
        mono += 1

    sample = cascades[::20][:50]
    eq = 0
    for c in sample:
        store = synthesize(c, seed=77)
        ref, _ = run(unfused_schedule(c), c, store.copy(), trace_traffic=False)
        for p in policies:
            nest = lower_variant(c, greedy_stitch(c, p))
            got, _ = run(nest, c, store.copy(), trace_traffic=False)
            assert max_rel_err(got, ref) <= 1e-10
        eq += 1

    dt = time.perf_counter() - t0
    ok = mono == 1000 and eq == len(sample) and dt < 300.0
    verdict(
        10,
        ok,
        f"{mono}/1000 cascades monotone+deterministic, {checked} nests pass the checker, "
        f"{eq}-cascade equivalence subsample, {dt:.1f}s",
    )
