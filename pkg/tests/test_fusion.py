import random

import pytest

from einfuse.frontend import build_mamba1, make_params, mamba1_merged, parse
from einfuse.fusion import (
    ChainRel,
    FusionClass,
    StitchPolicy,
    chain_rel,
    classify_pair,
    classify_spaces,
    fusion_plan,
    greedy_stitch,
    handle_generational,
    pass_count,
    recurrent_tensors,
    stationary_ranks,
)
from einfuse.ir import (
    Access,
    Affine,
    Bin,
    Cascade,
    EinsumDecl,
    RankDecl,
    TensorDecl,
    iteration_space,
)

from cascades import FIG4_RI, FIG5_RSB, FIG6_RSP, FIG7_RD, FIG8, load

POLICIES = [
    StitchPolicy.RI_ONLY,
    StitchPolicy.RI_RSB,
    StitchPolicy.RI_RSB_RSP,
    StitchPolicy.FULLY_FUSED,
]


class TestClassify:
    @pytest.mark.parametrize(
        "text,want",
        [
            (FIG4_RI, FusionClass.RI),
            (FIG5_RSB, FusionClass.RSB),
            (FIG6_RSP, FusionClass.RSP),
            (FIG7_RD, FusionClass.RD),
        ],
    )
    def test_paper_pairs(self, text, want):
        c = load(text)
        assert classify_pair(c.einsums[0], c.einsums[1], c) is want

    def test_not_adjacent(self):
        c = load(FIG8)
        assert classify_pair(c.einsum(1), c.einsum(4), c) is FusionClass.NOT_ADJACENT

    def test_swap_symmetry(self):
        rng = random.Random(3)
        pool = ["M", "N", "K", "P", "Q"]
        fixed = {FusionClass.RI: FusionClass.RI, FusionClass.RD: FusionClass.RD,
                 FusionClass.RSB: FusionClass.RSP, FusionClass.RSP: FusionClass.RSB}
        for _ in range(200):
            up = set(rng.sample(pool, rng.randrange(1, 5)))
            dwn = set(rng.sample(pool, rng.randrange(1, 5)))
            assert classify_spaces(dwn, up) is fixed[classify_spaces(up, dwn)]


# ---------------------------------------------------------------------------
# independent transcription of the greedy recursion, used as an oracle

_GATES = {
    StitchPolicy.RI_ONLY: ({"RI"}, {"RI"}, {"equal"}),
    StitchPolicy.RI_RSB: ({"RI", "RSb"}, {"RI", "RSb"}, {"equal", "subset"}),
    StitchPolicy.RI_RSB_RSP: (
        {"RI", "RSb", "RSp", "RD"},
        {"RI", "RSb", "RSp"},
        {"equal", "subset", "superset"},
    ),
    StitchPolicy.FULLY_FUSED: (
        {"RI", "RSb", "RSp", "RD"},
        {"RI", "RSb", "RSp"},
        {"equal", "subset", "superset"},
    ),
}


def oracle_groups(cascade, policy):
    seeds, admits, conds = _GATES[policy]
    es = list(cascade.einsums)
    spaces = [set(iteration_space(cascade, e)) for e in es]
    touched = [set(e.read_tensors()) | {e.output.tensor} for e in es]

    def cls(a, b):
        if spaces[a] == spaces[b]:
            return "RI"
        if spaces[a] > spaces[b]:
            return "RSb"
        if spaces[a] < spaces[b]:
            return "RSp"
        return "RD"

    def rel(prev, curr):
        if prev == curr:
            return "equal"
        if curr < prev:
            return "subset"
        if curr > prev:
            return "superset"
        return "incomparable"

    def recurse(start):
        if start >= len(es):
            return []
        if start == len(es) - 1:
            return [(es[start].eid,)]
        a, b = start, start + 1
        if not (touched[a] & touched[b]) or cls(a, b) not in seeds:
            return [(es[a].eid,)] + recurse(start + 1)
        group = [a, b]
        gt = touched[a] | touched[b]
        i_prev = spaces[a] & spaces[b]
        i = start + 2
        while i < len(es):
            i_curr = spaces[i - 1] & spaces[i]
            if (
                (gt & touched[i])
                and cls(i - 1, i) in admits
                and rel(i_prev, i_curr) in conds
            ):
                group.append(i)
                gt |= touched[i]
                i_prev = i_curr
                i += 1
            else:
                return [tuple(es[k].eid for k in group)] + recurse(i)
        return [tuple(es[k].eid for k in group)]

    result = recurse(0)
    if policy is StitchPolicy.FULLY_FUSED:
        # bridge adjacent groups whose seam is rank-disjoint (by pair class
        # or by the failed intersection chain) and connected by a tensor
        pos = {e.eid: k for k, e in enumerate(es)}
        merged = [result[0]]
        for grp in result[1:]:
            up, dwn = merged[-1][-1], grp[0]
            u, d = pos[up], pos[dwn]
            up_out = cascade.einsum(up).output.tensor
            chain_broke = False
            if len(merged[-1]) >= 2:
                last_prev = spaces[pos[merged[-1][-2]]] & spaces[u]
                seam = spaces[u] & spaces[d]
                chain_broke = rel(last_prev, seam) == "incomparable"
            if (cls(u, d) == "RD" or chain_broke) and up_out in cascade.einsum(
                dwn
            ).read_tensors():
                merged[-1] = merged[-1] + grp
            else:
                merged.append(grp)
        result = merged
    return result


def random_chain_cascade(rng: random.Random):
    nranks = rng.randrange(2, 6)
    names = ["M", "N", "K", "P", "Q"][:nranks]
    ranks = {n: RankDecl(n, rng.randrange(2, 5)) for n in names}
    tensors = {}
    einsums = []
    n_es = rng.randrange(2, 13)
    prev_out = None
    outputs = []
    for k in range(1, n_es + 1):
        out_ranks = rng.sample(names, rng.randrange(1, nranks + 1))
        reads = []
        if prev_out is not None:
            reads.append(prev_out)
        if outputs and rng.random() < 0.3:
            reads.append(rng.choice(outputs))
        in_name = f"IN{k}"
        in_ranks = rng.sample(names, rng.randrange(1, nranks + 1))
        tensors[in_name] = TensorDecl(in_name, tuple(sorted(in_ranks)))
        reads.append(in_name)
        out_name = f"T{k}"
        tensors[out_name] = TensorDecl(out_name, tuple(sorted(out_ranks)))
        body = None
        space = set(out_ranks)
        for rt in reads:
            acc = Access(rt, tuple(Affine(rn.lower()) for rn in tensors[rt].signature))
            space |= set(tensors[rt].signature)
            body = acc if body is None else Bin("mul", body, acc)
        red = frozenset(space - set(out_ranks))
        einsums.append(
            EinsumDecl(
                k,
                Access(out_name, tuple(Affine(rn.lower()) for rn in tensors[out_name].signature)),
                body,
                red,
            )
        )
        prev_out = out_name
        outputs.append(out_name)
    return Cascade(ranks, tensors, tuple(einsums))


class TestStitch:
    def test_fig8_full_algorithm(self):
        c = load(FIG8)
        groups = greedy_stitch(c, StitchPolicy.RI_RSB_RSP)
        assert [g.members for g in groups] == [(1, 2, 3), (4, 5)]
        assert groups[0].intersection_chain() == [("M", "N"), ("M", "N", "P")]
        assert groups[1].intersection_chain() == [("N",)]

    def test_fig8_stationary(self):
        c = load(FIG8)
        g1, g2 = greedy_stitch(c, StitchPolicy.RI_RSB_RSP)
        assert set(stationary_ranks(c, g1)) == {"M", "N"}
        assert stationary_ranks(c, g2) == ("N",)

    def test_singleton_stationary_is_output_ranks(self):
        c = load(FIG8)
        groups = greedy_stitch(c, StitchPolicy.RI_ONLY)
        solo = next(g for g in groups if g.members == (1,))
        assert set(stationary_ranks(c, solo)) == {"M", "N"}

    @pytest.mark.parametrize(
        "policy,count",
        [
            (StitchPolicy.RI_ONLY, 12),
            (StitchPolicy.RI_RSB, 8),
            (StitchPolicy.RI_RSB_RSP, 3),
            (StitchPolicy.FULLY_FUSED, 1),
        ],
    )
    def test_mamba_group_counts(self, policy, count):
        c = mamba1_merged(make_params("tiny")).cascade
        assert len(greedy_stitch(c, policy)) == count

    def test_mamba_ri_groups_exact(self):
        c = mamba1_merged(make_params("tiny")).cascade
        groups = [g.members for g in greedy_stitch(c, StitchPolicy.RI_ONLY)]
        assert (16, 17, 18, 19, 20, 21) in groups
        assert (1, 2, 3) in groups and (22, 23) in groups

    def test_mamba_rsb_fuses_ssm_with_postprocessing(self):
        c = mamba1_merged(make_params("tiny")).cascade
        groups = [g.members for g in greedy_stitch(c, StitchPolicy.RI_RSB)]
        assert (16, 17, 18, 19, 20, 21, 22, 23) in groups

    def test_mamba_full_three_groups(self):
        c = mamba1_merged(make_params("tiny")).cascade
        groups = greedy_stitch(c, StitchPolicy.RI_RSB_RSP)
        assert [g.members for g in groups] == [
            (1, 2, 3, 4, 5, 6, 7),
            (9, 10, 11),
            (14, 15, 16, 17, 18, 19, 20, 21, 22, 23, 24),
        ]

    def test_mamba_fully_fused_bridges(self):
        c = mamba1_merged(make_params("tiny")).cascade
        (g,) = greedy_stitch(c, StitchPolicy.FULLY_FUSED)
        bridged = {b.tensor for b in g.bridges}
        assert bridged == {"TXRX", "XBXCTTD"}
        for b in g.bridges:
            assert g.residency[b.tensor].state == "spilled"
            assert g.residency[b.tensor].trigger

    def test_two_independent_einsums(self):
        text = """\
tensor A : M(2), N(2)
tensor Z : M(2), N(2)
tensor B : M(2), N(2)
tensor Y : M(2), N(2)
einsum 1: Z[m, n] = exp(A[m, n])
einsum 2: Y[m, n] = exp(B[m, n])
"""
        c = load(text)
        groups = greedy_stitch(c, StitchPolicy.FULLY_FUSED)
        assert [g.members for g in groups] == [(1,), (2,)]

    def test_single_einsum_cascade(self):
        c = load(FIG5_RSB.split("einsum 2")[0] + "\n")
        assert [g.members for g in greedy_stitch(c, StitchPolicy.RI_ONLY)] == [(1,)]

    @pytest.mark.parametrize("policy", POLICIES)
    def test_oracle_conformance_small(self, policy):
        rng = random.Random(1234)
        for _ in range(300):
            c = random_chain_cascade(rng)
            if len(c.einsums) > 6:
                continue
            got = [g.members for g in greedy_stitch(c, policy)]
            assert got == oracle_groups(c, policy)

    def test_policy_nesting_and_determinism(self):
        rng = random.Random(99)
        for _ in range(300):
            c = random_chain_cascade(rng)
            counts = []
            for policy in POLICIES:
                g1 = greedy_stitch(c, policy)
                g2 = greedy_stitch(c, policy)
                assert [g.members for g in g1] == [g.members for g in g2]
                counts.append(len(g1))
            assert counts[0] >= counts[1] >= counts[2] >= counts[3]


class TestResidency:
    def test_x_and_lex_multipass_in_fully_fused(self):
        c = mamba1_merged(make_params("tiny")).cascade
        (g,) = greedy_stitch(c, StitchPolicy.FULLY_FUSED)
        assert g.residency["X"].state == "multi-pass" and g.residency["X"].passes == 2
        assert g.residency["LEX"].state == "multi-pass" and g.residency["LEX"].passes == 2

    def test_merged_txrx_single_pass(self):
        c = mamba1_merged(make_params("tiny")).cascade
        (g,) = greedy_stitch(c, StitchPolicy.FULLY_FUSED)
        assert pass_count(c, g, "TXRX") == 1  # TX and RX halves are disjoint slices

    def test_fused_intermediates_stay_on_chip(self):
        c = mamba1_merged(make_params("tiny")).cascade
        groups = greedy_stitch(c, StitchPolicy.RI_ONLY)
        ssm = next(g for g in groups if 19 in g.members)
        for t in ("AB", "BB", "BX", "HH", "H"):
            assert ssm.residency[t].state == "on-chip-unit"

    def test_rx_spills_out_of_group(self):
        c = mamba1_merged(make_params("tiny")).cascade
        groups = greedy_stitch(c, StitchPolicy.RI_RSB_RSP)
        g1 = groups[0]
        assert g1.residency["TXRX"].state == "spilled"


class TestGenerational:
    def ssm_group(self):
        c = mamba1_merged(make_params("tiny")).cascade
        groups = greedy_stitch(c, StitchPolicy.RI_ONLY)
        return c, next(g for g in groups if 19 in g.members)

    def test_unit_when_fully_partitioned(self):
        c, g = self.ssm_group()
        out, diags = handle_generational(c, g, 1)
        assert out.gen.state == "unit" and out.gen.slab_elems == 1

    def test_tile_when_i_stationary(self):
        c, g = self.ssm_group()
        p = make_params("tiny")
        out, _ = handle_generational(c, g, p.I)
        assert out.gen.state == "tile"
        assert out.gen.slab_elems == p.B * p.D * p.N

    def test_decode_is_unit(self):
        c = mamba1_merged(make_params("tiny", phase="decode")).cascade
        groups = greedy_stitch(c, StitchPolicy.RI_ONLY)
        g = next(g for g in groups if 19 in g.members)
        out, _ = handle_generational(c, g, 1)
        assert out.gen.state == "unit"

    def test_clamp_warns(self):
        c, g = self.ssm_group()
        out, diags = handle_generational(c, g, 10_000)
        assert any("clamped" in d.message for d in diags)
        assert out.gen.tile_i == make_params("tiny").I

    def test_recurrent_tensor_found(self):
        c, g = self.ssm_group()
        assert recurrent_tensors(c, g) == ["H"]


def test_fusion_plan_report():
    c = mamba1_merged(make_params("tiny")).cascade
    plan = fusion_plan(c, greedy_stitch(c, StitchPolicy.RI_RSB_RSP))
    assert plan["group_count"] == 3
    assert plan["groups"][0]["einsums"][0] == 1
    # the x-projection consumer reads two producers; surfaced in the report
    assert any(n["einsum"] == 17 for n in plan["multi_producer_consumers"])
