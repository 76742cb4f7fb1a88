import random

import pytest

from einfuse.frontend import (
    ParamSet,
    build_mamba1,
    default_merge_groups,
    gemm_like_ids,
    make_params,
    mamba1_merged,
    merge_shared_inputs,
    parse,
)
from einfuse.ir import iteration_space, serialize, validate

from cascades import EQ1, FIG8


def fig8_cascade():
    r = parse(FIG8)
    assert r.ok, [str(d) for d in r.diagnostics]
    return r.cascade


class TestParse:
    def test_fig8_iteration_spaces(self):
        c = fig8_cascade()
        spaces = {e.eid: set(iteration_space(c, e)) for e in c.einsums}
        assert spaces == {
            1: {"M", "N", "K"},
            2: {"M", "N", "P"},
            3: {"M", "N", "P", "Q"},
            4: {"M", "N", "Q"},
            5: {"N"},
        }

    def test_empty_source(self):
        r = parse("")
        assert not r.ok
        assert any("no Einsums" in d.message for d in r.diagnostics)

    def test_eq1_generational(self):
        r = parse(EQ1)
        assert r.ok, [str(d) for d in r.diagnostics]
        c = r.cascade
        gen = c.generational_rank()
        assert gen is not None and gen.name == "I" and gen.extent == 5
        e = c.einsums[0]
        assert e.init is not None and e.stop == ("I", 5)

    @pytest.mark.parametrize("text", [FIG8, EQ1])
    def test_round_trip(self, text):
        first = parse(text)
        assert first.ok
        second = parse(serialize(first.cascade))
        assert second.ok, [str(d) for d in second.diagnostics]
        assert second.cascade == first.cascade

    def test_syntax_error_has_position(self):
        r = parse("einsum 1: Z[m] = A[m] *\n")
        assert not r.ok
        assert any(d.line == 1 for d in r.diagnostics)

    def test_parser_is_total_on_fuzz(self):
        rng = random.Random(7)
        bits = ["einsum", "tensor", "rank", ":", "[", "]", "(", ")", ",", "+=", "=",
                "*", "/", "+", "-", "Z", "m", "3", "exp", "#x", "\n", "init", "stop", "<=", "1.5"]
        for _ in range(300):
            txt = " ".join(rng.choice(bits) for _ in range(rng.randrange(0, 40)))
            parse(txt)  # must not raise


class TestMamba:
    def test_shape(self):
        c = build_mamba1(make_params("tiny"))
        assert len(c.einsums) == 24
        assert [d for d in validate(c) if d.severity == "error"] == []
        assert gemm_like_ids(c) == [7, 8, 11, 12, 13, 14, 24]

    def test_decode_has_unit_sequence(self):
        c = build_mamba1(make_params("tiny", phase="decode"))
        assert len(c.einsums) == 24
        assert c.ranks["I"].extent == 1

    def test_decode_requires_unit_i(self):
        with pytest.raises(ValueError):
            ParamSet(I=4, phase="decode")

    def test_presets(self):
        p = make_params("mamba-370m")
        assert (p.E, p.D, p.R, p.N, p.L) == (1024, 2048, 64, 16, 48)
        p = make_params("mamba-2.8b")
        assert (p.E, p.D, p.L) == (2560, 5120, 64)

    def test_property_sweep_validates(self):
        rng = random.Random(11)
        dims = [1, 2, 3, 5, 8]
        for _ in range(60):
            kw = {k: rng.choice(dims) for k in ("B", "I", "E", "D", "N", "R", "W")}
            c = build_mamba1(ParamSet(L=1, **kw))
            assert [d for d in validate(c) if d.severity == "error"] == []


class TestMerge:
    def test_merge_78_extent(self):
        params = make_params("tiny")
        m = mamba1_merged(params)
        assert not any(d.severity == "error" for d in m.diagnostics)
        c = m.cascade
        assert len(c.einsums) == 21
        tx_rx = next(mi for mi in m.merges if mi.member_eids == (7, 8))
        assert c.ranks[tx_rx.fused_rank].extent == 2 * params.D
        proj = next(mi for mi in m.merges if mi.member_eids == (11, 12, 13))
        assert c.ranks[proj.fused_rank].extent == 2 * params.N + params.R

    def test_merged_validates(self):
        m = mamba1_merged(make_params("tiny"))
        assert [d for d in validate(m.cascade) if d.severity == "error"] == []

    def test_singleton_is_identity(self):
        c = build_mamba1(make_params("tiny"))
        m = merge_shared_inputs(c, [[7]])
        assert m.cascade == c and m.merges == ()

    def test_ab_bb_stays_split_by_default(self):
        c = build_mamba1(make_params("tiny"))
        assert default_merge_groups(c, include_ab=True) == [[7, 8], [11, 12, 13]]

    def test_incompatible_group_leaves_cascade_unchanged(self):
        c = build_mamba1(make_params("tiny"))
        m = merge_shared_inputs(c, [[16, 17]])
        assert m.cascade == c
        assert any("incompatible" in d.message for d in m.diagnostics)

    def test_merged_gemm_detection(self):
        m = mamba1_merged(make_params("tiny"))
        ids = gemm_like_ids(m.cascade)
        assert 7 in ids and 11 in ids and 14 in ids and 24 in ids
