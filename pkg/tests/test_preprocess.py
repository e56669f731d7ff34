import random

import pytest

from cjmap.enumeration import brute_force_oracle, enumerate_mappings
from cjmap.errors import (
    DanglingId,
    MissingFeerate,
    OverlappingGroups,
    UnknownDesign,
    ValueUnderflow,
)
from cjmap.model import coinjoin_from_values
from cjmap.preprocess import (
    Knowledge,
    apply_knowledge,
    build_policy,
    normalize_fees,
)
from helpers import make_ntx, numeric_as_dict, random_instance


def test_wasabi2_policy_defaults():
    pol = build_policy("wasabi2", {"feerate": 10, "min_out": 5000, "margin": 500})
    assert pol.coordination_rate_ppm == 3000
    assert pol.coordination_floor == 1_000_000
    assert pol.remix_exempt
    assert (pol.residual_min, pol.residual_max) == (0, 5500)
    assert pol.mining_feerate == 10


def test_whirlpool_policy_window_zero():
    pol = build_policy("whirlpool", {})
    assert (pol.residual_min, pol.residual_max) == (0, 0)
    assert pol.coordination_rate_ppm == 0  # coordination is paid in the pre-mix tx


def test_generic_zero_policy():
    pol = build_policy("generic", {"feerate": 0})
    assert (pol.residual_min, pol.residual_max) == (0, 0)
    assert pol.mining_feerate == 0


def test_unknown_design():
    with pytest.raises(UnknownDesign):
        build_policy("mystery", {})


def test_wasabi_needs_feerate():
    with pytest.raises(MissingFeerate):
        build_policy("wasabi2", {})
    with pytest.raises(MissingFeerate):
        build_policy("wasabi1", {})


def test_joinmarket_window_negative():
    pol = build_policy("joinmarket", {"maker_fee_max": 700, "taker_fee_max": 9000})
    assert (pol.residual_min, pol.residual_max) == (-700, 9000)


def test_wasabi2_fresh_input_coordination():
    pol = build_policy("wasabi2", {"feerate": 0})
    tx = coinjoin_from_values([2_000_000], [1_994_000])
    ntx = normalize_fees(tx, pol)
    assert ntx.base.inputs[0].value == 1_994_000  # 0.3% of 2_000_000 removed


def test_wasabi2_remix_input_free():
    pol = build_policy("wasabi2", {"feerate": 0})
    tx = coinjoin_from_values([2_000_000], [2_000_000], input_origins=["remix"])
    ntx = normalize_fees(tx, pol)
    assert ntx.base.inputs[0].value == 2_000_000


def test_wasabi2_below_floor_free():
    pol = build_policy("wasabi2", {"feerate": 0})
    tx = coinjoin_from_values([900_000], [900_000])
    assert normalize_fees(tx, pol).base.inputs[0].value == 900_000


def test_generic_zero_policy_is_identity(fig1):
    ntx = normalize_fees(fig1, build_policy("generic"))
    assert ntx.base.input_values == fig1.input_values
    assert ntx.base.output_values == fig1.output_values
    assert set(ntx.provenance) == {c.id for c in fig1.inputs + fig1.outputs}


def test_whirlpool_fresh_premium():
    pol = build_policy("whirlpool", {"feerate": 5})
    premium = 5 * (pol.input_vsize + pol.output_vsize)
    tx = coinjoin_from_values(
        [1_000_000 + premium, 1_000_000], [1_000_000, 1_000_000],
        input_origins=["fresh", "remix"])
    ntx = normalize_fees(tx, pol)
    assert ntx.base.input_values == (1_000_000, 1_000_000)
    assert ntx.base.output_values == (1_000_000, 1_000_000)


def test_value_underflow():
    pol = build_policy("wasabi2", {"feerate": 100})
    tx = coinjoin_from_values([5000, 2_000_000], [1_990_000])
    with pytest.raises(ValueUnderflow):
        normalize_fees(tx, pol)


def test_merge_same_owner_inputs(fig1):
    ntx = normalize_fees(fig1, build_policy("generic"))
    k = Knowledge.build(input_groups=[{"i2", "i3"}])
    out = apply_knowledge(ntx, k)
    assert sorted(out.base.input_values) == [6, 6, 8]
    merged = next(c for c in out.base.inputs if c.value == 6 and "+" in c.id)
    assert set(out.provenance[merged.id]) == {"i2", "i3"}


def test_linked_pair_differences(fig1):
    ntx = normalize_fees(fig1, build_policy("generic"))
    # input 8 linked with output 6: input shrinks to 2, output removed
    out = apply_knowledge(ntx, Knowledge.build(linked=[("i0", "o0")]))
    assert sorted(out.base.input_values) == [2, 3, 3, 6]
    assert sorted(out.base.output_values) == [2, 2, 4, 6]
    assert "o0" not in out.provenance


def test_linked_pair_equal_removes_both():
    ntx = make_ntx([5, 4], [5, 4])
    out = apply_knowledge(ntx, Knowledge.build(linked=[("i0", "o0")]))
    assert out.base.input_values == (4,)
    assert out.base.output_values == (4,)


def test_empty_knowledge_identity(fig1_ntx):
    out = apply_knowledge(fig1_ntx, Knowledge())
    assert out.base == fig1_ntx.base
    assert out.provenance == fig1_ntx.provenance


def test_overlapping_groups_rejected(fig1_ntx):
    k = Knowledge.build(input_groups=[{"i0", "i1"}, {"i1", "i2"}])
    with pytest.raises(OverlappingGroups):
        apply_knowledge(fig1_ntx, k)


def test_dangling_id_rejected(fig1_ntx):
    with pytest.raises(DanglingId):
        apply_knowledge(fig1_ntx, Knowledge.build(input_groups=[{"zz"}]))
    with pytest.raises(DanglingId):
        apply_knowledge(fig1_ntx, Knowledge.build(linked=[("i0", "zz")]))


def test_knowledge_never_grows(fig1_ntx):
    rng = random.Random(2)
    for _ in range(10):
        groups = [set(rng.sample(["i0", "i1", "i2", "i3"], 2))]
        out = apply_knowledge(fig1_ntx, Knowledge.build(input_groups=groups))
        assert out.base.size <= fig1_ntx.base.size


def test_distinct_pairs_recorded(fig1_ntx):
    out = apply_knowledge(
        fig1_ntx, Knowledge.build(distinct=[("i0", "i1")]))
    assert out.distinct_pairs == (("i0", "i1"),)


def test_existing_distinct_pairs_follow_removals():
    # a linked-pair cancellation removes a coin referenced by an earlier
    # distinct pair; the stale pair must be dropped, not carried through
    ntx = make_ntx([5, 4], [5, 4], distinct_pairs=(("i0", "o1"),))
    out = apply_knowledge(ntx, Knowledge.build(linked=[("i0", "o0")]))
    assert out.distinct_pairs == ()
    assert brute_force_oracle(out).total_concrete == 1


def test_existing_distinct_pairs_follow_merges():
    ntx = make_ntx([4, 2, 2], [4, 4], distinct_pairs=(("i1", "o0"),))
    out = apply_knowledge(ntx, Knowledge.build(input_groups=[{"i1", "i2"}]))
    merged = next(c.id for c in out.base.inputs if "+" in c.id)
    assert out.distinct_pairs == ((merged, "o0"),)


def test_merge_then_enumerate_equals_filtered_enumeration():
    # merging a same-owner group = enumerating first, then keeping mappings
    # where the group shares a sub-mapping, modulo the value collapse
    ntx = make_ntx([4, 2, 2, 6], [6, 4, 4])
    merged = apply_knowledge(ntx, Knowledge.build(input_groups=[{"i1", "i2"}]))
    merged_oracle = brute_force_oracle(merged)

    plain = brute_force_oracle(ntx)
    kept = []
    for m in plain.concrete_mappings:
        for sm in m:
            if "i1" in sm.input_ids:
                if "i2" in sm.input_ids:
                    kept.append(m)
                break
    # rename {i1,i2} -> merged coin and compare concrete sets
    merged_id = next(c.id for c in merged.base.inputs if "+" in c.id)

    def rename(m):
        subs = []
        for sm in m:
            ids = set(sm.input_ids)
            if "i1" in ids:
                ids -= {"i1", "i2"}
                ids.add(merged_id)
            subs.append((frozenset(ids), sm.output_ids))
        return frozenset(subs)

    lhs = {rename(m) for m in kept}
    rhs = {frozenset((sm.input_ids, sm.output_ids) for sm in m)
           for m in merged_oracle.concrete_mappings}
    assert lhs == rhs


def test_knowledge_then_enumerate_matches_oracle():
    # applying knowledge must leave the instance in a state the enumeration
    # and the oracle agree on, including carried-over distinct pairs
    rng = random.Random(2718)
    ran = 0
    while ran < 25:
        ntx, cons = random_instance(rng)
        tx = ntx.base
        if len(tx.inputs) >= 3 and rng.random() < 0.7:
            k = Knowledge.build(
                input_groups=[frozenset(rng.sample([c.id for c in tx.inputs], 2))])
        else:
            k = Knowledge.build(linked=[(tx.inputs[0].id, tx.outputs[0].id)])
        try:
            out = apply_knowledge(ntx, k)
        except Exception:
            continue
        if not out.base.inputs or not out.base.outputs:
            continue
        ran += 1
        assert numeric_as_dict(enumerate_mappings(out, cons)) \
            == numeric_as_dict(brute_force_oracle(out, cons))


def test_normalization_identity_on_windows():
    # whole-transaction residual equals the sum of per-user residuals for
    # every admissible mapping
    ntx = make_ntx([10, 7], [6, 5, 4], rmin=0, rmax=2)
    res = brute_force_oracle(ntx)
    whole = sum(ntx.base.input_values) - sum(ntx.base.output_values)
    for m in res.concrete_mappings:
        assert sum(sm.residual for sm in m) == whole
