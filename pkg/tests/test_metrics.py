import math
import random
from fractions import Fraction

import pytest

from cjmap.enumeration import brute_force_oracle, enumerate_mappings
from cjmap.errors import UnknownId, UnknownSignature, ZeroMass
from cjmap.metrics import (
    WeightTable,
    build_report,
    entropy,
    link_probability,
    mapping_distribution,
    max_link,
    submapping_probability,
)
from helpers import make_ntx, random_instance


def oracle_link_tally(oracle_res, i, o):
    hits = sum(1 for m in oracle_res.concrete_mappings
               for sm in m if i in sm.input_ids and o in sm.output_ids)
    return Fraction(hits, oracle_res.total_concrete)


def test_uniform_fig1(fig1_ntx):
    res = enumerate_mappings(fig1_ntx)
    dist = mapping_distribution(res)
    assert sum(dist.probs) == 1
    for (_, mult), p in zip(dist.view.classes, dist.probs):
        assert p == Fraction(mult, 24)


def test_entropy_uniform_fig1(fig1_ntx):
    dist = mapping_distribution(enumerate_mappings(fig1_ntx))
    assert entropy(dist) == pytest.approx(4.584962500721156, abs=1e-12)


def test_entropy_single_mapping():
    dist = mapping_distribution(enumerate_mappings(make_ntx([5], [5])))
    assert entropy(dist) == 0.0


def test_entropy_textbook():
    assert entropy([0.5, 0.25, 0.25]) == pytest.approx(1.5, abs=1e-12)


def test_zero_mass_on_empty():
    res = enumerate_mappings(make_ntx([5, 3], [7]))  # no admissible mapping
    with pytest.raises(ZeroMass):
        mapping_distribution(res)


def test_link_single_pair_is_one():
    res = enumerate_mappings(make_ntx([5], [5]))
    dist = mapping_distribution(res)
    assert link_probability(res, dist)[("i0", "o0")] == 1


def test_fig1_links_match_oracle_exactly(fig1_ntx):
    res = enumerate_mappings(fig1_ntx)
    dist = mapping_distribution(res)
    links = link_probability(res, dist)
    oracle = brute_force_oracle(fig1_ntx)
    for (i, o), p in links.items():
        assert p == oracle_link_tally(oracle, i, o)
    assert links[("i0", "o2")] == Fraction(1, 3)  # the 8-input, 4-output pair
    # each input is linked to at least one output in every mapping, so its
    # link row sums to 1 or more
    for i in ("i0", "i1", "i2", "i3"):
        assert sum(links[(i, f"o{k}")] for k in range(5)) >= 1


def test_links_match_oracle_randomized():
    rng = random.Random(23)
    done = 0
    while done < 25:
        ntx, cons = random_instance(rng)
        res = enumerate_mappings(ntx, cons)
        if res.total_concrete == 0:
            continue
        done += 1
        dist = mapping_distribution(res)
        oracle = brute_force_oracle(ntx, cons)
        links = link_probability(res, dist)
        for (i, o), p in links.items():
            assert p == oracle_link_tally(oracle, i, o)


def test_row_consistency_zero_window():
    # with a zero-fee window every sub-mapping has an output, so each input
    # is linked to at least one output in every mapping
    rng = random.Random(31)
    for _ in range(10):
        ntx, cons = random_instance(rng)
        if ntx.window != (0, 0):
            continue
        oracle = brute_force_oracle(ntx, cons)
        for m in oracle.concrete_mappings:
            for sm in m:
                assert sm.output_ids


def test_weight_zero_shifts_mass():
    res = enumerate_mappings(make_ntx([3, 3], [3, 3]))
    w = WeightTable({((3, 3), (3, 3), 0): 0.0}, default_weight=1.0)
    dist = mapping_distribution(res, w)
    # the two-singleton class keeps all the mass, split 1/2 per concrete mapping
    masses = {sum(cnt for _, _, _, cnt in slots): p
              for (slots, _), p in zip(dist.view.classes, dist.probs)}
    assert masses[1] == 0.0
    assert masses[2] == pytest.approx(1.0)
    assert math.isclose(sum(dist.probs), 1.0)
    links = link_probability(res, dist)
    assert links[("i0", "o0")] == pytest.approx(0.5, abs=1e-12)


def test_weight_scaling_invariance():
    rng = random.Random(7)
    for _ in range(8):
        ntx, cons = random_instance(rng)
        res = enumerate_mappings(ntx, cons)
        if res.total_concrete == 0:
            continue
        sigs = sorted({s for nm in res.numeric_mappings for s in nm.signature})
        base = {s: rng.uniform(0.1, 3.0) for s in sigs[: len(sigs) // 2]}
        w1 = WeightTable(dict(base), default_weight=1.0)
        lam = 10 ** rng.randint(1, 6)
        w2 = WeightTable({s: v * lam for s, v in base.items()},
                         default_weight=lam)
        d1, d2 = mapping_distribution(res, w1), mapping_distribution(res, w2)
        for a, b in zip(d1.probs, d2.probs):
            assert abs(a - b) <= 1e-12
        assert abs(entropy(d1) - entropy(d2)) <= 1e-12
        l1 = link_probability(res, d1)
        l2 = link_probability(res, d2)
        for k in l1:
            assert abs(l1[k] - l2[k]) <= 1e-12


def test_weighted_links_match_concrete_expansion():
    # independent weighted oracle: weight each concrete mapping by the
    # product of its sub-mapping weights and tally directly
    rng = random.Random(13)
    done = 0
    while done < 10:
        ntx, cons = random_instance(rng)
        res = enumerate_mappings(ntx, cons)
        if res.total_concrete == 0:
            continue
        done += 1
        oracle = brute_force_oracle(ntx, cons)
        sigs = sorted({s for nm in res.numeric_mappings for s in nm.signature})
        w = WeightTable({s: rng.choice((0.5, 1.0, 2.0)) for s in sigs})
        norm = sum(w.weight(s) for s in sigs)

        def sig_of(sm):
            ivals = tuple(sorted(ntx.base.input_value_of(i) for i in sm.input_ids))
            ovals = tuple(sorted(ntx.base.output_value_of(o) for o in sm.output_ids))
            return (ivals, ovals, sum(ivals) - sum(ovals))

        weights = []
        for m in oracle.concrete_mappings:
            prod = 1.0
            for sm in m:
                prod *= w.weight(sig_of(sm)) / norm
            weights.append(prod)
        z = sum(weights)
        dist = mapping_distribution(res, w)
        links = link_probability(res, dist)
        for (i, o), p in links.items():
            ref = sum(wt for m, wt in zip(oracle.concrete_mappings, weights)
                      if any(i in sm.input_ids and o in sm.output_ids
                             for sm in m)) / z
            assert p == pytest.approx(ref, abs=1e-12)


def test_submapping_probability_values():
    res = enumerate_mappings(make_ntx([3, 3], [3, 3]))
    dist = mapping_distribution(res)
    assert submapping_probability(res, dist, ((3,), (3,), 0)) == Fraction(2, 3)
    assert submapping_probability(res, dist, ((3, 3), (3, 3), 0)) == Fraction(1, 3)
    with pytest.raises(UnknownSignature):
        submapping_probability(res, dist, ((9,), (9,), 0))


def test_submapping_probability_single_user():
    res = enumerate_mappings(make_ntx([8, 3], [6, 5]))
    dist = mapping_distribution(res)
    assert submapping_probability(res, dist, ((3, 8), (5, 6), 0)) == 1


def test_max_link(fig1_ntx):
    res = enumerate_mappings(fig1_ntx)
    dist = mapping_distribution(res)
    links = link_probability(res, dist)
    # singleton set reduces to the plain pair probability
    assert max_link(res, dist, ["i0"], "o2") == links[("i0", "o2")]
    assert max_link(res, dist, ["i0", "i1"], "o2") \
        == max(links[("i0", "o2")], links[("i1", "o2")])
    # the 8-and-6 owner against the first 2-valued output
    assert max_link(res, dist, ["i0", "i1"], "o3") \
        == max(links[("i0", "o3")], links[("i1", "o3")])
    with pytest.raises(UnknownId):
        max_link(res, dist, ["nope"], "o2")
    with pytest.raises(UnknownId):
        max_link(res, dist, [], "o2")


def test_max_link_single_user_instance():
    res = enumerate_mappings(make_ntx([8, 3], [6, 5]))
    dist = mapping_distribution(res)
    assert max_link(res, dist, ["i0", "i1"], "o0") == 1


def test_link_probability_workers_identical(fig1_ntx):
    res = enumerate_mappings(fig1_ntx)
    dist = mapping_distribution(res)
    assert link_probability(res, dist, workers=1) \
        == link_probability(res, dist, workers=3)


def test_build_report(fig1_ntx):
    res = enumerate_mappings(fig1_ntx)
    rep = build_report(res, user_inputs=["i0", "i1"], output_id="o2")
    assert rep.mapping_count == 24
    assert rep.numeric_count == 10
    assert rep.entropy_bits == pytest.approx(math.log2(24))
    assert rep.link_matrix[("i0", "o2")] == pytest.approx(1 / 3)
    assert rep.max_link[("i0,i1", "o2")] == pytest.approx(13 / 24)
    assert all(0.0 <= p <= 1.0 for p in rep.submapping_probability.values())
