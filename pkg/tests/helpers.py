"""Shared test utilities: instance factories and independent oracles."""

from __future__ import annotations

import random

from cjmap.enumeration import Constraints, brute_force_oracle
from cjmap.model import Coin, Coinjoin, SubMapping, numeric_signature_of
from cjmap.multicj import Link, LinkedSet, build_artificial
from cjmap.preprocess import FeePolicy, NormalizedCoinjoin, normalize_fees


def numeric_as_dict(res) -> dict:
    return {m.signature: m.multiplicity for m in res.numeric_mappings}


def make_ntx(input_values, output_values, rmin=0, rmax=0, txid="t",
             distinct_pairs=()) -> NormalizedCoinjoin:
    """Normalized coinjoin with an explicit residual window, no fee math."""
    design = "joinmarket" if rmin < 0 else "generic"
    tx = Coinjoin(
        txid,
        tuple(Coin(f"i{k}", v, "input") for k, v in enumerate(input_values)),
        tuple(Coin(f"o{k}", v, "output") for k, v in enumerate(output_values)),
        design)
    pol = FeePolicy(design, residual_min=rmin, residual_max=rmax)
    return NormalizedCoinjoin(
        base=tx, policy=pol,
        provenance={c.id: (c.id,) for c in tx.inputs + tx.outputs},
        distinct_pairs=tuple(distinct_pairs))


def compose(rng: random.Random, total: int, nmax: int) -> list[int]:
    parts, rem = [], total
    while rem > 0 and len(parts) < nmax - 1:
        parts.append(rng.randint(1, max(1, rem - (nmax - 1 - len(parts)))))
        rem -= parts[-1]
    if rem > 0:
        parts.append(rem)
    return parts


def random_instance(rng: random.Random, size_cap: int = 12):
    """Random oracle-scale instance spanning the four design flavors."""
    flavor = rng.choice(("whirlpool", "wasabi1", "wasabi2", "joinmarket"))
    if flavor == "whirlpool":
        n = rng.randint(1, size_cap // 2)
        denom = rng.choice((5, 10))
        ntx = make_ntx([denom] * n, [denom] * n)
        cons = Constraints.for_design("whirlpool")
        return ntx, cons
    ni = rng.randint(1, min(6, size_cap - 1))
    no = rng.randint(1, min(6, size_cap - ni))
    ins = [rng.choice((1, 2, 2, 3, 3, 4, 5, 6, 8, 10)) for _ in range(ni)]
    fee = rng.randint(0, 3)
    total = sum(ins) - fee
    if total < 1:
        fee, total = 0, sum(ins)
    outs = compose(rng, total, no)
    over = {}
    if rng.random() < 0.4:
        over["max_inputs_per_user"] = rng.randint(1, 3)
    if rng.random() < 0.4:
        over["max_outputs_per_user"] = rng.randint(1, 3)
    pairs = []
    if rng.random() < 0.35:
        coins = [f"i{k}" for k in range(ni)] + [f"o{k}" for k in range(len(outs))]
        a, b = rng.sample(coins, 2)
        pairs.append((a, b))
    if flavor == "wasabi1":
        rmin, rmax = 0, 0
    elif flavor == "wasabi2":
        rmin, rmax = 0, rng.randint(1, 4)
    else:  # joinmarket
        rmin, rmax = -rng.randint(1, 3), rng.randint(1, 5)
        over["max_positive_residual_submappings"] = 1
    ntx = make_ntx(ins, outs, rmin, rmax, distinct_pairs=tuple(pairs))
    return ntx, Constraints(**over)


def linked_toy(rng: random.Random):
    """Random 2-transaction chain with combined external size <= 12."""
    while True:
        ins1 = [rng.randint(1, 8) for _ in range(rng.randint(1, 3))]
        outs1 = compose(rng, sum(ins1), 3)
        n_int = rng.randint(1, min(2, len(outs1)))
        internal_idx = rng.sample(range(len(outs1)), n_int)
        int_vals = [outs1[k] for k in internal_idx]
        ins2 = [(f"p{k}", v) for k, v in enumerate(int_vals)]
        ins2 += [(f"e{k}", rng.randint(1, 6)) for k in range(rng.randint(0, 2))]
        outs2 = compose(rng, sum(v for _, v in ins2), 3)
        ext_size = (len(ins1) + len(outs1) - n_int) + \
            (len(ins2) - n_int + len(outs2)) + 2 * n_int
        if len(ins1) + len(outs1) + len(ins2) + len(outs2) > 13:
            continue
        tx1 = Coinjoin(
            "t1", tuple(Coin(f"a{k}", v, "input") for k, v in enumerate(ins1)),
            tuple(Coin(f"x{k}", v, "output") for k, v in enumerate(outs1)),
            "generic")
        tx2 = Coinjoin(
            "t2", tuple(Coin(i, v, "input") for i, v in ins2),
            tuple(Coin(f"y{k}", v, "output") for k, v in enumerate(outs2)),
            "generic")
        link = Link("t1", "t2",
                    tuple((f"x{k}", f"p{j}") for j, k in enumerate(internal_idx)))
        policies = {
            "t1": FeePolicy("generic", residual_max=rng.choice((0, 0, 1, 2))),
            "t2": FeePolicy("generic", residual_max=rng.choice((0, 0, 1))),
        }
        return LinkedSet((tx1, tx2), (link,)), policies


def joint_oracle_2tx(ls: LinkedSet, policies, cons=None) -> dict:
    """Independent joint enumeration: per-transaction brute force composed by
    matching sub-mappings through shared internal coins."""
    tx1, tx2 = ls.txs
    cons = cons or {t.txid: Constraints.for_design(t.design) for t in ls.txs}
    n1 = normalize_fees(tx1, policies[tx1.txid])
    n2 = normalize_fees(tx2, policies[tx2.txid])
    r1 = brute_force_oracle(n1, cons[tx1.txid])
    r2 = brute_force_oracle(n2, cons[tx2.txid])
    internal_out = {o for link in ls.links for o, _ in link.pairs}
    internal_in = {i for link in ls.links for _, i in link.pairs}
    pairs = [(o, i) for link in ls.links for o, i in link.pairs]
    nv = {
        tx1.txid: {("in", c.id): c.value for c in n1.base.inputs}
        | {("out", c.id): c.value for c in n1.base.outputs},
        tx2.txid: {("in", c.id): c.value for c in n2.base.inputs}
        | {("out", c.id): c.value for c in n2.base.outputs},
    }
    art, _ = build_artificial(ls)
    avi, avo = {}, {}
    for c in art.inputs:
        t, orig = c.id.split("/", 1)
        avi[c.id] = nv[t][("in", orig)]
    for c in art.outputs:
        t, orig = c.id.split("/", 1)
        avo[c.id] = nv[t][("out", orig)]

    seen = set()
    for m1 in r1.concrete_mappings:
        own_out = {o: sm for sm in m1 for o in sm.output_ids}
        for m2 in r2.concrete_mappings:
            own_in = {i: sm for sm in m2 for i in sm.input_ids}
            edges, redges, ok = {}, {}, True
            for o, i in pairs:
                a, b = own_out[o], own_in[i]
                if edges.setdefault(a, b) is not b or redges.setdefault(b, a) is not a:
                    ok = False
                    break
            if not ok:
                continue
            users = []
            for sm in m1:
                s2 = edges.get(sm)
                ins = {f"{tx1.txid}/{x}" for x in sm.input_ids}
                outs = {f"{tx1.txid}/{x}" for x in sm.output_ids
                        if x not in internal_out}
                if s2 is not None:
                    ins |= {f"{tx2.txid}/{x}" for x in s2.input_ids
                            if x not in internal_in}
                    outs |= {f"{tx2.txid}/{x}" for x in s2.output_ids}
                users.append((frozenset(ins), frozenset(outs)))
            for sm in m2:
                if sm in redges:
                    continue
                ins = {f"{tx2.txid}/{x}" for x in sm.input_ids
                       if x not in internal_in}
                outs = {f"{tx2.txid}/{x}" for x in sm.output_ids}
                users.append((frozenset(ins), frozenset(outs)))
            seen.add(frozenset(
                SubMapping(i_, o_,
                           sum(avi[x] for x in i_) - sum(avo[x] for x in o_))
                for i_, o_ in users))

    art_tx = Coinjoin(
        "art", tuple(Coin(i, avi[i], "input") for i in sorted(avi)),
        tuple(Coin(o, avo[o], "output") for o in sorted(avo)))
    groups: dict = {}
    for m in seen:
        sig = numeric_signature_of(m, art_tx)
        groups[sig] = groups.get(sig, 0) + 1
    return dict(sorted(groups.items()))
