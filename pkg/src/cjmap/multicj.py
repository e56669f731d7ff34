"""Joint analysis of linked coinjoins via one artificial transaction.

The artificial transaction inherits every input and output that does not flow
between member transactions; internal coins (outputs of an earlier member
spent by a later one) become per-link capacity constraints. Enumeration runs
on the artificial transaction and keeps only mappings that admit a consistent
ownership of the internal coins: users span transactions exactly when they
route value across a link, every per-transaction slice balances within that
transaction's residual window, and per-transaction cardinality limits apply
to the full slice including internal coins.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .enumeration import Constraints, EnumerationResult, _assemble, \
    _result_from_leaves, build_problem, enumerate_mappings
from .errors import DanglingLink, ValueMismatch
from .model import Coinjoin, validate_coinjoin
from .preprocess import FeePolicy, NormalizedCoinjoin, build_policy, normalize_fees


@dataclass(frozen=True, slots=True)
class Link:
    src: str  # earlier txid
    dst: str  # later txid
    pairs: tuple[tuple[str, str], ...]  # (output id in src, input id in dst)

    def capacity(self, txs: dict[str, Coinjoin]) -> int:
        return sum(txs[self.src].output_value_of(o) for o, _ in self.pairs)


@dataclass(frozen=True, slots=True)
class LinkedSet:
    txs: tuple[Coinjoin, ...]  # topological order
    links: tuple[Link, ...]


def _validate_linked(ls: LinkedSet) -> None:
    order = {tx.txid: k for k, tx in enumerate(ls.txs)}
    txs = {tx.txid: tx for tx in ls.txs}
    if len(order) != len(ls.txs):
        raise ValueError("duplicate txid in linked set")
    for tx in ls.txs:
        validate_coinjoin(tx)
    used_out: set[tuple[str, str]] = set()
    used_in: set[tuple[str, str]] = set()
    for link in ls.links:
        if link.src not in order or link.dst not in order:
            raise DanglingLink(f"link references unknown tx {link.src}->{link.dst}")
        if order[link.src] >= order[link.dst]:
            raise ValueError(f"link {link.src}->{link.dst} does not point forward")
        for o_id, i_id in link.pairs:
            try:
                v_out = txs[link.src].output_value_of(o_id)
            except KeyError:
                raise DanglingLink(f"{link.src} has no output {o_id}") from None
            try:
                v_in = txs[link.dst].input_value_of(i_id)
            except KeyError:
                raise DanglingLink(f"{link.dst} has no input {i_id}") from None
            if v_out != v_in:
                raise ValueMismatch(
                    f"linked coin {link.src}:{o_id} ({v_out}) != "
                    f"{link.dst}:{i_id} ({v_in})")
            if (link.src, o_id) in used_out or (link.dst, i_id) in used_in:
                raise ValueMismatch("internal coin referenced by two links")
            used_out.add((link.src, o_id))
            used_in.add((link.dst, i_id))


@dataclass(frozen=True)
class LinkConstraints:
    links: tuple[Link, ...]
    capacities: dict  # (src, dst) -> satoshis
    tags: dict  # artificial coin id -> originating txid
    internal_out: frozenset  # (txid, output id)
    internal_in: frozenset  # (txid, input id)


def build_artificial(ls: LinkedSet) -> tuple[Coinjoin, LinkConstraints]:
    """Fold a linked set into one synthetic coinjoin plus link capacities."""
    _validate_linked(ls)
    txs = {tx.txid: tx for tx in ls.txs}
    internal_out = frozenset(
        (link.src, o) for link in ls.links for o, _ in link.pairs)
    internal_in = frozenset(
        (link.dst, i) for link in ls.links for _, i in link.pairs)
    capacities = {(l.src, l.dst): l.capacity(txs) for l in ls.links}

    if len(ls.txs) == 1:
        tx = ls.txs[0]
        tags = {c.id: tx.txid for c in tx.inputs + tx.outputs}
        return tx, LinkConstraints(ls.links, capacities, tags,
                                   internal_out, internal_in)

    inputs, outputs = [], []
    tags: dict[str, str] = {}
    for tx in ls.txs:
        for c in tx.inputs:
            if (tx.txid, c.id) in internal_in:
                continue
            new_id = f"{tx.txid}/{c.id}"
            inputs.append(replace(c, id=new_id))
            tags[new_id] = tx.txid
        for c in tx.outputs:
            if (tx.txid, c.id) in internal_out:
                continue
            new_id = f"{tx.txid}/{c.id}"
            outputs.append(replace(c, id=new_id))
            tags[new_id] = tx.txid
    art = Coinjoin(
        txid="linked:" + "+".join(tx.txid for tx in ls.txs),
        inputs=tuple(inputs), outputs=tuple(outputs), design="generic")
    return art, LinkConstraints(ls.links, capacities, tags,
                                internal_out, internal_in)


@dataclass(frozen=True)
class LinkedLeafCheck:
    """Exact joint-feasibility filter evaluated on each complete mapping.

    Searches for an assignment of internal coins to users such that every
    per-transaction slice is a legal sub-mapping of that transaction and
    users' active transactions are connected through their internal coins.
    """
    n_txs: int
    windows: tuple  # (rmin, rmax) per tx
    caps: tuple  # (max_in, max_out) per tx
    max_pos: tuple  # per tx, None allowed
    internals: tuple  # (src tx index, dst tx index, out value, in value)
    sig_profiles: tuple = ()  # per sig: ((ein, eic, eout, eoc) per tx)

    def ok(self, prob, counts) -> bool:
        users = [idx for idx, cnt in sorted(counts.items()) for _ in range(cnt)]
        nu = len(users)
        nt = self.n_txs
        # per user, per tx: [in_sum, in_cnt, out_sum, out_cnt]
        state = [
            [list(self.sig_profiles[idx][t]) for t in range(nt)] for idx in users
        ]
        held: list[set[tuple[int, int]]] = [set() for _ in range(nu)]

        def final_ok() -> bool:
            positives = [0] * nt
            for u in range(nu):
                active = []
                for t in range(nt):
                    ins, ic, outs, oc = state[u][t]
                    if ic == 0 and oc == 0:
                        continue
                    if ic == 0:
                        return False
                    rmin, rmax = self.windows[t]
                    r = ins - outs
                    if r < rmin or r > rmax:
                        return False
                    if ic > self.caps[t][0] or oc > self.caps[t][1]:
                        return False
                    if r > 0:
                        positives[t] += 1
                    active.append(t)
                if len(active) > 1:
                    # active txs must be connected by this user's internal coins
                    reach = {active[0]}
                    frontier = [active[0]]
                    edges = held[u]
                    while frontier:
                        t = frontier.pop()
                        for a, b in edges:
                            for other, this in ((b, a), (a, b)):
                                if this == t and other not in reach:
                                    reach.add(other)
                                    frontier.append(other)
                    if not set(active) <= reach:
                        return False
            for t in range(nt):
                if self.max_pos[t] is not None and positives[t] > self.max_pos[t]:
                    return False
            return True

        def assign(ci: int) -> bool:
            if ci == len(self.internals):
                return final_ok()
            src, dst, v_out, v_in = self.internals[ci]
            for u in range(nu):
                su = state[u]
                if su[src][3] + 1 > self.caps[src][1]:
                    continue
                if su[dst][1] + 1 > self.caps[dst][0]:
                    continue
                had = (src, dst) in held[u]
                su[src][2] += v_out
                su[src][3] += 1
                su[dst][0] += v_in
                su[dst][1] += 1
                held[u].add((src, dst))
                if assign(ci + 1):
                    return True
                su[src][2] -= v_out
                su[src][3] -= 1
                su[dst][0] -= v_in
                su[dst][1] -= 1
                if not had:
                    held[u].discard((src, dst))
            return False

        return assign(0)


def enumerate_linked(ls: LinkedSet,
                     policies: dict[str, FeePolicy] | None = None,
                     constraints: dict[str, Constraints] | None = None,
                     workers: int = 1) -> EnumerationResult:
    """Enumerate mappings of the linked set's artificial transaction, keeping
    only those consistent with per-transaction fee windows and link capacities."""
    art, lc = build_artificial(ls)
    txs = {tx.txid: tx for tx in ls.txs}
    tx_index = {tx.txid: k for k, tx in enumerate(ls.txs)}
    policies = policies or {}
    constraints = constraints or {}
    ntxs: dict[str, NormalizedCoinjoin] = {}
    cons: dict[str, Constraints] = {}
    for txid, tx in txs.items():
        pol = policies.get(txid)
        if pol is None:
            params = {}
            if tx.declared_mining_feerate is not None:
                params["feerate"] = tx.declared_mining_feerate
            pol = build_policy(tx.design, params)
        ntxs[txid] = normalize_fees(tx, pol)
        cons[txid] = constraints.get(txid) or Constraints.for_design(tx.design)

    norm_value: dict[str, dict] = {}
    for txid, ntx in ntxs.items():
        norm_value[txid] = {}
        for c in ntx.base.inputs:
            norm_value[txid][("in", c.id)] = c.value
        for c in ntx.base.outputs:
            norm_value[txid][("out", c.id)] = c.value

    if len(ls.txs) == 1:
        ntx = ntxs[ls.txs[0].txid]
        return enumerate_mappings(ntx, cons[ls.txs[0].txid], workers=workers)

    # artificial normalized transaction: external coins with per-tx values
    new_inputs, new_outputs = [], []
    for c in art.inputs:
        txid = lc.tags[c.id]
        orig = c.id.split("/", 1)[1]
        new_inputs.append(replace(c, value=norm_value[txid][("in", orig)]))
    for c in art.outputs:
        txid = lc.tags[c.id]
        orig = c.id.split("/", 1)[1]
        new_outputs.append(replace(c, value=norm_value[txid][("out", orig)]))

    windows = tuple(ntxs[tx.txid].window for tx in ls.txs)
    caps = tuple((cons[tx.txid].max_inputs_per_user,
                  cons[tx.txid].max_outputs_per_user) for tx in ls.txs)
    max_pos = tuple(cons[tx.txid].max_positive_residual_submappings
                    for tx in ls.txs)

    neg = sum(w[0] for w in windows if w[0] < 0)
    coarse_min = neg if neg else min(w[0] for w in windows)
    pos = sum(w[1] for w in windows if w[1] > 0)
    coarse_max = pos if pos else max(w[1] for w in windows)
    coarse_window = (coarse_min, coarse_max)
    coarse_caps = (sum(c[0] for c in caps), sum(c[1] for c in caps))

    art_norm = replace(art, inputs=tuple(new_inputs), outputs=tuple(new_outputs))
    art_policy = FeePolicy("joinmarket" if coarse_window[0] < 0 else "generic",
                           residual_min=coarse_window[0],
                           residual_max=coarse_window[1])
    art_ntx = NormalizedCoinjoin(
        base=art_norm, policy=art_policy,
        provenance={c.id: (c.id,) for c in art_norm.inputs + art_norm.outputs})

    internals = []
    for link in ls.links:
        si, di = tx_index[link.src], tx_index[link.dst]
        for o_id, i_id in link.pairs:
            internals.append((si, di,
                              norm_value[link.src][("out", o_id)],
                              norm_value[link.dst][("in", i_id)]))

    art_ids = {c.id for c in art_norm.inputs} | {c.id for c in art_norm.outputs}
    art_pairs = []
    for txid, con in cons.items():
        for a, b in con.distinct_owner_pairs:
            pa, pb = f"{txid}/{a}", f"{txid}/{b}"
            if pa not in art_ids or pb not in art_ids:
                raise ValueError(
                    f"distinct pair ({a}, {b}) of {txid} touches an internal coin")
            art_pairs.append((pa, pb))
    art_cons = Constraints(
        max_inputs_per_user=coarse_caps[0],
        max_outputs_per_user=coarse_caps[1],
        distinct_owner_pairs=tuple(art_pairs),
        max_submappings=min(c.max_submappings for c in cons.values()))
    prob = build_problem(art_ntx, art_cons, tags=lc.tags,
                         window=coarse_window, caps=coarse_caps)

    sig_profiles = []
    tag_to_index = {tx.txid: k for k, tx in enumerate(ls.txs)}
    for s in prob.sigs:
        prof = [[0, 0, 0, 0] for _ in ls.txs]
        for i, a in enumerate(s.avec):
            if a:
                t = tag_to_index[prob.in_tags[i]]
                prof[t][0] += a * prob.in_values[i]
                prof[t][1] += a
        for j, b in enumerate(s.bvec):
            if b:
                t = tag_to_index[prob.out_tags[j]]
                prof[t][2] += b * prob.out_values[j]
                prof[t][3] += b
        sig_profiles.append(tuple(tuple(row) for row in prof))

    check = LinkedLeafCheck(
        n_txs=len(ls.txs), windows=windows, caps=caps, max_pos=max_pos,
        internals=tuple(sorted(internals)), sig_profiles=tuple(sig_profiles))
    leaves, nodes, wall = _assemble(prob, leaf_check=check, workers=workers)
    return _result_from_leaves(prob, leaves, nodes, wall, workers, art_ntx)
