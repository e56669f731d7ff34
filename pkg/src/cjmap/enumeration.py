"""All-mappings enumeration.

Admissible sub-mappings are the solutions of a tolerant subset-sum problem
over the normalized values; complete mappings are assembled from them by
backtracking. The search runs over *symbols* (coins grouped by value, plus a
distinguishing class for coins pinned by constraints or origin tags), so
same-valued coins never multiply the work; concrete counts come from exact
multinomial arithmetic at the leaves.

Parallelism: the search tree is split at the root by the first sub-mapping
choice for the smallest uncovered symbol. Workers share nothing mutable and
the merged result is canonically sorted, so any worker count produces an
identical result.
"""

from __future__ import annotations

import multiprocessing as mp
import os
import time
from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from math import comb, factorial

from .errors import DanglingId, InstanceTooLarge, SubmappingExplosion
from .model import (
    Mapping,
    NumericMapping,
    SubMapping,
    SubSignature,
    numeric_signature_of,
)
from .preprocess import NormalizedCoinjoin

# Symbol counts are packed 16 bits apart in one big integer, with a guard bit
# per field, so multiset availability checks cost two integer operations.
_FIELD_BITS = 16
_FIELD_MASK = (1 << _FIELD_BITS) - 1
_GUARD_BIT = 1 << (_FIELD_BITS - 1)

ORACLE_SIZE_CAP = 14


@dataclass(frozen=True, slots=True)
class Constraints:
    max_inputs_per_user: int = 30
    max_outputs_per_user: int = 10
    max_positive_residual_submappings: int | None = None
    max_change_outputs_per_user: int | None = None
    round_denominations: tuple[int, ...] = ()
    distinct_owner_pairs: tuple[tuple[str, str], ...] = ()
    max_submappings: int = 10_000_000

    def __post_init__(self):
        for name in ("max_inputs_per_user", "max_outputs_per_user",
                     "max_positive_residual_submappings",
                     "max_change_outputs_per_user", "max_submappings"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ValueError(f"{name} must be >= 1 when present")
        if self.max_change_outputs_per_user is not None and not self.round_denominations:
            raise ValueError("change-output rule needs round_denominations")

    @staticmethod
    def for_design(design: str, **overrides) -> "Constraints":
        base: dict = {}
        if design == "whirlpool":
            # one wallet = exactly one input and one output per round
            base.update(max_inputs_per_user=1, max_outputs_per_user=1)
        elif design == "joinmarket":
            # only the taker pays a positive difference
            base.update(max_positive_residual_submappings=1)
        base.update(overrides)
        return Constraints(**base)


@dataclass(frozen=True, slots=True)
class _Sig:
    """One admissible numeric sub-mapping over the symbol tables."""
    avec: tuple[int, ...]
    bvec: tuple[int, ...]
    packed: int
    in_cnt: int
    out_cnt: int
    in_sum: int
    out_sum: int
    residual: int
    positive: bool
    den: int  # product of per-symbol count factorials, both sides
    ext: SubSignature
    concrete: int  # number of id-level realizations


@dataclass(frozen=True, slots=True)
class _Problem:
    in_values: tuple[int, ...]
    in_counts: tuple[int, ...]
    in_ids: tuple[tuple[str, ...], ...]
    in_tags: tuple[str, ...]
    out_values: tuple[int, ...]
    out_counts: tuple[int, ...]
    out_ids: tuple[tuple[str, ...], ...]
    out_tags: tuple[str, ...]
    rmin: int
    rmax: int
    max_in: int
    max_out: int
    max_pos: int | None
    sigs: tuple[_Sig, ...]
    cand: tuple[tuple[int, ...], ...]  # sig indices using each input symbol
    full_packed: int
    guards: int
    numerator: int  # product over symbols of count!
    submapping_count: int

    @property
    def n_in_symbols(self) -> int:
        return len(self.in_values)


@dataclass(frozen=True, slots=True)
class NumericClass:
    """Symbol-level numeric mapping: sig indices with repetition, exact count."""
    slots: tuple[int, ...]
    multiplicity: int
    ext: tuple[SubSignature, ...]


@dataclass
class EnumerationResult:
    numeric_mappings: list[NumericMapping]
    total_concrete: int
    submapping_count: int
    stats: dict
    ntx: NormalizedCoinjoin | None = None
    concrete_mappings: list[Mapping] | None = None
    classes: list[NumericClass] | None = None
    problem: _Problem | None = None

    @property
    def numeric_count(self) -> int:
        return len(self.numeric_mappings)


def _effective_pairs(ntx: NormalizedCoinjoin, c: Constraints):
    return sorted(set(c.distinct_owner_pairs) | set(ntx.distinct_pairs))


def build_problem(ntx: NormalizedCoinjoin, c: Constraints,
                  tags: dict[str, str] | None = None,
                  window: tuple[int, int] | None = None,
                  caps: tuple[int, int] | None = None) -> _Problem:
    """Compile symbol tables and all admissible sub-mapping signatures."""
    tags = tags or {}
    pinned = {cid for pair in _effective_pairs(ntx, c) for cid in pair}

    def group(coins):
        buckets: dict = {}
        for coin in coins:
            klass = (tags.get(coin.id, ""), coin.id if coin.id in pinned else "")
            buckets.setdefault((coin.value, klass), []).append(coin.id)
        keys = sorted(buckets)
        values = tuple(k[0] for k in keys)
        counts = tuple(len(buckets[k]) for k in keys)
        ids = tuple(tuple(sorted(buckets[k])) for k in keys)
        sym_tags = tuple(k[1][0] for k in keys)
        index = {cid: i for i, k in enumerate(keys) for cid in buckets[k]}
        return values, counts, ids, sym_tags, index

    in_values, in_counts, in_ids, in_tags_t, in_index = group(ntx.base.inputs)
    out_values, out_counts, out_ids, out_tags_t, out_index = group(ntx.base.outputs)
    rmin, rmax = window if window is not None else ntx.window
    max_in, max_out = caps if caps is not None else (
        c.max_inputs_per_user, c.max_outputs_per_user)

    p = len(in_values)
    forbidden = []
    for a, b in _effective_pairs(ntx, c):
        for cid in (a, b):
            if cid not in in_index and cid not in out_index:
                raise DanglingId(f"distinct pair ({a}, {b}): unknown coin {cid}")
        fa = in_index[a] if a in in_index else p + out_index[a]
        fb = in_index[b] if b in in_index else p + out_index[b]
        forbidden.append((fa, fb))

    denoms = frozenset(c.round_denominations)
    change_cap = c.max_change_outputs_per_user
    nondenom = tuple(j for j, v in enumerate(out_values) if v not in denoms)

    sigs: list[_Sig] = []
    submapping_count = 0
    cap = c.max_submappings
    avec = [0] * len(in_values)
    bvec = [0] * len(out_values)
    out_suffix = [0] * (len(out_values) + 1)
    for j in range(len(out_values) - 1, -1, -1):
        out_suffix[j] = out_suffix[j + 1] + out_counts[j] * out_values[j]

    def emit():
        nonlocal submapping_count
        a, b = tuple(avec), tuple(bvec)
        for fa, fb in forbidden:
            ca = a[fa] if fa < p else b[fa - p]
            cb = a[fb] if fb < p else b[fb - p]
            if ca and cb:
                return
        if change_cap is not None and sum(b[j] for j in nondenom) > change_cap:
            return
        in_sum = sum(x * v for x, v in zip(a, in_values))
        out_sum = sum(x * v for x, v in zip(b, out_values))
        residual = in_sum - out_sum
        packed = 0
        for k, x in enumerate(a):
            packed |= x << (_FIELD_BITS * k)
        for k, x in enumerate(b):
            packed |= x << (_FIELD_BITS * (p + k))
        den = 1
        conc = 1
        for x, n in zip(a, in_counts):
            den *= factorial(x)
            conc *= comb(n, x)
        for x, n in zip(b, out_counts):
            den *= factorial(x)
            conc *= comb(n, x)
        ext = (
            tuple(v for v, x in zip(in_values, a) for _ in range(x)),
            tuple(v for v, x in zip(out_values, b) for _ in range(x)),
            residual,
        )
        sigs.append(_Sig(a, b, packed, sum(a), sum(b), in_sum, out_sum,
                         residual, residual > 0, den, ext, conc))
        submapping_count += conc
        if submapping_count > cap or len(sigs) > cap:
            raise SubmappingExplosion(
                f"more than {cap} admissible sub-mappings; "
                "apply knowledge preprocessing or raise the cap")

    def rec_out(j, cnt, cur, lo, hi):
        if cur > hi:
            return
        if j == len(out_values):
            if cur >= lo:
                emit()
            return
        if cur + out_suffix[j] < lo:
            return
        limit = min(out_counts[j], max_out - cnt)
        for t in range(limit + 1):
            bvec[j] = t
            rec_out(j + 1, cnt + t, cur + t * out_values[j], lo, hi)
        bvec[j] = 0

    def rec_in(i, cnt, cur):
        if i == len(in_values):
            if cnt:
                rec_out(0, 0, 0, cur - rmax, cur - rmin)
            return
        limit = min(in_counts[i], max_in - cnt)
        for t in range(limit + 1):
            avec[i] = t
            rec_in(i + 1, cnt + t, cur + t * in_values[i])
        avec[i] = 0

    rec_in(0, 0, 0)

    order = sorted(range(len(sigs)),
                   key=lambda k: (sigs[k].ext, sigs[k].avec, sigs[k].bvec))
    sigs = [sigs[k] for k in order]

    cand = tuple(
        tuple(k for k, s in enumerate(sigs) if s.avec[i] > 0)
        for i in range(len(in_values))
    )
    full = 0
    for k, x in enumerate(in_counts):
        full |= x << (_FIELD_BITS * k)
    for k, x in enumerate(out_counts):
        full |= x << (_FIELD_BITS * (p + k))
    guards = 0
    for k in range(p + len(out_values)):
        guards |= _GUARD_BIT << (_FIELD_BITS * k)
    numerator = 1
    for n in in_counts:
        numerator *= factorial(n)
    for n in out_counts:
        numerator *= factorial(n)

    return _Problem(in_values, in_counts, in_ids, in_tags_t,
                    out_values, out_counts, out_ids, out_tags_t,
                    rmin, rmax, max_in, max_out,
                    c.max_positive_residual_submappings,
                    tuple(sigs), cand, full, guards, numerator,
                    submapping_count)


def _k_feasible(f: int, kmin: int, kmax: int, rmin: int, rmax: int) -> bool:
    """Can f be written as a sum of k residuals in [rmin, rmax], kmin<=k<=kmax?"""
    if kmin > kmax:
        return False
    klo, khi = kmin, kmax
    if rmax > 0:
        if f > 0:
            klo = max(klo, -(-f // rmax))
    elif f > 0:
        return False
    elif rmax < 0:
        khi = min(khi, f // rmax)
    if rmin < 0:
        if f < 0:
            klo = max(klo, (-f + (-rmin) - 1) // (-rmin))
    elif f < 0:
        return False
    elif rmin > 0:
        khi = min(khi, f // rmin)
    return klo <= khi


def _search(prob: _Problem, leaf_check=None, first_filter=None):
    """Backtracking assembly; returns ([(sorted slot tuple, multiplicity)], nodes).

    Every multiset of sub-mappings is produced exactly once: each step covers
    the smallest uncovered input symbol, and while that symbol stays the same
    the chosen signature index must not decrease.
    """
    sigs = prob.sigs
    cand = prob.cand
    p = prob.n_in_symbols
    rmin, rmax = prob.rmin, prob.rmax
    max_in, max_out, max_pos = prob.max_in, prob.max_out, prob.max_pos
    fb, fm = _FIELD_BITS, _FIELD_MASK
    guards = prob.guards
    leaves: list[tuple[tuple[int, ...], int]] = []
    nodes = 0
    chosen: list[int] = []

    def leaf():
        counts = Counter(chosen)
        mult = prob.numerator
        for idx, cnt in counts.items():
            mult //= sigs[idx].den ** cnt * factorial(cnt)
        if leaf_check is None or leaf_check.ok(prob, counts):
            leaves.append((tuple(sorted(chosen)), mult))

    def dfs(rem, ric, roc, f, ptr, min_idx, pos_used):
        nonlocal nodes
        nodes += 1
        while ptr < p and not (rem >> (fb * ptr)) & fm:
            ptr += 1
        if ptr == p:
            if rem == 0:
                leaf()
            return
        at_root = not chosen
        for idx in cand[ptr]:
            if idx < min_idx:
                continue
            if at_root and first_filter is not None and idx not in first_filter:
                continue
            s = sigs[idx]
            if s.positive and pos_used == max_pos:
                continue
            if ((rem | guards) - s.packed) & guards != guards:
                continue
            nric = ric - s.in_cnt
            nroc = roc - s.out_cnt
            nf = f - s.residual
            if nric == 0:
                if nroc != 0:
                    continue
            else:
                kmin = max(1, -(-nric // max_in), -(-nroc // max_out))
                if not _k_feasible(nf, kmin, nric, rmin, rmax):
                    continue
            nrem = rem - s.packed
            nptr = ptr
            while nptr < p and not (nrem >> (fb * nptr)) & fm:
                nptr += 1
            chosen.append(idx)
            dfs(nrem, nric, nroc, nf, nptr,
                idx if nptr == ptr else 0,
                pos_used + 1 if s.positive else pos_used)
            chosen.pop()

    total_in = sum(prob.in_counts)
    total_out = sum(prob.out_counts)
    total_f = (sum(v * n for v, n in zip(prob.in_values, prob.in_counts))
               - sum(v * n for v, n in zip(prob.out_values, prob.out_counts)))
    if total_in:
        dfs(prob.full_packed, total_in, total_out, total_f, 0, 0, 0)
        nodes -= 1  # the shared root state; keeps the count worker-invariant
    return leaves, nodes


_WORKER_STATE: tuple | None = None


def _init_worker(payload):
    global _WORKER_STATE
    _WORKER_STATE = payload


def _run_branch(first_idx: int):
    prob, leaf_check = _WORKER_STATE
    return _search(prob, leaf_check, first_filter=frozenset((first_idx,)))


def default_workers() -> int:
    env = os.environ.get("CJMAP_THREADS")
    if env:
        return max(1, int(env))
    return 1


def _assemble(prob: _Problem, leaf_check=None, workers: int = 1):
    t0 = time.monotonic()
    workers = max(1, workers)
    ptr0 = 0
    while ptr0 < prob.n_in_symbols and prob.in_counts[ptr0] == 0:
        ptr0 += 1
    roots = prob.cand[ptr0] if ptr0 < prob.n_in_symbols else ()
    if workers == 1 or len(roots) <= 1:
        leaves, nodes = _search(prob, leaf_check)
    else:
        ctx = mp.get_context("fork")
        with ctx.Pool(min(workers, len(roots)), initializer=_init_worker,
                      initargs=((prob, leaf_check),)) as pool:
            parts = pool.map(_run_branch, list(roots), chunksize=1)
        leaves = [lv for part, _ in parts for lv in part]
        nodes = sum(n for _, n in parts)
    wall = time.monotonic() - t0
    return sorted(leaves), nodes, wall


def _result_from_leaves(prob, leaves, nodes, wall, workers, ntx):
    classes = []
    ext_groups: dict = {}
    for slots, mult in leaves:
        ext = tuple(sorted(prob.sigs[i].ext for i in slots))
        classes.append(NumericClass(slots, mult, ext))
        ext_groups[ext] = ext_groups.get(ext, 0) + mult
    numeric = [NumericMapping(sig, m) for sig, m in sorted(ext_groups.items())]
    total = sum(ext_groups.values())
    stats = {"nodes_visited": nodes, "wall_time": wall, "worker_count": workers}
    return EnumerationResult(
        numeric_mappings=numeric, total_concrete=total,
        submapping_count=prob.submapping_count, stats=stats, ntx=ntx,
        classes=classes, problem=prob)


def enumerate_mappings(ntx: NormalizedCoinjoin, c: Constraints | None = None,
                       workers: int = 1, expand_concrete: bool = False,
                       concrete_cap: int = 100_000) -> EnumerationResult:
    """Enumerate every complete mapping of *ntx*, collapsed to numeric classes."""
    c = c or Constraints.for_design(ntx.base.design)
    prob = build_problem(ntx, c)
    leaves, nodes, wall = _assemble(prob, workers=workers)
    res = _result_from_leaves(prob, leaves, nodes, wall, workers, ntx)
    if expand_concrete:
        res.concrete_mappings = expand_mappings(res, cap=concrete_cap)
    return res


def enumerate_submappings(ntx: NormalizedCoinjoin,
                          c: Constraints | None = None) -> list[SubMapping]:
    """Every admissible (input subset, output subset) pair at coin-id level."""
    c = c or Constraints.for_design(ntx.base.design)
    prob = build_problem(ntx, c)
    out: list[SubMapping] = []
    for s in prob.sigs:
        for ins, _ in _picks(prob.in_ids, s.avec):
            for outs, _ in _picks(prob.out_ids, s.bvec):
                out.append(SubMapping(frozenset(ins), frozenset(outs), s.residual))
    out.sort(key=SubMapping.sort_key)
    return out


def assemble_mappings(subs: list[SubMapping] | None, ntx: NormalizedCoinjoin,
                      c: Constraints | None = None,
                      workers: int = 1) -> EnumerationResult:
    """Assemble complete mappings from the precomputed sub-mapping set.

    The sub-mappings must be the complete admissible set for ntx under c;
    they are collapsed back to numeric signatures before the search. Passing
    None computes them in place, which is the preferred large-instance path.
    """
    c = c or Constraints.for_design(ntx.base.design)
    prob = build_problem(ntx, c)
    if subs is not None:
        sym_in = {cid: i for i, ids in enumerate(prob.in_ids) for cid in ids}
        sym_out = {cid: j for j, ids in enumerate(prob.out_ids) for cid in ids}
        got = set()
        for sm in subs:
            a = [0] * len(prob.in_values)
            b = [0] * len(prob.out_values)
            for cid in sm.input_ids:
                a[sym_in[cid]] += 1
            for cid in sm.output_ids:
                b[sym_out[cid]] += 1
            got.add((tuple(a), tuple(b)))
        if got != {(s.avec, s.bvec) for s in prob.sigs}:
            raise ValueError("sub-mapping list is not the complete admissible set")
    leaves, nodes, wall = _assemble(prob, workers=workers)
    return _result_from_leaves(prob, leaves, nodes, wall, workers, ntx)


def _picks(id_groups, take_vec):
    """All ways to take take_vec[k] ids from each group; yields (ids, rest)."""
    options = [((), tuple(id_groups))]
    for k, take in enumerate(take_vec):
        if not take:
            continue
        options = [
            (prev + pick,
             rest[:k] + (tuple(x for x in rest[k] if x not in pick),) + rest[k + 1:])
            for prev, rest in options
            for pick in combinations(rest[k], take)
        ]
    return options


def expand_mappings(res: EnumerationResult, cap: int = 100_000) -> list[Mapping]:
    """Expand numeric classes into concrete id-level mappings (small instances)."""
    if res.total_concrete > cap:
        raise InstanceTooLarge(
            f"{res.total_concrete} concrete mappings exceed cap {cap}")
    prob = res.problem
    if prob is None:
        raise ValueError("result carries no symbol tables")
    mappings: set[Mapping] = set()
    for cls in res.classes:
        states = [(tuple(prob.in_ids), tuple(prob.out_ids), frozenset())]
        for idx in cls.slots:
            s = prob.sigs[idx]
            nxt = []
            for rem_in, rem_out, acc in states:
                for ins, rin in _picks(rem_in, s.avec):
                    for outs, rout in _picks(rem_out, s.bvec):
                        sm = SubMapping(frozenset(ins), frozenset(outs), s.residual)
                        nxt.append((rin, rout, acc | {sm}))
            states = nxt
        for _, _, acc in states:
            mappings.add(acc)
    return sorted(mappings, key=lambda m: sorted(sm.sort_key() for sm in m))


# ---------------------------------------------------------------------------
# Brute-force oracle: independent exhaustive enumeration, tests' ground truth.
# ---------------------------------------------------------------------------

def _set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [part[i] + [first]] + part[i + 1:]
        yield part + [[first]]


def brute_force_oracle(ntx: NormalizedCoinjoin,
                       c: Constraints | None = None) -> EnumerationResult:
    """Exhaustive reference enumeration over set partitions of the inputs
    crossed with all output-to-block assignments. Test use only."""
    c = c or Constraints.for_design(ntx.base.design)
    tx = ntx.base
    if tx.size > ORACLE_SIZE_CAP:
        raise InstanceTooLarge(f"oracle caps at |I|+|O| <= {ORACLE_SIZE_CAP}")
    rmin, rmax = ntx.window
    in_ids = [cc.id for cc in tx.inputs]
    in_vals = [cc.value for cc in tx.inputs]
    out_ids = [cc.id for cc in tx.outputs]
    out_vals = [cc.value for cc in tx.outputs]
    ni, no = len(in_ids), len(out_ids)
    pairs = _effective_pairs(ntx, c)
    in_pos = {cid: k for k, cid in enumerate(in_ids)}
    out_pos = {cid: k for k, cid in enumerate(out_ids)}
    denoms = frozenset(c.round_denominations)
    max_pos = c.max_positive_residual_submappings

    found: list[Mapping] = []
    for blocks in _set_partitions(list(range(ni))):
        if any(len(b) > c.max_inputs_per_user for b in blocks):
            continue
        k = len(blocks)
        bsum = [sum(in_vals[i] for i in b) for b in blocks]
        block_of = {}
        for bi, b in enumerate(blocks):
            for i in b:
                block_of[i] = bi
        assign = [0] * no

        def check_and_record():
            osum = [0] * k
            ocnt = [0] * k
            change = [0] * k
            for oi in range(no):
                bi = assign[oi]
                osum[bi] += out_vals[oi]
                ocnt[bi] += 1
                if out_vals[oi] not in denoms:
                    change[bi] += 1
            positives = 0
            for bi in range(k):
                r = bsum[bi] - osum[bi]
                if r < rmin or r > rmax:
                    return
                if ocnt[bi] > c.max_outputs_per_user:
                    return
                if (c.max_change_outputs_per_user is not None
                        and change[bi] > c.max_change_outputs_per_user):
                    return
                if r > 0:
                    positives += 1
            if max_pos is not None and positives > max_pos:
                return
            for a, b in pairs:
                ba = block_of[in_pos[a]] if a in in_pos else assign[out_pos[a]]
                bb = block_of[in_pos[b]] if b in in_pos else assign[out_pos[b]]
                if ba == bb:
                    return
            subs = []
            for bi in range(k):
                subs.append(SubMapping(
                    frozenset(in_ids[i] for i in blocks[bi]),
                    frozenset(out_ids[oi] for oi in range(no) if assign[oi] == bi),
                    bsum[bi] - osum[bi]))
            found.append(frozenset(subs))

        def rec(oi):
            if oi == no:
                check_and_record()
                return
            for bi in range(k):
                assign[oi] = bi
                rec(oi + 1)

        rec(0)

    groups: dict = {}
    for m in found:
        sig = numeric_signature_of(m, tx)
        groups[sig] = groups.get(sig, 0) + 1
    numeric = [NumericMapping(sig, mult) for sig, mult in sorted(groups.items())]
    found.sort(key=lambda m: sorted(sm.sort_key() for sm in m))
    stats = {"nodes_visited": None, "wall_time": None, "worker_count": 1}
    return EnumerationResult(
        numeric_mappings=numeric, total_concrete=len(found),
        submapping_count=0, stats=stats, ntx=ntx, concrete_mappings=found)
