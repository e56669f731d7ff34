"""Mapping probabilities and privacy metrics over an enumeration result.

With no weight data every concrete mapping is equally likely; a numeric class
carries mass multiplicity/total. External per-sub-mapping weights induce
p(M) proportional to the product of its sub-mappings' weights (normalized per
slot, so scaling the whole table is a no-op). Uniform-case probabilities are
exact rationals; weighted ones use log-space normalization.
"""

from __future__ import annotations

import math
import multiprocessing as mp
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction

from .enumeration import EnumerationResult
from .errors import UnknownId, UnknownSignature, ZeroMass
from .model import SubSignature

_CHUNK = 4096  # classes per summation chunk; fixed so results never depend on workers


@dataclass(frozen=True, slots=True)
class WeightTable:
    entries: dict
    default_weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "entries", {
            _canon_sig(k): float(v) for k, v in self.entries.items()})
        if any(v < 0 for v in self.entries.values()) or self.default_weight < 0:
            raise ValueError("weights must be non-negative")

    def weight(self, sig: SubSignature) -> float:
        return self.entries.get(_canon_sig(sig), self.default_weight)


def _canon_sig(sig) -> SubSignature:
    ivals, ovals = tuple(sorted(sig[0])), tuple(sorted(sig[1]))
    if len(sig) >= 3 and sig[2] is not None:
        res = int(sig[2])
    else:
        res = sum(ivals) - sum(ovals)
    return (ivals, ovals, res)


# One slot group inside a class: (input counts by key, output counts by key,
# external signature, repetition count).
_Slot = tuple[dict, dict, SubSignature, int]


@dataclass
class _View:
    """Uniform access to classes whether symbol-level or value-level."""
    classes: list[tuple[tuple[_Slot, ...], int]]  # (slot groups, multiplicity)
    in_key: dict  # coin id -> key
    out_key: dict
    n: dict  # input key -> group size
    m: dict  # output key -> group size


def _build_view(res: EnumerationResult) -> _View:
    if res.problem is not None and res.classes is not None:
        prob = res.problem
        in_key = {cid: i for i, ids in enumerate(prob.in_ids) for cid in ids}
        out_key = {cid: j for j, ids in enumerate(prob.out_ids) for cid in ids}
        n = {i: cnt for i, cnt in enumerate(prob.in_counts)}
        m = {j: cnt for j, cnt in enumerate(prob.out_counts)}
        classes = []
        for cls in res.classes:
            slots = tuple(
                ({i: a for i, a in enumerate(prob.sigs[idx].avec) if a},
                 {j: b for j, b in enumerate(prob.sigs[idx].bvec) if b},
                 prob.sigs[idx].ext, cnt)
                for idx, cnt in sorted(Counter(cls.slots).items())
            )
            classes.append((slots, cls.multiplicity))
        return _View(classes, in_key, out_key, n, m)
    if res.ntx is None:
        raise ValueError("result carries neither symbol tables nor a transaction")
    tx = res.ntx.base
    in_key = {c.id: c.value for c in tx.inputs}
    out_key = {c.id: c.value for c in tx.outputs}
    n = Counter(in_key.values())
    m = Counter(out_key.values())
    classes = []
    for nm in res.numeric_mappings:
        slots = tuple(
            (dict(Counter(sub[0])), dict(Counter(sub[1])), sub, cnt)
            for sub, cnt in sorted(Counter(nm.signature).items())
        )
        classes.append((slots, nm.multiplicity))
    return _View(classes, dict(in_key), dict(out_key), dict(n), dict(m))


@dataclass
class MappingDistribution:
    """Normalized probability mass per numeric class (class order = view order)."""
    view: _View
    probs: list  # Fraction (uniform) or float (weighted)
    uniform: bool
    total_concrete: int


def mapping_distribution(res: EnumerationResult,
                         w: WeightTable | None = None) -> MappingDistribution:
    view = _build_view(res)
    if not view.classes or res.total_concrete == 0:
        raise ZeroMass("empty enumeration result")
    if w is None:
        total = res.total_concrete
        probs = [Fraction(mult, total) for _, mult in view.classes]
        return MappingDistribution(view, probs, True, total)

    sig_set = {ext for slots, _ in view.classes for _, _, ext, _ in slots}
    norm = sum(w.weight(s) for s in sorted(sig_set))
    if norm <= 0:
        raise ZeroMass("all sub-mapping weights vanish")
    logs = []
    for slots, mult in view.classes:
        lm = math.log(mult)
        dead = False
        for _, _, ext, cnt in slots:
            wt = w.weight(ext)
            if wt == 0.0:
                dead = True
                break
            lm += cnt * math.log(wt / norm)
        logs.append(None if dead else lm)
    finite = [x for x in logs if x is not None]
    if not finite:
        raise ZeroMass("every mapping contains a zero-weight sub-mapping")
    top = max(finite)
    raw = [0.0 if x is None else math.exp(x - top) for x in logs]
    z = math.fsum(raw)
    probs = [x / z for x in raw]
    return MappingDistribution(view, probs, False, res.total_concrete)


def entropy(dist) -> float:
    """Shannon entropy in bits over concrete mappings."""
    if not isinstance(dist, MappingDistribution):
        probs = [float(p) for p in dist]
        return -math.fsum(p * math.log2(p) for p in probs if p > 0.0)
    if dist.uniform:
        return math.log2(dist.total_concrete)
    terms = []
    for (slots, mult), p in zip(dist.view.classes, dist.probs):
        p = float(p)
        if p > 0.0:
            terms.append(p * (math.log2(p) - math.log2(mult)))
    return -math.fsum(terms)


def _pair_terms(view: _View, probs, pairs_keys):
    """Per-pair contribution of every class, in class order."""
    out = [[] for _ in pairs_keys]
    exact = probs and isinstance(probs[0], Fraction)
    for (slots, _mult), p in zip(view.classes, probs):
        if p == 0:
            continue
        for pi, (ki, n_i, ko, m_o) in enumerate(pairs_keys):
            if exact:
                acc = Fraction(0)
                for a_map, b_map, _ext, cnt in slots:
                    a = a_map.get(ki, 0)
                    b = b_map.get(ko, 0)
                    if a and b:
                        acc += Fraction(cnt * a * b, n_i * m_o)
                if acc:
                    out[pi].append(p * acc)
            else:
                acc = 0.0
                for a_map, b_map, _ext, cnt in slots:
                    a = a_map.get(ki, 0)
                    b = b_map.get(ko, 0)
                    if a and b:
                        acc += cnt * a * b / (n_i * m_o)
                if acc:
                    out[pi].append(p * acc)
    return out


_LINK_STATE = None


def _init_link(payload):
    global _LINK_STATE
    _LINK_STATE = payload


def _link_chunk(bounds):
    view, probs, pairs_keys = _LINK_STATE
    lo, hi = bounds
    sub = _View(view.classes[lo:hi], view.in_key, view.out_key, view.n, view.m)
    return _pair_terms(sub, probs[lo:hi], pairs_keys)


def link_probability(res: EnumerationResult, dist: MappingDistribution,
                     pairs=None, workers: int = 1) -> dict:
    """p(i, o): probability that input i and output o share a sub-mapping.

    Numeric-class mass is spread uniformly over the concrete mappings the
    class represents, which is exact for the supported weight models.
    """
    view = dist.view
    if pairs is None:
        pairs = [(i, o) for i in sorted(view.in_key) for o in sorted(view.out_key)]
    pairs = list(pairs)
    pairs_keys = []
    for i, o in pairs:
        if i not in view.in_key:
            raise UnknownId(f"input id {i}")
        if o not in view.out_key:
            raise UnknownId(f"output id {o}")
        ki, ko = view.in_key[i], view.out_key[o]
        pairs_keys.append((ki, view.n[ki], ko, view.m[ko]))

    chunks = [(lo, min(lo + _CHUNK, len(view.classes)))
              for lo in range(0, len(view.classes), _CHUNK)]
    if workers > 1 and len(chunks) > 1:
        ctx = mp.get_context("fork")
        with ctx.Pool(min(workers, len(chunks)), initializer=_init_link,
                      initargs=((view, dist.probs, pairs_keys),)) as pool:
            parts = pool.map(_link_chunk, chunks, chunksize=1)
    else:
        parts = [_pair_terms(
            _View(view.classes[lo:hi], view.in_key, view.out_key, view.n, view.m),
            dist.probs[lo:hi], pairs_keys) for lo, hi in chunks]

    out = {}
    exact = dist.uniform
    for pi, (i, o) in enumerate(pairs):
        terms = [t for part in parts for t in part[pi]]
        if exact:
            out[(i, o)] = sum(terms, Fraction(0))
        else:
            out[(i, o)] = math.fsum(terms)
    return out


def max_link(res: EnumerationResult, dist: MappingDistribution,
             user_inputs, output_id: str):
    """Conservative single-output exposure: max over the user's inputs of p(i, o)."""
    user_inputs = sorted(set(user_inputs))
    if not user_inputs:
        raise UnknownId("empty user input set")
    links = link_probability(res, dist, pairs=[(i, output_id) for i in user_inputs])
    return max(links.values())


def submapping_probability(res: EnumerationResult, dist: MappingDistribution,
                           sig) -> float | Fraction:
    """Total probability of mappings containing a sub-mapping with this signature."""
    target = _canon_sig(sig)
    seen = False
    acc = Fraction(0) if dist.uniform else 0.0
    terms = []
    for (slots, _mult), p in zip(dist.view.classes, dist.probs):
        if any(ext == target for _, _, ext, _ in slots):
            seen = True
            terms.append(p)
    if not seen:
        raise UnknownSignature(f"{target} does not occur in the result")
    if dist.uniform:
        return sum(terms, acc)
    return math.fsum(terms)


@dataclass
class MetricsReport:
    entropy_bits: float
    mapping_count: int
    numeric_count: int
    submapping_probability: dict
    link_matrix: dict
    max_link: dict = field(default_factory=dict)


def build_report(res: EnumerationResult, weights: WeightTable | None = None,
                 pairs=None, user_inputs=None, output_id=None,
                 full_matrix_cap: int = 400, workers: int = 1) -> MetricsReport:
    """Assemble the standard metrics report; floats only (CLI surface)."""
    dist = mapping_distribution(res, weights)
    view = dist.view
    if pairs is None:
        if len(view.in_key) * len(view.out_key) <= full_matrix_cap:
            pairs = [(i, o) for i in sorted(view.in_key) for o in sorted(view.out_key)]
        else:
            pairs = []
    links = link_probability(res, dist, pairs=pairs, workers=workers)
    sig_probs = {}
    for nm in res.numeric_mappings:
        for sub in nm.signature:
            if sub not in sig_probs:
                sig_probs[sub] = float(submapping_probability(res, dist, sub))
    ml = {}
    if user_inputs and output_id is not None:
        label = ",".join(sorted(set(user_inputs)))
        ml[(label, output_id)] = float(max_link(res, dist, user_inputs, output_id))
    return MetricsReport(
        entropy_bits=entropy(dist),
        mapping_count=res.total_concrete,
        numeric_count=res.numeric_count,
        submapping_probability=sig_probs,
        link_matrix={k: float(v) for k, v in links.items()},
        max_link=ml,
    )
