"""Coinjoin data model: coins, transactions, sub-mappings and their numeric collapse.

All values are exact integer satoshis. Every type is immutable after
construction and safe to share read-only across parallel workers.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from math import factorial

from .errors import (
    DuplicateCoinId,
    EmptySide,
    NegativeValue,
    OutputsExceedInputs,
    SignatureMismatch,
)

DESIGNS = ("whirlpool", "wasabi1", "wasabi2", "joinmarket", "generic")

# One user's slice of a coinjoin at value level:
# (sorted input values, sorted output values, residual).
SubSignature = tuple[tuple[int, ...], tuple[int, ...], int]


@dataclass(frozen=True, slots=True)
class Coin:
    id: str
    value: int
    side: str  # "input" | "output"
    address: str | None = None
    origin: str | None = None  # "fresh" | "remix" | None (treated as fresh)


@dataclass(frozen=True, slots=True)
class Coinjoin:
    txid: str
    inputs: tuple[Coin, ...]
    outputs: tuple[Coin, ...]
    design: str = "generic"
    declared_mining_feerate: int | None = None

    @property
    def input_values(self) -> tuple[int, ...]:
        return tuple(c.value for c in self.inputs)

    @property
    def output_values(self) -> tuple[int, ...]:
        return tuple(c.value for c in self.outputs)

    @property
    def size(self) -> int:
        return len(self.inputs) + len(self.outputs)

    def input_value_of(self, coin_id: str) -> int:
        for c in self.inputs:
            if c.id == coin_id:
                return c.value
        raise KeyError(coin_id)

    def output_value_of(self, coin_id: str) -> int:
        for c in self.outputs:
            if c.id == coin_id:
                return c.value
        raise KeyError(coin_id)


@dataclass(frozen=True, slots=True)
class SubMapping:
    """One hypothetical user: their input ids, output ids and fee residual."""

    input_ids: frozenset[str]
    output_ids: frozenset[str]
    residual: int

    def sort_key(self):
        return (tuple(sorted(self.input_ids)), tuple(sorted(self.output_ids)))


# A mapping is a set of sub-mappings partitioning the transaction's coins.
Mapping = frozenset[SubMapping]


@dataclass(frozen=True, slots=True)
class NumericMapping:
    """Equivalence class of mappings under permutation of same-valued coins."""

    signature: tuple[SubSignature, ...]  # canonically sorted
    multiplicity: int = 1


def coinjoin_from_values(
    input_values,
    output_values,
    txid: str = "tx",
    design: str = "generic",
    feerate: int | None = None,
    input_origins=None,
) -> Coinjoin:
    """Build a coinjoin from bare value lists; ids are i0..iN / o0..oM."""
    origins = input_origins or [None] * len(input_values)
    inputs = tuple(
        Coin(id=f"i{k}", value=v, side="input", origin=origins[k])
        for k, v in enumerate(input_values)
    )
    outputs = tuple(
        Coin(id=f"o{k}", value=v, side="output") for k, v in enumerate(output_values)
    )
    return Coinjoin(txid=txid, inputs=inputs, outputs=outputs, design=design,
                    declared_mining_feerate=feerate)


def validate_coinjoin(tx: Coinjoin) -> None:
    """Raise a structured error if any coinjoin invariant is violated."""
    if not tx.inputs or not tx.outputs:
        raise EmptySide(f"{tx.txid}: both sides must be nonempty")
    for side in (tx.inputs, tx.outputs):
        seen = set()
        for c in side:
            if c.value <= 0:
                raise NegativeValue(f"coin {c.id} has value {c.value}")
            if c.id in seen:
                raise DuplicateCoinId(f"coin id {c.id} repeated on one side")
            seen.add(c.id)
    if sum(tx.input_values) < sum(tx.output_values):
        raise OutputsExceedInputs(
            f"{tx.txid}: outputs sum {sum(tx.output_values)} exceeds "
            f"inputs sum {sum(tx.input_values)}"
        )


def make_sub_signature(input_values, output_values) -> SubSignature:
    ivals = tuple(sorted(input_values))
    ovals = tuple(sorted(output_values))
    return (ivals, ovals, sum(ivals) - sum(ovals))


def numeric_signature_of(mapping, tx: Coinjoin) -> tuple[SubSignature, ...]:
    """Collapse a concrete mapping over *tx* to its canonical value signature."""
    in_val = {c.id: c.value for c in tx.inputs}
    out_val = {c.id: c.value for c in tx.outputs}
    subs = [
        make_sub_signature(
            (in_val[i] for i in sm.input_ids), (out_val[o] for o in sm.output_ids)
        )
        for sm in mapping
    ]
    return tuple(sorted(subs))


def partitions_exactly(mapping, tx: Coinjoin) -> bool:
    """True iff the sub-mappings are disjoint and cover every coin of tx."""
    in_ids: list[str] = []
    out_ids: list[str] = []
    for sm in mapping:
        in_ids.extend(sm.input_ids)
        out_ids.extend(sm.output_ids)
    return (
        len(in_ids) == len(set(in_ids))
        and len(out_ids) == len(set(out_ids))
        and set(in_ids) == {c.id for c in tx.inputs}
        and set(out_ids) == {c.id for c in tx.outputs}
    )


def multiplicity_of(numeric: NumericMapping, tx: Coinjoin) -> int:
    """Exact count of concrete mappings collapsing to *numeric*.

    Counts assignments of same-valued coins to the signature's sub-mapping
    slots (a multinomial per distinct value), then divides out permutations
    of identical sub-mapping signatures.
    """
    in_counts = Counter(tx.input_values)
    out_counts = Counter(tx.output_values)
    used_in: Counter = Counter()
    used_out: Counter = Counter()
    den = 1
    for ivals, ovals, _res in numeric.signature:
        ic, oc = Counter(ivals), Counter(ovals)
        used_in.update(ic)
        used_out.update(oc)
        for n in ic.values():
            den *= factorial(n)
        for n in oc.values():
            den *= factorial(n)
    if used_in != in_counts or used_out != out_counts:
        raise SignatureMismatch(
            f"signature values do not match transaction {tx.txid}"
        )
    for n in Counter(numeric.signature).values():
        den *= factorial(n)
    num = 1
    for n in in_counts.values():
        num *= factorial(n)
    for n in out_counts.values():
        num *= factorial(n)
    return num // den
