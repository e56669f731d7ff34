"""Anonymity-set loss from post-mix consolidations over a transaction graph.

A consolidation is a non-coinjoin transaction spending at least two coinjoin
outputs (of any coinjoins): common-input ownership links them. For a coinjoin
output o, the anonymity set A(o) is the set of same-valued outputs of its
transaction, and the loss after d days is the consolidated fraction of A(o).
Outputs spent by a later coinjoin are remixes and never count (an output is
spent exactly once, so it cannot also feed a consolidation).

These semantics deliberately overestimate the loss; they assume every
detected consolidation is actionable for the analyst.
"""

from __future__ import annotations

import multiprocessing as mp
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import UnknownOutput, UnknownTx
from .model import Coinjoin

SECONDS_PER_DAY = 86_400
DEFAULT_BLOCKS_PER_DAY = 144

INF = float("inf")

# Satoshi ranges used for per-denomination aggregation (arbitrary-value
# designs lose small denominations faster than large ones).
DEFAULT_BUCKETS = (
    ("0-0.001", 0, 100_000),
    ("0.001-0.01", 100_000, 1_000_000),
    ("0.01-0.05", 1_000_000, 5_000_000),
    ("0.05-0.5", 5_000_000, 50_000_000),
    (">0.5", 50_000_000, None),
)


@dataclass(frozen=True, slots=True)
class GraphOutput:
    value: int
    address: str | None = None


@dataclass(frozen=True, slots=True)
class GraphTx:
    txid: str
    timestamp: int
    inputs: tuple[tuple[str, int], ...]  # (source txid, output index)
    outputs: tuple[GraphOutput, ...]


@dataclass
class TxGraph:
    transactions: list[GraphTx]
    coinjoin_ids: set[str] = field(default_factory=set)

    def __post_init__(self):
        self.by_txid = {t.txid: t for t in self.transactions}
        self.spender: dict[tuple[str, int], str] = {}
        for t in self.transactions:
            for src, idx in t.inputs:
                if src not in self.by_txid or idx >= len(self.by_txid[src].outputs):
                    raise UnknownOutput(f"{t.txid} spends missing {src}:{idx}")
                if (src, idx) in self.spender:
                    raise ValueError(f"output {src}:{idx} spent twice")
                if t.timestamp < self.by_txid[src].timestamp:
                    raise ValueError(
                        f"{t.txid} is older than its funding tx {src}")
                self.spender[(src, idx)] = t.txid
        missing = self.coinjoin_ids - set(self.by_txid)
        if missing:
            raise UnknownTx(f"coinjoin ids not in graph: {sorted(missing)}")

    def tx(self, txid: str) -> GraphTx:
        if txid not in self.by_txid:
            raise UnknownTx(txid)
        return self.by_txid[txid]


@dataclass(frozen=True, slots=True)
class DetectionParams:
    min_addresses: int = 5
    min_inputs: int = 20
    max_reuse: float = 0.70
    exclusion: frozenset[str] = frozenset()


def _tx_addresses(g: TxGraph, t: GraphTx) -> list[str]:
    slots = []
    for k, (src, idx) in enumerate(t.inputs):
        addr = g.by_txid[src].outputs[idx].address
        slots.append(addr if addr is not None else f"_in{k}:{t.txid}")
    for k, out in enumerate(t.outputs):
        slots.append(out.address if out.address is not None else f"_out{k}:{t.txid}")
    return slots


def detect_coinjoin(g: TxGraph, txid: str,
                    params: DetectionParams | None = None) -> bool:
    """Structural coinjoin screen: enough distinct addresses and inputs,
    bounded address reuse, and not manually excluded."""
    params = params or DetectionParams()
    t = g.tx(txid)
    if txid in params.exclusion:
        return False
    if len(t.inputs) < params.min_inputs:
        return False
    slots = _tx_addresses(g, t)
    distinct = len(set(slots))
    if distinct < params.min_addresses:
        return False
    reuse = 1.0 - distinct / len(slots)
    return reuse <= params.max_reuse


def detect_coinjoins(g: TxGraph, params: DetectionParams | None = None) -> set[str]:
    return {t.txid for t in g.transactions if detect_coinjoin(g, t.txid, params)}


def anonymity_set(tx: Coinjoin, output_id: str) -> frozenset[str]:
    """All outputs of tx sharing the value of output_id (itself included)."""
    target = None
    for c in tx.outputs:
        if c.id == output_id:
            target = c.value
    if target is None:
        raise UnknownOutput(output_id)
    return frozenset(c.id for c in tx.outputs if c.value == target)


def _consolidating_txids(g: TxGraph) -> dict[str, int]:
    """Non-coinjoin txids spending >= 2 coinjoin outputs, with timestamps."""
    cj_outputs = set()
    for cj in g.coinjoin_ids:
        t = g.by_txid[cj]
        cj_outputs.update((cj, k) for k in range(len(t.outputs)))
    out = {}
    for t in g.transactions:
        if t.txid in g.coinjoin_ids:
            continue
        hits = sum(1 for ref in t.inputs if ref in cj_outputs)
        if hits >= 2:
            out[t.txid] = t.timestamp
    return out


def _consolidation_times(g: TxGraph, cj: str, consolidators: dict[str, int]):
    """Map output index -> consolidation timestamp for outputs of cj."""
    t = g.by_txid[cj]
    times = {}
    for k in range(len(t.outputs)):
        spender = g.spender.get((cj, k))
        if spender is not None and spender in consolidators:
            times[k] = consolidators[spender]
    return times


def find_consolidations(g: TxGraph, cj: str, window_days) -> set[tuple[str, int]]:
    """Outputs of cj consolidated within window_days after its creation."""
    if cj not in g.coinjoin_ids:
        raise UnknownTx(f"{cj} is not a flagged coinjoin")
    consolidators = _consolidating_txids(g)
    t0 = g.by_txid[cj].timestamp
    out = set()
    for idx, when in _consolidation_times(g, cj, consolidators).items():
        if window_days == INF or when - t0 < window_days * SECONDS_PER_DAY:
            out.add((cj, idx))
    return out


@dataclass
class LossReport:
    horizons: tuple
    per_output: dict  # (txid, index) -> {horizon: Fraction}
    per_tx: dict  # txid -> {horizon: Fraction}
    per_bucket: dict  # label -> {horizon: Fraction}
    buckets: tuple = DEFAULT_BUCKETS


def bucket_of(value: int, buckets=DEFAULT_BUCKETS) -> str:
    for label, lo, hi in buckets:
        if value > lo and (hi is None or value <= hi):
            return label
    return buckets[0][0]  # values at or below the first lower bound


def _loss_for_cj(args):
    g, cj, horizons, consolidators, day_seconds = args
    t = g.by_txid[cj]
    t0 = t.timestamp
    times = _consolidation_times(g, cj, consolidators)
    by_value: dict[int, list[int]] = {}
    for k, out in enumerate(t.outputs):
        by_value.setdefault(out.value, []).append(k)
    per_output = {}
    for k, out in enumerate(t.outputs):
        peers = by_value[out.value]
        row = {}
        for d in horizons:
            if d == INF:
                hit = sum(1 for p in peers if p in times)
            else:
                bound = t0 + d * day_seconds
                hit = sum(1 for p in peers if p in times and times[p] < bound)
            row[d] = Fraction(hit, len(peers))
        per_output[(cj, k)] = row
    return per_output


def compute_loss(g: TxGraph, horizons, buckets=DEFAULT_BUCKETS,
                 day_seconds: int = SECONDS_PER_DAY,
                 workers: int = 1) -> LossReport:
    """Per-output, per-transaction and per-bucket anonymity-set loss.

    Horizons are day counts (supporting float('inf')); pass
    day_seconds=blocks_per_day when graph timestamps are block heights.
    """
    horizons = tuple(horizons)
    consolidators = _consolidating_txids(g)
    cjs = sorted(g.coinjoin_ids)
    tasks = [(g, cj, horizons, consolidators, day_seconds) for cj in cjs]
    if workers > 1 and len(tasks) > 1:
        ctx = mp.get_context("fork")
        with ctx.Pool(min(workers, len(tasks))) as pool:
            parts = pool.map(_loss_for_cj, tasks, chunksize=1)
    else:
        parts = [_loss_for_cj(t) for t in tasks]

    per_output = {}
    for part in parts:
        per_output.update(part)
    per_tx = {}
    for cj in cjs:
        rows = [per_output[(cj, k)] for k in range(len(g.by_txid[cj].outputs))]
        per_tx[cj] = {
            d: sum((r[d] for r in rows), Fraction(0)) / len(rows) for d in horizons
        }
    bucket_rows: dict[str, list] = {}
    for (cj, k), row in sorted(per_output.items()):
        label = bucket_of(g.by_txid[cj].outputs[k].value, buckets)
        bucket_rows.setdefault(label, []).append(row)
    per_bucket = {
        label: {d: sum((r[d] for r in rows), Fraction(0)) / len(rows)
                for d in horizons}
        for label, rows in bucket_rows.items()
    }
    return LossReport(horizons, per_output, per_tx, per_bucket, tuple(buckets))
