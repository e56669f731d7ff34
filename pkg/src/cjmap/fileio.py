"""Canonical JSON/CSV file formats.

Field names and layouts are documented in docs/file-formats.md; every writer
emits canonical JSON (sorted keys, two-space indent, trailing newline) so
outputs are diffable and byte-stable.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

from .anonloss import GraphOutput, GraphTx, LossReport, TxGraph
from .enumeration import EnumerationResult
from .metrics import MetricsReport, WeightTable
from .model import Coin, Coinjoin, NumericMapping, SubMapping
from .multicj import Link, LinkedSet
from .preprocess import FeePolicy, Knowledge, NormalizedCoinjoin

POLICY_PARAM_KEYS = (
    "feerate", "min_out", "margin", "coord_ppm", "coord_floor",
    "input_vsize", "output_vsize", "standard_denoms",
    "maker_fee_max", "taker_fee_max", "residual_min", "residual_max",
)
CONSTRAINT_KEYS = (
    "max_inputs_per_user", "max_outputs_per_user",
    "max_positive_residual_submappings", "max_change_outputs_per_user",
    "round_denominations", "distinct_owner_pairs", "max_submappings",
)


def canonical_json(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _read(source) -> dict:
    if isinstance(source, dict):
        return source
    if hasattr(source, "read"):
        return json.load(source)
    return json.loads(Path(source).read_text())


def write_text(target, text: str) -> None:
    if hasattr(target, "write"):
        target.write(text)
    else:
        Path(target).write_text(text)


# -- coinjoin transactions -------------------------------------------------------

def coinjoin_to_dict(tx: Coinjoin) -> dict:
    def coin_row(c: Coin) -> dict:
        row = {"id": c.id, "value": c.value}
        if c.address is not None:
            row["address"] = c.address
        if c.origin is not None:
            row["origin"] = c.origin
        return row

    out = {
        "txid": tx.txid,
        "design": tx.design,
        "inputs": [coin_row(c) for c in tx.inputs],
        "outputs": [coin_row(c) for c in tx.outputs],
    }
    if tx.declared_mining_feerate is not None:
        out["feerate"] = tx.declared_mining_feerate
    return out


def load_coinjoin(source) -> Coinjoin:
    d = _read(source)
    inputs = tuple(
        Coin(id=str(r["id"]), value=int(r["value"]), side="input",
             address=r.get("address"), origin=r.get("origin"))
        for r in d["inputs"])
    outputs = tuple(
        Coin(id=str(r["id"]), value=int(r["value"]), side="output",
             address=r.get("address"))
        for r in d["outputs"])
    return Coinjoin(
        txid=str(d.get("txid", "tx")), inputs=inputs, outputs=outputs,
        design=str(d.get("design", "generic")),
        declared_mining_feerate=d.get("feerate"))


# -- knowledge -------------------------------------------------------------------

def load_knowledge(source) -> Knowledge:
    d = _read(source)
    return Knowledge.build(
        input_groups=d.get("same_owner_input_groups", ()),
        output_groups=d.get("same_owner_output_groups", ()),
        linked=d.get("linked_pairs", ()),
        distinct=d.get("distinct_owner_pairs", ()),
    )


# -- enumeration results ---------------------------------------------------------

def result_to_dict(res: EnumerationResult, include_concrete: bool = False) -> dict:
    ntx = res.ntx
    out = {
        "txid": ntx.base.txid if ntx else None,
        "design": ntx.base.design if ntx else None,
        "window": list(ntx.window) if ntx else None,
        "inputs": [{"id": c.id, "value": c.value} for c in ntx.base.inputs]
        if ntx else [],
        "outputs": [{"id": c.id, "value": c.value} for c in ntx.base.outputs]
        if ntx else [],
        "numeric_mappings": [
            {
                "submappings": [
                    {"inputs": list(ivals), "outputs": list(ovals), "residual": r}
                    for ivals, ovals, r in nm.signature
                ],
                "multiplicity": nm.multiplicity,
            }
            for nm in res.numeric_mappings
        ],
        "totals": {"concrete": res.total_concrete, "numeric": res.numeric_count},
        "submapping_count": res.submapping_count,
        "stats": res.stats,
    }
    if include_concrete and res.concrete_mappings is not None:
        out["concrete_mappings"] = [
            sorted(
                ({"inputs": sorted(sm.input_ids), "outputs": sorted(sm.output_ids),
                  "residual": sm.residual} for sm in m),
                key=lambda s: (s["inputs"], s["outputs"]))
            for m in res.concrete_mappings
        ]
    return out


def load_result(source) -> EnumerationResult:
    d = _read(source)
    numeric = [
        NumericMapping(
            tuple(sorted(
                (tuple(s["inputs"]), tuple(s["outputs"]), int(s["residual"]))
                for s in nm["submappings"])),
            int(nm["multiplicity"]))
        for nm in d["numeric_mappings"]
    ]
    ntx = None
    if d.get("inputs"):
        tx = Coinjoin(
            txid=str(d.get("txid") or "tx"),
            inputs=tuple(Coin(str(r["id"]), int(r["value"]), "input")
                         for r in d["inputs"]),
            outputs=tuple(Coin(str(r["id"]), int(r["value"]), "output")
                          for r in d["outputs"]),
            design=str(d.get("design") or "generic"))
        rmin, rmax = d.get("window") or (0, 0)
        pol = FeePolicy("joinmarket" if rmin < 0 else "generic",
                        residual_min=int(rmin), residual_max=int(rmax))
        ntx = NormalizedCoinjoin(
            base=tx, policy=pol,
            provenance={c.id: (c.id,) for c in tx.inputs + tx.outputs})
    concrete = None
    if "concrete_mappings" in d:
        concrete = [
            frozenset(
                SubMapping(frozenset(s["inputs"]), frozenset(s["outputs"]),
                           int(s["residual"]))
                for s in m)
            for m in d["concrete_mappings"]
        ]
    return EnumerationResult(
        numeric_mappings=numeric,
        total_concrete=int(d["totals"]["concrete"]),
        submapping_count=int(d.get("submapping_count", 0)),
        stats=dict(d.get("stats", {})),
        ntx=ntx, concrete_mappings=concrete)


# -- weights ---------------------------------------------------------------------

def load_weight_table(source) -> WeightTable:
    d = _read(source)
    entries = {}
    for row in d.get("entries", ()):
        sig = (tuple(row["inputs"]), tuple(row["outputs"]), row.get("residual"))
        entries[sig] = float(row["weight"])
    return WeightTable(entries, default_weight=float(d.get("default_weight", 0.0)))


# -- transaction graphs ----------------------------------------------------------

def load_graph(source) -> TxGraph:
    d = _read(source)
    txs = [
        GraphTx(
            txid=str(t["txid"]), timestamp=int(t["timestamp"]),
            inputs=tuple((str(src), int(idx)) for src, idx in t.get("inputs", ())),
            outputs=tuple(
                GraphOutput(value=int(o["value"]), address=o.get("address"))
                for o in t.get("outputs", ())))
        for t in d["transactions"]
    ]
    return TxGraph(transactions=txs,
                   coinjoin_ids=set(map(str, d.get("coinjoin_ids", ()))))


def graph_to_dict(g: TxGraph) -> dict:
    return {
        "transactions": [
            {
                "txid": t.txid,
                "timestamp": t.timestamp,
                "inputs": [[src, idx] for src, idx in t.inputs],
                "outputs": [
                    {"value": o.value} if o.address is None
                    else {"value": o.value, "address": o.address}
                    for o in t.outputs
                ],
            }
            for t in g.transactions
        ],
        "coinjoin_ids": sorted(g.coinjoin_ids),
    }


# -- linked sets -----------------------------------------------------------------

def load_linked_set(source, base_dir: Path | None = None) -> LinkedSet:
    if not isinstance(source, dict) and not hasattr(source, "read"):
        base_dir = base_dir or Path(source).parent
    d = _read(source)
    txs = []
    for entry in d["txs"]:
        if isinstance(entry, str):
            path = Path(entry)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            txs.append(load_coinjoin(path))
        else:
            txs.append(load_coinjoin(entry))
    links = tuple(
        Link(src=str(l["from"]), dst=str(l["to"]),
             pairs=tuple((str(o), str(i)) for o, i in l.get("pairs", ())))
        for l in d.get("links", ()))
    return LinkedSet(txs=tuple(txs), links=links)


# -- reports ---------------------------------------------------------------------

def metrics_report_to_dict(rep: MetricsReport) -> dict:
    return {
        "entropy_bits": rep.entropy_bits,
        "mapping_count": rep.mapping_count,
        "numeric_count": rep.numeric_count,
        "submapping_probability": [
            {"inputs": list(sig[0]), "outputs": list(sig[1]),
             "residual": sig[2], "p": p}
            for sig, p in sorted(rep.submapping_probability.items())
        ],
        "link_matrix": [
            {"input": i, "output": o, "p": p}
            for (i, o), p in sorted(rep.link_matrix.items())
        ],
        "max_link": [
            {"user_inputs": label, "output": o, "p": p}
            for (label, o), p in sorted(rep.max_link.items())
        ],
    }


def link_matrix_csv(rep: MetricsReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["input", "output", "p"])
    for (i, o), p in sorted(rep.link_matrix.items()):
        w.writerow([i, o, repr(p)])
    return buf.getvalue()


def _horizon_label(d) -> str:
    return "inf" if d == float("inf") else str(d)


def loss_csv(report: LossReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["txid", "horizon_days", "loss"])
    for txid in sorted(report.per_tx):
        for d in report.horizons:
            w.writerow([txid, _horizon_label(d), repr(float(report.per_tx[txid][d]))])
    return buf.getvalue()


def bucket_csv(report: LossReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["bucket", "horizon_days", "loss"])
    for label in sorted(report.per_bucket):
        for d in report.horizons:
            w.writerow([label, _horizon_label(d),
                        repr(float(report.per_bucket[label][d]))])
    return buf.getvalue()


def trend_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["size", "count"])
    for size, count in rows:
        w.writerow([size, count])
    return buf.getvalue()


def load_trend_csv(source) -> list[tuple[int, int]]:
    if hasattr(source, "read"):
        text = source.read()
    else:
        text = Path(source).read_text()
    rows = []
    for row in csv.DictReader(io.StringIO(text)):
        rows.append((int(row["size"]), int(row["count"])))
    return rows


# -- config ----------------------------------------------------------------------

def load_config(source) -> dict:
    d = _read(source)
    policy = {k: v for k, v in d.get("policy", {}).items() if k in POLICY_PARAM_KEYS}
    cons = {k: v for k, v in d.get("constraints", {}).items() if k in CONSTRAINT_KEYS}
    return {"policy": policy, "constraints": cons}
