"""Command line surface: enumerate, linked, metrics, anonloss, gen, fit.

Every command reads and writes the canonical file formats, honors --threads /
--seed / --quiet / --config, and exits nonzero with the structured error name
on stderr when a contract is violated. All randomness is seeded; the stats
block is the only wall-clock-dependent output.
"""

from __future__ import annotations

import argparse
import sys
from contextlib import contextmanager
from pathlib import Path

from . import fileio
from .anonloss import DEFAULT_BUCKETS, DetectionParams, compute_loss, detect_coinjoins
from .enumeration import Constraints, default_workers, enumerate_mappings, \
    expand_mappings
from .errors import CjmapError
from .generator import TREND_PARAMS, generate, trend_dataset
from .metrics import build_report
from .model import validate_coinjoin
from .multicj import enumerate_linked
from .preprocess import apply_knowledge, build_policy, normalize_fees
from .trend import fit_trend, predict


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--threads", type=int, default=None,
                        help="worker count (default: $CJMAP_THREADS or 1)")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--quiet", action="store_true")
    parser.add_argument("--config", help="JSON config with policy/constraints defaults")


def _threads(args) -> int:
    return args.threads if args.threads is not None else default_workers()


def _config(args) -> dict:
    if args.config:
        return fileio.load_config(args.config)
    return {"policy": {}, "constraints": {}}


@contextmanager
def _out_stream(args):
    if args.out:
        with open(args.out, "w") as fh:
            yield fh
    else:
        yield sys.stdout


def _info(args, msg: str) -> None:
    if not args.quiet and args.out:
        print(msg)


def _policy_params(args, cfg) -> dict:
    params = dict(cfg["policy"])
    if getattr(args, "feerate", None) is not None:
        params["feerate"] = args.feerate
    if getattr(args, "delta_max", None) is not None:
        params["residual_max"] = args.delta_max
    if getattr(args, "coord_ppm", None) is not None:
        params["coord_ppm"] = args.coord_ppm
    return params


def _constraints(design: str, cfg, extra=None) -> Constraints:
    over = dict(cfg["constraints"])
    if extra:
        over.update(extra)
    if "round_denominations" in over:
        over["round_denominations"] = tuple(over["round_denominations"])
    if "distinct_owner_pairs" in over:
        over["distinct_owner_pairs"] = tuple(
            tuple(p) for p in over["distinct_owner_pairs"])
    return Constraints.for_design(design, **over)


def cmd_enumerate(args) -> int:
    cfg = _config(args)
    if args.linked:
        ls = fileio.load_linked_set(args.linked)
        res = enumerate_linked(ls, workers=_threads(args))
    else:
        tx = fileio.load_coinjoin(args.tx if args.tx else sys.stdin)
        validate_coinjoin(tx)
        design = args.design or tx.design
        params = _policy_params(args, cfg)
        if "feerate" not in params and tx.declared_mining_feerate is not None:
            params["feerate"] = tx.declared_mining_feerate
        policy = build_policy(design, params)
        ntx = normalize_fees(tx, policy)
        if args.knowledge:
            ntx = apply_knowledge(ntx, fileio.load_knowledge(args.knowledge))
        extra = {"max_submappings": args.max_submappings} if args.max_submappings else None
        cons = _constraints(design, cfg, extra)
        res = enumerate_mappings(ntx, cons, workers=_threads(args))
    if args.concrete:
        res.concrete_mappings = expand_mappings(res)
    payload = fileio.result_to_dict(res, include_concrete=args.concrete)
    with _out_stream(args) as fh:
        fh.write(fileio.canonical_json(payload))
    _info(args, f"{res.total_concrete} mappings in {res.numeric_count} "
                f"numeric classes -> {args.out}")
    return 0


def cmd_linked(args) -> int:
    ls = fileio.load_linked_set(args.set)
    res = enumerate_linked(ls, workers=_threads(args))
    payload = fileio.result_to_dict(res)
    with _out_stream(args) as fh:
        fh.write(fileio.canonical_json(payload))
    _info(args, f"{res.total_concrete} mappings in {res.numeric_count} "
                f"numeric classes -> {args.out}")
    return 0


def cmd_metrics(args) -> int:
    res = fileio.load_result(args.mappings if args.mappings else sys.stdin)
    weights = fileio.load_weight_table(args.weights) if args.weights else None
    pairs = None
    if args.pairs:
        pairs = [tuple(p.split(",", 1)) for p in args.pairs]
    user_inputs = args.user_inputs.split(",") if args.user_inputs else None
    rep = build_report(res, weights=weights, pairs=pairs,
                       user_inputs=user_inputs, output_id=args.output,
                       workers=_threads(args))
    if args.csv:
        fileio.write_text(args.csv, fileio.link_matrix_csv(rep))
    with _out_stream(args) as fh:
        fh.write(fileio.canonical_json(fileio.metrics_report_to_dict(rep)))
    _info(args, f"entropy {rep.entropy_bits:.3f} bits over "
                f"{rep.mapping_count} mappings -> {args.out}")
    return 0


def _parse_days(spec: str):
    out = []
    for part in spec.split(","):
        part = part.strip()
        out.append(float("inf") if part in ("inf", "INF", "Inf") else int(part))
    return out


def cmd_anonloss(args) -> int:
    g = fileio.load_graph(args.graph)
    params = DetectionParams(
        min_addresses=args.min_addresses, min_inputs=args.min_inputs,
        max_reuse=args.max_reuse,
        exclusion=frozenset(args.exclude or ()))
    if args.detect or not g.coinjoin_ids:
        g.coinjoin_ids = detect_coinjoins(g, params)
    horizons = _parse_days(args.days)
    day_seconds = args.blocks_per_day if args.clock == "height" else 86_400
    report = compute_loss(g, horizons, buckets=DEFAULT_BUCKETS,
                          day_seconds=day_seconds, workers=_threads(args))
    body = fileio.loss_csv(report)
    buckets = fileio.bucket_csv(report)
    if args.out:
        fileio.write_text(args.out, body)
        base = Path(args.out)
        fileio.write_text(base.with_name(base.stem + "-buckets.csv"), buckets)
        _info(args, f"{len(report.per_tx)} coinjoins -> {args.out}")
    else:
        sys.stdout.write(body)
        sys.stdout.write(buckets)
    return 0


def _parse_sizes(spec: str):
    if ".." in spec:
        lo, hi = spec.split("..", 1)
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in spec.split(",")]


def cmd_gen(args) -> int:
    if args.mode == "trend":
        params = dict(TREND_PARAMS)
        if args.ladder_steps is not None:
            params["ladder_steps"] = args.ladder_steps
        rows = trend_dataset(args.design, _parse_sizes(args.sizes),
                             args.per_size, seed=args.seed, params=params,
                             workers=_threads(args))
        text = fileio.trend_csv(rows)
        if args.out:
            fileio.write_text(args.out, text)
            _info(args, f"{len(rows)} rows -> {args.out}")
        else:
            sys.stdout.write(text)
        return 0
    gt = generate(args.design, args.users, args.seed)
    payload = fileio.coinjoin_to_dict(gt.tx)
    with _out_stream(args) as fh:
        fh.write(fileio.canonical_json(payload))
    if args.truth:
        truth = {
            "seed": gt.seed,
            "design": gt.design,
            "submappings": sorted(
                ({"inputs": sorted(sm.input_ids), "outputs": sorted(sm.output_ids),
                  "residual": sm.residual} for sm in gt.true_mapping),
                key=lambda s: (s["inputs"], s["outputs"])),
        }
        fileio.write_text(args.truth, fileio.canonical_json(truth))
    _info(args, f"{gt.tx.size}-coin {args.design} coinjoin -> {args.out}")
    return 0


def cmd_fit(args) -> int:
    rows = fileio.load_trend_csv(args.csv if args.csv else sys.stdin)
    fit = fit_trend(rows)
    payload = {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
    }
    if args.predict is not None:
        payload["prediction"] = predict(fit, args.predict, args.loss)
    with _out_stream(args) as fh:
        fh.write(fileio.canonical_json(payload))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cjmap",
        description="Coinjoin mapping enumeration and privacy metrics")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", help="enumerate all mappings of a coinjoin")
    _common(p)
    p.add_argument("--tx", help="coinjoin JSON file (default: stdin)")
    p.add_argument("--design", choices=("whirlpool", "wasabi1", "wasabi2",
                                        "joinmarket", "generic"))
    p.add_argument("--feerate", type=int)
    p.add_argument("--delta-max", type=int, dest="delta_max",
                   help="override the residual window upper bound")
    p.add_argument("--coord-ppm", type=int, dest="coord_ppm")
    p.add_argument("--knowledge", help="attacker knowledge JSON file")
    p.add_argument("--max-submappings", type=int, dest="max_submappings")
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--numeric", action="store_true", default=True)
    mode.add_argument("--concrete", action="store_true", default=False)
    p.add_argument("--linked", help="linked-set JSON file (joint analysis)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_enumerate)

    p = sub.add_parser("linked", help="joint analysis of linked coinjoins")
    _common(p)
    p.add_argument("--set", required=True, help="linked-set JSON file")
    p.add_argument("--out")
    p.set_defaults(func=cmd_linked)

    p = sub.add_parser("metrics", help="privacy metrics from an enumeration result")
    _common(p)
    p.add_argument("--mappings", help="result JSON file (default: stdin)")
    p.add_argument("--weights", help="sub-mapping weight table JSON")
    p.add_argument("--pairs", action="append",
                   help="input,output pair (repeatable)")
    p.add_argument("--user-inputs", dest="user_inputs",
                   help="comma-separated input ids owned by one user")
    p.add_argument("--output", help="output id for the max-link metric")
    p.add_argument("--csv", help="write the link matrix as CSV here")
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("anonloss", help="anonymity-set loss over a tx graph")
    _common(p)
    p.add_argument("--graph", required=True)
    p.add_argument("--days", default="1,7,31,365,inf")
    p.add_argument("--buckets", default="default", choices=("default",))
    p.add_argument("--detect", action="store_true",
                   help="run coinjoin detection even if ids are supplied")
    p.add_argument("--min-inputs", type=int, default=20, dest="min_inputs")
    p.add_argument("--min-addresses", type=int, default=5, dest="min_addresses")
    p.add_argument("--max-reuse", type=float, default=0.70, dest="max_reuse")
    p.add_argument("--exclude", action="append", help="txid to exclude (repeatable)")
    p.add_argument("--clock", choices=("time", "height"), default="time")
    p.add_argument("--blocks-per-day", type=int, default=144, dest="blocks_per_day")
    p.add_argument("--out")
    p.set_defaults(func=cmd_anonloss)

    p = sub.add_parser("gen", help="generate ground-truth coinjoins")
    _common(p)
    p.add_argument("mode", nargs="?", choices=("trend",),
                   help="'trend' emits a (size, count) CSV instead of one tx")
    p.add_argument("--design", default="generic",
                   choices=("whirlpool", "wasabi1", "wasabi2", "joinmarket",
                            "generic"))
    p.add_argument("--users", type=int, default=3)
    p.add_argument("--truth", help="write the ground-truth mapping JSON here")
    p.add_argument("--sizes", default="6..16")
    p.add_argument("--per-size", type=int, default=10, dest="per_size")
    p.add_argument("--ladder-steps", type=int, dest="ladder_steps")
    p.add_argument("--out")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="fit the exponential mapping-count trend")
    _common(p)
    p.add_argument("--csv", help="trend CSV (default: stdin)")
    p.add_argument("--predict", type=int)
    p.add_argument("--loss", type=float, default=0.0,
                   help="shrink the predicted size by this consolidation fraction")
    p.add_argument("--out")
    p.set_defaults(func=cmd_fit)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CjmapError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (ValueError, OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
