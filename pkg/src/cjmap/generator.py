"""Synthetic coinjoins with known ground-truth mappings.

Instances are built per user in normalized space and converted back to raw
satoshi values through the exact inverse of the fee rules, so re-running fee
normalization recovers every user's residual inside the design window. Output
values come from a powers-of-two denomination ladder plus change, which gives
the value collisions that make enumeration non-trivial.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from .enumeration import Constraints, enumerate_mappings
from .errors import InfeasibleParams
from .model import Coin, Coinjoin, Mapping, SubMapping
from .preprocess import FeePolicy, _coordination_fee, build_policy, normalize_fees

_RETRIES = 600

# Profile used for growth-trend datasets: two ladder denominations and at
# most two coins per user side keep same-size instances structurally
# comparable, so the exponential fit is tight.
TREND_PARAMS = {"ladder_steps": 2, "max_inputs": 2, "max_outputs": 2}


@dataclass(frozen=True)
class GroundTruth:
    tx: Coinjoin
    true_mapping: Mapping  # residuals are in normalized space
    seed: int
    design: str
    policy: FeePolicy
    constraints: Constraints


class _Retry(Exception):
    pass


def _defaults(design: str) -> dict:
    common = {"base": 5000, "ladder_steps": 5, "max_inputs": 3, "max_outputs": 3}
    per_design = {
        "generic": {},
        "wasabi2": {"feerate": 2, "min_out": 5000, "margin": 500,
                    "remix_prob": 0.5},
        "wasabi1": {"feerate": 2, "standard_denoms": (1_000_000,),
                    "change_max": 400_000},
        "whirlpool": {"feerate": 5, "denom": 1_000_000, "remix_prob": 0.5,
                      "max_inputs": 1, "max_outputs": 1},
        "joinmarket": {"maker_fee_max": 1000, "taker_fee_max": 50_000,
                       "mining_max": 2000, "value_min": 20_000,
                       "value_max": 200_000},
    }
    return {**common, **per_design[design]}


def _compose(rng: random.Random, total: int, parts: int) -> list[int]:
    """Split total into `parts` positive integers, uniformly at random."""
    if total < parts:
        raise _Retry
    if parts == 1:
        return [total]
    cuts = sorted(rng.sample(range(1, total), parts - 1))
    vals = []
    prev = 0
    for cut in cuts + [total]:
        vals.append(cut - prev)
        prev = cut
    return vals


def _ladder_value(rng: random.Random, p: dict) -> int:
    return p["base"] * 2 ** rng.randrange(p["ladder_steps"])


def _invert_input(target_norm: int, policy: FeePolicy, origin: str | None) -> int:
    """Raw input value whose normalized value equals target_norm."""
    fee_in = policy.mining_feerate * policy.input_vsize
    guess = target_norm + fee_in
    probe = Coin("_", guess, "input", origin=origin)
    if guess - _coordination_fee(policy, probe) - fee_in == target_norm:
        return guess
    # coordination applies: search around the rate-corrected estimate
    est = (target_norm + fee_in) * 1_000_000 // (1_000_000 - policy.coordination_rate_ppm)
    for raw in range(max(1, est - 3), est + 4):
        probe = Coin("_", raw, "input", origin=origin)
        if raw - _coordination_fee(policy, probe) - fee_in == target_norm:
            return raw
    raise _Retry


def _build_generic(rng, users, p, policy):
    rows = []
    for _ in range(users):
        n_out = rng.randint(1, p["max_outputs"])
        outs = [_ladder_value(rng, p) for _ in range(n_out)]
        n_in = rng.randint(1, p["max_inputs"])
        ins = [(v, None) for v in _compose(rng, sum(outs), n_in)]
        rows.append((ins, outs, 0))
    return rows


def _build_wasabi(rng, users, p, policy):
    fee_out = policy.mining_feerate * policy.output_vsize
    rows = []
    for _ in range(users):
        n_out = rng.randint(1, p["max_outputs"])
        if policy.design == "wasabi1":
            outs = [rng.choice(policy.standard_denominations)
                    for _ in range(max(1, n_out - 1))]
            if n_out > 1 and rng.random() < 0.5:
                outs.append(rng.randint(1, p["change_max"]))
            residual = 0
        else:
            outs = [_ladder_value(rng, p) for _ in range(n_out)]
            residual = rng.randint(0, policy.residual_max)
        norm_out = 0
        for v in outs:
            add = fee_out
            if policy.design == "wasabi1" and v in policy.standard_denominations:
                add += v * policy.coordination_rate_ppm // 1_000_000
            norm_out += v + add
        target = norm_out + residual

        n_in = rng.randint(1, p["max_inputs"])
        ins = []
        acc = 0
        for _ in range(n_in - 1):
            origin = "remix" if (policy.design == "wasabi2"
                                 and rng.random() < p["remix_prob"]) else "fresh"
            raw = _ladder_value(rng, p) * rng.randint(1, 8)
            coin = Coin("_", raw, "input", origin=origin)
            norm = raw - _coordination_fee(policy, coin) \
                - policy.mining_feerate * policy.input_vsize
            if norm <= 0:
                raise _Retry
            ins.append((raw, origin))
            acc += norm
        last_origin = "remix" if policy.design == "wasabi2" else "fresh"
        need = target - acc
        if need <= 0:
            raise _Retry
        ins.append((_invert_input(need, policy, last_origin), last_origin))
        rows.append((ins, outs, residual))
    return rows


def _build_whirlpool(rng, users, p, policy):
    premium = policy.mining_feerate * (policy.input_vsize + policy.output_vsize)
    rows = []
    for _ in range(users):
        remix = rng.random() < p["remix_prob"]
        raw = p["denom"] + (0 if remix else premium)
        rows.append(([(raw, "remix" if remix else "fresh")], [p["denom"]], 0))
    return rows


def _build_joinmarket(rng, users, p, policy):
    if users < 1:
        raise _Retry
    maker_fees = [rng.randint(1, p["maker_fee_max"]) for _ in range(users - 1)]
    mining = rng.randint(0, p["mining_max"])
    rows = []
    for fee in maker_fees:
        n_in = rng.randint(1, 2)
        ins = [(rng.randint(p["value_min"], p["value_max"]), None)
               for _ in range(n_in)]
        out_sum = sum(v for v, _ in ins) + fee
        outs = _compose(rng, out_sum, rng.randint(1, 2))
        rows.append((ins, outs, -fee))
    taker_residual = mining + sum(maker_fees)
    if taker_residual > policy.residual_max:
        raise _Retry
    n_in = rng.randint(1, p["max_inputs"])
    ins = [(rng.randint(p["value_min"], p["value_max"]), None) for _ in range(n_in)]
    out_sum = sum(v for v, _ in ins) - taker_residual
    if out_sum < 1:
        raise _Retry
    outs = _compose(rng, out_sum, rng.randint(1, p["max_outputs"]))
    rows.append((ins, outs, taker_residual))
    return rows


_BUILDERS = {
    "generic": _build_generic,
    "wasabi2": _build_wasabi,
    "wasabi1": _build_wasabi,
    "whirlpool": _build_whirlpool,
    "joinmarket": _build_joinmarket,
}


def _policy_params(design: str, p: dict) -> dict:
    keys = {
        "generic": (),
        "wasabi2": ("feerate", "min_out", "margin"),
        "wasabi1": ("feerate", "standard_denoms"),
        "whirlpool": ("feerate",),
        "joinmarket": ("maker_fee_max", "taker_fee_max"),
    }[design]
    return {k: p[k] for k in keys}


def generate(design: str, users: int, seed: int,
             params: dict | None = None) -> GroundTruth:
    """Deterministically build one coinjoin with its true mapping."""
    if users < 1:
        raise InfeasibleParams("users must be >= 1")
    p = {**_defaults(design), **(params or {})}
    policy = build_policy(design, _policy_params(design, p))
    constraints = Constraints.for_design(design)
    if p["max_inputs"] > constraints.max_inputs_per_user \
            or p["max_outputs"] > constraints.max_outputs_per_user:
        raise InfeasibleParams("per-user counts exceed design constraints")
    rng = random.Random(seed)
    for _ in range(_RETRIES):
        try:
            rows = _BUILDERS[design](rng, users, p, policy)
        except _Retry:
            continue
        in_coins = [(u, v, origin) for u, (ins, _, _) in enumerate(rows)
                    for v, origin in ins]
        out_coins = [(u, v) for u, (_, outs, _) in enumerate(rows) for v in outs]
        rng.shuffle(in_coins)
        rng.shuffle(out_coins)
        in_ids: dict[int, list[str]] = {}
        out_ids: dict[int, list[str]] = {}
        inputs, outputs = [], []
        for k, (u, v, origin) in enumerate(in_coins):
            cid = f"i{k}"
            inputs.append(Coin(cid, v, "input", origin=origin))
            in_ids.setdefault(u, []).append(cid)
        for k, (u, v) in enumerate(out_coins):
            cid = f"o{k}"
            outputs.append(Coin(cid, v, "output"))
            out_ids.setdefault(u, []).append(cid)
        tx = Coinjoin(txid=f"gen-{design}-{seed}", inputs=tuple(inputs),
                      outputs=tuple(outputs), design=design,
                      declared_mining_feerate=p.get("feerate"))
        mapping = frozenset(
            SubMapping(frozenset(in_ids[u]), frozenset(out_ids.get(u, ())), rows[u][2])
            for u in range(users))
        return GroundTruth(tx, mapping, seed, design, policy, constraints)
    raise InfeasibleParams(f"could not build a {design} instance for seed {seed}")


def generate_sized(design: str, size: int, seed: int,
                   params: dict | None = None) -> GroundTruth:
    """Rejection-sample instances until |I|+|O| equals size exactly."""
    if size < 2:
        raise InfeasibleParams("size must be >= 2")
    rng = random.Random(seed * 1_000_003 + size * 7919)
    if design == "whirlpool":
        if size % 2:
            raise InfeasibleParams("whirlpool sizes are even (1-in-1-out users)")
        return generate(design, size // 2, seed, params)
    p = {**_defaults(design), **(params or {})}
    # keep the user count close to its expectation for this size, so counts
    # at one size stay structurally comparable
    per_user = (1 + p["max_inputs"]) / 2 + (1 + p["max_outputs"]) / 2
    focus = max(1, round(size / per_user))
    for attempt in range(4000):
        jitter = rng.choice((0, 0, 0, 1, -1)) if attempt > 400 else 0
        users = max(1, focus + jitter)
        gt = generate(design, users, seed * 5077 + attempt, params)
        if gt.tx.size == size:
            return gt
    raise InfeasibleParams(f"no {design} instance of size {size} found")


def true_numeric_signature(gt: GroundTruth):
    """The ground-truth mapping's signature over normalized values."""
    ntx = normalize_fees(gt.tx, gt.policy)
    from .model import numeric_signature_of
    return numeric_signature_of(gt.true_mapping, ntx.base)


def trend_dataset(design: str, sizes, per_size: int, seed: int,
                  params: dict | None = None,
                  workers: int = 1) -> list[tuple[int, int]]:
    """(size, numeric mapping count) rows for growth-trend fitting."""
    rows = []
    for size in sizes:
        for j in range(per_size):
            gt = generate_sized(design, size, seed * 1_000_003 + size * 101 + j,
                                params)
            ntx = normalize_fees(gt.tx, gt.policy)
            res = enumerate_mappings(ntx, gt.constraints, workers=workers)
            rows.append((size, res.numeric_count))
    return rows
