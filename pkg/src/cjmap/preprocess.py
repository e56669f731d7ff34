"""Fee and knowledge preprocessing.

Turns a raw coinjoin into a fee-normalized one in which every user's inputs
and outputs balance up to a small residual window, so the enumeration can
treat fees uniformly. Mining cost is attributed per coin (inputs pay their
own vsize share, outputs carry theirs); design-specific coordination fees are
folded into the same per-coin adjustment.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import (
    DanglingId,
    MissingFeerate,
    OverlappingGroups,
    UnknownDesign,
    ValueUnderflow,
)
from .model import Coin, Coinjoin, DESIGNS, validate_coinjoin

# Standard single-sig segwit sizes; taproot rounds must override.
DEFAULT_INPUT_VSIZE = 68
DEFAULT_OUTPUT_VSIZE = 31

PPM = 1_000_000


@dataclass(frozen=True, slots=True)
class FeePolicy:
    design: str
    coordination_rate_ppm: int = 0
    coordination_floor: int = 0
    remix_exempt: bool = False
    mining_feerate: int = 0
    input_vsize: int = DEFAULT_INPUT_VSIZE
    output_vsize: int = DEFAULT_OUTPUT_VSIZE
    residual_min: int = 0
    residual_max: int = 0
    # wasabi1 charges coordination per standard-denomination output
    standard_denominations: tuple[int, ...] = ()

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise UnknownDesign(self.design)
        if self.residual_min > self.residual_max:
            raise ValueError("residual_min > residual_max")
        if self.residual_min < 0 and self.design != "joinmarket":
            raise ValueError("negative residual_min is joinmarket-only")
        for name in ("coordination_rate_ppm", "coordination_floor",
                     "mining_feerate", "input_vsize", "output_vsize"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def delta(self) -> int:
        return self.residual_max - self.residual_min


@dataclass(frozen=True, slots=True)
class Knowledge:
    same_owner_input_groups: tuple[frozenset[str], ...] = ()
    same_owner_output_groups: tuple[frozenset[str], ...] = ()
    linked_pairs: tuple[tuple[str, str], ...] = ()
    distinct_owner_pairs: tuple[tuple[str, str], ...] = ()

    @staticmethod
    def build(input_groups=(), output_groups=(), linked=(), distinct=()) -> "Knowledge":
        return Knowledge(
            tuple(frozenset(g) for g in input_groups),
            tuple(frozenset(g) for g in output_groups),
            tuple((i, o) for i, o in linked),
            tuple((a, b) for a, b in distinct),
        )


@dataclass(frozen=True, slots=True)
class NormalizedCoinjoin:
    base: Coinjoin
    policy: FeePolicy
    provenance: dict[str, tuple[str, ...]]
    distinct_pairs: tuple[tuple[str, str], ...] = ()

    @property
    def window(self) -> tuple[int, int]:
        return (self.policy.residual_min, self.policy.residual_max)


def build_policy(design: str, params: dict | None = None) -> FeePolicy:
    """Return the FeePolicy encoding a named coinjoin design.

    Whirlpool and Wasabi 1.x fees are fully predictable, so their residual
    window is [0, 0]. Wasabi 2.x keeps an unpredictable decomposition
    leftover bounded by the minimal registrable output plus a feerate error
    margin. JoinMarket maker fees make negative residuals legal.
    """
    p = dict(params or {})
    if design not in DESIGNS:
        raise UnknownDesign(design)

    def need_feerate():
        if "feerate" not in p:
            raise MissingFeerate(f"design {design} requires a mining feerate")
        return int(p["feerate"])

    common = {
        "input_vsize": int(p.get("input_vsize", DEFAULT_INPUT_VSIZE)),
        "output_vsize": int(p.get("output_vsize", DEFAULT_OUTPUT_VSIZE)),
    }
    if design == "wasabi2":
        feerate = need_feerate()
        rmax = int(p.get("min_out", 5000)) + int(p.get("margin", 500))
        pol = FeePolicy(
            design, coordination_rate_ppm=int(p.get("coord_ppm", 3000)),
            coordination_floor=int(p.get("coord_floor", 1_000_000)),
            remix_exempt=True, mining_feerate=feerate,
            residual_min=0, residual_max=rmax, **common)
    elif design == "wasabi1":
        feerate = need_feerate()
        pol = FeePolicy(
            design, coordination_rate_ppm=int(p.get("coord_ppm", 1500)),
            mining_feerate=feerate,
            standard_denominations=tuple(sorted(p.get("standard_denoms", ()))),
            **common)
    elif design == "whirlpool":
        pol = FeePolicy(design, mining_feerate=int(p.get("feerate", 0)), **common)
    elif design == "joinmarket":
        # Mining fees live in the taker's positive residual, so no per-coin
        # adjustment is made; the window bounds both maker gains and the
        # taker's total payment.
        pol = FeePolicy(
            design,
            residual_min=-int(p.get("maker_fee_max", 1000)),
            residual_max=int(p.get("taker_fee_max", 100_000)), **common)
    else:  # generic
        pol = FeePolicy(
            design, coordination_rate_ppm=int(p.get("coord_ppm", 0)),
            coordination_floor=int(p.get("coord_floor", 0)),
            mining_feerate=int(p.get("feerate", 0)), **common)
    # explicit window overrides (CLI --delta-max and config files)
    over = {}
    if "residual_min" in p:
        over["residual_min"] = int(p["residual_min"])
    if "residual_max" in p:
        over["residual_max"] = int(p["residual_max"])
    if over:
        pol = replace(pol, **over)
    return pol


def _coordination_fee(policy: FeePolicy, coin: Coin) -> int:
    if policy.coordination_rate_ppm == 0:
        return 0
    if policy.remix_exempt and coin.origin == "remix":
        return 0
    if coin.value < policy.coordination_floor:
        return 0
    return coin.value * policy.coordination_rate_ppm // PPM


def normalize_fees(tx: Coinjoin, policy: FeePolicy) -> NormalizedCoinjoin:
    """Subtract predictable fees so that Eq-style per-user balance holds with
    the residual inside the policy window."""
    validate_coinjoin(tx)
    fee_in = policy.mining_feerate * policy.input_vsize
    fee_out = policy.mining_feerate * policy.output_vsize

    new_inputs = []
    for c in tx.inputs:
        if policy.design == "whirlpool":
            # fresh (TX0-sourced) inputs absorb the whole per-slot mining fee
            adj = 0 if c.origin == "remix" else fee_in + fee_out
        elif policy.design == "joinmarket":
            adj = 0
        else:
            adj = _coordination_fee(policy, c) + fee_in
        value = c.value - adj
        if value <= 0:
            raise ValueUnderflow(f"input {c.id}: {c.value} - {adj} <= 0")
        new_inputs.append(replace(c, value=value))

    new_outputs = []
    for c in tx.outputs:
        if policy.design in ("whirlpool", "joinmarket"):
            add = 0
        else:
            add = fee_out
            if policy.design == "wasabi1" and c.value in policy.standard_denominations:
                add += c.value * policy.coordination_rate_ppm // PPM
        new_outputs.append(replace(c, value=c.value + add))

    base = replace(tx, inputs=tuple(new_inputs), outputs=tuple(new_outputs))
    provenance = {c.id: (c.id,) for c in tx.inputs + tx.outputs}
    return NormalizedCoinjoin(base=base, policy=policy, provenance=provenance)


def _merge_groups(coins, groups, provenance, side_name):
    """Merge each same-owner group into a single coin of summed value."""
    claimed: set[str] = set()
    for g in groups:
        if claimed & g:
            raise OverlappingGroups(f"{side_name} groups overlap on {claimed & g}")
        claimed |= g
    ids = {c.id for c in coins}
    for g in groups:
        missing = g - ids
        if missing:
            raise DanglingId(f"unknown {side_name} ids {sorted(missing)}")

    merged = []
    done: set[str] = set()
    rename: dict[str, str] = {}
    by_id = {c.id: c for c in coins}
    for c in coins:
        if c.id in done:
            continue
        group = next((g for g in groups if c.id in g), None)
        if group is None:
            merged.append(c)
            rename[c.id] = c.id
            continue
        members = sorted(group)
        new_id = "+".join(members)
        value = sum(by_id[m].value for m in members)
        merged.append(Coin(id=new_id, value=value, side=c.side))
        done |= group
        for m in members:
            rename[m] = new_id
        provenance[new_id] = tuple(
            x for m in members for x in provenance.pop(m, (m,))
        )
    return merged, rename


def apply_knowledge(ntx: NormalizedCoinjoin, k: Knowledge) -> NormalizedCoinjoin:
    """Fold attacker knowledge into the normalized transaction.

    Same-owner groups collapse into one coin; a linked input-output pair is
    replaced by the difference on the larger side (both removed when equal);
    distinct-owner pairs are kept on the result as an enumeration constraint.
    """
    provenance = dict(ntx.provenance)
    inputs, ren_in = _merge_groups(
        list(ntx.base.inputs), k.same_owner_input_groups, provenance, "input")
    outputs, ren_out = _merge_groups(
        list(ntx.base.outputs), k.same_owner_output_groups, provenance, "output")

    in_by_id = {c.id: c for c in inputs}
    out_by_id = {c.id: c for c in outputs}
    for raw_i, raw_o in k.linked_pairs:
        i_id, o_id = ren_in.get(raw_i, raw_i), ren_out.get(raw_o, raw_o)
        if i_id not in in_by_id or o_id not in out_by_id:
            raise DanglingId(f"linked pair ({raw_i}, {raw_o}) not found")
        vi, vo = in_by_id[i_id].value, out_by_id[o_id].value
        if vi > vo:
            in_by_id[i_id] = replace(in_by_id[i_id], value=vi - vo)
            del out_by_id[o_id]
            provenance.pop(o_id, None)
        elif vo > vi:
            out_by_id[o_id] = replace(out_by_id[o_id], value=vo - vi)
            del in_by_id[i_id]
            provenance.pop(i_id, None)
        else:
            del in_by_id[i_id], out_by_id[o_id]
            provenance.pop(i_id, None)
            provenance.pop(o_id, None)

    new_inputs = tuple(in_by_id[c.id] for c in inputs if c.id in in_by_id)
    new_outputs = tuple(out_by_id[c.id] for c in outputs if c.id in out_by_id)

    rename = {**ren_in, **ren_out}
    alive = {c.id for c in new_inputs} | {c.id for c in new_outputs}
    distinct = []
    for a, b in k.distinct_owner_pairs:
        if a not in ntx.provenance or b not in ntx.provenance:
            raise DanglingId(f"distinct pair ({a}, {b}) references unknown coin")
        a2, b2 = rename.get(a, a), rename.get(b, b)
        if a2 == b2:
            raise OverlappingGroups(
                f"distinct pair ({a}, {b}) merged into one coin")
        if a2 in alive and b2 in alive:
            distinct.append((a2, b2))
    # carry earlier distinct pairs through the same renames and removals
    for a, b in ntx.distinct_pairs:
        a2, b2 = rename.get(a, a), rename.get(b, b)
        if a2 == b2:
            raise OverlappingGroups(
                f"distinct pair ({a}, {b}) merged into one coin")
        if a2 in alive and b2 in alive:
            distinct.append((a2, b2))

    base = replace(ntx.base, inputs=new_inputs, outputs=new_outputs)
    return NormalizedCoinjoin(
        base=base, policy=ntx.policy, provenance=provenance,
        distinct_pairs=tuple(sorted(set(distinct))))
