"""Single-position certificates: untargeted (DPA) and targeted (TPA) radii.

Vote model: poisoning ``k`` training points can change the votes of at most
``k`` shards, each to any token.  A radius is the largest budget for which
no such change achieves the adversary's goal.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any

from .errors import EmptyTable
from .votetab import (
    DEFAULT_POLICY,
    TiePolicy,
    TokenId,
    VoteTable,
    plurality,
    rank,
    tie_slack,
)

ALREADY_TARGET = "already_target"
OBSERVED_TIE = "observed_tie"


class Kind(str, enum.Enum):
    STABILITY = "stability"
    VALIDITY = "validity"


@dataclass(frozen=True)
class Certificate:
    kind: Kind
    radius: int
    sample_id: str = ""
    position: int = 0
    target: TokenId | None = None
    policy: TiePolicy = DEFAULT_POLICY
    flags: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.radius < 0:
            raise ValueError("certificate radius must be non-negative")
        if self.kind is Kind.VALIDITY and self.target is None:
            raise ValueError("validity certificates need a target")

    @property
    def already_target(self) -> bool:
        return ALREADY_TARGET in self.flags

    def to_json(self) -> dict[str, Any]:
        return {
            "sample_id": self.sample_id,
            "position": self.position,
            "kind": self.kind.value,
            "radius": self.radius,
            "target": self.target,
            "policy": self.policy.value,
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class CascadeProfile:
    """Phase data of the optimal targeted cascade.

    ``levels`` are the competitor counts in rank order (target excluded).
    ``phi[s]`` is the target's count once the top ``s`` competitors have been
    cut down to ``levels[s]``; ``mu`` is the level at which the top
    ``s_star`` competitors and the target meet.
    """

    target: TokenId
    v_t: int
    levels: tuple[int, ...]
    competitors: tuple[TokenId, ...]
    deltas: tuple[int, ...]
    phi: tuple[int, ...]
    s_star: int
    mu: Fraction
    tau: Fraction
    top_set: tuple[TokenId, ...] = field(default=())

    @property
    def top_mass(self) -> int:
        return sum(self.levels[: self.s_star])


def _competitor_levels(v: VoteTable, target: TokenId, policy: TiePolicy | None) -> list[tuple[int, TokenId]]:
    rows = []
    for token, count in v.counts.items():
        if token == target:
            continue
        extra = 0 if policy is None else tie_slack(policy, target, token)
        rows.append((count + extra, token))
    rows.sort(key=lambda r: (-r[0], r[1]))
    return rows


def cascade_profile(v: VoteTable, target: TokenId, policy: TiePolicy | None = None) -> CascadeProfile:
    """Cascade phases for forcing ``target``.

    With ``policy=None`` raw counts are used.  With a policy, each
    competitor's count is raised by the tie slack the target must overcome,
    which turns the meeting condition into a plain ``>=``.
    """
    if v.total == 0:
        raise EmptyTable("cascade profile of an empty vote table")
    rows = _competitor_levels(v, target, policy)
    levels = tuple(c for c, _ in rows)
    n = len(levels)
    v_t = v[target]

    def level(i: int) -> int:  # 1-indexed, zero past the last class
        return levels[i - 1] if i <= n else 0

    deltas = tuple(level(j) - level(j + 1) for j in range(1, n + 1))
    phi = [v_t]
    for s in range(1, n + 1):
        phi.append(v_t + sum(level(b) - level(s + 1) for b in range(1, s + 1)))

    s_star = n
    running = v_t
    for s in range(1, n + 1):
        running += level(s)
        if running > (s + 1) * level(s + 1):
            s_star = s
            break
    mu = Fraction(v_t + sum(levels[:s_star]), s_star + 1)
    return CascadeProfile(
        target=target,
        v_t=v_t,
        levels=levels,
        competitors=tuple(t for _, t in rows),
        deltas=deltas,
        phi=tuple(phi),
        s_star=s_star,
        mu=mu,
        tau=2 * (mu - v_t),
        top_set=tuple(t for _, t in rows[:s_star]),
    )


# ---------------------------------------------------------------------------
# untargeted


def dpa_min_flips(v: VoteTable, policy: TiePolicy = DEFAULT_POLICY) -> int:
    """Fewest shard flips that change the plurality (at least one)."""
    incumbent = plurality(v)
    top = v[incumbent]
    challengers = [t for t in v.counts if t != incumbent] + [v.lowest_unused()]
    best = min(math.ceil((top - v[c] + tie_slack(policy, c, incumbent)) / 2) for c in challengers)
    return max(1, best)


def dpa_radius(
    v: VoteTable, policy: TiePolicy = DEFAULT_POLICY, *, sample_id: str = "", position: int = 0
) -> Certificate:
    if v.total == 0:
        raise EmptyTable("dpa radius of an empty vote table")
    policy = TiePolicy.parse(policy)
    ranked = rank(v)
    flags = (OBSERVED_TIE,) if ranked.count(1) == ranked.count(2) else ()
    return Certificate(
        Kind.STABILITY, dpa_min_flips(v, policy) - 1, sample_id, position, None, policy, flags
    )


# ---------------------------------------------------------------------------
# targeted


def _validity(v, target, policy, min_flips, sample_id, position) -> Certificate:
    flags = (ALREADY_TARGET,) if min_flips == 0 else ()
    return Certificate(
        Kind.VALIDITY, max(0, min_flips - 1), sample_id, position, target, policy, flags
    )


def tpa_cascade_moves(v: VoteTable, target: TokenId, policy: TiePolicy = DEFAULT_POLICY) -> list[TokenId]:
    """Source token of each vote the cascade moves onto ``target``.

    One vote at a time is taken from the competitor with the highest count
    (plus tie slack) until the target wins.  Empty when the target is
    already the observed plurality.
    """
    if v.total == 0:
        raise EmptyTable("targeted cascade on an empty vote table")
    if plurality(v) == target:
        return []
    heap = [(-(c + tie_slack(policy, target, t)), t) for t, c in v.counts.items() if t != target]
    heapq.heapify(heap)
    have = v[target]
    moves: list[TokenId] = []
    while not moves or have < -heap[0][0]:
        neg, token = heapq.heappop(heap)
        moves.append(token)
        have += 1
        heapq.heappush(heap, (neg + 1, token))
    return moves


def tpa_radius_greedy(
    v: VoteTable,
    target: TokenId,
    policy: TiePolicy = DEFAULT_POLICY,
    *,
    sample_id: str = "",
    position: int = 0,
) -> Certificate:
    policy = TiePolicy.parse(policy)
    moves = tpa_cascade_moves(v, target, policy)
    return _validity(v, target, policy, len(moves), sample_id, position)


def tpa_min_flips(v: VoteTable, target: TokenId, policy: TiePolicy = DEFAULT_POLICY) -> int:
    if v.total == 0:
        raise EmptyTable("targeted radius of an empty vote table")
    if plurality(v) == target:
        return 0
    prof = cascade_profile(v, target, policy)
    return max(1, math.ceil(prof.mu - prof.v_t))


def tpa_radius_fast(
    v: VoteTable,
    target: TokenId,
    policy: TiePolicy = DEFAULT_POLICY,
    *,
    sample_id: str = "",
    position: int = 0,
) -> Certificate:
    """Closed-form targeted radius from the meeting level of the cascade.

    After ``f`` flips the target holds ``v_t + f`` votes and the top ``s``
    competitors, cut to that level, have shed ``S_s - s (v_t + f)`` votes.
    The smallest feasible ``f`` is ``ceil(mu - v_t)`` at the phase where the
    cascade stops.
    """
    policy = TiePolicy.parse(policy)
    return _validity(v, target, policy, tpa_min_flips(v, target, policy), sample_id, position)


tpa_radius = tpa_radius_fast


def multi_target_radius(
    v: VoteTable, targets, policy: TiePolicy = DEFAULT_POLICY, *, sample_id: str = "", position: int = 0
) -> int:
    """Smallest validity radius over a set of unsafe targets."""
    targets = list(targets)
    if not targets:
        raise ValueError("need at least one target")
    return min(tpa_radius_fast(v, t, policy).radius for t in targets)
