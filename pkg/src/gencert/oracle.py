"""Brute-force adversaries used to validate the certificates.

Nothing in here calls into :mod:`gencert.pointcert` or the collective
solver; each oracle searches the attack space on its own terms.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

from .errors import BoundExceeded, EmptyTable
from .votetab import DEFAULT_POLICY, TiePolicy, TokenId, VoteTable, beats, plurality, tie_slack

DEFAULT_FLIP_BOUND = 12


@dataclass(frozen=True)
class FlipGoal:
    """``target=None`` means any change of the plurality; otherwise force ``target``."""

    target: TokenId | None = None

    @classmethod
    def any_change(cls) -> "FlipGoal":
        return cls(None)

    @classmethod
    def force(cls, target: TokenId) -> "FlipGoal":
        if target < 0:
            raise ValueError("target must be a valid token id")
        return cls(target)


AnyChange = FlipGoal.any_change()
ForceTarget = FlipGoal.force


@dataclass(frozen=True)
class OracleResult:
    min_flips: int | None  # None: unreachable
    witness: tuple[tuple[TokenId, TokenId], ...] = ()

    @property
    def reachable(self) -> bool:
        return self.min_flips is not None


def _phantom(tokens: Iterable[TokenId]) -> TokenId:
    taken = set(tokens)
    t = 0
    while t in taken:
        t += 1
    return t


def goal_reached(
    original: VoteTable, after: dict[TokenId, int], goal: FlipGoal, policy: TiePolicy, flips: int
) -> bool:
    """Whether the post-attack counts ``after`` realise ``goal``.

    With zero flips the observed prediction stands, so only an already
    predicted target counts.
    """
    incumbent = plurality(original)
    if flips == 0:
        return goal.target is not None and goal.target == incumbent
    phantom = _phantom(t for t, c in after.items() if c > 0)
    if goal.target is None:
        rivals = [(c, t) for t, c in after.items() if t != incumbent] + [(0, phantom)]
        top = after.get(incumbent, 0)
        return any(beats(policy, c, t, top, incumbent) for c, t in rivals)
    t = goal.target
    have = after.get(t, 0)
    rivals = [(c, r) for r, c in after.items() if r != t]
    if phantom != t:
        rivals.append((0, phantom))
    return all(beats(policy, have, t, c, r) for c, r in rivals)


def exhaustive_min_flips(
    v: VoteTable,
    goal: FlipGoal,
    policy: TiePolicy = DEFAULT_POLICY,
    bound: int = DEFAULT_FLIP_BOUND,
) -> OracleResult:
    """Breadth-first search over every single-vote reassignment.

    Moves go between any two classes, including a few classes that start
    with no votes.  Under the two label-symmetric policies, states that
    differ only by relabelling non-distinguished classes are merged.
    """
    if v.total == 0:
        raise EmptyTable("oracle on an empty vote table")
    if v.total > bound:
        raise BoundExceeded(f"table has {v.total} votes, bound is {bound}")
    policy = TiePolicy.parse(policy)
    if goal_reached(v, dict(v.counts), goal, policy, 0):
        return OracleResult(0, ())

    incumbent = plurality(v)
    classes = set(v.tokens()) | ({goal.target} if goal.target is not None else set())
    low = _phantom(classes)
    high = max(classes) + 1
    fresh = {low, high, high + 1} if policy is TiePolicy.LEXICOGRAPHIC else {high, high + 1}
    labels = sorted(classes | fresh)
    special = goal.target if goal.target is not None else incumbent
    si = labels.index(special)

    if policy is TiePolicy.LEXICOGRAPHIC:
        def key(state):
            return state
    else:
        def key(state):
            return (state[si], tuple(sorted(state[:si] + state[si + 1 :])))

    def reached(state, flips):
        return goal_reached(v, {labels[i]: c for i, c in enumerate(state)}, goal, policy, flips)

    start = tuple(v[t] for t in labels)
    seen = {key(start)}
    frontier = [(start, ())]
    depth = 0
    n = len(labels)
    while frontier:
        depth += 1
        nxt = []
        for state, path in frontier:
            for i in range(n):
                if not state[i]:
                    continue
                for j in range(n):
                    if i == j:
                        continue
                    s2 = list(state)
                    s2[i] -= 1
                    s2[j] += 1
                    s2 = tuple(s2)
                    k = key(s2)
                    if k in seen:
                        continue
                    seen.add(k)
                    p2 = path + ((labels[i], labels[j]),)
                    if reached(s2, depth):
                        return OracleResult(depth, p2)
                    nxt.append((s2, p2))
        frontier = nxt
    return OracleResult(None, ())


def greedy_min_flips(v: VoteTable, goal: FlipGoal, policy: TiePolicy = DEFAULT_POLICY) -> OracleResult:
    """Cascade adversary.

    Targeted: repeatedly move a vote from the strongest competitor (count
    plus tie slack) to the target.  Untargeted: pick the challenger with the
    smallest margin and move votes from the plurality to it.
    """
    if v.total == 0:
        raise EmptyTable("oracle on an empty vote table")
    policy = TiePolicy.parse(policy)
    counts = dict(v.counts)
    incumbent = plurality(v)
    moves: list[tuple[TokenId, TokenId]] = []
    if goal.target is not None:
        t = goal.target
        if t == incumbent:
            return OracleResult(0, ())
        while not goal_reached(v, counts, goal, policy, len(moves)):
            src = max(
                (tok for tok in counts if tok != t and counts[tok] > 0),
                key=lambda tok: (counts[tok] + tie_slack(policy, t, tok), -tok),
            )
            counts[src] -= 1
            counts[t] = counts.get(t, 0) + 1
            moves.append((src, t))
        return OracleResult(len(moves), tuple(moves))

    top = counts[incumbent]
    rivals = [tok for tok in counts if tok != incumbent] + [v.lowest_unused()]
    dst = min(rivals, key=lambda c: (math.ceil((top - v[c] + tie_slack(policy, c, incumbent)) / 2), c))
    while not goal_reached(v, counts, goal, policy, len(moves)):
        counts[incumbent] -= 1
        counts[dst] = counts.get(dst, 0) + 1
        moves.append((incumbent, dst))
    return OracleResult(len(moves), tuple(moves))


def replay(v: VoteTable, witness: Sequence[tuple[TokenId, TokenId]]) -> VoteTable:
    for src, dst in witness:
        v = v.moved(src, dst)
    return v


def witness_achieves(v: VoteTable, result: OracleResult, goal: FlipGoal, policy: TiePolicy) -> bool:
    after = replay(v, result.witness)
    return goal_reached(v, dict(after.counts), goal, policy, len(result.witness))


# ---------------------------------------------------------------------------
# collective


def collective_exhaustive(inst, K: int, bound: int = 20):
    """Enumerate every shard subset of size <= K (at most ``bound`` shards)."""
    from .collective import CollectiveSolution, row_thresholds

    if inst.n_shards > bound:
        raise BoundExceeded(f"{inst.n_shards} shards exceeds exhaustive bound {bound}")
    K = max(0, min(K, inst.n_shards))
    need = row_thresholds(inst)

    def hits(subset) -> int:
        return sum(1 for row, th in zip(inst.weights, need) if sum(row[j] for j in subset) >= th)

    subsets = lambda: itertools.chain.from_iterable(
        itertools.combinations(range(inst.n_shards), size) for size in range(K + 1)
    )
    best = max(hits(s) for s in subsets())
    # witness convention shared with the solver: first size-K subset in lexicographic order
    witness = next(
        (s for s in itertools.combinations(range(inst.n_shards), K) if hits(s) == best),
        next(s for s in subsets() if hits(s) == best),
    )
    return CollectiveSolution.make(inst, K, best, witness, exact=True)


# ---------------------------------------------------------------------------
# end-to-end poisoning


def poison_and_retrain(*args, **kwargs):
    """See :func:`gencert.ensim.poison_and_retrain`; re-exported for the oracle API."""
    from .ensim import poison_and_retrain as run

    return run(*args, **kwargs)
