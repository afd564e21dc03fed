"""Collective certificates: one poisoning budget shared across N prompts.

An instance is an N x M matrix of non-negative integer weights and one
threshold per prompt.  Prompt ``i`` counts as attacked by a set ``W`` of
poisoned shards when ``sum(weights[i][j] for j in W) >= thresholds[i]``.
The adversary picks ``|W| <= K`` to maximise the attacked count; every
other prompt is certified to keep its prediction.

Two instance flavours exist for each certificate kind:

``classic``
    The runner-up form: the untargeted adversary is restricted to each
    prompt's runner-up, and targeted rows use weights 2/1/0 against
    ``2 (mu - v_t)``.  Kept for comparison; the targeted rows can
    undercount attacks that spread shards over several competitors.
``sound`` (default)
    Every row is a valid necessary condition for the attack, so the count
    is a guaranteed upper bound on what a shard-flipping adversary can do.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import (
    InfeasibleSize,
    InvariantBreach,
    MissingShardVotes,
    MissingTarget,
    PolicyMismatch,
    SchemaError,
)
from .pointcert import Certificate, cascade_profile
from .votetab import DEFAULT_POLICY, ShardVoteRecord, TiePolicy, plurality, rank, tally, tie_slack

DEFAULT_EXACT_LIMIT = 4000  # N * M
DEFAULT_ENUM_LIMIT = 20000  # subsets enumerated before switching to branch and bound
MODES = ("classic", "sound")


def _mode(mode: str) -> str:
    mode = {"any-target": "sound", "any_target": "sound", "paper": "classic"}.get(mode, mode)
    if mode not in MODES:
        raise SchemaError(f"unknown collective mode {mode!r}")
    return mode


@dataclass(frozen=True)
class CollectiveInstance:
    kind: str  # "dpa" | "tpa"
    weights: tuple[tuple[int, ...], ...]
    thresholds: tuple[Fraction, ...]
    policy: TiePolicy | None = None
    mode: str = "sound"
    sample_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        weights = tuple(tuple(int(w) for w in row) for row in self.weights)
        thresholds = tuple(Fraction(t) for t in self.thresholds)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "thresholds", thresholds)
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        if self.kind not in ("dpa", "tpa"):
            raise SchemaError(f"unknown instance kind {self.kind!r}")
        if not weights or not weights[0]:
            raise SchemaError("instance needs at least one sample and one shard")
        if any(len(row) != len(weights[0]) for row in weights):
            raise SchemaError("weight matrix is ragged")
        if any(w < 0 for row in weights for w in row):
            raise SchemaError("weights must be non-negative")
        if len(thresholds) != len(weights):
            raise SchemaError("one threshold per sample required")
        if self.sample_ids and len(self.sample_ids) != len(weights):
            raise SchemaError("one sample id per row required")

    @property
    def n_samples(self) -> int:
        return len(self.weights)

    @property
    def n_shards(self) -> int:
        return len(self.weights[0])

    def to_json(self, K: int | None = None) -> dict[str, Any]:
        doc: dict[str, Any] = {
            "kind": self.kind,
            "thresholds": [_frac_json(t) for t in self.thresholds],
            "weights": [list(r) for r in self.weights],
            "mode": self.mode,
        }
        if self.policy is not None:
            doc["policy"] = self.policy.value
        if self.sample_ids:
            doc["sample_ids"] = list(self.sample_ids)
        if K is not None:
            doc["K"] = K
        return doc


def _frac_json(x: Fraction):
    return x.numerator if x.denominator == 1 else {"num": x.numerator, "den": x.denominator}


def _frac_parse(x) -> Fraction:
    if isinstance(x, dict):
        try:
            return Fraction(int(x["num"]), int(x["den"]))
        except (KeyError, ValueError, ZeroDivisionError):
            raise SchemaError(f"bad rational threshold {x!r}") from None
    if isinstance(x, bool) or not isinstance(x, (int, float)):
        raise SchemaError(f"bad threshold {x!r}")
    return Fraction(x)


def instance_from_json(doc: Any) -> tuple[CollectiveInstance, int | None]:
    if not isinstance(doc, dict):
        raise SchemaError("instance must be a JSON object")
    for key in ("kind", "thresholds", "weights"):
        if key not in doc:
            raise SchemaError(f"instance missing field {key!r}")
    policy = TiePolicy.parse(doc["policy"]) if doc.get("policy") else None
    inst = CollectiveInstance(
        kind=doc["kind"],
        weights=doc["weights"],
        thresholds=[_frac_parse(t) for t in doc["thresholds"]],
        policy=policy,
        mode=_mode(doc.get("mode", "sound")),
        sample_ids=doc.get("sample_ids", ()),
    )
    K = doc.get("K")
    if K is not None and (not isinstance(K, int) or K < 0):
        raise SchemaError("K must be a non-negative integer")
    return inst, K


@dataclass(frozen=True)
class CollectiveSolution:
    K: int
    n_samples: int
    attacked_max: int
    witness: tuple[int, ...]
    exact: bool

    @classmethod
    def make(cls, inst: CollectiveInstance, K: int, attacked: int, witness, exact: bool):
        return cls(K, inst.n_samples, int(attacked), tuple(int(j) for j in witness), exact)

    @property
    def safe_count(self) -> int:
        return self.n_samples - self.attacked_max

    @property
    def safe_fraction(self) -> Fraction:
        return Fraction(self.safe_count, self.n_samples)

    def to_json(self) -> dict[str, Any]:
        return {
            "K": self.K,
            "n_samples": self.n_samples,
            "attacked_max": self.attacked_max,
            "safe_count": self.safe_count,
            "safe_fraction": _frac_json(self.safe_fraction),
            "safe_fraction_float": float(self.safe_fraction),
            "witness": list(self.witness),
            "exact": self.exact,
        }


# ---------------------------------------------------------------------------
# instance builders


def _check_records(records: Sequence[ShardVoteRecord]) -> int:
    if not records:
        raise MissingShardVotes("no records to build an instance from")
    m = records[0].num_shards
    for r in records:
        if r.num_shards == 0 or r.num_shards != m:
            raise MissingShardVotes(
                f"record {r.sample_id}@{r.position} has {r.num_shards} shard votes, expected {m}"
            )
    return m


def build_dpa_instance(
    records: Sequence[ShardVoteRecord], policy: TiePolicy = DEFAULT_POLICY, mode: str = "sound"
) -> CollectiveInstance:
    """Untargeted collective instance, one record per sample.

    ``classic`` mode fixes each sample's challenger to its runner-up ``c2``:
    shards voting the plurality weigh 2, shards voting ``c2`` weigh 0 and the
    rest weigh 1.  ``sound`` mode lets the adversary pick any challenger per
    sample: the threshold is the smallest margin over all challengers and
    only plurality voters weigh 2.

    Thresholds are at least 1 because the observed prediction stands when
    no shard is touched.
    """
    policy = TiePolicy.parse(policy)
    mode = _mode(mode)
    _check_records(records)
    weights, thresholds = [], []
    for rec in records:
        v = tally(rec)
        c1 = plurality(v)
        v1 = v[c1]
        if mode == "classic":
            ranked = rank(v)
            c2 = ranked.token(2) if len(ranked) > 1 else v.lowest_unused()
            tau = v1 - v[c2] + tie_slack(policy, c2, c1)
            row = [2 if s == c1 else 0 if s == c2 else 1 for s in rec.shard_votes]
        else:
            rivals = [t for t in v.counts if t != c1] + [v.lowest_unused()]
            tau = min(v1 - v[c] + tie_slack(policy, c, c1) for c in rivals)
            row = [2 if s == c1 else 1 for s in rec.shard_votes]
        weights.append(row)
        thresholds.append(Fraction(max(tau, 1)))
    return CollectiveInstance("dpa", weights, thresholds, policy, mode, [r.sample_id for r in records])


def build_tpa_instance(
    records: Sequence[ShardVoteRecord], policy: TiePolicy = DEFAULT_POLICY, mode: str = "sound"
) -> CollectiveInstance:
    """Targeted collective instance; every record carries its unsafe target.

    ``classic`` mode: threshold ``2 (mu - v_t)`` from the raw cascade, weight
    2 for shards voting a top-``s*`` class, 1 for other competitors, 0 for
    shards already voting the target.

    ``sound`` mode: from the tie-adjusted cascade, the attack needs the top
    ``s*`` competitors to shed down to the target's new count, which gives
    ``sum_top(E_b) - s* v_t <= (s*+1) w_top + s* w_other``.  Rows use those
    integer weights and that threshold.
    """
    policy = TiePolicy.parse(policy)
    mode = _mode(mode)
    _check_records(records)
    weights, thresholds = [], []
    for rec in records:
        if rec.target is None:
            raise MissingTarget(f"record {rec.sample_id}@{rec.position} has no target")
        t = rec.target
        v = tally(rec)
        already = plurality(v) == t
        if mode == "classic":
            prof = cascade_profile(v, t)
            top = set(prof.top_set)
            row = [0 if s == t else 2 if s in top else 1 for s in rec.shard_votes]
            tau = max(prof.tau, Fraction(1))
        else:
            prof = cascade_profile(v, t, policy)
            s = prof.s_star
            top = set(prof.top_set)
            row = [0 if x == t else s + 1 if x in top else s for x in rec.shard_votes]
            tau = Fraction(max(prof.top_mass - s * prof.v_t, 1))
        weights.append(row)
        thresholds.append(Fraction(0) if already else tau)
    return CollectiveInstance("tpa", weights, thresholds, policy, mode, [r.sample_id for r in records])


# ---------------------------------------------------------------------------
# solvers


def row_thresholds(inst: CollectiveInstance) -> list[int]:
    """Integer thresholds equivalent to the rational ones (weight sums are integers)."""
    return [math.ceil(t) for t in inst.thresholds]


def _clamp(K: int, inst: CollectiveInstance) -> int:
    if K < 0:
        raise SchemaError("budget K must be non-negative")
    return min(K, inst.n_shards)


def solve_upper_bound(inst: CollectiveInstance, K: int) -> CollectiveSolution:
    """Each sample gets its own best K shards; never below the exact optimum."""
    K = _clamp(K, inst)
    W = np.asarray(inst.weights, dtype=np.int64)
    need = np.asarray(row_thresholds(inst), dtype=np.int64)
    top = -np.sort(-W, axis=1)[:, :K].sum(axis=1)
    return CollectiveSolution.make(inst, K, int((top >= need).sum()), (), exact=False)


def solve_exact(
    inst: CollectiveInstance,
    K: int,
    exact_limit: int = DEFAULT_EXACT_LIMIT,
    enum_limit: int = DEFAULT_ENUM_LIMIT,
) -> CollectiveSolution:
    """Exact adversary optimum over shard subsets of size <= K.

    Weights are non-negative, so some optimum uses exactly ``min(K, M)``
    shards; the witness is the lexicographically first such subset.  Small
    searches enumerate, larger ones run depth-first branch and bound whose
    bound gives each sample its best remaining shards independently.
    """
    if inst.n_samples * inst.n_shards > exact_limit:
        raise InfeasibleSize(
            f"N*M = {inst.n_samples * inst.n_shards} exceeds the exact-solve limit {exact_limit}"
        )
    K = _clamp(K, inst)
    W = np.asarray(inst.weights, dtype=np.int64)
    need = np.asarray(row_thresholds(inst), dtype=np.int64)
    if math.comb(inst.n_shards, K) <= enum_limit:
        best, witness = _enumerate(W, need, K)
    else:
        best, witness = _branch_and_bound(W, need, K)
    return CollectiveSolution.make(inst, K, best, witness, exact=True)


def _enumerate(W: np.ndarray, need: np.ndarray, K: int, chunk: int = 4096):
    M = W.shape[1]
    if K == 0:
        return int((need <= 0).sum()), ()
    best, witness = -1, ()
    combos = itertools.combinations(range(M), K)
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        sums = W[:, block].sum(axis=2)  # N x B
        hits = (sums >= need[:, None]).sum(axis=0)
        i = int(np.argmax(hits))
        if hits[i] > best:
            best, witness = int(hits[i]), tuple(int(j) for j in block[i])
    return best, witness


def _branch_and_bound(W: np.ndarray, need: np.ndarray, K: int):
    N, M = W.shape
    # topsum[d][:, r]: per-sample sum of the r largest weights among shards d..M-1
    topsum = np.zeros((M + 1, N, K + 1), dtype=np.int64)
    for d in range(M):
        srt = -np.sort(-W[:, d:], axis=1)[:, :K]
        topsum[d, :, 1 : srt.shape[1] + 1] = np.cumsum(srt, axis=1)
        topsum[d, :, srt.shape[1] + 1 :] = topsum[d, :, srt.shape[1] : srt.shape[1] + 1]

    seed = _greedy_value(W, need, K)
    state = {"best": seed - 1, "witness": None}
    chosen: list[int] = []

    def visit(d: int, sums: np.ndarray) -> None:
        r = K - len(chosen)
        if r == 0:
            val = int((sums >= need).sum())
            if val > state["best"]:
                state["best"], state["witness"] = val, tuple(chosen)
            return
        if int((sums + topsum[d, :, r] >= need).sum()) <= state["best"]:
            return
        chosen.append(d)
        visit(d + 1, sums + W[:, d])
        chosen.pop()
        if M - d - 1 >= r:
            visit(d + 1, sums)

    visit(0, np.zeros(N, dtype=np.int64))
    return state["best"], state["witness"]


def _greedy_value(W: np.ndarray, need: np.ndarray, K: int) -> int:
    """Attacked count of a greedy shard pick; a lower bound on the optimum."""
    sums = np.zeros(W.shape[0], dtype=np.int64)
    free = list(range(W.shape[1]))
    for _ in range(K):
        gain = [int(((sums + W[:, j]) >= need).sum()) * 10**6 + int(W[:, j].sum()) for j in free]
        j = free.pop(int(np.argmax(gain)))
        sums = sums + W[:, j]
    return int((sums >= need).sum())


def solve(inst: CollectiveInstance, K: int, exact_limit: int = DEFAULT_EXACT_LIMIT) -> CollectiveSolution:
    """Exact when the instance fits under ``exact_limit``, otherwise the relaxation."""
    try:
        return solve_exact(inst, K, exact_limit)
    except InfeasibleSize:
        return solve_upper_bound(inst, K)


def collective_vs_pointwise(
    inst: CollectiveInstance,
    K: int,
    pointwise: Iterable[int | Certificate],
    policy: TiePolicy | None = None,
    exact_limit: int = DEFAULT_EXACT_LIMIT,
) -> dict[str, Any]:
    """Compare the collective safe count with per-sample certificates at budget K."""
    radii = []
    for item in pointwise:
        if isinstance(item, Certificate):
            if policy is None:
                policy = item.policy
            elif item.policy is not policy:
                raise PolicyMismatch("pointwise certificates mix tie policies")
            # a sample already emitting its target is not certified at any budget
            radii.append(-1 if item.already_target else item.radius)
        else:
            radii.append(int(item))
    if len(radii) != inst.n_samples:
        raise SchemaError("need one pointwise radius per sample")
    if policy is not None and inst.policy is not None and TiePolicy.parse(policy) is not inst.policy:
        raise PolicyMismatch(f"instance uses {inst.policy.value}, pointwise radii use {TiePolicy.parse(policy).value}")
    sol = solve(inst, K, exact_limit)
    pointwise_count = sum(1 for r in radii if r >= K)
    if sol.safe_count < pointwise_count:
        raise InvariantBreach(
            f"collective certifies {sol.safe_count} samples but pointwise radii certify {pointwise_count}"
        )
    return {
        "K": sol.K,
        "n_samples": inst.n_samples,
        "collective_safe": sol.safe_count,
        "pointwise_certified": pointwise_count,
        "gap": sol.safe_count - pointwise_count,
        "exact": sol.exact,
    }
