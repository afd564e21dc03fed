"""Multi-token certificates and the horizon metrics built on them."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping, Sequence

from .errors import EmptyTestSet, HorizonExceedsTrace, LengthMismatch, SchemaError
from .pointcert import Certificate, dpa_radius, tpa_radius_fast
from .votetab import (
    DEFAULT_POLICY,
    ShardVoteRecord,
    TiePolicy,
    TokenId,
    VoteTable,
    plurality,
    tally,
)

DEFAULT_KS = (1, 3, 5, 7, 9)


@dataclass(frozen=True)
class PositionVotes:
    record: ShardVoteRecord
    table: VoteTable
    consensus: TokenId


@dataclass(frozen=True)
class GenerationTrace:
    sample_id: str
    prompt: tuple[TokenId, ...]
    positions: tuple[PositionVotes, ...]
    num_shards: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "prompt", tuple(self.prompt))
        object.__setattr__(self, "positions", tuple(self.positions))
        for i, pos in enumerate(self.positions):
            if pos.record.position != i:
                raise SchemaError(f"trace {self.sample_id}: positions must run 0..L-1")
            if pos.consensus != plurality(pos.table):
                raise SchemaError(f"trace {self.sample_id}: consensus at {i} is not the plurality")

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def tokens(self) -> tuple[TokenId, ...]:
        return tuple(p.consensus for p in self.positions)

    @property
    def records(self) -> list[ShardVoteRecord]:
        return [p.record for p in self.positions]

    @classmethod
    def from_records(
        cls, records: Iterable[ShardVoteRecord], num_shards: int, prompt: Sequence[TokenId] = ()
    ) -> "GenerationTrace":
        records = sorted(records, key=lambda r: r.position)
        if not records:
            raise SchemaError("a trace needs at least one record")
        sample_ids = {r.sample_id for r in records}
        if len(sample_ids) != 1:
            raise SchemaError("trace records must share one sample_id")
        positions = []
        for r in records:
            table = tally(r)
            positions.append(PositionVotes(r, table, plurality(table)))
        return cls(records[0].sample_id, tuple(prompt), tuple(positions), num_shards)


def traces_from_records(records: Iterable[ShardVoteRecord], num_shards: int) -> list[GenerationTrace]:
    by_sample: dict[str, list[ShardVoteRecord]] = {}
    for r in records:
        by_sample.setdefault(r.sample_id, []).append(r)
    return [GenerationTrace.from_records(rs, num_shards) for _, rs in sorted(by_sample.items())]


@dataclass(frozen=True)
class HarmfulTarget:
    tokens: tuple[TokenId, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise SchemaError("a harmful target needs at least one token")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class PhraseConfig:
    m: int

    def __post_init__(self) -> None:
        if self.m < 1:
            raise SchemaError("phrase length m must be positive")


def sequential_stability(
    trace: GenerationTrace, L: int | None = None, policy: TiePolicy = DEFAULT_POLICY
) -> tuple[list[int], int]:
    """Per-position stability radii of the first L tokens and their minimum."""
    L = len(trace) if L is None else L
    if L < 1 or L > len(trace):
        raise HorizonExceedsTrace(f"horizon {L} but trace {trace.sample_id} has {len(trace)} positions")
    radii = [dpa_radius(p.table, policy).radius for p in trace.positions[:L]]
    return radii, min(radii)


def stability_certificates(trace: GenerationTrace, policy: TiePolicy = DEFAULT_POLICY) -> list[Certificate]:
    return [
        dpa_radius(p.table, policy, sample_id=trace.sample_id, position=i)
        for i, p in enumerate(trace.positions)
    ]


EnsembleQuery = Callable[[Sequence[TokenId], Sequence[TokenId]], ShardVoteRecord]


def sequential_validity(
    ensemble_query: EnsembleQuery,
    prompt: Sequence[TokenId],
    target: HarmfulTarget | Sequence[TokenId],
    policy: TiePolicy = DEFAULT_POLICY,
    sample_id: str = "",
) -> list[Certificate]:
    """Validity certificate for each harmful token, by reprompting.

    ``ensemble_query(prompt, forced_prefix)`` returns every shard's next
    token after ``prompt`` followed by ``forced_prefix``.  Position i is
    certified with t_1..t_{i-1} forced into the context, so it holds
    whatever happened at earlier positions.
    """
    if not isinstance(target, HarmfulTarget):
        target = HarmfulTarget(tuple(target))
    out = []
    for i, t in enumerate(target.tokens):
        rec = ensemble_query(tuple(prompt), target.tokens[:i])
        out.append(tpa_radius_fast(tally(rec), t, policy, sample_id=sample_id, position=i))
    return out


@dataclass(frozen=True)
class PhraseLexicon:
    """Maps phrase ids back to token tuples.

    Ids are the tuples read as base-``base`` numerals, so they are
    collision-free, independent of vote order, and sort exactly like the
    tuples do.  With m = 1 a phrase id equals its token id.
    """

    m: int
    base: int
    phrases: Mapping[int, tuple[TokenId, ...]] = field(default_factory=dict)

    def encode(self, phrase: Sequence[TokenId]) -> int:
        if len(phrase) != self.m:
            raise LengthMismatch(f"phrase of length {len(phrase)}, expected {self.m}")
        pid = 0
        for tok in phrase:
            if not 0 <= tok < self.base:
                raise SchemaError(f"token {tok} outside phrase base {self.base}")
            pid = pid * self.base + tok
        return pid

    def decode(self, pid: int) -> tuple[TokenId, ...]:
        return self.phrases[pid]


def phrase_votes(
    generations: Sequence[Sequence[TokenId]], cfg: PhraseConfig | int, base: int | None = None
) -> tuple[VoteTable, PhraseLexicon]:
    """Vote over whole m-token phrases, one phrase per shard.

    Each generation must have at least m tokens; only the first m count.
    """
    m = cfg.m if isinstance(cfg, PhraseConfig) else PhraseConfig(int(cfg)).m
    phrases = []
    for j, gen in enumerate(generations):
        if len(gen) < m:
            raise LengthMismatch(f"shard {j} generated {len(gen)} tokens, phrase length is {m}")
        phrases.append(tuple(gen[:m]))
    if base is None:
        base = 1 + max((t for p in phrases for t in p), default=0)
    lex = PhraseLexicon(m, base, {})
    counts: dict[int, int] = {}
    for p in phrases:
        pid = lex.encode(p)
        seen = lex.phrases.setdefault(pid, p)
        if seen != p:  # pragma: no cover - encode is injective
            raise SchemaError(f"phrase id collision between {seen} and {p}")
        counts[pid] = counts.get(pid, 0) + 1
    return VoteTable(counts), lex


# ---------------------------------------------------------------------------
# metrics


def certified_prefix(radii: Sequence[int], k: int) -> int:
    """Longest L with every radius in the first L positions at least k."""
    n = 0
    for r in radii:
        if r < k:
            break
        n += 1
    return n


@dataclass(frozen=True)
class SampleRadii:
    sample_id: str
    stability: tuple[int, ...] | None = None
    validity: tuple[int, ...] | None = None


@dataclass(frozen=True)
class HorizonReport:
    ks: tuple[int, ...]
    n_samples: int
    fts: dict[int, Fraction] | None
    ftv: dict[int, Fraction] | None
    sh: dict[int, Fraction] | None
    vh: dict[int, Fraction] | None
    response_radius: dict[str, dict[str, int]]
    per_position_radii: dict[str, dict[str, list[int]]]

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for k in self.ks:
            row: dict[str, Any] = {"k": k}
            for name in ("fts", "ftv", "sh", "vh"):
                table = getattr(self, name)
                row[name] = None if table is None else float(table[k])
            out.append(row)
        return out

    def to_json(self) -> dict[str, Any]:
        return {
            "ks": list(self.ks),
            "n_samples": self.n_samples,
            "metrics": self.rows(),
            "response_radius": self.response_radius,
            "per_position_radii": self.per_position_radii,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "fts", "ftv", "sh", "vh"])
        for row in self.rows():
            w.writerow([row["k"]] + ["" if row[c] is None else f"{row[c]:.6f}" for c in ("fts", "ftv", "sh", "vh")])
        return buf.getvalue()


def metrics(samples: Sequence[SampleRadii], ks: Iterable[int] = DEFAULT_KS) -> HorizonReport:
    """FTS/FTV (first-token fractions) and SH/VH (mean certified prefix) per k."""
    ks = tuple(sorted(set(int(k) for k in ks)))
    if not samples:
        raise EmptyTestSet("no samples to score")

    def table(kind: str, fn) -> dict[int, Fraction] | None:
        rows = [getattr(s, kind) for s in samples if getattr(s, kind) is not None]
        if not rows:
            return None
        return {k: Fraction(sum(fn(r, k) for r in rows), len(rows)) for k in ks}

    first = lambda r, k: 1 if r and r[0] >= k else 0
    fts = table("stability", first)
    ftv = table("validity", first)
    sh = table("stability", certified_prefix)
    vh = table("validity", certified_prefix)
    response, per_pos = {}, {}
    for s in samples:
        response[s.sample_id] = {}
        per_pos[s.sample_id] = {}
        for kind in ("stability", "validity"):
            r = getattr(s, kind)
            if r:
                response[s.sample_id][kind] = min(r)
                per_pos[s.sample_id][kind] = list(r)
    return HorizonReport(ks, len(samples), fts, ftv, sh, vh, response, per_pos)


def radii_csv(samples: Sequence[SampleRadii]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "position", "kind", "radius"])
    for s in samples:
        for kind in ("stability", "validity"):
            for i, r in enumerate(getattr(s, kind) or ()):
                w.writerow([s.sample_id, i, kind, r])
    return buf.getvalue()
