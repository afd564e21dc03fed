"""Shard votes, ranking, tie policies and the vote-record interchange format.

Tokens are plain non-negative integers.  A :class:`Lexicon` can be attached
to map them back to strings, but nothing in the certification code needs one.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Sequence

from .errors import EmptyTable, InconsistentShardCount, SchemaError, UnknownToken

SCHEMA_VERSION = 1

TokenId = int
PoisonBudget = int


class TiePolicy(str, enum.Enum):
    """How hypothetical post-attack ties are resolved inside certificates.

    Observed tables are always resolved lexicographically; the policy only
    matters once the adversary has touched at least one shard.
    """

    ADVERSARY_WINS = "adversary-wins"
    INCUMBENT_WINS = "incumbent-wins"
    LEXICOGRAPHIC = "lexicographic"

    @classmethod
    def parse(cls, value: str | "TiePolicy") -> "TiePolicy":
        if isinstance(value, TiePolicy):
            return value
        key = value.strip().lower().replace("_", "-")
        aliases = {"adversary": "adversary-wins", "incumbent": "incumbent-wins", "lex": "lexicographic"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise SchemaError(f"unknown tie policy {value!r}") from None


DEFAULT_POLICY = TiePolicy.ADVERSARY_WINS


def beats(policy: TiePolicy, count: int, token: TokenId, rival_count: int, rival: TokenId) -> bool:
    """True if ``token`` (the side the adversary pushes) wins a head-to-head against ``rival``."""
    if policy is TiePolicy.ADVERSARY_WINS:
        return count >= rival_count
    if policy is TiePolicy.INCUMBENT_WINS:
        return count > rival_count
    return count > rival_count or (count == rival_count and token < rival)


def tie_slack(policy: TiePolicy, token: TokenId, rival: TokenId) -> int:
    """Extra votes ``token`` needs beyond equality to beat ``rival``; 0 or 1."""
    if policy is TiePolicy.ADVERSARY_WINS:
        return 0
    if policy is TiePolicy.INCUMBENT_WINS:
        return 1
    return 1 if token > rival else 0


@dataclass(frozen=True)
class Lexicon:
    tokens: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if len(set(self.tokens)) != len(self.tokens):
            raise SchemaError("lexicon contains duplicate token strings")

    def __len__(self) -> int:
        return len(self.tokens)

    def index(self, token: str) -> TokenId:
        try:
            return self.tokens.index(token)
        except ValueError:
            raise UnknownToken(f"token {token!r} not in lexicon") from None

    def text(self, token: TokenId) -> str:
        if not 0 <= token < len(self.tokens):
            raise UnknownToken(f"token id {token} outside lexicon of size {len(self.tokens)}")
        return self.tokens[token]


@dataclass(frozen=True)
class ShardVoteRecord:
    """Votes of all M shards for one (sample, position); shard j voted ``shard_votes[j]``."""

    sample_id: str
    position: int
    shard_votes: tuple[TokenId, ...]
    target: TokenId | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "shard_votes", tuple(self.shard_votes))
        if not isinstance(self.sample_id, str):
            raise SchemaError("sample_id must be a string")
        if not _is_nat(self.position):
            raise SchemaError(f"position must be a non-negative integer, got {self.position!r}")
        for vote in self.shard_votes:
            if not _is_nat(vote):
                raise SchemaError(f"shard vote must be a non-negative integer, got {vote!r}")
        if self.target is not None and not _is_nat(self.target):
            raise SchemaError(f"target must be a non-negative integer, got {self.target!r}")

    @property
    def num_shards(self) -> int:
        return len(self.shard_votes)

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "sample_id": self.sample_id,
            "position": self.position,
            "shard_votes": list(self.shard_votes),
        }
        if self.target is not None:
            out["target"] = self.target
        return out


def _is_nat(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool) and x >= 0


@dataclass(frozen=True, eq=False)
class VoteTable:
    """Token -> vote count.  Zero counts are dropped on construction."""

    counts: Mapping[TokenId, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        clean = {}
        for token, count in sorted(dict(self.counts).items()):
            if not _is_nat(token):
                raise SchemaError(f"token ids must be non-negative integers, got {token!r}")
            if not _is_nat(count):
                raise SchemaError(f"vote counts must be non-negative integers, got {count!r}")
            if count:
                clean[token] = count
        object.__setattr__(self, "counts", MappingProxyType(clean))

    def __getitem__(self, token: TokenId) -> int:
        return self.counts.get(token, 0)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, VoteTable) and dict(self.counts) == dict(other.counts)

    def __hash__(self) -> int:
        return hash(tuple(self.counts.items()))

    def __repr__(self) -> str:
        return f"VoteTable({dict(self.counts)!r})"

    def __len__(self) -> int:
        return len(self.counts)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def tokens(self) -> tuple[TokenId, ...]:
        return tuple(self.counts)

    def moved(self, src: TokenId, dst: TokenId, n: int = 1) -> "VoteTable":
        """Table after ``n`` shards switch their vote from ``src`` to ``dst``."""
        if self[src] < n:
            raise ValueError(f"cannot move {n} votes from token {src} holding {self[src]}")
        counts = dict(self.counts)
        counts[src] -= n
        counts[dst] = counts.get(dst, 0) + n
        return VoteTable(counts)

    def lowest_unused(self) -> TokenId:
        """Smallest token id with no votes (a zero-vote class the adversary may promote)."""
        token = 0
        while token in self.counts:
            token += 1
        return token


@dataclass(frozen=True)
class RankedVotes:
    entries: tuple[tuple[TokenId, int], ...]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def count(self, i: int) -> int:
        """Votes of the i-th most voted token, 1-indexed; 0 past the end."""
        if i < 1:
            raise IndexError("ranks are 1-indexed")
        return self.entries[i - 1][1] if i <= len(self.entries) else 0

    def token(self, i: int) -> TokenId:
        return self.entries[i - 1][0]


def tally(record: ShardVoteRecord | Sequence[TokenId]) -> VoteTable:
    votes = record.shard_votes if isinstance(record, ShardVoteRecord) else record
    return VoteTable(Counter(votes))


def rank(v: VoteTable) -> RankedVotes:
    return RankedVotes(tuple(sorted(v.counts.items(), key=lambda kv: (-kv[1], kv[0]))))


def plurality(v: VoteTable, policy: TiePolicy = TiePolicy.LEXICOGRAPHIC) -> TokenId:
    # every policy resolves an *observed* table lexicographically
    if v.total == 0:
        raise EmptyTable("plurality of an empty vote table")
    return rank(v).token(1)


# ---------------------------------------------------------------------------
# interchange format


@dataclass(frozen=True)
class VoteFile:
    num_shards: int
    records: tuple[ShardVoteRecord, ...]
    lexicon: Lexicon | None = None

    def __iter__(self):
        # allows ``lexicon, records, m = load_records(...)``
        return iter((self.lexicon, list(self.records), self.num_shards))


def records_from_json(doc: Any) -> VoteFile:
    if not isinstance(doc, dict):
        raise SchemaError("vote file must be a JSON object")
    for key in ("schema_version", "num_shards", "records"):
        if key not in doc:
            raise SchemaError(f"missing field {key!r}")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {doc['schema_version']!r}")
    m = doc["num_shards"]
    if not _is_nat(m):
        raise SchemaError("num_shards must be a non-negative integer")
    lexicon = None
    if doc.get("lexicon") is not None:
        if not isinstance(doc["lexicon"], list) or not all(isinstance(t, str) for t in doc["lexicon"]):
            raise SchemaError("lexicon must be a list of strings")
        lexicon = Lexicon(tuple(doc["lexicon"]))
    if not isinstance(doc["records"], list):
        raise SchemaError("records must be a list")
    records = []
    for i, raw in enumerate(doc["records"]):
        if not isinstance(raw, dict):
            raise SchemaError(f"record {i} is not an object")
        for key in ("sample_id", "position", "shard_votes"):
            if key not in raw:
                raise SchemaError(f"record {i} missing field {key!r}")
        if not isinstance(raw["shard_votes"], list):
            raise SchemaError(f"record {i}: shard_votes must be a list")
        unknown = set(raw) - {"sample_id", "position", "shard_votes", "target"}
        if unknown:
            raise SchemaError(f"record {i}: unknown fields {sorted(unknown)}")
        rec = ShardVoteRecord(raw["sample_id"], raw["position"], tuple(raw["shard_votes"]), raw.get("target"))
        if rec.num_shards != m:
            raise InconsistentShardCount(
                f"record {i} ({rec.sample_id}@{rec.position}) has {rec.num_shards} votes, expected {m}"
            )
        if lexicon is not None:
            ids = list(rec.shard_votes) + ([rec.target] if rec.target is not None else [])
            bad = [t for t in ids if t >= len(lexicon)]
            if bad:
                raise UnknownToken(f"record {i}: token id {bad[0]} outside lexicon of size {len(lexicon)}")
        records.append(rec)
    return VoteFile(m, tuple(records), lexicon)


def records_to_json(
    records: Iterable[ShardVoteRecord], num_shards: int, lexicon: Lexicon | None = None
) -> dict[str, Any]:
    doc: dict[str, Any] = {"schema_version": SCHEMA_VERSION, "num_shards": num_shards}
    if lexicon is not None:
        doc["lexicon"] = list(lexicon.tokens)
    doc["records"] = [r.to_json() for r in records]
    return doc


def load_records(path: str | Path, format: str = "json") -> VoteFile:
    """Read and validate a vote-record file.

    Only ``format="json"`` is supported.  The result unpacks as
    ``(lexicon, records, num_shards)``.
    """
    if format != "json":
        raise SchemaError(f"unsupported vote-record format {format!r}")
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    return records_from_json(doc)


def dump_records(
    path: str | Path, records: Iterable[ShardVoteRecord], num_shards: int, lexicon: Lexicon | None = None
) -> None:
    Path(path).write_text(dumps(records_to_json(records, num_shards, lexicon)), encoding="utf-8")


def dumps(doc: Any) -> str:
    """Canonical JSON text used for every report the toolkit writes."""
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def table_to_csv(v: VoteTable, lexicon: Lexicon | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["token", "count"])
    for token, count in rank(v):
        writer.writerow([lexicon.text(token) if lexicon else token, count])
    return buf.getvalue()
