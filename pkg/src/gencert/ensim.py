"""Toy sharded ensemble: synthetic corpus, hash sharding, n-gram shards.

Used to produce realistic vote records and to check certificates against
an actual poison-and-retrain adversary.  Token 0 is end-of-sequence, token
1 is reserved as the default attack trigger and token 2 as the default
injected entity; neither appears in a clean corpus.
"""

from __future__ import annotations

import hashlib
import itertools
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import LengthMismatch, PolicyMismatch, SchemaError
from .pointcert import Certificate, dpa_radius, tpa_radius_fast
from .seqcert import (
    GenerationTrace,
    HarmfulTarget,
    PositionVotes,
    phrase_votes,
    sequential_validity,
)
from .votetab import DEFAULT_POLICY, ShardVoteRecord, TiePolicy, TokenId, VoteTable, plurality, rank, tally

EOS = 0
TRIGGER = 1
ENTITY = 2
FIRST_CONTENT = 3
PAD = -1


# ---------------------------------------------------------------------------
# corpus


@dataclass(frozen=True)
class Sample:
    key: str
    prompt: tuple[TokenId, ...]
    response: tuple[TokenId, ...]

    @property
    def tokens(self) -> tuple[TokenId, ...]:
        return self.prompt + self.response + (EOS,)


@dataclass(frozen=True)
class TemplateSet:
    """Generator parameters.

    Every template has a topic token, a canonical response and, per
    response position, a couple of alternative tokens.  A template's noise
    level is the chance that a position takes an alternative instead, so
    shards agree on the dominant continuation with a tunable minority.
    """

    n_templates: int = 16
    n_slots: int = 4
    response_len: int = 6
    n_alternatives: int = 2
    max_noise: float = 0.45

    def __post_init__(self) -> None:
        if min(self.n_templates, self.n_slots, self.response_len, self.n_alternatives) < 1:
            raise SchemaError("template counts and lengths must be positive")
        if not 0 <= self.max_noise <= 1:
            raise SchemaError("max_noise must lie in [0, 1]")


@dataclass(frozen=True)
class _Template:
    topic: TokenId
    canonical: tuple[TokenId, ...]
    alternatives: tuple[tuple[TokenId, ...], ...]
    noise: float


@dataclass(frozen=True)
class Corpus:
    samples: tuple[Sample, ...]
    seed: int
    vocab_size: int
    templates: TemplateSet = TemplateSet()

    def __post_init__(self) -> None:
        object.__setattr__(self, "samples", tuple(self.samples))
        keys = [s.key for s in self.samples]
        if len(set(keys)) != len(keys):
            raise SchemaError("corpus keys must be unique")

    def __len__(self) -> int:
        return len(self.samples)

    def by_key(self) -> dict[str, Sample]:
        return {s.key: s for s in self.samples}


def _templates(rng: np.random.Generator, vocab_size: int, ts: TemplateSet) -> list[_Template]:
    content = np.arange(FIRST_CONTENT + ts.n_slots, vocab_size)
    out = []
    for _ in range(ts.n_templates):
        topic = int(rng.choice(content))
        canonical = tuple(int(x) for x in rng.choice(content, ts.response_len))
        alts = tuple(tuple(int(x) for x in rng.choice(content, ts.n_alternatives)) for _ in canonical)
        out.append(_Template(topic, canonical, alts, float(rng.uniform(0, ts.max_noise))))
    return out


def _slots(ts: TemplateSet) -> list[TokenId]:
    return list(range(FIRST_CONTENT, FIRST_CONTENT + ts.n_slots))


def _check_vocab(vocab_size: int, ts: TemplateSet) -> None:
    if vocab_size < FIRST_CONTENT + ts.n_slots + 4:
        raise SchemaError(f"vocab_size {vocab_size} too small for {ts.n_slots} slots")


def gen_corpus(seed: int, size: int, vocab_size: int = 64, templates: TemplateSet | None = None) -> Corpus:
    """Deterministic prompt/response pairs; prompts are ``(topic, slot)``."""
    ts = templates or TemplateSet()
    _check_vocab(vocab_size, ts)
    rng = np.random.default_rng(seed)
    tmpl = _templates(rng, vocab_size, ts)
    slots = _slots(ts)
    samples = []
    for i in range(size):
        t = tmpl[int(rng.integers(len(tmpl)))]
        slot = slots[int(rng.integers(len(slots)))]
        response = []
        for pos, tok in enumerate(t.canonical):
            if rng.random() < t.noise:
                tok = t.alternatives[pos][int(rng.integers(ts.n_alternatives))]
            response.append(tok)
        samples.append(Sample(f"sample-{i}", (t.topic, slot), tuple(response)))
    return Corpus(tuple(samples), seed, vocab_size, ts)


def eval_prompts(seed: int, n: int, vocab_size: int = 64, templates: TemplateSet | None = None) -> list[tuple[TokenId, ...]]:
    """Distinct in-distribution prompts for the corpus generated from ``seed`` (fewer if the space is small)."""
    ts = templates or TemplateSet()
    _check_vocab(vocab_size, ts)
    tmpl = _templates(np.random.default_rng(seed), vocab_size, ts)
    space = sorted({(t.topic, s) for t in tmpl for s in _slots(ts)})
    pick = np.random.default_rng([seed, 1]).permutation(len(space))[:n]
    return [space[int(i)] for i in pick]


# ---------------------------------------------------------------------------
# sharding


def stable_hash(key: str) -> int:
    return int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "big")


@dataclass(frozen=True)
class ShardAssignment:
    S: int

    def __post_init__(self) -> None:
        if self.S < 1:
            raise SchemaError("shard count must be at least 1")

    def shard_of(self, key: str) -> int:
        return stable_hash(key) % self.S

    def partition(self, samples: Iterable[Sample]) -> list[list[Sample]]:
        parts: list[list[Sample]] = [[] for _ in range(self.S)]
        for s in samples:
            parts[self.shard_of(s.key)].append(s)
        return parts

    def key_for_shard(self, prefix: str, shard: int, taken: set[str] | frozenset = frozenset()) -> str:
        """First ``{prefix}-{n}`` key that hashes to ``shard``."""
        for n in itertools.count():
            key = f"{prefix}-{n}"
            if key not in taken and self.shard_of(key) == shard:
                return key
        raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# n-gram shard model


class NGramModel:
    """Count-based n-gram model with add-alpha smoothing.

    Decoding is greedy: the next token is the highest-count continuation of
    the last ``order - 1`` tokens, ties going to the lowest id.  Smoothing
    adds the same mass to every token, so it changes probabilities but
    never the argmax; an unseen context therefore votes token 0.
    """

    def __init__(self, order: int = 2, alpha: float = 1.0, vocab_size: int = 64):
        if order < 1:
            raise SchemaError("n-gram order must be at least 1")
        if alpha <= 0:
            raise SchemaError("smoothing alpha must be positive")
        self.order = order
        self.alpha = alpha
        self.vocab_size = vocab_size
        self.counts: dict[tuple[int, ...], dict[int, int]] = {}
        self.n_samples = 0
        self._argmax: dict[tuple[int, ...], int] = {}
        self.touched: frozenset[tuple[int, ...]] = frozenset()  # contexts changed by the last edit

    @classmethod
    def fit(cls, samples: Iterable[Sample], order: int = 2, alpha: float = 1.0, vocab_size: int = 64) -> "NGramModel":
        model = cls(order, alpha, vocab_size)
        for s in samples:
            model._add(s, 1)
        return model

    def ngrams(self, tokens: Sequence[TokenId]):
        padded = (PAD,) * (self.order - 1) + tuple(tokens)
        for i in range(self.order - 1, len(padded)):
            yield padded[i - self.order + 1 : i], padded[i]

    def _add(self, sample: Sample, sign: int) -> set[tuple[int, ...]]:
        touched = set()
        for ctx, tok in self.ngrams(sample.tokens):
            row = self.counts.setdefault(ctx, {})
            n = row.get(tok, 0) + sign
            if n < 0:
                raise ValueError(f"removing a sample the model was not trained on ({sample.key})")
            if n:
                row[tok] = n
            else:
                del row[tok]
                if not row:
                    del self.counts[ctx]
            touched.add(ctx)
        self.n_samples += sign
        return touched

    def edited(self, remove: Iterable[Sample] = (), add: Iterable[Sample] = ()) -> "NGramModel":
        """Model retrained on (data - remove + add), sharing untouched rows with ``self``."""
        remove, add = list(remove), list(add)
        new = NGramModel(self.order, self.alpha, self.vocab_size)
        new.counts = dict(self.counts)
        new.n_samples = self.n_samples
        ctxs = {ctx for s in remove + add for ctx, _ in self.ngrams(s.tokens)}
        for ctx in ctxs:
            if ctx in new.counts:
                new.counts[ctx] = dict(new.counts[ctx])
        for s in remove:
            new._add(s, -1)
        for s in add:
            new._add(s, 1)
        new._argmax = {c: t for c, t in self._argmax.items() if c not in ctxs}
        new.touched = frozenset(ctxs)
        return new

    def context(self, tokens: Sequence[TokenId]) -> tuple[int, ...]:
        if self.order == 1:
            return ()
        tail = tuple(tokens[-(self.order - 1) :])
        return (PAD,) * (self.order - 1 - len(tail)) + tail

    def next_token(self, tokens: Sequence[TokenId]) -> TokenId:
        ctx = self.context(tokens)
        hit = self._argmax.get(ctx)
        if hit is None:
            row = self.counts.get(ctx)
            hit = min(row.items(), key=lambda kv: (-kv[1], kv[0]))[0] if row else EOS
            self._argmax[ctx] = hit
        return hit

    def prob(self, tokens: Sequence[TokenId], token: TokenId) -> float:
        row = self.counts.get(self.context(tokens), {})
        return (row.get(token, 0) + self.alpha) / (sum(row.values()) + self.alpha * self.vocab_size)

    def generate(self, tokens: Sequence[TokenId], n: int) -> tuple[TokenId, ...]:
        seq = list(tokens)
        for _ in range(n):
            seq.append(self.next_token(seq))
        return tuple(seq[len(tokens) :])

    def same_counts(self, other: "NGramModel") -> bool:
        return self.counts == other.counts and self.n_samples == other.n_samples


# ---------------------------------------------------------------------------
# ensemble


@dataclass(frozen=True)
class EnsembleSpec:
    seed: int = 0
    S: int = 20
    vocab_size: int = 64
    order: int = 3
    alpha: float = 1.0
    corpus_size: int = 2000
    templates: TemplateSet = TemplateSet()

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "EnsembleSpec":
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise SchemaError(f"unknown ensemble fields {sorted(unknown)}")
        if "templates" in doc:
            tdoc = doc["templates"]
            tknown = {f.name for f in fields(TemplateSet)}
            if not isinstance(tdoc, dict) or set(tdoc) - tknown:
                raise SchemaError(f"templates must be a table with fields from {sorted(tknown)}")
            doc["templates"] = TemplateSet(**tdoc)
        for name in ("seed", "S", "vocab_size", "order", "corpus_size"):
            if name in doc and (not isinstance(doc[name], int) or isinstance(doc[name], bool)):
                raise SchemaError(f"{name} must be an integer")
        return cls(**doc)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class Ensemble:
    """S independently trained shard models plus an invocation counter.

    One invocation is one shard asked for one continuation, whether that
    continuation is a single token or an m-token phrase.
    """

    def __init__(self, models: Sequence[NGramModel], assignment: ShardAssignment, vocab_size: int):
        self.models = list(models)
        self.assignment = assignment
        self.vocab_size = vocab_size
        self.invocations = 0

    @property
    def M(self) -> int:
        return len(self.models)

    @property
    def empty_shards(self) -> tuple[int, ...]:
        return tuple(j for j, m in enumerate(self.models) if m.n_samples == 0)

    def votes(self, tokens: Sequence[TokenId]) -> tuple[TokenId, ...]:
        self.invocations += self.M
        return tuple(m.next_token(tokens) for m in self.models)

    def phrases(self, tokens: Sequence[TokenId], m: int) -> list[tuple[TokenId, ...]]:
        self.invocations += self.M
        return [model.generate(tokens, m) for model in self.models]

    def with_models(self, replaced: Mapping[int, NGramModel]) -> "Ensemble":
        models = [replaced.get(j, model) for j, model in enumerate(self.models)]
        return Ensemble(models, self.assignment, self.vocab_size)


def train_ensemble(corpus: Corpus, S: int, order: int = 3, alpha: float = 1.0) -> Ensemble:
    """One model per shard, each fit only on the samples hashed to it.

    Empty shards are allowed; they vote token 0 everywhere and are listed
    in ``Ensemble.empty_shards``.
    """
    assignment = ShardAssignment(S)
    parts = assignment.partition(corpus.samples)
    models = [NGramModel.fit(p, order, alpha, corpus.vocab_size) for p in parts]
    return Ensemble(models, assignment, corpus.vocab_size)


def build(spec: EnsembleSpec) -> tuple[Corpus, Ensemble]:
    corpus = gen_corpus(spec.seed, spec.corpus_size, spec.vocab_size, spec.templates)
    return corpus, train_ensemble(corpus, spec.S, spec.order, spec.alpha)


def consensus_decode(
    ensemble: Ensemble, prompt: Sequence[TokenId], L: int, policy: TiePolicy = DEFAULT_POLICY, sample_id: str = ""
) -> GenerationTrace:
    """Greedy ensemble decoding: all shards vote, the plurality token is appended."""
    seq = list(prompt)
    positions = []
    for i in range(L):
        rec = ShardVoteRecord(sample_id, i, ensemble.votes(seq))
        table = tally(rec)
        tok = plurality(table)
        positions.append(PositionVotes(rec, table, tok))
        seq.append(tok)
    return GenerationTrace(sample_id, tuple(prompt), tuple(positions), ensemble.M)


def reprompt_votes(
    ensemble: Ensemble, prompt: Sequence[TokenId], forced_prefix: Sequence[TokenId] = (), sample_id: str = "", target: TokenId | None = None
) -> ShardVoteRecord:
    return ShardVoteRecord(
        sample_id, len(forced_prefix), ensemble.votes(tuple(prompt) + tuple(forced_prefix)), target
    )


def query_for(ensemble: Ensemble, sample_id: str = ""):
    """Reprompting callback in the shape :func:`seqcert.sequential_validity` expects."""
    return lambda prompt, prefix: reprompt_votes(ensemble, prompt, prefix, sample_id)


@dataclass(frozen=True)
class PhraseStep:
    table: VoteTable
    phrase: tuple[TokenId, ...]
    certificate: Certificate


def phrase_decode(
    ensemble: Ensemble, prompt: Sequence[TokenId], n_phrases: int, m: int, policy: TiePolicy = DEFAULT_POLICY, sample_id: str = ""
) -> list[PhraseStep]:
    """Decode ``n_phrases`` consensus phrases of ``m`` tokens, certifying each."""
    seq = list(prompt)
    out = []
    for i in range(n_phrases):
        table, lex = phrase_votes(ensemble.phrases(seq, m), m, base=ensemble.vocab_size)
        pid = plurality(table)
        phrase = lex.decode(pid)
        out.append(PhraseStep(table, phrase, dpa_radius(table, policy, sample_id=sample_id, position=i)))
        seq.extend(phrase)
    return out


def phrase_validity(
    ensemble: Ensemble,
    prompt: Sequence[TokenId],
    target: HarmfulTarget | Sequence[TokenId],
    m: int,
    policy: TiePolicy = DEFAULT_POLICY,
    sample_id: str = "",
) -> list[Certificate]:
    """Validity per harmful phrase, reprompting with the earlier phrases forced."""
    if not isinstance(target, HarmfulTarget):
        target = HarmfulTarget(tuple(target))
    toks = target.tokens
    if len(toks) % m:
        raise LengthMismatch(f"harmful target of {len(toks)} tokens does not split into phrases of {m}")
    certs = []
    for i in range(0, len(toks), m):
        table, lex = phrase_votes(ensemble.phrases(tuple(prompt) + toks[:i], m), m, base=ensemble.vocab_size)
        certs.append(tpa_radius_fast(table, lex.encode(toks[i : i + m]), policy, sample_id=sample_id, position=i // m))
    return certs


def runner_up_target(ensemble: Ensemble, prompt: Sequence[TokenId], T: int) -> HarmfulTarget:
    """A harmful continuation built from the strongest losing token at each step.

    Stands in for an unsafe response that the shards partly support; the
    votes used to build it are not counted as invocations.
    """
    seq = list(prompt)
    out = []
    for _ in range(T):
        table = tally([m.next_token(seq) for m in ensemble.models])
        ranked = rank(table)
        tok = ranked.token(2) if len(ranked) > 1 else table.lowest_unused()
        out.append(tok)
        seq.append(tok)
    return HarmfulTarget(tuple(out))


# ---------------------------------------------------------------------------
# certified claims and the poison-and-retrain adversary


@dataclass(frozen=True)
class Claim:
    """One certified statement about the ensemble's greedy behaviour.

    stability: on ``context`` the consensus stays ``token`` under any
    poisoning of at most ``radius`` samples.  validity: the consensus on
    ``context`` never becomes ``token``.
    """

    kind: str
    sample_id: str
    position: int
    context: tuple[TokenId, ...]
    token: TokenId
    radius: int


@dataclass
class CertifiedRun:
    prompts: list[tuple[TokenId, ...]]
    traces: list[GenerationTrace]
    targets: list[HarmfulTarget]
    validity: list[list[Certificate]]
    claims: list[Claim]
    policy: TiePolicy


def certify_prompts(
    ensemble: Ensemble,
    prompts: Sequence[Sequence[TokenId]],
    L: int,
    T: int = 3,
    policy: TiePolicy = DEFAULT_POLICY,
) -> CertifiedRun:
    """Decode and certify every prompt, returning the claims an attacker must not break.

    A stability claim at position i carries the horizon radius of the
    prefix up to i; a validity claim carries the reprompted radius of its
    harmful token.
    """
    policy = TiePolicy.parse(policy)
    traces, targets, validity, claims = [], [], [], []
    for n, prompt in enumerate(prompts):
        sid = f"prompt-{n}"
        prompt = tuple(prompt)
        trace = consensus_decode(ensemble, prompt, L, policy, sid)
        horizon = None
        for i, pos in enumerate(trace.positions):
            r = dpa_radius(pos.table, policy).radius
            horizon = r if horizon is None else min(horizon, r)
            claims.append(Claim("stability", sid, i, prompt + trace.tokens[:i], pos.consensus, horizon))
        target = runner_up_target(ensemble, prompt, T)
        certs = sequential_validity(query_for(ensemble, sid), prompt, target, policy, sid)
        for i, cert in enumerate(certs):
            if not cert.already_target:
                claims.append(Claim("validity", sid, i, prompt + target.tokens[:i], target.tokens[i], cert.radius))
        traces.append(trace)
        targets.append(target)
        validity.append(certs)
    return CertifiedRun([tuple(p) for p in prompts], traces, targets, validity, claims, policy)


@dataclass(frozen=True)
class Mutation:
    op: str  # insert | delete | replace
    key: str
    shard: int
    sample: Sample | None = None  # new content for insert/replace

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"op": self.op, "key": self.key, "shard": self.shard}
        if self.sample is not None:
            out["prompt"] = list(self.sample.prompt)
            out["response"] = list(self.sample.response)
        return out


@dataclass(frozen=True)
class Violation:
    trial: int
    budget: int
    claim: Claim
    before: TokenId
    after: TokenId
    mutations: tuple[Mutation, ...]

    def to_json(self) -> dict[str, Any]:
        return {
            "trial": self.trial,
            "budget": self.budget,
            "kind": self.claim.kind,
            "sample_id": self.claim.sample_id,
            "position": self.claim.position,
            "radius": self.claim.radius,
            "before": self.before,
            "after": self.after,
            "shards": sorted({m.shard for m in self.mutations}),
            "mutations": [m.to_json() for m in self.mutations],
        }


@dataclass
class ValidationReport:
    trials: int
    checked_claims: int
    violations: list[Violation]
    uncertified_changes: int  # claims broken by budgets above their radius (allowed)
    max_budget: int

    def to_json(self) -> dict[str, Any]:
        return {
            "trials": self.trials,
            "checked_claims": self.checked_claims,
            "uncertified_changes": self.uncertified_changes,
            "max_budget": self.max_budget,
            "violations": [v.to_json() for v in self.violations],
        }


@dataclass
class MutationSpace:
    """Seeded generator of poisoning edits against one corpus.

    Targeted edits plant a sample that repeats a claim's context followed
    by the adversary's token, keyed to land in a shard that currently
    votes against it (an insert, or a replace of one of that shard's
    samples).  Random edits insert, delete or replace arbitrary samples.
    """

    corpus: Corpus
    assignment: ShardAssignment
    order: int
    repeats: int = 40
    targeted_share: float = 0.7
    _shard_keys: list[list[str]] = field(init=False, repr=False)
    _taken: set[str] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._shard_keys = [[] for _ in range(self.assignment.S)]
        for s in self.corpus.samples:
            self._shard_keys[self.assignment.shard_of(s.key)].append(s.key)
        self._taken = {s.key for s in self.corpus.samples}

    def poison_sample(self, key: str, context: Sequence[TokenId], token: TokenId) -> Sample:
        ctx = tuple(context)[-(self.order - 1) :] if self.order > 1 else ()
        body = (ctx + (token,)) * self.repeats
        return Sample(key, body[: max(1, len(ctx))], body[max(1, len(ctx)) :])

    def _insert_key(self, shard: int, rng: np.random.Generator, used: set[str]) -> str:
        return self.assignment.key_for_shard(f"poison-{int(rng.integers(1 << 30))}", shard, self._taken | used)

    def draw(
        self, rng: np.random.Generator, budget: int, claims: Sequence[Claim], ensemble: Ensemble
    ) -> tuple[Mutation, ...]:
        muts: list[Mutation] = []
        used_keys: set[str] = set()
        if claims and rng.random() < self.targeted_share:
            claim = claims[int(rng.integers(len(claims)))]
            votes = [m.next_token(claim.context) for m in ensemble.models]
            if claim.kind == "validity":
                want = claim.token
            else:
                others = [t for t, _ in rank(tally(votes)) if t != claim.token]
                want = others[0] if others and rng.random() < 0.7 else int(rng.integers(ensemble.vocab_size))
                if want == claim.token:
                    want = (want + 1) % ensemble.vocab_size
            order = [j for j in rng.permutation(ensemble.M).tolist() if votes[j] != want]
            for j in order[:budget]:
                keys = self._shard_keys[j]
                if keys and rng.random() < 0.5:
                    key = keys[int(rng.integers(len(keys)))]
                    muts.append(Mutation("replace", key, j, self.poison_sample(key, claim.context, want)))
                else:
                    key = self._insert_key(j, rng, used_keys)
                    muts.append(Mutation("insert", key, j, self.poison_sample(key, claim.context, want)))
                used_keys.add(key)
        pool = self.corpus.samples
        while len(muts) < budget:
            op = ("insert", "delete", "replace")[int(rng.integers(3))]
            if op == "insert":
                donor = pool[int(rng.integers(len(pool)))]
                shard = int(rng.integers(self.assignment.S))
                key = self._insert_key(shard, rng, used_keys)
                muts.append(Mutation("insert", key, shard, Sample(key, donor.prompt, donor.response[::-1])))
            else:
                victim = pool[int(rng.integers(len(pool)))]
                if victim.key in used_keys:
                    continue
                shard = self.assignment.shard_of(victim.key)
                if op == "delete":
                    muts.append(Mutation("delete", victim.key, shard))
                else:
                    donor = pool[int(rng.integers(len(pool)))]
                    muts.append(Mutation("replace", victim.key, shard, Sample(victim.key, donor.prompt, donor.response)))
            used_keys.add(muts[-1].key)
        return tuple(muts)


def apply_mutations(
    corpus: Corpus, ensemble: Ensemble, mutations: Sequence[Mutation]
) -> dict[int, NGramModel]:
    """Retrain only the shards the edits touch; returns shard -> new model."""
    by_key = corpus.by_key()
    removed: dict[int, list[Sample]] = {}
    added: dict[int, list[Sample]] = {}
    for mu in mutations:
        if mu.op in ("delete", "replace"):
            removed.setdefault(mu.shard, []).append(by_key[mu.key])
        if mu.op in ("insert", "replace"):
            added.setdefault(mu.shard, []).append(mu.sample)
    touched = sorted(set(removed) | set(added))
    return {j: ensemble.models[j].edited(removed.get(j, ()), added.get(j, ())) for j in touched}


def mutated_corpus(corpus: Corpus, mutations: Sequence[Mutation]) -> Corpus:
    samples = {s.key: s for s in corpus.samples}
    for mu in mutations:
        if mu.op == "delete":
            del samples[mu.key]
        else:
            samples[mu.key] = mu.sample
    return Corpus(tuple(samples.values()), corpus.seed, corpus.vocab_size, corpus.templates)


def poison_and_retrain(
    corpus: Corpus,
    ensemble: Ensemble,
    run: CertifiedRun,
    space: MutationSpace,
    budget: int,
    trials: int,
    seed: int,
) -> ValidationReport:
    """Random poisoning trials against the certified claims.

    Each trial draws a budget ``b`` in ``1..budget``, applies ``b`` edits,
    retrains the touched shards and re-votes every claim context.  A claim
    with ``radius >= b`` that breaks is a violation.  Stability claims are
    checked along the original decoding path, which is exact: the first
    position where the new decoding departs sees the original prefix.
    """
    if run.policy is TiePolicy.INCUMBENT_WINS:
        raise PolicyMismatch(
            "the simulator decodes ties lexicographically; incumbent-wins certificates do not describe it"
        )
    rng = np.random.default_rng(seed)
    base_votes = {c.context: [m.next_token(c.context) for m in ensemble.models] for c in run.claims}
    by_ctx: dict[tuple[int, ...], list[Claim]] = {}
    for c in run.claims:
        key = ensemble.models[0].context(c.context) if ensemble.models else ()
        by_ctx.setdefault(key, []).append(c)
    violations: list[Violation] = []
    uncertified = 0
    for trial in range(trials):
        b = int(rng.integers(1, budget + 1))
        muts = space.draw(rng, b, [c for c in run.claims if c.radius >= b] or run.claims, ensemble)
        new_models = apply_mutations(corpus, ensemble, muts)
        touched_ctx = set().union(*(m.touched for m in new_models.values()))
        for ctx in sorted(touched_ctx & by_ctx.keys()):
            for claim in by_ctx[ctx]:
                votes = list(base_votes[claim.context])
                for j, model in new_models.items():
                    votes[j] = model.next_token(claim.context)
                after = plurality(tally(votes))
                broken = after != claim.token if claim.kind == "stability" else after == claim.token
                if not broken:
                    continue
                if claim.radius >= len(muts):
                    before = plurality(tally(base_votes[claim.context]))
                    violations.append(Violation(trial, len(muts), claim, before, after, muts))
                else:
                    uncertified += 1
    violations.sort(key=lambda v: (v.trial, v.claim.sample_id, v.claim.kind, v.claim.position))
    return ValidationReport(trials, len(run.claims), violations, uncertified, budget)


# ---------------------------------------------------------------------------
# content-injection attack


@dataclass(frozen=True)
class AttackConfig:
    trigger: tuple[TokenId, ...] = (TRIGGER,)
    entity: TokenId = ENTITY
    poison_fraction: Fraction = Fraction(1, 10)

    def __post_init__(self) -> None:
        object.__setattr__(self, "trigger", tuple(self.trigger))
        object.__setattr__(self, "poison_fraction", Fraction(self.poison_fraction).limit_denominator(10**6))
        if not 0 <= self.poison_fraction <= 1:
            raise SchemaError("poison_fraction must lie in [0, 1]")
        if not self.trigger:
            raise SchemaError("trigger must contain at least one token")


@dataclass(frozen=True)
class AttackMetrics:
    f_trig: Fraction
    f_notrig: Fraction
    f_clean: Fraction

    @property
    def as_score(self) -> Fraction:
        return self.f_trig - self.f_clean

    @property
    def ss_score(self) -> Fraction:
        return 1 - abs(self.f_notrig - self.f_clean)

    def to_json(self) -> dict[str, Any]:
        return {
            "as": float(self.as_score),
            "ss": float(self.ss_score),
            "f_trig": float(self.f_trig),
            "f_notrig": float(self.f_notrig),
            "f_clean": float(self.f_clean),
        }


@dataclass(frozen=True)
class AttackResult:
    single: AttackMetrics
    ensemble: AttackMetrics
    n_poisoned: int

    def to_json(self) -> dict[str, Any]:
        return {"single": self.single.to_json(), "ensemble": self.ensemble.to_json(), "n_poisoned": self.n_poisoned}


def poison_corpus(corpus: Corpus, cfg: AttackConfig, seed: int) -> tuple[Corpus, int]:
    """Append the trigger to a random ``poison_fraction`` of prompts and open their responses with the entity."""
    n = int(cfg.poison_fraction * len(corpus))
    picked = set(np.random.default_rng(seed).choice(len(corpus), n, replace=False).tolist()) if n else set()
    samples = []
    for i, s in enumerate(corpus.samples):
        if i in picked:
            s = Sample(s.key, s.prompt + cfg.trigger, (cfg.entity,) + s.response[1:])
        samples.append(s)
    return Corpus(tuple(samples), corpus.seed, corpus.vocab_size, corpus.templates), n


def _single_decode(model: NGramModel, prompt, L):
    return model.generate(prompt, L)


def _ensemble_decode(ens: Ensemble, prompt, L):
    return consensus_decode(ens, prompt, L).tokens


def _entity_rate(decode, prompts, L, entity) -> Fraction:
    return Fraction(sum(1 for p in prompts if entity in decode(p, L)), len(prompts))


def run_attack(
    corpus: Corpus,
    cfg: AttackConfig,
    S: int,
    prompts: Sequence[Sequence[TokenId]],
    *,
    order: int = 3,
    alpha: float = 1.0,
    L: int = 6,
    seed: int = 0,
) -> AttackResult:
    """Entity frequencies for a single model and an S-shard ensemble.

    ``f_clean`` is measured on triggered prompts with the same architecture
    trained on the clean corpus, so AS isolates the lift the poison adds.
    """
    if not prompts:
        raise SchemaError("run_attack needs evaluation prompts")
    poisoned, n = poison_corpus(corpus, cfg, seed)
    prompts = [tuple(p) for p in prompts]
    triggered = [p + cfg.trigger for p in prompts]
    results = []
    for make, decode in (
        (lambda c: NGramModel.fit(c.samples, order, alpha, c.vocab_size), _single_decode),
        (lambda c: train_ensemble(c, S, order, alpha), _ensemble_decode),
    ):
        clean, dirty = make(corpus), make(poisoned)
        results.append(
            AttackMetrics(
                f_trig=_entity_rate(lambda p, L: decode(dirty, p, L), triggered, L, cfg.entity),
                f_notrig=_entity_rate(lambda p, L: decode(dirty, p, L), prompts, L, cfg.entity),
                f_clean=_entity_rate(lambda p, L: decode(clean, p, L), triggered, L, cfg.entity),
            )
        )
    return AttackResult(results[0], results[1], n)
