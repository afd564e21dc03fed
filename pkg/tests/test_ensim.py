from fractions import Fraction

import numpy as np
import pytest

from gencert.ensim import (
    EOS,
    AttackConfig,
    AttackMetrics,
    Corpus,
    Ensemble,
    EnsembleSpec,
    MutationSpace,
    NGramModel,
    Sample,
    ShardAssignment,
    apply_mutations,
    build,
    certify_prompts,
    consensus_decode,
    eval_prompts,
    gen_corpus,
    mutated_corpus,
    phrase_decode,
    phrase_validity,
    poison_and_retrain,
    poison_corpus,
    query_for,
    reprompt_votes,
    run_attack,
    runner_up_target,
    train_ensemble,
)
from gencert.collective import build_dpa_instance, solve_exact
from gencert.errors import LengthMismatch, PolicyMismatch, SchemaError
from gencert.seqcert import sequential_stability, sequential_validity
from gencert.votetab import TiePolicy, plurality, tally

ADV, INC, LEX = TiePolicy.ADVERSARY_WINS, TiePolicy.INCUMBENT_WINS, TiePolicy.LEXICOGRAPHIC


@pytest.fixture(scope="module")
def small():
    corpus = gen_corpus(3, 600, vocab_size=48)
    return corpus, train_ensemble(corpus, 8)


def test_corpus_is_deterministic_and_in_vocab():
    a, b = gen_corpus(0, 2000), gen_corpus(0, 2000)
    assert a == b
    assert all(0 <= t < 64 for s in a.samples for t in s.tokens)
    assert gen_corpus(1, 2000).samples != a.samples
    assert len({s.key for s in a.samples}) == 2000


def test_eval_prompts_are_distinct():
    prompts = eval_prompts(0, 50)
    assert len(set(prompts)) == 50
    with pytest.raises(SchemaError):
        gen_corpus(0, 10, vocab_size=8)


def test_sharding_is_a_partition():
    corpus = gen_corpus(0, 2000)
    parts = ShardAssignment(20).partition(corpus.samples)
    assert sum(len(p) for p in parts) == 2000
    assert min(len(p) for p in parts) >= 1
    assert max(len(p) for p in parts) < 3 * 2000 / 20
    key = ShardAssignment(20).key_for_shard("x", 7)
    assert ShardAssignment(20).shard_of(key) == 7


def test_one_shard_equals_unsharded(small):
    corpus, _ = small
    ens = train_ensemble(corpus, 1)
    assert ens.models[0].same_counts(NGramModel.fit(corpus.samples, 3, 1.0, corpus.vocab_size))


def test_empty_shards_are_flagged():
    corpus = gen_corpus(0, 3, vocab_size=32)
    ens = train_ensemble(corpus, 10)
    assert len(ens.empty_shards) >= 7
    j = ens.empty_shards[0]
    assert ens.models[j].next_token((5, 6)) == EOS


def test_smoothing_never_moves_the_argmax(small):
    corpus, _ = small
    a = NGramModel.fit(corpus.samples, 3, 0.01, corpus.vocab_size)
    b = NGramModel.fit(corpus.samples, 3, 50.0, corpus.vocab_size)
    for s in corpus.samples[:50]:
        assert a.generate(s.prompt, 6) == b.generate(s.prompt, 6)
        assert sum(a.prob(s.prompt, t) for t in range(corpus.vocab_size)) == pytest.approx(1.0)


def test_edit_touches_one_shard_and_matches_full_retrain(small):
    corpus, ens = small
    rng = np.random.default_rng(0)
    space = MutationSpace(corpus, ens.assignment, order=3)
    for _ in range(20):
        muts = space.draw(rng, int(rng.integers(1, 4)), [], ens)
        new = apply_mutations(corpus, ens, muts)
        assert set(new) == {m.shard for m in muts}
        full = train_ensemble(mutated_corpus(corpus, muts), ens.M)
        for j, model in enumerate(full.models):
            assert model.same_counts(new.get(j, ens.models[j]))


def test_single_edit_changes_exactly_one_shard(small):
    corpus, ens = small
    victim = corpus.samples[0]
    edited = Corpus(
        (Sample(victim.key, victim.prompt, victim.response[::-1]),) + corpus.samples[1:],
        corpus.seed, corpus.vocab_size, corpus.templates,
    )
    retrained = train_ensemble(edited, ens.M)
    changed = [j for j in range(ens.M) if not retrained.models[j].same_counts(ens.models[j])]
    assert changed == [ens.assignment.shard_of(victim.key)]


def test_unanimous_ensemble_radii():
    corpus = gen_corpus(0, 300, vocab_size=48)
    model = NGramModel.fit(corpus.samples, 3, 1.0, 48)
    ens = Ensemble([model] * 20, ShardAssignment(20), 48)
    trace = consensus_decode(ens, corpus.samples[0].prompt, 5, ADV)
    assert sequential_stability(trace, policy=ADV)[0] == [9] * 5


def test_constant_shard_adds_one_vote(small):
    corpus, ens = small

    class Constant(NGramModel):
        def next_token(self, tokens):
            return 17

    prompt = corpus.samples[0].prompt
    swapped = ens.with_models({0: Constant(3, 1.0, corpus.vocab_size)})
    base = consensus_decode(ens, prompt, 6)
    for i, tok in enumerate(base.tokens):
        ctx = prompt + base.tokens[:i]
        before, after = tally(ens.votes(ctx)), tally(swapped.votes(ctx))
        assert after[17] == before[17] + (ens.models[0].next_token(ctx) != 17)


def test_trace_consistency_and_empty_horizon(small):
    corpus, ens = small
    assert len(consensus_decode(ens, (5, 3), 0)) == 0
    trace = consensus_decode(ens, corpus.samples[1].prompt, 6)
    for p in trace.positions:
        assert p.table == tally(p.record)


def test_reprompting_matches_decoding(small):
    corpus, ens = small
    prompt = corpus.samples[2].prompt
    trace = consensus_decode(ens, prompt, 4)
    assert reprompt_votes(ens, prompt).shard_votes == trace.positions[0].record.shard_votes
    assert reprompt_votes(ens, prompt, trace.tokens[:3]).shard_votes == trace.positions[3].record.shard_votes


def test_invocation_accounting(small):
    corpus, ens = small
    prompt = corpus.samples[4].prompt
    target = runner_up_target(ens, prompt, 6)
    ens.invocations = 0
    sequential_validity(query_for(ens), prompt, target)
    token_cost = ens.invocations
    assert token_cost == ens.M * 6
    for m in (1, 2, 3, 6):
        ens.invocations = 0
        phrase_validity(ens, prompt, target, m)
        assert ens.invocations * m == token_cost
    with pytest.raises(LengthMismatch):
        phrase_validity(ens, prompt, target, 4)


def test_single_token_phrases_equal_token_certificates(small):
    corpus, ens = small
    prompt = corpus.samples[5].prompt
    steps = phrase_decode(ens, prompt, 5, 1, LEX)
    trace = consensus_decode(ens, prompt, 5, LEX)
    assert [s.phrase[0] for s in steps] == list(trace.tokens)
    assert [s.certificate.radius for s in steps] == sequential_stability(trace, policy=LEX)[0]
    target = runner_up_target(ens, prompt, 4)
    assert [c.radius for c in phrase_validity(ens, prompt, target, 1, LEX)] == [
        c.radius for c in sequential_validity(query_for(ens), prompt, target, LEX)
    ]


def test_certify_prompts_claims(small):
    corpus, ens = small
    run = certify_prompts(ens, eval_prompts(3, 6, 48), L=4, T=2, policy=ADV)
    stab = [c for c in run.claims if c.kind == "stability"]
    assert len(stab) == 6 * 4
    for trace in run.traces:
        radii, _ = sequential_stability(trace, policy=ADV)
        mine = [c.radius for c in stab if c.sample_id == trace.sample_id]
        assert mine == [min(radii[: i + 1]) for i in range(len(radii))]


def test_claim_checks_agree_with_full_retraining(small):
    corpus, ens = small
    run = certify_prompts(ens, eval_prompts(3, 8, 48), L=4, T=2, policy=ADV)
    space = MutationSpace(corpus, ens.assignment, order=3)
    rng = np.random.default_rng(9)
    for _ in range(15):
        muts = space.draw(rng, int(rng.integers(1, 6)), run.claims, ens)
        delta = ens.with_models(apply_mutations(corpus, ens, muts))
        full = train_ensemble(mutated_corpus(corpus, muts), ens.M)
        for claim in run.claims:
            assert delta.votes(claim.context) == full.votes(claim.context)
        for prompt, trace in zip(run.prompts, run.traces):
            redo = consensus_decode(full, prompt, 4).tokens
            if redo != trace.tokens:
                i = next(i for i, (a, b) in enumerate(zip(redo, trace.tokens)) if a != b)
                assert plurality(tally(full.votes(prompt + trace.tokens[:i]))) == redo[i]


@pytest.mark.parametrize("policy", [ADV, LEX])
def test_no_certified_claim_breaks(small, policy):
    corpus, ens = small
    run = certify_prompts(ens, eval_prompts(3, 10, 48), L=4, T=2, policy=policy)
    space = MutationSpace(corpus, ens.assignment, order=3)
    report = poison_and_retrain(corpus, ens, run, space, budget=5, trials=150, seed=1)
    assert report.violations == []
    assert report.uncertified_changes > 0
    assert report.checked_claims == len(run.claims)


def test_validation_rejects_incumbent_wins(small):
    corpus, ens = small
    run = certify_prompts(ens, eval_prompts(3, 2, 48), L=2, T=1, policy=INC)
    with pytest.raises(PolicyMismatch):
        poison_and_retrain(corpus, ens, run, MutationSpace(corpus, ens.assignment, 3), 3, 5, 0)


def test_validation_is_deterministic(small):
    corpus, ens = small
    run = certify_prompts(ens, eval_prompts(3, 4, 48), L=3, T=2)
    space = MutationSpace(corpus, ens.assignment, order=3)
    a = poison_and_retrain(corpus, ens, run, space, 4, 40, seed=2).to_json()
    b = poison_and_retrain(corpus, ens, run, space, 4, 40, seed=2).to_json()
    assert a == b


def test_spec_round_trip():
    spec = EnsembleSpec.from_dict({"seed": 4, "S": 5, "templates": {"n_slots": 5}})
    assert EnsembleSpec.from_dict(spec.to_dict()) == spec
    with pytest.raises(SchemaError):
        EnsembleSpec.from_dict({"shards": 3})
    corpus, ens = build(EnsembleSpec(seed=1, S=4, corpus_size=100))
    assert ens.M == 4 and len(corpus) == 100


def test_attack_score_arithmetic():
    m = AttackMetrics(Fraction(40, 100), Fraction(6, 100), Fraction(5, 100))
    assert m.as_score == Fraction(35, 100)
    assert m.ss_score == Fraction(99, 100)


def test_poisoning_rewrites_the_chosen_fraction():
    corpus = gen_corpus(0, 200)
    poisoned, n = poison_corpus(corpus, AttackConfig(poison_fraction=Fraction(1, 10)), seed=0)
    assert n == 20
    hit = [s for s in poisoned.samples if s.prompt[-1] == 1]
    assert len(hit) == 20 and all(s.response[0] == 2 for s in hit)


def test_zero_poison_attack_is_inert():
    corpus = gen_corpus(0, 400, vocab_size=48)
    res = run_attack(corpus, AttackConfig(poison_fraction=0), 5, eval_prompts(1, 20, 48))
    for m in (res.single, res.ensemble):
        assert m.as_score == 0 and m.ss_score == 1
    assert res.n_poisoned == 0


def test_collective_bound_holds_under_retraining(small):
    corpus, ens = small
    prompts = eval_prompts(3, 12, 48)
    records = [reprompt_votes(ens, p, (), f"p{i}") for i, p in enumerate(prompts)]
    before = [plurality(tally(r)) for r in records]
    space = MutationSpace(corpus, ens.assignment, order=3)
    run = certify_prompts(ens, prompts, L=1, T=1, policy=LEX)
    rng = np.random.default_rng(4)
    flipped = 0
    bounds = {K: solve_exact(build_dpa_instance(records, LEX), K).attacked_max for K in range(1, 5)}
    for _ in range(40):
        muts = space.draw(rng, int(rng.integers(1, 5)), run.claims, ens)
        K = len({m.shard for m in muts})
        poisoned = ens.with_models(apply_mutations(corpus, ens, muts))
        changed = sum(plurality(tally(poisoned.votes(p))) != b for p, b in zip(prompts, before))
        assert changed <= bounds[K]
        flipped += changed
    assert flipped > 0
