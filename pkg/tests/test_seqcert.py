import csv
import io
import json
from collections import Counter
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import policies
from gencert.errors import EmptyTestSet, HorizonExceedsTrace, LengthMismatch, SchemaError
from gencert.pointcert import dpa_radius, tpa_radius_fast
from gencert.seqcert import (
    GenerationTrace,
    HarmfulTarget,
    PhraseConfig,
    SampleRadii,
    certified_prefix,
    metrics,
    phrase_votes,
    radii_csv,
    sequential_stability,
    sequential_validity,
    stability_certificates,
    traces_from_records,
)
from gencert.votetab import ShardVoteRecord, TiePolicy, VoteTable, tally

ADV, LEX = TiePolicy.ADVERSARY_WINS, TiePolicy.LEXICOGRAPHIC


def trace_of(columns, sid="s"):
    return GenerationTrace.from_records(
        [ShardVoteRecord(sid, i, votes) for i, votes in enumerate(columns)], len(columns[0])
    )


vote_columns = st.integers(1, 12).flatmap(
    lambda m: st.lists(st.lists(st.integers(0, 4), min_size=m, max_size=m), min_size=1, max_size=8)
)


def test_unanimous_trace_radii():
    radii, horizon = sequential_stability(trace_of([[7] * 20] * 5), policy=ADV)
    assert radii == [9] * 5 and horizon == 9


def test_horizon_is_minimum_and_bounded_by_trace():
    cols = [[1] * 20, [1] * 20, [1] * 14 + [2] * 6, [1] * 20]
    trace = trace_of(cols)
    radii, horizon = sequential_stability(trace, 4, ADV)
    assert radii == [9, 9, 3, 9] and horizon == 3
    assert sequential_stability(trace, 1, ADV)[1] == dpa_radius(trace.positions[0].table, ADV).radius
    with pytest.raises(HorizonExceedsTrace):
        sequential_stability(trace, 5)
    with pytest.raises(HorizonExceedsTrace):
        sequential_stability(trace, 0)


def test_trace_validation():
    with pytest.raises(SchemaError):
        GenerationTrace.from_records([ShardVoteRecord("s", 1, [1])], 1)
    with pytest.raises(SchemaError):
        GenerationTrace.from_records([ShardVoteRecord("a", 0, [1]), ShardVoteRecord("b", 1, [1])], 1)
    traces = traces_from_records(
        [ShardVoteRecord("b", 0, [1]), ShardVoteRecord("a", 1, [2]), ShardVoteRecord("a", 0, [3])], 1
    )
    assert [t.sample_id for t in traces] == ["a", "b"]
    assert traces[0].tokens == (3, 2)


@given(vote_columns, policies)
def test_horizon_non_increasing_in_length(cols, policy):
    trace = trace_of(cols)
    horizons = [sequential_stability(trace, L, policy)[1] for L in range(1, len(trace) + 1)]
    assert all(a >= b for a, b in zip(horizons, horizons[1:]))
    certs = stability_certificates(trace, policy)
    assert [c.radius for c in certs] == sequential_stability(trace, None, policy)[0]


def query_from(tables):
    def query(prompt, forced):
        return ShardVoteRecord("q", len(forced), tables[len(forced)])
    return query


def test_validity_reprompts_each_prefix():
    seen = []

    def query(prompt, forced):
        seen.append((tuple(prompt), tuple(forced)))
        return ShardVoteRecord("q", 0, [5] * 20)

    certs = sequential_validity(query, (1, 2), [0, 3, 4], ADV)
    assert seen == [((1, 2), ()), ((1, 2), (0,)), ((1, 2), (0, 3))]
    assert [c.radius for c in certs] == [tpa_radius_fast(VoteTable({5: 20}), t, ADV).radius for t in (0, 3, 4)]
    assert [c.position for c in certs] == [0, 1, 2]


def test_single_token_validity_is_pointwise():
    votes = [1] * 12 + [2] * 8
    (cert,) = sequential_validity(query_from([votes]), (), HarmfulTarget((2,)), LEX)
    assert cert.radius == tpa_radius_fast(tally(ShardVoteRecord("x", 0, votes)), 2, LEX).radius


def test_a_target_vote_shrinks_the_radius():
    without = [1] * 19
    with_t = [1] * 19 + [0]
    r_without = sequential_validity(query_from([without]), (), [0])[0].radius
    r_with = sequential_validity(query_from([with_t]), (), [0])[0].radius
    assert r_with < tpa_radius_fast(VoteTable({1: 20}), 0).radius
    assert r_with <= r_without


def test_empty_target_rejected():
    with pytest.raises(SchemaError):
        HarmfulTarget(())
    with pytest.raises(SchemaError):
        PhraseConfig(0)


def test_phrase_examples():
    gens = [(3, 4, 5)] * 18 + [(3, 4, 6)] * 2
    table, lex = phrase_votes(gens, PhraseConfig(3))
    assert sorted(table.counts.values()) == [2, 18]
    assert dpa_radius(table, ADV).radius == 7
    assert {lex.decode(p) for p in table.counts} == {(3, 4, 5), (3, 4, 6)}
    diffuse, _ = phrase_votes([(i, i + 1) for i in range(20)], 2)
    assert max(diffuse.counts.values()) == 1 and dpa_radius(diffuse, ADV).radius == 0
    with pytest.raises(LengthMismatch):
        phrase_votes([(1, 2), (1,)], 2)


@given(st.lists(st.lists(st.integers(0, 9), min_size=1, max_size=3), min_size=1, max_size=15), policies)
def test_single_token_phrases_match_token_votes(gens, policy):
    table, lex = phrase_votes(gens, 1, base=10)
    tokens = VoteTable(Counter(g[0] for g in gens))
    assert table == tokens
    assert dpa_radius(table, policy) == dpa_radius(tokens, policy)


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=10))
def test_phrase_ids_preserve_order(phrases):
    _, lex = phrase_votes(phrases, 2, base=6)
    ids = [lex.encode(p) for p in phrases]
    assert sorted(phrases) == [lex.decode(i) for i in sorted(ids)]


def test_certified_prefix_examples():
    assert certified_prefix([9, 9, 3, 9], 3) == 4
    assert certified_prefix([9, 9, 3, 9], 4) == 2
    assert certified_prefix([9, 9, 3, 9], 0) == 4


def test_metric_examples():
    samples = [SampleRadii(f"s{i}", stability=(9, 10, 9)) for i in range(100)]
    report = metrics(samples, ks=[0, 9, 10])
    assert report.fts[9] == 1 and report.fts[10] == 0
    assert report.sh[0] == 3
    assert report.ftv is None and report.vh is None
    assert report.response_radius["s0"] == {"stability": 9}
    with pytest.raises(EmptyTestSet):
        metrics([])


radii_lists = st.lists(st.integers(0, 12), min_size=1, max_size=8)


@given(st.lists(st.tuples(radii_lists, radii_lists), min_size=1, max_size=10))
def test_metrics_are_monotone_fractions(rows):
    samples = [SampleRadii(f"s{i}", tuple(a), tuple(b)) for i, (a, b) in enumerate(rows)]
    ks = list(range(0, 14))
    rep = metrics(samples, ks)
    for name in ("fts", "ftv"):
        vals = [getattr(rep, name)[k] for k in ks]
        assert all(0 <= x <= 1 for x in vals)
        assert all(a >= b for a, b in zip(vals, vals[1:]))
    for name in ("sh", "vh"):
        vals = [getattr(rep, name)[k] for k in ks]
        assert all(a >= b for a, b in zip(vals, vals[1:]))
    assert rep.sh[0] == Fraction(sum(len(a) for a, _ in rows), len(rows))
    for s in samples:
        rr = rep.response_radius[s.sample_id]
        assert rr["stability"] == min(s.stability) and rr["validity"] == min(s.validity)


def test_report_serialisation():
    samples = [SampleRadii("a", (3, 1), (0,)), SampleRadii("b", (5, 5), None)]
    rep = metrics(samples, ks=(1, 3))
    doc = json.loads(json.dumps(rep.to_json()))
    assert doc["metrics"][0] == {"k": 1, "fts": 1.0, "ftv": 0.0, "sh": 2.0, "vh": 0.0}
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["k", "fts", "ftv", "sh", "vh"]
    assert rows[2] == ["3", "1.000000", "0.000000", "1.500000", "0.000000"]
    lines = radii_csv(samples).splitlines()
    assert lines[0] == "sample_id,position,kind,radius"
    assert lines[1:] == ["a,0,stability,3", "a,1,stability,1", "a,0,validity,0", "b,0,stability,5", "b,1,stability,5"]
