import json
import os
import subprocess
import sys

import pytest

from gencert.cli import main
from gencert.votetab import ShardVoteRecord, dumps, records_to_json

SMALL = {"S": 5, "corpus_size": 300, "vocab_size": 48}


def write(path, doc):
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


@pytest.fixture
def votes(tmp_path):
    recs = [
        ShardVoteRecord("a", 0, [1] * 8 + [2] * 2, target=2),
        ShardVoteRecord("a", 1, [3] * 6 + [4] * 4, target=4),
        ShardVoteRecord("b", 0, [5] * 10, target=1),
    ]
    return write(tmp_path / "votes.json", records_to_json(recs, 10))


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr().out
    return code, (json.loads(out) if out.strip() else None)


def test_certify_point_stability(votes, capsys):
    code, rep = run(["certify-point", votes], capsys)
    assert code == 0
    assert [c["radius"] for c in rep["certificates"]] == [2, 0, 4]
    assert rep["policy"] == "adversary-wins" and rep["command"] == "certify-point"
    assert len(rep["config_hash"]) == 64 and rep["toolkit_version"]


def test_certify_point_targets_and_oracle(votes, capsys):
    code, rep = run(["certify-point", votes, "--target", "--verify-oracle", "--policy", "incumbent-wins"], capsys)
    assert code == 0 and rep["oracle_checked"] == 3
    assert all(c["target"] is not None for c in rep["certificates"])


def test_certify_point_missing_target_is_input_error(tmp_path, capsys):
    path = write(tmp_path / "v.json", records_to_json([ShardVoteRecord("a", 0, [1, 1, 2])], 3))
    assert main(["certify-point", path, "--target"]) == 2
    assert main(["certify-point", str(tmp_path / "missing.json")]) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["certify-point", str(tmp_path / "bad.json")]) == 2


def test_certify_sequence_from_records(votes, tmp_path, capsys):
    csv_path = tmp_path / "m.csv"
    code, rep = run(["certify-sequence", votes, "--k", "1,3", "--csv", str(csv_path)], capsys)
    assert code == 0
    assert [row["k"] for row in rep["metrics"]] == [1, 3]
    assert csv_path.read_text().splitlines()[0] == "k,fts,ftv,sh,vh"


def test_phrase_mode_needs_generations(votes, capsys):
    assert main(["certify-sequence", votes, "--phrase-m", "2"]) == 2


def sim_config(tmp_path, **extra):
    return write(tmp_path / "cfg.json", {"ensemble": SMALL, "n_prompts": 6, **extra})


def test_phrase_one_matches_token_mode(tmp_path, capsys):
    cfg = sim_config(tmp_path, L=5, T=5)
    _, token = run(["certify-sequence", "--sim", "--config", cfg], capsys)
    _, phrase = run(["certify-sequence", "--sim", "--config", cfg, "--phrase-m", "1"], capsys)
    assert token["metrics"] == phrase["metrics"]
    assert token["per_position_radii"] == phrase["per_position_radii"]
    _, five = run(["certify-sequence", "--sim", "--config", cfg, "--phrase-m", "5"], capsys)
    assert token["validity_invocations"] == 5 * five["validity_invocations"]


def test_toml_config_and_unknown_keys(tmp_path, capsys):
    toml = tmp_path / "cfg.toml"
    toml.write_text('n_prompts = 4\nk = [1, 2]\npolicy = "lexicographic"\n[ensemble]\nS = 5\ncorpus_size = 200\nvocab_size = 48\n')
    code, rep = run(["certify-sequence", "--sim", "--config", str(toml)], capsys)
    assert code == 0 and rep["policy"] == "lexicographic" and rep["n_samples"] == 4
    assert [row["k"] for row in rep["metrics"]] == [1, 2]
    bad = write(tmp_path / "bad.json", {"n_prompt": 3})
    assert main(["certify-sequence", "--sim", "--config", bad]) == 2
    bad_ens = write(tmp_path / "bad_ens.json", {"ensemble": {"shards": 3}})
    assert main(["certify-sequence", "--sim", "--config", bad_ens]) == 2


def test_certify_collective(votes, tmp_path, capsys):
    code, rep = run(["certify-collective", votes, "--K", "1"], capsys)
    assert code == 0
    sol = rep["solution"]
    assert sol["n_samples"] == 2 and sol["exact"] and len(sol["witness"]) == 1
    assert rep["gain_over_pointwise"] >= 0
    code, rep = run(["certify-collective", votes, "--K", "0", "--kind", "tpa", "--mode", "any-target"], capsys)
    assert code == 0 and rep["mode"] == "sound" and rep["solution"]["attacked_max"] == 0
    assert main(["certify-collective", votes, "--K", "2", "--exact-limit", "1", "--require-exact"]) == 4
    code, rep = run(["certify-collective", votes, "--K", "2", "--exact-limit", "1"], capsys)
    assert code == 0 and not rep["solution"]["exact"]


def test_collective_rejects_aggregates(tmp_path, capsys):
    path = write(tmp_path / "agg.json", {"tables": [{"counts": {"1": 3}}]})
    assert main(["certify-collective", path, "--K", "1"]) == 2
    assert "per-shard" in capsys.readouterr().err
    assert main(["certify-collective", "--K", "1"]) == 2


def test_collective_instance_file(tmp_path, capsys):
    inst = write(tmp_path / "inst.json", {"kind": "dpa", "weights": [[2, 1], [0, 2]], "thresholds": [2, 2]})
    code, rep = run(["certify-collective", "--instance", inst, "--K", "1"], capsys)
    assert code == 0 and rep["solution"]["attacked_max"] == 1
    code, rep = run(["certify-collective", "--instance", inst, "--K", "2"], capsys)
    assert rep["solution"]["attacked_max"] == 2 and rep["solution"]["witness"] == [0, 1]


def test_simulate_is_repeatable(tmp_path, capsys):
    cfg = sim_config(tmp_path)
    outs = []
    for name in ("one", "two"):
        assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / name)]) == 0
        outs.append({f: (tmp_path / name / f).read_bytes() for f in ("votes.json", "validity_votes.json", "traces.json")})
    assert outs[0] == outs[1]
    votes = str(tmp_path / "one" / "votes.json")
    code, rep = run(["certify-sequence", votes, "--validity-votes", str(tmp_path / "one" / "validity_votes.json")], capsys)
    assert code == 0 and rep["n_samples"] == 6


def test_validate_and_attack(tmp_path, capsys):
    cfg = sim_config(tmp_path)
    code, rep = run(["validate", "--config", cfg, "--seeds", "0,1", "--trials", "30", "--budget", "3"], capsys)
    assert code == 0 and rep["total_violations"] == 0 and rep["total_trials"] == 60
    assert main(["validate", "--config", cfg, "--policy", "incumbent-wins", "--trials", "1"]) == 2
    code, rep = run(["attack", "--config", cfg, "--seeds", "0", "--n-prompts", "10", "--fraction", "0"], capsys)
    assert code == 0
    assert rep["summary"]["single"]["as"] == 0 and rep["summary"]["ensemble"]["ss"] == 1


def test_worker_count_does_not_change_output(tmp_path):
    cfg = sim_config(tmp_path)
    argv = [sys.executable, "-m", "gencert", "validate", "--config", cfg, "--seeds", "0,1", "--trials", "20", "--budget", "3"]
    outs = [
        subprocess.run(argv, capture_output=True, check=True, env={**os.environ, "GENCERT_WORKERS": w}).stdout
        for w in ("1", "2")
    ]
    assert outs[0] == outs[1]


def test_unknown_subcommand_and_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
