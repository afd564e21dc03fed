"""Command-line front end.

Exit codes: 0 ok, 2 bad input, 3 internal disagreement between
independent computations, 4 exact collective solve unavailable with
``--require-exact``, 5 a certificate was broken by the simulator.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .errors import BoundExceeded, GencertError, InfeasibleSize, InputError, InvariantBreach, MissingShardVotes, SchemaError
from .votetab import TiePolicy, dumps, load_records, tally

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT, EXIT_INEXACT, EXIT_VIOLATION = 0, 2, 3, 4, 5
WORKERS_ENV = "GENCERT_WORKERS"
# report-neutral flags: they pick files, not results
_NEUTRAL = {"command", "config", "out", "csv", "out_dir", "func"}


class Failure(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# helpers


def load_config(path: str) -> dict[str, Any]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise SchemaError(f"cannot read config {path}: {exc.strerror}") from None
    if p.suffix.lower() == ".toml":
        if sys.version_info >= (3, 11):
            import tomllib
        else:
            import tomli as tomllib
        try:
            doc = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise SchemaError(f"{path}: invalid TOML ({exc})") from None
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: config must be a table/object")
    return {k.replace("-", "_"): v for k, v in doc.items()}


def _file_digest(path: str | None) -> str | None:
    if path is None:
        return None
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _resolved(args: argparse.Namespace) -> dict[str, Any]:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in _NEUTRAL:
            continue
        if isinstance(v, TiePolicy):
            v = v.value
        out[k] = v
    return out


def config_hash(args: argparse.Namespace, inputs: dict[str, str | None]) -> str:
    doc = {"args": _resolved(args), "inputs": {k: _file_digest(v) for k, v in sorted(inputs.items())}}
    return hashlib.sha256(json.dumps(doc, sort_keys=True, default=str).encode()).hexdigest()


def envelope(args: argparse.Namespace, inputs: dict[str, str | None], body: dict[str, Any]) -> dict[str, Any]:
    policy = getattr(args, "policy", None)
    return {
        "toolkit_version": __version__,
        "command": args.command,
        "config_hash": config_hash(args, inputs),
        "policy": TiePolicy.parse(policy).value if policy else None,
        **body,
    }


def emit(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")


def _ks(text: str) -> list[int]:
    try:
        ks = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise SchemaError(f"bad k list {text!r}") from None
    if not ks or any(k < 0 for k in ks):
        raise SchemaError("k list must be non-negative integers")
    return ks


def _policy(value) -> TiePolicy:
    return TiePolicy.parse(value)


def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise SchemaError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: invalid JSON ({exc})") from None


def _records(path: str):
    if not Path(path).exists():
        raise SchemaError(f"no such file: {path}")
    return load_records(path)


def _spec(args):
    from .ensim import EnsembleSpec

    doc = args.ensemble or {}
    if not isinstance(doc, dict):
        raise SchemaError("ensemble config must be a table/object")
    return EnsembleSpec.from_dict(doc)


# ---------------------------------------------------------------------------
# commands


def cmd_certify_point(args) -> int:
    from .oracle import AnyChange, ForceTarget, exhaustive_min_flips
    from .pointcert import dpa_radius, tpa_radius_fast

    vf = _records(args.votes)
    certs = []
    checked = 0
    for rec in vf.records:
        v = tally(rec)
        if v.total == 0:
            raise SchemaError(f"record {rec.sample_id}@{rec.position} has no shard votes")
        if args.target is None:
            cert = dpa_radius(v, args.policy, sample_id=rec.sample_id, position=rec.position)
            goal = AnyChange
        else:
            target = rec.target if args.target == "record" else int(args.target)
            if target is None:
                raise SchemaError(f"record {rec.sample_id}@{rec.position} has no target field")
            cert = tpa_radius_fast(v, target, args.policy, sample_id=rec.sample_id, position=rec.position)
            goal = ForceTarget(target)
        if args.verify_oracle:
            try:
                res = exhaustive_min_flips(v, goal, args.policy, bound=args.oracle_bound)
            except BoundExceeded:
                res = None
            if res is not None:
                checked += 1
                if max(0, res.min_flips - 1) != cert.radius:
                    raise InvariantBreach(
                        f"{rec.sample_id}@{rec.position}: radius {cert.radius}, exhaustive search {res.min_flips - 1}"
                    )
        certs.append(cert.to_json())
    body: dict[str, Any] = {"num_shards": vf.num_shards, "certificates": certs}
    if args.verify_oracle:
        body["oracle_checked"] = checked
    emit(dumps(envelope(args, {"votes": args.votes}, body)), args.out)
    return EXIT_OK


def cmd_certify_sequence(args) -> int:
    from .pointcert import tpa_radius_fast
    from .seqcert import SampleRadii, metrics, radii_csv, sequential_stability, traces_from_records

    ks = _ks(args.k)
    inputs: dict[str, str | None] = {}
    extra: dict[str, Any] = {}
    if args.sim or args.ensemble:
        samples, extra = _sequence_from_sim(args)
        inputs["harmful"] = args.harmful
    else:
        if args.votes is None:
            raise SchemaError("certify-sequence needs a vote file or --sim")
        if args.phrase_m is not None:
            raise SchemaError("--phrase-m needs per-shard generations; run it against the simulator (--sim)")
        inputs["votes"] = args.votes
        vf = _records(args.votes)
        traces = traces_from_records([r for r in vf.records if r.target is None], vf.num_shards)
        stab = {}
        for tr in traces:
            radii, _ = sequential_stability(tr, args.L or len(tr), args.policy)
            stab[tr.sample_id] = tuple(radii)
        val: dict[str, list[tuple[int, int]]] = {}
        vrecs = [r for r in vf.records if r.target is not None]
        if args.validity_votes:
            inputs["validity_votes"] = args.validity_votes
            vrecs += [r for r in _records(args.validity_votes).records]
        for r in vrecs:
            if r.target is None:
                raise SchemaError(f"validity record {r.sample_id}@{r.position} lacks a target")
            val.setdefault(r.sample_id, []).append(
                (r.position, tpa_radius_fast(tally(r), r.target, args.policy).radius)
            )
        ids = sorted(set(stab) | set(val))
        samples = [
            SampleRadii(
                sid,
                stab.get(sid),
                tuple(x for _, x in sorted(val[sid])) if sid in val else None,
            )
            for sid in ids
        ]
    report = metrics(samples, ks)
    body = {**report.to_json(), **extra}
    emit(dumps(envelope(args, inputs, body)), args.out)
    if args.csv:
        Path(args.csv).write_text(report.to_csv(), encoding="utf-8")
    if args.radii_csv:
        Path(args.radii_csv).write_text(radii_csv(samples), encoding="utf-8")
    return EXIT_OK


def _dpa(table, policy) -> int:
    from .pointcert import dpa_radius

    return dpa_radius(table, policy).radius


def _load_harmful(path: str | None, n: int) -> list[tuple[int, ...]] | None:
    if path is None:
        return None
    doc = _read_json(path)
    if isinstance(doc, dict):
        doc = doc.get("targets")
    if not isinstance(doc, list) or not all(isinstance(t, list) and t and all(isinstance(x, int) for x in t) for t in doc):
        raise SchemaError("harmful file must hold a non-empty list of token-id lists under 'targets'")
    return [tuple(doc[i % len(doc)]) for i in range(n)]


def _sequence_from_sim(args):
    from .ensim import build, consensus_decode, eval_prompts, phrase_decode, phrase_validity, query_for, runner_up_target
    from .seqcert import HarmfulTarget, SampleRadii, sequential_validity

    spec = _spec(args)
    corpus, ens = build(spec)
    prompts = eval_prompts(spec.seed, args.n_prompts, spec.vocab_size, spec.templates)
    if not prompts:
        raise SchemaError("simulator produced no prompts")
    L = args.L or spec.templates.response_len
    harmful = _load_harmful(args.harmful, len(prompts))
    m = args.phrase_m
    if m is not None and (m < 1 or L % m or args.T % m):
        raise SchemaError(f"phrase length {m} must divide L={L} and T={args.T}")
    samples = []
    token_invocations = phrase_invocations = 0
    for n, prompt in enumerate(prompts):
        sid = f"prompt-{n}"
        target = HarmfulTarget(harmful[n]) if harmful else runner_up_target(ens, prompt, args.T)
        if m is None:
            before = ens.invocations
            trace = consensus_decode(ens, prompt, L, args.policy, sid)
            stab = tuple(_dpa(p.table, args.policy) for p in trace.positions)
            mid = ens.invocations
            val = tuple(c.radius for c in sequential_validity(query_for(ens, sid), prompt, target, args.policy, sid))
            token_invocations += ens.invocations - mid
        else:
            steps = phrase_decode(ens, prompt, L // m, m, args.policy, sid)
            stab = tuple(s.certificate.radius for s in steps)
            mid = ens.invocations
            val = tuple(c.radius for c in phrase_validity(ens, prompt, target, m, args.policy, sid))
            phrase_invocations += ens.invocations - mid
        samples.append(SampleRadii(sid, stab, val))
    extra = {
        "mode": "token" if m is None else "phrase",
        "phrase_m": m,
        "num_shards": ens.M,
        "empty_shards": list(ens.empty_shards),
        "validity_invocations": token_invocations if m is None else phrase_invocations,
        "total_invocations": ens.invocations,
    }
    return samples, extra


def cmd_certify_collective(args) -> int:
    from .collective import (
        DEFAULT_ENUM_LIMIT,
        build_dpa_instance,
        build_tpa_instance,
        instance_from_json,
        solve_exact,
        solve_upper_bound,
    )
    from .pointcert import dpa_radius, tpa_radius_fast
    from .votetab import records_from_json

    if args.K is None or args.K < 0:
        raise SchemaError("--K must be a non-negative integer")
    pointwise = None
    if args.instance:
        inst, K_file = instance_from_json(_read_json(args.instance))
        inputs = {"instance": args.instance}
    else:
        if args.votes is None:
            raise SchemaError("certify-collective needs a vote file or --instance")
        doc = _read_json(args.votes)
        if isinstance(doc, dict) and "records" not in doc and ("tables" in doc or "counts" in doc):
            raise MissingShardVotes(
                "aggregate-only vote tables cannot be certified collectively: per-shard votes are required"
            )
        if isinstance(doc, dict) and isinstance(doc.get("records"), list):
            for i, raw in enumerate(doc["records"]):
                if isinstance(raw, dict) and "shard_votes" not in raw and ("counts" in raw or "table" in raw):
                    raise MissingShardVotes(f"record {i} carries only aggregate counts; per-shard votes are required")
        vf = records_from_json(doc)
        recs = [r for r in vf.records if r.position == args.position]
        if not recs:
            raise SchemaError(f"no records at position {args.position}")
        ids = [r.sample_id for r in recs]
        if len(set(ids)) != len(ids):
            raise SchemaError(f"duplicate sample ids at position {args.position}")
        build = build_dpa_instance if args.kind == "dpa" else build_tpa_instance
        inst = build(recs, args.policy, args.mode)
        if args.kind == "dpa":
            pointwise = [dpa_radius(tally(r), args.policy).radius for r in recs]
        else:
            certs = [tpa_radius_fast(tally(r), r.target, args.policy) for r in recs]
            pointwise = [-1 if c.already_target else c.radius for c in certs]
        inputs = {"votes": args.votes}
    try:
        sol = solve_exact(inst, args.K, args.exact_limit, DEFAULT_ENUM_LIMIT)
    except InfeasibleSize as exc:
        if args.require_exact:
            raise Failure(EXIT_INEXACT, f"exact solve unavailable: {exc}") from None
        sol = solve_upper_bound(inst, args.K)
    body: dict[str, Any] = {"kind": inst.kind, "mode": inst.mode, "solution": sol.to_json()}
    if pointwise is not None:
        certified = sum(1 for r in pointwise if r >= sol.K)
        body["pointwise_certified"] = certified
        body["gain_over_pointwise"] = sol.safe_count - certified
        if inst.mode == "sound" and sol.safe_count < certified:
            raise InvariantBreach(
                f"collective safe count {sol.safe_count} below pointwise certified count {certified}"
            )
    emit(dumps(envelope(args, inputs, body)), args.out)
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .ensim import build, certify_prompts, eval_prompts, reprompt_votes
    from .votetab import ShardVoteRecord, records_to_json

    spec = _spec(args)
    corpus, ens = build(spec)
    prompts = eval_prompts(spec.seed, args.n_prompts, spec.vocab_size, spec.templates)
    L = args.L or spec.templates.response_len
    run = certify_prompts(ens, prompts, L, args.T, args.policy)
    stab_records = [r for tr in run.traces for r in tr.records]
    val_records = []
    for n, (prompt, target) in enumerate(zip(run.prompts, run.targets)):
        for i, t in enumerate(target.tokens):
            rec = reprompt_votes(ens, prompt, target.tokens[:i], f"prompt-{n}")
            val_records.append(ShardVoteRecord(rec.sample_id, i, rec.shard_votes, t))
    traces = [
        {
            "sample_id": tr.sample_id,
            "prompt": list(tr.prompt),
            "tokens": list(tr.tokens),
            "harmful_target": list(tg.tokens),
        }
        for tr, tg in zip(run.traces, run.targets)
    ]
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "votes.json").write_text(dumps(records_to_json(stab_records, ens.M)), encoding="utf-8")
    (out / "validity_votes.json").write_text(dumps(records_to_json(val_records, ens.M)), encoding="utf-8")
    body = {
        "ensemble": spec.to_dict(),
        "corpus_size": len(corpus),
        "shard_sizes": [m.n_samples for m in ens.models],
        "empty_shards": list(ens.empty_shards),
        "traces": traces,
    }
    (out / "traces.json").write_text(dumps(envelope(args, {}, body)), encoding="utf-8")
    return EXIT_OK


def cmd_attack(args) -> int:
    from .ensim import AttackConfig, TemplateSet, eval_prompts, gen_corpus, run_attack

    spec = _spec(args)
    ts = spec.templates if args.ensemble and "templates" in args.ensemble else TemplateSet(n_templates=16, n_slots=40)
    vocab = spec.vocab_size if args.ensemble and "vocab_size" in args.ensemble else 128
    cfg = AttackConfig(tuple(args.trigger), args.entity, Fraction(str(args.fraction)))
    rows, results = [], []
    for seed in _seeds(args):
        corpus = gen_corpus(seed, spec.corpus_size, vocab, ts)
        prompts = eval_prompts(seed, args.n_prompts, vocab, ts)
        res = run_attack(corpus, cfg, spec.S, prompts, order=spec.order, alpha=spec.alpha, L=args.L, seed=seed)
        results.append(res)
        rows.append({"seed": seed, **res.to_json()})

    def mean(model: str, key: str) -> Fraction:
        vals = [getattr(getattr(r, model), key) for r in results]
        return sum(vals, Fraction(0)) / len(vals)

    keys = {"as": "as_score", "ss": "ss_score", "f_trig": "f_trig", "f_notrig": "f_notrig", "f_clean": "f_clean"}
    summary: dict[str, Any] = {
        m: {k: float(mean(m, attr)) for k, attr in keys.items()} for m in ("single", "ensemble")
    }
    a_s, a_e = mean("single", "as_score"), mean("ensemble", "as_score")
    summary["relative_as_reduction"] = float((a_s - a_e) / a_s) if a_s > 0 else None
    body = {
        "attack": {"trigger": list(cfg.trigger), "entity": cfg.entity, "poison_fraction": str(cfg.poison_fraction)},
        "shards": spec.S,
        "runs": rows,
        "summary": summary,
    }
    emit(dumps(envelope(args, {}, body)), args.out)
    if args.csv:
        lines = ["seed,model,as,ss,f_trig,f_notrig,f_clean"]
        for r in rows:
            for model in ("single", "ensemble"):
                d = r[model]
                lines.append(f"{r['seed']},{model}," + ",".join(f"{d[k]:.6f}" for k in ("as", "ss", "f_trig", "f_notrig", "f_clean")))
        Path(args.csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def _seeds(args) -> list[int]:
    seeds = args.seeds
    if isinstance(seeds, str):
        seeds = [int(s) for s in seeds.split(",") if s.strip()]
    if not seeds:
        raise SchemaError("need at least one seed")
    return [int(s) for s in seeds]


def _validate_seed(payload) -> dict[str, Any]:
    spec_doc, seed, n_prompts, L, T, policy, budget, trials = payload
    from dataclasses import replace

    from .ensim import EnsembleSpec, MutationSpace, build, certify_prompts, eval_prompts, poison_and_retrain

    spec = replace(EnsembleSpec.from_dict(spec_doc), seed=seed)
    corpus, ens = build(spec)
    prompts = eval_prompts(seed, n_prompts, spec.vocab_size, spec.templates)
    run = certify_prompts(ens, prompts, L or spec.templates.response_len, T, policy)
    space = MutationSpace(corpus, ens.assignment, spec.order)
    rep = poison_and_retrain(corpus, ens, run, space, budget, trials, seed)
    return {"seed": seed, "prompts": len(prompts), **rep.to_json()}


def workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def cmd_validate(args) -> int:
    spec = _spec(args)
    policy = TiePolicy.parse(args.policy)
    if policy is TiePolicy.INCUMBENT_WINS:
        raise SchemaError("validate needs a policy consistent with lexicographic decoding (adversary-wins or lexicographic)")
    payloads = [
        (spec.to_dict(), s, args.n_prompts, args.L, args.T, policy, args.budget, args.trials)
        for s in _seeds(args)
    ]
    n = workers()
    if n > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            runs = list(pool.map(_validate_seed, payloads))
    else:
        runs = [_validate_seed(p) for p in payloads]
    runs.sort(key=lambda r: r["seed"])
    total_violations = sum(len(r["violations"]) for r in runs)
    body = {
        "ensemble": {k: v for k, v in spec.to_dict().items() if k != "seed"},
        "runs": runs,
        "total_trials": sum(r["trials"] for r in runs),
        "total_violations": total_violations,
        "total_uncertified_changes": sum(r["uncertified_changes"] for r in runs),
    }
    emit(dumps(envelope(args, {}, body)), args.out)
    if total_violations:
        print(f"gencert: {total_violations} certificate violation(s)", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gencert", description="Certify sharded-ensemble generations against data poisoning.")
    parser.add_argument("--version", action="version", version=f"gencert {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, policy=True):
        p.add_argument("--config", help="JSON or TOML file whose keys mirror the flags")
        if policy:
            p.add_argument("--policy", type=_policy, default=TiePolicy.ADVERSARY_WINS)
        p.add_argument("--out", help="report path (stdout if omitted)")

    def sim(p):
        p.add_argument("--n-prompts", type=int, default=50)
        p.add_argument("--L", type=int, default=None, help="decoded positions (default: template response length)")
        p.add_argument("--T", type=int, default=3, help="harmful target length")
        p.set_defaults(ensemble=None)

    p = sub.add_parser("certify-point", help="per-record stability or validity radii")
    p.add_argument("votes")
    p.add_argument("--target", nargs="?", const="record", default=None,
                   help="targeted radii; bare flag uses each record's target field")
    p.add_argument("--verify-oracle", action="store_true", help="cross-check small tables by exhaustive search")
    p.add_argument("--oracle-bound", type=int, default=12)
    common(p)
    p.set_defaults(func=cmd_certify_point)

    p = sub.add_parser("certify-sequence", help="horizon metrics over a k grid")
    p.add_argument("votes", nargs="?")
    p.add_argument("--sim", action="store_true", help="decode live with the simulator configured under 'ensemble'")
    p.add_argument("--k", default="1,3,5,7,9")
    p.add_argument("--phrase-m", type=int, default=None)
    p.add_argument("--harmful", help="JSON list of harmful token sequences (simulator mode)")
    p.add_argument("--validity-votes", help="reprompted vote records carrying target fields")
    p.add_argument("--csv")
    p.add_argument("--radii-csv")
    sim(p)
    common(p)
    p.set_defaults(func=cmd_certify_sequence)

    p = sub.add_parser("certify-collective", help="shared-budget certificate over a batch of prompts")
    p.add_argument("votes", nargs="?")
    p.add_argument("--instance", help="pre-built instance JSON instead of vote records")
    p.add_argument("--K", type=int, required=False, default=None)
    p.add_argument("--kind", choices=("dpa", "tpa"), default="dpa")
    p.add_argument("--mode", choices=("classic", "paper", "sound", "any-target"), default="sound")
    p.add_argument("--position", type=int, default=0)
    p.add_argument("--exact-limit", type=int, default=4000)
    p.add_argument("--require-exact", action="store_true")
    common(p)
    p.set_defaults(func=cmd_certify_collective)

    p = sub.add_parser("simulate", help="train the toy ensemble and export vote records")
    p.add_argument("--out-dir", required=False, default="sim-out")
    sim(p)
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("attack", help="content-injection attack, single model vs ensemble")
    p.add_argument("--fraction", default="0.1")
    p.add_argument("--trigger", type=int, nargs="+", default=[1])
    p.add_argument("--entity", type=int, default=2)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--n-prompts", type=int, default=100)
    p.add_argument("--L", type=int, default=6)
    p.add_argument("--csv")
    p.set_defaults(ensemble=None)
    common(p, policy=False)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("validate", help="poison-and-retrain trials against simulator certificates")
    p.add_argument("--seeds", default="0,1,2,3,4,5,6,7,8,9")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--budget", type=int, default=9)
    sim(p)
    common(p)
    p.set_defaults(func=cmd_validate)
    return parser


def _subparser(parser: argparse.ArgumentParser, name: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def _collective_mode(mode: str) -> str:
    from .collective import _mode

    return _mode(mode)


def parse(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = load_config(args.config)
        sp = _subparser(parser, args.command)
        known = {a.dest for a in sp._actions} | {"ensemble"}
        unknown = sorted(set(cfg) - known - {"config"})
        if unknown:
            raise SchemaError(f"unknown config fields for {args.command}: {unknown}")
        if "policy" in cfg:
            cfg["policy"] = TiePolicy.parse(cfg["policy"])
        for key in ("k", "seeds"):
            if isinstance(cfg.get(key), list):
                cfg[key] = ",".join(str(x) for x in cfg[key])
        sp.set_defaults(**cfg)
        args = parser.parse_args(argv)  # explicit flags still win over the file
    if getattr(args, "mode", None) is not None:
        args.mode = _collective_mode(args.mode)
    return args


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse(argv)
        return args.func(args)
    except Failure as exc:
        print(f"gencert: {exc}", file=sys.stderr)
        return exc.code
    except InvariantBreach as exc:
        print(f"gencert: internal check failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (InputError, BoundExceeded) as exc:
        print(f"gencert: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except GencertError as exc:
        print(f"gencert: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
