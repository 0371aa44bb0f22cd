"""Command-line entry point: ``posbias <subcommand> ...``.

Every subcommand writes ``<subcommand>.manifest.json`` next to its outputs,
recording the argv, input/output digests, seeds and a config hash. Passing
that file to ``posbias --from-manifest`` re-runs the same command.

Exit codes: 0 success, 1 validation error, 2 I/O or parse error, 64 usage.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional

from . import __version__
from . import biasaudit, corpus, debias, evalmetrics, kernelrank, probe, retrieval, synthetic, tkmodel
from .errors import ParseError, ValidationError

log = logging.getLogger("posbias")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_USAGE = 0, 1, 2, 64


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for f in sorted(p for p in path.rglob("*") if p.is_file() and not p.name.endswith(".manifest.json")):
            h.update(str(f.relative_to(path)).encode())
            h.update(_sha256(f).encode())
        return h.hexdigest()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, argv: List[str], args, inputs, outputs, extra=None) -> Path:
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "tool": "posbias",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "config_hash": hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest(),
        "seeds": {k: v for k, v in config.items() if k.endswith("seed")},
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if p is not None},
        "outputs": {str(p): _sha256(Path(p)) for p in outputs},
        "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    if extra:
        manifest["summary"] = extra
    path = Path(out_dir) / f"{command}.manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _check_inputs(*paths):
    for p in paths:
        if p is not None and not Path(p).exists():
            raise FileNotFoundError(f"input not found: {p}")


def _parent(path) -> Path:
    parent = Path(path).resolve().parent
    parent.mkdir(parents=True, exist_ok=True)
    return parent


def _map(args, fn, items):
    threads = max(1, getattr(args, "threads", 1) or 1)
    if threads == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(threads) as pool:
        return list(pool.map(fn, items))


# -- subcommands -------------------------------------------------------------


def cmd_ingest(args, argv):
    out = corpus.ensure_dir(args.out)
    queries = qrels = answers = None
    if args.synthetic:
        pos = None if args.answer_position == "uniform" else float(args.answer_position)
        sc = synthetic.generate(
            args.n_queries, args.passages_per_query, args.length, pos, args.query_length, args.filler_vocab, args.seed
        )
        collection, queries, qrels, answers = sc.collection, sc.queries, sc.qrels, sc.answers
        inputs = []
    elif args.squad:
        _check_inputs(args.squad)
        collection, queries, qrels, answers = corpus.load_squad(args.squad)
        inputs = [args.squad]
    elif args.msmarco_collection:
        _check_inputs(args.msmarco_collection, args.queries, args.answers, args.qrels)
        collection = corpus.load_msmarco_collection(args.msmarco_collection)
        if args.queries:
            queries = corpus.load_msmarco_queries(args.queries)
        if args.answers:
            answers = corpus.load_msmarco_answers(args.answers)
        if args.qrels:
            qrels = corpus.load_qrels(args.qrels)
        inputs = [args.msmarco_collection, args.queries, args.answers, args.qrels]
    else:
        raise UsageError("ingest needs one of --synthetic, --squad or --msmarco-collection")
    if qrels is not None:
        corpus.validate_qrels(collection, qrels)

    outputs = [out / "collection.tsv"]
    corpus.write_collection(collection, out / "collection.tsv")
    if queries is not None:
        corpus.write_queries(queries, out / "queries.tsv")
        outputs.append(out / "queries.tsv")
    if qrels is not None:
        corpus.write_qrels(qrels, out / "qrels.txt")
        outputs.append(out / "qrels.txt")
    if answers is not None:
        corpus.write_answers(answers, out / "answers.tsv")
        outputs.append(out / "answers.tsv")
    summary = {
        "passages": len(collection),
        "skipped_passages": collection.skipped,
        "queries": len(queries) if queries is not None else None,
        "qrels_rows": sum(len(r) for r in qrels.values()) if qrels is not None else None,
    }
    write_manifest(out, "ingest", argv, args, inputs, outputs, summary)
    print(json.dumps(summary, sort_keys=True))


def cmd_audit(args, argv):
    _check_inputs(args.collection, args.qrels, args.answers)
    out = corpus.ensure_dir(args.out)
    collection = corpus.load_msmarco_collection(args.collection)
    qrels = corpus.load_qrels(args.qrels)
    answers = corpus.load_msmarco_answers(args.answers)
    matches, omitted = biasaudit.audit(collection, qrels, answers)
    hist = biasaudit.histogram(matches, args.bins)
    biasaudit.write_matches_csv(matches, out / "matches.csv")
    biasaudit.write_histogram_csv(hist, out / "histogram.csv")
    summary = {
        "matches": len(matches),
        "omitted_queries": omitted,
        "tv_from_uniform": biasaudit.tv_from_uniform(hist) if hist.total else None,
    }
    write_manifest(
        out, "audit", argv, args, [args.collection, args.qrels, args.answers], [out / "matches.csv", out / "histogram.csv"], summary
    )
    print(json.dumps(summary, sort_keys=True))


def cmd_debias(args, argv):
    _check_inputs(args.collection)
    collection = corpus.load_msmarco_collection(args.collection)
    rotated, rmap = debias.debias_collection(collection, args.seed)
    _parent(args.out)
    _parent(args.rotation_map)
    corpus.write_collection(rotated, args.out)
    debias.write_rotation_map(rmap, args.rotation_map)
    write_manifest(
        _parent(args.out), "debias", argv, args, [args.collection], [Path(args.out), Path(args.rotation_map)], {"passages": len(rotated)}
    )


def cmd_retrieve(args, argv):
    _check_inputs(args.collection, args.queries)
    collection = corpus.load_msmarco_collection(args.collection)
    queries = corpus.load_msmarco_queries(args.queries)
    index = retrieval.build_index(collection, args.k1, args.b)
    results = _map(args, lambda q: (q.id, retrieval.bm25_search(index, q.tokens, args.k)), list(queries.values()))
    run = {qid: evalmetrics.ranked_entries(qid, hits, "bm25") for qid, hits in results if hits}
    _parent(args.out)
    evalmetrics.write_run(run, args.out)
    empty = sum(1 for _, hits in results if not hits)
    write_manifest(
        _parent(args.out), "retrieve", argv, args, [args.collection, args.queries], [Path(args.out)], {"queries": len(run), "empty_queries": empty}
    )


def _add_encoder_args(p):
    g = p.add_argument_group("encoder")
    g.add_argument("--embeddings", type=Path, help="text embeddings: 'token v1 ... vd' per line")
    g.add_argument("--embed-seed", type=int, default=0, help="seed for random embeddings when --embeddings is absent")
    g.add_argument("--weights", type=Path, help="weight archive directory (manifest.json + weights.bin)")
    g.add_argument("--encoder-config", type=Path, help="JSON encoder config (ignored with --weights)")
    g.add_argument("--seed", type=int, default=0, help="seed for random encoder weights")
    g.add_argument("--alpha", type=float, help="override the gate value")
    g.add_argument("--passage-offset", type=int, help="override the passage positional offset")
    g.add_argument("--save-weights", type=Path, help="also write the encoder weights here")


def _load_encoder(args, vocab):
    _check_inputs(args.embeddings, args.weights, args.encoder_config)
    if args.weights:
        params = tkmodel.load_params(args.weights)
    else:
        cfg = tkmodel.load_encoder_config(args.encoder_config) if args.encoder_config else tkmodel.EncoderConfig()
        params = tkmodel.init_params(cfg, args.seed)
    changes = {}
    if args.alpha is not None:
        changes["alpha"] = args.alpha
    if args.passage_offset is not None:
        changes["passage_offset"] = args.passage_offset
    if changes:
        params = tkmodel.EncoderParams(params.config.replace(**changes), params.weights)
    if args.embeddings:
        table = tkmodel.load_embeddings(args.embeddings, vocab=set(vocab))
    else:
        table = tkmodel.random_table(vocab, params.config.d, args.embed_seed)
    if args.save_weights:
        tkmodel.save_params(params, args.save_weights)
    return table, params


def cmd_encode(args, argv):
    _check_inputs(args.collection)
    collection = corpus.load_msmarco_collection(args.collection)
    vocab = {t for p in collection for t in p.tokens}
    table, params = _load_encoder(args, vocab)
    seqs = _map(args, lambda p: (p.id, tkmodel.contextualize(p.tokens, "passage", table, params)), list(collection))
    dump = probe.VectorDump.from_sequences(seqs)
    _parent(args.out)
    probe.write_dump(dump, args.out, binary=args.binary)
    oov = sum(sum(s.oov) for _, s in seqs)
    write_manifest(
        _parent(args.out),
        "encode",
        argv,
        args,
        [args.collection, args.embeddings, args.weights, args.encoder_config],
        [Path(args.out)],
        {"records": len(dump), "d": dump.d, "oov_tokens": oov, "encoder": params.config.to_dict()},
    )


def cmd_probe(args, argv):
    _check_inputs(args.dump)
    out = corpus.ensure_dir(args.out)
    dump = probe.read_dump(args.dump)
    index = probe.build_term_index(dump, args.min_occurrences, args.cap, args.seed)
    max_delta = args.max_delta
    if max_delta is None:
        max_delta = probe.default_max_delta(index, args.min_couples)
    report = probe.mats(index, max_delta, args.normalize_by_count)
    probe.write_ats_csv(report, out / "ats.csv")
    probe.write_mats_json(report, out / "mats.json", {"records": len(dump), "terms": len(index.couples)})
    write_manifest(
        out, "probe", argv, args, [args.dump], [out / "ats.csv", out / "mats.json"], {"mats": report.mats, "mats_stddev": report.mats_stddev}
    )
    print(json.dumps({"mats": report.mats, "mats_stddev": report.mats_stddev, "max_delta": report.max_delta}))


def cmd_rerank(args, argv):
    _check_inputs(args.collection, args.queries, args.run)
    collection = corpus.load_msmarco_collection(args.collection)
    queries = corpus.load_msmarco_queries(args.queries)
    candidates = evalmetrics.read_run(args.run)
    vocab = {t for p in collection for t in p.tokens} | {t for q in queries.values() for t in q.tokens}
    table, params = _load_encoder(args, vocab)
    kconf = kernelrank.KernelConfig.evenly_spaced(args.kernels, args.sigma)
    if args.score_weights:
        weights = kernelrank.ScoreWeights([float(x) for x in args.score_weights.split(",")], args.score_bias)
    else:
        weights = kernelrank.ScoreWeights.uniform(kconf.k)
    tk = kernelrank.TKScorer(table, params, kconf, weights)
    todo = [q for q in queries.values() if q.id in candidates]
    missing = [pid for entries in candidates.values() for e in entries for pid in [e.pid] if pid not in collection]
    if missing:
        raise ValidationError(f"{len(missing)} candidate passages missing from the collection, e.g. {missing[0]!r}")

    def one(q):
        cands = [(e.pid, e.score) for e in candidates[q.id]]
        return q.id, kernelrank.rerank_query(q, cands, collection, tk, args.depth, args.tag)

    run = dict(_map(args, one, todo))
    _parent(args.out)
    evalmetrics.write_run(run, args.out)
    write_manifest(
        _parent(args.out),
        "rerank",
        argv,
        args,
        [args.collection, args.queries, args.run, args.embeddings, args.weights, args.encoder_config],
        [Path(args.out)],
        {"queries": len(run), "encoder": params.config.to_dict()},
    )


def cmd_eval(args, argv):
    _check_inputs(args.run, args.run_b, args.qrels)
    out = corpus.ensure_dir(args.out)
    qrels = corpus.load_qrels(args.qrels)
    run_a = evalmetrics.read_run(args.run)
    rep_a = evalmetrics.evaluate(run_a, qrels, args.k)
    evalmetrics.write_summary_csv(rep_a, out / "summary.csv")
    outputs = [out / "summary.csv", out / "per_query.csv"]
    summary = {f"{m}@{args.k}": rep_a.means[m] for m in evalmetrics.METRICS}
    summary["excluded_queries"] = len(rep_a["mrr"].excluded)
    if args.run_b:
        run_b = evalmetrics.read_run(args.run_b)
        rep_b = evalmetrics.evaluate(run_b, qrels, args.k)
        _write_per_query_pair(rep_a, rep_b, out / "per_query.csv")
        rows = evalmetrics.compare_runs(run_a, run_b, qrels, args.k, args.zero_method)
        evalmetrics.write_comparison_csv(rows, args.k, out / "comparison.csv")
        outputs.append(out / "comparison.csv")
        summary["delta_pct"] = {r.metric: r.delta_pct for r in rows}
    else:
        evalmetrics.write_per_query_csv(rep_a, out / "per_query.csv", "a")
    write_manifest(out, "eval", argv, args, [args.run, args.run_b, args.qrels], outputs, summary)
    print(json.dumps(summary, sort_keys=True))


def _write_per_query_pair(rep_a, rep_b, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["run", "qid"] + [f"{m}@{rep_a.k}" for m in evalmetrics.METRICS])
        for label, rep in (("a", rep_a), ("b", rep_b)):
            for qid in rep.queries:
                w.writerow([label, qid] + [repr(rep[m].per_query[qid]) for m in evalmetrics.METRICS])


def _labelled(values: Optional[List[str]]) -> Dict[str, Path]:
    out = {}
    for v in values or []:
        label, sep, path = v.partition("=")
        if not sep:
            raise UsageError(f"expected LABEL=DIR, got {v!r}")
        out[label] = Path(path)
    return out


def cmd_report(args, argv):
    audits, probes, evals = _labelled(args.audit), _labelled(args.probe), _labelled(args.eval)
    if not (audits or probes or evals):
        raise UsageError("report needs at least one of --audit, --probe, --eval")
    _check_inputs(*audits.values(), *probes.values(), *evals.values())
    out = corpus.ensure_dir(args.out)
    outputs = []
    if audits:
        path = out / "answer_positions.csv"
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["collection", "bin_low", "bin_high", "count", "fraction"])
            for label, d in audits.items():
                hist = biasaudit.read_histogram_csv(d / "histogram.csv")
                for (lo, hi), c, frac in zip(hist.edges(), hist.counts, hist.normalized):
                    w.writerow([label, repr(lo), repr(hi), c, repr(frac)])
        outputs.append(path)
    if probes:
        curve, table = out / "ats_curve.csv", out / "mats_table.csv"
        with open(curve, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["model", "delta", "mean", "stddev", "count"])
            for label, d in probes.items():
                for r in probe.read_ats_csv(d / "ats.csv"):
                    w.writerow([label, r.delta, repr(r.mean), repr(r.stddev), r.count])
        with open(table, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["model", "mats", "stddev"])
            for label, d in probes.items():
                m = json.loads((d / "mats.json").read_text())
                w.writerow([label, repr(m["mats"]), repr(m["mats_stddev"])])
        outputs += [curve, table]
    if evals:
        path = out / "effectiveness.csv"
        with open(path, "w", encoding="utf-8", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["setting", "metric", "orig", "deb", "delta_pct", "p_value", "sig"])
            for label, d in evals.items():
                comp = d / "comparison.csv"
                if comp.exists():
                    with open(comp, encoding="utf-8", newline="") as g:
                        for r in csv.DictReader(g):
                            w.writerow([label, r["metric"], r["orig"], r["deb"], r["delta_pct"], r["p_value"], r["sig"]])
                else:
                    with open(d / "summary.csv", encoding="utf-8", newline="") as g:
                        for r in csv.DictReader(g):
                            w.writerow([label, r["metric"], r["value"], "", "", "", ""])
        outputs.append(path)
    write_manifest(out, "report", argv, args, [*audits.values(), *probes.values(), *evals.values()], outputs)


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="posbias", description="Position-bias auditing, debiasing, probing and evaluation.")
    parser.add_argument("--version", action="version", version=f"posbias {__version__}")
    parser.add_argument("--threads", type=int, default=1, help="worker threads for per-query/per-passage work")
    parser.add_argument("--log-level", default="WARNING")
    parser.add_argument("--from-manifest", type=Path, help="re-run the command recorded in a manifest")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", help="parse a collection into the canonical TSV layout")
    p.add_argument("--out", type=Path, required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--msmarco-collection", type=Path)
    src.add_argument("--squad", type=Path)
    src.add_argument("--synthetic", action="store_true", help="generate a planted-answer fixture")
    p.add_argument("--queries", type=Path)
    p.add_argument("--answers", type=Path)
    p.add_argument("--qrels", type=Path)
    p.add_argument("--n-queries", type=int, default=20)
    p.add_argument("--passages-per-query", type=int, default=10)
    p.add_argument("--length", type=int, default=30)
    p.add_argument("--answer-position", default="0.0", help="relative start in [0,1] or 'uniform'")
    p.add_argument("--query-length", type=int, default=3)
    p.add_argument("--filler-vocab", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("audit", help="match answers and histogram their relative start")
    p.add_argument("--collection", type=Path, required=True)
    p.add_argument("--qrels", type=Path, required=True)
    p.add_argument("--answers", type=Path, required=True)
    p.add_argument("--bins", type=int, default=biasaudit.DEFAULT_BINS)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("debias", help="rotate every passage at a random token")
    p.add_argument("--collection", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--rotation-map", type=Path, required=True)
    p.set_defaults(func=cmd_debias)

    p = sub.add_parser("retrieve", help="BM25 first-stage run")
    p.add_argument("--collection", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--k", type=int, default=1000)
    p.add_argument("--k1", type=float, default=retrieval.K1)
    p.add_argument("--b", type=float, default=retrieval.B)
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("encode", help="dump contextualized passage term vectors")
    p.add_argument("--collection", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--binary", action="store_true")
    _add_encoder_args(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("probe", help="ATS curve and MATS from a vector dump")
    p.add_argument("--dump", type=Path, required=True)
    p.add_argument("--max-delta", type=int)
    p.add_argument("--cap", type=int, default=probe.DEFAULT_CAP)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-occurrences", type=int, default=2)
    p.add_argument("--min-couples", type=int, default=probe.MIN_STABLE_COUPLES)
    p.add_argument("--normalize-by-count", action="store_true", help="divide by the number of summed gaps")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("rerank", help="kernel-pooling re-ranking of a candidate run")
    p.add_argument("--collection", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--depth", type=int, default=1000)
    p.add_argument("--kernels", type=int, default=11)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--score-weights", help="comma-separated kernel weights (default uniform)")
    p.add_argument("--score-bias", type=float, default=0.0)
    p.add_argument("--tag", default="tk")
    p.add_argument("--out", type=Path, required=True)
    _add_encoder_args(p)
    p.set_defaults(func=cmd_rerank)

    p = sub.add_parser("eval", help="MRR/nDCG/Recall and run comparison")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--run-b", type=Path)
    p.add_argument("--qrels", type=Path, required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--zero-method", choices=("wilcox", "pratt"), default="wilcox")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="collect audit/probe/eval outputs into report CSVs")
    p.add_argument("--audit", action="append", metavar="LABEL=DIR")
    p.add_argument("--probe", action="append", metavar="LABEL=DIR")
    p.add_argument("--eval", action="append", metavar="LABEL=DIR")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.from_manifest:
            recorded = json.loads(Path(args.from_manifest).read_text())["argv"]
            return main(recorded)
        if not args.command:
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
        args.func(args, argv)
        return EXIT_OK
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, json.JSONDecodeError) as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, ValueError) as e:
        print(f"validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO

if __name__ == "__main__":
    sys.exit(main())
