"""Command-line entry point: prepare, train, generate, evaluate, crossval, ablate.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from reqgen import pipeline
from reqgen.corpus import Vocabulary
from reqgen.metrics import evaluate_corpus, format_table
from reqgen.model.params import load_checkpoint, save_checkpoint
from reqgen.model.train import TrainingDiverged
from reqgen.ontology import InjectionPlan
from reqgen.pipeline import ExperimentConfig, Toggles, UsageError

log = logging.getLogger("reqgen")


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def cmd_prepare(exp: ExperimentConfig, args) -> int:
    graph, records = pipeline.load_inputs(exp)
    ready, skipped = pipeline.prepare_records(records, exp.rng_seed)
    if not ready:
        raise UsageError("no usable records in corpus")
    vocab = pipeline.vocabulary_for(graph, ready, exp.min_count)
    exp.out_dir.mkdir(parents=True, exist_ok=True)
    exp.prepared_path.write_text(pipeline.prepared_dump(ready), encoding="utf-8")
    _write_json(exp.vocab_path, {"tokens": vocab.to_list()})
    coverage = pipeline.keyword_coverage(graph, ready)
    coverage["skipped"] = skipped
    _write_json(exp.out_dir / "coverage.json", coverage)
    print(f"prepared {len(ready)} records ({len(skipped)} skipped), vocabulary {len(vocab)}, "
          f"keyword coverage {coverage['coverage']:.3f}")
    return 0


def cmd_train(exp: ExperimentConfig, args) -> int:
    records, vocab = pipeline.load_prepared(exp)
    graph, _ = pipeline.load_inputs(exp)
    plan = exp.injection_plan()
    cfg = pipeline.model_config(exp, len(vocab), plan, exp.toggles)
    result = pipeline.fit(records, vocab, graph, cfg, plan,
                          on_epoch=lambda e, loss: print(f"epoch {e:4d}  loss {loss:.6f}", flush=True))
    extra = {
        "plan": plan.to_dict(),
        "toggles": {"injection": exp.toggles.injection, "copy": exp.toggles.copy, "syntax": exp.toggles.syntax},
        "loss_log": result.loss_log,
    }
    exp.checkpoint.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(exp.checkpoint, cfg, vocab.to_list(), result.params, extra)
    print(f"wrote {exp.checkpoint}")
    return 0


def _load_model(exp: ExperimentConfig):
    if not Path(exp.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {exp.checkpoint} (run `train` first)")
    cfg, tokens, params, extra = load_checkpoint(exp.checkpoint)
    plan = InjectionPlan.from_dict(extra["plan"]) if "plan" in extra else exp.injection_plan()
    toggles = Toggles(**extra["toggles"]) if "toggles" in extra else exp.toggles
    return cfg, Vocabulary(tokens), params, plan, toggles


def cmd_generate(exp: ExperimentConfig, args) -> int:
    if not args.keywords:
        raise UsageError("--keywords is required for generate")
    keywords = pipeline.parse_keywords(args.keywords)
    roles = None
    if args.roles:
        if not Path(args.roles).is_file():
            raise UsageError(f"roles file not found: {args.roles}")
        roles = json.loads(Path(args.roles).read_text(encoding="utf-8"))
    cfg, vocab, params, plan, toggles = _load_model(exp)
    graph, _ = pipeline.load_inputs(exp)
    cands = pipeline.generate(params, cfg, vocab, graph, plan, keywords, toggles, exp, roles)
    best = cands[0]
    print(best.text)
    out = {
        "keywords": [" ".join(k) for k in keywords],
        "generated": best.text,
        "complete": best.complete,
        "rs4re": best.rs4re,
        "element_overlap": best.element_overlap,
        "candidates": [c.to_dict() for c in cands],
    }
    _write_json(exp.out_dir / "generation.json", out)
    return 0


def cmd_evaluate(exp: ExperimentConfig, args) -> int:
    records, _ = pipeline.load_prepared(exp)
    if args.generated:
        path = Path(args.generated)
        if not path.is_file():
            raise UsageError(f"generated outputs not found: {path}")
        by_id = {r.id: r for r in records}
        pairs = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                row = json.loads(line)
                pairs.append((row["generated"], by_id[str(row["id"])]))
        report = evaluate_corpus(pairs)
    else:
        cfg, vocab, params, plan, toggles = _load_model(exp)
        graph, _ = pipeline.load_inputs(exp)
        report, outputs = pipeline.evaluate_records(params, cfg, vocab, graph, plan, toggles, exp, records)
        (exp.out_dir / "generated.jsonl").write_text(
            "".join(json.dumps(o, sort_keys=True) + "\n" for o in outputs), encoding="utf-8")
    print(format_table([("all", report)]))
    _write_json(exp.out_dir / "evaluation.json", report.to_dict())
    return 0


def cmd_crossval(exp: ExperimentConfig, args) -> int:
    records, vocab = pipeline.load_prepared(exp)
    graph, _ = pipeline.load_inputs(exp)
    folds = pipeline.crossval(exp, records, vocab, graph, exp.injection_plan(), exp.toggles)
    good = [(f"fold {f.fold}", f.report) for f in folds if f.report is not None]
    for f in folds:
        if f.error:
            print(f"fold {f.fold} failed: {f.error}", file=sys.stderr)
    if not good:
        return 1
    mean = pipeline.mean_report([r for _, r in good])
    print(format_table(good + [("mean", mean)], "Fold"))
    _write_json(exp.out_dir / "crossval.json", {
        "folds": [{"fold": f.fold, "error": f.error,
                   "report": f.report.to_dict() if f.report else None,
                   "outputs": f.outputs} for f in folds],
        "mean": mean.to_dict(),
    })
    return 0 if len(good) == len(folds) else 1


def cmd_ablate(exp: ExperimentConfig, args) -> int:
    records, vocab = pipeline.load_prepared(exp)
    graph, _ = pipeline.load_inputs(exp)

    def progress(row):
        status = "failed" if row.error else "done"
        print(f"[{status}] {row.plan} / {row.threshold} / {row.setting}", file=sys.stderr, flush=True)

    rows = pipeline.ablate(exp, records, vocab, graph, progress)
    ok = [r for r in rows if r.report is not None]
    if ok:
        print(format_table([((r.plan, r.threshold, r.setting), r.report) for r in ok],
                           ("Layers(hops)", "Freq.", "Setting")))
    _write_json(exp.out_dir / "ablation.json", [
        {"plan": r.plan, "threshold": r.threshold, "setting": r.setting, "error": r.error,
         "report": r.report.to_dict() if r.report else None}
        for r in rows
    ])
    return 0 if len(ok) == len(rows) else 1


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "generate": cmd_generate,
    "evaluate": cmd_evaluate,
    "crossval": cmd_crossval,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reqgen", description="Keyword-to-requirement generation toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config (JSON)")
        p.add_argument("--seed", type=int, help="override the config's rng seed")
        p.add_argument("--out", help="override the output directory")
        if name == "generate":
            p.add_argument("--keywords", help='comma-separated phrases, e.g. "landing, ground"')
            p.add_argument("--roles", help="JSON file with role word sets and weights")
        if name == "evaluate":
            p.add_argument("--generated", help="JSONL of {id, generated}; default decodes with the checkpoint")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        exp = ExperimentConfig.load(args.config)
        if args.seed is not None:
            exp = replace(exp, rng_seed=args.seed)
        if args.out:
            out = Path(args.out)
            ckpt = exp.checkpoint if exp.checkpoint != exp.out_dir / "model.json" else out / "model.json"
            exp = replace(exp, out_dir=out, checkpoint=ckpt)
        return COMMANDS[args.command](exp, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    except (ValueError, LookupError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
