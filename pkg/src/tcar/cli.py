"""Operator command line: train models, generate corpora, run the
three-system evaluation, chat in a terminal REPL, plan single
instructions and serve the chat service.

Exit codes: 2 bad arguments, 3 I/O failure, 4 parse failure,
5 grounding failure, 6 unsolvable.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from pathlib import Path

from . import crf, planner, simworld
from .crf import CrfModel, Hyper
from .dialogue import REQUIRED_SLOTS, DialogueConfig, DialogueEngine
from .intents import IntentModel, load_seed_corpus, train_intents
from .interpreter import (ARG_ALPHABET, Interpreter, TASK_ALPHABET,
                          argument_features, task_features)
from .kb import load_world
from .textfeat import EmptyUtteranceError, analyze_utterance, featurize_sequence

EXIT_ARGS, EXIT_IO, EXIT_PARSE, EXIT_GROUNDING, EXIT_UNSOLVABLE = 2, 3, 4, 5, 6


# -- training glue --------------------------------------------------------

def build_crf_corpora(records):
    """(task, argument, argument-only) training corpora from gold records.

    The argument corpus conditions on gold task labels; the argument-only
    corpus sees the same sequences without the task-association feature.
    """
    task_c, arg_c, argonly_c = [], [], []
    for rec in records:
        tokens = analyze_utterance(rec.text)
        if len(tokens) != len(rec.task_labels):
            raise ValueError(f"tokenization mismatch for {rec.text!r}")
        task_c.append((task_features(tokens), rec.task_labels))
        arg_c.append((argument_features(tokens, rec.task_labels),
                      rec.arg_labels))
        argonly_c.append((featurize_sequence(tokens), rec.arg_labels))
    return task_c, arg_c, argonly_c


def label_metrics(gold_seqs, pred_seqs, outside="o"):
    """Token-level precision/recall/F1 per label plus a micro average
    over the non-outside labels."""
    tp, fp, fn = {}, {}, {}
    for gold, pred in zip(gold_seqs, pred_seqs):
        for g, p in zip(gold, pred):
            if g == p:
                if g != outside:
                    tp[g] = tp.get(g, 0) + 1
            else:
                if p != outside:
                    fp[p] = fp.get(p, 0) + 1
                if g != outside:
                    fn[g] = fn.get(g, 0) + 1
    labels = sorted(set(tp) | set(fp) | set(fn))
    table = {}
    for y in labels:
        t, f_p, f_n = tp.get(y, 0), fp.get(y, 0), fn.get(y, 0)
        prec = t / (t + f_p) if t + f_p else 0.0
        rec = t / (t + f_n) if t + f_n else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        table[y] = {"precision": prec, "recall": rec, "f1": f1,
                    "support": t + f_n}
    t = sum(tp.values())
    f_p = sum(fp.values())
    f_n = sum(fn.values())
    prec = t / (t + f_p) if t + f_p else 0.0
    rec = t / (t + f_n) if t + f_n else 0.0
    f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    table["micro"] = {"precision": prec, "recall": rec, "f1": f1,
                      "support": t + f_n}
    return table


def train_models(records, seed=0, epochs=50, learning_rate=0.1, l2=1e-4,
                 holdout=0.25):
    """Train the three CRFs and the intent model; returns (models, metrics).

    models: dict name -> model.  Held-out metrics report the task model,
    the argument model under gold task labels (component quality, the
    deployment number is also reported under predicted labels) and the
    argument-only model.
    """
    split = max(1, int(len(records) * (1.0 - holdout)))
    train_recs, held = records[:split], records[split:]
    if not held:
        held = train_recs
    hyper = Hyper(epochs=epochs, learning_rate=learning_rate, l2=l2,
                  seed=seed)
    task_c, arg_c, argonly_c = build_crf_corpora(train_recs)
    task_m = crf.train(task_c, TASK_ALPHABET, hyper)
    arg_m = crf.train(arg_c, ARG_ALPHABET, hyper)
    argonly_m = crf.train(argonly_c, ARG_ALPHABET, hyper)
    intent_m = train_intents(load_seed_corpus())

    gold_task, pred_task = [], []
    gold_arg, pred_arg_gold_g, pred_arg_pred_g, pred_argonly = [], [], [], []
    for rec in held:
        tokens = analyze_utterance(rec.text)
        t_pred = crf.decode(task_m, task_features(tokens)).labels
        gold_task.append(rec.task_labels)
        pred_task.append(t_pred)
        gold_arg.append(rec.arg_labels)
        pred_arg_gold_g.append(crf.decode(
            arg_m, argument_features(tokens, rec.task_labels)).labels)
        pred_arg_pred_g.append(crf.decode(
            arg_m, argument_features(tokens, t_pred)).labels)
        pred_argonly.append(crf.decode(
            argonly_m, featurize_sequence(tokens)).labels)
    metrics = {
        "held_out": len(held),
        "task": label_metrics(gold_task, pred_task),
        "argument": label_metrics(gold_arg, pred_arg_gold_g),
        "argument_predicted_tasks": label_metrics(gold_arg, pred_arg_pred_g),
        "argument_only": label_metrics(gold_arg, pred_argonly),
    }
    models = {"task": task_m, "argument": arg_m, "argument-only": argonly_m,
              "intent": intent_m}
    return models, metrics


def training_records_from_corpus(records):
    """(task type, argument-type set) pairs for alternative ranking."""
    out = []
    for rec in records:
        for frame in rec.frames:
            out.append((frame.task_type, set(frame.args)))
    return out


def load_models(model_dir) -> tuple[Interpreter, IntentModel]:
    mdir = Path(model_dir)
    interp = Interpreter(
        task_model=CrfModel.from_file(mdir / "task.model"),
        arg_model=CrfModel.from_file(mdir / "argument.model"),
        argonly_model=CrfModel.from_file(mdir / "argument-only.model"))
    intent = IntentModel.from_file(mdir / "intent.model")
    return interp, intent


def _print_metrics_table(metrics, out=None):
    out = out or sys.stdout

    def row(name, cells):
        out.write(f"{name:<28}" + "".join(f"{c:>10}" for c in cells) + "\n")

    row("", ["P", "R", "F1", "support"])
    for section in ("task", "argument", "argument_only"):
        out.write(f"-- {section.replace('_', ' ')} --\n")
        for label, m in sorted(metrics[section].items()):
            row(label, [f"{m['precision']:.2f}", f"{m['recall']:.2f}",
                        f"{m['f1']:.2f}", m["support"]])


def _default_data_dir():
    return os.environ.get("TCAR_DATA_DIR", ".")


# -- commands -------------------------------------------------------------

def cmd_train(args) -> int:
    corpus_path = Path(args.corpus)
    if not corpus_path.exists():
        print(f"error: corpus not found: {corpus_path}", file=sys.stderr)
        return EXIT_IO
    try:
        records = simworld.read_corpus(corpus_path)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"error: cannot parse corpus: {exc}", file=sys.stderr)
        return EXIT_PARSE
    if not records:
        print("error: corpus is empty", file=sys.stderr)
        return EXIT_PARSE
    try:
        models, metrics = train_models(
            records, seed=args.seed, epochs=args.epochs,
            learning_rate=args.lr, l2=args.l2, holdout=args.holdout)
    except (crf.EmptyCorpusError, crf.UnknownLabelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("task", "argument", "argument-only"):
        models[name].to_file(out / f"{name}.model")
    models["intent"].to_file(out / "intent.model")
    with open(out / "metrics.json", "w") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=2)
        fh.write("\n")
    shutil.copyfile(corpus_path, out / "training_corpus.jsonl")
    _print_metrics_table(metrics)
    print(f"models written to {out}")
    return 0


def cmd_gen_corpus(args) -> int:
    try:
        world = load_world(args.world)
    except FileNotFoundError:
        print(f"error: world not found: {args.world}", file=sys.stderr)
        return EXIT_IO
    records = simworld.generate_corpus(world, args.n, args.seed)
    simworld.write_corpus(records, args.out)
    print(f"wrote {len(records)} records to {args.out}")
    return 0


def cmd_eval(args) -> int:
    try:
        records = simworld.read_corpus(args.corpus)
    except FileNotFoundError:
        print(f"error: corpus not found: {args.corpus}", file=sys.stderr)
        return EXIT_IO
    if not records:
        print("error: corpus is empty", file=sys.stderr)
        return EXIT_PARSE
    try:
        interp, intent = load_models(args.models)
    except FileNotFoundError as exc:
        print(f"error: missing model file: {exc}", file=sys.stderr)
        return EXIT_IO
    world = load_world(args.world)
    train_corpus = Path(args.models) / "training_corpus.jsonl"
    ranking = training_records_from_corpus(
        simworld.read_corpus(train_corpus) if train_corpus.exists()
        else records)
    config = DialogueConfig(confidence_threshold=args.threshold)
    modes = ["ND", "AD", "TCAR"] if args.mode == "all" else [args.mode.upper()]
    report = simworld.EvalReport()
    print(f"{'system':<10}{'tasks':>8}{'plans':>8}{'pct':>8}")
    for mode in modes:
        rep = simworld.run_eval(records, world, mode, interp, intent,
                                training_records=ranking, config=config)
        report.modes[mode] = rep
        print(f"{mode:<10}{rep.tasks_given:>8}{rep.plans_generated:>8}"
              f"{rep.percentage:>7.1f}%")
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(report.to_json() + "\n")
    return 0


def cmd_chat(args) -> int:
    try:
        interp, intent = load_models(args.models)
        world = load_world(args.world)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    train_corpus = Path(args.models) / "training_corpus.jsonl"
    ranking = (training_records_from_corpus(simworld.read_corpus(train_corpus))
               if train_corpus.exists() else [])
    engine = DialogueEngine(interp, intent, world,
                            training_records=ranking,
                            config=DialogueConfig(
                                confidence_threshold=args.threshold))
    session, greeting = engine.new_session()
    print(f"agent: {greeting}")
    render = world.copy()
    for line in sys.stdin:
        text = line.strip()
        if not text:
            continue
        result = engine.step(session, text)
        print(f"agent: {result.response}")
        if result.execution is not None:
            for _, _, plan in result.execution.items:
                events, render = simworld.execute(plan, render)
                for ev in events:
                    print(f"  [{ev.kind}] "
                          + " ".join(f"{k}={v}"
                                     for k, v in sorted(ev.payload.items())))
        if session.terminal is not None:
            break
    return 0


def cmd_plan(args) -> int:
    """Plan one instruction with no dialogue (literal-parse semantics)."""
    try:
        interp, _ = load_models(args.models)
        world = load_world(args.world)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        tokens = analyze_utterance(args.instruction)
        labels, _ = interp.predict_task_types(tokens)
        frames = interp.frames(tokens, labels)
    except EmptyUtteranceError:
        print("error: empty instruction", file=sys.stderr)
        return EXIT_PARSE
    if not frames:
        print("error: no task recognized", file=sys.stderr)
        return EXIT_PARSE
    work = world.copy()
    for n, frame in enumerate(frames):
        slots = {}
        for slot in REQUIRED_SLOTS.get(frame.task_type, ()):
            value = frame.arguments.get(slot)
            if value is None or value.is_pronoun:
                print(f"error: missing argument {slot} for {frame.task_type}",
                      file=sys.stderr)
                return EXIT_GROUNDING
            if slot == "intended-state":
                slots[slot] = value.lemma
                continue
            result = work.ground(value.text, slot)
            if result.status != "unique":
                print(f"error: grounding {result.status} for "
                      f"{value.text!r} ({slot})", file=sys.stderr)
                return EXIT_GROUNDING
            entity = result.entity
            if slot == "goal-location" and entity in work.persons:
                entity = work.persons[entity]
            slots[slot] = entity
        try:
            problem = planner.generate_problem(frame.task_type, slots, work,
                                               name=f"task-{n}")
            plan = planner.solve(problem)
        except (planner.MissingSlotError,
                planner.UnknownConstantError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_GROUNDING
        except planner.BudgetExhaustedError:
            print("error: search budget exhausted", file=sys.stderr)
            return EXIT_UNSOLVABLE
        if plan is None:
            print("error: no plan exists", file=sys.stderr)
            return EXIT_UNSOLVABLE
        print(f"; {frame.task_type}")
        for step in plan.steps:
            print("(" + " ".join(step) + ")")
        if args.emit_pddl:
            emit_dir = Path(args.emit_pddl)
            emit_dir.mkdir(parents=True, exist_ok=True)
            (emit_dir / f"domain.pddl").write_text(
                planner.emit_domain(problem.domain))
            (emit_dir / f"problem-{n}.pddl").write_text(
                planner.emit_problem(problem))
        work.apply_postconditions(plan.steps)
    return 0


def cmd_serve(args) -> int:
    from .service import ServiceConfig, TcarService
    try:
        config = (ServiceConfig.from_file(args.config) if args.config
                  else ServiceConfig(model_dir=args.models,
                                     data_dir=_default_data_dir(),
                                     port=args.port))
        service = TcarService.from_config(config)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    host, port = service.serve(block=False)
    print(f"listening on {host}:{port}", flush=True)
    try:
        import threading
        threading.Event().wait()
    except KeyboardInterrupt:
        service.shutdown()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tcar", description="conversational robot instruction agent")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train sequence and intent models")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=str(Path(_default_data_dir()) / "models"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--holdout", type=float, default=0.25)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("gen-corpus", help="generate a synthetic corpus")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--world", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("eval", help="run the three-system evaluation")
    p.add_argument("--corpus", required=True)
    p.add_argument("--world", default=None)
    p.add_argument("--models", default=str(Path(_default_data_dir()) / "models"))
    p.add_argument("--mode", choices=["nd", "ad", "tcar", "all"],
                   default="all")
    p.add_argument("--threshold", type=float, default=0.6)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("chat", help="terminal chat session")
    p.add_argument("--world", default=None)
    p.add_argument("--models", default=str(Path(_default_data_dir()) / "models"))
    p.add_argument("--threshold", type=float, default=0.6)
    p.set_defaults(func=cmd_chat)

    p = sub.add_parser("plan", help="plan a single instruction, no dialogue")
    p.add_argument("instruction")
    p.add_argument("--world", default=None)
    p.add_argument("--models", default=str(Path(_default_data_dir()) / "models"))
    p.add_argument("--emit-pddl", default=None)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("serve", help="run the chat service")
    p.add_argument("--config", default=None)
    p.add_argument("--models", default=str(Path(_default_data_dir()) / "models"))
    p.add_argument("--port", type=int, default=7341)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
