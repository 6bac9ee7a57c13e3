"""Simulated environment: plan execution with an event stream, synthetic
instruction corpus generation, a simulated human answerer, and the
three-system evaluation harness (no-dialogue, argument-dialogue, full).
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from . import planner
from .dialogue import (DialogueConfig, DialogueEngine, InteractionHistory,
                       PendingQuestion)
from .interpreter import Interpreter, TASK_TYPES
from .kb import WorldModel
from .textfeat import analyze_utterance


# -- execution ------------------------------------------------------------

@dataclass
class SimEvent:
    kind: str       # move | pick | place | toggle | speak
    payload: dict
    seq: int


def execute(plan: planner.Plan, world: WorldModel, start_seq: int = 0):
    """Apply a validated plan to the world, one event per step plus a
    terminal success event.  Fails atomically before emitting anything."""
    staged = world.copy()
    staged.apply_postconditions(plan.steps)   # raises before any event
    events = []
    seq = start_seq
    for step in plan.steps:
        name = step[0]
        if name == "move":
            payload = {"from": step[1], "to": step[2]}
            kind = "move"
        elif name in ("pick", "place"):
            payload = {"object": step[1], "location": step[2]}
            kind = name
        else:
            payload = {"device": step[1],
                       "state": "on" if name == "toggle-on" else "off"}
            kind = "toggle"
        world.apply_postconditions([step])
        events.append(SimEvent(kind=kind, payload=payload, seq=seq))
        seq += 1
    events.append(SimEvent(kind="speak", payload={"text": "task complete"},
                           seq=seq))
    return events, world


def replay(events, world: WorldModel) -> WorldModel:
    """Fold an event stream over a world copy (deduplicated by seq)."""
    out = world.copy()
    seen = set()
    for ev in events:
        if ev.seq in seen:
            continue
        seen.add(ev.seq)
        if ev.kind == "move":
            out.apply_postconditions([("move", ev.payload["from"],
                                       ev.payload["to"])])
        elif ev.kind in ("pick", "place"):
            out.apply_postconditions([(ev.kind, ev.payload["object"],
                                       ev.payload["location"])])
        elif ev.kind == "toggle":
            act = "toggle-on" if ev.payload["state"] == "on" else "toggle-off"
            out.apply_postconditions([(act, ev.payload["device"])])
    return out


# -- corpus generation ----------------------------------------------------

@dataclass
class GoldFrame:
    task_type: str
    args: dict                       # argument type -> entity/value name
    required_missing: list = field(default_factory=list)
    pronoun_dependent: bool = False


@dataclass
class InstructionRecord:
    text: str
    tokens: list
    task_labels: list
    arg_labels: list
    frames: list                     # list[GoldFrame]
    ambiguous: bool = False

    @property
    def pronoun_dependent(self):
        return any(f.pronoun_dependent for f in self.frames)

    @property
    def has_missing(self):
        return any(f.required_missing for f in self.frames)


@dataclass
class GrammarConfig:
    missing_rate: float = 0.20
    multi_rate: float = 0.15
    ambiguous_rate: float = 0.10


_ADJ_POOL = ["nice", "big", "red", "small"]

# Pattern atoms: plain word, ("word", task) for the task verb, or
# (SLOT, argtype) placeholders filled from world entity pools.
OBJ, SRC, GOAL, AREA, DEV, STATE, ADJ = ("OBJ", "SRC", "GOAL", "AREA",
                                         "DEV", "STATE", "ADJ")


def _patterns():
    V = lambda w, t: (w, "task", t)
    A = lambda slot, atype: (slot, "arg", atype)
    w = lambda s: (s, None, None)
    complete = [
        ("Motion", [V("go", "Motion"), w("to"), w("the"), A(GOAL, "goal-location")]),
        ("Motion", [V("move", "Motion"), w("to"), w("the"), A(GOAL, "goal-location")]),
        ("Motion", [V("walk", "Motion"), w("to"), w("the"), A(GOAL, "goal-location")]),
        ("Taking", [V("take", "Taking"), w("the"), A(OBJ, "object"),
                    w("from"), w("the"), A(SRC, "source-location")]),
        ("Taking", [V("grab", "Taking"), w("the"), A(OBJ, "object"),
                    w("from"), w("the"), A(SRC, "source-location")]),
        # colloquial determiner-less location
        ("Taking", [V("take", "Taking"), w("the"), A(OBJ, "object"),
                    w("from"), A(SRC, "source-location")]),
        ("Bringing", [V("bring", "Bringing"), w("the"), A(OBJ, "object"),
                      w("from"), w("the"), A(SRC, "source-location"),
                      w("to"), w("the"), A(GOAL, "goal-location")]),
        ("Bringing", [V("carry", "Bringing"), w("the"), A(OBJ, "object"),
                      w("from"), w("the"), A(SRC, "source-location"),
                      w("to"), w("the"), A(GOAL, "goal-location")]),
        ("Placing", [V("put", "Placing"), w("the"), A(OBJ, "object"),
                     w("on"), w("the"), A(GOAL, "goal-location")]),
        ("Placing", [V("place", "Placing"), w("the"), A(OBJ, "object"),
                     w("on"), w("the"), A(GOAL, "goal-location")]),
        ("Change-state", [V("turn", "Change-state"), A(STATE, "intended-state"),
                          w("the"), A(DEV, "device")]),
        ("Change-state", [V("switch", "Change-state"), A(STATE, "intended-state"),
                          w("the"), A(DEV, "device")]),
        ("Searching", [V("search", "Searching"), w("for"), w("the"),
                       A(OBJ, "object"), w("in"), w("the"),
                       A(AREA, "search-area")]),
        ("Searching", [V("look", "Searching"), w("for"), w("the"),
                       A(OBJ, "object"), w("in"), w("the"),
                       A(AREA, "search-area")]),
    ]
    missing = [
        # required slot absent from the surface form; gold still carries it
        ("Taking", [V("pick", "Taking"), w("up"), w("the"), A(OBJ, "object")],
         ["source-location"]),
        ("Taking", [V("take", "Taking"), w("the"), A(OBJ, "object")],
         ["source-location"]),
        ("Bringing", [V("bring", "Bringing"), w("the"), A(OBJ, "object"),
                      w("to"), w("the"), A(GOAL, "goal-location")],
         ["source-location"]),
        ("Bringing", [V("bring", "Bringing"), ("me", "arg", "person"),
                      w("the"), A(OBJ, "object")],
         ["source-location", "goal-location"]),
        ("Placing", [V("put", "Placing"), w("down"), w("the"),
                     A(OBJ, "object")],
         ["goal-location"]),
        ("Searching", [V("find", "Searching"), w("the"), A(OBJ, "object")],
         ["search-area"]),
    ]
    ambiguous = [
        # "put on" reads as state change or placement
        ("Change-state", [V("put", "Change-state"),
                          A(STATE, "intended-state"), w("the"),
                          A(DEV, "device")], []),
        # same verb, same local context around the verb, different task:
        # only the distant preposition decides taking vs bringing
        ("Taking", [V("get", "Taking"), w("the"), A(OBJ, "object"),
                    w("from"), w("the"), A(ADJ, None), A(ADJ, None),
                    A(SRC, "source-location")], []),
        ("Bringing", [V("get", "Bringing"), w("the"), A(OBJ, "object"),
                      w("to"), w("the"), A(ADJ, None), A(ADJ, None),
                      A(GOAL, "goal-location")], []),
    ]
    multi = [
        ("Taking+Bringing",
         [V("take", "Taking"), w("the"), A(OBJ, "object"), w("and"),
          V("bring", "Bringing"), ("it", "arg", "object"), w("to"),
          w("the"), A(GOAL, "goal-location")]),
        ("Taking+Placing",
         [V("take", "Taking"), w("the"), A(OBJ, "object"), w("and"),
          V("put", "Placing"), ("it", "arg", "object"), w("on"),
          w("the"), A(GOAL, "goal-location")]),
        ("Taking+Bringing-me",
         [V("take", "Taking"), w("the"), A(OBJ, "object"), w("and"),
          V("bring", "Bringing"), ("it", "arg", "object"), w("to"),
          ("me", "arg", "person")]),
    ]
    return complete, missing, ambiguous, multi


def generate_corpus(world: WorldModel, n: int, seed: int,
                    config: GrammarConfig | None = None):
    """Sample n annotated instructions over the world's entities."""
    if n < 1:
        raise ValueError("n must be >= 1")
    config = config or GrammarConfig()
    rng = random.Random(seed)
    complete, missing, ambiguous, multi = _patterns()
    objects = sorted(world.objects)
    locations = sorted(world.locations)
    devices = sorted(world.devices)
    records = []
    for _ in range(n):
        r = rng.random()
        if r < config.multi_rate:
            records.append(_gen_multi(rng, multi, world, objects, locations))
        elif r < config.multi_rate + config.ambiguous_rate:
            task, pattern, req = ambiguous[rng.randrange(len(ambiguous))]
            records.append(_gen_single(rng, task, pattern, req, world,
                                       objects, locations, devices,
                                       is_ambiguous=True))
        elif r < (config.multi_rate + config.ambiguous_rate
                  + config.missing_rate):
            task, pattern, req = missing[rng.randrange(len(missing))]
            records.append(_gen_single(rng, task, pattern, req, world,
                                       objects, locations, devices))
        else:
            task, pattern = complete[rng.randrange(len(complete))]
            records.append(_gen_single(rng, task, pattern, [], world,
                                       objects, locations, devices))
    return records


def _pick_fill(rng, slot, world, objects, locations, devices):
    if slot == OBJ:
        return objects[rng.randrange(len(objects))]
    if slot in (SRC, GOAL, AREA):
        return locations[rng.randrange(len(locations))]
    if slot == DEV:
        return devices[rng.randrange(len(devices))]
    if slot == STATE:
        return "on" if rng.random() < 0.5 else "off"
    if slot == ADJ:
        return _ADJ_POOL[rng.randrange(len(_ADJ_POOL))]
    return slot


_SLOT_TO_ARG = {OBJ: "object", SRC: "source-location", GOAL: "goal-location",
                AREA: "search-area", DEV: "device", STATE: "intended-state"}


def _gen_single(rng, task, pattern, required_missing, world, objects,
                locations, devices, is_ambiguous=False):
    tokens, task_labels, arg_labels = [], [], []
    args = {}
    for atom in pattern:
        word, role, info = atom
        if word in (OBJ, SRC, GOAL, AREA, DEV, STATE, ADJ):
            fill = _pick_fill(rng, word, world, objects, locations, devices)
            tokens.append(fill)
            task_labels.append("o")
            arg_labels.append(info if info else "o")
            if info:
                args[info] = fill
        else:
            tokens.append(word)
            task_labels.append(info if role == "task" else "o")
            arg_labels.append(info if role == "arg" else "o")
            if role == "arg":
                args[info] = word
    gold = _complete_gold(task, args, list(required_missing), world, rng)
    return InstructionRecord(text=" ".join(tokens), tokens=tokens,
                            task_labels=task_labels, arg_labels=arg_labels,
                            frames=[gold], ambiguous=is_ambiguous)


def _gen_multi(rng, multi, world, objects, locations):
    _, pattern = multi[rng.randrange(len(multi))]
    tokens, task_labels, arg_labels = [], [], []
    fills = {}
    frames_parts = []
    current_args = {}
    current_task = None
    for atom in pattern:
        word, role, info = atom
        if word in (OBJ, SRC, GOAL, AREA):
            fill = _pick_fill(rng, word, world, objects, locations, [])
            tokens.append(fill)
            task_labels.append("o")
            arg_labels.append(info)
            current_args[info] = fill
            fills[info] = fill
        else:
            tokens.append(word)
            if role == "task":
                if current_task is not None:
                    frames_parts.append((current_task, current_args))
                    current_args = {}
                current_task = info
                task_labels.append(info)
                arg_labels.append("o")
            else:
                task_labels.append("o")
                arg_labels.append(info if role == "arg" else "o")
                if role == "arg":
                    current_args[info] = word
    frames_parts.append((current_task, current_args))
    frames = []
    for i, (task, args) in enumerate(frames_parts):
        pronoun = args.get("object") == "it"
        if pronoun:
            args = dict(args)
            args["object"] = fills.get("object", args["object"])
        gold = _complete_gold(task, args, [], world, rng)
        gold.pronoun_dependent = pronoun
        frames.append(gold)
    return InstructionRecord(text=" ".join(tokens), tokens=tokens,
                            task_labels=task_labels, arg_labels=arg_labels,
                            frames=frames)


def _complete_gold(task, args, required_missing, world, rng):
    """Fill truth values for required slots absent from the surface form."""
    args = dict(args)
    if args.get("person") == "me":
        args["person"] = "user"
    if task in ("Taking", "Bringing") and "source-location" not in args:
        obj = args.get("object")
        loc = world.location_of(obj) if obj else None
        if loc:
            args["source-location"] = loc
            if "source-location" not in required_missing:
                required_missing.append("source-location")
    if task == "Bringing" and "goal-location" not in args:
        person = args.get("person")
        if person in world.persons:
            args["goal-location"] = world.persons[person]
            if "goal-location" not in required_missing:
                required_missing.append("goal-location")
    if task == "Placing" and "goal-location" not in args:
        locations = sorted(world.locations)
        args["goal-location"] = locations[rng.randrange(len(locations))]
        if "goal-location" not in required_missing:
            required_missing.append("goal-location")
    if task == "Searching" and "search-area" not in args:
        obj = args.get("object")
        loc = world.location_of(obj) if obj else None
        if loc:
            args["search-area"] = loc
            if "search-area" not in required_missing:
                required_missing.append("search-area")
    return GoldFrame(task_type=task, args=args,
                     required_missing=required_missing)


# -- corpus files ---------------------------------------------------------

def write_corpus(records, path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps({
                "text": rec.text,
                "tokens": rec.tokens,
                "task_labels": rec.task_labels,
                "arg_labels": rec.arg_labels,
                "ambiguous": rec.ambiguous,
                "frames": [{
                    "task_type": f.task_type,
                    "args": f.args,
                    "required_missing": f.required_missing,
                    "pronoun_dependent": f.pronoun_dependent,
                } for f in rec.frames],
            }, sort_keys=True) + "\n")


def read_corpus(path):
    records = []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = json.loads(line)
            frames = [GoldFrame(**f) for f in doc["frames"]]
            records.append(InstructionRecord(
                text=doc["text"], tokens=doc["tokens"],
                task_labels=doc["task_labels"], arg_labels=doc["arg_labels"],
                frames=frames, ambiguous=doc.get("ambiguous", False)))
    return records


# -- simulated human ------------------------------------------------------

def simulated_user(gold: GoldFrame, question: PendingQuestion) -> str:
    """Direct answers only: confirms iff the hypothesis matches the gold
    task type, supplies gold values for elicitation and grounding choices."""
    if question.expected == "binary":
        return "yes" if question.subject == gold.task_type else "no"
    if question.kind == "disambiguate-grounding":
        value = gold.args.get(question.slot, "")
        for choice in question.choices:
            if choice == value:
                return choice
        return value
    return gold.args.get(question.slot, "")


# -- evaluation harness ---------------------------------------------------

@dataclass
class ModeReport:
    mode: str
    tasks_given: int = 0
    plans_generated: int = 0
    failures: list = field(default_factory=list)   # (record index, reason)

    @property
    def percentage(self) -> float:
        if self.tasks_given == 0:
            return 0.0
        return 100.0 * self.plans_generated / self.tasks_given


@dataclass
class EvalReport:
    modes: dict = field(default_factory=dict)      # mode -> ModeReport

    def to_json(self) -> str:
        return json.dumps({
            mode: {
                "tasks_given": rep.tasks_given,
                "plans_generated": rep.plans_generated,
                "percentage": round(rep.percentage, 1),
                "failures": rep.failures,
            } for mode, rep in sorted(self.modes.items())
        }, sort_keys=True, indent=2)


def _gold_slots(gold: GoldFrame):
    return {k: v for k, v in gold.args.items() if k != "person"}


def _expected_goals(record, world):
    """Goal fluent sets per gold frame, threading world context serially."""
    w = world.copy()
    goals = []
    for gold in record.frames:
        problem = planner.generate_problem(gold.task_type, _gold_slots(gold),
                                           w, name="gold")
        plan = planner.solve(problem)
        goals.append(problem.goal)
        if plan is not None:
            w.apply_postconditions(plan.steps)
    return goals


def _frames_match(session_plans, record, world):
    if len(session_plans) != len(record.frames):
        return False
    try:
        expected = _expected_goals(record, world)
    except (planner.MissingSlotError, planner.UnknownConstantError):
        return False
    for (frame, problem, _), gold, goal in zip(session_plans, record.frames,
                                               expected):
        if frame.task_type != gold.task_type:
            return False
        if problem.goal != goal:
            return False
    return True


def run_eval(records, world: WorldModel, mode: str, interpreter: Interpreter,
             intent_model, training_records=None,
             config: DialogueConfig | None = None) -> ModeReport:
    mode = mode.upper()
    report = ModeReport(mode=mode)
    for idx, record in enumerate(records):
        report.tasks_given += len(record.frames)
        if mode == "TCAR":
            ok, reason = _eval_tcar(record, world, interpreter, intent_model,
                                    training_records, config)
        else:
            ok, reason = _eval_baseline(record, world, interpreter,
                                        mode, config)
        if ok:
            report.plans_generated += len(record.frames)
        else:
            report.failures.append((idx, reason))
    return report


def _eval_tcar(record, world, interpreter, intent_model, training_records,
               config):
    engine = DialogueEngine(interpreter, intent_model, world,
                            config=config or DialogueConfig(),
                            training_records=training_records,
                            record_history=False)
    session, _ = engine.new_session()
    try:
        engine.step(session, record.text)
        turns = 0
        while session.terminal is None and turns < 25:
            idx = min(len(session.plans), len(record.frames) - 1)
            answer = simulated_user(record.frames[idx], session.pending)
            if not answer.strip():
                return False, "no answer available"
            engine.step(session, answer)
            turns += 1
    except Exception as exc:   # noqa: BLE001 - failure reasons feed the report
        return False, f"error: {exc}"
    if session.terminal != "executed":
        return False, f"terminal={session.terminal}"
    if not _frames_match(session.plans, record, world):
        return False, "frame mismatch"
    return True, ""


def _eval_baseline(record, world, interpreter, mode, config):
    """ND: literal parse only.  AD: elicit unmentioned slots from the
    simulated user, but no KB inference and no coreference."""
    from .dialogue import REQUIRED_SLOTS
    tokens = analyze_utterance(record.text)
    try:
        labels, _ = interpreter.predict_task_types(tokens)
        frames = interpreter.frames(tokens, labels)
    except Exception as exc:   # noqa: BLE001
        return False, f"error: {exc}"
    if len(frames) != len(record.frames):
        return False, "frame count mismatch"
    w = world.copy()
    plans = []
    for frame, gold in zip(frames, record.frames):
        slots = {}
        for slot in REQUIRED_SLOTS.get(frame.task_type, ()):
            value = frame.arguments.get(slot)
            if value is not None:
                if value.is_pronoun:
                    return False, f"unresolved pronoun in {slot}"
                if slot == "intended-state":
                    if value.lemma in ("on", "off"):
                        slots[slot] = value.lemma
                        continue
                    return False, "bad state value"
                grounding = w.ground(value.text, slot)
                if grounding.status != "unique":
                    return False, f"grounding {grounding.status} for {slot}"
                entity = grounding.entity
                if slot == "goal-location" and entity in w.persons:
                    entity = w.persons[entity]
                slots[slot] = entity
            else:
                person = frame.arguments.get("person")
                if (slot == "goal-location" and person is not None
                        and not person.is_pronoun):
                    pr = w.ground(person.text, "person")
                    if pr.status == "unique":
                        slots[slot] = w.persons[pr.entity]
                        continue
                if mode == "AD":
                    answer = gold.args.get(slot)
                    if answer is None:
                        return False, f"missing {slot}"
                    slots[slot] = answer
                else:
                    return False, f"missing {slot}"
        try:
            problem = planner.generate_problem(frame.task_type, slots, w)
            plan = planner.solve(problem)
        except (planner.MissingSlotError,
                planner.UnknownConstantError) as exc:
            return False, f"plan generation: {exc}"
        if plan is None or planner.validate(plan, problem) != "ok":
            return False, "no valid plan"
        plans.append((frame, problem, plan))
        w.apply_postconditions(plan.steps)
    if not _frames_match(plans, record, world):
        return False, "frame mismatch"
    return True, ""
