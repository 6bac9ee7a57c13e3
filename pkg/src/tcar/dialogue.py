"""Mixed-initiative dialogue engine.

Every user utterance is intent-classified first, whatever the state; the
engine then routes through confidence-gated task confirmation, ranked task
disambiguation, argument elicitation with KB inference, and session
continuation for answers that are not the expected direct form.

States: S0 intent classification, S1 task-type prediction, S2 argument
prediction, S3 plan-and-execute, S4 low-confidence confirmation, S5
alternative confirmation, S6 alternative ranking, S7 argument elicitation.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field

from . import planner
from .interpreter import (ArgValue, TASK_TYPES, TaskFrame,
                          resolve_coreference)
from .kb import NOT_NEEDED, UNKNOWN, WorldModel
from .textfeat import analyze_utterance
from .templates import TemplateSet, load_templates

# Slots a task must resolve before planning; order matters because later
# slots may be inferred from earlier ones.
REQUIRED_SLOTS = {
    "Motion": ("goal-location",),
    "Taking": ("object", "source-location"),
    "Bringing": ("object", "goal-location", "source-location"),
    "Placing": ("object", "goal-location"),
    "Change-state": ("device", "intended-state"),
    "Searching": ("object", "search-area"),
}

TASK_DESCRIPTIONS = {
    "Motion": "move to a location",
    "Taking": "pick up an object",
    "Bringing": "bring an object to a location",
    "Placing": "put an object down at a location",
    "Change-state": "turn a device on or off",
    "Searching": "search for an object in an area",
}

_AFFIRM = {"yes", "yeah", "yep", "sure", "ok", "okay", "right", "correct",
           "affirmative", "exactly", "indeed"}
_NEGATE = {"no", "nope", "nah", "wrong", "incorrect", "negative"}

WELCOME_RESPONSES = [
    "Hello! How can I help you?",
    "Hi there! What can I do for you?",
    "Hello! Tell me what you need.",
]
BYE_RESPONSES = [
    "Goodbye!",
    "Bye! See you soon.",
    "See you later!",
]

NOT_UNDERSTOOD = "Sorry, I could not understand that."
INCAPABLE = "I am unable to perform this task."
REFUSE_GENERAL = "I cannot answer such questions."


class SessionTerminatedError(RuntimeError):
    pass


@dataclass
class DialogueConfig:
    confidence_threshold: float = 0.6
    rank_floor: float = 0.05
    history_weight: float = 2.0
    greeting_seed: int = 0


@dataclass
class PendingQuestion:
    kind: str           # confirm-task | confirm-alternative | elicit-argument
                        # | disambiguate-grounding
    subject: str        # task type or argument type
    text: str
    expected: str       # binary | value | choice-list
    choices: list = field(default_factory=list)
    slot: str | None = None


@dataclass
class HistoryRecord:
    utterance: str
    task_type: str
    arg_types: list
    weight: float = 1.0


class InteractionHistory:
    """Append-only store of successfully planned instructions."""

    def __init__(self, path=None):
        self.path = path
        self.records: list[HistoryRecord] = []
        if path is not None:
            try:
                with open(path) as fh:
                    for line in fh:
                        if line.strip():
                            doc = json.loads(line)
                            self.records.append(HistoryRecord(**doc))
            except FileNotFoundError:
                pass

    def add(self, record: HistoryRecord) -> None:
        self.records.append(record)
        if self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps({
                    "utterance": record.utterance,
                    "task_type": record.task_type,
                    "arg_types": list(record.arg_types),
                    "weight": record.weight,
                }, sort_keys=True) + "\n")
                fh.flush()


@dataclass
class FrameProgress:
    frame: TaskFrame
    resolved: dict = field(default_factory=dict)  # slot -> entity name / value
    confirmed: bool = True


@dataclass
class DialogueSession:
    session_id: str = ""
    state: str = "S0"
    transcript: list = field(default_factory=list)
    pending: PendingQuestion | None = None
    current: FrameProgress | None = None
    queue: list = field(default_factory=list)
    alternatives: list = field(default_factory=list)
    asked_types: set = field(default_factory=set)
    tokens: list = field(default_factory=list)
    working_world: WorldModel | None = None
    plans: list = field(default_factory=list)     # (frame, problem, plan)
    terminal: str | None = None   # executed | bye | not-understood | incapable
    history_vals: list = field(default_factory=list)
    questions_asked: int = 0


@dataclass
class ExecutionRequest:
    items: list   # (TaskFrame, PlanningProblem, Plan)


@dataclass
class StepResult:
    response: str
    execution: ExecutionRequest | None = None


def parse_yesno(text: str):
    words = [w.strip(".,!?").lower() for w in text.split()]
    for w in words:
        if w in _AFFIRM:
            return True
        if w in _NEGATE:
            return False
        if w in ("not", "don't", "dont"):
            return False
    return None


class DialogueEngine:
    def __init__(self, interpreter, intent_model, world: WorldModel,
                 templates: TemplateSet | None = None,
                 config: DialogueConfig | None = None,
                 history: InteractionHistory | None = None,
                 training_records=None, planner_budget: int = 100_000,
                 record_history: bool = True):
        self.interpreter = interpreter
        self.intent_model = intent_model
        self.world = world
        self.templates = templates or load_templates()
        self.config = config or DialogueConfig()
        self.history = history or InteractionHistory()
        # (task_type, set of argument types) per annotated training instance
        self.training_records = list(training_records or [])
        self.planner_budget = planner_budget
        self.record_history = record_history
        self.task_types = [t for t in TASK_TYPES
                           if not world.capabilities
                           or t in world.capabilities]
        self.rng = random.Random(self.config.greeting_seed)

    # -- session lifecycle ----------------------------------------------

    def new_session(self, session_id: str = "") -> tuple[DialogueSession, str]:
        session = DialogueSession(session_id=session_id,
                                  working_world=self.world.copy())
        greeting = self.rng.choice(WELCOME_RESPONSES)
        session.transcript.append(("agent", greeting))
        return session, greeting

    def step(self, session: DialogueSession, utterance: str) -> StepResult:
        if session.terminal is not None:
            raise SessionTerminatedError(
                f"session ended: {session.terminal}")
        session.transcript.append(("user", utterance))
        if not utterance.strip():
            result = self._not_understood(session)
        else:
            intent, dist = self.intent_model.classify(utterance)
            recognized = len({round(p, 9) for p in dist.values()}) > 1
            if session.pending is not None:
                result = self._answer_pending(session, utterance, intent,
                                              recognized)
            else:
                result = self._dispatch(session, utterance, intent,
                                        recognized)
        session.transcript.append(("agent", result.response))
        return result

    # -- top-level dispatch ---------------------------------------------

    def _dispatch(self, session, text, intent, recognized) -> StepResult:
        if not recognized:
            return self._not_understood(session)
        if intent == "instruction":
            return self._start_instruction(session, text)
        if intent == "bye_greetings":
            session.terminal = "bye"
            return StepResult(self.rng.choice(BYE_RESPONSES))
        return StepResult(self._smalltalk(intent))

    def _smalltalk(self, intent) -> str:
        if intent == "welcome_greetings":
            return self.rng.choice(WELCOME_RESPONSES)
        if intent == "question_own_location":
            return f"I am in the {self.world.robot_location}."
        if intent == "question_on_self":
            caps = "; ".join(TASK_DESCRIPTIONS[t] for t in self.task_types)
            return f"I can do the following: {caps}."
        return REFUSE_GENERAL

    def _not_understood(self, session) -> StepResult:
        session.terminal = "not-understood"
        return StepResult(NOT_UNDERSTOOD)

    # -- instruction pipeline -------------------------------------------

    def _start_instruction(self, session, text) -> StepResult:
        tokens = analyze_utterance(text)
        session.state = "S1"
        labels, confidence = self.interpreter.predict_task_types(tokens)
        frames = self.interpreter.frames(tokens, labels, confidence)
        if not frames:
            return self._not_understood(session)
        resolve_coreference(frames, session.history_vals)
        session.tokens = tokens
        session.current = FrameProgress(frame=frames[0])
        session.queue = [FrameProgress(frame=f) for f in frames[1:]]
        session.plans = []
        session.asked_types = set()
        if confidence < self.config.confidence_threshold:
            return self._confirm_current(session, kind="confirm-task")
        session.state = "S2"
        return self._advance(session)

    def _confirm_current(self, session, kind) -> StepResult:
        fw = session.current
        hypothesis = fw.frame.task_type
        # slots rendered from arguments re-extracted under this hypothesis
        hypo = self.interpreter.reextract(session.tokens, fw.frame, hypothesis)
        resolve_coreference([hypo], session.history_vals)
        fw.frame = hypo
        fw.confirmed = False
        text = self.templates.render_confirm(hypothesis, hypo.arguments)
        session.pending = PendingQuestion(kind=kind, subject=hypothesis,
                                          text=text, expected="binary")
        session.state = "S4" if kind == "confirm-task" else "S5"
        session.questions_asked += 1
        return StepResult(text)

    # -- slot resolution -------------------------------------------------

    def _advance(self, session) -> StepResult:
        while True:
            if session.current is None:
                if not session.queue:
                    return self._execute(session)
                session.current = session.queue.pop(0)
            question = self._resolve_slots(session)
            if question is not None:
                session.pending = question
                session.state = "S7"
                session.questions_asked += 1
                return StepResult(question.text)
            failure = self._plan_current(session)
            if failure is not None:
                session.terminal = "incapable"
                return StepResult(failure)
            session.current = None

    def _resolve_slots(self, session):
        fw = session.current
        frame = fw.frame
        task = frame.task_type
        world = session.working_world
        for slot in REQUIRED_SLOTS.get(task, ()):
            if slot in fw.resolved:
                continue
            value = frame.arguments.get(slot)
            if slot == "intended-state":
                state = _normalize_state(value)
                if state is not None:
                    fw.resolved[slot] = state
                    continue
                return self._elicit(task, slot, frame)
            if value is not None and not value.is_pronoun:
                result = world.ground(value.text, slot)
                if result.status == "unique":
                    entity = result.entity
                    if slot == "goal-location" and entity in world.persons:
                        entity = world.persons[entity]
                    fw.resolved[slot] = entity
                    session.history_vals.append((slot, value))
                    continue
                if result.status == "ambiguous":
                    choices = list(result.matches)
                    text = (f"I see more than one {value.text}. "
                            f"Which one do you mean: "
                            + " or ".join(choices) + "?")
                    return PendingQuestion(kind="disambiguate-grounding",
                                           subject=slot, text=text,
                                           expected="choice-list",
                                           choices=choices, slot=slot)
                if slot == "object":
                    # unknown object: accept and locate it via the source slot
                    fw.resolved[slot] = value.lemma
                    session.history_vals.append((slot, value))
                    continue
                return self._elicit(task, slot, frame)
            # missing (or unresolved pronoun): try the world model first
            if slot == "goal-location":
                person = frame.arguments.get("person")
                if person is not None and not person.is_pronoun:
                    pr = world.ground(person.text, "person")
                    if pr.status == "unique":
                        fw.resolved["person"] = pr.entity
            inferred = world.infer_argument(task, fw.resolved, slot)
            if inferred == NOT_NEEDED:
                fw.resolved[slot] = None
                continue
            if inferred is not None:
                fw.resolved[slot] = inferred
                continue
            return self._elicit(task, slot, frame)
        return None

    def _elicit(self, task, slot, frame) -> PendingQuestion:
        text = self.templates.render_elicit(task, slot, frame.arguments)
        return PendingQuestion(kind="elicit-argument", subject=slot,
                               text=text, expected="value", slot=slot)

    def _plan_current(self, session):
        fw = session.current
        task = fw.frame.task_type
        world = session.working_world
        obj = fw.resolved.get("object")
        source = fw.resolved.get("source-location")
        if obj and source not in (None, NOT_NEEDED):
            if obj not in world.objects and obj not in world.devices:
                # object first reported by the user; trust the stated source
                from .kb import ObjectEntity
                world.objects[obj] = ObjectEntity(obj, source)
            elif (obj in world.objects
                  and world.objects[obj].location == UNKNOWN):
                world.objects[obj].location = source
        slots = {k: v for k, v in fw.resolved.items() if v is not None}
        try:
            problem = planner.generate_problem(task, slots, world,
                                               name=f"task-{len(session.plans)}")
            plan = planner.solve(problem, budget=self.planner_budget)
        except (planner.MissingSlotError, planner.UnknownConstantError,
                planner.BudgetExhaustedError):
            return INCAPABLE
        if plan is None or planner.validate(plan, problem) != "ok":
            return INCAPABLE
        session.plans.append((fw.frame, problem, plan))
        world.apply_postconditions(plan.steps)
        return None

    def _execute(self, session) -> StepResult:
        session.state = "S3"
        session.pending = None
        session.terminal = "executed"
        if self.record_history:
            for frame, _, _ in session.plans:
                self.record_success(frame, _frame_utterance(session))
        summaries = []
        for frame, _, plan in session.plans:
            steps = ", ".join(" ".join(s) for s in plan.steps) or "nothing to do"
            summaries.append(f"{frame.task_type}: {steps}")
        text = "Okay, executing. " + " | ".join(summaries)
        return StepResult(text, ExecutionRequest(items=list(session.plans)))

    # -- pending-question handling --------------------------------------

    def _answer_pending(self, session, text, intent, recognized) -> StepResult:
        pending = session.pending
        if pending.expected == "binary":
            answer = parse_yesno(text)
            if answer is True:
                return self._on_yes(session)
            if answer is False:
                return self._on_no(session)
            return self._continuation(session, text, intent, recognized)
        if pending.kind == "disambiguate-grounding":
            chosen = self._match_choice(text, pending.choices)
            if chosen is not None:
                session.current.resolved[pending.slot] = chosen
                session.pending = None
                return self._advance(session)
            return self._continuation(session, text, intent, recognized)
        # elicit-argument
        if not self._looks_like_instruction(text):
            value = self._extract_value(text, pending.slot)
            if value is not None and self._answer_plausible(
                    session, pending.slot, value, intent, recognized):
                session.current.frame.arguments[pending.slot] = value
                session.current.resolved.pop(pending.slot, None)
                session.pending = None
                return self._advance(session)
        return self._continuation(session, text, intent, recognized)

    def _on_yes(self, session) -> StepResult:
        session.pending = None
        session.current.confirmed = True
        session.state = "S2"
        return self._advance(session)

    def _on_no(self, session) -> StepResult:
        rejected = session.pending.subject
        session.asked_types.add(rejected)
        session.pending = None
        if session.state == "S4":
            session.state = "S6"
            ranked = self.rank_alternatives(session.tokens,
                                            exclude=session.asked_types)
            session.alternatives = ranked
        return self._next_alternative(session)

    def _next_alternative(self, session) -> StepResult:
        while session.alternatives:
            task, prob = session.alternatives.pop(0)
            if task in session.asked_types:
                continue
            if prob < self.config.rank_floor:
                break
            session.current.frame.task_type = task
            return self._confirm_current(session, kind="confirm-alternative")
        session.terminal = "incapable"
        return StepResult(INCAPABLE)

    def rank_alternatives(self, tokens, exclude=frozenset(),
                          history=None, training_records=None):
        """Rank candidate task types by argument-set evidence.

        Counts annotated instances (training plus weighted interaction
        history) whose argument-type set contains the task-free argument
        evidence A', then softmax-normalizes per task type.
        """
        evidence = self.interpreter.predict_arguments_taskfree(tokens)
        counts = {t: 0.0 for t in self.task_types}
        records = list(training_records
                       if training_records is not None
                       else self.training_records)
        pool = history.records if history is not None else self.history.records
        weighted = [(t, set(a), 1.0) for t, a in records]
        weighted += [(r.task_type, set(r.arg_types), r.weight) for r in pool]
        # empty evidence is a subset of every instance, so it degrades to
        # plain (weighted) task frequency
        for task, arg_types, weight in weighted:
            if task in counts and evidence <= arg_types:
                counts[task] += weight
        candidates = [t for t in self.task_types if t not in exclude]
        if not candidates:
            return []
        m = max(counts[t] for t in candidates)
        exps = {t: math.exp(counts[t] - m) for t in candidates}
        z = sum(exps.values())
        ranked = sorted(candidates, key=lambda t: (-exps[t] / z, t))
        return [(t, exps[t] / z) for t in ranked]

    def record_success(self, frame: TaskFrame, utterance: str) -> None:
        arg_types = sorted(frame.arguments)
        self.history.add(HistoryRecord(utterance=utterance,
                                       task_type=frame.task_type,
                                       arg_types=arg_types,
                                       weight=self.config.history_weight))

    # -- session continuation -------------------------------------------

    def _continuation(self, session, text, intent, recognized) -> StepResult:
        pending = session.pending
        if not recognized:
            return StepResult(NOT_UNDERSTOOD + " " + pending.text)
        if intent == "bye_greetings":
            session.terminal = "bye"
            session.pending = None
            return StepResult(self.rng.choice(BYE_RESPONSES))
        if intent == "instruction":
            tokens = analyze_utterance(text)
            labels, confidence = self.interpreter.predict_task_types(tokens)
            frames = self.interpreter.frames(tokens, labels, confidence)
            if frames:
                context = list(session.history_vals)
                for atype, val in session.current.frame.arguments.items():
                    if not val.is_pronoun:
                        context.append((atype, val))
                resolve_coreference(frames, context)
                if confidence >= self.config.confidence_threshold:
                    if frames[0].task_type == session.current.frame.task_type:
                        return self._merge_and_resume(session, frames)
                    return self._preempt(session, tokens, frames)
                # low confidence: fall back to the disambiguation strategy
                session.tokens = tokens
                session.current = FrameProgress(frame=frames[0])
                session.queue = [FrameProgress(frame=f) for f in frames[1:]]
                session.asked_types = set()
                session.pending = None
                return self._confirm_current(session, kind="confirm-task")
        reply = self._smalltalk(intent)
        return StepResult(reply + " " + pending.text)

    def _merge_and_resume(self, session, frames) -> StepResult:
        fw = session.current
        for atype, val in frames[0].arguments.items():
            existing = fw.frame.arguments.get(atype)
            if existing is None or existing.is_pronoun or val.text != existing.text:
                fw.frame.arguments[atype] = val
                fw.resolved.pop(atype, None)
        session.queue.extend(FrameProgress(frame=f) for f in frames[1:])
        session.pending = None
        fw.confirmed = True
        session.state = "S2"
        return self._advance(session)

    def _preempt(self, session, tokens, frames) -> StepResult:
        session.tokens = tokens
        session.current = FrameProgress(frame=frames[0])
        session.queue = [FrameProgress(frame=f) for f in frames[1:]]
        session.plans = []
        session.asked_types = set()
        session.pending = None
        session.state = "S2"
        return self._advance(session)

    def _answer_plausible(self, session, slot, value, intent, recognized):
        # guards against smalltalk ("where are you") being swallowed as an
        # argument value; anything the KB can ground is always accepted
        if slot == "intended-state":
            return True
        status = session.working_world.ground(value.text, slot).status
        if status in ("unique", "ambiguous"):
            return True
        if slot == "object":
            return not (recognized and intent != "instruction")
        return False

    # -- helpers ---------------------------------------------------------

    def _looks_like_instruction(self, text) -> bool:
        tokens = analyze_utterance(text)
        for i, tok in enumerate(tokens):
            if tok.pos == "VERB" and (i == 0 or tokens[i - 1].pos in
                                      ("CONJ", "PART")):
                return True
        return False

    def _extract_value(self, text, slot):
        tokens = analyze_utterance(text)
        if slot == "intended-state":
            for tok in tokens:
                if tok.lemma in ("on", "off"):
                    return ArgValue(text=tok.lemma, lemma=tok.lemma,
                                    span=(tok.index, tok.index + 1))
            return None
        content = [t for t in tokens
                   if t.pos not in ("DET", "ADP", "PART", "CONJ", "OTHER")]
        if not content or len(content) > 3:
            return None
        surface = " ".join(t.surface for t in content)
        lemma = " ".join(t.lemma for t in content)
        return ArgValue(text=surface, lemma=lemma,
                        span=(content[0].index, content[-1].index + 1))

    @staticmethod
    def _match_choice(text, choices):
        words = {w.strip(".,!?").lower() for w in text.split()}
        hits = [c for c in choices
                if c.lower() in words or set(c.lower().split()) <= words]
        return hits[0] if len(hits) == 1 else None


def _normalize_state(value):
    if value is None:
        return None
    lem = value.lemma.lower()
    if lem in ("on", "off"):
        return lem
    return None


def _frame_utterance(session) -> str:
    for speaker, text in session.transcript:
        if speaker == "user":
            return text
    return ""
