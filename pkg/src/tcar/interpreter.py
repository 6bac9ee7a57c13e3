"""Instruction understanding: task-type decoding, task-conditioned argument
extraction, task-free argument evidence, multi-task clause splitting and
rule-based pronoun resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import crf
from .textfeat import Token, analyze_utterance, featurize_sequence

TASK_TYPES = ["Motion", "Taking", "Bringing", "Placing", "Change-state",
              "Searching"]
ARG_TYPES = ["object", "source-location", "goal-location", "device",
             "intended-state", "search-area", "person"]
OUTSIDE = "o"

TASK_ALPHABET = TASK_TYPES + [OUTSIDE]
ARG_ALPHABET = ARG_TYPES + [OUTSIDE]

G_NULL = "<phi>"

PRONOUNS = {"it", "them", "that", "this", "one", "they"}

# Which argument slots a pronoun in a given slot may be resolved from.
_COMPATIBLE = {
    "object": ("object", "device"),
    "device": ("device", "object"),
    "source-location": ("source-location", "goal-location", "search-area"),
    "goal-location": ("goal-location", "source-location", "search-area"),
    "search-area": ("search-area", "goal-location", "source-location"),
    "person": ("person",),
    "intended-state": ("intended-state",),
}


class ModelNotLoadedError(RuntimeError):
    pass


@dataclass
class ArgValue:
    text: str            # surface form, used verbatim in question templates
    lemma: str           # lemmatized form for KB lookup
    span: tuple          # (start, end) token indices, end exclusive

    @property
    def is_pronoun(self) -> bool:
        return self.lemma in PRONOUNS


@dataclass
class TaskFrame:
    task_type: str
    arguments: dict = field(default_factory=dict)   # arg type -> ArgValue
    confidence: float = 1.0
    source_span: tuple = (0, 0)


def attach_task(i: int, task_labels: list[str]) -> str:
    """Task label governing position i: the most recent task verb before i,
    else the nearest one after it, else the null marker.

    This single predicate defines both the g feature and clause attachment
    for multi-task splitting.
    """
    if task_labels[i] != OUTSIDE:
        return G_NULL
    for j in range(i - 1, -1, -1):
        if task_labels[j] != OUTSIDE:
            return task_labels[j]
    for j in range(i + 1, len(task_labels)):
        if task_labels[j] != OUTSIDE:
            return task_labels[j]
    return G_NULL


def task_features(tokens: list[Token], window: int = 2) -> list[list[str]]:
    return featurize_sequence(tokens, window)


def argument_features(tokens: list[Token], task_labels: list[str],
                      window: int = 2) -> list[list[str]]:
    """Base features plus the task-association feature g."""
    if len(task_labels) != len(tokens):
        raise ValueError("task label / token length mismatch")
    feats = featurize_sequence(tokens, window)
    for i, fs in enumerate(feats):
        fs.append(f"g={attach_task(i, task_labels)}")
    return feats


class Interpreter:
    """Binds the three trained CRFs into the instruction pipeline."""

    def __init__(self, task_model=None, arg_model=None, argonly_model=None,
                 window: int = 2):
        self.task_model = task_model
        self.arg_model = arg_model
        self.argonly_model = argonly_model
        self.window = window

    # -- model passes ----------------------------------------------------

    def predict_task_types(self, tokens):
        """(per-token labels over T u {o}, sequence confidence)."""
        if self.task_model is None:
            raise ModelNotLoadedError("task model not loaded")
        out = crf.decode(self.task_model, task_features(tokens, self.window))
        return out.labels, out.confidence

    def extract_arguments(self, tokens, task_labels):
        if self.arg_model is None:
            raise ModelNotLoadedError("argument model not loaded")
        feats = argument_features(tokens, task_labels, self.window)
        return crf.decode(self.arg_model, feats).labels

    def predict_arguments_taskfree(self, tokens) -> set[str]:
        """Set of argument types present, ignoring task identity (A')."""
        if self.argonly_model is None:
            raise ModelNotLoadedError("argument-only model not loaded")
        labels = crf.decode(self.argonly_model,
                            featurize_sequence(tokens, self.window)).labels
        return {y for y in labels if y != OUTSIDE}

    # -- structure -------------------------------------------------------

    @staticmethod
    def split_multi_task(tokens, task_labels):
        """One (task_position, span) per task verb; argument-bearing tokens
        attach to their governing verb via attach_task."""
        verb_positions = [i for i, y in enumerate(task_labels) if y != OUTSIDE]
        if not verb_positions:
            return []
        spans = []
        for vp in verb_positions:
            members = [vp]
            for i in range(len(tokens)):
                if i == vp or task_labels[i] != OUTSIDE:
                    continue
                gov = attach_task(i, task_labels)
                if gov == task_labels[vp] and _governor_position(
                        i, task_labels) == vp:
                    members.append(i)
            members.sort()
            spans.append((vp, (members[0], members[-1] + 1)))
        return spans

    def frames(self, tokens, task_labels=None, confidence=None):
        """Decode a full utterance into ordered TaskFrames."""
        if task_labels is None:
            task_labels, confidence = self.predict_task_types(tokens)
        if confidence is None:
            confidence = 1.0
        spans = self.split_multi_task(tokens, task_labels)
        if not spans:
            return []
        arg_labels = self.extract_arguments(tokens, task_labels)
        frames = []
        for vp, (lo, hi) in spans:
            args = {}
            for atype, value in _argument_spans(tokens, arg_labels):
                if lo <= value.span[0] < hi and atype not in args:
                    args[atype] = value
            frames.append(TaskFrame(task_type=task_labels[vp], arguments=args,
                                    confidence=confidence,
                                    source_span=(lo, hi)))
        return frames

    def reextract(self, tokens, frame: TaskFrame, hypothesis: str) -> TaskFrame:
        """Re-run argument extraction under a hypothesized task type."""
        labels = [OUTSIDE] * len(tokens)
        vp = None
        for i in range(frame.source_span[0], frame.source_span[1]):
            if tokens[i].pos == "VERB":
                vp = i
                break
        labels[vp if vp is not None else frame.source_span[0]] = hypothesis
        arg_labels = self.extract_arguments(tokens, labels)
        args = {}
        for atype, value in _argument_spans(tokens, arg_labels):
            if atype not in args:
                args[atype] = value
        return TaskFrame(task_type=hypothesis, arguments=args,
                         confidence=frame.confidence,
                         source_span=frame.source_span)


def _governor_position(i, task_labels):
    for j in range(i - 1, -1, -1):
        if task_labels[j] != OUTSIDE:
            return j
    for j in range(i + 1, len(task_labels)):
        if task_labels[j] != OUTSIDE:
            return j
    return None


def _argument_spans(tokens, arg_labels):
    """Maximal same-label runs as (arg_type, ArgValue) in surface order."""
    out = []
    i = 0
    n = len(tokens)
    while i < n:
        y = arg_labels[i]
        if y == OUTSIDE:
            i += 1
            continue
        j = i
        while j < n and arg_labels[j] == y:
            j += 1
        surface = " ".join(t.surface for t in tokens[i:j])
        lemma = " ".join(t.lemma for t in tokens[i:j])
        out.append((y, ArgValue(text=surface, lemma=lemma, span=(i, j))))
        i = j
    return out


def resolve_coreference(frames: list[TaskFrame], history=None):
    """Replace pronoun argument values with the most recent compatible
    non-pronoun value: earlier frames of this instruction first, then
    session history (newest first).

    history: list of (arg_type, ArgValue), oldest first.  Unresolvable
    pronouns are left in place so elicitation can pick them up.
    """
    history = list(history or [])
    seen = list(history)
    for frame in frames:
        for atype in list(frame.arguments):
            value = frame.arguments[atype]
            if not value.is_pronoun:
                continue
            compat = _COMPATIBLE.get(atype, (atype,))
            for prev_type, prev_val in reversed(seen):
                if prev_type in compat and not prev_val.is_pronoun:
                    frame.arguments[atype] = ArgValue(
                        text=prev_val.text, lemma=prev_val.lemma,
                        span=value.span)
                    break
        for atype, value in frame.arguments.items():
            if not value.is_pronoun:
                seen.append((atype, value))
    return frames


def interpret(interp: Interpreter, utterance: str, history=None):
    """tokenize -> frames -> coreference, as a convenience."""
    tokens = analyze_utterance(utterance)
    frames = interp.frames(tokens)
    return tokens, resolve_coreference(frames, history)
