import pytest

from tcar import simworld
from tcar.cli import train_models, training_records_from_corpus
from tcar.interpreter import Interpreter, TASK_TYPES
from tcar.kb import load_world
from tcar.simworld import GoldFrame, InstructionRecord


def make_record(spec, args=None):
    """Build an annotated record from a compact "word:tag" string.

    Capitalized tags are task labels, lowercase tags argument labels,
    untagged words are outside.  Gold frame args default to the set of
    annotated argument types (values None: these records feed the
    sequence models and the ranking counts, not the planner).
    """
    tokens, task_labels, arg_labels = [], [], []
    for item in spec.split():
        word, _, tag = item.partition(":")
        tokens.append(word)
        if tag in TASK_TYPES:
            task_labels.append(tag)
            arg_labels.append("o")
        elif tag:
            task_labels.append("o")
            arg_labels.append(tag)
        else:
            task_labels.append("o")
            arg_labels.append("o")
    task = next(t for t in task_labels if t != "o")
    if args is None:
        args = {a: None for a in arg_labels if a != "o"}
    return InstructionRecord(
        text=" ".join(tokens), tokens=tokens, task_labels=task_labels,
        arg_labels=arg_labels, frames=[GoldFrame(task_type=task, args=args)])


# A small corpus where "put" is genuinely torn between turning a device on
# and placing something down, and "display" carries both device and object
# evidence.  Tuned so "Put on the display" decodes Change-state below the
# confidence gate.
SCENARIO_SPECS = [
    "turn:Change-state on:intended-state the lamp:device",
    "turn:Change-state off:intended-state the lamp:device",
    "turn:Change-state on:intended-state the radio:device",
    "turn:Change-state off:intended-state the radio:device",
    "switch:Change-state on:intended-state the lamp:device",
    "switch:Change-state off:intended-state the radio:device",
    "put:Change-state on:intended-state the lamp:device",
    "put:Change-state on:intended-state the radio:device",
    "turn:Change-state it:device on:intended-state",
    "turn:Change-state it:device off:intended-state",
    "switch:Change-state it:device on:intended-state",
    "put:Placing down the display:object",
    "put:Placing down the display:object",
    "put:Placing down the mug:object",
    "put:Placing down the book:object",
    "put:Placing the display:object in the kitchen:goal-location",
    "put:Placing the mug:object in the bedroom:goal-location",
    "put:Placing the book:object in the hall:goal-location",
    "place:Placing the display:object in the office:goal-location",
    "place:Placing the pen:object in the kitchen:goal-location",
    "take:Taking the display:object from the office:source-location",
    "take:Taking the pen:object from the office:source-location",
    "pick:Taking up the display:object",
    "bring:Bringing the display:object to the kitchen:goal-location",
    "bring:Bringing the pen:object to the hall:goal-location",
    "search:Searching for the pen:object in the office:search-area",
    "look:Searching for the mug:object in the kitchen:search-area",
    "go:Motion to the kitchen:goal-location",
    "move:Motion to the office:goal-location",
]


def scenario_corpus():
    return [make_record(s) for s in SCENARIO_SPECS]


@pytest.fixture(scope="session")
def world():
    return load_world()


@pytest.fixture(scope="session")
def corpus500(world):
    return simworld.generate_corpus(world, 500, 7)


@pytest.fixture(scope="session")
def trained(corpus500):
    models, metrics = train_models(corpus500, seed=0)
    return {
        "models": models,
        "metrics": metrics,
        "interpreter": Interpreter(models["task"], models["argument"],
                                   models["argument-only"]),
        "intent": models["intent"],
        "ranking": training_records_from_corpus(corpus500),
    }


@pytest.fixture(scope="session")
def scenario():
    records = scenario_corpus()
    models, _ = train_models(records, seed=0, epochs=20, holdout=0.0)
    return {
        "records": records,
        "models": models,
        "interpreter": Interpreter(models["task"], models["argument"],
                                   models["argument-only"]),
        "intent": models["intent"],
        "ranking": [(r.frames[0].task_type,
                     {a for a in r.arg_labels if a != "o"})
                    for r in records],
    }


@pytest.fixture(scope="session")
def model_dir(tmp_path_factory, trained, corpus500):
    path = tmp_path_factory.mktemp("models")
    for name in ("task", "argument", "argument-only"):
        trained["models"][name].to_file(path / f"{name}.model")
    trained["intent"].to_file(path / "intent.model")
    simworld.write_corpus(corpus500, path / "training_corpus.jsonl")
    return path
