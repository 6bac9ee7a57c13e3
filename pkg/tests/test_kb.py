import pytest

from tcar.kb import (GRIPPER, InconsistentEffectError, NOT_NEEDED, UNKNOWN,
                     WorldFormatError, dump_world, load_world, parse_world)

SMALL_WORLD = """
[locations]
hall
kitchen

[adjacency]
hall kitchen

[objects]
mug kitchen holdable
crate hall

[devices]
lamp kitchen off

[persons]
user hall

[robot]
location hall
capabilities Motion Taking

[synonyms]
mug cup
user me i
"""


@pytest.fixture
def small():
    return parse_world(SMALL_WORLD)


def test_parse_sections(small):
    assert set(small.locations) == {"hall", "kitchen"}
    assert small.locations["hall"] == {"kitchen"}
    assert small.objects["mug"].location == "kitchen"
    assert small.objects["mug"].holdable
    assert not small.objects["crate"].holdable
    assert small.devices["lamp"].state == "off"
    assert small.persons["user"] == "hall"
    assert small.robot_location == "hall"
    assert small.synonyms["cup"] == "mug"


def test_parse_rejects_bad_input():
    with pytest.raises(WorldFormatError):
        parse_world("mug kitchen\n")           # outside any section
    with pytest.raises(WorldFormatError):
        parse_world("[devices]\nlamp\n")       # short line
    with pytest.raises(WorldFormatError):
        parse_world("[locations]\nhall\n")     # robot location missing


def test_dump_parse_round_trip(small):
    text = dump_world(small)
    again = parse_world(text)
    assert dump_world(again) == text
    assert again.objects["mug"].location == small.objects["mug"].location
    assert again.locations == small.locations


def test_unknown_object_location():
    w = parse_world(SMALL_WORLD.replace("mug kitchen holdable",
                                        "mug unknown holdable"))
    assert w.objects["mug"].location == UNKNOWN
    assert w.location_of("mug") == UNKNOWN


def test_ground_unique_synonym_and_unknown(small):
    r = small.ground("the cup", "object")
    assert r.status == "unique" and r.entity == "mug"
    r = small.ground("banana", "object")
    assert r.status == "unknown" and r.entity is None
    r = small.ground("me", "person")
    assert r.status == "unique" and r.entity == "user"


def test_ground_ambiguous(small):
    r = small.ground("mug crate", "object")
    assert r.status == "ambiguous"
    assert r.matches == ["crate", "mug"]


def test_goal_location_pool_includes_persons(small):
    r = small.ground("me", "goal-location")
    assert r.status == "unique" and r.entity == "user"


def test_infer_source_from_object_location(small):
    assert small.infer_argument("Taking", {"object": "mug"},
                                "source-location") == "kitchen"
    small.objects["mug"].location = GRIPPER
    small.gripper = "mug"
    assert small.infer_argument("Taking", {"object": "mug"},
                                "source-location") == NOT_NEEDED


def test_infer_goal_from_person_and_search_area(small):
    assert small.infer_argument("Bringing", {"person": "user"},
                                "goal-location") == "hall"
    assert small.infer_argument("Searching", {"object": "mug"},
                                "search-area") == "kitchen"
    assert small.infer_argument("Motion", {}, "goal-location") is None


def test_apply_postconditions_sequence(small):
    small.apply_postconditions([
        ("move", "hall", "kitchen"),
        ("pick", "mug", "kitchen"),
        ("move", "kitchen", "hall"),
        ("place", "mug", "hall"),
        ("move", "hall", "kitchen"),
        ("toggle-on", "lamp"),
    ])
    assert small.objects["mug"].location == "hall"
    assert small.devices["lamp"].state == "on"
    assert small.robot_location == "kitchen"
    assert small.gripper is None
    small.check_invariants()


def test_apply_postconditions_atomic(small):
    before = dump_world(small)
    with pytest.raises(InconsistentEffectError):
        small.apply_postconditions([
            ("move", "hall", "kitchen"),
            ("pick", "mug", "hall"),       # mug is not in the hall
        ])
    assert dump_world(small) == before


@pytest.mark.parametrize("act", [
    ("move", "kitchen", "hall"),        # robot not at kitchen
    ("pick", "mug", "hall"),            # object elsewhere
    ("place", "mug", "hall"),           # not holding
    ("toggle-off", "lamp"),             # already off
    ("toggle-on", "ghost"),             # unknown device
    ("explode",),                       # unknown action
])
def test_bad_effects_rejected(small, act):
    with pytest.raises(InconsistentEffectError):
        small.apply_postconditions([act])


def test_gripper_occupied(small):
    small.apply_postconditions([("move", "hall", "kitchen"),
                                ("pick", "mug", "kitchen")])
    assert small.gripper == "mug"
    assert small.objects["mug"].location == GRIPPER
    small.objects["crate"].location = "kitchen"
    with pytest.raises(InconsistentEffectError):
        small.apply_postconditions([("pick", "crate", "kitchen")])


def test_copy_is_deep_enough(small):
    clone = small.copy()
    clone.apply_postconditions([("move", "hall", "kitchen"),
                                ("pick", "mug", "kitchen")])
    assert small.objects["mug"].location == "kitchen"
    assert small.robot_location == "hall"


def test_bundled_world_loads():
    w = load_world()
    w.check_invariants()
    assert w.robot_location in w.locations
    assert w.persons
    assert set(w.capabilities) == {"Motion", "Taking", "Bringing", "Placing",
                                   "Change-state", "Searching"}
