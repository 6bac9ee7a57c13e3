"""World model and grounding: objects, locations, devices, persons, the
robot, lexical grounding of argument values, KB inference for missing
arguments and post-condition application for executed plans.
"""

from __future__ import annotations

import copy
import threading
from dataclasses import dataclass, field
from importlib import resources

GRIPPER = "<gripper>"
UNKNOWN = "<unknown>"
NOT_NEEDED = "<not-needed>"


class WorldFormatError(ValueError):
    pass


class InconsistentEffectError(RuntimeError):
    pass


@dataclass
class ObjectEntity:
    name: str
    location: str          # location name, GRIPPER or UNKNOWN
    holdable: bool = True


@dataclass
class DeviceEntity:
    name: str
    location: str
    state: str = "off"     # "on" | "off"


@dataclass
class GroundingResult:
    query: str
    matches: list
    status: str            # "unique" | "ambiguous" | "unknown"

    @property
    def entity(self):
        return self.matches[0] if self.status == "unique" else None


@dataclass
class WorldModel:
    locations: dict = field(default_factory=dict)   # name -> set(adjacent)
    objects: dict = field(default_factory=dict)     # name -> ObjectEntity
    devices: dict = field(default_factory=dict)     # name -> DeviceEntity
    persons: dict = field(default_factory=dict)     # name -> location
    robot_location: str = ""
    gripper: str | None = None
    capabilities: list = field(default_factory=list)
    synonyms: dict = field(default_factory=dict)    # alias -> canonical name

    def __post_init__(self):
        self._lock = threading.RLock()

    def copy(self) -> "WorldModel":
        w = WorldModel(
            locations={k: set(v) for k, v in self.locations.items()},
            objects={k: copy.copy(v) for k, v in self.objects.items()},
            devices={k: copy.copy(v) for k, v in self.devices.items()},
            persons=dict(self.persons),
            robot_location=self.robot_location,
            gripper=self.gripper,
            capabilities=list(self.capabilities),
            synonyms=dict(self.synonyms),
        )
        return w

    # -- grounding -------------------------------------------------------

    def _canonical(self, word: str) -> str:
        return self.synonyms.get(word, word)

    def ground(self, value: str, expected: str) -> GroundingResult:
        """Match an argument value against entities of the expected type.

        Matching is lemma-level against names and synonyms; multiword values
        match if any word matches (so "kitchen table" can hit "table").
        Results are name-sorted for determinism.
        """
        words = [self._canonical(w) for w in value.lower().split()]
        pools = {
            "object": sorted(self.objects),
            "device": sorted(self.devices),
            "source-location": sorted(self.locations),
            "goal-location": sorted(self.locations) + sorted(self.persons),
            "search-area": sorted(self.locations),
            "person": sorted(self.persons),
        }
        names = pools.get(expected, [])
        matches = [n for n in names if n in words]
        if not matches:
            # multiword entity names ("living room") match on full value
            joined = " ".join(words)
            matches = [n for n in names if n == joined]
        status = ("unique" if len(matches) == 1
                  else "ambiguous" if matches else "unknown")
        return GroundingResult(query=value, matches=matches, status=status)

    def location_of(self, name: str) -> str | None:
        """Where a grounded entity is (objects, devices, persons)."""
        if name in self.objects:
            return self.objects[name].location
        if name in self.devices:
            return self.devices[name].location
        if name in self.persons:
            return self.persons[name]
        if name in self.locations:
            return name
        return None

    def infer_argument(self, task_type: str, arguments: dict,
                       missing: str):
        """Fill a missing slot from the world model, or report NOT_NEEDED.

        arguments maps slot -> grounded entity name.
        """
        if missing == "source-location":
            obj = arguments.get("object")
            if obj is None:
                return None
            if self.gripper == obj:
                return NOT_NEEDED
            loc = self.location_of(obj)
            return None if loc in (None, UNKNOWN, GRIPPER) else loc
        if missing == "object" and task_type == "Placing":
            return self.gripper
        if missing == "goal-location":
            person = arguments.get("person")
            if person in self.persons:
                return self.persons[person]
            return None
        if missing == "search-area":
            obj = arguments.get("object")
            if obj is not None:
                loc = self.location_of(obj)
                if loc not in (None, UNKNOWN, GRIPPER):
                    return loc
            return None
        return None

    # -- updates ---------------------------------------------------------

    def apply_postconditions(self, actions) -> None:
        """Apply grounded action effects in order, atomically.

        actions: iterables like ("move", a, b), ("pick", o, l),
        ("place", o, l), ("toggle-on", d), ("toggle-off", d).  Raises
        InconsistentEffectError and leaves the model untouched if any
        action's preconditions fail mid-sequence.
        """
        with self._lock:
            staged = self.copy()
            for act in actions:
                staged._apply_one(tuple(act))
            self.locations = staged.locations
            self.objects = staged.objects
            self.devices = staged.devices
            self.persons = staged.persons
            self.robot_location = staged.robot_location
            self.gripper = staged.gripper

    def _apply_one(self, act):
        name = act[0]
        if name == "move":
            _, src, dst = act
            if self.robot_location != src:
                raise InconsistentEffectError(f"robot not at {src}")
            if dst not in self.locations:
                raise InconsistentEffectError(f"unknown location {dst}")
            self.robot_location = dst
        elif name == "pick":
            _, obj, loc = act
            ent = self.objects.get(obj)
            if ent is None or ent.location != loc:
                raise InconsistentEffectError(f"{obj} not at {loc}")
            if self.robot_location != loc:
                raise InconsistentEffectError(f"robot not at {loc}")
            if self.gripper is not None:
                raise InconsistentEffectError("gripper occupied")
            ent.location = GRIPPER
            self.gripper = obj
        elif name == "place":
            _, obj, loc = act
            if self.gripper != obj:
                raise InconsistentEffectError(f"not holding {obj}")
            if self.robot_location != loc:
                raise InconsistentEffectError(f"robot not at {loc}")
            self.objects[obj].location = loc
            self.gripper = None
        elif name in ("toggle-on", "toggle-off"):
            dev = self.devices.get(act[1])
            want = "off" if name == "toggle-on" else "on"
            if dev is None:
                raise InconsistentEffectError(f"unknown device {act[1]}")
            if dev.state != want:
                raise InconsistentEffectError(
                    f"{dev.name} already {dev.state}")
            dev.state = "on" if name == "toggle-on" else "off"
        else:
            raise InconsistentEffectError(f"unknown action {name}")

    def check_invariants(self) -> None:
        held = [o.name for o in self.objects.values() if o.location == GRIPPER]
        assert len(held) <= 1, "gripper holds more than one object"
        assert (self.gripper in (None, *held)), "gripper bookkeeping mismatch"
        assert self.robot_location in self.locations, "robot at unknown place"
        for dev in self.devices.values():
            assert dev.state in ("on", "off")


# -- file format ---------------------------------------------------------

def load_world(path=None) -> WorldModel:
    """Parse the sectioned world file; defaults to the bundled home world."""
    if path is None:
        text = resources.files("tcar.data").joinpath("world_home.txt").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return parse_world(text)


def parse_world(text: str) -> WorldModel:
    world = WorldModel()
    section = None
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1]
            continue
        parts = line.split()
        try:
            if section == "locations":
                world.locations.setdefault(parts[0], set())
            elif section == "adjacency":
                a, b = parts
                world.locations.setdefault(a, set()).add(b)
                world.locations.setdefault(b, set()).add(a)
            elif section == "objects":
                name, loc = parts[0], parts[1]
                if loc in ("unknown", UNKNOWN):
                    loc = UNKNOWN
                holdable = len(parts) > 2 and parts[2] == "holdable"
                world.objects[name] = ObjectEntity(name, loc, holdable)
            elif section == "devices":
                name, loc, state = parts
                world.devices[name] = DeviceEntity(name, loc, state)
            elif section == "persons":
                world.persons[parts[0]] = parts[1]
            elif section == "robot":
                if parts[0] == "location":
                    world.robot_location = parts[1]
                elif parts[0] == "capabilities":
                    world.capabilities = parts[1:]
                elif parts[0] == "holding":
                    world.gripper = parts[1]
                    if parts[1] in world.objects:
                        world.objects[parts[1]].location = GRIPPER
            elif section == "synonyms":
                for alias in parts[1:]:
                    world.synonyms[alias] = parts[0]
            else:
                raise WorldFormatError(f"line {ln}: outside any section")
        except (ValueError, IndexError):
            raise WorldFormatError(f"line {ln}: cannot parse {raw!r}") from None
    if world.robot_location not in world.locations:
        raise WorldFormatError("robot location missing or unknown")
    return world


def dump_world(world: WorldModel) -> str:
    lines = ["[locations]"]
    lines += sorted(world.locations)
    lines.append("")
    lines.append("[adjacency]")
    seen = set()
    for a in sorted(world.locations):
        for b in sorted(world.locations[a]):
            if (b, a) not in seen:
                seen.add((a, b))
                lines.append(f"{a} {b}")
    lines.append("")
    lines.append("[objects]")
    for name in sorted(world.objects):
        o = world.objects[name]
        loc = o.location if o.location != GRIPPER else UNKNOWN
        suffix = " holdable" if o.holdable else ""
        lines.append(f"{name} {loc}{suffix}")
    lines.append("")
    lines.append("[devices]")
    for name in sorted(world.devices):
        d = world.devices[name]
        lines.append(f"{name} {d.location} {d.state}")
    lines.append("")
    lines.append("[persons]")
    for name in sorted(world.persons):
        lines.append(f"{name} {world.persons[name]}")
    lines.append("")
    lines.append("[robot]")
    lines.append(f"location {world.robot_location}")
    if world.gripper:
        lines.append(f"holding {world.gripper}")
    lines.append("capabilities " + " ".join(world.capabilities))
    lines.append("")
    lines.append("[synonyms]")
    by_canon = {}
    for alias, canon in world.synonyms.items():
        by_canon.setdefault(canon, []).append(alias)
    for canon in sorted(by_canon):
        lines.append(f"{canon} " + " ".join(sorted(by_canon[canon])))
    return "\n".join(lines) + "\n"
