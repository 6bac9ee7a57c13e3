"""Task planning: PDDL problem generation from task frames, a STRIPS+typing
PDDL reader/writer, and an embedded forward-search solver with a
delete-relaxation heuristic plus a breadth-first route for small instances.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field

from .kb import GRIPPER, UNKNOWN, WorldModel

SUPPORTED_REQUIREMENTS = {":strips", ":typing"}
DOMAIN_NAME = "tcar-domain"

# Fluents whose truth never changes; kept out of search states.
STATIC_PREDICATES = {"adjacent", "device-at"}


class PddlSyntaxError(ValueError):
    def __init__(self, message, line, col):
        super().__init__(f"{message} at line {line}, column {col}")
        self.line = line
        self.col = col


class UnsupportedRequirementError(ValueError):
    pass


class MissingSlotError(ValueError):
    pass


class UnknownConstantError(ValueError):
    pass


class BudgetExhaustedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ActionSchema:
    name: str
    params: tuple         # ((var, type), ...)
    pre: tuple            # fluent templates, vars as "?x"
    add: tuple
    delete: tuple


@dataclass
class Domain:
    name: str
    types: tuple
    predicates: dict      # name -> (type, ...)
    actions: tuple

    def __eq__(self, other):
        return (isinstance(other, Domain) and self.name == other.name
                and set(self.types) == set(other.types)
                and self.predicates == other.predicates
                and set(self.actions) == set(other.actions))


@dataclass
class PlanningProblem:
    name: str
    domain: Domain
    objects: dict         # constant -> type
    init: frozenset
    goal: frozenset

    def __eq__(self, other):
        return (isinstance(other, PlanningProblem)
                and self.name == other.name and self.domain == other.domain
                and self.objects == other.objects and self.init == other.init
                and self.goal == other.goal)


@dataclass
class Plan:
    steps: list           # grounded actions: ("move", "hall", "kitchen")

    @property
    def cost(self) -> int:
        return len(self.steps)


def build_domain() -> Domain:
    actions = (
        ActionSchema(
            "move", (("?from", "location"), ("?to", "location")),
            pre=(("robot-at", "?from"), ("adjacent", "?from", "?to")),
            add=(("robot-at", "?to"),),
            delete=(("robot-at", "?from"),)),
        ActionSchema(
            "pick", (("?obj", "object"), ("?loc", "location")),
            pre=(("at", "?obj", "?loc"), ("robot-at", "?loc"),
                 ("gripper-empty",)),
            add=(("holding", "?obj"),),
            delete=(("at", "?obj", "?loc"), ("gripper-empty",))),
        ActionSchema(
            "place", (("?obj", "object"), ("?loc", "location")),
            pre=(("holding", "?obj"), ("robot-at", "?loc")),
            add=(("at", "?obj", "?loc"), ("gripper-empty",)),
            delete=(("holding", "?obj"),)),
        ActionSchema(
            "toggle-on", (("?dev", "device"), ("?loc", "location")),
            pre=(("is-off", "?dev"), ("device-at", "?dev", "?loc"),
                 ("robot-at", "?loc")),
            add=(("is-on", "?dev"),),
            delete=(("is-off", "?dev"),)),
        ActionSchema(
            "toggle-off", (("?dev", "device"), ("?loc", "location")),
            pre=(("is-on", "?dev"), ("device-at", "?dev", "?loc"),
                 ("robot-at", "?loc")),
            add=(("is-off", "?dev"),),
            delete=(("is-on", "?dev"),)),
    )
    predicates = {
        "robot-at": ("location",),
        "at": ("object", "location"),
        "holding": ("object",),
        "gripper-empty": (),
        "is-on": ("device",),
        "is-off": ("device",),
        "adjacent": ("location", "location"),
        "device-at": ("device", "location"),
    }
    return Domain(name=DOMAIN_NAME, types=("location", "object", "device"),
                  predicates=predicates, actions=actions)


def world_init(world: WorldModel):
    """(objects typing map, init fluent set) for the current world state."""
    objects = {}
    init = set()
    for loc in world.locations:
        objects[loc] = "location"
        for nb in world.locations[loc]:
            init.add(("adjacent", loc, nb))
    for name, obj in world.objects.items():
        objects[name] = "object"
        if obj.location == GRIPPER:
            init.add(("holding", name))
        elif obj.location != UNKNOWN:
            init.add(("at", name, obj.location))
    for name, dev in world.devices.items():
        objects[name] = "device"
        init.add(("device-at", name, dev.location))
        init.add(("is-on", name) if dev.state == "on" else ("is-off", name))
    init.add(("robot-at", world.robot_location))
    if world.gripper is None:
        init.add(("gripper-empty",))
    return objects, frozenset(init)


# Slots a task template must have before a problem can be generated.
GOAL_TEMPLATES = {
    "Motion": ("goal-location",),
    "Taking": ("object",),
    "Bringing": ("object", "goal-location"),
    "Placing": ("object", "goal-location"),
    "Change-state": ("device", "intended-state"),
    "Searching": ("search-area",),
}


def generate_problem(task_type: str, slots: dict, world: WorldModel,
                     name: str = "task") -> PlanningProblem:
    """Instantiate the task's goal template over grounded slot values.

    slots maps argument type -> entity/value name (already grounded).
    """
    if task_type not in GOAL_TEMPLATES:
        raise MissingSlotError(f"no planning template for {task_type!r}")
    for slot in GOAL_TEMPLATES[task_type]:
        if not slots.get(slot):
            raise MissingSlotError(f"{task_type} is missing slot {slot!r}")
    objects, init = world_init(world)

    def known(const):
        if const not in objects:
            raise UnknownConstantError(f"unknown constant {const!r}")
        return const

    if task_type == "Motion":
        goal = {("robot-at", known(slots["goal-location"]))}
    elif task_type == "Taking":
        goal = {("holding", known(slots["object"]))}
    elif task_type in ("Bringing", "Placing"):
        goal = {("at", known(slots["object"]),
                 known(slots["goal-location"]))}
    elif task_type == "Change-state":
        state = slots["intended-state"]
        if state not in ("on", "off"):
            raise MissingSlotError(f"bad intended-state {state!r}")
        goal = {(f"is-{state}", known(slots["device"]))}
    else:  # Searching
        goal = {("robot-at", known(slots["search-area"]))}
    return PlanningProblem(name=name, domain=build_domain(), objects=objects,
                           init=init, goal=frozenset(goal))


# -- solving -------------------------------------------------------------

def _ground_actions(problem: PlanningProblem):
    by_type = {}
    for const, t in problem.objects.items():
        by_type.setdefault(t, []).append(const)
    for t in by_type:
        by_type[t].sort()
    statics = {f for f in problem.init if f[0] in STATIC_PREDICATES}
    grounded = []

    def instantiate(schema, binding):
        def sub(fl):
            return tuple(binding.get(a, a) for a in fl)
        pre = tuple(sub(f) for f in schema.pre)
        # statically false preconditions prune the grounding
        for f in pre:
            if f[0] in STATIC_PREDICATES and f not in statics:
                return None
        return (
            (schema.name,) + tuple(binding[v] for v, _ in schema.params),
            tuple(f for f in pre if f[0] not in STATIC_PREDICATES),
            tuple(sub(f) for f in schema.add),
            tuple(sub(f) for f in schema.delete),
        )

    for schema in problem.domain.actions:
        pools = [by_type.get(t, []) for _, t in schema.params]
        stack = [({}, 0)]
        while stack:
            binding, i = stack.pop()
            if i == len(schema.params):
                g = instantiate(schema, binding)
                if g is not None:
                    grounded.append(g)
                continue
            var = schema.params[i][0]
            for const in reversed(pools[i]):
                b2 = dict(binding)
                b2[var] = const
                stack.append((b2, i + 1))
    grounded.sort(key=lambda g: g[0])
    return grounded


def _dynamic(fluents):
    return frozenset(f for f in fluents if f[0] not in STATIC_PREDICATES)


def solve(problem: PlanningProblem, budget: int = 100_000):
    """Plan or None (proven unsolvable).  Raises BudgetExhaustedError when
    the node budget runs out before either outcome.

    Small instances go through breadth-first search, which also serves as
    the optimality oracle; larger ones use greedy best-first on a relaxed
    plan length heuristic with deterministic tie-breaking.
    """
    goal = _dynamic(problem.goal)
    for f in problem.goal:
        if f[0] in STATIC_PREDICATES and f not in problem.init:
            return None
    start = _dynamic(problem.init)
    if goal <= start:
        return Plan(steps=[])
    actions = _ground_actions(problem)
    n_entities = sum(1 for t in problem.objects.values() if t != "location")
    n_locs = sum(1 for t in problem.objects.values() if t == "location")
    if n_entities <= 8 and n_locs <= 4:
        return _bfs(start, goal, actions, budget)
    return _greedy(start, goal, actions, budget)


def _apply(state, act):
    _, pre, add, dele = act
    return frozenset((state - frozenset(dele)) | frozenset(add))


def _applicable(state, act):
    return all(f in state for f in act[1])


def _bfs(start, goal, actions, budget):
    from collections import deque
    seen = {start}
    queue = deque([(start, [])])
    expanded = 0
    while queue:
        state, path = queue.popleft()
        expanded += 1
        if expanded > budget:
            raise BudgetExhaustedError(f"exceeded {budget} expansions")
        for act in actions:
            if not _applicable(state, act):
                continue
            nxt = _apply(state, act)
            if nxt in seen:
                continue
            npath = path + [act[0]]
            if goal <= nxt:
                return Plan(steps=npath)
            seen.add(nxt)
            queue.append((nxt, npath))
    return None


def relaxed_plan_length(state, goal, actions):
    """FF-style heuristic: length of a plan for the delete relaxation,
    or None if the goal is relaxed-unreachable."""
    if goal <= state:
        return 0
    level = {f: 0 for f in state}
    achiever = {}
    layer = 0
    facts = set(state)
    applied = set()
    while True:
        layer += 1
        new = []
        for idx, act in enumerate(actions):
            if idx in applied or not all(f in facts for f in act[1]):
                continue
            applied.add(idx)
            for f in act[2]:
                if f not in level:
                    level[f] = layer
                    achiever[f] = act
                    new.append(f)
        facts.update(new)
        if goal <= facts:
            break
        if not new:
            return None
    # backchain, counting each supporting action once
    needed = [f for f in goal if level[f] > 0]
    chosen = set()
    count = 0
    while needed:
        f = needed.pop()
        act = achiever[f]
        key = act[0]
        if key in chosen:
            continue
        chosen.add(key)
        count += 1
        for p in act[1]:
            if level.get(p, 0) > 0 and p in achiever:
                needed.append(p)
    return count


def _greedy(start, goal, actions, budget):
    h0 = relaxed_plan_length(start, goal, actions)
    if h0 is None:
        return None
    counter = 0
    heap = [(h0, counter, start, [])]
    seen = {start}
    expanded = 0
    while heap:
        _, _, state, path = heapq.heappop(heap)
        expanded += 1
        if expanded > budget:
            raise BudgetExhaustedError(f"exceeded {budget} expansions")
        for act in actions:
            if not _applicable(state, act):
                continue
            nxt = _apply(state, act)
            if nxt in seen:
                continue
            seen.add(nxt)
            npath = path + [act[0]]
            if goal <= nxt:
                return Plan(steps=npath)
            h = relaxed_plan_length(nxt, goal, actions)
            if h is None:
                continue
            counter += 1
            heapq.heappush(heap, (h, counter, nxt, npath))
    return None


def validate(plan: Plan, problem: PlanningProblem):
    """"ok" or the index of the first failing step."""
    actions = {g[0]: g for g in _ground_actions(problem)}
    state = _dynamic(problem.init)
    for i, step in enumerate(plan.steps):
        act = actions.get(tuple(step))
        if act is None or not _applicable(state, act):
            return i
        state = _apply(state, act)
    if _dynamic(problem.goal) <= state:
        return "ok"
    return len(plan.steps)


# -- PDDL text -----------------------------------------------------------

def emit_domain(domain: Domain) -> str:
    lines = [f"(define (domain {domain.name})",
             "  (:requirements :strips :typing)",
             "  (:types " + " ".join(sorted(domain.types)) + ")",
             "  (:predicates"]
    for pred in sorted(domain.predicates):
        args = " ".join(f"?a{i} - {t}"
                        for i, t in enumerate(domain.predicates[pred]))
        lines.append(f"    ({pred}{' ' + args if args else ''})")
    lines.append("  )")
    for act in sorted(domain.actions, key=lambda a: a.name):
        params = " ".join(f"{v} - {t}" for v, t in act.params)
        lines.append(f"  (:action {act.name}")
        lines.append(f"    :parameters ({params})")
        lines.append("    :precondition (and " +
                     " ".join(_fluent_str(f) for f in act.pre) + ")")
        effects = [_fluent_str(f) for f in act.add]
        effects += [f"(not {_fluent_str(f)})" for f in act.delete]
        lines.append("    :effect (and " + " ".join(effects) + ")")
        lines.append("  )")
    lines.append(")")
    return "\n".join(lines) + "\n"


def emit_problem(problem: PlanningProblem) -> str:
    by_type = {}
    for const, t in problem.objects.items():
        by_type.setdefault(t, []).append(const)
    lines = [f"(define (problem {problem.name})",
             f"  (:domain {problem.domain.name})",
             "  (:objects"]
    for t in sorted(by_type):
        lines.append("    " + " ".join(sorted(by_type[t])) + f" - {t}")
    lines.append("  )")
    lines.append("  (:init")
    for f in sorted(problem.init):
        lines.append("    " + _fluent_str(f))
    lines.append("  )")
    goal = " ".join(_fluent_str(f) for f in sorted(problem.goal))
    lines.append(f"  (:goal (and {goal}))")
    lines.append(")")
    return "\n".join(lines) + "\n"


def _fluent_str(fluent) -> str:
    return "(" + " ".join(fluent) + ")"


def _tokenize_pddl(text):
    tokens = []
    line, col = 1, 1
    i = 0
    while i < len(text):
        c = text[i]
        if c == "\n":
            line += 1
            col = 1
            i += 1
        elif c.isspace():
            col += 1
            i += 1
        elif c == ";":
            while i < len(text) and text[i] != "\n":
                i += 1
        elif c in "()":
            tokens.append((c, line, col))
            col += 1
            i += 1
        else:
            j = i
            start_col = col
            while j < len(text) and not text[j].isspace() and text[j] not in "();":
                j += 1
                col += 1
            tokens.append((text[i:j], line, start_col))
            i = j
    return tokens


def _parse_sexpr(tokens, pos):
    if pos >= len(tokens):
        last = tokens[-1] if tokens else ("", 1, 1)
        raise PddlSyntaxError("unexpected end of input", last[1], last[2])
    tok, line, col = tokens[pos]
    if tok == "(":
        items = []
        pos += 1
        while True:
            if pos >= len(tokens):
                raise PddlSyntaxError("missing \")\"", line, col)
            if tokens[pos][0] == ")":
                return items, pos + 1
            item, pos = _parse_sexpr(tokens, pos)
            items.append(item)
    if tok == ")":
        raise PddlSyntaxError("unexpected \")\"", line, col)
    return tok, pos + 1


def _typed_list(items):
    """Parse "a b - t c - u" style typed lists into [(name, type)]."""
    out = []
    pending = []
    i = 0
    while i < len(items):
        if items[i] == "-":
            t = items[i + 1]
            out.extend((n, t) for n in pending)
            pending = []
            i += 2
        else:
            pending.append(items[i])
            i += 1
    out.extend((n, "object") for n in pending)
    return out


def parse_pddl(text: str):
    """Parse a domain or problem in the supported STRIPS+typing subset."""
    tokens = _tokenize_pddl(text)
    tree, pos = _parse_sexpr(tokens, 0)
    if pos < len(tokens):
        t, line, col = tokens[pos]
        raise PddlSyntaxError(f"trailing input {t!r}", line, col)
    if not (isinstance(tree, list) and tree and tree[0] == "define"):
        raise PddlSyntaxError("expected (define ...)", 1, 1)
    head = tree[1]
    if head[0] == "domain":
        return _parse_domain(tree)
    if head[0] == "problem":
        return _parse_problem(tree)
    raise PddlSyntaxError("expected domain or problem", 1, 1)


def _parse_domain(tree) -> Domain:
    name = tree[1][1]
    types = ()
    predicates = {}
    actions = []
    for section in tree[2:]:
        kind = section[0]
        if kind == ":requirements":
            for req in section[1:]:
                if req not in SUPPORTED_REQUIREMENTS:
                    raise UnsupportedRequirementError(
                        f"requirement {req} is not supported")
        elif kind == ":types":
            types = tuple(section[1:])
        elif kind == ":predicates":
            for p in section[1:]:
                predicates[p[0]] = tuple(t for _, t in _typed_list(p[1:]))
        elif kind == ":action":
            actions.append(_parse_action(section))
        else:
            raise UnsupportedRequirementError(
                f"section {kind} is not supported")
    return Domain(name=name, types=types, predicates=predicates,
                  actions=tuple(actions))


def _parse_action(section) -> ActionSchema:
    name = section[1]
    body = {section[i]: section[i + 1] for i in range(2, len(section), 2)}
    params = tuple(_typed_list(body[":parameters"]))
    pre = _conjunction(body[":precondition"])
    add, delete = [], []
    for item in _items(body[":effect"]):
        if item[0] == "not":
            delete.append(tuple(item[1]))
        else:
            add.append(tuple(item))
    return ActionSchema(name=name, params=params, pre=pre,
                        add=tuple(add), delete=tuple(delete))


def _items(expr):
    if expr and expr[0] == "and":
        return expr[1:]
    return [expr]


def _conjunction(expr):
    return tuple(tuple(item) for item in _items(expr))


def _parse_problem(tree) -> PlanningProblem:
    name = tree[1][1]
    domain_name = None
    objects = {}
    init = set()
    goal = set()
    for section in tree[2:]:
        kind = section[0]
        if kind == ":domain":
            domain_name = section[1]
        elif kind == ":objects":
            objects.update(dict(_typed_list(section[1:])))
        elif kind == ":init":
            init.update(tuple(f) for f in section[1:])
        elif kind == ":goal":
            goal.update(tuple(f) for f in _items(section[1]))
        elif kind == ":requirements":
            for req in section[1:]:
                if req not in SUPPORTED_REQUIREMENTS:
                    raise UnsupportedRequirementError(
                        f"requirement {req} is not supported")
        else:
            raise UnsupportedRequirementError(
                f"section {kind} is not supported")
    domain = build_domain()
    if domain_name != domain.name:
        domain = Domain(name=domain_name or "", types=domain.types,
                        predicates=domain.predicates, actions=domain.actions)
    return PlanningProblem(name=name, domain=domain, objects=objects,
                           init=frozenset(init), goal=frozenset(goal))
