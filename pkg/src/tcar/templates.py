"""Question template file: parsing and rendering.

Templates quote the user's own words where available and fall back to a
generic phrase per argument type, so rendering is total for every
(task, argument) pair the task set can reach.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources

_SLOT_RE = re.compile(r"\{([a-z-]+)\}")


class TemplateError(ValueError):
    pass


@dataclass
class TemplateSet:
    confirm: dict = field(default_factory=dict)   # task -> pattern
    elicit: dict = field(default_factory=dict)    # (task, arg) -> pattern
    generic: dict = field(default_factory=dict)   # arg -> filler phrase
    verbs: dict = field(default_factory=dict)     # task -> verb synonym

    def render_confirm(self, task: str, arguments: dict) -> str:
        pattern = self.confirm.get(task)
        if pattern is None:
            raise TemplateError(f"no confirmation template for {task!r}")
        return self._fill(pattern, task, arguments)

    def render_elicit(self, task: str, argument: str, arguments: dict) -> str:
        pattern = self.elicit.get((task, argument))
        if pattern is None:
            raise TemplateError(
                f"no elicitation template for {task!r}/{argument!r}")
        return self._fill(pattern, task, arguments)

    def _fill(self, pattern: str, task: str, arguments: dict) -> str:
        def sub(match):
            slot = match.group(1)
            if slot == "verb":
                return self.verbs.get(task, task.lower())
            value = arguments.get(slot)
            if value is not None:
                return value if isinstance(value, str) else value.text
            filler = self.generic.get(slot)
            if filler is None:
                raise TemplateError(f"no generic phrase for slot {slot!r}")
            return filler
        text = _SLOT_RE.sub(sub, pattern)
        if "{" in text:
            raise TemplateError(f"unfilled slot in {text!r}")
        return text


def parse_templates(text: str) -> TemplateSet:
    ts = TemplateSet()
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise TemplateError(f"line {ln}: expected 'key = pattern'")
        key, pattern = line.split("=", 1)
        parts = key.split()
        pattern = pattern.strip()
        if parts[0] == "confirm" and len(parts) == 2:
            ts.confirm[parts[1]] = pattern
        elif parts[0] == "elicit" and len(parts) == 3:
            ts.elicit[(parts[1], parts[2])] = pattern
        elif parts[0] == "generic" and len(parts) == 2:
            ts.generic[parts[1]] = pattern
        elif parts[0] == "verb" and len(parts) == 2:
            ts.verbs[parts[1]] = pattern
        else:
            raise TemplateError(f"line {ln}: bad template key {key!r}")
    return ts


def load_templates(path=None) -> TemplateSet:
    if path is None:
        text = resources.files("tcar.data").joinpath("templates.txt").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    return parse_templates(text)
