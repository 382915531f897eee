"""Built-in example systems and their expected property matrix."""

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Dict, List, Optional

from .dsl import parse_candidate, parse_system

PROPERTY_FLAGS = {
    "incremental": "IS",
    "exponential-incremental": "EIS",
    "convergent": "CD",
    "contraction": "CA",
    "demidovic": "EIS",
}


@dataclass(frozen=True)
class Example:
    name: str
    title: str
    source: str
    expected: Dict[str, Optional[bool]]
    candidates: Dict[str, str] = field(default_factory=dict)
    settings: Dict[str, dict] = field(default_factory=dict)

    def system(self):
        return parse_system(self.source, name=self.name)

    def candidate(self, mode):
        return parse_candidate(self.candidates[mode])

    def settings_for(self, prop):
        return dict(self.settings.get(prop, {}))


@dataclass(frozen=True)
class Registry:
    examples: Dict[str, Example]
    properties: List[str]
    implications: List[dict]
    non_implications: List[dict]

    def __getitem__(self, name):
        return self.examples[name]

    def __contains__(self, name):
        return name in self.examples

    def names(self):
        return sorted(self.examples)


def parse_registry(data):
    examples = {name: Example(name=name, **entry) for name, entry in data["examples"].items()}
    return Registry(examples, list(data["properties"]), list(data["implications"]),
                    list(data["non_implications"]))


@lru_cache(maxsize=1)
def load_registry():
    text = resources.files("converge").joinpath("data/registry.json").read_text()
    return parse_registry(json.loads(text))


def check_rules(registry):
    """Problems with the expected-property matrix (empty when consistent).

    Every implication must hold on every row where both sides are known, and
    every non-implication must be demonstrated by some row.
    """
    problems = []
    for ex in registry.examples.values():
        flags = ex.expected
        for rule in registry.implications:
            need = rule.get("requires")
            if need and flags.get(need) is not True:
                continue
            if flags.get(rule["if"]) is True and flags.get(rule["then"]) is False:
                problems.append(f"{ex.name}: {rule['if']} holds but {rule['then']} does not")
    for rule in registry.non_implications:
        if not any(ex.expected.get(rule["from"]) is True and ex.expected.get(rule["to"]) is False
                   for ex in registry.examples.values()):
            problems.append(f"no example shows that {rule['from']} does not imply {rule['to']}")
    return problems


def expectation_table(registry):
    """Rows ``(name, title, {flag: value})`` for display."""
    cols = registry.properties + ["differentiable"]
    return [(ex.name, ex.title, {c: ex.expected.get(c) for c in cols})
            for ex in (registry[n] for n in registry.names())]
