"""Task -> affordance rules and the shipped 21-task table."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from togkit.errors import InvariantViolation, UnknownTask


class Polarity(str, enum.Enum):
    REQUIRE = "require"
    AVOID = "avoid"
    NONE = "none"


@dataclass(frozen=True)
class TaskRule:
    """``R(task)``: grasp on (require) or away from (avoid) an affordance.

    ``categories`` lists the object categories the task applies to (``None``
    means every category); ``exclude`` removes categories from that set.
    """

    task: str
    polarity: Polarity
    affordance: str | None = None
    categories: tuple[str, ...] | None = None
    exclude: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "polarity", Polarity(self.polarity))
        if (self.polarity is Polarity.NONE) != (self.affordance is None):
            raise InvariantViolation(
                f"rule {self.task!r}: polarity {self.polarity.value} with affordance {self.affordance!r}"
            )
        if self.categories is not None:
            object.__setattr__(self, "categories", tuple(self.categories))
        object.__setattr__(self, "exclude", tuple(self.exclude))

    def applies_to(self, category: str) -> bool:
        if category in self.exclude:
            return False
        return self.categories is None or category in self.categories

    def to_json(self) -> dict:
        return {
            "name": self.task,
            "polarity": self.polarity.value,
            "affordance": self.affordance,
            "categories": None if self.categories is None else list(self.categories),
            "exclude": list(self.exclude),
        }

    @classmethod
    def from_json(cls, d: dict) -> TaskRule:
        cats = d.get("categories")
        return cls(
            d["name"],
            Polarity(d["polarity"]),
            d.get("affordance"),
            None if cats is None else tuple(cats),
            tuple(d.get("exclude", ())),
        )


_R, _A, _N = Polarity.REQUIRE, Polarity.AVOID, Polarity.NONE

DEFAULT_RULES: tuple[TaskRule, ...] = (
    TaskRule("transport", _N, None),
    TaskRule("handover", _A, "grasp", None, ("cable",)),
    TaskRule("brushing", _R, "grasp", ("hairbrush", "toothbrush")),
    TaskRule("clamping", _R, "grasp", ("clip", "tongs")),
    TaskRule("connecting", _R, "connect", ("cable",)),
    TaskRule("cutting", _R, "grasp", ("pizza_cutter", "scissors")),
    TaskRule("flipping", _R, "grasp", ("spatula",)),
    TaskRule("frying", _R, "grasp", ("pan",)),
    TaskRule("gluing", _R, "grasp", ("glue",)),
    TaskRule("grating", _R, "grasp", ("grater",)),
    TaskRule("hitting", _R, "grasp", ("hammer", "tenderizer")),
    TaskRule("measuring", _R, "grasp", ("thermometer",)),
    TaskRule("opening", _R, "open", ("toothpaste", "vitamin")),
    TaskRule("painting", _A, "paint", ("paint_brush", "paint_roller")),
    TaskRule("peeling", _R, "grasp", ("peeler",)),
    TaskRule("scooping", _R, "grasp", ("measuring_cup", "spoon")),
    TaskRule("screwing", _A, "screw", ("screw", "screwdriver")),
    TaskRule("scrubbing", _R, "grasp", ("dish_brush",)),
    TaskRule("shaving", _R, "grasp", ("razor",)),
    TaskRule("sweeping", _A, "contain", ("dustpan",)),
    TaskRule("writing", _R, "grasp", ("marker", "pen")),
)


def rule_lookup(rules, task: str) -> TaskRule:
    """The unique rule for ``task``; raises :class:`UnknownTask`."""
    found = [r for r in rules if r.task == task]
    if not found:
        raise UnknownTask(f"no rule for task {task!r}")
    if len(found) > 1:
        raise InvariantViolation(f"task {task!r} has {len(found)} rules")
    return found[0]


def applicable_tasks(rules, category: str) -> list[str]:
    """Tasks applicable to ``category``, in rule-table order."""
    return [r.task for r in rules if r.applies_to(category)]
