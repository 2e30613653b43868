"""Annotation schema, knowledge base, task rules and annotation assists."""

from togkit.dataset.annotate import (
    Similarity,
    auto_label,
    auto_label_dataset,
    estimate_similarity,
    refine_affordance,
    refine_dataset,
)
from togkit.dataset.model import (
    SPLIT_GROUPS,
    SPLITS,
    Category,
    Dataset,
    KnowledgeEntry,
    SceneAnnotation,
    SceneObject,
    dataset_from_json,
    dataset_to_json,
    load_dataset,
    load_rgb,
    save_dataset,
)
from togkit.dataset.rules import DEFAULT_RULES, Polarity, TaskRule, applicable_tasks, rule_lookup
from togkit.dataset.validate import Issue, ValidationReport, validate_dataset

__all__ = [
    "Category",
    "DEFAULT_RULES",
    "Dataset",
    "Issue",
    "KnowledgeEntry",
    "Polarity",
    "SPLITS",
    "SPLIT_GROUPS",
    "SceneAnnotation",
    "SceneObject",
    "Similarity",
    "TaskRule",
    "ValidationReport",
    "applicable_tasks",
    "auto_label",
    "auto_label_dataset",
    "dataset_from_json",
    "dataset_to_json",
    "estimate_similarity",
    "load_dataset",
    "load_rgb",
    "refine_affordance",
    "refine_dataset",
    "rule_lookup",
    "save_dataset",
    "validate_dataset",
]
