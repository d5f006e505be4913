"""Behavioral marker taxonomy and human marker annotations.

Markers label what an agent is doing well or badly at each step; an
annotation maps message indices to one or more marker ids plus free-text
notes. Submission requires every marker-annotatable message to carry at
least one marker; drafts may be arbitrarily incomplete.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .traces import Trace, TraceCorpus, annotatable_messages

MARKER_CATEGORIES = ("positive", "neutral", "negative")


@dataclass(frozen=True)
class Marker:
    id: str
    category: str
    definition: str

    def __post_init__(self) -> None:
        if self.category not in MARKER_CATEGORIES:
            raise ValueError(f"unknown marker category {self.category!r}")


MARKER_TAXONOMY: tuple[Marker, ...] = (
    Marker("validation_attempt", "positive",
           "The agent checks an intermediate result or claim against the environment."),
    Marker("backtrack_trigger", "positive",
           "The agent abandons a failing approach and returns to an earlier decision point."),
    Marker("planning_statement", "positive",
           "The agent lays out concrete steps it intends to take next."),
    Marker("reasoning_statement", "positive",
           "The agent draws a sound intermediate conclusion from information in context."),
    Marker("correct_submission", "positive",
           "The agent submits a final answer that solves the task."),
    Marker("todo_list", "positive",
           "The agent keeps an explicit running list of remaining subtasks."),
    Marker("neutral", "neutral",
           "Bookkeeping or boilerplate with no bearing on task progress."),
    Marker("missing_validation", "negative",
           "A checkable result is used without any attempt to verify it."),
    Marker("unnecessary_tool_use", "negative",
           "A tool invocation that cannot contribute to the task state."),
    Marker("non_sense", "negative",
           "Output that is incoherent or unrelated to the task."),
    Marker("loop_instance", "negative",
           "The agent repeats an already-tried action or utterance without change."),
    Marker("hallucination", "negative",
           "The agent asserts environment state or results that were never observed."),
    Marker("wrong_planning", "negative",
           "A stated plan that cannot achieve the goal or contradicts known constraints."),
    Marker("wrong_reasoning", "negative",
           "An inference that does not follow from the information in context."),
    Marker("syntax_error", "negative",
           "A malformed tool call or code snippet the environment cannot parse."),
    Marker("early_final_answer", "negative",
           "A final answer submitted before available checks were exhausted."),
    Marker("give_up", "negative",
           "The agent stops trying while the task is still solvable."),
    Marker("inefficient_tool_call", "negative",
           "A tool use that advances the task in a needlessly costly way."),
    Marker("iteration_limit", "negative",
           "The run is cut off by the scaffold's step limit."),
    Marker("misunderstood_tool", "negative",
           "The agent uses a tool contrary to its documented behavior."),
)

MARKERS_BY_ID: Mapping[str, Marker] = {m.id: m for m in MARKER_TAXONOMY}


def taxonomy_doc() -> dict:
    """The taxonomy in its served wire shape."""
    return {
        "markers": [
            {"id": m.id, "category": m.category, "definition": m.definition}
            for m in MARKER_TAXONOMY
        ]
    }


@dataclass(frozen=True)
class NodeMarks:
    marker_ids: tuple[str, ...]
    note: str | None = None

    def __post_init__(self) -> None:
        if not self.marker_ids:
            raise ValueError("a marked node needs at least one marker")
        if len(set(self.marker_ids)) != len(self.marker_ids):
            raise ValueError(f"duplicate marker ids: {self.marker_ids}")


@dataclass(frozen=True)
class MarkerAnnotation:
    trace_id: str
    annotator_id: str
    submitted: bool = False
    nodes: Mapping[int, NodeMarks] = field(default_factory=dict)
    trace_note: str | None = None

    def __post_init__(self) -> None:
        if not self.trace_id:
            raise ValueError("trace_id is required")
        if not self.annotator_id:
            raise ValueError("annotator_id is required")
        for index in self.nodes:
            if not isinstance(index, int) or index < 0:
                raise ValueError(f"node keys are message indices; got {index!r}")


def validate_annotation(annotation: MarkerAnnotation) -> None:
    """Reject marker ids outside the taxonomy."""
    for index, marks in annotation.nodes.items():
        for marker_id in marks.marker_ids:
            if marker_id not in MARKERS_BY_ID:
                raise ValueError(
                    f"unknown marker {marker_id!r} on message {index}"
                )


def check_submission_completeness(
    annotation: MarkerAnnotation, trace: Trace
) -> bool:
    """True iff every marker-annotatable message carries at least one marker."""
    if annotation.trace_id != trace.trace_id:
        raise ValueError(
            f"annotation is for {annotation.trace_id!r}, trace is {trace.trace_id!r}"
        )
    required = annotatable_messages(trace, "marker")
    return all(m.index in annotation.nodes for m in required)


def annotation_to_doc(annotation: MarkerAnnotation) -> dict:
    doc: dict = {
        "trace_id": annotation.trace_id,
        "annotator_id": annotation.annotator_id,
        "submitted": annotation.submitted,
    }
    if annotation.trace_note is not None:
        doc["trace_note"] = annotation.trace_note
    nodes = {}
    for index in sorted(annotation.nodes):
        marks = annotation.nodes[index]
        entry: dict = {"marker_ids": list(marks.marker_ids)}
        if marks.note is not None:
            entry["note"] = marks.note
        nodes[str(index)] = entry
    doc["nodes"] = nodes
    return doc


def annotation_from_doc(doc: Mapping) -> MarkerAnnotation:
    if not isinstance(doc, Mapping):
        raise ValueError("annotation document must be an object")
    try:
        trace_id = doc["trace_id"]
        annotator_id = doc["annotator_id"]
    except KeyError as exc:
        raise ValueError(f"annotation document lacks {exc.args[0]!r}") from exc
    raw_nodes = doc.get("nodes", {})
    if not isinstance(raw_nodes, Mapping):
        raise ValueError("nodes must map message indices to marker lists")
    nodes = {}
    for key, entry in raw_nodes.items():
        try:
            index = int(key)
        except (TypeError, ValueError):
            raise ValueError(f"node key {key!r} is not a message index")
        if not isinstance(entry, Mapping) or not isinstance(
            entry.get("marker_ids"), list
        ):
            raise ValueError(f"node {key}: expected {{'marker_ids': [...]}}")
        nodes[index] = NodeMarks(
            marker_ids=tuple(entry["marker_ids"]), note=entry.get("note")
        )
    annotation = MarkerAnnotation(
        trace_id=trace_id,
        annotator_id=annotator_id,
        submitted=bool(doc.get("submitted", False)),
        nodes=nodes,
        trace_note=doc.get("trace_note"),
    )
    validate_annotation(annotation)
    return annotation


# --- counts -----------------------------------------------------------------

COUNT_GROUP_FIELDS = ("model", "scaffold")


def marker_counts(
    annotations: Iterable[MarkerAnnotation],
    corpus: TraceCorpus,
    group_by: Sequence[str] = (),
) -> list[dict]:
    """Occurrence counts per marker, one row per taxonomy entry.

    Each (message, marker) pair counts once. Rows carry a total plus one
    column per group discovered in the annotations; markers never observed
    stay in the table at zero.
    """
    group_by = tuple(group_by)
    for fieldname in group_by:
        if fieldname not in COUNT_GROUP_FIELDS:
            raise ValueError(
                f"cannot group by {fieldname!r}; choose from {COUNT_GROUP_FIELDS}"
            )
    totals = {m.id: 0 for m in MARKER_TAXONOMY}
    per_group: dict[str, dict[str, int]] = {}
    labels: list[str] = []
    for annotation in annotations:
        trace = corpus.by_id(annotation.trace_id)
        label = "/".join(str(getattr(trace, f)) for f in group_by) if group_by else "all"
        if label not in per_group:
            per_group[label] = {m.id: 0 for m in MARKER_TAXONOMY}
            labels.append(label)
        for marks in annotation.nodes.values():
            for marker_id in marks.marker_ids:
                if marker_id not in totals:
                    raise ValueError(f"unknown marker {marker_id!r}")
                totals[marker_id] += 1
                per_group[label][marker_id] += 1
    rows = []
    for marker in MARKER_TAXONOMY:
        row: dict = {
            "marker": marker.id,
            "category": marker.category,
            "total": totals[marker.id],
        }
        for label in sorted(labels):
            row[label] = per_group[label][marker.id]
        rows.append(row)
    return rows
