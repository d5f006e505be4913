"""Reasoning motif templates over validated epistemic graphs.

Each motif is a typed subgraph pattern; a hit is one assignment of graph
nodes to the pattern's roles. Detection reports every assignment, so motif
frequency and per-node diagnostics both fall out of the same pass.
Prevalence is reported at trace level (motif present or not) with equal
weight given to each environment when a grouping does not separate them.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from .graph import EpistemicGraph
from .traces import TraceCorpus

FAMILIES = ("hypothesis_handling", "evidence_handling", "inquiry_control")
POLARITIES = ("productive", "breakdown")

GROUP_FIELDS = ("model", "environment", "scaffold", "scope", "task_id", "trial")

Bindings = tuple[tuple[str, str], ...]


@dataclass(frozen=True)
class Motif:
    name: str
    family: str
    polarity: str
    roles: tuple[str, ...]
    description: str

    def __post_init__(self) -> None:
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if self.polarity not in POLARITIES:
            raise ValueError(f"unknown polarity {self.polarity!r}")


@dataclass(frozen=True)
class MotifHit:
    motif: str
    bindings: Bindings = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "bindings", tuple(sorted(self.bindings)))

    def binding(self, role: str) -> str:
        for name, node_id in self.bindings:
            if name == role:
                return node_id
        raise KeyError(role)


MOTIF_CATALOG: tuple[Motif, ...] = (
    Motif(
        "evidence_led_hypothesis_generation", "hypothesis_handling", "productive",
        ("E", "H"),
        "Evidence informs a later hypothesis (directly or via a judgment J) "
        "and that hypothesis is then tested.",
    ),
    Motif(
        "hypothesis_reranking", "hypothesis_handling", "productive",
        ("H1", "H2"),
        "Two competing hypotheses are held at once and both get tested.",
    ),
    Motif(
        "refutation_driven_belief_revision", "hypothesis_handling", "productive",
        ("H1", "H2", "T", "E"),
        "A hypothesis is revised after evidence produced by its own test.",
    ),
    Motif(
        "explore_then_test_transition", "hypothesis_handling", "productive",
        ("T1", "H"),
        "An exploratory probe (a test tied to no hypothesis) yields an "
        "observation before a hypothesis is raised and tested.",
    ),
    Motif(
        "convergent_multi_test_evidence", "evidence_handling", "productive",
        ("H", "T1", "T2"),
        "One hypothesis is checked by two distinct tests that both produced "
        "observations.",
    ),
    Motif(
        "fixed_hypothesis_test_tuning", "inquiry_control", "productive",
        ("H", "T", "E", "J", "T2"),
        "The hypothesis stays fixed while its test is retuned through an "
        "evidence-informed judgment.",
    ),
    Motif(
        "evidence_guided_test_redesign", "inquiry_control", "productive",
        ("J", "T"),
        "A judgment motivates a new test that is actually run.",
    ),
    Motif(
        "untested_claim", "hypothesis_handling", "breakdown",
        ("H",),
        "A hypothesis is stated but never tested.",
    ),
    Motif(
        "one_sided_confirmation", "hypothesis_handling", "breakdown",
        ("C",),
        "A claim rests only on hypotheses that received supporting input and "
        "no recorded contradiction.",
    ),
    Motif(
        "contradiction_without_repair", "hypothesis_handling", "breakdown",
        ("X", "H"),
        "Evidence or a judgment contradicts a hypothesis that is never "
        "revised.",
    ),
    Motif(
        "premature_commitment", "hypothesis_handling", "breakdown",
        ("C", "H"),
        "A claim rests on a hypothesis that was never tested.",
    ),
    Motif(
        "evidence_non_uptake", "evidence_handling", "breakdown",
        ("E",),
        "An observation is produced but feeds nothing downstream.",
    ),
    Motif(
        "disconnected_evidence", "evidence_handling", "breakdown",
        ("E",),
        "An observation node with no edges at all.",
    ),
    Motif(
        "unsupported_judgment", "evidence_handling", "breakdown",
        ("J",),
        "A judgment with no informing evidence.",
    ),
    Motif(
        "uninformative_test", "evidence_handling", "breakdown",
        ("T",),
        "A test whose outcome is never recorded as an observation.",
    ),
    Motif(
        "fixed_belief_trace", "inquiry_control", "breakdown",
        (),
        "The trace holds at least one hypothesis and no revision anywhere.",
    ),
    Motif(
        "precommitted_test_plan", "inquiry_control", "breakdown",
        ("C",),
        "A claim is made before any observation exists.",
    ),
    Motif(
        "stalled_revision", "inquiry_control", "breakdown",
        ("H2",),
        "A revised hypothesis that is itself never tested nor revised again.",
    ),
)

MOTIF_BY_NAME: Mapping[str, Motif] = {m.name: m for m in MOTIF_CATALOG}


# --- graph view -------------------------------------------------------------


class _View:
    """Adjacency indexes for one graph, built once per detection pass."""

    def __init__(self, graph: EpistemicGraph):
        self.graph = graph
        self.position = {n.node_id: i for i, n in enumerate(graph.nodes)}
        self.node_type = {n.node_id: n.node_type for n in graph.nodes}
        self.time = {n.node_id: n.time for n in graph.nodes}
        self.by_type: dict[str, list[str]] = defaultdict(list)
        for node in graph.nodes:
            self.by_type[node.node_type].append(node.node_id)
        self.out: dict[tuple[str, str], list[str]] = defaultdict(list)
        self.into: dict[tuple[str, str], list[str]] = defaultdict(list)
        self.out_any: dict[str, int] = defaultdict(int)
        self.in_any: dict[str, int] = defaultdict(int)
        self.relation_count: dict[str, int] = defaultdict(int)
        for edge in graph.edges:
            self.out[(edge.src, edge.relation)].append(edge.dst)
            self.into[(edge.dst, edge.relation)].append(edge.src)
            self.out_any[edge.src] += 1
            self.in_any[edge.dst] += 1
            self.relation_count[edge.relation] += 1

    def ids(self, node_type: str) -> list[str]:
        return self.by_type.get(node_type, [])

    def has_out(self, node_id: str, relation: str) -> bool:
        return bool(self.out.get((node_id, relation)))

    def has_in(self, node_id: str, relation: str) -> bool:
        return bool(self.into.get((node_id, relation)))

    def targets(self, node_id: str, relation: str) -> list[str]:
        return self.out.get((node_id, relation), [])

    def sources(self, node_id: str, relation: str) -> list[str]:
        return self.into.get((node_id, relation), [])


def claim_hypotheses(graph: EpistemicGraph, claim_id: str) -> tuple[str, ...]:
    """Hypotheses a claim rests on.

    Primary rule: every H that shares an informing J or E with the claim
    (the same J or E informs both). Fallback when that set is empty: the
    most recent H stated strictly before the claim (latest time, then latest
    graph position). No H at all yields an empty tuple.
    """
    view = _View(graph)
    return _claim_hypotheses(view, claim_id)


def _claim_hypotheses(view: _View, claim_id: str) -> tuple[str, ...]:
    if view.node_type.get(claim_id) != "C":
        raise ValueError(f"{claim_id!r} is not a C node")
    linked = []
    for h in view.ids("H"):
        for mediator_type in ("J", "E"):
            shared = False
            for src in view.sources(h, "informs"):
                if view.node_type[src] == mediator_type and claim_id in view.targets(
                    src, "informs"
                ):
                    shared = True
                    break
            if shared:
                linked.append(h)
                break
    if linked:
        return tuple(linked)
    claim_time = view.time[claim_id]
    earlier = [h for h in view.ids("H") if view.time[h] < claim_time]
    if not earlier:
        return ()
    latest = max(earlier, key=lambda h: (view.time[h], view.position[h]))
    return (latest,)


# --- templates --------------------------------------------------------------


def _evidence_led_hypothesis_generation(view: _View) -> set[Bindings]:
    hits = set()
    for h in view.ids("H"):
        if not view.has_out(h, "tests"):
            continue
        for src in view.sources(h, "informs"):
            if view.node_type[src] == "E" and view.time[src] < view.time[h]:
                hits.add((("E", src), ("H", h)))
            if view.node_type[src] == "J":
                for e in view.sources(src, "informs"):
                    if view.node_type[e] == "E" and view.time[e] < view.time[h]:
                        hits.add((("E", e), ("H", h), ("J", src)))
    return hits


def _hypothesis_reranking(view: _View) -> set[Bindings]:
    hits = set()
    for h1 in view.ids("H"):
        for h2 in view.targets(h1, "competes_with"):
            if view.node_type.get(h2) != "H":
                continue
            if view.has_out(h1, "tests") and view.has_out(h2, "tests"):
                hits.add((("H1", h1), ("H2", h2)))
    return hits


def _refutation_driven_belief_revision(view: _View) -> set[Bindings]:
    hits = set()
    for h1 in view.ids("H"):
        revisions = [h2 for h2 in view.targets(h1, "updates_to") if view.node_type.get(h2) == "H"]
        if not revisions:
            continue
        for t in view.targets(h1, "tests"):
            if view.node_type.get(t) != "T":
                continue
            for e in view.targets(t, "observes"):
                if view.node_type.get(e) != "E":
                    continue
                for h2 in revisions:
                    if view.time[e] <= view.time[h2]:
                        hits.add((("E", e), ("H1", h1), ("H2", h2), ("T", t)))
    return hits


def _explore_then_test_transition(view: _View) -> set[Bindings]:
    probes = [
        t
        for t in view.ids("T")
        if not view.has_in(t, "tests") and view.has_out(t, "observes")
    ]
    hits = set()
    for t1 in probes:
        for h in view.ids("H"):
            if view.has_out(h, "tests") and view.time[t1] < view.time[h]:
                hits.add((("H", h), ("T1", t1)))
    return hits


def _convergent_multi_test_evidence(view: _View) -> set[Bindings]:
    hits = set()
    for h in view.ids("H"):
        tested = [
            t
            for t in view.targets(h, "tests")
            if view.node_type.get(t) == "T" and view.has_out(t, "observes")
        ]
        tested = sorted(set(tested), key=lambda t: view.position[t])
        for i, t1 in enumerate(tested):
            for t2 in tested[i + 1 :]:
                hits.add((("H", h), ("T1", t1), ("T2", t2)))
    return hits


def _fixed_hypothesis_test_tuning(view: _View) -> set[Bindings]:
    hits = set()
    for h in view.ids("H"):
        if view.has_out(h, "updates_to"):
            continue
        for t in view.targets(h, "tests"):
            if view.node_type.get(t) != "T":
                continue
            for e in view.targets(t, "observes"):
                if view.node_type.get(e) != "E":
                    continue
                for j in view.targets(e, "informs"):
                    if view.node_type.get(j) != "J":
                        continue
                    for t2 in view.targets(j, "tests"):
                        if view.node_type.get(t2) == "T" and t2 != t:
                            hits.add(
                                (("E", e), ("H", h), ("J", j), ("T", t), ("T2", t2))
                            )
    return hits


def _evidence_guided_test_redesign(view: _View) -> set[Bindings]:
    hits = set()
    for j in view.ids("J"):
        for t in view.targets(j, "tests"):
            if view.node_type.get(t) == "T" and view.has_out(t, "observes"):
                hits.add((("J", j), ("T", t)))
    return hits


def _untested_claim(view: _View) -> set[Bindings]:
    return {(("H", h),) for h in view.ids("H") if not view.has_out(h, "tests")}


def _one_sided_confirmation(view: _View) -> set[Bindings]:
    hits = set()
    for c in view.ids("C"):
        basis = _claim_hypotheses(view, c)
        if not basis:
            continue
        if all(
            view.has_in(h, "informs") and not view.has_in(h, "contradicts")
            for h in basis
        ):
            hits.add((("C", c),))
    return hits


def _contradiction_without_repair(view: _View) -> set[Bindings]:
    hits = set()
    for h in view.ids("H"):
        if view.has_out(h, "updates_to"):
            continue
        for x in view.sources(h, "contradicts"):
            if view.node_type.get(x) in ("E", "J"):
                hits.add((("H", h), ("X", x)))
    return hits


def _premature_commitment(view: _View) -> set[Bindings]:
    hits = set()
    for c in view.ids("C"):
        for h in _claim_hypotheses(view, c):
            if not view.has_out(h, "tests"):
                hits.add((("C", c), ("H", h)))
    return hits


def _evidence_non_uptake(view: _View) -> set[Bindings]:
    return {
        (("E", e),)
        for e in view.ids("E")
        if view.in_any.get(e, 0) > 0 and view.out_any.get(e, 0) == 0
    }


def _disconnected_evidence(view: _View) -> set[Bindings]:
    return {
        (("E", e),)
        for e in view.ids("E")
        if view.in_any.get(e, 0) == 0 and view.out_any.get(e, 0) == 0
    }


def _unsupported_judgment(view: _View) -> set[Bindings]:
    hits = set()
    for j in view.ids("J"):
        informed = any(
            view.node_type.get(src) == "E" for src in view.sources(j, "informs")
        )
        if not informed:
            hits.add((("J", j),))
    return hits


def _uninformative_test(view: _View) -> set[Bindings]:
    return {(("T", t),) for t in view.ids("T") if not view.has_out(t, "observes")}


def _fixed_belief_trace(view: _View) -> set[Bindings]:
    if view.ids("H") and view.relation_count.get("updates_to", 0) == 0:
        return {()}
    return set()


def _precommitted_test_plan(view: _View) -> set[Bindings]:
    evidence = view.ids("E")
    if not evidence:
        return set()
    first = min(view.time[e] for e in evidence)
    return {(("C", c),) for c in view.ids("C") if view.time[c] < first}


def _stalled_revision(view: _View) -> set[Bindings]:
    hits = set()
    for h2 in view.ids("H"):
        if not view.has_in(h2, "updates_to"):
            continue
        if not view.has_out(h2, "tests") and not view.has_out(h2, "updates_to"):
            hits.add((("H2", h2),))
    return hits


_TEMPLATES: Mapping[str, Callable[[_View], set[Bindings]]] = {
    "evidence_led_hypothesis_generation": _evidence_led_hypothesis_generation,
    "hypothesis_reranking": _hypothesis_reranking,
    "refutation_driven_belief_revision": _refutation_driven_belief_revision,
    "explore_then_test_transition": _explore_then_test_transition,
    "convergent_multi_test_evidence": _convergent_multi_test_evidence,
    "fixed_hypothesis_test_tuning": _fixed_hypothesis_test_tuning,
    "evidence_guided_test_redesign": _evidence_guided_test_redesign,
    "untested_claim": _untested_claim,
    "one_sided_confirmation": _one_sided_confirmation,
    "contradiction_without_repair": _contradiction_without_repair,
    "premature_commitment": _premature_commitment,
    "evidence_non_uptake": _evidence_non_uptake,
    "disconnected_evidence": _disconnected_evidence,
    "unsupported_judgment": _unsupported_judgment,
    "uninformative_test": _uninformative_test,
    "fixed_belief_trace": _fixed_belief_trace,
    "precommitted_test_plan": _precommitted_test_plan,
    "stalled_revision": _stalled_revision,
}

assert set(_TEMPLATES) == set(MOTIF_BY_NAME)


def detect_one(graph: EpistemicGraph, motif_name: str) -> set[MotifHit]:
    """Every role assignment of one motif in the graph."""
    if motif_name not in _TEMPLATES:
        raise KeyError(f"unknown motif {motif_name!r}")
    view = _View(graph)
    return {MotifHit(motif_name, b) for b in _TEMPLATES[motif_name](view)}


def detect(graph: EpistemicGraph, motifs: Iterable[str] | None = None) -> set[MotifHit]:
    """All hits across the catalog (or a subset of motif names)."""
    names = list(motifs) if motifs is not None else [m.name for m in MOTIF_CATALOG]
    view = _View(graph)
    hits: set[MotifHit] = set()
    for name in names:
        if name not in _TEMPLATES:
            raise KeyError(f"unknown motif {name!r}")
        hits.update(MotifHit(name, b) for b in _TEMPLATES[name](view))
    return hits


# --- prevalence -------------------------------------------------------------


@dataclass(frozen=True)
class PrevalenceReport:
    group_by: tuple[str, ...]
    motifs: tuple[str, ...]
    fractions: Mapping[tuple, Mapping[str, float]]
    trace_counts: Mapping[tuple, int]

    @property
    def groups(self) -> tuple[tuple, ...]:
        return tuple(sorted(self.fractions, key=lambda k: tuple(map(str, k))))


def prevalence(
    results: Mapping[str, Iterable[MotifHit]],
    corpus: TraceCorpus,
    group_by: Sequence[str] = ("model",),
    motifs: Sequence[str] | None = None,
) -> PrevalenceReport:
    """Trace-level motif prevalence per group.

    A motif counts once per trace regardless of hit multiplicity. The
    denominator is the set of traces present in ``results``. When the
    grouping does not include the environment, the group fraction is the
    unweighted mean of its per-environment fractions, so trace-heavy
    environments do not dominate.
    """
    group_by = tuple(group_by)
    for fieldname in group_by:
        if fieldname not in GROUP_FIELDS:
            raise ValueError(
                f"cannot group by {fieldname!r}; choose from {GROUP_FIELDS}"
            )
    names = tuple(motifs) if motifs is not None else tuple(m.name for m in MOTIF_CATALOG)
    for name in names:
        if name not in MOTIF_BY_NAME:
            raise KeyError(f"unknown motif {name!r}")

    cells: dict[tuple, dict[str, list[str]]] = defaultdict(dict)
    for trace_id, hits in results.items():
        trace = corpus.by_id(trace_id)
        key = tuple(getattr(trace, f) for f in group_by)
        cells[key].setdefault(trace.environment, {})
        present = {h.motif for h in hits}
        cells[key][trace.environment][trace_id] = present

    env_weighted = "environment" not in group_by
    fractions: dict[tuple, dict[str, float]] = {}
    trace_counts: dict[tuple, int] = {}
    for key, envs in cells.items():
        trace_counts[key] = sum(len(v) for v in envs.values())
        per_motif: dict[str, float] = {}
        for name in names:
            env_rates = [
                sum(1 for present in traces.values() if name in present) / len(traces)
                for traces in envs.values()
            ]
            if env_weighted:
                per_motif[name] = sum(env_rates) / len(env_rates)
            else:
                hit_count = sum(
                    1
                    for traces in envs.values()
                    for present in traces.values()
                    if name in present
                )
                per_motif[name] = hit_count / trace_counts[key]
        fractions[key] = per_motif
    return PrevalenceReport(
        group_by=group_by,
        motifs=names,
        fractions=fractions,
        trace_counts=trace_counts,
    )


def prevalence_table(report: PrevalenceReport) -> list[dict]:
    """Catalog-ordered rows with one prevalence column per group."""
    labels = {
        key: "/".join(map(str, key)) if key else "all" for key in report.groups
    }
    rows = []
    for motif in MOTIF_CATALOG:
        if motif.name not in report.motifs:
            continue
        row = {
            "motif": motif.name,
            "family": motif.family,
            "polarity": motif.polarity,
        }
        for key in report.groups:
            row[labels[key]] = report.fractions[key][motif.name]
        rows.append(row)
    return rows
