"""Epistemic graph model: vocabulary, edge whitelist, validation, window merge.

Nodes are typed epistemic operations grounded by verbatim support quotes;
edges are whitelisted dependency relations. Validation repairs a raw
annotator graph into one satisfying the structural invariants and logs every
intervention in a warning ledger whose categories mirror the quality-control
failure modes.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .traces import Trace

NODE_TYPES = ("H", "T", "E", "J", "C", "F", "N")
EDGE_RELATIONS = ("tests", "observes", "informs", "contradicts", "competes_with", "updates_to")

# The only permitted (relation, src_type, dst_type) triples; anything else is
# deleted at validation.
EDGE_WHITELIST = frozenset(
    {
        ("tests", "H", "T"),
        ("tests", "J", "T"),
        ("observes", "T", "E"),
        ("updates_to", "H", "H"),
        ("competes_with", "H", "H"),
        ("contradicts", "E", "H"),
        ("contradicts", "J", "H"),
        ("informs", "E", "H"),
        ("informs", "E", "J"),
        ("informs", "E", "C"),
        ("informs", "J", "C"),
        ("informs", "J", "H"),
        ("informs", "J", "J"),
    }
)

WARNING_CATEGORIES = (
    "non_verbatim_quote_node",
    "non_verbatim_quote_edge",
    "disallowed_combination",
    "extra_node_at_observation_removed",
    "node_type_corrected_e_only",
    "other_structural",
    "schema_violation",
)


def allowed(relation: str, src_type: str, dst_type: str) -> bool:
    """True iff (relation, src_type, dst_type) is a whitelisted triple."""
    return (relation, src_type, dst_type) in EDGE_WHITELIST


class GraphDocumentError(ValueError):
    """A graph document does not conform to the stage schema."""


class GraphValidationError(ValueError):
    """Raised in strict mode when schema violations exceed the configured cap."""


@dataclass(frozen=True)
class Support:
    msg_idx: int
    quote: str


@dataclass(frozen=True)
class EpiNode:
    node_id: str
    node_type: str
    time: int
    text: str
    support: tuple[Support, ...]

    def __post_init__(self) -> None:
        if not self.support:
            raise ValueError(f"node {self.node_id}: support must be non-empty")
        earliest = min(s.msg_idx for s in self.support)
        if self.time != earliest:
            raise ValueError(
                f"node {self.node_id}: time {self.time} != earliest support msg_idx {earliest}"
            )


@dataclass(frozen=True)
class EpiEdge:
    src: str
    dst: str
    relation: str
    time: int
    support: tuple[Support, ...]

    def __post_init__(self) -> None:
        if not self.support:
            raise ValueError(f"edge {self.src}->{self.dst}: support must be non-empty")

    @property
    def edge_id(self) -> str:
        return f"{self.src}->{self.dst}:{self.relation}"


@dataclass(frozen=True)
class EpistemicGraph:
    trace_id: str
    nodes: tuple[EpiNode, ...] = ()
    edges: tuple[EpiEdge, ...] = ()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for node in self.nodes:
            if node.node_id in seen:
                raise ValueError(f"duplicate node_id {node.node_id!r}")
            seen.add(node.node_id)

    def node_by_id(self, node_id: str) -> EpiNode:
        for node in self.nodes:
            if node.node_id == node_id:
                return node
        raise KeyError(node_id)


@dataclass(frozen=True)
class WarningEntry:
    category: str
    node_or_edge_id: str
    detail: str

    def __post_init__(self) -> None:
        if self.category not in WARNING_CATEGORIES:
            raise ValueError(f"unknown warning category {self.category!r}")


@dataclass
class WarningLedger:
    entries: list[WarningEntry] = field(default_factory=list)

    def append(self, category: str, item_id: str, detail: str) -> None:
        self.entries.append(WarningEntry(category, item_id, detail))

    def count(self, category: str) -> int:
        return sum(1 for e in self.entries if e.category == category)

    def categories(self) -> list[str]:
        return [e.category for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


# --- document schema -------------------------------------------------------
#
# The node/edge wire shapes mirror the annotation prompt schemas exactly:
# {"nodes":[{"node_id","type","time","text","support":[{"msg_idx","quote"}]}]}
# {"edges":[{"src","dst","relation","time","support":[...]}]}


def _parse_support(raw: Any, owner: str) -> tuple[Support, ...]:
    if not isinstance(raw, list) or not raw:
        raise GraphDocumentError(f"{owner}: support must be a non-empty list")
    out = []
    for entry in raw:
        if not isinstance(entry, Mapping):
            raise GraphDocumentError(f"{owner}: support entries must be objects")
        msg_idx = entry.get("msg_idx")
        quote = entry.get("quote")
        if not isinstance(msg_idx, int) or isinstance(msg_idx, bool):
            raise GraphDocumentError(f"{owner}: support msg_idx must be an integer")
        if not isinstance(quote, str):
            raise GraphDocumentError(f"{owner}: support quote must be text")
        out.append(Support(msg_idx=msg_idx, quote=quote))
    return tuple(out)


def node_from_doc(raw: Any) -> EpiNode:
    """Parse one node object; the declared time is overridden by the support
    anchor so the earliest-support invariant holds structurally."""
    if not isinstance(raw, Mapping):
        raise GraphDocumentError("node entries must be objects")
    node_id = raw.get("node_id")
    node_type = raw.get("type")
    text = raw.get("text")
    if not isinstance(node_id, str) or not node_id:
        raise GraphDocumentError("node: node_id must be non-empty text")
    if not isinstance(node_type, str):
        raise GraphDocumentError(f"node {node_id}: type must be text")
    if not isinstance(text, str):
        raise GraphDocumentError(f"node {node_id}: text must be text")
    support = _parse_support(raw.get("support"), f"node {node_id}")
    return EpiNode(
        node_id=node_id,
        node_type=node_type,
        time=min(s.msg_idx for s in support),
        text=text,
        support=support,
    )


def edge_from_doc(raw: Any) -> EpiEdge:
    if not isinstance(raw, Mapping):
        raise GraphDocumentError("edge entries must be objects")
    src = raw.get("src")
    dst = raw.get("dst")
    relation = raw.get("relation")
    if not isinstance(src, str) or not isinstance(dst, str):
        raise GraphDocumentError("edge: src and dst must be text")
    if not isinstance(relation, str):
        raise GraphDocumentError(f"edge {src}->{dst}: relation must be text")
    support = _parse_support(raw.get("support"), f"edge {src}->{dst}")
    time = raw.get("time")
    if not isinstance(time, int) or isinstance(time, bool):
        time = min(s.msg_idx for s in support)
    return EpiEdge(src=src, dst=dst, relation=relation, time=time, support=support)


def _support_to_doc(support: Sequence[Support]) -> list[dict[str, Any]]:
    return [{"msg_idx": s.msg_idx, "quote": s.quote} for s in support]


def node_to_doc(node: EpiNode) -> dict[str, Any]:
    return {
        "node_id": node.node_id,
        "type": node.node_type,
        "time": node.time,
        "text": node.text,
        "support": _support_to_doc(node.support),
    }


def edge_to_doc(edge: EpiEdge) -> dict[str, Any]:
    return {
        "src": edge.src,
        "dst": edge.dst,
        "relation": edge.relation,
        "time": edge.time,
        "support": _support_to_doc(edge.support),
    }


def graph_to_doc(graph: EpistemicGraph) -> dict[str, Any]:
    return {
        "trace_id": graph.trace_id,
        "nodes": [node_to_doc(n) for n in graph.nodes],
        "edges": [edge_to_doc(e) for e in graph.edges],
    }


def graph_from_doc(doc: Mapping[str, Any]) -> EpistemicGraph:
    nodes = tuple(node_from_doc(r) for r in doc.get("nodes", []))
    edges = tuple(edge_from_doc(r) for r in doc.get("edges", []))
    trace_id = doc.get("trace_id", "")
    if not isinstance(trace_id, str):
        raise GraphDocumentError("trace_id must be text")
    return EpistemicGraph(trace_id=trace_id, nodes=nodes, edges=edges)


def render_graph(graph: EpistemicGraph) -> str:
    return json.dumps(graph_to_doc(graph), ensure_ascii=False, indent=2) + "\n"


def ledger_to_docs(ledger: WarningLedger) -> list[dict[str, str]]:
    return [
        {"category": e.category, "node_or_edge_id": e.node_or_edge_id, "detail": e.detail}
        for e in ledger
    ]


def ledger_from_docs(docs: Iterable[Mapping[str, str]]) -> WarningLedger:
    ledger = WarningLedger()
    for doc in docs:
        ledger.append(doc["category"], doc["node_or_edge_id"], doc["detail"])
    return ledger


# --- validation -------------------------------------------------------------


def _normalize_endings(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


def _quote_verbatim(support: Support, messages: Mapping[int, Any]) -> bool:
    msg = messages.get(support.msg_idx)
    if msg is None:
        return False
    return _normalize_endings(support.quote) in _normalize_endings(msg.content)


def _anchored_only_on_observations(node: EpiNode, messages: Mapping[int, Any]) -> bool:
    roles = []
    for s in node.support:
        msg = messages.get(s.msg_idx)
        if msg is None:
            return False
        roles.append(msg.role)
    return all(role == "observation" for role in roles)


def validate_graph(
    graph: EpistemicGraph,
    trace: Trace,
    *,
    max_schema_violations: int | None = None,
) -> tuple[EpistemicGraph, WarningLedger]:
    """Repair a raw annotator graph and log every intervention.

    Repairs, in order: unknown node types removed (schema_violation); non-E
    nodes anchored solely on observation messages retyped to E when every
    quote is verbatim in its observation (node_type_corrected_e_only) or
    removed otherwise (extra_node_at_observation_removed); duplicate F nodes
    on one message trimmed to the first (other_structural); edges with
    unknown relations (schema_violation), missing endpoints or self-loops
    (other_structural), or non-whitelisted type triples
    (disallowed_combination) removed. Non-verbatim quotes on retained items
    are warnings only (non_verbatim_quote_node / non_verbatim_quote_edge);
    C-node quotes are exempt since a commitment may cite an explanatory
    gloss. A second pass over the result yields only the non-verbatim
    categories again (idempotence).

    When ``max_schema_violations`` is set, exceeding it raises
    GraphValidationError instead of returning the repaired graph.
    """
    if graph.trace_id != trace.trace_id:
        raise ValueError(
            f"graph trace_id {graph.trace_id!r} does not match trace {trace.trace_id!r}"
        )
    ledger = WarningLedger()
    messages = {m.index: m for m in trace.messages}

    nodes: list[EpiNode] = []
    for node in graph.nodes:
        if node.node_type not in NODE_TYPES:
            ledger.append(
                "schema_violation", node.node_id, f"unknown node type {node.node_type!r}"
            )
            continue
        nodes.append(node)

    retyped: list[EpiNode] = []
    for node in nodes:
        if node.node_type != "E" and _anchored_only_on_observations(node, messages):
            if all(_quote_verbatim(s, messages) for s in node.support):
                retyped.append(dataclasses.replace(node, node_type="E"))
                ledger.append(
                    "node_type_corrected_e_only",
                    node.node_id,
                    f"retyped {node.node_type} to E on observation message {node.time}",
                )
            else:
                ledger.append(
                    "extra_node_at_observation_removed",
                    node.node_id,
                    f"non-E node of type {node.node_type} anchored on observation message {node.time}",
                )
            continue
        retyped.append(node)

    final_nodes: list[EpiNode] = []
    f_messages: set[int] = set()
    for node in retyped:
        if node.node_type == "F":
            if node.time in f_messages:
                ledger.append(
                    "other_structural",
                    node.node_id,
                    f"extra F node on message {node.time}; one F per message",
                )
                continue
            f_messages.add(node.time)
        final_nodes.append(node)

    node_types = {n.node_id: n.node_type for n in final_nodes}
    kept_edges: list[EpiEdge] = []
    for edge in graph.edges:
        if edge.relation not in EDGE_RELATIONS:
            ledger.append(
                "schema_violation", edge.edge_id, f"unknown relation {edge.relation!r}"
            )
            continue
        if edge.src not in node_types or edge.dst not in node_types:
            missing = edge.src if edge.src not in node_types else edge.dst
            ledger.append(
                "other_structural", edge.edge_id, f"endpoint {missing!r} does not exist"
            )
            continue
        if edge.src == edge.dst:
            ledger.append("other_structural", edge.edge_id, "self-edge")
            continue
        if not allowed(edge.relation, node_types[edge.src], node_types[edge.dst]):
            ledger.append(
                "disallowed_combination",
                edge.edge_id,
                f"{edge.relation}: {node_types[edge.src]} -> {node_types[edge.dst]} is not whitelisted",
            )
            continue
        kept_edges.append(edge)

    for node in final_nodes:
        if node.node_type == "C":
            continue
        for s in node.support:
            if not _quote_verbatim(s, messages):
                ledger.append(
                    "non_verbatim_quote_node",
                    node.node_id,
                    f"quote not found verbatim in message {s.msg_idx}",
                )
    for edge in kept_edges:
        for s in edge.support:
            if not _quote_verbatim(s, messages):
                ledger.append(
                    "non_verbatim_quote_edge",
                    edge.edge_id,
                    f"quote not found verbatim in message {s.msg_idx}",
                )

    if max_schema_violations is not None:
        violations = ledger.count("schema_violation")
        if violations > max_schema_violations:
            raise GraphValidationError(
                f"{violations} schema violations exceed the cap of {max_schema_violations}"
            )

    return (
        EpistemicGraph(trace_id=graph.trace_id, nodes=tuple(final_nodes), edges=tuple(kept_edges)),
        ledger,
    )


# --- window merge -----------------------------------------------------------


def _normalize_text(text: str) -> str:
    return " ".join(text.casefold().split())


def _node_key(node: EpiNode) -> tuple[str, int, str]:
    return (node.node_type, min(s.msg_idx for s in node.support), _normalize_text(node.text))


def merge_window_annotations(
    partials: Sequence[EpistemicGraph],
    *,
    trace_id: str | None = None,
) -> EpistemicGraph:
    """Unify per-window graph fragments into one graph.

    Duplicate nodes (equal type, earliest support msg_idx, and
    case-folded/whitespace-collapsed text) are unified with their supports
    pooled. Node ids are re-issued canonically as N1, N2, ... in time order.
    Edges are remapped through each fragment's own node ids (ids already in
    canonical form pass through) and deduplicated by (src, dst, relation).
    """
    ids = {p.trace_id for p in partials}
    if len(ids) > 1:
        raise ValueError(f"fragments carry mixed trace_ids: {sorted(ids)}")
    if trace_id is None:
        trace_id = ids.pop() if ids else ""
    elif ids and ids != {trace_id}:
        raise ValueError(f"fragments carry trace_id {ids.pop()!r}, expected {trace_id!r}")

    merged: dict[tuple[str, int, str], dict[str, Any]] = {}
    order: list[tuple[str, int, str]] = []
    fragment_maps: list[dict[str, tuple[str, int, str]]] = []
    for fragment in partials:
        local: dict[str, tuple[str, int, str]] = {}
        for node in fragment.nodes:
            key = _node_key(node)
            if key not in merged:
                merged[key] = {"node": node, "support": list(node.support)}
                order.append(key)
            else:
                known = merged[key]["support"]
                for s in node.support:
                    if s not in known:
                        known.append(s)
            local[node.node_id] = key
        fragment_maps.append(local)

    ordered_keys = sorted(order, key=lambda key: key[1])  # stable: ties keep first-seen order
    id_map = {key: f"N{i + 1}" for i, key in enumerate(ordered_keys)}
    nodes = []
    for key in ordered_keys:
        entry = merged[key]
        support = tuple(sorted(entry["support"], key=lambda s: s.msg_idx))
        nodes.append(
            EpiNode(
                node_id=id_map[key],
                node_type=entry["node"].node_type,
                time=key[1],
                text=entry["node"].text,
                support=support,
            )
        )

    edge_acc: dict[tuple[str, str, str], dict[str, Any]] = {}
    edge_order: list[tuple[str, str, str]] = []
    for fragment, local in zip(partials, fragment_maps):
        for edge in fragment.edges:
            # Ids outside the fragment map pass through: either they are
            # already canonical (stage-2 fragments) or dangling, in which
            # case validation removes the edge later.
            src = id_map[local[edge.src]] if edge.src in local else edge.src
            dst = id_map[local[edge.dst]] if edge.dst in local else edge.dst
            key = (src, dst, edge.relation)
            if key not in edge_acc:
                edge_acc[key] = {"time": edge.time, "support": list(edge.support)}
                edge_order.append(key)
            else:
                entry = edge_acc[key]
                entry["time"] = min(entry["time"], edge.time)
                for s in edge.support:
                    if s not in entry["support"]:
                        entry["support"].append(s)

    edges = []
    for key in edge_order:
        entry = edge_acc[key]
        support = tuple(sorted(entry["support"], key=lambda s: s.msg_idx))
        edges.append(
            EpiEdge(src=key[0], dst=key[1], relation=key[2], time=entry["time"], support=support)
        )

    return EpistemicGraph(trace_id=trace_id, nodes=tuple(nodes), edges=tuple(edges))
