"""Two-stage annotation pipeline: windowing, endpoint calls, parsing, merge.

Stage 1 labels nodes per overlapping window; fragments are merged and
unlabeled observation messages backfilled with Evidence nodes; stage 2 adds
edges per window over the merged node list; the combined graph then goes
through validation. With a stubbed endpoint the whole pipeline is
deterministic byte-for-byte.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Sequence

import httpx

from .graph import (
    EpiEdge,
    EpiNode,
    EpistemicGraph,
    GraphDocumentError,
    Support,
    WarningLedger,
    edge_from_doc,
    merge_window_annotations,
    node_from_doc,
    validate_graph,
)
from .prompts import DEFAULT_PROMPT_VERSION, PROMPT_VERSIONS
from .traces import Message, Trace, annotatable_messages

ENV_ENDPOINT = "EPITRACE_ANNOTATOR_URL"
ENV_TOKEN = "EPITRACE_ANNOTATOR_TOKEN"
ENV_MODEL = "EPITRACE_ANNOTATOR_MODEL"

AUTO_EVIDENCE_TEXT_LIMIT = 120


class TransportError(RuntimeError):
    """The annotation endpoint could not be reached or rejected the request."""


class AnnotationError(RuntimeError):
    """Retries exhausted on unparseable stage output; carries the raw response."""

    def __init__(self, message: str, raw_response: str):
        super().__init__(message)
        self.raw_response = raw_response


@dataclass(frozen=True)
class WindowSpec:
    size: int = 20
    stride: int = 15

    def __post_init__(self) -> None:
        if self.size < 1:
            raise ValueError(f"window size must be >= 1, got {self.size}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.stride > self.size:
            raise ValueError(
                f"stride {self.stride} must not exceed size {self.size} (windows must tile)"
            )


@dataclass(frozen=True)
class AnnotatorConfig:
    endpoint: str
    model_name: str
    temperature: float = 0.7
    max_retries: int = 3
    request_timeout: float = 60.0
    max_concurrency: int = 4
    prompt_version: str = DEFAULT_PROMPT_VERSION
    auth_token: str | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.max_retries < 0:
            raise ValueError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.max_concurrency < 1:
            raise ValueError(f"max_concurrency must be >= 1, got {self.max_concurrency}")
        if self.prompt_version not in PROMPT_VERSIONS:
            raise ValueError(
                f"unknown prompt version {self.prompt_version!r}; "
                f"known: {sorted(PROMPT_VERSIONS)}"
            )

    @classmethod
    def from_env(cls, **overrides: Any) -> "AnnotatorConfig":
        values: dict[str, Any] = {
            "endpoint": os.environ.get(ENV_ENDPOINT, ""),
            "model_name": os.environ.get(ENV_MODEL, ""),
            "auth_token": os.environ.get(ENV_TOKEN),
        }
        values.update(overrides)
        if not values["endpoint"]:
            raise ValueError(f"no annotator endpoint; set {ENV_ENDPOINT} or pass endpoint=")
        if not values["model_name"]:
            raise ValueError(f"no annotator model; set {ENV_MODEL} or pass model_name=")
        return cls(**values)


@dataclass(frozen=True)
class StageRequest:
    system_prompt: str
    user_prompt: str


@dataclass(frozen=True)
class StageResponse:
    raw_text: str
    document: dict[str, Any]


def make_windows(messages: Sequence[Any], spec: WindowSpec) -> list[tuple[int, int]]:
    """Index ranges [start, end) over ``messages``: starts at 0, stride apart,
    stopping with the first window whose end reaches the message count."""
    n = len(messages)
    if n == 0:
        return []
    windows = []
    start = 0
    while True:
        end = start + spec.size
        windows.append((start, min(end, n)))
        if end >= n:
            return windows
        start += spec.stride


def render_window(messages: Sequence[Message]) -> str:
    """Serialize a window for the annotator, original indices preserved."""
    payload = []
    for m in messages:
        entry: dict[str, Any] = {"index": m.index, "role": m.role, "content": m.content}
        if m.tool_calls:
            entry["tool_calls"] = [
                {"name": c.name, "arguments": dict(c.arguments)} for c in m.tool_calls
            ]
        payload.append(entry)
    return json.dumps(payload, ensure_ascii=False, indent=2)


class ChatClient:
    """Minimal chat-completion client: one text completion per request.

    ``transport`` lets tests substitute an httpx.MockTransport; production
    use leaves it None.
    """

    def __init__(self, cfg: AnnotatorConfig, transport: httpx.BaseTransport | None = None):
        self.cfg = cfg
        headers = {}
        if cfg.auth_token:
            headers["Authorization"] = f"Bearer {cfg.auth_token}"
        self._client = httpx.Client(
            timeout=cfg.request_timeout, headers=headers, transport=transport
        )

    def complete(self, request: StageRequest) -> str:
        body = {
            "model": self.cfg.model_name,
            "temperature": self.cfg.temperature,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
        }
        try:
            response = self._client.post(self.cfg.endpoint, json=body)
        except httpx.HTTPError as exc:
            raise TransportError(f"annotation endpoint unreachable: {exc}") from exc
        if response.status_code >= 400:
            raise TransportError(
                f"annotation endpoint returned HTTP {response.status_code}"
            )
        return _extract_text_body(response)

    def close(self) -> None:
        self._client.close()


def _extract_text_body(response: httpx.Response) -> str:
    try:
        doc = response.json()
    except ValueError:
        return response.text
    if isinstance(doc, dict):
        choices = doc.get("choices")
        if isinstance(choices, list) and choices:
            message = choices[0].get("message") if isinstance(choices[0], dict) else None
            if isinstance(message, dict) and isinstance(message.get("content"), str):
                return message["content"]
            if isinstance(choices[0], dict) and isinstance(choices[0].get("text"), str):
                return choices[0]["text"]
        for key in ("content", "text"):
            if isinstance(doc.get(key), str):
                return doc[key]
    return response.text


class _StageParseError(ValueError):
    pass


def extract_stage_document(text: str, stage_key: str) -> dict[str, Any]:
    """First well-formed JSON object in ``text`` carrying ``stage_key`` as a
    list; leading/trailing prose (and code fences) are tolerated."""
    decoder = json.JSONDecoder()
    pos = text.find("{")
    while pos != -1:
        try:
            doc, _ = decoder.raw_decode(text, pos)
        except json.JSONDecodeError:
            pos = text.find("{", pos + 1)
            continue
        if isinstance(doc, dict) and isinstance(doc.get(stage_key), list):
            return doc
        pos = text.find("{", pos + 1)
    raise _StageParseError(f"no JSON document with key {stage_key!r} found")


def _parse_stage1(text: str) -> list[EpiNode]:
    doc = extract_stage_document(text, "nodes")
    nodes = [node_from_doc(raw) for raw in doc["nodes"]]
    seen: set[str] = set()
    for node in nodes:
        if node.node_id in seen:
            raise _StageParseError(f"duplicate node_id {node.node_id!r} in stage-1 output")
        seen.add(node.node_id)
    return nodes


def _parse_stage2(text: str) -> list[EpiEdge]:
    doc = extract_stage_document(text, "edges")
    return [edge_from_doc(raw) for raw in doc["edges"]]


def _run_stage(
    request: StageRequest,
    cfg: AnnotatorConfig,
    client: ChatClient,
    parse,
    stage_name: str,
):
    raw = ""
    for _ in range(cfg.max_retries + 1):
        raw = client.complete(request)
        try:
            return parse(raw)
        except (_StageParseError, GraphDocumentError, ValueError):
            continue
    raise AnnotationError(
        f"{stage_name}: no parseable document after {cfg.max_retries + 1} attempts",
        raw_response=raw,
    )


def build_stage1_request(window: Sequence[Message], cfg: AnnotatorConfig) -> StageRequest:
    prompts = PROMPT_VERSIONS[cfg.prompt_version]
    user = f"{prompts.stage1_user}\nMessages:\n{render_window(window)}"
    return StageRequest(system_prompt=prompts.stage1_system, user_prompt=user)


def build_stage2_request(
    window: Sequence[Message], nodes: Sequence[EpiNode], cfg: AnnotatorConfig
) -> StageRequest:
    prompts = PROMPT_VERSIONS[cfg.prompt_version]
    node_payload = json.dumps(
        [{"node_id": n.node_id, "text": n.text} for n in nodes],
        ensure_ascii=False,
        indent=2,
    )
    user = (
        f"{prompts.stage2_user}\nNodes:\n{node_payload}\n\nMessages:\n{render_window(window)}"
    )
    return StageRequest(system_prompt=prompts.stage2_system, user_prompt=user)


def run_stage1(
    window: Sequence[Message],
    cfg: AnnotatorConfig,
    client: ChatClient | None = None,
) -> list[EpiNode]:
    """Label nodes for one window. Unparseable output is retried with the
    identical request; node/edge vocabulary is NOT enforced here (unknown
    type strings flow to validate_graph's schema_violation path)."""
    if not window:
        return []
    own_client = client is None
    client = client or ChatClient(cfg)
    try:
        return _run_stage(build_stage1_request(window, cfg), cfg, client, _parse_stage1, "stage 1")
    finally:
        if own_client:
            client.close()


def run_stage2(
    window: Sequence[Message],
    nodes: Sequence[EpiNode],
    cfg: AnnotatorConfig,
    client: ChatClient | None = None,
) -> list[EpiEdge]:
    """Extract edges among the supplied nodes for one window."""
    if not window or not nodes:
        return []
    own_client = client is None
    client = client or ChatClient(cfg)
    try:
        return _run_stage(
            build_stage2_request(window, nodes, cfg), cfg, client, _parse_stage2, "stage 2"
        )
    finally:
        if own_client:
            client.close()


def _auto_evidence_node(message: Message, node_id: str) -> EpiNode:
    text = message.content[:AUTO_EVIDENCE_TEXT_LIMIT]
    return EpiNode(
        node_id=node_id,
        node_type="E",
        time=message.index,
        text=text,
        support=(Support(msg_idx=message.index, quote=message.content),),
    )


def _next_node_number(graph: EpistemicGraph) -> int:
    highest = 0
    for node in graph.nodes:
        if node.node_id.startswith("N") and node.node_id[1:].isdigit():
            highest = max(highest, int(node.node_id[1:]))
    return highest + 1


def annotate_trace(
    trace: Trace,
    cfg: AnnotatorConfig,
    spec: WindowSpec = WindowSpec(),
    client: ChatClient | None = None,
) -> tuple[EpistemicGraph, WarningLedger]:
    """Run the full two-stage pipeline for one trace.

    Observation messages that received no stage-1 node are backfilled with an
    Evidence node before stage 2; observations whose only node was removed at
    validation are backfilled afterwards with fresh ids. Both backfills are
    logged as other_structural node additions. Stage errors propagate and
    nothing is persisted here.
    """
    messages = annotatable_messages(trace, "epistemic")
    if not messages:
        return EpistemicGraph(trace_id=trace.trace_id), WarningLedger()

    own_client = client is None
    client = client or ChatClient(cfg)
    ledger = WarningLedger()
    try:
        windows = make_windows(messages, spec)
        window_messages = [messages[a:b] for a, b in windows]
        with ThreadPoolExecutor(max_workers=cfg.max_concurrency) as pool:
            node_lists = list(
                pool.map(lambda w: run_stage1(w, cfg, client), window_messages)
            )
        fragments = [
            EpistemicGraph(trace_id=trace.trace_id, nodes=tuple(nodes))
            for nodes in node_lists
        ]

        anchored = {node.time for fragment in fragments for node in fragment.nodes}
        fill_nodes = []
        for message in messages:
            if message.role == "observation" and message.index not in anchored:
                fill_nodes.append(_auto_evidence_node(message, f"auto{len(fill_nodes)}"))
        if fill_nodes:
            fragments.append(
                EpistemicGraph(trace_id=trace.trace_id, nodes=tuple(fill_nodes))
            )
        merged = merge_window_annotations(fragments, trace_id=trace.trace_id)
        fill_keys = {(n.time, n.text) for n in fill_nodes}
        for node in merged.nodes:
            if (node.time, node.text) in fill_keys and node.node_type == "E":
                ledger.append(
                    "other_structural",
                    node.node_id,
                    f"auto-assigned E node for unlabeled observation message {node.time}",
                )

        with ThreadPoolExecutor(max_workers=cfg.max_concurrency) as pool:
            edge_lists = list(
                pool.map(
                    lambda win: run_stage2(
                        win,
                        [n for n in merged.nodes if n.time in {m.index for m in win}],
                        cfg,
                        client,
                    ),
                    window_messages,
                )
            )
        edge_fragments = [
            EpistemicGraph(trace_id=trace.trace_id, edges=tuple(edges))
            for edges in edge_lists
        ]
        full = merge_window_annotations([merged] + edge_fragments, trace_id=trace.trace_id)

        validated, validation_ledger = validate_graph(full, trace)
        ledger.entries.extend(validation_ledger.entries)

        evidence_times = {n.time for n in validated.nodes if n.node_type == "E"}
        refill = [
            m
            for m in messages
            if m.role == "observation" and m.index not in evidence_times
        ]
        if refill:
            number = _next_node_number(validated)
            extra = []
            for message in refill:
                node = _auto_evidence_node(message, f"N{number}")
                number += 1
                extra.append(node)
                ledger.append(
                    "other_structural",
                    node.node_id,
                    f"auto-assigned E node for observation message {message.index} "
                    "whose nodes were removed at validation",
                )
            validated = EpistemicGraph(
                trace_id=validated.trace_id,
                nodes=validated.nodes + tuple(extra),
                edges=validated.edges,
            )
        return validated, ledger
    finally:
        if own_client:
            client.close()
