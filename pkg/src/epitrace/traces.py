"""Trace data model: canonical serialization, ingestion, and message selection.

A trace is the serialized message history of one agent trial plus run
metadata. Everything downstream (annotation windows, marker annotation,
turn slicing) selects messages through the rules implemented here.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

VALID_ROLES = ("system", "user", "assistant", "observation")

# Providers that emit role="tool" for tool outputs are normalized at ingest.
_ROLE_ALIASES = {"tool": "observation"}

# Exact-match sentinels marking scaffold-generated iteration-limit errors.
DEFAULT_ITERATION_LIMIT_SENTINELS = frozenset(
    {
        "Iteration limit reached.",
        "Iteration limit reached",
        "Maximum number of iterations reached.",
        "Agent stopped due to iteration limit.",
    }
)

ANNOTATION_MODES = ("epistemic", "marker")


class TraceParseError(ValueError):
    """Malformed trace document; ``field`` names the first offending field."""

    def __init__(self, field_name: str, detail: str):
        super().__init__(f"{field_name}: {detail}")
        self.field = field_name
        self.detail = detail


class TraceStructureError(ValueError):
    """Well-formed fields that violate a cross-message structural rule."""


@dataclass(frozen=True)
class ToolCall:
    name: str
    arguments: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class TokenLogprob:
    token: str
    logprob: float
    is_special: bool = False

    def __post_init__(self) -> None:
        if self.logprob > 0:
            raise ValueError(f"token logprob must be <= 0, got {self.logprob}")


@dataclass(frozen=True)
class Message:
    index: int
    role: str
    content: str
    tool_calls: tuple[ToolCall, ...] = ()
    token_logprobs: tuple[TokenLogprob, ...] = ()
    is_task_description: bool = False
    is_iteration_limit_error: bool = False

    def __post_init__(self) -> None:
        if self.index < 0:
            raise ValueError(f"message index must be >= 0, got {self.index}")
        if self.role not in VALID_ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.tool_calls and self.role != "assistant":
            raise ValueError("tool_calls are only allowed on assistant messages")


@dataclass(frozen=True)
class Trace:
    trace_id: str
    model: str
    environment: str
    scope: int
    scaffold: str
    task_id: str
    trial: int
    outcome_score: float
    messages: tuple[Message, ...]

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("trace must contain at least one message")
        if self.scope < 1:
            raise ValueError(f"scope must be >= 1, got {self.scope}")
        if self.trial < 0:
            raise ValueError(f"trial must be >= 0, got {self.trial}")
        if not 0.0 <= self.outcome_score <= 1.0:
            raise ValueError(f"outcome_score must be in [0,1], got {self.outcome_score}")
        for prev, msg in zip(self.messages, self.messages[1:]):
            if msg.index != prev.index + 1:
                raise TraceStructureError(
                    f"trace {self.trace_id}: message indices must be consecutive, "
                    f"got {prev.index} then {msg.index}"
                )
        if self.messages[0].index != 0:
            raise TraceStructureError(
                f"trace {self.trace_id}: first message index must be 0"
            )


@dataclass(frozen=True)
class TraceCorpus:
    traces: tuple[Trace, ...]

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for trace in self.traces:
            if trace.trace_id in seen:
                raise ValueError(f"duplicate trace_id {trace.trace_id!r} in corpus")
            seen.add(trace.trace_id)

    def __len__(self) -> int:
        return len(self.traces)

    def __iter__(self) -> Iterator[Trace]:
        return iter(self.traces)

    def by_id(self, trace_id: str) -> Trace:
        for trace in self.traces:
            if trace.trace_id == trace_id:
                return trace
        raise KeyError(trace_id)

    def filter(self, **criteria: Any) -> "TraceCorpus":
        """Subset by metadata equality, e.g. filter(model="m", environment="e")."""
        kept = []
        for trace in self.traces:
            if all(getattr(trace, key) == value for key, value in criteria.items()):
                kept.append(trace)
        return TraceCorpus(tuple(kept))


def _require(obj: Mapping[str, Any], key: str, kind: type | tuple, path: str) -> Any:
    if key not in obj:
        raise TraceParseError(f"{path}{key}", "missing required field")
    value = obj[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise TraceParseError(f"{path}{key}", f"expected a number, got {type(value).__name__}")
        return float(value)
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise TraceParseError(f"{path}{key}", f"expected an integer, got {type(value).__name__}")
        return value
    if not isinstance(value, kind):
        kind_name = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
        raise TraceParseError(f"{path}{key}", f"expected {kind_name}, got {type(value).__name__}")
    return value


def _parse_message(
    raw: Any,
    position: int,
    sentinels: frozenset[str],
) -> Message:
    path = f"messages[{position}]."
    if not isinstance(raw, Mapping):
        raise TraceParseError(f"messages[{position}]", "expected an object")
    index = _require(raw, "index", int, path)
    role = _require(raw, "role", str, path)
    role = _ROLE_ALIASES.get(role, role)
    if role not in VALID_ROLES:
        raise TraceParseError(f"{path}role", f"unknown role {role!r}")
    content = _require(raw, "content", str, path)

    tool_calls: list[ToolCall] = []
    raw_calls = raw.get("tool_calls") or []
    if not isinstance(raw_calls, list):
        raise TraceParseError(f"{path}tool_calls", "expected a list")
    for ci, call in enumerate(raw_calls):
        if not isinstance(call, Mapping):
            raise TraceParseError(f"{path}tool_calls[{ci}]", "expected an object")
        name = _require(call, "name", str, f"{path}tool_calls[{ci}].")
        args = call.get("arguments", {})
        if not isinstance(args, Mapping):
            raise TraceParseError(f"{path}tool_calls[{ci}].arguments", "expected an object")
        tool_calls.append(ToolCall(name=name, arguments=dict(args)))
    if tool_calls and role != "assistant":
        raise TraceParseError(f"{path}tool_calls", "only assistant messages may carry tool calls")

    logprobs: list[TokenLogprob] = []
    raw_lps = raw.get("token_logprobs") or []
    if not isinstance(raw_lps, list):
        raise TraceParseError(f"{path}token_logprobs", "expected a list")
    for ti, entry in enumerate(raw_lps):
        if not isinstance(entry, Mapping):
            raise TraceParseError(f"{path}token_logprobs[{ti}]", "expected an object")
        tpath = f"{path}token_logprobs[{ti}]."
        token = _require(entry, "token", str, tpath)
        logprob = _require(entry, "logprob", float, tpath)
        if logprob > 0:
            raise TraceParseError(f"{tpath}logprob", f"must be <= 0, got {logprob}")
        logprobs.append(
            TokenLogprob(token=token, logprob=logprob, is_special=bool(entry.get("is_special", False)))
        )

    flag_limit = raw.get("is_iteration_limit_error")
    if flag_limit is None:
        flag_limit = content in sentinels

    return Message(
        index=index,
        role=role,
        content=content,
        tool_calls=tuple(tool_calls),
        token_logprobs=tuple(logprobs),
        is_task_description=bool(raw.get("is_task_description", False)),
        is_iteration_limit_error=bool(flag_limit),
    )


def parse_trace(
    serialized: str,
    *,
    iteration_limit_sentinels: frozenset[str] = DEFAULT_ITERATION_LIMIT_SENTINELS,
    task_description_index: int | None = None,
) -> Trace:
    """Parse one canonical trace document.

    Unknown fields are ignored. ``is_task_description`` defaults to the first
    user message unless the document flags a message explicitly or
    ``task_description_index`` overrides it. ``is_iteration_limit_error`` is
    set by exact match against the sentinel set when the document does not
    carry the flag itself.
    """
    try:
        doc = json.loads(serialized)
    except json.JSONDecodeError as exc:
        raise TraceParseError("document", f"invalid JSON: {exc.msg}") from exc
    if not isinstance(doc, Mapping):
        raise TraceParseError("document", "expected a top-level object")

    trace_id = _require(doc, "trace_id", str, "")
    model = _require(doc, "model", str, "")
    environment = _require(doc, "environment", str, "")
    scope = _require(doc, "scope", int, "")
    if scope < 1:
        raise TraceParseError("scope", f"must be >= 1, got {scope}")
    scaffold = _require(doc, "scaffold", str, "")
    task_id = _require(doc, "task_id", str, "")
    trial = _require(doc, "trial", int, "")
    if trial < 0:
        raise TraceParseError("trial", f"must be >= 0, got {trial}")
    outcome_score = _require(doc, "outcome_score", float, "")
    if not 0.0 <= outcome_score <= 1.0:
        raise TraceParseError("outcome_score", f"must be in [0,1], got {outcome_score}")
    raw_messages = _require(doc, "messages", list, "")
    if not raw_messages:
        raise TraceParseError("messages", "must be non-empty")

    messages = [
        _parse_message(raw, pos, iteration_limit_sentinels)
        for pos, raw in enumerate(raw_messages)
    ]
    for pos, msg in enumerate(messages):
        if msg.index != pos:
            raise TraceStructureError(
                f"trace {trace_id}: message indices must be consecutive from 0, "
                f"got {msg.index} at position {pos}"
            )

    explicit_flag = any("is_task_description" in raw for raw in raw_messages)
    if task_description_index is not None:
        messages = [
            _replace_task_flag(m, m.index == task_description_index) for m in messages
        ]
    elif not explicit_flag:
        first_user = next((m.index for m in messages if m.role == "user"), None)
        if first_user is not None:
            messages = [
                _replace_task_flag(m, m.index == first_user) for m in messages
            ]

    return Trace(
        trace_id=trace_id,
        model=model,
        environment=environment,
        scope=scope,
        scaffold=scaffold,
        task_id=task_id,
        trial=trial,
        outcome_score=outcome_score,
        messages=tuple(messages),
    )


def _replace_task_flag(msg: Message, value: bool) -> Message:
    if msg.is_task_description == value:
        return msg
    return Message(
        index=msg.index,
        role=msg.role,
        content=msg.content,
        tool_calls=msg.tool_calls,
        token_logprobs=msg.token_logprobs,
        is_task_description=value,
        is_iteration_limit_error=msg.is_iteration_limit_error,
    )


def message_to_doc(msg: Message) -> dict[str, Any]:
    doc: dict[str, Any] = {"index": msg.index, "role": msg.role, "content": msg.content}
    if msg.tool_calls:
        doc["tool_calls"] = [
            {"name": c.name, "arguments": dict(c.arguments)} for c in msg.tool_calls
        ]
    if msg.token_logprobs:
        doc["token_logprobs"] = [
            {"token": t.token, "logprob": t.logprob, "is_special": t.is_special}
            for t in msg.token_logprobs
        ]
    # Flags are always explicit in the canonical form so render/parse round-trips.
    doc["is_task_description"] = msg.is_task_description
    doc["is_iteration_limit_error"] = msg.is_iteration_limit_error
    return doc


def trace_to_doc(trace: Trace) -> dict[str, Any]:
    return {
        "trace_id": trace.trace_id,
        "model": trace.model,
        "environment": trace.environment,
        "scope": trace.scope,
        "scaffold": trace.scaffold,
        "task_id": trace.task_id,
        "trial": trace.trial,
        "outcome_score": trace.outcome_score,
        "messages": [message_to_doc(m) for m in trace.messages],
    }


def render_trace(trace: Trace) -> str:
    """Canonical serialization; parse_trace(render_trace(t)) == t."""
    return json.dumps(trace_to_doc(trace), ensure_ascii=False, indent=2) + "\n"


def load_trace_file(path: str | Path, **parse_kwargs: Any) -> Trace:
    return parse_trace(Path(path).read_text(encoding="utf-8"), **parse_kwargs)


def iter_corpus_documents(path: str | Path) -> Iterator[str]:
    """Yield raw trace documents from a directory of files or an NDJSON stream."""
    p = Path(path)
    if p.is_dir():
        for child in sorted(p.glob("*.json")):
            yield child.read_text(encoding="utf-8")
    else:
        with p.open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    yield line


def load_corpus(path: str | Path, **parse_kwargs: Any) -> TraceCorpus:
    traces = tuple(parse_trace(doc, **parse_kwargs) for doc in iter_corpus_documents(path))
    return TraceCorpus(traces)


def corpus_from_traces(traces: Iterable[Trace]) -> TraceCorpus:
    return TraceCorpus(tuple(traces))


def annotatable_messages(trace: Trace, mode: str) -> list[Message]:
    """Messages eligible for annotation under the given mode.

    Epistemic mode drops system messages and iteration-limit errors but keeps
    the task description and observations. Marker mode additionally drops
    observations and the task description.
    """
    if mode not in ANNOTATION_MODES:
        raise ValueError(f"mode must be one of {ANNOTATION_MODES}, got {mode!r}")
    out = []
    for msg in trace.messages:
        if msg.role == "system" or msg.is_iteration_limit_error:
            continue
        if mode == "marker" and (msg.role == "observation" or msg.is_task_description):
            continue
        out.append(msg)
    return out


def assistant_turns(trace: Trace) -> list[Message]:
    """The role=assistant messages in order; the turn sequence a_1..a_N."""
    return [m for m in trace.messages if m.role == "assistant"]


def task_description(trace: Trace) -> Message:
    """The flagged task description, defaulting to the first user message."""
    for message in trace.messages:
        if message.is_task_description:
            return message
    for message in trace.messages:
        if message.role == "user":
            return message
    raise ValueError(f"trace {trace.trace_id!r} has no task description message")
