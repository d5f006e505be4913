"""Counterfactual seeding: slice a trace's turns and rebuild a runnable prefix.

A seed history is the task description followed by the first k assistant
turns, with one observation re-supplied per tool call. Observations come
either from the recorded trace (replay) or from a live tool endpoint.
Because every slice is a prefix of the turn sequence, replay can hand back
the recorded observations in positional order.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import httpx

from .traces import (
    Message,
    Trace,
    TraceCorpus,
    assistant_turns,
    message_to_doc,
    task_description,
)

POOL_KINDS = ("success", "failed")


class ExecutorError(RuntimeError):
    """A tool executor could not produce an observation."""


@dataclass(frozen=True)
class InterventionSpec:
    """Which pool to seed from, where to cut, and the sampling seed.

    Positive k keeps the first k assistant turns; negative k drops the
    last |k|. The experiments use k in {1, 2, -2, -1}, but any nonzero
    cut is accepted.
    """

    kind: str
    k: int
    seed: int

    def __post_init__(self) -> None:
        if self.kind not in POOL_KINDS:
            raise ValueError(f"kind must be one of {POOL_KINDS}, got {self.kind!r}")
        if self.k == 0:
            raise ValueError("k must be nonzero")


def slice_turns(turns: Sequence, k: int) -> list:
    """First k turns (k > 0) or all but the last |k| (k < 0)."""
    n = len(turns)
    if k == 0:
        raise ValueError("k must be nonzero: positive keeps a prefix, negative drops a suffix")
    if k > 0:
        if n < k:
            raise ValueError(f"cannot keep {k} turns of a {n}-turn trace")
        return list(turns[:k])
    if n <= -k:
        raise ValueError(f"cannot drop the last {-k} turns of a {n}-turn trace")
    return list(turns[:n + k])


def eligible_pool(pool: Iterable[Trace], k: int) -> list[Trace]:
    """Traces long enough to slice at k."""
    if k == 0:
        raise ValueError("k must be nonzero")
    kept = []
    for trace in pool:
        n = len(assistant_turns(trace))
        if (k > 0 and n >= k) or (k < 0 and n > -k):
            kept.append(trace)
    return kept


def sample_trace(
    pool: Sequence[Trace],
    seed: int,
    *,
    environment: str | None = None,
    agent: str | None = None,
    task_id: str | None = None,
    k: int | None = None,
) -> Trace:
    """Uniform seeded choice; the keywords only label the empty-pool error."""
    if not pool:
        raise ValueError(
            f"no eligible trace for agent={agent!r} environment={environment!r} "
            f"task={task_id!r} k={k}"
        )
    return pool[random.Random(seed).randrange(len(pool))]


def draw_intervention_trace(
    registry: "TraceRegistry",
    corpus: TraceCorpus,
    *,
    environment: str,
    agent: str,
    task_id: str,
    spec: InterventionSpec,
) -> Trace:
    """Sample a sliceable trace from one registry pool."""
    entry = registry.lookup(environment, agent, task_id)
    ids = entry.success_ids if spec.kind == "success" else entry.failed_ids
    pool = eligible_pool((corpus.by_id(trace_id) for trace_id in ids), spec.k)
    return sample_trace(
        pool,
        spec.seed,
        environment=environment,
        agent=agent,
        task_id=task_id,
        k=spec.k,
    )


# --- executors --------------------------------------------------------------


class ReplayExecutor:
    """Replays the recorded observations of one trace in positional order."""

    def __init__(self, trace: Trace):
        self._observations = [
            m.content for m in trace.messages if m.role == "observation"
        ]
        self._cursor = 0

    def execute(self, name: str, arguments: Mapping) -> str:
        if self._cursor >= len(self._observations):
            raise ExecutorError(
                f"replay exhausted after {self._cursor} observations; "
                f"no recorded result for tool {name!r}"
            )
        observation = self._observations[self._cursor]
        self._cursor += 1
        return observation


class LiveExecutor:
    """Executes tool calls against an environment endpoint.

    POSTs {"name", "arguments"} to {base_url}/execute and expects
    {"observation": "..."} back.
    """

    def __init__(
        self,
        base_url: str,
        *,
        timeout: float = 30.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self._url = base_url.rstrip("/") + "/execute"
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def execute(self, name: str, arguments: Mapping) -> str:
        try:
            response = self._client.post(
                self._url, json={"name": name, "arguments": dict(arguments)}
            )
        except httpx.HTTPError as exc:
            raise ExecutorError(f"tool endpoint unreachable: {exc}") from exc
        if response.status_code >= 400:
            raise ExecutorError(
                f"tool endpoint returned HTTP {response.status_code} for {name!r}"
            )
        try:
            doc = response.json()
        except ValueError as exc:
            raise ExecutorError("tool endpoint returned a non-JSON body") from exc
        if not isinstance(doc, dict) or not isinstance(doc.get("observation"), str):
            raise ExecutorError('tool endpoint response lacks an "observation" string')
        return doc["observation"]

    def close(self) -> None:
        self._client.close()


# --- seed histories ---------------------------------------------------------


@dataclass(frozen=True)
class SeedHistory:
    source_trace_id: str
    k: int
    messages: tuple[Message, ...]


def build_seed_history(
    trace: Trace, spec: InterventionSpec | int, executor=None
) -> SeedHistory:
    """Task description plus the sliced turns, observations re-supplied.

    Message indices restart at 0. Each kept assistant turn is followed by
    one observation per tool call, in call order, produced by the executor
    (recorded replay when none is given). A bare integer works in place of
    a full spec when only the cut matters.
    """
    k = spec.k if isinstance(spec, InterventionSpec) else int(spec)
    opening = task_description(trace)
    sliced = slice_turns(assistant_turns(trace), k)
    if executor is None:
        executor = ReplayExecutor(trace)

    out: list[Message] = []

    def push(message: Message, *, is_task_description: bool = False) -> None:
        out.append(
            Message(
                index=len(out),
                role=message.role,
                content=message.content,
                tool_calls=message.tool_calls,
                token_logprobs=message.token_logprobs,
                is_task_description=is_task_description,
                is_iteration_limit_error=message.is_iteration_limit_error,
            )
        )

    push(opening, is_task_description=True)
    for turn in sliced:
        push(turn)
        for call in turn.tool_calls:
            observation = executor.execute(call.name, call.arguments)
            out.append(
                Message(index=len(out), role="observation", content=observation)
            )
    return SeedHistory(source_trace_id=trace.trace_id, k=k, messages=tuple(out))


def seed_history_to_doc(history: SeedHistory) -> dict:
    return {
        "source_trace_id": history.source_trace_id,
        "k": history.k,
        "messages": [message_to_doc(m) for m in history.messages],
    }


def render_seed_history(history: SeedHistory) -> str:
    return json.dumps(seed_history_to_doc(history), indent=2, ensure_ascii=False) + "\n"


# --- baseline registry ------------------------------------------------------


@dataclass(frozen=True)
class RegistryEntry:
    environment: str
    agent: str
    task_id: str
    success_ids: tuple[str, ...]
    failed_ids: tuple[str, ...]

    @property
    def n_traces(self) -> int:
        return len(self.success_ids) + len(self.failed_ids)

    @property
    def success_rate(self) -> float:
        return len(self.success_ids) / self.n_traces


@dataclass(frozen=True)
class TraceRegistry:
    """Per (environment, agent, task) pools of successful and failed runs,
    kept only where the baseline success rate sits in a band where
    interventions can move the needle either way."""

    lower: float
    upper: float
    success_threshold: float
    entries: tuple[RegistryEntry, ...]

    @classmethod
    def build(
        cls,
        corpus: TraceCorpus,
        *,
        success_threshold: float = 1.0,
        lower: float = 0.2,
        upper: float = 0.8,
    ) -> "TraceRegistry":
        groups: dict[tuple[str, str, str], list[Trace]] = {}
        for trace in corpus.traces:
            key = (trace.environment, trace.model, trace.task_id)
            groups.setdefault(key, []).append(trace)
        entries = []
        for (environment, agent, task_id), traces in sorted(groups.items()):
            success = [t for t in traces if t.outcome_score >= success_threshold]
            rate = len(success) / len(traces)
            if lower <= rate <= upper:
                failed = [t for t in traces if t.outcome_score < success_threshold]
                entries.append(
                    RegistryEntry(
                        environment=environment,
                        agent=agent,
                        task_id=task_id,
                        success_ids=tuple(t.trace_id for t in success),
                        failed_ids=tuple(t.trace_id for t in failed),
                    )
                )
        return cls(
            lower=lower,
            upper=upper,
            success_threshold=success_threshold,
            entries=tuple(entries),
        )

    def lookup(self, environment: str, agent: str, task_id: str) -> RegistryEntry:
        for entry in self.entries:
            if (entry.environment, entry.agent, entry.task_id) == (
                environment,
                agent,
                task_id,
            ):
                return entry
        raise KeyError((environment, agent, task_id))

    def to_doc(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "success_threshold": self.success_threshold,
            "entries": [
                {
                    "environment": e.environment,
                    "agent": e.agent,
                    "task_id": e.task_id,
                    "success_ids": list(e.success_ids),
                    "failed_ids": list(e.failed_ids),
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_doc(cls, doc: Mapping) -> "TraceRegistry":
        return cls(
            lower=doc["lower"],
            upper=doc["upper"],
            success_threshold=doc["success_threshold"],
            entries=tuple(
                RegistryEntry(
                    environment=e["environment"],
                    agent=e["agent"],
                    task_id=e["task_id"],
                    success_ids=tuple(e["success_ids"]),
                    failed_ids=tuple(e["failed_ids"]),
                )
                for e in doc["entries"]
            ),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_doc(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "TraceRegistry":
        return cls.from_doc(json.loads(Path(path).read_text()))
