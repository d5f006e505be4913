from __future__ import annotations

from epitrace.graph import EpiEdge, EpiNode, Support
from epitrace.traces import Message, ToolCall, Trace


def make_trace(messages, *, trace_id="t1", model="model-a", environment="env-a",
               scope=1, scaffold="scaffold-a", task_id="task-1", trial=0,
               outcome_score=1.0) -> Trace:
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


def msg(index, role, content, **kwargs) -> Message:
    return Message(index=index, role=role, content=content, **kwargs)


def tool_call(name, **arguments) -> ToolCall:
    return ToolCall(name=name, arguments=arguments)


def node(node_id, node_type, text, *support) -> EpiNode:
    sup = tuple(Support(i, q) for i, q in support)
    return EpiNode(
        node_id=node_id,
        node_type=node_type,
        time=min(s.msg_idx for s in sup),
        text=text,
        support=sup,
    )


def edge(src, dst, relation, *support) -> EpiEdge:
    sup = tuple(Support(i, q) for i, q in support)
    return EpiEdge(
        src=src,
        dst=dst,
        relation=relation,
        time=min(s.msg_idx for s in sup),
        support=sup,
    )
