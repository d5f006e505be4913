from __future__ import annotations

import itertools
import random

import pytest

from epitrace.graph import (
    EDGE_RELATIONS,
    EDGE_WHITELIST,
    NODE_TYPES,
    EpistemicGraph,
    GraphValidationError,
    Support,
    allowed,
    graph_from_doc,
    graph_to_doc,
    merge_window_annotations,
    validate_graph,
)

from helpers import edge, make_trace, msg, node


def _sample_trace():
    return make_trace(
        [
            msg(0, "user", "Find the structure of the compound.", is_task_description=True),
            msg(1, "assistant", "I hypothesize the compound is an ester. I will run an NMR simulation."),
            msg(2, "observation", "The NMR spectrum shows a triplet at 1.2 ppm."),
            msg(3, "assistant", "The evidence supports the ester hypothesis. Final answer: ester."),
        ]
    )


def _graph(nodes=(), edges=(), trace_id="t1"):
    return EpistemicGraph(trace_id=trace_id, nodes=tuple(nodes), edges=tuple(edges))


def test_whitelist_matches_enumerated_triples():
    # tests 2 + observes 1 + updates_to 1 + competes_with 1 + contradicts 2
    # + informs 6, exactly as enumerated in the stage-2 instructions.
    assert len(EDGE_WHITELIST) == 13
    assert EDGE_WHITELIST == {
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


def test_allowed_examples():
    assert allowed("tests", "H", "T")
    assert allowed("informs", "J", "J")
    assert not allowed("observes", "E", "T")


def test_allowed_rejects_everything_else():
    accepted = [
        (rel, s, d)
        for rel, s, d in itertools.product(EDGE_RELATIONS, NODE_TYPES, NODE_TYPES)
        if allowed(rel, s, d)
    ]
    assert sorted(accepted) == sorted(EDGE_WHITELIST)


def test_validate_clean_graph_empty_ledger():
    trace = _sample_trace()
    g = _graph(
        nodes=[
            node("n1", "H", "compound is an ester", (1, "the compound is an ester")),
            node("n2", "T", "run NMR", (1, "run an NMR simulation")),
            node("n3", "E", "triplet at 1.2", (2, "triplet at 1.2 ppm")),
        ],
        edges=[
            edge("n1", "n2", "tests", (1, "I will run an NMR simulation")),
            edge("n2", "n3", "observes", (2, "The NMR spectrum shows")),
        ],
    )
    validated, ledger = validate_graph(g, trace)
    assert len(ledger) == 0
    assert len(validated.nodes) == 3
    assert len(validated.edges) == 2


def test_validate_mutated_quote_warns_and_retains():
    trace = _sample_trace()
    g = _graph(nodes=[node("n1", "H", "ester", (1, "the compound is an Ester"))])
    validated, ledger = validate_graph(g, trace)
    assert ledger.categories() == ["non_verbatim_quote_node"]
    assert len(validated.nodes) == 1


def test_validate_commitment_gloss_exempt_from_quote_check():
    trace = _sample_trace()
    g = _graph(nodes=[node("n1", "C", "commits to ester", (3, "a paraphrased gloss"))])
    _, ledger = validate_graph(g, trace)
    assert len(ledger) == 0


def test_validate_edge_quote_warns_and_retains():
    trace = _sample_trace()
    g = _graph(
        nodes=[
            node("n1", "H", "ester", (1, "the compound is an ester")),
            node("n2", "T", "NMR", (1, "NMR simulation")),
        ],
        edges=[edge("n1", "n2", "tests", (1, "i will run"))],
    )
    validated, ledger = validate_graph(g, trace)
    assert ledger.categories() == ["non_verbatim_quote_edge"]
    assert len(validated.edges) == 1


def test_validate_disallowed_combination_removed():
    trace = _sample_trace()
    g = _graph(
        nodes=[
            node("n1", "E", "evidence", (2, "triplet at 1.2 ppm")),
            node("n2", "T", "test", (1, "NMR simulation")),
        ],
        edges=[edge("n1", "n2", "tests", (2, "triplet"))],
    )
    validated, ledger = validate_graph(g, trace)
    assert ledger.categories() == ["disallowed_combination"]
    assert validated.edges == ()


def test_validate_missing_endpoint_removed_as_other_structural():
    trace = _sample_trace()
    g = _graph(
        nodes=[node("n1", "H", "ester", (1, "the compound is an ester"))],
        edges=[edge("n1", "N99", "tests", (1, "I will run"))],
    )
    validated, ledger = validate_graph(g, trace)
    assert ledger.categories() == ["other_structural"]
    assert validated.edges == ()


def test_validate_self_edge_removed():
    trace = _sample_trace()
    g = _graph(
        nodes=[node("n1", "H", "ester", (1, "the compound is an ester"))],
        edges=[edge("n1", "n1", "updates_to", (1, "I hypothesize"))],
    )
    validated, ledger = validate_graph(g, trace)
    assert ledger.categories() == ["other_structural"]
    assert validated.edges == ()


def test_validate_unknown_node_type_schema_violation():
    trace = _sample_trace()
    g = _graph(nodes=[node("n1", "X", "weird", (1, "I hypothesize"))])
    validated, ledger = validate_graph(g, trace)
    assert ledger.categories() == ["schema_violation"]
    assert validated.nodes == ()


def test_validate_unknown_relation_schema_violation():
    trace = _sample_trace()
    g = _graph(
        nodes=[
            node("n1", "H", "ester", (1, "the compound is an ester")),
            node("n2", "T", "NMR", (1, "NMR simulation")),
        ],
        edges=[edge("n1", "n2", "supports", (1, "I will run"))],
    )
    validated, ledger = validate_graph(g, trace)
    assert ledger.categories() == ["schema_violation"]
    assert validated.edges == ()


def test_validate_observation_node_retyped_when_quote_verbatim():
    trace = _sample_trace()
    g = _graph(nodes=[node("n1", "J", "saw a triplet", (2, "triplet at 1.2 ppm"))])
    validated, ledger = validate_graph(g, trace)
    assert ledger.categories() == ["node_type_corrected_e_only"]
    assert validated.nodes[0].node_type == "E"


def test_validate_observation_node_removed_when_not_verbatim():
    trace = _sample_trace()
    g = _graph(nodes=[node("n1", "J", "saw a doublet", (2, "doublet at 1.2 ppm"))])
    validated, ledger = validate_graph(g, trace)
    assert ledger.categories() == ["extra_node_at_observation_removed"]
    assert validated.nodes == ()


def test_validate_observation_rule_skips_mixed_anchors():
    trace = _sample_trace()
    g = _graph(
        nodes=[
            node("n1", "J", "judgment", (2, "triplet at 1.2 ppm"), (3, "The evidence supports")),
        ]
    )
    validated, ledger = validate_graph(g, trace)
    assert len(ledger) == 0
    assert validated.nodes[0].node_type == "J"


def test_validate_edges_reevaluated_after_retype():
    # J on an observation is retyped to E; its informs out-edge to H stays legal,
    # while a tests edge from the retyped node becomes disallowed.
    trace = _sample_trace()
    g = _graph(
        nodes=[
            node("n1", "J", "triplet", (2, "triplet at 1.2 ppm")),
            node("n2", "H", "ester", (1, "the compound is an ester")),
            node("n3", "T", "NMR", (1, "NMR simulation")),
        ],
        edges=[
            edge("n1", "n2", "informs", (2, "triplet")),
            edge("n1", "n3", "tests", (2, "triplet")),
        ],
    )
    validated, ledger = validate_graph(g, trace)
    assert validated.nodes[0].node_type == "E"
    assert [e.relation for e in validated.edges] == ["informs"]
    assert ledger.count("disallowed_combination") == 1


def test_validate_duplicate_f_nodes_trimmed():
    trace = _sample_trace()
    g = _graph(
        nodes=[
            node("n1", "F", "final", (3, "Final answer: ester")),
            node("n2", "F", "final again", (3, "Final answer")),
        ]
    )
    validated, ledger = validate_graph(g, trace)
    assert [n.node_id for n in validated.nodes] == ["n1"]
    assert ledger.categories() == ["other_structural"]


def test_validate_trace_mismatch_hard_error():
    trace = _sample_trace()
    g = _graph(trace_id="other")
    with pytest.raises(ValueError):
        validate_graph(g, trace)


def test_validate_strict_mode_raises_on_flood():
    trace = _sample_trace()
    g = _graph(
        nodes=[
            node("n1", "X", "bad", (1, "I hypothesize")),
            node("n2", "Y", "bad", (1, "I hypothesize")),
        ]
    )
    with pytest.raises(GraphValidationError):
        validate_graph(g, trace, max_schema_violations=1)
    validated, _ = validate_graph(g, trace, max_schema_violations=2)
    assert validated.nodes == ()


def _random_graph(rng, trace):
    contents = {m.index: m.content for m in trace.messages}
    types = list(NODE_TYPES) + ["X"]
    nodes = []
    for i in range(rng.randint(1, 8)):
        idx = rng.choice(list(contents))
        text = contents[idx]
        a = rng.randint(0, max(0, len(text) - 8))
        quote = text[a : a + rng.randint(4, 8)]
        if rng.random() < 0.3:
            quote = quote.upper() + "?"
        nodes.append(node(f"n{i}", rng.choice(types), f"text {i}", (idx, quote)))
    edges = []
    ids = [n.node_id for n in nodes] + ["missing"]
    for _ in range(rng.randint(0, 10)):
        edges.append(
            edge(
                rng.choice(ids),
                rng.choice(ids),
                rng.choice(list(EDGE_RELATIONS) + ["bogus"]),
                (rng.choice(list(contents)), "anything"),
            )
        )
    # Duplicate node ids are rejected at construction, so suffix uniquely.
    return EpistemicGraph(trace_id=trace.trace_id, nodes=tuple(nodes), edges=tuple(edges))


def test_validate_idempotent_on_random_graphs():
    rng = random.Random(42)
    trace = _sample_trace()
    stable = {"non_verbatim_quote_node", "non_verbatim_quote_edge"}
    for _ in range(50):
        g = _random_graph(rng, trace)
        first, ledger1 = validate_graph(g, trace)
        second, ledger2 = validate_graph(first, trace)
        assert second == first
        assert set(ledger2.categories()) <= stable
        nv1 = [e for e in ledger1 if e.category in stable]
        nv2 = [e for e in ledger2 if e.category in stable]
        assert nv1 == nv2


def test_validated_graph_satisfies_whitelist():
    rng = random.Random(9)
    trace = _sample_trace()
    for _ in range(50):
        g = _random_graph(rng, trace)
        validated, _ = validate_graph(g, trace)
        types = {n.node_id: n.node_type for n in validated.nodes}
        for e in validated.edges:
            assert e.src in types and e.dst in types
            assert allowed(e.relation, types[e.src], types[e.dst])
        for n in validated.nodes:
            if all(trace.messages[s.msg_idx].role == "observation" for s in n.support):
                assert n.node_type == "E"


def test_merge_unifies_duplicate_nodes_across_windows():
    frag1 = _graph(nodes=[node("a", "H", "The compound is an ester", (1, "an ester"))])
    frag2 = _graph(nodes=[node("b", "H", "the compound  is an ester", (1, "an ester"))])
    merged = merge_window_annotations([frag1, frag2])
    assert len(merged.nodes) == 1
    assert merged.nodes[0].node_id == "N1"


def test_merge_empty_fragment_list():
    merged = merge_window_annotations([])
    assert merged.nodes == () and merged.edges == ()


def test_merge_keeps_distinct_texts_on_same_message():
    frag = _graph(
        nodes=[
            node("a", "H", "it is an ester", (1, "an ester")),
            node("b", "H", "it is an acid", (1, "I hypothesize")),
        ]
    )
    merged = merge_window_annotations([frag])
    assert len(merged.nodes) == 2


def test_merge_reissues_ids_in_time_order():
    frag = _graph(
        nodes=[
            node("late", "E", "seen", (5, "q5")),
            node("early", "H", "guess", (1, "q1")),
        ]
    )
    merged = merge_window_annotations([frag])
    assert [(n.node_id, n.time) for n in merged.nodes] == [("N1", 1), ("N2", 5)]


def test_merge_remaps_and_dedupes_edges():
    frag1 = _graph(
        nodes=[
            node("a", "H", "guess", (1, "q1")),
            node("b", "T", "probe", (2, "q2")),
        ],
        edges=[edge("a", "b", "tests", (1, "q1"))],
    )
    frag2 = _graph(
        nodes=[
            node("x", "H", "guess", (1, "q1")),
            node("y", "T", "probe", (2, "q2")),
        ],
        edges=[edge("x", "y", "tests", (2, "q2"))],
    )
    merged = merge_window_annotations([frag1, frag2])
    assert len(merged.nodes) == 2
    assert len(merged.edges) == 1
    e = merged.edges[0]
    assert (e.src, e.dst) == ("N1", "N2")
    assert len(e.support) == 2


def test_merge_pools_support_of_duplicates():
    frag1 = _graph(nodes=[node("a", "H", "guess", (1, "q1"))])
    frag2 = _graph(nodes=[node("b", "H", "guess", (1, "q1"), (4, "later quote"))])
    merged = merge_window_annotations([frag1, frag2])
    assert len(merged.nodes) == 1
    assert [s.msg_idx for s in merged.nodes[0].support] == [1, 4]


def test_merge_passes_through_canonical_edge_ids():
    # Stage-2 fragments carry edges that already reference canonical ids.
    frag_nodes = _graph(
        nodes=[
            node("a", "H", "guess", (1, "q1")),
            node("b", "T", "probe", (2, "q2")),
        ]
    )
    frag_edges = _graph(edges=[edge("N1", "N2", "tests", (1, "q1"))])
    merged = merge_window_annotations([frag_nodes, frag_edges])
    assert len(merged.edges) == 1
    assert (merged.edges[0].src, merged.edges[0].dst) == ("N1", "N2")


def test_merge_mixed_trace_ids_rejected():
    frag1 = _graph(trace_id="t1")
    frag2 = _graph(trace_id="t2")
    with pytest.raises(ValueError):
        merge_window_annotations([frag1, frag2])


def test_merge_idempotent():
    frag1 = _graph(
        nodes=[
            node("a", "H", "guess", (1, "q1")),
            node("b", "T", "probe", (2, "q2")),
            node("c", "E", "saw", (3, "q3")),
        ],
        edges=[edge("a", "b", "tests", (1, "q1")), edge("b", "c", "observes", (3, "q3"))],
    )
    merged = merge_window_annotations([frag1])
    again = merge_window_annotations([merged])
    twice = merge_window_annotations([merged, merged])
    assert again == merged
    assert twice == merged


def test_graph_doc_round_trip():
    g = _graph(
        nodes=[node("N1", "H", "guess", (1, "q1"))],
        edges=[edge("N1", "N1", "updates_to", (1, "q1"))],
    )
    assert graph_from_doc(graph_to_doc(g)) == g
